//! Selection output: JSON lines, one object per step, then one summary object.
//!
//! ```text
//! {"step":0,"image_id":"a","pattern":null,"min_dist":null,"mass":null}
//! {"step":1,"image_id":"b","pattern":17,"min_dist":0.41,"mass":3.2}
//! {"summary":{"strategy":"prob","distance":"cosine",...,"wall_time_s":0.12}}
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{CandidatePool, SelectionResult, SelectionState, Strategy};
use crate::error::{Error, Result};
use crate::numkernels::Distance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLine {
    pub step: usize,
    pub image_id: String,
    pub pattern: Option<usize>,
    pub min_dist: Option<f64>,
    pub mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategy: Strategy,
    pub distance: Option<Distance>,
    pub budget: usize,
    pub seed: u64,
    pub pool_size: usize,
    pub num_patterns: usize,
    pub fallback_steps: usize,
    /// Extraction settings when patterns were computed on the fly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl Summary {
    pub fn of(result: &SelectionResult) -> Self {
        Summary {
            strategy: result.strategy,
            distance: result.distance,
            budget: result.budget,
            seed: result.seed,
            pool_size: result.pool_size,
            num_patterns: result.num_patterns,
            fallback_steps: result.steps.iter().filter(|s| s.fallback).count(),
            extraction: None,
            wall_time_s: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: Summary,
}

pub fn write_jsonl<W: Write>(result: &SelectionResult, summary: &Summary, mut sink: W) -> Result<W> {
    for (i, s) in result.steps.iter().enumerate() {
        let line = StepLine {
            step: i,
            image_id: s.image_id.clone(),
            pattern: s.pattern,
            min_dist: s.min_dist,
            mass: s.mass,
        };
        serde_json::to_writer(&mut sink, &line).map_err(|e| Error::Malformed(e.to_string()))?;
        sink.write_all(b"\n")?;
    }
    serde_json::to_writer(&mut sink, &SummaryLine { summary: summary.clone() })
        .map_err(|e| Error::Malformed(e.to_string()))?;
    sink.write_all(b"\n")?;
    sink.flush()?;
    Ok(sink)
}

/// Plain variant: one image id per line.
pub fn write_ids<W: Write>(result: &SelectionResult, mut sink: W) -> Result<W> {
    for s in &result.steps {
        writeln!(sink, "{}", s.image_id)?;
    }
    sink.flush()?;
    Ok(sink)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionFile {
    pub steps: Vec<StepLine>,
    pub summary: Option<Summary>,
}

/// Reads either the JSON-lines format or the id-per-line variant.
pub fn read_selection<R: BufRead>(source: R) -> Result<SelectionFile> {
    let mut steps = Vec::new();
    let mut summary = None;
    for (n, line) in source.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if !trimmed.starts_with('{') {
            steps.push(StepLine {
                step: steps.len(),
                image_id: trimmed.to_string(),
                pattern: None,
                min_dist: None,
                mass: None,
            });
            continue;
        }
        if trimmed.starts_with("{\"summary\"") {
            let s: SummaryLine =
                serde_json::from_str(trimmed).map_err(|e| Error::Malformed(format!("line {}: {e}", n + 1)))?;
            summary = Some(s.summary);
        } else {
            let s: StepLine =
                serde_json::from_str(trimmed).map_err(|e| Error::Malformed(format!("line {}: {e}", n + 1)))?;
            steps.push(s);
        }
    }
    Ok(SelectionFile { steps, summary })
}

/// Coverage after each selection step.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub step: usize,
    pub image_id: String,
    /// `min_dist` recorded by the selection run, if any.
    pub recorded_min_dist: Option<f64>,
    /// Max over all candidate patterns of the distance to the nearest
    /// selected pattern.
    pub covering_radius: f64,
}

/// Replays a selection over `pool` and reports the covering radius after
/// each step.
pub fn coverage_trace(pool: &CandidatePool, steps: &[StepLine], distance: Distance) -> Result<Vec<CoverageRow>> {
    pool.check_distance(distance)?;
    let mut state = SelectionState::new(pool);
    let mut rows = Vec::with_capacity(steps.len());
    for (i, step) in steps.iter().enumerate() {
        let image = pool
            .index_of(&step.image_id)
            .ok_or_else(|| Error::Malformed(format!("selected id {:?} is not in the pattern pool", step.image_id)))?;
        if state.is_selected(image) {
            return Err(Error::DuplicateId(step.image_id.clone()));
        }
        state.select_image(pool, image, distance);
        let radius = state.min_dist.iter().cloned().fold(0.0, f64::max);
        rows.push(CoverageRow {
            step: i,
            image_id: step.image_id.clone(),
            recorded_min_dist: step.min_dist,
            covering_radius: radius,
        });
    }
    Ok(rows)
}
