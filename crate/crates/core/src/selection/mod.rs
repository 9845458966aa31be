//! Pool-level image selection.
//!
//! The main strategy, [`select_prob`], starts from one uniformly chosen image
//! and then repeatedly samples a candidate pattern with probability
//! proportional to its squared distance to the nearest selected pattern,
//! adding the pattern's whole image. [`select_fds`] takes the argmax instead.
//! The global-feature and random strategies are baselines.
//!
//! Every selection loop is sequential. The only parallel work is the distance
//! update inside a step, which runs on the current rayon pool and combines
//! entries with `min`, so results do not depend on the thread count.

mod pool;
mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use pool::CandidatePool;
pub use report::{
    coverage_trace, read_selection, write_ids, write_jsonl, CoverageRow, SelectionFile, StepLine, Summary,
};

use crate::error::{Error, Result};
use crate::numkernels::{cosine_distance, euclidean_distance, kmeans, Distance, KMeansConfig};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    Prob,
    Fds,
    GlobalFds,
    Kmeans,
    Random,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Prob => "prob",
            Strategy::Fds => "fds",
            Strategy::GlobalFds => "global-fds",
            Strategy::Kmeans => "kmeans",
            Strategy::Random => "random",
        }
    }

    /// Whether the strategy works on per-image semantic patterns (as opposed
    /// to global features or ids only).
    pub fn uses_patterns(self) -> bool {
        matches!(self, Strategy::Prob | Strategy::Fds)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "prob" => Strategy::Prob,
            "fds" => Strategy::Fds,
            "global-fds" => Strategy::GlobalFds,
            "kmeans" => Strategy::Kmeans,
            "random" => Strategy::Random,
            other => return Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        })
    }
}

/// One selection step.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionStep {
    pub image: usize,
    pub image_id: String,
    /// Flat index of the pattern that triggered the pick, if any.
    pub pattern: Option<usize>,
    /// Distance of that pattern to the nearest selected pattern before the
    /// pick. For `kmeans` it is the distance to the cluster centroid.
    pub min_dist: Option<f64>,
    /// Sum of squared nearest-selected distances over eligible patterns.
    pub mass: Option<f64>,
    /// The step fell back to uniform sampling because all mass was zero.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub strategy: Strategy,
    pub distance: Option<Distance>,
    pub seed: u64,
    pub budget: usize,
    pub pool_size: usize,
    pub num_patterns: usize,
    pub steps: Vec<SelectionStep>,
}

impl SelectionResult {
    pub fn image_ids(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.image_id.as_str()).collect()
    }

    pub fn images(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.image).collect()
    }
}

/// Selected images and, per candidate pattern, the distance to the nearest
/// selected pattern (`+inf` before anything is selected).
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    pub selected: Vec<usize>,
    is_selected: Vec<bool>,
    pub selected_patterns: usize,
    pub min_dist: Vec<f64>,
}

impl SelectionState {
    pub fn new(pool: &CandidatePool) -> Self {
        SelectionState {
            selected: Vec::new(),
            is_selected: vec![false; pool.num_images()],
            selected_patterns: 0,
            min_dist: vec![f64::INFINITY; pool.num_patterns()],
        }
    }

    pub fn is_selected(&self, image: usize) -> bool {
        self.is_selected[image]
    }

    /// Patterns of selected images never receive sampling mass.
    pub fn is_eligible(&self, pool: &CandidatePool, pattern: usize) -> bool {
        !self.is_selected[pool.owner(pattern)]
    }

    /// Lowers every `min_dist` entry to its distance from the nearest of
    /// `new_patterns`. Nothing else changes.
    pub fn update_min_dist(&mut self, pool: &CandidatePool, new_patterns: &[&[f32]], distance: Distance) -> Result<()> {
        let mut queries = Vec::with_capacity(new_patterns.len());
        for &q in new_patterns {
            if q.len() != pool.dim() {
                return Err(Error::DimensionMismatch {
                    expected: pool.dim(),
                    found: q.len(),
                });
            }
            let sq_norm = pool::dot_f32(q, q);
            if distance == Distance::Cosine && (sq_norm.is_nan() || sq_norm <= 0.0) {
                return Err(Error::ZeroNorm("update_min_dist"));
            }
            queries.push((q, sq_norm));
        }
        if !queries.is_empty() {
            pool.fold_min_distances(&queries, distance, &mut self.min_dist);
        }
        Ok(())
    }

    /// Marks `image` selected and folds all its patterns into `min_dist`.
    pub fn select_image(&mut self, pool: &CandidatePool, image: usize, distance: Distance) {
        debug_assert!(!self.is_selected[image]);
        self.is_selected[image] = true;
        self.selected.push(image);
        let range = pool.patterns_of(image);
        self.selected_patterns += range.len();
        let queries: Vec<(&[f32], f64)> = range.map(|p| (pool.pattern(p), pool.sq_norm(p))).collect();
        pool.fold_min_distances(&queries, distance, &mut self.min_dist);
    }

    /// Sum of `min_dist^2` over eligible patterns, in flat order.
    pub fn mass(&self, pool: &CandidatePool) -> f64 {
        (0..pool.num_patterns())
            .filter(|&p| self.is_eligible(pool, p))
            .map(|p| self.min_dist[p] * self.min_dist[p])
            .sum()
    }

    fn unselected(&self) -> Vec<usize> {
        (0..self.is_selected.len()).filter(|&i| !self.is_selected[i]).collect()
    }
}

fn check_budget(budget: usize, available: usize) -> Result<()> {
    if budget == 0 || budget > available {
        return Err(Error::OutOfRange {
            requested: budget,
            available,
        });
    }
    Ok(())
}

fn initial_step(pool: &CandidatePool, state: &mut SelectionState, rng: &mut SeededRng, distance: Distance) -> SelectionStep {
    let first = rng.below(pool.num_images());
    state.select_image(pool, first, distance);
    SelectionStep {
        image: first,
        image_id: pool.id(first).to_string(),
        pattern: None,
        min_dist: None,
        mass: None,
        fallback: false,
    }
}

/// Uniform pick among unselected images; used when every eligible pattern
/// has zero distance mass.
fn fallback_step(pool: &CandidatePool, state: &SelectionState, rng: &mut SeededRng, mass: f64) -> SelectionStep {
    let remaining = state.unselected();
    let image = remaining[rng.below(remaining.len())];
    SelectionStep {
        image,
        image_id: pool.id(image).to_string(),
        pattern: None,
        min_dist: Some(0.0),
        mass: Some(mass),
        fallback: true,
    }
}

/// Distance-proportional sampling over semantic patterns.
///
/// Each step draws one uniform number and walks the prefix sums of
/// `min_dist^2` over eligible patterns in flat order.
pub fn select_prob(pool: &CandidatePool, budget: usize, seed: u64, distance: Distance) -> Result<SelectionResult> {
    check_budget(budget, pool.num_images())?;
    pool.check_distance(distance)?;
    let mut rng = SeededRng::new(seed);
    let mut state = SelectionState::new(pool);
    let mut steps = vec![initial_step(pool, &mut state, &mut rng, distance)];

    while steps.len() < budget {
        let mass = state.mass(pool);
        let step = if mass > 0.0 && mass.is_finite() {
            let target = rng.uniform() * mass;
            let mut acc = 0.0;
            let mut pick = None;
            for p in 0..pool.num_patterns() {
                if !state.is_eligible(pool, p) {
                    continue;
                }
                let w = state.min_dist[p] * state.min_dist[p];
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(p);
                if acc > target {
                    break;
                }
            }
            let p = pick.expect("positive mass has a positive weight");
            let image = pool.owner(p);
            SelectionStep {
                image,
                image_id: pool.id(image).to_string(),
                pattern: Some(p),
                min_dist: Some(state.min_dist[p]),
                mass: Some(mass),
                fallback: false,
            }
        } else {
            fallback_step(pool, &state, &mut rng, mass)
        };
        state.select_image(pool, step.image, distance);
        steps.push(step);
    }

    Ok(SelectionResult {
        strategy: Strategy::Prob,
        distance: Some(distance),
        seed,
        budget,
        pool_size: pool.num_images(),
        num_patterns: pool.num_patterns(),
        steps,
    })
}

/// Farthest-distance sampling: after the seeded initial image, always take
/// the eligible pattern farthest from the selected set (lowest flat index on
/// ties).
pub fn select_fds(pool: &CandidatePool, budget: usize, seed: u64, distance: Distance) -> Result<SelectionResult> {
    check_budget(budget, pool.num_images())?;
    pool.check_distance(distance)?;
    let mut rng = SeededRng::new(seed);
    let mut state = SelectionState::new(pool);
    let mut steps = vec![initial_step(pool, &mut state, &mut rng, distance)];

    while steps.len() < budget {
        let mut best: Option<usize> = None;
        for p in 0..pool.num_patterns() {
            if state.is_eligible(pool, p) && best.is_none_or(|b| state.min_dist[p] > state.min_dist[b]) {
                best = Some(p);
            }
        }
        let p = best.expect("budget <= pool size leaves an eligible pattern");
        let image = pool.owner(p);
        steps.push(SelectionStep {
            image,
            image_id: pool.id(image).to_string(),
            pattern: Some(p),
            min_dist: Some(state.min_dist[p]),
            mass: None,
            fallback: false,
        });
        state.select_image(pool, image, distance);
    }

    Ok(SelectionResult {
        strategy: Strategy::Fds,
        distance: Some(distance),
        seed,
        budget,
        pool_size: pool.num_images(),
        num_patterns: pool.num_patterns(),
        steps,
    })
}

/// Core-Set style farthest-point selection over one global feature per image.
pub fn select_global_fds<'a>(
    features: impl IntoIterator<Item = (&'a str, &'a [f32])>,
    budget: usize,
    seed: u64,
    distance: Distance,
) -> Result<SelectionResult> {
    let pool = CandidatePool::from_global_features(features)?;
    let mut result = select_fds(&pool, budget, seed, distance)?;
    result.strategy = Strategy::GlobalFds;
    Ok(result)
}

/// k-means with `k = budget` over global features, then for each centroid in
/// index order the unused image nearest to it by cosine distance.
pub fn select_kmeans_global<'a>(
    features: impl IntoIterator<Item = (&'a str, &'a [f32])>,
    budget: usize,
    seed: u64,
) -> Result<SelectionResult> {
    let mut ids = Vec::new();
    let mut flat: Vec<f64> = Vec::new();
    let mut dim = None;
    for (id, f) in features {
        let d = *dim.get_or_insert(f.len());
        if f.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: f.len() });
        }
        ids.push(id.to_string());
        flat.extend(f.iter().map(|&x| x as f64));
    }
    let n = ids.len();
    check_budget(budget, n)?;
    let dim = dim.unwrap_or(0);
    let clusters = kmeans(&flat, dim, KMeansConfig::new(budget, seed))?;

    let mut used = vec![false; n];
    let mut steps = Vec::with_capacity(budget);
    for j in 0..budget {
        let centroid = clusters.centroid(j);
        let zero = centroid.iter().all(|&x| x == 0.0);
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !used[i]) {
            let row = &flat[i * dim..(i + 1) * dim];
            let d = if zero {
                euclidean_distance(row, centroid)?
            } else {
                // a zero feature row is maximally far in cosine terms
                cosine_distance(row, centroid).unwrap_or(2.0)
            };
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (image, d) = best.expect("budget <= pool size");
        used[image] = true;
        steps.push(SelectionStep {
            image,
            image_id: ids[image].clone(),
            pattern: None,
            min_dist: Some(d),
            mass: None,
            fallback: false,
        });
    }

    Ok(SelectionResult {
        strategy: Strategy::Kmeans,
        distance: Some(Distance::Cosine),
        seed,
        budget,
        pool_size: n,
        num_patterns: n,
        steps,
    })
}

/// Uniform sample without replacement, in draw order.
pub fn select_random(image_ids: &[String], budget: usize, seed: u64) -> Result<SelectionResult> {
    let n = image_ids.len();
    check_budget(budget, n)?;
    let mut rng = SeededRng::new(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..budget {
        let j = i + rng.below(n - i);
        order.swap(i, j);
    }
    let steps = order[..budget]
        .iter()
        .map(|&image| SelectionStep {
            image,
            image_id: image_ids[image].clone(),
            pattern: None,
            min_dist: None,
            mass: None,
            fallback: false,
        })
        .collect();
    Ok(SelectionResult {
        strategy: Strategy::Random,
        distance: None,
        seed,
        budget,
        pool_size: n,
        num_patterns: 0,
        steps,
    })
}
