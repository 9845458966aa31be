use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use patsel_core::bundle::{validate_record, BundleReader, BundleWriter, ImageRecord, BUNDLE_MAGIC};
use patsel_core::extraction::{extract_stream, ExtractionConfig, PatternReader, PatternWriter, PATTERNS_MAGIC};
use patsel_core::numkernels::Distance;
use patsel_core::selection::{
    coverage_trace, read_selection, select_fds, select_global_fds, select_kmeans_global, select_prob, select_random,
    write_ids, write_jsonl, CandidatePool, SelectionResult, Strategy, Summary,
};
use patsel_core::synth::{SynthSpec, SyntheticBundle};
use serde_json::json;

use crate::{Command, Failure, InputKind, SelectArgs, SynthArgs};

const BATCH: usize = 64;
const PROGRESS_EVERY: usize = 1000;

type Outcome = Result<u8, Failure>;

pub(crate) fn run(command: Command) -> Outcome {
    match command {
        Command::Validate { bundle, tolerance } => validate(&bundle, tolerance),
        Command::Synth(args) => synth(args),
        Command::Patterns {
            bundle,
            extraction,
            seed,
            tolerance,
            out,
        } => patterns(&bundle, extraction.config(seed), tolerance, &out),
        Command::Select(args) => select(args),
        Command::Stats {
            selection,
            pool,
            distance,
            input_kind,
            out,
        } => stats(&selection, &pool, distance, input_kind, out.as_deref()),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(|f| BufReader::with_capacity(1 << 20, f))
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(|f| BufWriter::with_capacity(1 << 20, f))
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Opens `path` and works out whether it holds a bundle or a patterns file.
fn open_input(path: &Path, kind: InputKind) -> Result<(InputKind, BufReader<File>), Failure> {
    let mut reader = open(path)?;
    if kind != InputKind::Auto {
        return Ok((kind, reader));
    }
    let head = reader.fill_buf()?;
    let kind = match head.get(..4) {
        Some(m) if m == BUNDLE_MAGIC => InputKind::Bundle,
        Some(m) if m == PATTERNS_MAGIC => InputKind::Patterns,
        _ => {
            return Err(Failure::Usage(format!(
                "{}: neither a bundle nor a patterns file (use --input-kind to force one)",
                path.display()
            )))
        }
    };
    Ok((kind, reader))
}

fn validate(path: &Path, tolerance: f64) -> Outcome {
    if tolerance.is_nan() || tolerance < 0.0 {
        return Err(Failure::Usage(format!("tolerance must be >= 0, got {tolerance}")));
    }
    let reader = BundleReader::new(open(path)?)?;
    let declared = reader.record_count();
    let mut seen = HashSet::new();
    let (mut total, mut invalid) = (0u64, 0u64);
    for (index, record) in reader.enumerate() {
        let record = record?;
        total += 1;
        let report = validate_record(&record, tolerance);
        let duplicate = !seen.insert(record.image_id.clone());
        if report.is_valid() && !duplicate {
            continue;
        }
        invalid += 1;
        eprintln!("record {index} ({:?}):", record.image_id);
        if duplicate {
            eprintln!("  duplicate image id");
        }
        for v in &report.violations {
            eprintln!("  {v}");
        }
    }
    eprintln!(
        "{}: {total} of {declared} records read, {invalid} invalid (tolerance {tolerance})",
        path.display()
    );
    Ok(if invalid == 0 { 0 } else { 1 })
}

fn synth(args: SynthArgs) -> Outcome {
    let spec = SynthSpec::new(
        args.num_images,
        (args.grid_h, args.grid_w),
        args.feat_dim,
        args.categories,
        args.noise,
        args.seed,
    );
    let records = SyntheticBundle::new(spec)?;
    let mut writer = BundleWriter::new(create(&args.out)?, args.num_images as u64)?;
    for record in records {
        writer.write_record(&record)?;
    }
    writer.finish()?;
    eprintln!("wrote {} synthetic records to {}", args.num_images, args.out.display());
    Ok(0)
}

fn records(reader: BufReader<File>, tolerance: f64) -> Result<BundleReader<BufReader<File>>, Failure> {
    if tolerance.is_nan() || tolerance < 0.0 {
        return Err(Failure::Usage(format!("tolerance must be >= 0, got {tolerance}")));
    }
    Ok(BundleReader::new(reader)?.validated(tolerance))
}

fn patterns(path: &Path, cfg: ExtractionConfig, tolerance: f64, out: &Path) -> Outcome {
    cfg.validate()?;
    let reader = records(open(path)?, tolerance)?;
    let total = reader.record_count();
    let mut writer = PatternWriter::new(create(out)?)?;
    let start = Instant::now();
    let mut written = 0usize;
    let done = extract_stream(reader, &cfg, BATCH, |set| {
        writer.write(&set)?;
        written += 1;
        if written.is_multiple_of(PROGRESS_EVERY) {
            eprintln!("extracted {written}/{total} images");
        }
        Ok(())
    })?;
    writer.finish()?;
    eprintln!(
        "wrote patterns for {done} images to {} in {:.2} s",
        out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(0)
}

/// Pattern pool from a patterns file, or extracted on the fly from a bundle.
fn pattern_pool(kind: InputKind, reader: BufReader<File>, args: &SelectArgs) -> Result<CandidatePool, Failure> {
    let mut pool: Option<CandidatePool> = None;
    let mut push = |id: String, dim: usize, patterns: &[f32]| {
        pool.get_or_insert_with(|| CandidatePool::new(dim))
            .push_image(id, patterns)
    };
    match kind {
        InputKind::Patterns => {
            for set in PatternReader::new(reader)? {
                let set = set?;
                push(set.image_id, set.dim, &set.patterns)?;
            }
        }
        _ => {
            let cfg = args.extraction.config(args.seed);
            cfg.validate()?;
            extract_stream(records(reader, args.tolerance)?, &cfg, BATCH, |set| {
                push(set.image_id, set.dim, &set.patterns)
            })?;
        }
    }
    pool.ok_or_else(|| Failure::Usage("input holds no images".into()))
}

/// Image ids with their global features, read from a bundle.
fn global_features(reader: BufReader<File>, tolerance: f64) -> Result<Vec<(String, Vec<f32>)>, Failure> {
    let mut out = Vec::new();
    for record in records(reader, tolerance)? {
        let ImageRecord {
            image_id, cls_feature, ..
        } = record?;
        out.push((image_id, cls_feature));
    }
    Ok(out)
}

fn image_ids(kind: InputKind, reader: BufReader<File>) -> Result<Vec<String>, Failure> {
    let mut ids = Vec::new();
    match kind {
        InputKind::Patterns => {
            for set in PatternReader::new(reader)? {
                ids.push(set?.image_id);
            }
        }
        _ => {
            for record in BundleReader::new(reader)? {
                ids.push(record?.image_id);
            }
        }
    }
    Ok(ids)
}

fn select(args: SelectArgs) -> Outcome {
    let start = Instant::now();
    let budget = args.budget as usize;
    let (kind, reader) = open_input(&args.input, args.input_kind)?;
    let mut extraction = None;
    let result: SelectionResult = match args.strategy {
        Strategy::Prob | Strategy::Fds => {
            if kind == InputKind::Bundle {
                let cfg = args.extraction.config(args.seed);
                extraction = Some(json!({
                    "tau": cfg.tau,
                    "k": cfg.k_patterns,
                    "d0": cfg.d0,
                    "seed": cfg.seed,
                }));
            }
            let pool = pattern_pool(kind, reader, &args)?;
            if args.strategy == Strategy::Prob {
                select_prob(&pool, budget, args.seed, args.distance)?
            } else {
                select_fds(&pool, budget, args.seed, args.distance)?
            }
        }
        Strategy::GlobalFds | Strategy::Kmeans => {
            if kind != InputKind::Bundle {
                return Err(Failure::Usage(format!(
                    "strategy {} needs a bundle with global features",
                    args.strategy
                )));
            }
            let features = global_features(reader, args.tolerance)?;
            let items = features.iter().map(|(id, f)| (id.as_str(), f.as_slice()));
            if args.strategy == Strategy::GlobalFds {
                select_global_fds(items, budget, args.seed, args.distance)?
            } else {
                select_kmeans_global(items, budget, args.seed)?
            }
        }
        Strategy::Random => select_random(&image_ids(kind, reader)?, budget, args.seed)?,
    };
    let elapsed = start.elapsed().as_secs_f64();

    let mut summary = Summary::of(&result);
    summary.extraction = extraction;
    if !args.no_timing {
        summary.wall_time_s = Some(elapsed);
    }
    let sink = output(args.out.as_deref())?;
    if args.ids_only {
        write_ids(&result, sink)?;
    } else {
        write_jsonl(&result, &summary, sink)?;
    }
    eprintln!(
        "selected {} of {} images ({}) in {elapsed:.3} s",
        result.steps.len(),
        result.pool_size,
        result.strategy
    );
    Ok(0)
}

fn stats(
    selection: &Path,
    pool_path: &Path,
    distance: Option<Distance>,
    input_kind: InputKind,
    out: Option<&Path>,
) -> Outcome {
    let file = read_selection(open(selection)?)?;
    let distance = distance
        .or_else(|| file.summary.as_ref().and_then(|s| s.distance))
        .unwrap_or_default();
    let (kind, reader) = open_input(pool_path, input_kind)?;
    let pool = match kind {
        InputKind::Patterns => {
            let mut pool: Option<CandidatePool> = None;
            for set in PatternReader::new(reader)? {
                let set = set?;
                pool.get_or_insert_with(|| CandidatePool::new(set.dim))
                    .push_image(set.image_id, &set.patterns)?;
            }
            pool.ok_or_else(|| Failure::Usage("patterns file holds no images".into()))?
        }
        _ => {
            let features = global_features(reader, patsel_core::bundle::DEFAULT_TOLERANCE)?;
            CandidatePool::from_global_features(features.iter().map(|(id, f)| (id.as_str(), f.as_slice())))?
        }
    };
    let rows = coverage_trace(&pool, &file.steps, distance)?;

    let mut csv = csv::Writer::from_writer(output(out)?);
    let failure = |e: csv::Error| Failure::Usage(e.to_string());
    csv.write_record(["step", "image_id", "recorded_min_dist", "covering_radius"])
        .map_err(failure)?;
    for row in rows {
        let recorded = row.recorded_min_dist.map(|d| d.to_string()).unwrap_or_default();
        csv.write_record([
            row.step.to_string(),
            row.image_id,
            recorded,
            row.covering_radius.to_string(),
        ])
        .map_err(failure)?;
    }
    csv.flush()?;
    Ok(0)
}
