//! Per-image semantic pattern extraction.
//!
//! For one image: keep the regions carrying the top `tau` share of [CLS]
//! attention, restrict patch-to-patch attention to spatial neighbours, split
//! the kept regions with normalized spectral clustering and average the
//! features of each cluster. The cluster means are the image's semantic
//! patterns.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::bundle::{self, ImageRecord};
use crate::error::{Error, Result};
use crate::numkernels::{kmeans, sym_eigen_smallest, DenseSymMatrix, KMeansConfig, DEFAULT_MAX_ITERS};

pub const PATTERNS_MAGIC: [u8; 4] = *b"FSPT";
pub const PATTERNS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionConfig {
    /// Share of [CLS] attention mass kept by the filter, in `(0, 1)`.
    pub tau: f64,
    /// Maximum number of patterns per image.
    pub k_patterns: usize,
    /// Chebyshev radius, in grid cells, of the locality mask.
    pub d0: u32,
    pub degree_epsilon: f64,
    pub seed: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            tau: 0.5,
            k_patterns: 5,
            d0: 2,
            degree_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidConfig(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.k_patterns == 0 || self.k_patterns > u16::MAX as usize {
            return Err(Error::InvalidConfig(format!("k must be in 1..=65535, got {}", self.k_patterns)));
        }
        if self.d0 == 0 {
            return Err(Error::InvalidConfig("d0 must be at least 1".into()));
        }
        if !(self.degree_epsilon > 0.0 && self.degree_epsilon.is_finite()) {
            return Err(Error::InvalidConfig("degree epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Region indices kept by the attention filter, in descending attention order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilteredIndexSet(pub Vec<usize>);

impl FilteredIndexSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }
}

/// `t x t` locality-masked attention between filtered regions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub t: usize,
    pub data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.t + j]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    /// Label per filtered region; labels are numbered by first appearance.
    pub labels: Vec<usize>,
    pub k_used: usize,
}

/// Up to `K` cluster-mean feature vectors for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPatternSet {
    pub image_id: String,
    pub dim: usize,
    /// `k_used x dim` row-major.
    pub patterns: Vec<f32>,
    pub member_counts: Vec<u32>,
}

impl SemanticPatternSet {
    pub fn k_used(&self) -> usize {
        self.member_counts.len()
    }

    pub fn pattern(&self, j: usize) -> &[f32] {
        &self.patterns[j * self.dim..(j + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.patterns.chunks_exact(self.dim)
    }
}

/// Keeps the longest prefix of regions, sorted by descending attention, whose
/// attention sum does not exceed `tau`. Ties sort by ascending region index.
/// At least one region is always kept.
pub fn attention_filter(ca: &[f32], tau: f64) -> FilteredIndexSet {
    let mut order: Vec<usize> = (0..ca.len()).collect();
    order.sort_by(|&a, &b| ca[b].total_cmp(&ca[a]).then(a.cmp(&b)));

    let mut t = 0;
    let mut acc = 0.0f64;
    for &r in &order {
        acc += ca[r] as f64;
        if acc > tau {
            break;
        }
        t += 1;
    }
    order.truncate(t.max(1).min(ca.len()));
    FilteredIndexSet(order)
}

#[inline]
fn chebyshev(a: usize, b: usize, grid_w: usize) -> usize {
    let (ay, ax) = (a / grid_w, a % grid_w);
    let (by, bx) = (b / grid_w, b % grid_w);
    ay.abs_diff(by).max(ax.abs_diff(bx))
}

/// Patch attention between filtered regions, zeroed beyond Chebyshev grid
/// distance `d0`. `pa` is `HW x HW` row-major with `HW = grid_h * grid_w`.
pub fn locality_mask(pa: &[f32], filtered: &FilteredIndexSet, d0: u32, grid_h: usize, grid_w: usize) -> SimilarityMatrix {
    let hw = grid_h * grid_w;
    debug_assert_eq!(pa.len(), hw * hw);
    let idx = filtered.indices();
    let t = idx.len();
    let mut data = Vec::with_capacity(t * t);
    for &ri in idx {
        for &rj in idx {
            let keep = chebyshev(ri, rj, grid_w) <= d0 as usize;
            data.push(if keep { pa[ri * hw + rj] as f64 } else { 0.0 });
        }
    }
    SimilarityMatrix { t, data }
}

/// Normalized spectral clustering of the `t` filtered regions into
/// `min(k, t)` groups.
///
/// The affinity is the symmetrized similarity; degrees are floored at
/// `degree_epsilon`. Rows of the bottom-`k` eigenvector matrix of
/// `D^-1/2 (D - A) D^-1/2` are unit-normalized (an all-zero row maps to the
/// first basis direction) and split with k-means.
pub fn spectral_cluster(sim: &SimilarityMatrix, k: usize, degree_epsilon: f64, seed: u64) -> Result<ClusterAssignment> {
    let t = sim.t;
    if t == 0 || k == 0 {
        return Err(Error::InvalidConfig("spectral clustering needs t >= 1 and k >= 1".into()));
    }
    if sim.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("similarity matrix"));
    }
    let k_used = k.min(t);
    if k_used == 1 {
        return Ok(ClusterAssignment {
            labels: vec![0; t],
            k_used: 1,
        });
    }

    let affinity = DenseSymMatrix::new(t, sim.data.clone())?;
    let degree: Vec<f64> = (0..t)
        .map(|i| (0..t).map(|j| affinity.get(i, j)).sum::<f64>().max(degree_epsilon))
        .collect();
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let laplacian = DenseSymMatrix::from_fn(t, |i, j| {
        let dij = if i == j { degree[i] } else { 0.0 };
        (dij - affinity.get(i, j)) * inv_sqrt[i] * inv_sqrt[j]
    })?;

    let eig = sym_eigen_smallest(&laplacian, k_used, 0.0)?;
    let mut embedding = Vec::with_capacity(t * k_used);
    for i in 0..t {
        let row = eig.row(i);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            embedding.extend(row.iter().map(|x| x / norm));
        } else {
            embedding.push(1.0);
            embedding.extend(std::iter::repeat_n(0.0, k_used - 1));
        }
    }

    let clusters = kmeans(
        &embedding,
        k_used,
        KMeansConfig {
            k: k_used,
            seed,
            max_iters: DEFAULT_MAX_ITERS,
        },
    )?;
    Ok(ClusterAssignment {
        labels: relabel_by_first_appearance(&clusters.labels, k_used),
        k_used,
    })
}

fn relabel_by_first_appearance(labels: &[usize], k: usize) -> Vec<usize> {
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    labels
        .iter()
        .map(|&l| {
            if map[l] == usize::MAX {
                map[l] = next;
                next += 1;
            }
            map[l]
        })
        .collect()
}

/// Mean feature vector of each cluster. `features[i]` is the feature row of
/// the `i`-th filtered region.
pub fn compute_patterns(image_id: &str, features: &[&[f32]], assignment: &ClusterAssignment) -> Result<SemanticPatternSet> {
    if features.len() != assignment.labels.len() {
        return Err(Error::DimensionMismatch {
            expected: assignment.labels.len(),
            found: features.len(),
        });
    }
    let dim = features.first().map_or(0, |f| f.len());
    let k = assignment.k_used;
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0u32; k];
    for (row, &label) in features.iter().zip(&assignment.labels) {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: row.len(),
            });
        }
        counts[label] += 1;
        for (s, &x) in sums[label * dim..(label + 1) * dim].iter_mut().zip(row.iter()) {
            *s += x as f64;
        }
    }
    if counts.contains(&0) {
        return Err(Error::InvalidConfig("cluster assignment has an empty cluster".into()));
    }
    let patterns = sums
        .chunks_exact(dim.max(1))
        .zip(&counts)
        .flat_map(|(s, &c)| s.iter().map(move |x| (x / c as f64) as f32))
        .collect();
    Ok(SemanticPatternSet {
        image_id: image_id.to_string(),
        dim,
        patterns,
        member_counts: counts,
    })
}

/// Runs filter, mask, clustering and averaging on one record.
pub fn extract_image_patterns(record: &ImageRecord, cfg: &ExtractionConfig) -> Result<SemanticPatternSet> {
    cfg.validate()?;
    let filtered = attention_filter(&record.cls_attention, cfg.tau);
    let sim = locality_mask(
        &record.patch_attention,
        &filtered,
        cfg.d0,
        record.grid_h as usize,
        record.grid_w as usize,
    );
    let assignment = spectral_cluster(&sim, cfg.k_patterns, cfg.degree_epsilon, cfg.seed)?;
    let rows: Vec<&[f32]> = filtered.indices().iter().map(|&r| record.feature_row(r)).collect();
    compute_patterns(&record.image_id, &rows, &assignment)
}

/// Extracts patterns from a record stream on the current rayon pool, handing
/// results to `sink` in input order. Records are pulled in batches so memory
/// stays bounded by `batch` records.
pub fn extract_stream<I, F>(records: I, cfg: &ExtractionConfig, batch: usize, mut sink: F) -> Result<usize>
where
    I: IntoIterator<Item = Result<ImageRecord>>,
    F: FnMut(SemanticPatternSet) -> Result<()>,
{
    cfg.validate()?;
    let batch = batch.max(1);
    let mut records = records.into_iter();
    let mut done = 0;
    loop {
        let mut chunk = Vec::with_capacity(batch);
        let mut pending_err = None;
        for item in records.by_ref() {
            match item {
                Ok(r) => chunk.push(r),
                Err(e) => {
                    pending_err = Some(e);
                    break;
                }
            }
            if chunk.len() == batch {
                break;
            }
        }
        if chunk.is_empty() && pending_err.is_none() {
            return Ok(done);
        }
        let results: Vec<Result<SemanticPatternSet>> =
            chunk.par_iter().map(|r| extract_image_patterns(r, cfg)).collect();
        for result in results {
            sink(result?)?;
            done += 1;
        }
        if let Some(e) = pending_err {
            return Err(e);
        }
    }
}

/// Streaming writer for the patterns file:
///
/// ```text
/// magic "FSPT", version u32 = 1, then until EOF one record per image:
///   id_len u32, id bytes, k_used u16, feat_dim u16,
///   patterns f32[k_used * feat_dim], member_counts u32[k_used]
/// ```
pub struct PatternWriter<W: Write> {
    sink: W,
    scratch: Vec<u8>,
}

impl<W: Write> PatternWriter<W> {
    pub fn new(mut sink: W) -> Result<Self> {
        sink.write_all(&PATTERNS_MAGIC)?;
        sink.write_all(&PATTERNS_VERSION.to_le_bytes())?;
        Ok(PatternWriter {
            sink,
            scratch: Vec::new(),
        })
    }

    pub fn write(&mut self, set: &SemanticPatternSet) -> Result<()> {
        let k = u16::try_from(set.k_used()).map_err(|_| Error::Malformed("more than 65535 patterns".into()))?;
        let d = u16::try_from(set.dim).map_err(|_| Error::Malformed("feature dim above 65535".into()))?;
        if k == 0 || d == 0 || set.patterns.len() != set.k_used() * set.dim {
            return Err(Error::Malformed(format!("pattern set {:?} is empty or ragged", set.image_id)));
        }
        let id = set.image_id.as_bytes();
        self.sink.write_all(&(id.len() as u32).to_le_bytes())?;
        self.sink.write_all(id)?;
        self.sink.write_all(&k.to_le_bytes())?;
        self.sink.write_all(&d.to_le_bytes())?;
        bundle::write_f32s(&mut self.sink, &set.patterns, &mut self.scratch)?;
        for c in &set.member_counts {
            self.sink.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.sink.flush()?;
        Ok(self.sink)
    }
}

pub struct PatternReader<R: Read> {
    source: R,
    scratch: Vec<u8>,
    index: usize,
    failed: bool,
}

impl<R: Read> PatternReader<R> {
    pub fn new(mut source: R) -> Result<Self> {
        bundle::check_magic(&mut source, PATTERNS_MAGIC, PATTERNS_VERSION)?;
        Ok(PatternReader {
            source,
            scratch: Vec::new(),
            index: 0,
            failed: false,
        })
    }

    fn read_set(&mut self) -> Result<Option<SemanticPatternSet>> {
        let ctx = format!("pattern record {}", self.index);
        let mut len = [0u8; 4];
        if !bundle::read_exact_or_eof(&mut self.source, &mut len, &ctx)? {
            return Ok(None);
        }
        let id_len = u32::from_le_bytes(len) as usize;
        if id_len > 1 << 20 {
            return Err(Error::Malformed(format!("{ctx}: id length {id_len}")));
        }
        let image_id = bundle::read_id(&mut self.source, id_len, &ctx)?;
        let k = bundle::read_u16(&mut self.source, &ctx)? as usize;
        let dim = bundle::read_u16(&mut self.source, &ctx)? as usize;
        if k == 0 || dim == 0 {
            return Err(Error::Malformed(format!("{ctx}: zero pattern count or dimension")));
        }
        let patterns = bundle::read_f32s(&mut self.source, k * dim, &mut self.scratch, &ctx)?;
        let mut member_counts = Vec::with_capacity(k);
        for _ in 0..k {
            member_counts.push(bundle::read_u32(&mut self.source, &ctx)?);
        }
        Ok(Some(SemanticPatternSet {
            image_id,
            dim,
            patterns,
            member_counts,
        }))
    }
}

impl<R: Read> Iterator for PatternReader<R> {
    type Item = Result<SemanticPatternSet>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.read_set() {
            Ok(Some(set)) => {
                self.index += 1;
                Some(Ok(set))
            }
            Ok(None) => None,
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

pub fn read_patterns<R: Read>(source: R) -> Result<Vec<SemanticPatternSet>> {
    PatternReader::new(source)?.collect()
}

pub fn write_patterns<W: Write>(sets: &[SemanticPatternSet], sink: W) -> Result<W> {
    let mut writer = PatternWriter::new(sink)?;
    for set in sets {
        writer.write(set)?;
    }
    writer.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    /// Sort-and-scan oracle for the filter: sort (value, index) pairs
    /// explicitly, then find the `t` with `S_t <= tau < S_{t+1}`.
    fn oracle_filter(ca: &[f32], tau: f64) -> Vec<usize> {
        let mut pairs: Vec<(f32, usize)> = ca.iter().copied().zip(0..).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let prefix: Vec<f64> = std::iter::once(0.0)
            .chain(pairs.iter().scan(0.0f64, |s, p| {
                *s += p.0 as f64;
                Some(*s)
            }))
            .collect();
        let mut t = pairs.len();
        for cand in 0..pairs.len() {
            if prefix[cand] <= tau && tau < prefix[cand + 1] {
                t = cand;
                break;
            }
        }
        pairs.iter().take(t.max(1)).map(|p| p.1).collect()
    }

    fn softmax(logits: &[f64]) -> Vec<f32> {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.iter().map(|e| (e / sum) as f32).collect()
    }

    #[test]
    fn uniform_four_regions() {
        let f = attention_filter(&[0.25; 4], 0.5);
        assert_eq!(f.indices(), &[0, 1]);
    }

    #[test]
    fn dominant_region_forces_one() {
        let f = attention_filter(&[0.9, 0.1], 0.5);
        assert_eq!(f.indices(), &[0]);
        let f = attention_filter(&[0.1, 0.9], 0.5);
        assert_eq!(f.indices(), &[1]);
    }

    #[test]
    fn filter_matches_oracle_on_random_softmax() {
        let mut rng = SeededRng::new(2024);
        for _ in 0..1000 {
            let n = 1 + rng.below(200);
            let logits: Vec<f64> = (0..n).map(|_| 2.0 * rng.normal()).collect();
            let ca = softmax(&logits);
            assert_eq!(attention_filter(&ca, 0.5).0, oracle_filter(&ca, 0.5));
        }
    }

    #[test]
    fn mask_without_masking_is_submatrix() {
        let (h, w) = (3, 4);
        let hw = h * w;
        let pa: Vec<f32> = (0..hw * hw).map(|i| i as f32).collect();
        let filtered = FilteredIndexSet(vec![5, 0, 11, 7]);
        let sim = locality_mask(&pa, &filtered, 3, h, w);
        for (i, &ri) in filtered.indices().iter().enumerate() {
            for (j, &rj) in filtered.indices().iter().enumerate() {
                assert_eq!(sim.get(i, j), pa[ri * hw + rj] as f64);
            }
        }
    }

    #[test]
    fn corner_keeps_neighbours() {
        let pa = vec![1.0f32; 81];
        let filtered = FilteredIndexSet((0..9).collect());
        let sim = locality_mask(&pa, &filtered, 1, 3, 3);
        let kept: Vec<usize> = (0..9).filter(|&j| sim.get(0, j) != 0.0).collect();
        assert_eq!(kept, vec![0, 1, 3, 4]);
    }

    #[test]
    fn k_one_is_single_cluster() {
        let sim = SimilarityMatrix {
            t: 3,
            data: vec![1.0; 9],
        };
        let a = spectral_cluster(&sim, 1, 1e-8, 0).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0]);
    }

    #[test]
    fn disconnected_blocks_split_exactly() {
        let t = 8;
        let mut data = vec![0.0; t * t];
        for i in 0..t {
            for j in 0..t {
                if (i < 4) == (j < 4) {
                    data[i * t + j] = 0.25;
                }
            }
        }
        let a = spectral_cluster(&SimilarityMatrix { t, data }, 2, 1e-8, 1).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn zero_degree_rows_do_not_fail() {
        let t = 4;
        let mut data = vec![0.0; t * t];
        data[0] = 1.0;
        data[5] = 1.0;
        let a = spectral_cluster(&SimilarityMatrix { t, data }, 3, 1e-8, 0).unwrap();
        assert_eq!(a.k_used, 3);
        assert_eq!(a.labels.len(), 4);
    }

    #[test]
    fn t_smaller_than_k() {
        let sim = SimilarityMatrix {
            t: 2,
            data: vec![0.5, 0.5, 0.5, 0.5],
        };
        let a = spectral_cluster(&sim, 5, 1e-8, 0).unwrap();
        assert_eq!(a.k_used, 2);
        assert_eq!(a.labels, vec![0, 1]);
    }

    #[test]
    fn rejects_non_finite() {
        let sim = SimilarityMatrix {
            t: 2,
            data: vec![0.5, f64::NAN, 0.5, 0.5],
        };
        assert!(matches!(spectral_cluster(&sim, 2, 1e-8, 0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn singleton_clusters_reproduce_rows() {
        let rows: Vec<Vec<f32>> = vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5]];
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let a = ClusterAssignment {
            labels: vec![0, 1, 2],
            k_used: 3,
        };
        let set = compute_patterns("x", &refs, &a).unwrap();
        for (j, row) in rows.iter().enumerate() {
            assert_eq!(set.pattern(j), row.as_slice());
        }
        assert_eq!(set.member_counts, vec![1, 1, 1]);
    }

    #[test]
    fn identical_rows_give_identical_patterns() {
        let v = vec![0.3f32, -0.7, 0.1];
        let refs: Vec<&[f32]> = vec![&v; 6];
        let a = ClusterAssignment {
            labels: vec![0, 1, 2, 0, 1, 2],
            k_used: 3,
        };
        let set = compute_patterns("x", &refs, &a).unwrap();
        for p in set.iter() {
            assert_eq!(p, v.as_slice());
        }
    }

    #[test]
    fn random_means_match_recomputation() {
        let mut rng = SeededRng::new(8);
        let (t, d, k) = (40, 16, 5);
        let rows: Vec<Vec<f32>> = (0..t).map(|_| (0..d).map(|_| rng.normal() as f32).collect()).collect();
        let mut labels: Vec<usize> = (0..t).map(|i| i % k).collect();
        rng.shuffle(&mut labels);
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let set = compute_patterns("x", &refs, &ClusterAssignment { labels: labels.clone(), k_used: k }).unwrap();
        for j in 0..k {
            let members: Vec<&Vec<f32>> = rows.iter().zip(&labels).filter(|(_, &l)| l == j).map(|(r, _)| r).collect();
            for c in 0..d {
                let mean = members.iter().map(|r| r[c] as f64).sum::<f64>() / members.len() as f64;
                assert!((set.pattern(j)[c] as f64 - mean).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn mismatched_lengths_error() {
        let v = vec![1.0f32];
        let a = ClusterAssignment {
            labels: vec![0, 0],
            k_used: 1,
        };
        assert!(compute_patterns("x", &[&v], &a).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = ExtractionConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            ExtractionConfig { tau: 0.0, ..ok },
            ExtractionConfig { tau: 1.0, ..ok },
            ExtractionConfig { k_patterns: 0, ..ok },
            ExtractionConfig { d0: 0, ..ok },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn patterns_file_round_trip() {
        let sets = vec![
            SemanticPatternSet {
                image_id: "a".into(),
                dim: 2,
                patterns: vec![1.0, 2.0, 3.0, 4.0],
                member_counts: vec![3, 1],
            },
            SemanticPatternSet {
                image_id: "bé".into(),
                dim: 2,
                patterns: vec![0.5, -0.5],
                member_counts: vec![7],
            },
        ];
        let bytes = write_patterns(&sets, Vec::new()).unwrap();
        assert_eq!(&bytes[..4], b"FSPT");
        assert_eq!(read_patterns(&bytes[..]).unwrap(), sets);
        let truncated: Vec<_> = PatternReader::new(&bytes[..bytes.len() - 2]).unwrap().collect();
        assert!(truncated[0].is_ok());
        assert!(matches!(truncated[1], Err(Error::Truncated { .. })));
    }
}
