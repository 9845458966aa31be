use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::extraction::SemanticPatternSet;
use crate::numkernels::Distance;

/// Patterns of every candidate image, flattened. Pattern `p` belongs to image
/// `owner(p)`; image `i` owns the contiguous range `patterns_of(i)`.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    /// Squared norms.
    norms: Vec<f64>,
    owner: Vec<usize>,
    offsets: Vec<usize>,
}

impl CandidatePool {
    pub fn new(dim: usize) -> Self {
        CandidatePool {
            ids: Vec::new(),
            dim,
            data: Vec::new(),
            norms: Vec::new(),
            owner: Vec::new(),
            offsets: vec![0],
        }
    }

    /// Appends one image with its `k x dim` row-major patterns.
    pub fn push_image(&mut self, id: impl Into<String>, patterns: &[f32]) -> Result<()> {
        if self.dim == 0 || patterns.is_empty() || !patterns.len().is_multiple_of(self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: patterns.len(),
            });
        }
        if patterns.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("candidate pattern"));
        }
        let image = self.ids.len();
        self.ids.push(id.into());
        for row in patterns.chunks_exact(self.dim) {
            self.norms.push(dot_f32(row, row));
            self.owner.push(image);
        }
        self.data.extend_from_slice(patterns);
        self.offsets.push(self.owner.len());
        Ok(())
    }

    pub fn from_pattern_sets(sets: &[SemanticPatternSet]) -> Result<Self> {
        let dim = sets.first().map_or(0, |s| s.dim);
        let mut pool = CandidatePool::new(dim);
        for s in sets {
            pool.push_image(s.image_id.clone(), &s.patterns)?;
        }
        pool.check_nonempty()?;
        Ok(pool)
    }

    /// One pattern per image: its global feature.
    pub fn from_global_features<'a>(items: impl IntoIterator<Item = (&'a str, &'a [f32])>) -> Result<Self> {
        let mut pool: Option<CandidatePool> = None;
        for (id, feature) in items {
            pool.get_or_insert_with(|| CandidatePool::new(feature.len()))
                .push_image(id, feature)?;
        }
        let pool = pool.unwrap_or_else(|| CandidatePool::new(0));
        pool.check_nonempty()?;
        Ok(pool)
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.ids.is_empty() {
            return Err(Error::InvalidConfig("candidate pool is empty".into()));
        }
        Ok(())
    }

    pub fn num_images(&self) -> usize {
        self.ids.len()
    }

    pub fn num_patterns(&self) -> usize {
        self.owner.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self, image: usize) -> &str {
        &self.ids[image]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn owner(&self, pattern: usize) -> usize {
        self.owner[pattern]
    }

    pub fn patterns_of(&self, image: usize) -> std::ops::Range<usize> {
        self.offsets[image]..self.offsets[image + 1]
    }

    pub fn pattern(&self, p: usize) -> &[f32] {
        &self.data[p * self.dim..(p + 1) * self.dim]
    }

    pub fn norm(&self, p: usize) -> f64 {
        self.norms[p].sqrt()
    }

    pub(crate) fn sq_norm(&self, p: usize) -> f64 {
        self.norms[p]
    }

    /// Cosine distance needs every pattern to have a nonzero norm.
    pub(crate) fn check_distance(&self, distance: Distance) -> Result<()> {
        if distance == Distance::Cosine && self.norms.iter().any(|&n| n.is_nan() || n <= 0.0) {
            return Err(Error::ZeroNorm("cosine distance over the candidate pool"));
        }
        Ok(())
    }

    /// `out[p] = min(out[p], min_q D(pattern p, q))` over all candidate
    /// patterns, for query vectors `q` with precomputed squared norms.
    ///
    /// Work is split across the current rayon pool when it has more than one
    /// thread; each entry is combined independently, so the result does not
    /// depend on the split. The summation order is fixed, so the AVX and
    /// baseline code paths agree bit for bit.
    pub(crate) fn fold_min_distances(&self, queries: &[(&[f32], f64)], distance: Distance, out: &mut [f64]) {
        const CHUNK: usize = 1024;
        let rows: Vec<&[f32]> = queries.iter().map(|&(q, _)| q).collect();
        let q_sq: Vec<f64> = queries.iter().map(|&(_, n)| n).collect();
        let job = FoldJob {
            pool: self,
            queries: &rows,
            q_sq: &q_sq,
            euclidean: distance == Distance::Euclidean,
        };
        if rayon::current_num_threads() > 1 && out.len() > CHUNK {
            out.par_chunks_mut(CHUNK)
                .enumerate()
                .for_each(|(c, slots)| job.run(c * CHUNK, slots));
        } else {
            job.run(0, out);
        }
    }
}

struct FoldJob<'a> {
    pool: &'a CandidatePool,
    queries: &'a [&'a [f32]],
    q_sq: &'a [f64],
    euclidean: bool,
}

impl FoldJob<'_> {
    fn run(&self, start: usize, slots: &mut [f64]) {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx") {
                // SAFETY: the required CPU feature was detected at runtime
                unsafe { self.run_avx(start, slots) };
                return;
            }
        }
        self.run_generic(start, slots);
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx")]
    unsafe fn run_avx(&self, start: usize, slots: &mut [f64]) {
        self.run_generic(start, slots);
    }

    #[inline(always)]
    fn run_generic(&self, start: usize, slots: &mut [f64]) {
        for (offset, slot) in slots.iter_mut().enumerate() {
            let p = start + offset;
            let row = self.pool.pattern(p);
            let p_sq = self.pool.norms[p];
            let mut best = *slot;
            let mut fold = |sums: &[f64], first: usize| {
                for (j, &s) in sums.iter().enumerate() {
                    let d = if self.euclidean {
                        s.sqrt()
                    } else {
                        // sqrt(x * x) == x, so identical rows give exactly 0
                        (1.0 - s / (p_sq * self.q_sq[first + j]).sqrt()).clamp(0.0, 2.0)
                    };
                    if d < best {
                        best = d;
                    }
                }
            };
            let mut first = 0;
            for block in self.queries.chunks(4) {
                match (block.len(), self.euclidean) {
                    (4, false) => fold(&sums::<4, false>(row, block), first),
                    (4, true) => fold(&sums::<4, true>(row, block), first),
                    (3, false) => fold(&sums::<3, false>(row, block), first),
                    (3, true) => fold(&sums::<3, true>(row, block), first),
                    (2, false) => fold(&sums::<2, false>(row, block), first),
                    (2, true) => fold(&sums::<2, true>(row, block), first),
                    (_, false) => fold(&sums::<1, false>(row, block), first),
                    (_, true) => fold(&sums::<1, true>(row, block), first),
                }
                first += block.len();
            }
            *slot = best;
        }
    }
}

const LANES: usize = 8;
const BLOCK: usize = 64;

/// Dot products (or squared distances when `EUC`) of `row` against `N`
/// query rows in one pass.
///
/// Each query keeps eight lanes. A lane sums at most eight `f32` terms before
/// being flushed into an `f64` lane, which bounds the relative error by about
/// `8 * f32::EPSILON / 2` of the sum of absolute terms. The arithmetic for a
/// query does not depend on `N` or on the instruction set.
#[inline(always)]
fn sums<const N: usize, const EUC: bool>(row: &[f32], qs: &[&[f32]]) -> [f64; N] {
    let n = row.len();
    let body = n - n % LANES;
    let qs: [&[f32]; N] = std::array::from_fn(|q| &qs[q][..n]);
    let mut wide = [[0.0f64; LANES]; N];
    let mut b = 0;
    while b < body {
        let end = (b + BLOCK).min(body);
        let mut acc = [[0.0f32; LANES]; N];
        while b < end {
            let r: &[f32; LANES] = row[b..b + LANES].try_into().unwrap();
            for q in 0..N {
                let x: &[f32; LANES] = qs[q][b..b + LANES].try_into().unwrap();
                for l in 0..LANES {
                    acc[q][l] += if EUC {
                        let d = r[l] - x[l];
                        d * d
                    } else {
                        r[l] * x[l]
                    };
                }
            }
            b += LANES;
        }
        for q in 0..N {
            for l in 0..LANES {
                wide[q][l] += acc[q][l] as f64;
            }
        }
    }
    std::array::from_fn(|q| {
        let mut tail = 0.0f64;
        for i in body..n {
            let (x, y) = (row[i] as f64, qs[q][i] as f64);
            tail += if EUC { (x - y) * (x - y) } else { x * y };
        }
        let w = &wide[q];
        (((w[0] + w[1]) + (w[2] + w[3])) + ((w[4] + w[5]) + (w[6] + w[7]))) + tail
    })
}

/// Dot product with the same arithmetic as the selection kernel, so a row's
/// squared norm equals its dot product with itself there.
pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    sums::<1, false>(a, &[b])[0]
}
