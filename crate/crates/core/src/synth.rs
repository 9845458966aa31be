//! Seeded synthetic data with planted categories.
//!
//! Two generators:
//!
//! * [`generate_synthetic_bundle`] builds full [`ImageRecord`]s. Every image
//!   holds up to three planted categories laid out as Voronoi regions on the
//!   patch grid. [CLS] attention peaks at each region's seed cell and decays
//!   with grid distance; patch attention strongly prefers patches of the same
//!   region. Features are the category centroid plus Gaussian noise of norm
//!   about `noise_scale`.
//! * [`generate_planted_pool`] skips the feature maps and emits pattern sets
//!   directly, for selection experiments at pool sizes where full records
//!   would not fit in memory.
//!
//! Image `i` draws from its own ChaCha stream, so records can be generated
//! lazily and independently.

use crate::bundle::{ImageRecord, DEFAULT_SIZE_CAP};
use crate::error::{Error, Result};
use crate::extraction::SemanticPatternSet;
use crate::rng::SeededRng;

/// Categories present in a single synthetic image.
const MAX_CATEGORIES_PER_IMAGE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub num_images: usize,
    pub grid_h: u16,
    pub grid_w: u16,
    pub feat_dim: u16,
    pub num_latent_categories: usize,
    pub noise_scale: f64,
    pub seed: u64,
    pub size_cap: u64,
}

impl SynthSpec {
    pub fn new(num_images: usize, grid: (u16, u16), feat_dim: u16, categories: usize, noise_scale: f64, seed: u64) -> Self {
        SynthSpec {
            num_images,
            grid_h: grid.0,
            grid_w: grid.1,
            feat_dim,
            num_latent_categories: categories,
            noise_scale,
            seed,
            size_cap: DEFAULT_SIZE_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_h == 0 || self.grid_w == 0 || self.feat_dim == 0 || self.num_latent_categories == 0 {
            return Err(Error::InvalidConfig("grid, feature dim and category count must be positive".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise scale must be >= 0, got {}", self.noise_scale)));
        }
        let hw = self.grid_h as u64 * self.grid_w as u64;
        for entries in [hw * self.feat_dim as u64, hw * hw] {
            if entries > self.size_cap {
                return Err(Error::DimensionOverflow {
                    entries,
                    cap: self.size_cap,
                });
            }
        }
        Ok(())
    }

    /// Unit-norm planted category centroids, `num_latent_categories x feat_dim`.
    pub fn centroids(&self) -> Vec<Vec<f32>> {
        let mut rng = SeededRng::substream(self.seed, 0);
        (0..self.num_latent_categories)
            .map(|_| random_unit(&mut rng, self.feat_dim as usize))
            .collect()
    }
}

fn random_unit(rng: &mut SeededRng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

fn softmax_into(logits: &[f64], out: &mut Vec<f32>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    out.extend(exps.iter().map(|e| (e / sum) as f32));
}

/// Lazy record generator; see the module docs for the layout.
pub struct SyntheticBundle {
    spec: SynthSpec,
    centroids: Vec<Vec<f32>>,
    next: usize,
}

impl SyntheticBundle {
    pub fn new(spec: SynthSpec) -> Result<Self> {
        spec.validate()?;
        Ok(SyntheticBundle {
            centroids: spec.centroids(),
            spec,
            next: 0,
        })
    }

    /// Category of every patch of image `index`, row-major over the grid.
    pub fn region_categories(&self, index: usize) -> Vec<usize> {
        self.layout(&mut SeededRng::substream(self.spec.seed, index as u64 + 1)).1
    }

    /// Seed cells and per-patch category for one image.
    fn layout(&self, rng: &mut SeededRng) -> (Vec<usize>, Vec<usize>) {
        let (h, w) = (self.spec.grid_h as usize, self.spec.grid_w as usize);
        let hw = h * w;
        let n_present = MAX_CATEGORIES_PER_IMAGE.min(self.spec.num_latent_categories).min(hw);

        let mut cats: Vec<usize> = (0..self.spec.num_latent_categories).collect();
        rng.shuffle(&mut cats);
        cats.truncate(n_present);

        // spread the seed cells out when the grid allows it
        let min_sep = (h.min(w) / 3).max(1);
        let mut seeds: Vec<usize> = Vec::with_capacity(n_present);
        let mut attempts = 0;
        while seeds.len() < n_present {
            let cell = rng.below(hw);
            attempts += 1;
            let far = seeds.iter().all(|&s| {
                let dy = (s / w).abs_diff(cell / w);
                let dx = (s % w).abs_diff(cell % w);
                dy.max(dx) >= if attempts < 256 { min_sep } else { 1 }
            });
            if far {
                seeds.push(cell);
            }
        }

        let region = (0..hw)
            .map(|p| {
                let mut best = 0;
                let mut best_d = usize::MAX;
                for (s_idx, &s) in seeds.iter().enumerate() {
                    let dy = (s / w).abs_diff(p / w);
                    let dx = (s % w).abs_diff(p % w);
                    let d = dy * dy + dx * dx;
                    if d < best_d {
                        best = s_idx;
                        best_d = d;
                    }
                }
                best
            })
            .collect::<Vec<usize>>();
        let categories = region.iter().map(|&r| cats[r]).collect();
        let seeds_per_patch = region.iter().map(|&r| seeds[r]).collect();
        (seeds_per_patch, categories)
    }

    fn record(&self, index: usize) -> ImageRecord {
        let spec = &self.spec;
        let mut rng = SeededRng::substream(spec.seed, index as u64 + 1);
        let (h, w, d) = (spec.grid_h as usize, spec.grid_w as usize, spec.feat_dim as usize);
        let hw = h * w;
        let (seed_of, category) = self.layout(&mut rng);
        let grid_dist = |a: usize, b: usize| {
            let dy = (a / w) as f64 - (b / w) as f64;
            let dx = (a % w) as f64 - (b % w) as f64;
            (dy * dy + dx * dx).sqrt()
        };

        let noise = spec.noise_scale / (d as f64).sqrt();
        let mut patch_features = Vec::with_capacity(hw * d);
        for &c in &category {
            for &x in &self.centroids[c] {
                let jitter = if noise > 0.0 { noise * rng.normal() } else { 0.0 };
                patch_features.push((x as f64 + jitter) as f32);
            }
        }

        let ca_logits: Vec<f64> = (0..hw)
            .map(|p| -0.5 * grid_dist(p, seed_of[p]) + 0.1 * rng.normal())
            .collect();
        let mut cls_attention = Vec::with_capacity(hw);
        softmax_into(&ca_logits, &mut cls_attention);

        let mut patch_attention = Vec::with_capacity(hw * hw);
        let mut row = vec![0.0f64; hw];
        for i in 0..hw {
            for (j, logit) in row.iter_mut().enumerate() {
                let same = if category[i] == category[j] { 4.0 } else { 0.0 };
                *logit = same - 0.3 * grid_dist(i, j) + 0.1 * rng.normal();
            }
            softmax_into(&row, &mut patch_attention);
        }

        let mut mean = vec![0.0f64; d];
        for chunk in patch_features.chunks_exact(d) {
            for (m, &x) in mean.iter_mut().zip(chunk) {
                *m += x as f64;
            }
        }
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        let cls_feature = mean.iter().map(|x| (x * scale) as f32).collect();

        ImageRecord {
            image_id: format!("synth-{index:06}"),
            grid_h: spec.grid_h,
            grid_w: spec.grid_w,
            feat_dim: spec.feat_dim,
            cls_feature,
            cls_attention,
            patch_attention,
            patch_features,
        }
    }
}

impl Iterator for SyntheticBundle {
    type Item = ImageRecord;

    fn next(&mut self) -> Option<ImageRecord> {
        if self.next >= self.spec.num_images {
            return None;
        }
        let r = self.record(self.next);
        self.next += 1;
        Some(r)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.spec.num_images - self.next;
        (left, Some(left))
    }
}

pub fn generate_synthetic_bundle(spec: SynthSpec) -> Result<Vec<ImageRecord>> {
    Ok(SyntheticBundle::new(spec)?.collect())
}

/// Parameters of a pattern-level planted pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedPoolSpec {
    pub num_images: usize,
    pub patterns_per_image: usize,
    pub dim: usize,
    pub num_categories: usize,
    /// Zipf exponent of category frequencies; 0 gives balanced categories.
    pub category_skew: f64,
    /// Norm of the Gaussian perturbation added to a centroid.
    pub noise_scale: f64,
    /// Fraction of images whose patterns are unrelated random directions.
    pub outlier_fraction: f64,
    pub seed: u64,
}

/// A planted pool plus ground truth: `categories[i][j]` is the category of
/// pattern `j` of image `i`, `None` for outlier patterns.
#[derive(Debug, Clone)]
pub struct PlantedPool {
    pub sets: Vec<SemanticPatternSet>,
    pub categories: Vec<Vec<Option<usize>>>,
    pub num_categories: usize,
}

impl PlantedPool {
    /// Number of selection steps after which every category has a pattern
    /// among the selected images, or `None` if the order never covers all.
    pub fn covering_budget(&self, order: &[usize]) -> Option<usize> {
        let mut covered = vec![false; self.num_categories];
        let mut remaining = self.num_categories;
        for (step, &img) in order.iter().enumerate() {
            for c in self.categories[img].iter().flatten() {
                if !covered[*c] {
                    covered[*c] = true;
                    remaining -= 1;
                }
            }
            if remaining == 0 {
                return Some(step + 1);
            }
        }
        None
    }
}

/// Category centroids share one common direction (pairwise cosine near 0.5),
/// outlier patterns do not, so outliers sit farther from everything than
/// distinct categories sit from each other.
pub fn generate_planted_pool(spec: PlantedPoolSpec) -> Result<PlantedPool> {
    if spec.num_images == 0 || spec.patterns_per_image == 0 || spec.dim == 0 || spec.num_categories == 0 {
        return Err(Error::InvalidConfig("planted pool sizes must be positive".into()));
    }
    if !(0.0..=1.0).contains(&spec.outlier_fraction) || spec.noise_scale < 0.0 {
        return Err(Error::InvalidConfig("invalid outlier fraction or noise".into()));
    }
    let d = spec.dim;
    let mut rng = SeededRng::substream(spec.seed, 0);
    let common = random_unit(&mut rng, d);
    let centroids: Vec<Vec<f64>> = (0..spec.num_categories)
        .map(|_| {
            let own = random_unit(&mut rng, d);
            let v: Vec<f64> = common.iter().zip(&own).map(|(&a, &b)| a as f64 + b as f64).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        })
        .collect();

    let weights: Vec<f64> = (0..spec.num_categories)
        .map(|c| 1.0 / ((c + 1) as f64).powf(spec.category_skew))
        .collect();
    let total: f64 = weights.iter().sum();
    let cdf: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / total;
            Some(*acc)
        })
        .collect();

    let n_outliers = (spec.outlier_fraction * spec.num_images as f64).round() as usize;
    let mut outlier = vec![false; spec.num_images];
    let mut ids: Vec<usize> = (0..spec.num_images).collect();
    rng.shuffle(&mut ids);
    for &i in &ids[..n_outliers] {
        outlier[i] = true;
    }

    let noise = spec.noise_scale / (d as f64).sqrt();
    let mut sets = Vec::with_capacity(spec.num_images);
    let mut categories = Vec::with_capacity(spec.num_images);
    for (i, &is_outlier) in outlier.iter().enumerate() {
        let mut irng = SeededRng::substream(spec.seed, i as u64 + 1);
        let mut patterns = Vec::with_capacity(spec.patterns_per_image * d);
        let mut cats = Vec::with_capacity(spec.patterns_per_image);
        for _ in 0..spec.patterns_per_image {
            if is_outlier {
                patterns.extend(random_unit(&mut irng, d));
                cats.push(None);
            } else {
                let u = irng.uniform();
                let c = cdf.iter().position(|&p| u < p).unwrap_or(spec.num_categories - 1);
                patterns.extend(centroids[c].iter().map(|&x| (x + noise * irng.normal()) as f32));
                cats.push(Some(c));
            }
        }
        sets.push(SemanticPatternSet {
            image_id: format!("pool-{i:06}"),
            dim: d,
            patterns,
            member_counts: vec![1; spec.patterns_per_image],
        });
        categories.push(cats);
    }
    Ok(PlantedPool {
        sets,
        categories,
        num_categories: spec.num_categories,
    })
}
