//! Model adapters: stand-ins for a segmentation network.
//!
//! An adapter is retrained from scratch on the current labels every
//! iteration and then predicts a [`ProbMap`] per image.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::formats::{open_file, read_pmap, RgbImage};
use crate::gridmaps::{BitMask, ProbMap};
use crate::segmentation::{label_components, SegMask, IGNORE};

use super::config::{AdapterKind, ExperimentConfig};

/// Which labels a training call sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Iteration(usize),
    /// Reference run on the fully labeled pool.
    FullSet,
}

/// Labeled training data. The three slices are parallel.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub images: &'a [&'a RgbImage],
    pub masks: &'a [&'a SegMask],
    pub labeled: &'a [&'a BitMask],
    /// Labeled share of all pool pixels.
    pub labeled_fraction: f64,
    pub phase: Phase,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Pool,
    Val,
}

/// One image to predict. `gt` is only read by simulation adapters.
#[derive(Clone, Copy, Debug)]
pub struct PredictRequest<'a> {
    pub split: Split,
    pub index: usize,
    pub id: &'a str,
    pub image: &'a RgbImage,
    pub gt: &'a SegMask,
}

pub trait ModelAdapter: Send + Sync {
    fn train(&mut self, data: &TrainData<'_>) -> Result<()>;
    fn predict(&self, req: &PredictRequest<'_>) -> Result<ProbMap>;
}

/// Ground truth corrupted with a probability that shrinks as labels grow:
/// `p = p_max (1 - ℓ)^γ`. Corrupted pixels get a random class with
/// confidence `1 - η`; clean pixels are one-hot.
#[derive(Clone, Debug)]
pub struct NoisyOracle {
    pub classes: usize,
    pub p_max: f64,
    pub gamma: f64,
    pub eta: f64,
    p: f64,
    seed: u64,
    phase: Phase,
}

impl NoisyOracle {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            p_max: 0.5,
            gamma: 1.0,
            eta: 0.4,
            p: 0.5,
            seed: 0,
            phase: Phase::FullSet,
        }
    }

    pub fn corruption(&self) -> f64 {
        self.p
    }
}

impl ModelAdapter for NoisyOracle {
    fn train(&mut self, data: &TrainData<'_>) -> Result<()> {
        let l = data.labeled_fraction.clamp(0.0, 1.0);
        self.p = self.p_max * (1.0 - l).powf(self.gamma);
        self.seed = data.seed;
        self.phase = data.phase;
        Ok(())
    }

    fn predict(&self, req: &PredictRequest<'_>) -> Result<ProbMap> {
        let c = self.classes;
        let phase = match self.phase {
            Phase::Iteration(t) => t as u64,
            Phase::FullSet => u64::MAX,
        };
        let split = match req.split {
            Split::Pool => 0,
            Split::Val => 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[phase, split, req.index as u64]));
        let high = (1.0 - self.eta) as f32;
        let low = if c > 1 { (self.eta / (c - 1) as f64) as f32 } else { 0.0 };
        let gt = req.gt;
        ProbMap::from_fn(gt.height(), gt.width(), c, |r, col, px| {
            let truth = match gt.get(r, col) {
                IGNORE => 0,
                g => g as usize,
            };
            if rng.gen::<f64>() < self.p {
                let k = rng.gen_range(0..c);
                px.fill(low);
                px[k] = high;
            } else {
                px[truth] = 1.0;
            }
        })
    }
}

/// Centroid pixel classifier over `(r, g, b, w·row, w·col)` with locally
/// averaged colors.
///
/// Every labeled ground-truth instance (connected component of the mask,
/// restricted to its labeled pixels) contributes one centroid to its class,
/// weighted by its labeled pixel count `n`. The logit of class `k` is
/// `ln Σ n·exp(-d²/τ)` over the class's centroids, and a softmax over the
/// logits gives the probabilities. With one centroid per class this is the
/// plain centroid softmax plus a log-prior. Classes without labeled pixels
/// get probability 0.
#[derive(Clone, Debug)]
pub struct PixelClassifier {
    pub classes: usize,
    pub tau: f64,
    pub pos_weight: f64,
    /// Instances with fewer labeled pixels are skipped.
    pub min_pixels: u64,
    /// Same-class centroids closer than this are pooled.
    pub merge_radius: f64,
    /// Color smoothing window radius; 0 uses raw pixels.
    pub smooth_radius: usize,
    centroids: Vec<(usize, f32, [f32; 5])>,
}

impl PixelClassifier {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            tau: 0.005,
            pos_weight: 0.25,
            min_pixels: 4,
            merge_radius: 0.2,
            smooth_radius: 1,
            centroids: Vec::new(),
        }
    }

    /// Per-pixel features, row-major. Colors are averaged over the
    /// `(2·smooth_radius + 1)²` window clipped to the image.
    pub fn feature_map(&self, img: &RgbImage) -> Vec<[f64; 5]> {
        let (h, w) = (img.height, img.width);
        let mut sat = vec![[0.0f64; 3]; (h + 1) * (w + 1)];
        for r in 0..h {
            for c in 0..w {
                let px = img.pixel(r, c);
                let (up, left, diag) = (sat[r * (w + 1) + c + 1], sat[(r + 1) * (w + 1) + c], sat[r * (w + 1) + c]);
                sat[(r + 1) * (w + 1) + c + 1] = std::array::from_fn(|i| px[i] as f64 / 255.0 + up[i] + left[i] - diag[i]);
            }
        }
        let k = self.smooth_radius;
        let mut out = Vec::with_capacity(h * w);
        for r in 0..h {
            let (r0, r1) = (r.saturating_sub(k), (r + k + 1).min(h));
            for c in 0..w {
                let (c0, c1) = (c.saturating_sub(k), (c + k + 1).min(w));
                let n = ((r1 - r0) * (c1 - c0)) as f64;
                let at = |rr: usize, cc: usize| sat[rr * (w + 1) + cc];
                let (a, b, cq, d) = (at(r1, c1), at(r0, c1), at(r1, c0), at(r0, c0));
                let mean: [f64; 3] = std::array::from_fn(|i| (a[i] - b[i] - cq[i] + d[i]) / n);
                out.push([
                    mean[0],
                    mean[1],
                    mean[2],
                    self.pos_weight * (r as f64 + 0.5) / h as f64,
                    self.pos_weight * (c as f64 + 0.5) / w as f64,
                ]);
            }
        }
        out
    }

    /// `(class, ln weight, centroid)` triples of the trained model.
    pub fn centroids(&self) -> &[(usize, f32, [f32; 5])] {
        &self.centroids
    }
}

impl ModelAdapter for PixelClassifier {
    fn train(&mut self, data: &TrainData<'_>) -> Result<()> {
        let k = self.classes;
        let per_image: Vec<Vec<(usize, u64, [f64; 5])>> = (0..data.images.len())
            .into_par_iter()
            .map(|i| {
                let (img, mask, lab) = (data.images[i], data.masks[i], data.labeled[i]);
                let labeling = label_components(mask);
                let n = labeling.segments.len();
                let mut sums = vec![[0.0f64; 5]; n];
                let mut counts = vec![0u64; n];
                let features = self.feature_map(img);
                for r in 0..img.height {
                    for c in 0..img.width {
                        let g = mask.get(r, c);
                        if !lab.get(r, c) || g == IGNORE || g as usize >= k {
                            continue;
                        }
                        let s = labeling.labels[r * img.width + c];
                        for (acc, v) in sums[s].iter_mut().zip(features[r * img.width + c]) {
                            *acc += v;
                        }
                        counts[s] += 1;
                    }
                }
                (0..n)
                    .filter(|&s| counts[s] >= self.min_pixels)
                    .map(|s| (labeling.segments[s].class as usize, counts[s], sums[s]))
                    .collect()
            })
            .collect();
        // leader clustering in image order keeps the model deterministic
        let mut pooled: Vec<(usize, u64, [f64; 5])> = Vec::new();
        let r2 = self.merge_radius * self.merge_radius;
        for (class, n, sum) in per_image.into_iter().flatten() {
            let mean = sum.map(|v| v / n as f64);
            let hit = pooled.iter_mut().find(|(pc, pn, psum)| {
                *pc == class && psum.iter().zip(&mean).map(|(s, m)| (s / *pn as f64 - m).powi(2)).sum::<f64>() < r2
            });
            match hit {
                Some((_, pn, psum)) => {
                    *pn += n;
                    for (a, b) in psum.iter_mut().zip(sum) {
                        *a += b;
                    }
                }
                None => pooled.push((class, n, sum)),
            }
        }
        self.centroids = pooled
            .into_iter()
            .map(|(class, n, sum)| (class, (n as f32).ln(), sum.map(|v| (v / n as f64) as f32)))
            .collect();
        Ok(())
    }

    fn predict(&self, req: &PredictRequest<'_>) -> Result<ProbMap> {
        let img = req.image;
        let k = self.classes;
        let inv_tau = (1.0 / self.tau) as f32;
        let mut best = vec![f32::NEG_INFINITY; k];
        let mut scores = vec![0.0f32; self.centroids.len()];
        let features = self.feature_map(img);
        ProbMap::from_fn(img.height, img.width, k, |r, c, px| {
            if self.centroids.is_empty() {
                px.fill(1.0 / k as f32);
                return;
            }
            let f = features[r * img.width + c].map(|v| v as f32);
            best.fill(f32::NEG_INFINITY);
            for (j, (class, w, m)) in self.centroids.iter().enumerate() {
                let d2: f32 = m.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum();
                scores[j] = w - d2 * inv_tau;
                best[*class] = best[*class].max(scores[j]);
            }
            let top = best.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            px.fill(0.0);
            for (j, (class, _, _)) in self.centroids.iter().enumerate() {
                // terms far below the leader vanish in f32
                if scores[j] > top - 30.0 {
                    px[*class] += (scores[j] - top).exp();
                }
            }
            let total: f32 = px.iter().sum();
            for p in px.iter_mut() {
                *p /= total;
            }
        })
    }
}

/// Reads predictions written by an external trainer from
/// `<root>/iter_NNNN/<id>.pmap` (`<root>/full/<id>.pmap` for the full-set
/// reference).
#[derive(Clone, Debug)]
pub struct FileAdapter {
    pub root: PathBuf,
    dir: PathBuf,
}

impl FileAdapter {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        Self {
            dir: root.join("iter_0000"),
            root,
        }
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.pmap"))
    }
}

impl ModelAdapter for FileAdapter {
    fn train(&mut self, data: &TrainData<'_>) -> Result<()> {
        self.dir = match data.phase {
            Phase::Iteration(t) => self.root.join(format!("iter_{t:04}")),
            Phase::FullSet => self.root.join("full"),
        };
        Ok(())
    }

    fn predict(&self, req: &PredictRequest<'_>) -> Result<ProbMap> {
        let path = self.path_for(req.id);
        if !path.exists() {
            return Err(Error::Adapter(format!("missing prediction file {}", path.display())));
        }
        let p = read_pmap(open_file(&path)?)?;
        if p.dims() != req.gt.dims() {
            return Err(Error::Adapter(format!(
                "{} is {:?}, image is {:?}",
                path.display(),
                p.dims(),
                req.gt.dims()
            )));
        }
        Ok(p)
    }
}

pub fn build_adapter(cfg: &ExperimentConfig, classes: usize) -> Result<Box<dyn ModelAdapter>> {
    Ok(match cfg.adapter {
        AdapterKind::NoisyOracle => Box::new(NoisyOracle::new(classes)),
        AdapterKind::PixelClassifier => Box::new(PixelClassifier::new(classes)),
        AdapterKind::File => Box::new(FileAdapter::new(
            cfg.predictions_dir
                .clone()
                .ok_or_else(|| Error::Config("the file adapter needs predictions_dir".into()))?,
        )),
    })
}
