//! Query strategies and greedy box selection.
//!
//! Each strategy turns the current predictions into one aggregated box-score
//! map per image. Box scores are products of factors in `[0, 1]`:
//!
//! | strategy       | factors                          |
//! |----------------|----------------------------------|
//! | `random`       | uniform noise                    |
//! | `entropy`      | entropy                          |
//! | `entropy_plus` | entropy, estimated clicks        |
//! | `metabox`      | MetaSeg quality                  |
//! | `metabox_plus` | MetaSeg quality, estimated clicks|
//! | `entropy_star` | entropy, true clicks             |
//! | `metabox_star` | MetaSeg quality, true clicks     |
//!
//! Labeled pixels are zeroed in every per-pixel map before aggregation.
//!
//! The click factor of a box is `u - k / K`, where `u` is the box's
//! unlabeled fraction, `k` the box mean of the unlabeled click-cost map
//! and `K` the largest unlabeled vertex density `k / u` over all candidate
//! boxes of the iteration. This is the aggregated `1 - κ` map with κ
//! rescaled dataset-wide so that the densest box gets factor 0.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::clickcost::{click_cost_map, vertex_cost_map, BoxRegion, Polygon};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::gridmaps::{aggregate_boxes, entropy_map, mask_labeled, BitMask, ProbMap, ScalarMap};
use crate::segmentation::argmax_mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Random,
    Entropy,
    EntropyPlus,
    MetaBox,
    MetaBoxPlus,
    EntropyStar,
    MetaBoxStar,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::Random,
        StrategyKind::Entropy,
        StrategyKind::EntropyPlus,
        StrategyKind::MetaBox,
        StrategyKind::MetaBoxPlus,
        StrategyKind::EntropyStar,
        StrategyKind::MetaBoxStar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Entropy => "entropy",
            StrategyKind::EntropyPlus => "entropy_plus",
            StrategyKind::MetaBox => "metabox",
            StrategyKind::MetaBoxPlus => "metabox_plus",
            StrategyKind::EntropyStar => "entropy_star",
            StrategyKind::MetaBoxStar => "metabox_star",
        }
    }

    pub fn uses_metaseg(self) -> bool {
        matches!(
            self,
            StrategyKind::MetaBox | StrategyKind::MetaBoxPlus | StrategyKind::MetaBoxStar
        )
    }

    pub fn uses_entropy(self) -> bool {
        matches!(
            self,
            StrategyKind::Entropy | StrategyKind::EntropyPlus | StrategyKind::EntropyStar
        )
    }

    /// Uses the click factor estimated from the predicted mask.
    pub fn uses_estimated_clicks(self) -> bool {
        matches!(self, StrategyKind::EntropyPlus | StrategyKind::MetaBoxPlus)
    }

    /// Uses the click factor from ground-truth polygon vertices.
    pub fn needs_polygons(self) -> bool {
        matches!(self, StrategyKind::EntropyStar | StrategyKind::MetaBoxStar)
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy '{s}' (valid: {})",
                    Self::valid_names()
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Strategy {
    pub kind: StrategyKind,
    /// Seed of the random kind's box scores.
    pub seed: u64,
}

impl Strategy {
    pub fn new(kind: StrategyKind, seed: u64) -> Self {
        Self { kind, seed }
    }
}

/// Per-image inputs of one scoring round.
#[derive(Clone, Copy, Debug)]
pub struct ImageInputs<'a> {
    pub prediction: &'a ProbMap,
    pub labeled: &'a BitMask,
    /// MetaSeg priority `1 - q`, required by the metabox kinds.
    pub quality_priority: Option<&'a ScalarMap>,
    /// Ground-truth polygons, required by the star kinds.
    pub polygons: Option<&'a [Polygon]>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorityParams {
    pub b: usize,
    pub stride: usize,
    /// RDP tolerance of the estimated click map.
    pub epsilon: f64,
    /// Iteration counter, mixed into the random kind's seed.
    pub iteration: u64,
}

/// Element-wise product of the factor maps.
pub fn joint_priority(factors: &[&ScalarMap]) -> Result<ScalarMap> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| Error::invalid("joint priority needs at least one factor"))?;
    let mut out = (*first).clone();
    for f in rest {
        if f.dims() != out.dims() {
            return Err(Error::DimensionMismatch {
                expected: out.dims(),
                actual: f.dims(),
            });
        }
        for (o, &v) in out.values_mut().iter_mut().zip(f.values()) {
            *o *= v;
        }
    }
    Ok(out)
}

/// Box-grid maps of the unlabeled fraction `u` and unlabeled click-cost
/// mean `k` of one image.
struct ClickParts {
    unlabeled: ScalarMap,
    cost: ScalarMap,
}

fn ones_unlabeled(labeled: &BitMask) -> Result<ScalarMap> {
    let (h, w) = labeled.dims();
    mask_labeled(&ScalarMap::filled(h, w, 1.0), labeled)
}

/// Aggregated box scores for every image, on the `b`/`stride` anchor grid.
pub fn build_priorities(
    strategy: &Strategy,
    images: &[ImageInputs<'_>],
    params: &PriorityParams,
) -> Result<Vec<ScalarMap>> {
    let kind = strategy.kind;
    for (i, img) in images.iter().enumerate() {
        if img.prediction.dims() != img.labeled.dims() {
            return Err(Error::DimensionMismatch {
                expected: img.prediction.dims(),
                actual: img.labeled.dims(),
            });
        }
        if kind.uses_metaseg() && img.quality_priority.is_none() {
            return Err(Error::InvalidInput(format!(
                "strategy {kind} needs a trained MetaSeg model (image {i} has no quality map)"
            )));
        }
        if kind.needs_polygons() && img.polygons.is_none() {
            return Err(Error::InvalidInput(format!(
                "strategy {kind} needs ground-truth polygons (missing for image {i})"
            )));
        }
    }

    let base: Vec<ScalarMap> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| base_factor(strategy, img, params, i))
        .collect::<Result<_>>()?;
    if !(kind.uses_estimated_clicks() || kind.needs_polygons()) {
        return Ok(base);
    }

    let parts: Vec<ClickParts> = images
        .par_iter()
        .map(|img| {
            let (h, w) = img.labeled.dims();
            let kappa = match img.polygons {
                Some(polys) if kind.needs_polygons() => vertex_cost_map(polys, h, w),
                _ => click_cost_map(&argmax_mask(img.prediction), params.epsilon)?,
            };
            Ok(ClickParts {
                unlabeled: aggregate_boxes(&ones_unlabeled(img.labeled)?, params.b, params.stride)?,
                cost: aggregate_boxes(&mask_labeled(&kappa, img.labeled)?, params.b, params.stride)?,
            })
        })
        .collect::<Result<_>>()?;

    let mut density_max = 0.0f32;
    for p in &parts {
        for (&u, &k) in p.unlabeled.values().iter().zip(p.cost.values()) {
            if u > 0.0 {
                density_max = density_max.max(k / u);
            }
        }
    }
    base.into_iter()
        .zip(parts)
        .map(|(base, p)| {
            let mut click = p.unlabeled;
            if density_max > 0.0 {
                for (c, &k) in click.values_mut().iter_mut().zip(p.cost.values()) {
                    *c = (*c - k / density_max).clamp(0.0, 1.0);
                }
            }
            joint_priority(&[&base, &click])
        })
        .collect()
}

fn base_factor(
    strategy: &Strategy,
    img: &ImageInputs<'_>,
    params: &PriorityParams,
    index: usize,
) -> Result<ScalarMap> {
    let kind = strategy.kind;
    let pixel_map = if kind.uses_entropy() {
        entropy_map(img.prediction)?
    } else if kind.uses_metaseg() {
        img.quality_priority.cloned().unwrap_or_else(|| {
            let (h, w) = img.labeled.dims();
            ScalarMap::filled(h, w, 0.0)
        })
    } else {
        let mut u = aggregate_boxes(&ones_unlabeled(img.labeled)?, params.b, params.stride)?;
        let seed = derive_seed(strategy.seed, &[params.iteration, index as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in u.values_mut() {
            *v *= rng.gen::<f32>();
        }
        return Ok(u);
    };
    if pixel_map.dims() != img.labeled.dims() {
        return Err(Error::DimensionMismatch {
            expected: img.labeled.dims(),
            actual: pixel_map.dims(),
        });
    }
    aggregate_boxes(&mask_labeled(&pixel_map, img.labeled)?, params.b, params.stride)
}

/// A scored query candidate. `image` indexes the scoring round's image
/// list, which callers keep sorted by image id so that index order is id
/// order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateBox {
    pub image: usize,
    pub row: usize,
    pub col: usize,
    pub b: usize,
    pub score: f32,
}

impl CandidateBox {
    pub fn region(&self) -> BoxRegion {
        BoxRegion::new(self.row, self.col, self.b)
    }

    /// Selection order: higher score first, then smaller (image, row, col).
    pub fn priority_cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| (other.image, other.row, other.col).cmp(&(self.image, self.row, self.col)))
    }
}

/// Expands box-score maps into candidates with pixel anchors.
pub fn candidates_from_maps(maps: &[ScalarMap], b: usize, stride: usize) -> Vec<CandidateBox> {
    let mut out = Vec::new();
    for (image, m) in maps.iter().enumerate() {
        for i in 0..m.height() {
            for j in 0..m.width() {
                out.push(CandidateBox {
                    image,
                    row: i * stride,
                    col: j * stride,
                    b,
                    score: m.get(i, j),
                });
            }
        }
    }
    out
}

struct HeapEntry(CandidateBox);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.priority_cmp(&other.0)
    }
}

/// Greedy non-overlapping selection of up to `m_q` boxes.
///
/// Candidates sit in a max-heap; a popped candidate overlapping an already
/// selected box of the same image is discarded (lazy invalidation). Cost is
/// `O(n log n + n·s)` for `n` candidates and `s` selected boxes per image.
pub fn select_query(candidates: &[CandidateBox], m_q: usize) -> Result<Vec<CandidateBox>> {
    if candidates.is_empty() {
        return Err(Error::invalid("no query candidates"));
    }
    if m_q == 0 {
        return Err(Error::invalid("m_q must be at least 1"));
    }
    if let Some(c) = candidates.iter().find(|c| !(0.0..=1.0).contains(&c.score)) {
        return Err(Error::invalid(format!(
            "candidate score {} outside [0, 1] at image {} ({}, {})",
            c.score, c.image, c.row, c.col
        )));
    }
    let mut heap: BinaryHeap<HeapEntry> = candidates.iter().copied().map(HeapEntry).collect();
    let mut chosen: Vec<CandidateBox> = Vec::with_capacity(m_q);
    while chosen.len() < m_q {
        let Some(HeapEntry(c)) = heap.pop() else {
            break;
        };
        let region = c.region();
        let conflict = chosen
            .iter()
            .any(|s| s.image == c.image && s.region().overlaps(&region));
        if !conflict {
            chosen.push(c);
        }
    }
    Ok(chosen)
}
