//! Segment-wise quality estimation.
//!
//! Every predicted segment is described by dispersion and shape features;
//! a gradient-boosted tree ensemble, fitted on a small fully labeled meta
//! set, regresses each segment's IoU with the ground truth. Writing the
//! predicted IoU onto the segment's pixels gives the quality heatmap `q`,
//! and `1 - q` is the priority map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridmaps::{pixel_entropy, ProbMap, ScalarMap};
use crate::segmentation::{
    argmax_mask, label_components, segment_iou_with, SegMask, Segment,
};

/// Hand-crafted description of one predicted segment.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentFeatures {
    /// Mean normalized entropy over the segment.
    pub mean_entropy: f64,
    /// Mean gap between the two largest class probabilities.
    pub mean_margin: f64,
    pub size: f64,
    pub boundary_size: f64,
    pub inner_size: f64,
    /// `size / boundary_size`
    pub ratio_bd: f64,
    /// `inner_size / boundary_size`
    pub ratio_in: f64,
    /// Center of mass, normalized to `[0, 1]` by image height.
    pub com_row: f64,
    /// Center of mass, normalized to `[0, 1]` by image width.
    pub com_col: f64,
    /// Per-class mean probability.
    pub mean_probs: Vec<f64>,
}

impl SegmentFeatures {
    /// Number of scalar features for `classes` classes.
    pub fn dim(classes: usize) -> usize {
        9 + classes
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.mean_entropy,
            self.mean_margin,
            self.size,
            self.boundary_size,
            self.inner_size,
            self.ratio_bd,
            self.ratio_in,
            self.com_row,
            self.com_col,
        ];
        v.extend_from_slice(&self.mean_probs);
        v
    }
}

pub fn extract_features(p: &ProbMap, segments: &[Segment]) -> Vec<SegmentFeatures> {
    let c = p.classes();
    let norm = (c as f64).ln();
    let (h, w) = p.dims();
    segments
        .iter()
        .map(|seg| {
            let mut entropy = 0.0;
            let mut margin = 0.0;
            let mut probs = vec![0.0f64; c];
            let (mut sr, mut sc) = (0.0f64, 0.0f64);
            for (r, col) in seg.pixels() {
                let px = p.pixel(r, col);
                entropy += pixel_entropy(px) / norm;
                let (mut top, mut second) = (f32::NEG_INFINITY, f32::NEG_INFINITY);
                for (k, &v) in px.iter().enumerate() {
                    probs[k] += v as f64;
                    if v > top {
                        second = top;
                        top = v;
                    } else if v > second {
                        second = v;
                    }
                }
                margin += (top - second) as f64;
                sr += r as f64;
                sc += col as f64;
            }
            let n = seg.size as f64;
            let bd = seg.boundary_size as f64;
            let inner = seg.inner_size() as f64;
            probs.iter_mut().for_each(|v| *v /= n);
            SegmentFeatures {
                mean_entropy: (entropy / n).clamp(0.0, 1.0),
                mean_margin: (margin / n).clamp(0.0, 1.0),
                size: n,
                boundary_size: bd,
                inner_size: inner,
                ratio_bd: n / bd,
                ratio_in: inner / bd,
                com_row: (sr / n + 0.5) / h as f64,
                com_col: (sc / n + 0.5) / w as f64,
                mean_probs: probs,
            }
        })
        .collect()
}

/// Segment-wise IoU targets, in segment order.
pub fn compute_targets(segments: &[Segment], gt: &SegMask, pred_dims: (usize, usize)) -> Result<Vec<f64>> {
    if gt.dims() != pred_dims {
        return Err(Error::DimensionMismatch {
            expected: pred_dims,
            actual: gt.dims(),
        });
    }
    let labels = label_components(gt);
    Ok(segments
        .iter()
        .map(|s| segment_iou_with(s, gt, &labels))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 4,
            learning_rate: 0.1,
            min_samples_leaf: 2,
        }
    }
}

/// Node of a regression tree. Split nodes carry `feature`, `threshold`,
/// `left` and `right`; leaves carry `leaf_value`. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: Option<usize>,
    pub threshold: Option<f64>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub leaf_value: Option<f64>,
}

impl TreeNode {
    fn leaf(value: f64) -> Self {
        Self {
            feature: None,
            threshold: None,
            left: None,
            right: None,
            leaf_value: Some(value),
        }
    }
}

/// Binary regression tree stored as a node array with the root at index 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match (node.feature, node.threshold, node.left, node.right) {
                (Some(f), Some(t), Some(l), Some(r)) => i = if x[f] <= t { l } else { r },
                _ => return node.leaf_value.unwrap_or(0.0),
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &RegressionTree, i: usize) -> usize {
            match (t.nodes[i].left, t.nodes[i].right) {
                (Some(l), Some(r)) => 1 + walk(t, l).max(walk(t, r)),
                _ => 0,
            }
        }
        walk(self, 0)
    }
}

/// Least-squares gradient-boosted regression trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtRegressor {
    pub base: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
    /// Training MSE after the base prediction and after every round.
    #[serde(default)]
    pub train_mse: Vec<f64>,
}

impl GbtRegressor {
    /// Unclamped ensemble output.
    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_one(&self, x: &[f64]) -> f64 {
        self.predict_raw(x).clamp(0.0, 1.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Fits the ensemble. Each round fits one tree to the residuals of the
/// running prediction using exact greedy variance-reduction splits.
pub fn gbt_fit(features: &[Vec<f64>], targets: &[f64], params: &GbtParams) -> Result<GbtRegressor> {
    if features.is_empty() {
        return Err(Error::Untrainable("empty training set".into()));
    }
    if features.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} feature rows but {} targets",
            features.len(),
            targets.len()
        )));
    }
    let d = features[0].len();
    if features.iter().any(|row| row.len() != d) {
        return Err(Error::invalid("ragged feature matrix"));
    }
    let n = targets.len();
    let base = targets.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mse = |pred: &[f64]| {
        pred.iter().zip(targets).map(|(p, t)| (t - p).powi(2)).sum::<f64>() / n as f64
    };
    let mut train_mse = vec![mse(&pred)];

    // Sample order per feature, sorted once; nodes filter it.
    let sorted: Vec<Vec<usize>> = (0..d)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| features[a][f].total_cmp(&features[b][f]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut trees = Vec::with_capacity(params.n_trees);
    let mut residual = vec![0.0; n];
    for _ in 0..params.n_trees {
        for i in 0..n {
            residual[i] = targets[i] - pred[i];
        }
        let tree = TreeBuilder {
            x: features,
            residual: &residual,
            sorted: &sorted,
            params,
        }
        .build();
        for i in 0..n {
            pred[i] += params.learning_rate * tree.predict(&features[i]);
        }
        train_mse.push(mse(&pred));
        trees.push(tree);
    }
    Ok(GbtRegressor {
        base,
        learning_rate: params.learning_rate,
        n_features: d,
        trees,
        train_mse,
    })
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    residual: &'a [f64],
    sorted: &'a [Vec<usize>],
    params: &'a GbtParams,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_> {
    fn build(&self) -> RegressionTree {
        let n = self.residual.len();
        let mut member = vec![true; n];
        let mut nodes = Vec::new();
        let all: Vec<usize> = (0..n).collect();
        self.grow(&all, 0, &mut member, &mut nodes);
        RegressionTree { nodes }
    }

    fn grow(
        &self,
        samples: &[usize],
        depth: usize,
        member: &mut [bool],
        nodes: &mut Vec<TreeNode>,
    ) -> usize {
        let id = nodes.len();
        let mean = samples.iter().map(|&i| self.residual[i]).sum::<f64>() / samples.len() as f64;
        nodes.push(TreeNode::leaf(mean));
        if depth >= self.params.max_depth || samples.len() < 2 * self.params.min_samples_leaf {
            return id;
        }
        // `member` marks the samples of this node for filtering the presorted orders.
        member.iter_mut().for_each(|m| *m = false);
        for &i in samples {
            member[i] = true;
        }
        let Some(split) = self.best_split(samples, member) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let l = self.grow(&left, depth + 1, member, nodes);
        let r = self.grow(&right, depth + 1, member, nodes);
        nodes[id] = TreeNode {
            feature: Some(split.feature),
            threshold: Some(split.threshold),
            left: Some(l),
            right: Some(r),
            leaf_value: None,
        };
        id
    }

    /// Highest variance reduction; ties keep the lowest feature, then the
    /// lowest threshold.
    fn best_split(&self, samples: &[usize], member: &[bool]) -> Option<Split> {
        let n = samples.len();
        let total: f64 = samples.iter().map(|&i| self.residual[i]).sum();
        let parent = total * total / n as f64;
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<Split> = None;
        let mut order = Vec::with_capacity(n);
        for (f, sorted) in self.sorted.iter().enumerate() {
            order.clear();
            order.extend(sorted.iter().copied().filter(|&i| member[i]));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.residual[order[k]];
                let nl = k + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let a = self.x[order[k]][f];
                let b = self.x[order[k + 1]][f];
                if a >= b {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - parent;
                if gain > 1e-12 && best.as_ref().map_or(true, |s| gain > s.gain) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid < b { mid } else { a };
                    best = Some(Split {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// Clamped predictions for every row.
pub fn gbt_predict(reg: &GbtRegressor, features: &[Vec<f64>]) -> Result<Vec<f64>> {
    features
        .iter()
        .map(|row| {
            if row.len() != reg.n_features {
                Err(Error::invalid(format!(
                    "expected {} features, got {}",
                    reg.n_features,
                    row.len()
                )))
            } else {
                Ok(reg.predict_one(row))
            }
        })
        .collect()
}

/// Predicted-IoU heatmap `q` of one prediction.
pub fn quality_map(p: &ProbMap, reg: &GbtRegressor) -> Result<ScalarMap> {
    let mask = argmax_mask(p);
    let segments = label_components(&mask).segments;
    let feats: Vec<Vec<f64>> = extract_features(p, &segments)
        .iter()
        .map(SegmentFeatures::to_vec)
        .collect();
    let ious = gbt_predict(reg, &feats)?;
    let (h, w) = p.dims();
    let mut q = ScalarMap::filled(h, w, 0.0);
    for (seg, iou) in segments.iter().zip(ious) {
        for (r, c) in seg.pixels() {
            q.set(r, c, iou as f32);
        }
    }
    Ok(q)
}

/// Quality priority `1 - q`.
pub fn quality_priority(p: &ProbMap, reg: &GbtRegressor) -> Result<ScalarMap> {
    Ok(quality_map(p, reg)?.map(|q| 1.0 - q))
}

/// Feature rows and IoU targets of all segments of one labeled prediction.
pub fn training_rows(p: &ProbMap, gt: &SegMask) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let segments = label_components(&argmax_mask(p)).segments;
    let targets = compute_targets(&segments, gt, p.dims())?;
    let feats = extract_features(p, &segments)
        .iter()
        .map(SegmentFeatures::to_vec)
        .collect();
    Ok((feats, targets))
}

/// One full quality-estimation round: featurize the meta set predictions,
/// fit the regressor on their segment IoUs, then predict the priority map
/// `1 - q` for every unlabeled prediction.
pub fn metaseg_cycle(
    meta: &[(&ProbMap, &SegMask)],
    unlabeled: &[&ProbMap],
    params: &GbtParams,
) -> Result<(GbtRegressor, Vec<ScalarMap>)> {
    let rows: Vec<(Vec<Vec<f64>>, Vec<f64>)> = meta
        .par_iter()
        .map(|(p, gt)| training_rows(p, gt))
        .collect::<Result<_>>()?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (f, t) in rows {
        x.extend(f);
        y.extend(t);
    }
    if x.is_empty() {
        return Err(Error::Untrainable(
            "meta set predictions contain no segments".into(),
        ));
    }
    let reg = gbt_fit(&x, &y, params)?;
    let maps = unlabeled
        .par_iter()
        .map(|p| quality_priority(p, &reg))
        .collect::<Result<Vec<_>>>()?;
    Ok((reg, maps))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut k = 0;
        while k < idx.len() {
            let mut e = k;
            while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[k]] {
                e += 1;
            }
            let avg = (k + e) as f64 / 2.0 + 1.0;
            for &i in &idx[k..=e] {
                r[i] = avg;
            }
            k = e + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}
