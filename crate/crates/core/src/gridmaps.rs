//! Dense per-pixel maps and box aggregation.
//!
//! A [`ProbMap`] holds the softmax output of a segmentation model, a
//! [`ScalarMap`] holds one score per pixel (priority maps, quality heatmaps,
//! click-cost maps). Box scores are computed from a [`SummedAreaTable`] so
//! that every candidate box costs four lookups regardless of its width.

use crate::error::{Error, Result};

/// Tolerance on the per-pixel class sum of a probability map.
pub const PROB_SUM_TOLERANCE: f32 = 1e-3;

/// Per-pixel class probabilities, row-major over `(row, col, class)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    classes: usize,
    values: Vec<f32>,
}

impl ProbMap {
    /// Builds a map, validating shape, range and per-pixel normalization.
    pub fn new(height: usize, width: usize, classes: usize, values: Vec<f32>) -> Result<Self> {
        let map = Self::new_unchecked(height, width, classes, values)?;
        map.validate()?;
        Ok(map)
    }

    /// Builds a map checking only the shape.
    pub fn new_unchecked(
        height: usize,
        width: usize,
        classes: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {classes}")));
        }
        if values.len() != height * width * classes {
            return Err(Error::invalid(format!(
                "expected {} values for {height}x{width}x{classes}, got {}",
                height * width * classes,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            classes,
            values,
        })
    }

    /// Builds a map from a per-pixel closure writing into the class slice.
    pub fn from_fn(
        height: usize,
        width: usize,
        classes: usize,
        mut f: impl FnMut(usize, usize, &mut [f32]),
    ) -> Result<Self> {
        let mut values = vec![0.0f32; height * width * classes];
        for (idx, px) in values.chunks_exact_mut(classes.max(1)).enumerate() {
            f(idx / width.max(1), idx % width.max(1), px);
        }
        Self::new(height, width, classes, values)
    }

    /// Uniform distribution over all classes at every pixel.
    pub fn uniform(height: usize, width: usize, classes: usize) -> Result<Self> {
        let v = 1.0 / classes as f32;
        Self::new_unchecked(height, width, classes, vec![v; height * width * classes])
    }

    /// Checks value range and per-pixel sums.
    pub fn validate(&self) -> Result<()> {
        for (idx, px) in self.values.chunks_exact(self.classes).enumerate() {
            let mut sum = 0.0f32;
            for &v in px {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!(
                        "probability {v} at pixel ({}, {}) outside [0, 1]",
                        idx / self.width,
                        idx % self.width
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::Denormalized {
                    row: idx / self.width,
                    col: idx % self.width,
                    sum,
                });
            }
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Class vector of one pixel.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.classes;
        &self.values[start..start + self.classes]
    }

    /// Class vectors in raster order.
    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.classes)
    }
}

/// One `f32` score per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ScalarMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::invalid(format!(
                "expected {} values for {height}x{width}, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite map value {v}")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.values[row * self.width + col] = v;
    }

    /// Applies `f` to every value.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> ScalarMap {
        ScalarMap {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Index of the largest value (first one on ties), as `(row, col)`.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, f32)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| (i / self.width, i % self.width))
    }
}

/// Boolean per-pixel mask; `true` marks an already labeled pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::invalid(format!(
                "expected {} bits for {height}x{width}, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.bits[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    /// Marks a `b`×`b` box; returns how many pixels were newly set.
    pub fn fill_box(&mut self, row: usize, col: usize, b: usize) -> usize {
        let mut added = 0;
        for r in row..(row + b).min(self.height) {
            for c in col..(col + b).min(self.width) {
                let bit = &mut self.bits[r * self.width + c];
                if !*bit {
                    *bit = true;
                    added += 1;
                }
            }
        }
        added
    }
}

/// Inclusive prefix sums with a zero top row and left column.
#[derive(Clone, Debug, PartialEq)]
pub struct SummedAreaTable {
    height: usize,
    width: usize,
    sums: Vec<f64>,
}

impl SummedAreaTable {
    /// Height and width of the source map.
    pub fn source_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Entry `(i, j)`: the sum over source rows `< i` and columns `< j`.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.sums[i * (self.width + 1) + j]
    }

    /// Sum over an arbitrary `h`×`w` rectangle with top-left `(row, col)`.
    pub fn rect_sum(&self, row: usize, col: usize, h: usize, w: usize) -> Result<f64> {
        if row + h > self.height || col + w > self.width {
            return Err(Error::OutOfBounds {
                row,
                col,
                width: h.max(w),
                height: self.height,
                map_width: self.width,
            });
        }
        Ok(self.at(row + h, col + w) - self.at(row, col + w) - self.at(row + h, col)
            + self.at(row, col))
    }
}

/// Normalized pixel-wise entropy, `-Σ p ln p / ln c`, so values lie in `[0, 1]`.
pub fn entropy_map(p: &ProbMap) -> Result<ScalarMap> {
    if p.classes < 2 {
        return Err(Error::invalid("entropy needs at least 2 classes"));
    }
    let norm = (p.classes as f64).ln();
    let values = p
        .pixels()
        .map(|px| (pixel_entropy(px) / norm).clamp(0.0, 1.0) as f32)
        .collect();
    Ok(ScalarMap {
        height: p.height,
        width: p.width,
        values,
    })
}

/// Unnormalized entropy of one class vector in nats; zero terms contribute 0.
#[inline]
pub fn pixel_entropy(px: &[f32]) -> f64 {
    px.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let v = v as f64;
            -v * v.ln()
        })
        .sum()
}

/// Zeroes every labeled pixel of `m`.
pub fn mask_labeled(m: &ScalarMap, labeled: &BitMask) -> Result<ScalarMap> {
    if m.dims() != labeled.dims() {
        return Err(Error::DimensionMismatch {
            expected: m.dims(),
            actual: labeled.dims(),
        });
    }
    let values = m
        .values
        .iter()
        .zip(&labeled.bits)
        .map(|(&v, &l)| if l { 0.0 } else { v })
        .collect();
    Ok(ScalarMap {
        height: m.height,
        width: m.width,
        values,
    })
}

pub fn build_sat(m: &ScalarMap) -> SummedAreaTable {
    let (h, w) = m.dims();
    let stride = w + 1;
    let mut sums = vec![0.0f64; (h + 1) * stride];
    for r in 0..h {
        let mut row_sum = 0.0f64;
        for c in 0..w {
            row_sum += m.values[r * w + c] as f64;
            sums[(r + 1) * stride + c + 1] = sums[r * stride + c + 1] + row_sum;
        }
    }
    SummedAreaTable {
        height: h,
        width: w,
        sums,
    }
}

/// Sum of the source map over the `b`×`b` box with top-left `anchor`.
pub fn box_sum(sat: &SummedAreaTable, anchor: (usize, usize), b: usize) -> Result<f64> {
    let (row, col) = anchor;
    if row + b > sat.height || col + b > sat.width {
        return Err(Error::OutOfBounds {
            row,
            col,
            width: b,
            height: sat.height,
            map_width: sat.width,
        });
    }
    Ok(sat.rect_sum(row, col, b, b)?)
}

/// Output dimensions of [`aggregate_boxes`] for a map of the given size.
pub fn anchor_grid_dims(height: usize, width: usize, b: usize, stride: usize) -> (usize, usize) {
    if b == 0 || stride == 0 || b > height || b > width {
        return (0, 0);
    }
    ((height - b) / stride + 1, (width - b) / stride + 1)
}

/// Mean of `m` over every `b`×`b` box whose top-left corner lies on the
/// stride grid. Entry `(i, j)` of the result is the box anchored at
/// `(i * stride, j * stride)`.
pub fn aggregate_boxes(m: &ScalarMap, b: usize, stride: usize) -> Result<ScalarMap> {
    if b == 0 {
        return Err(Error::invalid("box width must be positive"));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    if b > m.height || b > m.width {
        return Err(Error::invalid(format!(
            "box width {b} larger than {}x{} map",
            m.height, m.width
        )));
    }
    let sat = build_sat(m);
    let (gh, gw) = anchor_grid_dims(m.height, m.width, b, stride);
    let area = (b * b) as f64;
    // SAT differences can round a hair outside the range of the input
    let lo = m.values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = m.values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut values = Vec::with_capacity(gh * gw);
    for i in 0..gh {
        for j in 0..gw {
            let s = sat.rect_sum(i * stride, j * stride, b, b)?;
            values.push(((s / area) as f32).clamp(lo, hi));
        }
    }
    Ok(ScalarMap {
        height: gh,
        width: gw,
        values,
    })
}
