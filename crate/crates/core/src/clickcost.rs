//! Annotation click estimation and accounting.
//!
//! Estimated clicks come from simplifying the contours of predicted segments
//! with Ramer-Douglas-Peucker; every surviving vertex marks one pixel of the
//! cost map. True clicks are counted against ground-truth polygons for each
//! queried box, split into polygon, intersection, box and class clicks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridmaps::{BitMask, ScalarMap};
use crate::segmentation::{label_components, trace_contours, Labeling, SegMask, IGNORE};

/// Default RDP tolerance in pixels.
pub const DEFAULT_EPSILON: f64 = 1.5;

/// Clicks charged for drawing the box itself, one per corner.
pub const BOX_CLICKS: u64 = 4;

/// Ground-truth polygon; vertices are `(x, y)` pixel coordinates with the
/// origin at the top-left image corner and `x` along columns. The ring is
/// implicitly closed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub image_id: String,
    pub class: u16,
    pub vertices: Vec<[f64; 2]>,
}

/// Square query region covering pixel rows `row..row + b` and columns
/// `col..col + b`; in continuous coordinates `[col, col + b] × [row, row + b]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoxRegion {
    pub row: usize,
    pub col: usize,
    pub b: usize,
}

impl BoxRegion {
    pub fn new(row: usize, col: usize, b: usize) -> Self {
        Self { row, col, b }
    }

    pub fn overlaps(&self, other: &BoxRegion) -> bool {
        self.row < other.row + other.b
            && other.row < self.row + self.b
            && self.col < other.col + other.b
            && other.col < self.col + self.b
    }

    fn contains_point(&self, x: f64, y: f64) -> bool {
        let (x0, y0) = (self.col as f64, self.row as f64);
        let s = self.b as f64;
        x >= x0 && x <= x0 + s && y >= y0 && y <= y0 + s
    }

    /// Pixel holding a point on or inside the box.
    fn pixel_of(&self, x: f64, y: f64) -> (usize, usize) {
        let r = (y.floor().max(self.row as f64) as usize).min(self.row + self.b - 1);
        let c = (x.floor().max(self.col as f64) as usize).min(self.col + self.b - 1);
        (r, c)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickCounts {
    /// Ground-truth vertices inside the box.
    pub c_p: u64,
    /// Crossings of polygon edges with the box boundary.
    pub c_i: u64,
    /// Box corners.
    pub c_b: u64,
    /// Ground-truth segments touching the box.
    pub c_c: u64,
}

impl std::ops::AddAssign for ClickCounts {
    fn add_assign(&mut self, o: Self) {
        self.c_p += o.c_p;
        self.c_i += o.c_i;
        self.c_b += o.c_b;
        self.c_c += o.c_c;
    }
}

/// Running click and pixel totals of one active-learning run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub init_cp: u64,
    pub init_cc: u64,
    pub query_cp: u64,
    pub query_ci: u64,
    pub query_cb: u64,
    pub query_cc: u64,
    pub pool_cp: u64,
    pub pool_cc: u64,
    pub labeled_pixels: u64,
    pub total_pixels: u64,
}

impl CostLedger {
    pub fn new(pool_cp: u64, pool_cc: u64, total_pixels: u64) -> Self {
        Self {
            pool_cp,
            pool_cc,
            total_pixels,
            ..Default::default()
        }
    }

    /// Charges a fully annotated image.
    pub fn charge_image(&mut self, polygon_clicks: u64, class_clicks: u64, new_pixels: u64) {
        self.init_cp += polygon_clicks;
        self.init_cc += class_clicks;
        self.labeled_pixels += new_pixels;
    }

    pub fn charge_box(&mut self, clicks: &ClickCounts, new_pixels: u64) {
        self.query_cp += clicks.c_p;
        self.query_ci += clicks.c_i;
        self.query_cb += clicks.c_b;
        self.query_cc += clicks.c_c;
        self.labeled_pixels += new_pixels;
    }

    /// Cumulative clicks by type, including the fully annotated images.
    pub fn totals(&self) -> ClickCounts {
        ClickCounts {
            c_p: self.init_cp + self.query_cp,
            c_i: self.query_ci,
            c_b: self.query_cb,
            c_c: self.init_cc + self.query_cc,
        }
    }
}

/// Cost metrics in percent of annotating the whole pool.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Costs {
    pub cost_a: f64,
    pub cost_b: f64,
    pub cost_p: f64,
}

pub fn compute_costs(ledger: &CostLedger) -> Result<Costs> {
    if ledger.pool_cp == 0 || ledger.total_pixels == 0 {
        return Err(Error::invalid("pool click and pixel totals must be positive"));
    }
    let l = ledger;
    let a = (l.init_cp + l.init_cc + l.query_cp + l.query_ci + l.query_cc) as f64
        / (l.pool_cp + l.pool_cc) as f64;
    let b = (l.init_cp + l.query_cp + l.query_ci + l.query_cb) as f64 / l.pool_cp as f64;
    let p = l.labeled_pixels as f64 / l.total_pixels as f64;
    Ok(Costs {
        cost_a: 100.0 * a,
        cost_b: 100.0 * b,
        cost_p: 100.0 * p,
    })
}

/// Ramer-Douglas-Peucker simplification.
///
/// Open polylines keep both endpoints. Closed rings (an explicit closing
/// point equal to the first is dropped) are cut at their two mutually
/// farthest points and each half is simplified as an open polyline; the
/// result starts at the first cut point and is implicitly closed.
pub fn rdp(points: &[(f64, f64)], epsilon: f64, closed: bool) -> Result<Vec<(f64, f64)>> {
    if points.len() < 2 {
        return Err(Error::invalid(format!(
            "RDP needs at least 2 points, got {}",
            points.len()
        )));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::invalid(format!("epsilon must be non-negative, got {epsilon}")));
    }
    if !closed {
        let keep = rdp_keep(points, epsilon);
        return Ok(points.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p).collect());
    }

    let mut ring = points;
    if ring.len() > 1 && ring.first() == ring.last() {
        ring = &ring[..ring.len() - 1];
    }
    let n = ring.len();
    if n < 3 {
        return Ok(ring.to_vec());
    }
    let (i, j) = farthest_pair(ring);
    let first: Vec<(f64, f64)> = ring[i..=j].to_vec();
    let second: Vec<(f64, f64)> = ring[j..].iter().chain(&ring[..=i]).copied().collect();
    let mut out = rdp(&first, epsilon, false)?;
    let tail = rdp(&second, epsilon, false)?;
    out.extend_from_slice(&tail[1..tail.len() - 1]);
    Ok(out)
}

/// First index pair `(i, j)`, `i < j`, at maximal distance in raster
/// enumeration order. A pair at maximal distance consists of convex-hull
/// vertices, so only points coinciding with one are enumerated.
fn farthest_pair(ring: &[(f64, f64)]) -> (usize, usize) {
    let hull = convex_hull(ring);
    let on_hull: Vec<usize> = (0..ring.len())
        .filter(|&k| hull.binary_search_by(|h| cmp_point(*h, ring[k])).is_ok())
        .collect();
    let mut best = (0, 1, -1.0f64);
    for (a, &i) in on_hull.iter().enumerate() {
        for &j in &on_hull[a + 1..] {
            let d = dist2(ring[i], ring[j]);
            if d > best.2 {
                best = (i, j, d);
            }
        }
    }
    (best.0, best.1)
}

fn cmp_point(a: (f64, f64), b: (f64, f64)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1))
}

/// Strict convex-hull vertices (monotone chain), sorted lexicographically.
fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| cmp_point(*a, *b));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull.sort_by(|a, b| cmp_point(*a, *b));
    hull.dedup();
    hull
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Squared perpendicular distance from `p` to the line through `a` and
/// `b`, or to `a` when the two coincide.
fn line_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let len2 = dist2(a, b);
    if len2 == 0.0 {
        return dist2(p, a);
    }
    let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    cross * cross / len2
}

fn rdp_keep(points: &[(f64, f64)], epsilon: f64) -> Vec<bool> {
    let n = points.len();
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    let eps2 = epsilon * epsilon;
    let mut stack = vec![(0usize, n - 1)];
    while let Some((s, e)) = stack.pop() {
        if e <= s + 1 {
            continue;
        }
        let mut split = (0usize, -1.0f64);
        for k in s + 1..e {
            let d = line_dist2(points[k], points[s], points[e]);
            if d > split.1 {
                split = (k, d);
            }
        }
        if split.1 > eps2 {
            keep[split.0] = true;
            stack.push((s, split.0));
            stack.push((split.0, e));
        }
    }
    keep
}

/// Estimated-click map: 1 at every pixel holding a simplified contour vertex
/// of some segment, 0 elsewhere.
///
/// Only outer contours are simplified. A hole in one segment is bounded by
/// segments lying inside it, whose own outer contours already carry those
/// vertices, so each boundary is charged once as in layered polygon
/// annotation.
pub fn click_cost_map(mask: &SegMask, epsilon: f64) -> Result<ScalarMap> {
    let (h, w) = mask.dims();
    let mut kappa = ScalarMap::filled(h, w, 0.0);
    for seg in label_components(mask).segments {
        let contours = trace_contours(&seg, mask);
        let outer: Vec<(f64, f64)> = contours
            .outer()
            .iter()
            .map(|&(r, c)| (c as f64, r as f64))
            .collect();
        let vertices = if outer.len() < 2 {
            outer
        } else {
            rdp(&outer, epsilon, true)?
        };
        for (x, y) in vertices {
            kappa.set(y as usize, x as usize, 1.0);
        }
    }
    Ok(kappa)
}

/// Click priority `1 - κ`: zero on estimated vertex pixels, one elsewhere.
pub fn click_priority(mask: &SegMask, epsilon: f64) -> Result<ScalarMap> {
    Ok(click_cost_map(mask, epsilon)?.map(|k| 1.0 - k))
}

/// Cost map of the true annotation: 1 at every pixel holding a ground-truth
/// polygon vertex.
pub fn vertex_cost_map(polygons: &[Polygon], height: usize, width: usize) -> ScalarMap {
    let mut kappa = ScalarMap::filled(height, width, 0.0);
    if height == 0 || width == 0 {
        return kappa;
    }
    for poly in polygons {
        for &[x, y] in &poly.vertices {
            let r = (y.floor().max(0.0) as usize).min(height - 1);
            let c = (x.floor().max(0.0) as usize).min(width - 1);
            kappa.set(r, c, 1.0);
        }
    }
    kappa
}

/// Number of estimated vertices inside a box of a cost map.
pub fn estimate_box_clicks(kappa: &ScalarMap, region: BoxRegion) -> Result<u64> {
    let (h, w) = kappa.dims();
    if region.row + region.b > h || region.col + region.b > w {
        return Err(Error::OutOfBounds {
            row: region.row,
            col: region.col,
            width: region.b,
            height: h,
            map_width: w,
        });
    }
    let mut n = 0u64;
    for r in region.row..region.row + region.b {
        for c in region.col..region.col + region.b {
            if kappa.get(r, c) > 0.5 {
                n += 1;
            }
        }
    }
    Ok(n)
}

/// Ground truth of one image prepared for repeated click counting.
#[derive(Clone, Debug)]
pub struct TrueClickIndex<'a> {
    polygons: &'a [Polygon],
    gt: &'a SegMask,
    labeling: Labeling,
}

impl<'a> TrueClickIndex<'a> {
    pub fn new(polygons: &'a [Polygon], gt: &'a SegMask) -> Self {
        Self {
            polygons,
            gt,
            labeling: label_components(gt),
        }
    }

    pub fn labeling(&self) -> &Labeling {
        &self.labeling
    }

    /// Clicks needed to annotate `region`.
    ///
    /// With `already` given, only pixels not yet labeled are charged: a
    /// vertex or crossing point counts only if its pixel is new, and only
    /// segments with a new pixel in the box need a class click. Box clicks
    /// are always charged.
    pub fn count(&self, region: BoxRegion, already: Option<&BitMask>) -> ClickCounts {
        let is_new = |r: usize, c: usize| already.map_or(true, |m| !m.get(r, c));
        let mut counts = ClickCounts {
            c_b: BOX_CLICKS,
            ..Default::default()
        };
        for poly in self.polygons {
            let v = &poly.vertices;
            for &[x, y] in v {
                if region.contains_point(x, y) {
                    let (r, c) = region.pixel_of(x, y);
                    if is_new(r, c) {
                        counts.c_p += 1;
                    }
                }
            }
            for k in 0..v.len() {
                let a = (v[k][0], v[k][1]);
                let b = (v[(k + 1) % v.len()][0], v[(k + 1) % v.len()][1]);
                for (x, y) in boundary_crossings(region, a, b) {
                    let (r, c) = region.pixel_of(x, y);
                    if is_new(r, c) {
                        counts.c_i += 1;
                    }
                }
            }
        }
        let (h, w) = self.gt.dims();
        let mut seen: Vec<usize> = Vec::new();
        for r in region.row..(region.row + region.b).min(h) {
            for c in region.col..(region.col + region.b).min(w) {
                if !is_new(r, c) || self.gt.get(r, c) == IGNORE {
                    continue;
                }
                let id = self.labeling.labels[r * w + c];
                if !seen.contains(&id) {
                    seen.push(id);
                }
            }
        }
        counts.c_c = seen.len() as u64;
        counts
    }
}

/// Click counts for annotating `region` of an image from scratch.
pub fn count_true_clicks(region: BoxRegion, polygons: &[Polygon], gt: &SegMask) -> ClickCounts {
    TrueClickIndex::new(polygons, gt).count(region, None)
}

/// Points where the segment `a`→`b` enters or leaves the closed box.
///
/// The inside part of a segment against a convex box is one parameter
/// interval `[t0, t1]`. An entry is reported when `a` lies outside
/// (`t0 > 0`), an exit when `b` lies outside (`t1 < 1`). A segment touching
/// the box in a single point from outside produces nothing, so a crossing
/// exactly through a corner counts once per direction change.
fn boundary_crossings(region: BoxRegion, a: (f64, f64), b: (f64, f64)) -> Vec<(f64, f64)> {
    let (x0, y0) = (region.col as f64, region.row as f64);
    let (x1, y1) = (x0 + region.b as f64, y0 + region.b as f64);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, q) in [
        (-dx, a.0 - x0),
        (dx, x1 - a.0),
        (-dy, a.1 - y0),
        (dy, y1 - a.1),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return Vec::new();
            }
            continue;
        }
        let t = q / p;
        if p < 0.0 {
            t0 = t0.max(t);
        } else {
            t1 = t1.min(t);
        }
        if t0 > t1 {
            return Vec::new();
        }
    }
    let at = |t: f64| (a.0 + t * dx, a.1 + t * dy);
    let a_in = t0 == 0.0;
    let b_in = t1 == 1.0;
    if !a_in && !b_in && t0 == t1 {
        return Vec::new();
    }
    let mut out = Vec::new();
    if !a_in {
        out.push(at(t0));
    }
    if !b_in {
        out.push(at(t1));
    }
    out
}
