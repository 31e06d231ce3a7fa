//! Argmax masks, 8-connected segments, contour tracing and IoU evaluation.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::gridmaps::ProbMap;

/// In-memory class id for pixels without ground truth.
pub const IGNORE: u16 = u16::MAX;

const NEIGHBORS_8: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

const NEIGHBORS_4: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

/// Per-pixel class ids. Pixels equal to [`IGNORE`] carry no label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegMask {
    height: usize,
    width: usize,
    classes: usize,
    ids: Vec<u16>,
}

impl SegMask {
    pub fn new(height: usize, width: usize, classes: usize, ids: Vec<u16>) -> Result<Self> {
        if ids.len() != height * width {
            return Err(Error::invalid(format!(
                "expected {} class ids for {height}x{width}, got {}",
                height * width,
                ids.len()
            )));
        }
        if classes == 0 || classes >= IGNORE as usize {
            return Err(Error::invalid(format!("unsupported class count {classes}")));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id != IGNORE && id as usize >= classes) {
            return Err(Error::invalid(format!(
                "class id {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            height,
            width,
            classes,
            ids,
        })
    }

    pub fn filled(height: usize, width: usize, classes: usize, id: u16) -> Result<Self> {
        Self::new(height, width, classes, vec![id; height * width])
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

    pub fn ids(&self) -> &[u16] {
        &self.ids
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.ids[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, id: u16) {
        debug_assert!(id == IGNORE || (id as usize) < self.classes);
        self.ids[row * self.width + col] = id;
    }

    fn offset(&self, row: usize, col: usize, dr: isize, dc: isize) -> Option<(usize, usize)> {
        let r = row as isize + dr;
        let c = col as isize + dc;
        (r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width)
            .then_some((r as usize, c as usize))
    }
}

/// A horizontal run of pixels `cols [col, col + len)` in one row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Run {
    pub row: usize,
    pub col: usize,
    pub len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// Maximal 8-connected set of same-class pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub id: usize,
    pub class: u16,
    /// Run-length pixel set, sorted by row then column.
    pub runs: Vec<Run>,
    /// Pixel count.
    pub size: usize,
    /// Pixels with at least one 4-neighbor outside the segment or the image.
    pub boundary_size: usize,
    pub bbox: BBox,
}

impl Segment {
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.runs
            .iter()
            .flat_map(|run| (run.col..run.col + run.len).map(move |c| (run.row, c)))
    }

    pub fn inner_size(&self) -> usize {
        self.size - self.boundary_size
    }
}

/// Per-pixel argmax; ties go to the lowest class index.
pub fn argmax_mask(p: &ProbMap) -> SegMask {
    let ids = p
        .pixels()
        .map(|px| {
            let mut best = 0usize;
            for (k, &v) in px.iter().enumerate().skip(1) {
                if v > px[best] {
                    best = k;
                }
            }
            best as u16
        })
        .collect();
    SegMask {
        height: p.height(),
        width: p.width(),
        classes: p.classes(),
        ids,
    }
}

/// Component labels of a mask: `labels[i]` is the segment id of pixel `i`,
/// or `usize::MAX` for ignored pixels.
#[derive(Clone, Debug)]
pub struct Labeling {
    pub labels: Vec<usize>,
    pub segments: Vec<Segment>,
}

/// Splits the non-ignored pixels into maximal 8-connected same-class
/// segments, numbered in raster order of their first pixel.
pub fn connected_components(mask: &SegMask) -> Vec<Segment> {
    label_components(mask).segments
}

pub fn label_components(mask: &SegMask) -> Labeling {
    let (h, w) = mask.dims();
    let mut labels = vec![usize::MAX; h * w];
    let mut segments = Vec::new();
    let mut queue = VecDeque::new();
    let mut members: Vec<(usize, usize)> = Vec::new();

    for start in 0..h * w {
        let class = mask.ids[start];
        if class == IGNORE || labels[start] != usize::MAX {
            continue;
        }
        let id = segments.len();
        labels[start] = id;
        queue.push_back((start / w, start % w));
        members.clear();
        while let Some((r, c)) = queue.pop_front() {
            members.push((r, c));
            for &(dr, dc) in &NEIGHBORS_8 {
                if let Some((nr, nc)) = mask.offset(r, c, dr, dc) {
                    let ni = nr * w + nc;
                    if labels[ni] == usize::MAX && mask.ids[ni] == class {
                        labels[ni] = id;
                        queue.push_back((nr, nc));
                    }
                }
            }
        }
        members.sort_unstable();
        segments.push(build_segment(mask, &labels, id, class, &members));
    }
    Labeling { labels, segments }
}

fn build_segment(
    mask: &SegMask,
    labels: &[usize],
    id: usize,
    class: u16,
    members: &[(usize, usize)],
) -> Segment {
    let w = mask.width;
    let mut runs: Vec<Run> = Vec::new();
    let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
    let mut boundary = 0;
    for &(r, c) in members {
        match runs.last_mut() {
            Some(run) if run.row == r && run.col + run.len == c => run.len += 1,
            _ => runs.push(Run { row: r, col: c, len: 1 }),
        }
        r0 = r0.min(r);
        c0 = c0.min(c);
        r1 = r1.max(r);
        c1 = c1.max(c);
        let on_boundary = NEIGHBORS_4.iter().any(|&(dr, dc)| {
            mask.offset(r, c, dr, dc)
                .map_or(true, |(nr, nc)| labels[nr * w + nc] != id)
        });
        if on_boundary {
            boundary += 1;
        }
    }
    Segment {
        id,
        class,
        runs,
        size: members.len(),
        boundary_size: boundary,
        bbox: BBox {
            row: r0,
            col: c0,
            height: r1 - r0 + 1,
            width: c1 - c0 + 1,
        },
    }
}

/// Closed pixel paths around a segment: the outer boundary first, then one
/// path per enclosed hole. Consecutive entries are 8-neighbors and the last
/// entry is a neighbor of the first (the start is not repeated).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContourSet {
    pub paths: Vec<Vec<(usize, usize)>>,
}

impl ContourSet {
    pub fn outer(&self) -> &[(usize, usize)] {
        &self.paths[0]
    }

    pub fn holes(&self) -> &[Vec<(usize, usize)>] {
        &self.paths[1..]
    }
}

/// Moore neighborhood in clockwise order (row axis points down), starting west.
const MOORE: [(isize, isize); 8] = [
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
];

/// Local occupancy grid around a segment's bounding box, padded by one pixel
/// so the outside background is connected.
struct LocalGrid {
    row0: isize,
    col0: isize,
    h: usize,
    w: usize,
    inside: Vec<bool>,
}

impl LocalGrid {
    fn new(seg: &Segment) -> Self {
        let h = seg.bbox.height + 2;
        let w = seg.bbox.width + 2;
        let row0 = seg.bbox.row as isize - 1;
        let col0 = seg.bbox.col as isize - 1;
        let mut inside = vec![false; h * w];
        for (r, c) in seg.pixels() {
            let lr = (r as isize - row0) as usize;
            let lc = (c as isize - col0) as usize;
            inside[lr * w + lc] = true;
        }
        Self {
            row0,
            col0,
            h,
            w,
            inside,
        }
    }

    #[inline]
    fn is_in(&self, r: isize, c: isize) -> bool {
        r >= 0
            && c >= 0
            && (r as usize) < self.h
            && (c as usize) < self.w
            && self.inside[r as usize * self.w + c as usize]
    }

    fn to_image(&self, r: isize, c: isize) -> (usize, usize) {
        ((r + self.row0) as usize, (c + self.col0) as usize)
    }

    /// Labels 4-connected background components; component 0 touches the padding.
    fn background_components(&self) -> (Vec<usize>, usize) {
        let mut comp = vec![usize::MAX; self.h * self.w];
        let mut count = 0;
        let mut queue = VecDeque::new();
        // Seed the padding corner first so the outside is component 0.
        for start in 0..self.h * self.w {
            if self.inside[start] || comp[start] != usize::MAX {
                continue;
            }
            comp[start] = count;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                let (r, c) = ((i / self.w) as isize, (i % self.w) as isize);
                for &(dr, dc) in &NEIGHBORS_4 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr as usize >= self.h || nc as usize >= self.w {
                        continue;
                    }
                    let ni = nr as usize * self.w + nc as usize;
                    if !self.inside[ni] && comp[ni] == usize::MAX {
                        comp[ni] = count;
                        queue.push_back(ni);
                    }
                }
            }
            count += 1;
        }
        (comp, count)
    }

    /// Moore-neighbor tracing, starting at segment pixel `start` with
    /// background pixel `back` as the entry side. Stops on Jacob's criterion
    /// or when the first move `start → path[1]` would repeat; a diagonal
    /// re-entry into `start` never meets Jacob's criterion alone.
    fn trace(&self, start: (isize, isize), back: (isize, isize)) -> Vec<(isize, isize)> {
        let mut path = vec![start];
        let mut p = start;
        let mut b = back;
        let limit = 4 * self.h * self.w + 8;
        for _ in 0..limit {
            let dir = MOORE
                .iter()
                .position(|&(dr, dc)| (p.0 + dr, p.1 + dc) == b)
                .expect("backtrack must neighbor the current pixel");
            let mut next = None;
            for k in 1..=8 {
                let d = (dir + k) % 8;
                let q = (p.0 + MOORE[d].0, p.1 + MOORE[d].1);
                if self.is_in(q.0, q.1) {
                    let prev = (dir + k - 1) % 8;
                    next = Some((q, (p.0 + MOORE[prev].0, p.1 + MOORE[prev].1)));
                    break;
                }
            }
            let Some((q, nb)) = next else {
                // Isolated pixel.
                return path;
            };
            if q == start && nb == back {
                return path;
            }
            if p == start && path.len() > 2 && q == path[1] {
                path.pop();
                return path;
            }
            path.push(q);
            p = q;
            b = nb;
        }
        path
    }
}

/// Traces the outer boundary and all hole boundaries of `seg`.
///
/// Holes are 4-connected groups of non-segment pixels that do not reach the
/// image border. Every pixel with a 4-neighbor outside the segment lies on at
/// least one path; a pixel touching both the outside and a hole lies on both.
pub fn trace_contours(seg: &Segment, mask: &SegMask) -> ContourSet {
    debug_assert!(seg.pixels().all(|(r, c)| mask.get(r, c) == seg.class));
    let grid = LocalGrid::new(seg);
    let first = seg.pixels().next().expect("segments are never empty");
    let s = (
        first.0 as isize - grid.row0,
        first.1 as isize - grid.col0,
    );
    let mut paths = vec![simplify_path(
        grid.trace(s, (s.0, s.1 - 1))
            .into_iter()
            .map(|(r, c)| grid.to_image(r, c))
            .collect(),
    )];

    let (comp, count) = grid.background_components();
    if count > 1 {
        // For each hole, the first segment pixel in raster order that has a
        // 4-neighbor in it.
        let mut starts: Vec<Option<((isize, isize), (isize, isize))>> = vec![None; count];
        for (r, c) in seg.pixels() {
            let lr = r as isize - grid.row0;
            let lc = c as isize - grid.col0;
            for &(dr, dc) in &NEIGHBORS_4 {
                let (nr, nc) = (lr + dr, lc + dc);
                let id = comp[nr as usize * grid.w + nc as usize];
                if id != usize::MAX && id != 0 && starts[id].is_none() {
                    starts[id] = Some(((lr, lc), (nr, nc)));
                }
            }
        }
        for (s, b) in starts.into_iter().skip(1).flatten() {
            paths.push(simplify_path(
                grid.trace(s, b)
                    .into_iter()
                    .map(|(r, c)| grid.to_image(r, c))
                    .collect(),
            ));
        }
    }
    ContourSet { paths }
}

fn simplify_path(mut path: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    path.dedup();
    while path.len() > 1 && path.first() == path.last() {
        path.pop();
    }
    path
}

/// Segment-wise IoU against ground truth.
///
/// The union uses only the ground-truth components of the segment's class
/// that intersect it; ignored ground-truth pixels are dropped from both
/// counts.
pub fn segment_iou(seg: &Segment, gt: &SegMask) -> f64 {
    let gt_labels = label_components(gt);
    segment_iou_with(seg, gt, &gt_labels)
}

/// [`segment_iou`] with a precomputed ground-truth labeling.
pub fn segment_iou_with(seg: &Segment, gt: &SegMask, gt_labels: &Labeling) -> f64 {
    let w = gt.width;
    let mut touched: Vec<usize> = Vec::new();
    let mut intersection = 0usize;
    let mut seg_valid = 0usize;
    for (r, c) in seg.pixels() {
        let g = gt.ids[r * w + c];
        if g == IGNORE {
            continue;
        }
        seg_valid += 1;
        if g == seg.class {
            intersection += 1;
            let comp = gt_labels.labels[r * w + c];
            if !touched.contains(&comp) {
                touched.push(comp);
            }
        }
    }
    if intersection == 0 {
        return 0.0;
    }
    let gt_area: usize = touched.iter().map(|&k| gt_labels.segments[k].size).sum();
    let union = seg_valid + gt_area - intersection;
    intersection as f64 / union as f64
}

/// Dataset-level confusion accumulator for mean IoU.
#[derive(Clone, Debug)]
pub struct IouAccumulator {
    classes: usize,
    /// `confusion[gt * classes + pred]`
    confusion: Vec<u64>,
    /// Labeled pixels whose prediction carries no class.
    unpredicted: Vec<u64>,
}

impl IouAccumulator {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            confusion: vec![0; classes * classes],
            unpredicted: vec![0; classes],
        }
    }

    pub fn add(&mut self, pred: &SegMask, gt: &SegMask) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(Error::DimensionMismatch {
                expected: gt.dims(),
                actual: pred.dims(),
            });
        }
        let k = self.classes;
        for (&p, &g) in pred.ids.iter().zip(&gt.ids) {
            if g == IGNORE {
                continue;
            }
            let g = g as usize;
            if g >= k {
                return Err(Error::invalid(format!("ground-truth class {g} out of range")));
            }
            if p == IGNORE || p as usize >= k {
                self.unpredicted[g] += 1;
            } else {
                self.confusion[g * k + p as usize] += 1;
            }
        }
        Ok(())
    }

    /// Per-class IoU, `None` where the union is empty.
    pub fn class_ious(&self) -> Vec<Option<f64>> {
        let k = self.classes;
        (0..k)
            .map(|c| {
                let tp = self.confusion[c * k + c];
                let row: u64 = self.confusion[c * k..(c + 1) * k].iter().sum();
                let col: u64 = (0..k).map(|g| self.confusion[g * k + c]).sum();
                let union = row + col - tp + self.unpredicted[c];
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean over classes with a non-empty union.
    pub fn mean_iou(&self) -> f64 {
        let ious: Vec<f64> = self.class_ious().into_iter().flatten().collect();
        if ious.is_empty() {
            0.0
        } else {
            ious.iter().sum::<f64>() / ious.len() as f64
        }
    }
}

pub fn mean_iou(pred: &SegMask, gt: &SegMask) -> Result<f64> {
    let mut acc = IouAccumulator::new(gt.classes.max(pred.classes));
    acc.add(pred, gt)?;
    Ok(acc.mean_iou())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn mask_from(rows: &[&str]) -> SegMask {
        let h = rows.len();
        let w = rows[0].len();
        let ids = rows
            .iter()
            .flat_map(|r| r.bytes().map(|b| if b == b'.' { IGNORE } else { (b - b'0') as u16 }))
            .collect();
        SegMask::new(h, w, 10, ids).unwrap()
    }

    #[test]
    fn argmax_one_hot_and_ties() {
        let p = ProbMap::from_fn(2, 2, 3, |r, c, px| px[(r * 2 + c) % 3] = 1.0).unwrap();
        assert_eq!(argmax_mask(&p).ids(), &[0, 1, 2, 0]);
        let tie = ProbMap::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(argmax_mask(&tie).get(0, 0), 0);
    }

    #[test]
    fn argmax_matches_naive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ProbMap::from_fn(4, 4, 3, |_, _, px| {
            let raw: Vec<f32> = (0..3).map(|_| rng.gen::<f32>()).collect();
            let s: f32 = raw.iter().sum();
            for k in 0..3 {
                px[k] = raw[k] / s;
            }
        })
        .unwrap();
        let m = argmax_mask(&p);
        for r in 0..4 {
            for c in 0..4 {
                let px = p.pixel(r, c);
                let mut best = 0;
                for k in 0..3 {
                    if px[k] > px[best] {
                        best = k;
                    }
                }
                assert_eq!(m.get(r, c) as usize, best);
            }
        }
    }

    #[test]
    fn uniform_mask_is_one_segment() {
        let m = SegMask::filled(5, 7, 3, 2).unwrap();
        let segs = connected_components(&m);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].size, 35);
        assert_eq!(segs[0].boundary_size, 2 * 5 + 2 * 7 - 4);
    }

    #[test]
    fn diagonal_pixels_connect() {
        let m = mask_from(&["10", "01"]);
        let segs = connected_components(&m);
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].class, 1);
        assert_eq!(segs[0].size, 2);
    }

    #[test]
    fn three_islands() {
        // Counted by hand: island A (class 1) 4 px, island B (class 1) 3 px,
        // island C (class 2) 5 px, background 24 px.
        let m = mask_from(&[
            "110000",
            "110000",
            "000100",
            "000110",
            "220000",
            "222000",
        ]);
        let segs = connected_components(&m);
        let sizes: Vec<(u16, usize)> = segs.iter().map(|s| (s.class, s.size)).collect();
        assert_eq!(sizes, vec![(1, 4), (0, 24), (1, 3), (2, 5)]);
        assert_eq!(segs.iter().filter(|s| s.class != 0).count(), 3);
    }

    #[test]
    fn ignored_pixels_form_no_segment() {
        let m = mask_from(&["..", ".1"]);
        let segs = connected_components(&m);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].size, 1);
    }

    #[test]
    fn contour_of_solid_square() {
        let m = mask_from(&["00000", "01110", "01110", "01110", "00000"]);
        let segs = connected_components(&m);
        let sq = segs.iter().find(|s| s.class == 1).unwrap();
        assert_eq!(sq.boundary_size, 8);
        let cs = trace_contours(sq, &m);
        assert_eq!(cs.paths.len(), 1);
        let outer = cs.outer();
        assert_eq!(outer.len(), 8);
        let set: HashSet<_> = outer.iter().copied().collect();
        assert_eq!(set.len(), 8);
        assert!(!set.contains(&(2, 2)));
    }

    #[test]
    fn contour_of_square_with_hole() {
        let m = mask_from(&[
            "0000000",
            "0111110",
            "0111110",
            "0110110",
            "0111110",
            "0111110",
            "0000000",
        ]);
        let segs = connected_components(&m);
        let sq = segs.iter().find(|s| s.class == 1).unwrap();
        let cs = trace_contours(sq, &m);
        assert_eq!(cs.paths.len(), 2);
        assert_eq!(cs.outer().len(), 16);
        let hole: HashSet<_> = cs.holes()[0].iter().copied().collect();
        // Diagonal neighbors of the hole are not 4-adjacent to it.
        let expected: HashSet<_> = [(2, 3), (3, 2), (3, 4), (4, 3)].into_iter().collect();
        assert_eq!(hole, expected);
    }

    #[test]
    fn contour_of_single_pixel() {
        let m = mask_from(&["000", "010", "000"]);
        let segs = connected_components(&m);
        let dot = segs.iter().find(|s| s.class == 1).unwrap();
        let cs = trace_contours(dot, &m);
        assert_eq!(cs.paths, vec![vec![(1, 1)]]);
    }

    #[test]
    fn iou_examples() {
        let gt = mask_from(&["1111", "1111", "1111", "1111"]);
        let whole = mask_from(&["1111", "1111", "1111", "1111"]);
        let seg = &connected_components(&whole)[0];
        assert_eq!(segment_iou(seg, &gt), 1.0);

        let half = mask_from(&["1100", "1100", "1100", "1100"]);
        let left = connected_components(&half)
            .into_iter()
            .find(|s| s.class == 1)
            .unwrap();
        assert_eq!(segment_iou(&left, &gt), 0.5);

        let gt0 = SegMask::filled(4, 4, 10, 0).unwrap();
        assert_eq!(segment_iou(seg, &gt0), 0.0);
    }

    #[test]
    fn iou_ignores_distant_gt_components() {
        let gt = mask_from(&["1100001", "1100001"]);
        let pred = mask_from(&["1100000", "1100000"]);
        let seg = connected_components(&pred)
            .into_iter()
            .find(|s| s.class == 1)
            .unwrap();
        assert_eq!(segment_iou(&seg, &gt), 1.0);
    }

    #[test]
    fn iou_excludes_unlabeled_ground_truth() {
        let gt = mask_from(&["11..", "11.."]);
        let pred = mask_from(&["1111", "1111"]);
        let seg = &connected_components(&pred)[0];
        assert_eq!(segment_iou(seg, &gt), 1.0);
    }

    #[test]
    fn miou_examples() {
        let gt = SegMask::new(2, 2, 2, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(mean_iou(&gt, &gt).unwrap(), 1.0);
        let inv = SegMask::new(2, 2, 2, vec![1, 1, 0, 0]).unwrap();
        assert_eq!(mean_iou(&inv, &gt).unwrap(), 0.0);
        // One wrong pixel: class 0 keeps 1 of 2 (IoU 1/2), class 1 gains a
        // false positive (IoU 2/3).
        let one_off = SegMask::new(2, 2, 2, vec![0, 1, 1, 1]).unwrap();
        let v = mean_iou(&one_off, &gt).unwrap();
        assert!((v - 7.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn miou_accumulates_over_images() {
        let gt_a = SegMask::new(1, 2, 2, vec![0, 0]).unwrap();
        let gt_b = SegMask::new(1, 2, 2, vec![1, 1]).unwrap();
        let pred_b = SegMask::new(1, 2, 2, vec![1, 0]).unwrap();
        let mut acc = IouAccumulator::new(2);
        acc.add(&gt_a, &gt_a).unwrap();
        acc.add(&pred_b, &gt_b).unwrap();
        // class 0: tp 2, fp 1 -> 2/3; class 1: tp 1, fn 1 -> 1/2
        assert!((acc.mean_iou() - (2.0 / 3.0 + 0.5) / 2.0).abs() < 1e-12);
    }

    fn random_mask(seed: u64, h: usize, w: usize, classes: u16) -> SegMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids = (0..h * w).map(|_| rng.gen_range(0..classes)).collect();
        SegMask::new(h, w, classes as usize, ids).unwrap()
    }

    fn boundary_pixels(seg: &Segment, m: &SegMask) -> HashSet<(usize, usize)> {
        let members: HashSet<_> = seg.pixels().collect();
        members
            .iter()
            .copied()
            .filter(|&(r, c)| {
                NEIGHBORS_4.iter().any(|&(dr, dc)| {
                    m.offset(r, c, dr, dc).map_or(true, |p| !members.contains(&p))
                })
            })
            .collect()
    }

    #[test]
    fn diagonal_return_to_start_terminates() {
        // the trace re-enters the start pixel diagonally, which Jacob's
        // criterion alone never accepts
        let v = [[35.646950319241085, 52.088385112584376], [128.61914520989768, 97.95721768373839], [115.27512896297486, 119.53742825946443]];
        let mut ids = vec![0u16; 160 * 160];
        for (r, c) in crate::synth::rasterize(&v, 160, 160) {
            ids[r * 160 + c] = 1;
        }
        let m = SegMask::new(160, 160, 2, ids).unwrap();
        let seg = connected_components(&m).into_iter().filter(|s| s.class == 1).max_by_key(|s| s.size).unwrap();
        let outer = trace_contours(&seg, &m).outer().to_vec();
        assert!(outer.len() <= seg.boundary_size + 2, "{} points for {} boundary pixels", outer.len(), seg.boundary_size);
    }

    proptest! {
        #[test]
        fn segments_partition_and_reconstruct(seed in any::<u64>(), h in 1usize..12, w in 1usize..12, k in 1u16..4) {
            let m = random_mask(seed, h, w, k);
            let segs = connected_components(&m);
            prop_assert_eq!(segs.iter().map(|s| s.size).sum::<usize>(), h * w);
            let mut rebuilt = SegMask::filled(h, w, m.classes(), IGNORE).unwrap();
            for s in &segs {
                prop_assert!(s.boundary_size >= 1 && s.boundary_size <= s.size);
                for (r, c) in s.pixels() {
                    prop_assert_eq!(rebuilt.get(r, c), IGNORE);
                    rebuilt.set(r, c, s.class);
                }
            }
            prop_assert_eq!(rebuilt, m);
        }

        #[test]
        fn contours_cover_exactly_the_boundary(seed in any::<u64>(), h in 1usize..14, w in 1usize..14, k in 2u16..4) {
            let m = random_mask(seed, h, w, k);
            for s in connected_components(&m) {
                let cs = trace_contours(&s, &m);
                let bd = boundary_pixels(&s, &m);
                let mut on_paths = HashSet::new();
                for path in &cs.paths {
                    prop_assert!(!path.is_empty());
                    let mut steps = HashSet::new();
                    for w2 in path.windows(2) {
                        let (a, b) = (w2[0], w2[1]);
                        prop_assert!(a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1);
                        prop_assert!(steps.insert((a, b)), "step {:?} -> {:?} repeats", a, b);
                    }
                    for &p in path {
                        prop_assert!(bd.contains(&p), "path pixel {:?} not on boundary", p);
                        on_paths.insert(p);
                    }
                }
                prop_assert_eq!(on_paths.len(), bd.len());
                prop_assert_eq!(bd.len(), s.boundary_size);
            }
        }

        #[test]
        fn miou_is_class_permutation_invariant(seed in any::<u64>(), shift in 1u16..3) {
            let gt = random_mask(seed, 6, 6, 3);
            let pred = random_mask(seed ^ 0xabc, 6, 6, 3);
            let perm = |m: &SegMask| SegMask::new(6, 6, 3, m.ids().iter().map(|&v| (v + shift) % 3).collect()).unwrap();
            let a = mean_iou(&pred, &gt).unwrap();
            let b = mean_iou(&perm(&pred), &perm(&gt)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
