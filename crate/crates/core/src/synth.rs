//! Synthetic scenes with exact polygon ground truth.
//!
//! Each scene is a background with convex shapes of random foreground
//! classes. Shapes are placed without touching each other, so every visible
//! region is one convex polygon and the emitted polygons are exactly what an
//! annotator would click. Pixel colors are a per-class base color, shifted
//! per instance and perturbed per pixel with Gaussian noise.

use std::f64::consts::TAU;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::clickcost::Polygon;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::formats::{create_file, open_file, write_mask_pgm, write_polygons, write_ppm, RgbImage};
use crate::segmentation::SegMask;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Number of classes including background (class 0).
    pub classes: usize,
    /// Inclusive range of shapes per image.
    pub shapes: (usize, usize),
    /// Inclusive range of vertices per shape before clipping.
    pub vertices: (usize, usize),
    /// Per-pixel color noise std, as a fraction of the 8-bit range.
    pub color_noise: f64,
    /// Per-instance color shift std, as a fraction of the 8-bit range.
    pub instance_jitter: f64,
    /// Distinct base colors per class. Each instance draws one.
    pub color_variants: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            classes: 5,
            shapes: (3, 8),
            vertices: (3, 10),
            color_noise: 0.08,
            instance_jitter: 0.03,
            color_variants: 3,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("synthetic scenes need at least 2 classes"));
        }
        if self.classes > 255 {
            return Err(Error::invalid("synthetic scenes support at most 255 classes"));
        }
        if self.vertices.0 < 3 || self.vertices.1 < self.vertices.0 {
            return Err(Error::invalid("vertex range must satisfy 3 <= min <= max"));
        }
        if self.shapes.1 < self.shapes.0 {
            return Err(Error::invalid("shape range must satisfy min <= max"));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::invalid("scenes must be at least 8x8"));
        }
        if self.color_variants == 0 {
            return Err(Error::invalid("color_variants must be positive"));
        }
        if !(self.color_noise >= 0.0 && self.instance_jitter >= 0.0) {
            return Err(Error::invalid("noise levels must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub image: RgbImage,
    pub mask: SegMask,
    /// Background border polygon first, then one polygon per shape.
    pub polygons: Vec<Polygon>,
}

/// Base color of variant `variant` of a class in `[0, 1]³`.
///
/// Background variants are grays from 0.3 to 0.6. Foreground variants are
/// interleaved around the color wheel, so neighbouring hues belong to
/// different classes, and alternate between two brightness levels.
pub fn class_color(class: usize, classes: usize, variant: usize, variants: usize) -> [f64; 3] {
    if class == 0 {
        let g = if variants > 1 { 0.3 + 0.3 * variant as f64 / (variants - 1) as f64 } else { 0.45 };
        return [g; 3];
    }
    let hues = (classes - 1) * variants;
    let index = variant * (classes - 1) + (class - 1);
    let h = index as f64 / hues as f64 * 6.0;
    let (s, v) = (0.75, if variant % 2 == 0 { 0.9 } else { 0.65 });
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(x: f64, y: f64, vertices: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = vertices.len();
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let [xi, yi] = vertices[i];
        let [xj, yj] = vertices[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Pixels whose centers lie inside the polygon.
pub fn rasterize(vertices: &[[f64; 2]], height: usize, width: usize) -> Vec<(usize, usize)> {
    if vertices.len() < 3 {
        return Vec::new();
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &[x, y] in vertices {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let r0 = (y0 - 0.5).floor().max(0.0) as usize;
    let c0 = (x0 - 0.5).floor().max(0.0) as usize;
    let r1 = ((y1 - 0.5).ceil().max(0.0) as usize).min(height.saturating_sub(1));
    let c1 = ((x1 - 0.5).ceil().max(0.0) as usize).min(width.saturating_sub(1));
    let mut out = Vec::new();
    for r in r0..=r1 {
        for c in c0..=c1 {
            if point_in_polygon(c as f64 + 0.5, r as f64 + 0.5, vertices) {
                out.push((r, c));
            }
        }
    }
    out
}

/// Sutherland–Hodgman clip against `[0, width] × [0, height]`.
pub fn clip_to_rect(vertices: &[[f64; 2]], width: f64, height: f64) -> Vec<[f64; 2]> {
    let edges: [(usize, f64, bool); 4] = [(0, 0.0, true), (0, width, false), (1, 0.0, true), (1, height, false)];
    let mut poly = vertices.to_vec();
    for (axis, bound, keep_above) in edges {
        if poly.is_empty() {
            break;
        }
        let inside = |p: &[f64; 2]| if keep_above { p[axis] >= bound } else { p[axis] <= bound };
        let mut out = Vec::with_capacity(poly.len() + 2);
        for i in 0..poly.len() {
            let cur = poly[i];
            let prev = poly[(i + poly.len() - 1) % poly.len()];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci != pi {
                let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                let mut q = [prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])];
                q[axis] = bound;
                out.push(q);
            }
            if ci {
                out.push(cur);
            }
        }
        poly = out;
    }
    poly
}

/// Drops repeated and nearly collinear vertices until none is left.
fn simplify(mut v: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    loop {
        let n = v.len();
        if n < 3 {
            return v;
        }
        let bad = (0..n).find(|&i| {
            let a = v[(i + n - 1) % n];
            let b = v[i];
            let c = v[(i + 1) % n];
            let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
            let short = (b[0] - a[0]).hypot(b[1] - a[1]) < 1.0;
            short || cross.abs() < 1.0
        });
        match bad {
            Some(i) => {
                v.remove(i);
            }
            None => return v,
        }
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Random convex polygon with `k` vertices on a rotated ellipse.
fn random_convex(rng: &mut ChaCha8Rng, k: usize, spec: &SceneSpec) -> Vec<[f64; 2]> {
    let (h, w) = (spec.height as f64, spec.width as f64);
    let scale = h.min(w);
    let cx = rng.gen_range(0.0..w);
    let cy = rng.gen_range(0.0..h);
    let rx = rng.gen_range(0.08..0.22) * scale;
    let ry = rx * rng.gen_range(0.6..1.4);
    let rot = rng.gen_range(0.0..TAU);
    let offset = rng.gen_range(0.0..TAU);
    let sector = TAU / k as f64;
    (0..k)
        .map(|i| {
            let a = offset + sector * (i as f64 + rng.gen_range(0.2..0.8));
            let (ex, ey) = (rx * a.cos(), ry * a.sin());
            [
                cx + ex * rot.cos() - ey * rot.sin(),
                cy + ex * rot.sin() + ey * rot.cos(),
            ]
        })
        .collect()
}

/// Generates scene `index` of `spec` with id `id`.
pub fn generate_scene_with_id(spec: &SceneSpec, index: u64, id: &str) -> Result<Scene> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[index]));
    let mut ids = vec![0u16; h * w];
    // Occupancy dilated by one pixel keeps shapes from touching.
    let mut blocked = vec![false; h * w];
    let mut polygons = vec![Polygon {
        image_id: id.to_string(),
        class: 0,
        vertices: vec![[0.0, 0.0], [w as f64, 0.0], [w as f64, h as f64], [0.0, h as f64]],
    }];
    let mut instances: Vec<(u16, Vec<(usize, usize)>)> = Vec::new();
    let n_shapes = rng.gen_range(spec.shapes.0..=spec.shapes.1);
    // Rarer classes get smaller weights.
    let weights: Vec<f64> = (1..spec.classes).map(|k| 1.0 / (k as f64).sqrt()).collect();
    let class_dist = rand::distributions::WeightedIndex::new(&weights)
        .map_err(|e| Error::invalid(e.to_string()))?;
    for _ in 0..n_shapes {
        let class = (class_dist.sample(&mut rng) + 1) as u16;
        for _attempt in 0..30 {
            let k = rng.gen_range(spec.vertices.0..=spec.vertices.1);
            let raw = random_convex(&mut rng, k, spec);
            let clipped = clip_to_rect(&raw, w as f64, h as f64);
            let vertices = simplify(
                simplify(clipped)
                    .into_iter()
                    .map(|[x, y]| [round2(x), round2(y)])
                    .collect(),
            );
            if vertices.len() < 3 {
                continue;
            }
            let pixels = rasterize(&vertices, h, w);
            if pixels.len() < 40 || pixels.iter().any(|&(r, c)| blocked[r * w + c]) {
                continue;
            }
            for &(r, c) in &pixels {
                ids[r * w + c] = class;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                            blocked[rr as usize * w + cc as usize] = true;
                        }
                    }
                }
            }
            polygons.push(Polygon {
                image_id: id.to_string(),
                class,
                vertices,
            });
            instances.push((class, pixels));
            break;
        }
    }

    let noise = Normal::new(0.0, spec.color_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let jitter = Normal::new(0.0, spec.instance_jitter.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut base = vec![[0.0f64; 3]; h * w];
    let variants = spec.color_variants;
    let bg = class_color(0, spec.classes, rng.gen_range(0..variants), variants);
    let bg_shift: [f64; 3] = std::array::from_fn(|_| jitter.sample(&mut rng));
    for px in base.iter_mut() {
        *px = std::array::from_fn(|i| bg[i] + bg_shift[i]);
    }
    for (class, pixels) in &instances {
        let color = class_color(*class as usize, spec.classes, rng.gen_range(0..variants), variants);
        let shift: [f64; 3] = std::array::from_fn(|_| jitter.sample(&mut rng));
        for &(r, c) in pixels {
            base[r * w + c] = std::array::from_fn(|i| color[i] + shift[i]);
        }
    }
    let mut image = RgbImage::new(h, w);
    for r in 0..h {
        for c in 0..w {
            let px = base[r * w + c];
            let rgb: [u8; 3] = std::array::from_fn(|i| {
                ((px[i] + noise.sample(&mut rng)).clamp(0.0, 1.0) * 255.0).round() as u8
            });
            image.set(r, c, rgb);
        }
    }
    Ok(Scene {
        id: id.to_string(),
        image,
        mask: SegMask::new(h, w, spec.classes, ids)?,
        polygons,
    })
}

pub fn generate_scene(spec: &SceneSpec, index: u64) -> Result<Scene> {
    generate_scene_with_id(spec, index, &format!("img_{index:04}"))
}

/// Dataset-level totals recorded next to the splits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetInfo {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub n_pool: usize,
    pub n_val: usize,
    /// Polygon clicks of the whole pool.
    pub pool_cp: u64,
    /// Class clicks of the whole pool.
    pub pool_cc: u64,
}

impl DatasetInfo {
    pub const FILE: &'static str = "dataset.txt";

    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "classes={}", self.classes)?;
        writeln!(sink, "height={}", self.height)?;
        writeln!(sink, "width={}", self.width)?;
        writeln!(sink, "n_pool={}", self.n_pool)?;
        writeln!(sink, "n_val={}", self.n_val)?;
        writeln!(sink, "pool_cp={}", self.pool_cp)?;
        writeln!(sink, "pool_cc={}", self.pool_cc)?;
        Ok(())
    }

    pub fn read<R: BufRead>(source: R) -> Result<Self> {
        let mut info = DatasetInfo {
            classes: 0,
            height: 0,
            width: 0,
            n_pool: 0,
            n_val: 0,
            pool_cp: 0,
            pool_cc: 0,
        };
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Schema {
                line: i + 1,
                message: "expected key=value".into(),
            })?;
            let n: u64 = v.trim().parse().map_err(|_| Error::Schema {
                line: i + 1,
                message: format!("value of '{}' is not an integer", k.trim()),
            })?;
            match k.trim() {
                "classes" => info.classes = n as usize,
                "height" => info.height = n as usize,
                "width" => info.width = n as usize,
                "n_pool" => info.n_pool = n as usize,
                "n_val" => info.n_val = n as usize,
                "pool_cp" => info.pool_cp = n,
                "pool_cc" => info.pool_cc = n,
                other => {
                    return Err(Error::Schema {
                        line: i + 1,
                        message: format!("unknown key '{other}'"),
                    })
                }
            }
        }
        Ok(info)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::read(open_file(&dir.join(Self::FILE))?)
    }
}

/// Paths of one split directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitLayout {
    pub dir: PathBuf,
}

impl SplitLayout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.txt")
    }

    pub fn polygons(&self) -> PathBuf {
        self.dir.join("polygons.jsonl")
    }

    pub fn image(&self, id: &str) -> PathBuf {
        self.dir.join("images").join(format!("{id}.ppm"))
    }

    pub fn mask(&self, id: &str) -> PathBuf {
        self.dir.join("masks").join(format!("{id}.pgm"))
    }

    /// Image ids listed in the manifest, in file order.
    pub fn read_ids(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for line in open_file(&self.manifest())?.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let stem = Path::new(line)
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Format(format!("bad manifest entry '{line}'")))?;
            ids.push(stem.to_string());
        }
        Ok(ids)
    }
}

fn write_split(layout: &SplitLayout, scenes: &[Scene]) -> Result<()> {
    scenes.par_iter().try_for_each(|s| -> Result<()> {
        write_ppm(&s.image, create_file(&layout.image(&s.id))?)?;
        write_mask_pgm(&s.mask, create_file(&layout.mask(&s.id))?)?;
        Ok(())
    })?;
    let all: Vec<Polygon> = scenes.iter().flat_map(|s| s.polygons.iter().cloned()).collect();
    let mut f = create_file(&layout.polygons())?;
    write_polygons(&all, &mut f)?;
    f.flush()?;
    let mut m = create_file(&layout.manifest())?;
    for s in scenes {
        writeln!(m, "images/{}.ppm", s.id)?;
    }
    m.flush()?;
    Ok(())
}

fn generate_split(spec: &SceneSpec, prefix: &str, n: usize) -> Result<Vec<Scene>> {
    (0..n)
        .into_par_iter()
        .map(|i| generate_scene_with_id(spec, i as u64, &format!("{prefix}_{i:04}")))
        .collect()
}

/// Generates and writes `out/pool`, `out/val` and `out/dataset.txt`.
///
/// The pool is regenerated with a fresh derived seed until every
/// foreground class occurs in it.
pub fn generate_dataset(spec: &SceneSpec, n_pool: usize, n_val: usize, out: &Path) -> Result<DatasetInfo> {
    spec.validate()?;
    if n_pool == 0 || n_val == 0 {
        return Err(Error::invalid("pool and validation sizes must be at least 1"));
    }
    let mut pool = None;
    for attempt in 0..64u64 {
        let pool_spec = SceneSpec {
            seed: derive_seed(spec.seed, &[0, attempt]),
            ..spec.clone()
        };
        let scenes = generate_split(&pool_spec, "pool", n_pool)?;
        let mut seen = vec![false; spec.classes];
        for s in &scenes {
            for p in &s.polygons {
                seen[p.class as usize] = true;
            }
        }
        if seen.iter().all(|&s| s) {
            pool = Some(scenes);
            break;
        }
    }
    let pool = pool.ok_or_else(|| {
        Error::invalid(format!(
            "could not cover all {} classes with {n_pool} pool images",
            spec.classes
        ))
    })?;
    let val_spec = SceneSpec {
        seed: derive_seed(spec.seed, &[1]),
        ..spec.clone()
    };
    let val = generate_split(&val_spec, "val", n_val)?;

    write_split(&SplitLayout::new(out.join("pool")), &pool)?;
    write_split(&SplitLayout::new(out.join("val")), &val)?;
    let info = DatasetInfo {
        classes: spec.classes,
        height: spec.height,
        width: spec.width,
        n_pool,
        n_val,
        pool_cp: pool
            .iter()
            .flat_map(|s| &s.polygons)
            .map(|p| p.vertices.len() as u64)
            .sum(),
        pool_cc: pool.iter().map(|s| s.polygons.len() as u64).sum(),
    };
    let mut f = create_file(&out.join(DatasetInfo::FILE))?;
    info.write(&mut f)?;
    f.flush()?;
    Ok(info)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneSpec {
        SceneSpec {
            height: 64,
            width: 64,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_shapes_gives_background_only() {
        let spec = SceneSpec {
            shapes: (0, 0),
            ..small()
        };
        let s = generate_scene(&spec, 0).unwrap();
        assert!(s.mask.ids().iter().all(|&v| v == 0));
        assert_eq!(s.polygons.len(), 1);
        assert_eq!(s.polygons[0].class, 0);
        assert_eq!(s.polygons[0].vertices.len(), 4);
    }

    #[test]
    fn scenes_are_deterministic() {
        let a = generate_scene(&small(), 5).unwrap();
        let b = generate_scene(&small(), 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_scene(&small(), 6).unwrap());
    }

    #[test]
    fn rectangle_rasterization_matches_oracle() {
        let rect = [[10.0, 5.0], [30.0, 5.0], [30.0, 20.0], [10.0, 20.0]];
        let px = rasterize(&rect, 64, 64);
        assert_eq!(px.len(), 20 * 15);
        assert!(px.iter().all(|&(r, c)| (5..20).contains(&r) && (10..30).contains(&c)));
    }

    #[test]
    fn clipping_keeps_inside_part() {
        let tri = [[-10.0, 10.0], [20.0, 10.0], [20.0, 40.0]];
        let c = clip_to_rect(&tri, 32.0, 32.0);
        assert!(c.iter().all(|&[x, y]| (0.0..=32.0).contains(&x) && (0.0..=32.0).contains(&y)));
        // Cut by the left and bottom edges: (0,10) (20,10) (20,32) (12,32) (0,20).
        assert_eq!(simplify(c).len(), 5);
    }

    #[test]
    fn mask_agrees_with_polygons() {
        for idx in 0..10 {
            let s = generate_scene(&small(), idx).unwrap();
            for p in &s.polygons[1..] {
                let px = rasterize(&p.vertices, 64, 64);
                assert!(!px.is_empty());
                assert!(px.iter().all(|&(r, c)| s.mask.get(r, c) == p.class));
            }
            let covered: usize = s.polygons[1..]
                .iter()
                .map(|p| rasterize(&p.vertices, 64, 64).len())
                .sum();
            let fg = s.mask.ids().iter().filter(|&&v| v != 0).count();
            assert_eq!(covered, fg);
        }
    }

    #[test]
    fn dataset_totals_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small();
        let info = generate_dataset(&spec, 10, 3, dir.path()).unwrap();
        let pool = SplitLayout::new(dir.path().join("pool"));
        let ids = pool.read_ids().unwrap();
        assert_eq!(ids.len(), 10);
        for id in &ids {
            assert!(pool.image(id).exists() && pool.mask(id).exists());
        }
        let polys = crate::formats::read_polygons(open_file(&pool.polygons()).unwrap()).unwrap();
        let cp: u64 = polys.iter().map(|p| p.vertices.len() as u64).sum();
        assert_eq!(info.pool_cp, cp);
        assert_eq!(info.pool_cc, polys.len() as u64);
        assert_eq!(DatasetInfo::load(dir.path()).unwrap(), info);
        let mut classes: Vec<u16> = polys.iter().map(|p| p.class).collect();
        classes.sort();
        classes.dedup();
        assert_eq!(classes, (0..spec.classes as u16).collect::<Vec<_>>());
        let val = SplitLayout::new(dir.path().join("val")).read_ids().unwrap();
        assert!(val.iter().all(|v| !ids.contains(v)));
    }

    #[test]
    fn invalid_specs() {
        assert!(SceneSpec { classes: 1, ..small() }.validate().is_err());
        assert!(SceneSpec { vertices: (2, 5), ..small() }.validate().is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_dataset(&small(), 0, 1, dir.path()).is_err());
    }
}
