//! Binary and text codecs: PMAP probability maps, PGM/PPM images, polygon
//! and query JSON-lines, and the results CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::clickcost::Polygon;
use crate::error::{Error, Result};
use crate::gridmaps::{BitMask, ProbMap, ScalarMap, PROB_SUM_TOLERANCE};
use crate::segmentation::{SegMask, IGNORE};

pub const PMAP_MAGIC: &[u8; 4] = b"PMAP";
pub const PMAP_VERSION: u32 = 1;

/// Header of a PMAP file: magic, then version, height, width and classes as
/// little-endian `u32`, followed by `height * width * classes` little-endian
/// `f32` values in `(row, col, class)` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PmapHeader {
    pub version: u32,
    pub height: u32,
    pub width: u32,
    pub classes: u32,
}

impl PmapHeader {
    pub const LEN: usize = 20;

    pub fn payload_len(&self) -> usize {
        self.height as usize * self.width as usize * self.classes as usize * 4
    }
}

pub fn write_pmap<W: Write>(p: &ProbMap, mut sink: W) -> Result<()> {
    let mut buf = Vec::with_capacity(PmapHeader::LEN + p.values().len() * 4);
    buf.extend_from_slice(PMAP_MAGIC);
    for v in [PMAP_VERSION, p.height() as u32, p.width() as u32, p.classes() as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in p.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&buf)?;
    Ok(())
}

fn read_pmap_raw<R: Read>(mut source: R) -> Result<(PmapHeader, Vec<f32>)> {
    let mut head = [0u8; PmapHeader::LEN];
    read_full(&mut source, &mut head)?;
    if &head[..4] != PMAP_MAGIC {
        return Err(Error::Format(format!("bad PMAP magic {:?}", &head[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(head[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let header = PmapHeader {
        version: word(0),
        height: word(1),
        width: word(2),
        classes: word(3),
    };
    if header.version != PMAP_VERSION {
        return Err(Error::Unsupported(format!("PMAP version {}", header.version)));
    }
    let expected = header.payload_len();
    let mut payload = Vec::with_capacity(expected);
    source.take(expected as u64).read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

/// Reads a PMAP, rejecting pixels whose class vector does not sum to 1.
pub fn read_pmap<R: Read>(source: R) -> Result<ProbMap> {
    let (h, values) = read_pmap_raw(source)?;
    ProbMap::new(h.height as usize, h.width as usize, h.classes as usize, values)
}

/// Reads a PMAP, renormalizing pixels that do not sum to 1. Returns the map
/// and the number of pixels that had to be fixed.
pub fn read_pmap_lenient<R: Read>(source: R) -> Result<(ProbMap, usize)> {
    let (h, mut values) = read_pmap_raw(source)?;
    let c = h.classes as usize;
    let mut fixed = 0;
    if c > 0 {
        for px in values.chunks_exact_mut(c) {
            for v in px.iter_mut() {
                if !v.is_finite() || *v < 0.0 {
                    *v = 0.0;
                }
            }
            let sum: f32 = px.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                fixed += 1;
                if sum > 0.0 {
                    px.iter_mut().for_each(|v| *v /= sum);
                } else {
                    px.iter_mut().for_each(|v| *v = 1.0 / c as f32);
                }
            }
        }
    }
    let map = ProbMap::new(h.height as usize, h.width as usize, c, values)?;
    Ok((map, fixed))
}

fn read_full<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<()> {
    let mut got = 0;
    while got < buf.len() {
        match source.read(&mut buf[got..])? {
            0 => {
                return Err(Error::Truncated {
                    expected: buf.len(),
                    actual: got,
                })
            }
            n => got += n,
        }
    }
    Ok(())
}

/// Binary netpbm image (P5 gray or P6 color) with raw samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Netpbm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl Netpbm {
    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            n => return Err(Error::Unsupported(format!("{n}-channel netpbm"))),
        };
        let mut buf = format!("{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval)
            .into_bytes();
        if self.maxval > 255 {
            for s in &self.samples {
                buf.extend_from_slice(&s.to_be_bytes());
            }
        } else {
            buf.extend(self.samples.iter().map(|&s| s as u8));
        }
        sink.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(source: R) -> Result<Self> {
        let mut r = BufReader::new(source);
        let mut magic = [0u8; 2];
        read_full(&mut r, &mut magic)?;
        let channels = match &magic {
            b"P5" => 1,
            b"P6" => 3,
            b"P2" | b"P3" => {
                return Err(Error::Unsupported(format!(
                    "ASCII netpbm {}",
                    String::from_utf8_lossy(&magic)
                )))
            }
            _ => {
                return Err(Error::Format(format!(
                    "not a binary netpbm file: {:?}",
                    String::from_utf8_lossy(&magic)
                )))
            }
        };
        let width = header_number(&mut r)?;
        let height = header_number(&mut r)?;
        let maxval = header_number(&mut r)?;
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Format(format!("invalid maxval {maxval}")));
        }
        let count = width * height * channels;
        let bytes_per = if maxval > 255 { 2 } else { 1 };
        let mut raw = vec![0u8; count * bytes_per];
        read_full(&mut r, &mut raw)?;
        let samples = if bytes_per == 2 {
            raw.chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]))
                .collect()
        } else {
            raw.into_iter().map(u16::from).collect()
        };
        Ok(Self {
            width,
            height,
            channels,
            maxval: maxval as u16,
            samples,
        })
    }
}

/// Reads one whitespace-delimited header integer, skipping `#` comments, and
/// consumes the single whitespace byte after it.
fn header_number<R: BufRead>(r: &mut R) -> Result<usize> {
    let mut digits = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::Format("unexpected end of netpbm header".into()));
        }
        let b = byte[0];
        if b == b'#' && digits.is_empty() {
            let mut line = Vec::new();
            r.read_until(b'\n', &mut line)?;
        } else if b.is_ascii_whitespace() {
            if !digits.is_empty() {
                break;
            }
        } else if b.is_ascii_digit() {
            digits.push(b as char);
        } else {
            return Err(Error::Format(format!("unexpected byte {b:#x} in netpbm header")));
        }
    }
    digits
        .parse()
        .map_err(|_| Error::Format(format!("bad header number {digits:?}")))
}

/// 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

pub fn write_ppm<W: Write>(img: &RgbImage, sink: W) -> Result<()> {
    Netpbm {
        width: img.width,
        height: img.height,
        channels: 3,
        maxval: 255,
        samples: img.data.iter().map(|&v| v as u16).collect(),
    }
    .write(sink)
}

pub fn read_ppm<R: Read>(source: R) -> Result<RgbImage> {
    let n = Netpbm::read(source)?;
    if n.channels != 3 {
        return Err(Error::Format("expected a P6 image".into()));
    }
    if n.maxval != 255 {
        return Err(Error::Format(format!("expected maxval 255, got {}", n.maxval)));
    }
    Ok(RgbImage {
        height: n.height,
        width: n.width,
        data: n.samples.into_iter().map(|s| s as u8).collect(),
    })
}

/// Maxval used for a mask with `classes` classes; it doubles as the ignore id.
pub fn mask_maxval(classes: usize) -> u16 {
    if classes > 255 {
        u16::MAX
    } else {
        255
    }
}

/// Writes a mask as P5; 16-bit big-endian when `classes > 255`. Ignored
/// pixels are stored as maxval.
pub fn write_mask_pgm<W: Write>(mask: &SegMask, sink: W) -> Result<()> {
    let maxval = mask_maxval(mask.classes());
    Netpbm {
        width: mask.width(),
        height: mask.height(),
        channels: 1,
        maxval,
        samples: mask
            .ids()
            .iter()
            .map(|&id| if id == IGNORE { maxval } else { id })
            .collect(),
    }
    .write(sink)
}

pub fn read_mask_pgm<R: Read>(source: R, classes: usize) -> Result<SegMask> {
    let n = Netpbm::read(source)?;
    if n.channels != 1 {
        return Err(Error::Format("expected a P5 mask".into()));
    }
    let maxval = mask_maxval(classes);
    if n.maxval != maxval {
        return Err(Error::Format(format!(
            "mask maxval {} does not match {maxval} for {classes} classes",
            n.maxval
        )));
    }
    let ids = n
        .samples
        .into_iter()
        .map(|s| if s == maxval { IGNORE } else { s })
        .collect();
    SegMask::new(n.height, n.width, classes, ids)
}

/// Writes a boolean mask as 8-bit P5 with 0 / 255.
pub fn write_bitmask_pgm<W: Write>(mask: &BitMask, sink: W) -> Result<()> {
    Netpbm {
        width: mask.width(),
        height: mask.height(),
        channels: 1,
        maxval: 255,
        samples: mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect(),
    }
    .write(sink)
}

pub fn read_bitmask_pgm<R: Read>(source: R) -> Result<BitMask> {
    let n = Netpbm::read(source)?;
    if n.channels != 1 {
        return Err(Error::Format("expected a P5 bit mask".into()));
    }
    BitMask::from_bits(n.height, n.width, n.samples.iter().map(|&s| s > 0).collect())
}

/// Min-max scaled 8-bit rendering of a scalar map; constant maps render black.
pub fn write_heatmap_pgm<W: Write>(map: &ScalarMap, sink: W) -> Result<()> {
    let (lo, hi) = map
        .values()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let samples = map
        .values()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u16
            } else {
                0
            }
        })
        .collect();
    Netpbm {
        width: map.width(),
        height: map.height(),
        channels: 1,
        maxval: 255,
        samples,
    }
    .write(sink)
}

/// Rounds to six significant digits; the shortest decimal form of the result
/// is what the text codecs emit.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Six-significant-digit decimal text without locale or exponent.
pub fn fmt_sig6(x: f64) -> String {
    let r = round_sig6(x);
    if r.is_nan() {
        return "nan".into();
    }
    if r.is_infinite() {
        return if r > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{r}")
}

fn json_number(x: f64) -> Value {
    let r = round_sig6(x);
    if r.fract() == 0.0 && r.abs() < 1e15 {
        json!(r as i64)
    } else {
        json!(r)
    }
}

pub fn polygon_to_json(p: &Polygon) -> String {
    let vertices: Vec<Value> = p
        .vertices
        .iter()
        .map(|&[x, y]| Value::Array(vec![json_number(x), json_number(y)]))
        .collect();
    json!({"image_id": p.image_id, "class": p.class, "vertices": vertices}).to_string()
}

pub fn write_polygons<W: Write>(polygons: &[Polygon], sink: W) -> Result<()> {
    let mut w = BufWriter::new(sink);
    for p in polygons {
        writeln!(w, "{}", polygon_to_json(p))?;
    }
    w.flush()?;
    Ok(())
}

/// Parses polygon JSON-lines; errors name the 1-based line. Blank lines are
/// skipped.
pub fn read_polygons<R: Read>(source: R) -> Result<Vec<Polygon>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(source).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_polygon(&line).map_err(|message| Error::Schema {
            line: line_no,
            message,
        })?);
    }
    Ok(out)
}

fn parse_polygon(line: &str) -> std::result::Result<Polygon, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = v.as_object().ok_or("record is not an object")?;
    let image_id = obj
        .get("image_id")
        .ok_or("missing \"image_id\"")?
        .as_str()
        .ok_or("\"image_id\" is not a string")?
        .to_owned();
    let class = obj
        .get("class")
        .ok_or("missing \"class\"")?
        .as_u64()
        .filter(|&c| c < IGNORE as u64)
        .ok_or("\"class\" is not a valid class id")? as u16;
    let verts = obj
        .get("vertices")
        .ok_or("missing \"vertices\"")?
        .as_array()
        .ok_or("\"vertices\" is not an array")?;
    let mut vertices = Vec::with_capacity(verts.len());
    for (k, pt) in verts.iter().enumerate() {
        let xy = pt
            .as_array()
            .filter(|a| a.len() == 2)
            .and_then(|a| Some([a[0].as_f64()?, a[1].as_f64()?]))
            .ok_or_else(|| format!("vertex {k} is not an [x, y] pair"))?;
        vertices.push(xy);
    }
    if vertices.len() < 3 {
        return Err(format!("polygon needs at least 3 vertices, got {}", vertices.len()));
    }
    Ok(Polygon {
        image_id,
        class,
        vertices,
    })
}

/// One selected box as exported for annotation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub image_id: String,
    pub row: usize,
    pub col: usize,
    pub b: usize,
    pub score: f64,
    pub strategy: String,
    pub iteration: usize,
}

pub fn query_to_json(q: &QueryRecord) -> String {
    json!({
        "image_id": q.image_id,
        "row": q.row,
        "col": q.col,
        "b": q.b,
        "score": json_number(q.score),
        "strategy": q.strategy,
        "iteration": q.iteration,
    })
    .to_string()
}

pub fn write_queries<W: Write>(queries: &[QueryRecord], sink: W) -> Result<()> {
    let mut w = BufWriter::new(sink);
    for q in queries {
        writeln!(w, "{}", query_to_json(q))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_queries<R: Read>(source: R) -> Result<Vec<QueryRecord>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub const RESULTS_HEADER: &str = "iteration,run,strategy,cost_a,cost_b,cost_p,miou,c_p,c_i,c_b,c_c";

/// One line of the results CSV. `run` is a repetition index, or `mean` for
/// averaged rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub iteration: usize,
    pub run: String,
    pub strategy: String,
    pub cost_a: f64,
    pub cost_b: f64,
    pub cost_p: f64,
    pub miou: f64,
    pub c_p: f64,
    pub c_i: f64,
    pub c_b: f64,
    pub c_c: f64,
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.run,
            self.strategy,
            fmt_sig6(self.cost_a),
            fmt_sig6(self.cost_b),
            fmt_sig6(self.cost_p),
            fmt_sig6(self.miou),
            fmt_sig6(self.c_p),
            fmt_sig6(self.c_i),
            fmt_sig6(self.c_b),
            fmt_sig6(self.c_c),
        )
    }
}

pub fn write_results<W: Write>(rows: &[ResultRow], sink: W) -> Result<()> {
    let mut w = BufWriter::new(sink);
    writeln!(w, "{RESULTS_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.to_csv())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(source: R) -> Result<Vec<ResultRow>> {
    let mut lines = BufReader::new(source).lines();
    let header = lines.next().transpose()?;
    match header {
        Some(h) if h.trim_end() == RESULTS_HEADER => {}
        _ => {
            return Err(Error::Schema {
                line: 1,
                message: format!("expected header {RESULTS_HEADER:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| Error::Schema {
            line: line_no,
            message,
        };
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 11 {
            return Err(schema(format!("expected 11 fields, got {}", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| schema(format!("field {} is not a number: {:?}", i + 1, f[i])))
        };
        rows.push(ResultRow {
            iteration: f[0]
                .parse()
                .map_err(|_| schema(format!("bad iteration {:?}", f[0])))?,
            run: f[1].to_owned(),
            strategy: f[2].to_owned(),
            cost_a: num(3)?,
            cost_b: num(4)?,
            cost_p: num(5)?,
            miou: num(6)?,
            c_p: num(7)?,
            c_i: num(8)?,
            c_b: num(9)?,
            c_c: num(10)?,
        });
    }
    Ok(rows)
}

pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn open_file(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}
