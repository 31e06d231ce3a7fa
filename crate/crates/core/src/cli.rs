//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::acquisition::{
    build_priorities, candidates_from_maps, select_query, ImageInputs, PriorityParams, Strategy,
    StrategyKind,
};
use crate::alloop::{mean_rows, run_experiment, thresholds, write_thresholds, ExperimentConfig};
use crate::clickcost::{click_cost_map, estimate_box_clicks, BoxRegion, Polygon, TrueClickIndex};
use crate::error::{Error, Result};
use crate::formats::{
    create_file, fmt_sig6, open_file, read_bitmask_pgm, read_mask_pgm, read_pmap, read_polygons,
    read_results, write_heatmap_pgm, write_queries, write_results, QueryRecord, ResultRow,
};
use crate::gridmaps::{BitMask, ProbMap, ScalarMap};
use crate::metaseg::{metaseg_cycle, GbtParams};
use crate::segmentation::{IouAccumulator, SegMask};
use crate::synth::{generate_dataset, SceneSpec};

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "BOXQUERY_THREADS";

#[derive(Parser, Debug)]
#[command(name = "boxquery", version, about = "Region-based active learning for semantic segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Master random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: BOXQUERY_THREADS, then all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic pool and validation set
    Synth(SynthArgs),
    /// Run an active-learning experiment from a config file
    Run(RunArgs),
    /// Select query boxes from a directory of probability maps
    Query(QueryArgs),
    /// Compare estimated and true clicks on a box grid
    Clicks(ClicksArgs),
    /// Mean IoU of predicted masks against ground truth
    Eval(EvalArgs),
    /// Aggregate results files into mean curves and threshold costs
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Number of pool images
    #[arg(long, default_value_t = 200)]
    pool: usize,
    /// Number of validation images
    #[arg(long, default_value_t = 50)]
    val: usize,
    /// Classes including background
    #[arg(long, default_value_t = 5)]
    classes: usize,
    /// Image height and width in pixels
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Minimum shapes per image
    #[arg(long, default_value_t = 3)]
    shapes_min: usize,
    /// Maximum shapes per image
    #[arg(long, default_value_t = 8)]
    shapes_max: usize,
    /// Per-pixel color noise std as a fraction of the 8-bit range
    #[arg(long, default_value_t = 0.08)]
    noise: f64,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Experiment config file (key = value lines)
    #[arg(long)]
    config: PathBuf,
    /// Continue from checkpoints in the output directory
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of <image_id>.pmap predictions
    #[arg(long)]
    pmaps: PathBuf,
    /// Strategy name
    #[arg(long, default_value = "entropy_plus")]
    strategy: String,
    /// Box width
    #[arg(long, default_value_t = 32)]
    b: usize,
    /// Anchor stride
    #[arg(long, default_value_t = 8)]
    stride: usize,
    /// Number of boxes to select
    #[arg(long, default_value_t = 32)]
    m_q: usize,
    /// RDP tolerance for the click estimate
    #[arg(long, default_value_t = 1.5)]
    epsilon: f64,
    /// Iteration number written to the query records
    #[arg(long, default_value_t = 0)]
    iteration: usize,
    /// Directory of <image_id>.pgm labeled-pixel masks (255 = labeled)
    #[arg(long)]
    labeled: Option<PathBuf>,
    /// Directory of meta-set <image_id>.pmap predictions (metabox kinds)
    #[arg(long)]
    meta_pmaps: Option<PathBuf>,
    /// Directory of meta-set <image_id>.pgm ground-truth masks (metabox kinds)
    #[arg(long)]
    meta_masks: Option<PathBuf>,
    /// Ground-truth polygons JSONL (star kinds)
    #[arg(long)]
    polygons: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClicksArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of <image_id>.pgm ground-truth masks
    #[arg(long)]
    masks: PathBuf,
    /// Polygons JSONL
    #[arg(long)]
    polygons: PathBuf,
    /// Classes including background
    #[arg(long)]
    classes: usize,
    /// Box width; boxes tile each image with stride b
    #[arg(long, default_value_t = 32)]
    b: usize,
    /// RDP tolerance
    #[arg(long, default_value_t = 1.5)]
    epsilon: f64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of predicted <image_id>.pgm masks
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth <image_id>.pgm masks
    #[arg(long)]
    gt: PathBuf,
    /// Classes including background
    #[arg(long)]
    classes: usize,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// results.csv files to aggregate
    #[arg(long, required = true, num_args = 1..)]
    results: Vec<PathBuf>,
    /// Full-set mIoU; read from threshold.csv next to each results file when absent
    #[arg(long)]
    full_set_miou: Option<f64>,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let common = match &cli.command {
        Command::Synth(a) => &a.common,
        Command::Run(a) => &a.common,
        Command::Query(a) => &a.common,
        Command::Clicks(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::Report(a) => &a.common,
    };
    let threads = match thread_count(common.threads) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(&cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 1,
                _ => 2,
            }
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV}='{v}' is not a thread count"))),
        Err(_) => Ok(0),
    }
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
        Command::Query(a) => query(a),
        Command::Clicks(a) => clicks(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    }
}

fn synth(a: &SynthArgs) -> Result<()> {
    let spec = SceneSpec {
        height: a.size,
        width: a.size,
        classes: a.classes,
        shapes: (a.shapes_min, a.shapes_max),
        color_noise: a.noise,
        seed: a.common.seed.unwrap_or(0),
        ..Default::default()
    };
    spec.validate().map_err(usage)?;
    let out = out_dir(&a.common, "data");
    let info = generate_dataset(&spec, a.pool, a.val, &out)?;
    println!(
        "wrote {} pool and {} validation images to {} (pool clicks: {} polygon, {} class)",
        info.n_pool,
        info.n_val,
        out.display(),
        info.pool_cp,
        info.pool_cc
    );
    Ok(())
}

fn usage(e: Error) -> Error {
    match e {
        Error::InvalidInput(m) => Error::Config(m),
        other => other,
    }
}

fn run(a: &RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config).map_err(|e| match e {
        Error::Io { .. } => Error::Config(e.to_string()),
        other => other,
    })?;
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &a.common.out {
        cfg.out_dir = o.clone();
    }
    let report = run_experiment(&cfg, a.resume)?;
    let t = &report.threshold;
    println!(
        "{}: {} rows, full-set mIoU {}, 95% target {}",
        t.strategy,
        report.rows.len(),
        fmt_sig6(report.full_set_miou),
        fmt_sig6(t.target_miou)
    );
    match t.cost_a_interp {
        Some(c) => println!("cost_A at threshold: {}%", fmt_sig6(c)),
        None => println!("threshold not reached"),
    }
    Ok(())
}

/// `(stem, path)` of every file with extension `ext` in `dir`, sorted.
fn list_files(dir: &Path, ext: &str) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn query(a: &QueryArgs) -> Result<()> {
    let kind: StrategyKind = a.strategy.parse()?;
    let files = list_files(&a.pmaps, "pmap")?;
    if files.is_empty() {
        return Err(Error::invalid(format!("no .pmap files in {}", a.pmaps.display())));
    }
    let preds: Vec<ProbMap> = files
        .par_iter()
        .map(|(_, p)| read_pmap(open_file(p)?))
        .collect::<Result<_>>()?;
    let labeled: Vec<BitMask> = files
        .iter()
        .zip(&preds)
        .map(|((id, _), p)| {
            let path = a.labeled.as_ref().map(|d| d.join(format!("{id}.pgm")));
            match path {
                Some(path) if path.exists() => read_bitmask_pgm(open_file(&path)?),
                _ => Ok(BitMask::new(p.height(), p.width())),
            }
        })
        .collect::<Result<_>>()?;

    let quality = if kind.uses_metaseg() {
        let (Some(mp), Some(mm)) = (&a.meta_pmaps, &a.meta_masks) else {
            return Err(Error::Config(format!("strategy {kind} needs --meta-pmaps and --meta-masks")));
        };
        let classes = preds[0].classes();
        let meta: Vec<(ProbMap, SegMask)> = list_files(mp, "pmap")?
            .iter()
            .map(|(id, p)| Ok((read_pmap(open_file(p)?)?, read_mask_pgm(open_file(&mm.join(format!("{id}.pgm")))?, classes)?)))
            .collect::<Result<_>>()?;
        let pairs: Vec<(&ProbMap, &SegMask)> = meta.iter().map(|(p, m)| (p, m)).collect();
        let targets: Vec<&ProbMap> = preds.iter().collect();
        Some(metaseg_cycle(&pairs, &targets, &GbtParams::default())?.1)
    } else {
        None
    };
    let polygons: Option<Vec<Vec<Polygon>>> = if kind.needs_polygons() {
        let Some(path) = &a.polygons else {
            return Err(Error::Config(format!("strategy {kind} needs --polygons")));
        };
        let all = read_polygons(open_file(path)?)?;
        Some(
            files
                .iter()
                .map(|(id, _)| all.iter().filter(|p| &p.image_id == id).cloned().collect())
                .collect(),
        )
    } else {
        None
    };
    let inputs: Vec<ImageInputs> = (0..files.len())
        .map(|i| ImageInputs {
            prediction: &preds[i],
            labeled: &labeled[i],
            quality_priority: quality.as_ref().map(|q| &q[i]),
            polygons: polygons.as_ref().map(|p| p[i].as_slice()),
        })
        .collect();
    let params = PriorityParams {
        b: a.b,
        stride: a.stride,
        epsilon: a.epsilon,
        iteration: a.iteration as u64,
    };
    let maps = build_priorities(&Strategy::new(kind, a.common.seed.unwrap_or(0)), &inputs, &params)?;
    let selected = select_query(&candidates_from_maps(&maps, a.b, a.stride), a.m_q)?;
    let records: Vec<QueryRecord> = selected
        .iter()
        .map(|c| QueryRecord {
            image_id: files[c.image].0.clone(),
            row: c.row,
            col: c.col,
            b: c.b,
            score: c.score as f64,
            strategy: kind.name().to_string(),
            iteration: a.iteration,
        })
        .collect();
    let out = out_dir(&a.common, "query");
    write_queries(&records, create_file(&out.join("queries.jsonl"))?)?;
    for ((id, _), m) in files.iter().zip(&maps) {
        let mut f = create_file(&out.join("heatmaps").join(format!("{id}.pgm")))?;
        write_heatmap_pgm(m, &mut f)?;
        f.flush()?;
    }
    println!("selected {} boxes from {} images", records.len(), files.len());
    Ok(())
}

fn clicks(a: &ClicksArgs) -> Result<()> {
    if a.b == 0 {
        return Err(Error::Config("--b must be positive".into()));
    }
    let all = read_polygons(open_file(&a.polygons)?)?;
    let files = list_files(&a.masks, "pgm")?;
    let rows: Vec<Vec<String>> = files
        .par_iter()
        .map(|(id, path)| {
            let mask = read_mask_pgm(open_file(path)?, a.classes)?;
            let polys: Vec<Polygon> = all.iter().filter(|p| &p.image_id == id).cloned().collect();
            let kappa: ScalarMap = click_cost_map(&mask, a.epsilon)?;
            let index = TrueClickIndex::new(&polys, &mask);
            let mut lines = Vec::new();
            let (h, w) = mask.dims();
            for row in (0..h.saturating_sub(a.b - 1)).step_by(a.b) {
                for col in (0..w.saturating_sub(a.b - 1)).step_by(a.b) {
                    let region = BoxRegion::new(row, col, a.b);
                    let est = estimate_box_clicks(&kappa, region)?;
                    let t = index.count(region, None);
                    lines.push(format!("{id},{row},{col},{est},{},{},{},{}", t.c_p, t.c_i, t.c_b, t.c_c));
                }
            }
            Ok(lines)
        })
        .collect::<Result<_>>()?;
    let out = out_dir(&a.common, "clicks");
    let mut f = create_file(&out.join("clicks.csv"))?;
    writeln!(f, "image_id,row,col,estimated,c_p,c_i,c_b,c_c")?;
    let (mut est, mut truth, mut n) = (0u64, 0u64, 0usize);
    for line in rows.iter().flatten() {
        writeln!(f, "{line}")?;
        let v: Vec<u64> = line.split(',').skip(3).map(|s| s.parse().unwrap_or(0)).collect();
        est += v[0];
        truth += v[1];
        n += 1;
    }
    f.flush()?;
    println!("{n} boxes: {est} estimated vertices, {truth} true polygon clicks");
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let files = list_files(&a.gt, "pgm")?;
    if files.is_empty() {
        return Err(Error::invalid(format!("no .pgm files in {}", a.gt.display())));
    }
    let mut acc = IouAccumulator::new(a.classes);
    let out = out_dir(&a.common, "eval");
    let mut f = create_file(&out.join("eval.csv"))?;
    writeln!(f, "image_id,miou")?;
    for (id, path) in &files {
        let gt = read_mask_pgm(open_file(path)?, a.classes)?;
        let pred_path = a.pred.join(format!("{id}.pgm"));
        let pred = read_mask_pgm(open_file(&pred_path)?, a.classes)?;
        let mut one = IouAccumulator::new(a.classes);
        one.add(&pred, &gt)?;
        acc.add(&pred, &gt)?;
        writeln!(f, "{id},{}", fmt_sig6(one.mean_iou()))?;
    }
    writeln!(f, "all,{}", fmt_sig6(acc.mean_iou()))?;
    f.flush()?;
    println!("mIoU over {} images: {}", files.len(), fmt_sig6(acc.mean_iou()));
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let mut rows: Vec<ResultRow> = Vec::new();
    let mut full: Option<f64> = a.full_set_miou;
    for path in &a.results {
        rows.extend(read_results(open_file(path)?)?);
        if a.full_set_miou.is_none() {
            let t = path.with_file_name("threshold.csv");
            if t.exists() {
                let text = std::fs::read_to_string(&t).map_err(|e| Error::io(&t, e))?;
                if let Some(v) = text
                    .lines()
                    .nth(1)
                    .and_then(|l| l.split(',').nth(1))
                    .and_then(|v| v.parse::<f64>().ok())
                {
                    full = Some(full.map_or(v, |f: f64| f.max(v)));
                }
            }
        }
    }
    let full = full.ok_or_else(|| {
        Error::Config("no full-set mIoU: pass --full-set-miou or keep threshold.csv next to the results".into())
    })?;
    let means = mean_rows(&rows);
    let table = thresholds(&rows, full);
    let out = out_dir(&a.common, "report");
    write_results(&means, create_file(&out.join("means.csv"))?)?;
    let mut f = create_file(&out.join("thresholds.csv"))?;
    write_thresholds(&table, &mut f)?;
    f.flush()?;
    println!("{:<14} {:>10} {:>14}", "strategy", "iteration", "cost_A (%)");
    for t in &table {
        println!(
            "{:<14} {:>10} {:>14}",
            t.strategy,
            t.iteration.map(|i| i.to_string()).unwrap_or_else(|| "-".into()),
            t.cost_a_interp.map(fmt_sig6).unwrap_or_else(|| "-".into())
        );
    }
    Ok(())
}
