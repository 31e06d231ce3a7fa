//! The active-learning driver.
//!
//! One run starts from `m_init` fully labeled images (plus `n_meta` meta-set
//! images for the MetaBox strategies), then alternates: predict the
//! unlabeled pool, score and select `m_q` boxes, copy their ground truth,
//! charge the clicks, retrain, evaluate. Every step is a pure function of
//! `(config, seed, run, iteration)`, so a checkpoint only needs the
//! labeled masks and the ledger.

pub mod adapters;
pub mod config;

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    build_priorities, candidates_from_maps, select_query, ImageInputs, PriorityParams, Strategy,
};
use crate::clickcost::{compute_costs, BoxRegion, ClickCounts, CostLedger, Polygon, TrueClickIndex};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::formats::{
    create_file, fmt_sig6, open_file, read_bitmask_pgm, read_mask_pgm, read_polygons, read_ppm,
    write_bitmask_pgm, write_queries, write_results, QueryRecord, ResultRow, RgbImage,
};
use crate::gridmaps::{aggregate_boxes, BitMask, ProbMap, ScalarMap};
use crate::metaseg::{metaseg_cycle, GbtParams};
use crate::segmentation::{argmax_mask, IouAccumulator, SegMask};
use crate::synth::{DatasetInfo, Scene, SplitLayout};

pub use adapters::{build_adapter, ModelAdapter, Phase, PredictRequest, Split, TrainData};
pub use config::{AdapterKind, ExperimentConfig};

/// Checkpoint format version.
pub const STATE_VERSION: u32 = 1;

/// Share of the full-set mIoU that defines the cost threshold.
pub const THRESHOLD_FRACTION: f64 = 0.95;

/// Images, ground truth and polygons of one split, sorted by image id.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub images: Vec<RgbImage>,
    pub masks: Vec<SegMask>,
    pub polygons: Vec<Vec<Polygon>>,
    pub classes: usize,
}

impl Dataset {
    /// Loads a split directory. The class count comes from `dataset.txt`
    /// in the parent directory when present, otherwise from the polygons.
    pub fn load(dir: &Path) -> Result<Self> {
        let layout = SplitLayout::new(dir);
        let mut ids = layout.read_ids()?;
        ids.sort();
        if ids.is_empty() {
            return Err(Error::invalid(format!("{} lists no images", layout.manifest().display())));
        }
        let all = read_polygons(open_file(&layout.polygons())?)?;
        let mut classes = all.iter().map(|p| p.class as usize + 1).max().unwrap_or(2).max(2);
        if let Some(parent) = dir.parent() {
            if parent.join(DatasetInfo::FILE).exists() {
                classes = classes.max(DatasetInfo::load(parent)?.classes);
            }
        }
        let mut by_image: HashMap<String, Vec<Polygon>> = HashMap::new();
        for p in all {
            by_image.entry(p.image_id.clone()).or_default().push(p);
        }
        let loaded: Vec<(RgbImage, SegMask)> = ids
            .par_iter()
            .map(|id| {
                let img = read_ppm(open_file(&layout.image(id))?)?;
                let mask = read_mask_pgm(open_file(&layout.mask(id))?, classes)?;
                if mask.dims() != (img.height, img.width) {
                    return Err(Error::Format(format!("{id}: image and mask sizes differ")));
                }
                Ok((img, mask))
            })
            .collect::<Result<_>>()?;
        let polygons = ids.iter().map(|id| by_image.remove(id).unwrap_or_default()).collect();
        let (images, masks) = loaded.into_iter().unzip();
        Ok(Self {
            ids,
            images,
            masks,
            polygons,
            classes,
        })
    }

    pub fn from_scenes(mut scenes: Vec<Scene>, classes: usize) -> Self {
        scenes.sort_by(|a, b| a.id.cmp(&b.id));
        let mut d = Self {
            ids: Vec::new(),
            images: Vec::new(),
            masks: Vec::new(),
            polygons: Vec::new(),
            classes,
        };
        for s in scenes {
            d.ids.push(s.id);
            d.images.push(s.image);
            d.masks.push(s.mask);
            d.polygons.push(s.polygons);
        }
        d
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn pixels(&self, i: usize) -> u64 {
        let (h, w) = self.masks[i].dims();
        (h * w) as u64
    }

    pub fn total_pixels(&self) -> u64 {
        (0..self.len()).map(|i| self.pixels(i)).sum()
    }

    /// Polygon clicks of annotating image `i` completely.
    pub fn polygon_clicks(&self, i: usize) -> u64 {
        self.polygons[i].iter().map(|p| p.vertices.len() as u64).sum()
    }

    /// Class clicks of annotating image `i` completely.
    pub fn class_clicks(&self, i: usize) -> u64 {
        self.polygons[i].len() as u64
    }

    pub fn ledger(&self) -> CostLedger {
        CostLedger::new(
            (0..self.len()).map(|i| self.polygon_clicks(i)).sum(),
            (0..self.len()).map(|i| self.class_clicks(i)).sum(),
            self.total_pixels(),
        )
    }
}

/// Metrics after one iteration (iteration 0 is the initial state).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost_a: f64,
    pub cost_b: f64,
    pub cost_p: f64,
    pub miou: f64,
    /// Cumulative clicks by type.
    pub clicks: ClickCounts,
    pub labeled_pixels: u64,
}

impl IterationRecord {
    pub fn to_row(&self, run: &str, strategy: &str) -> ResultRow {
        ResultRow {
            iteration: self.iteration,
            run: run.to_string(),
            strategy: strategy.to_string(),
            cost_a: self.cost_a,
            cost_b: self.cost_b,
            cost_p: self.cost_p,
            miou: self.miou,
            c_p: self.clicks.c_p as f64,
            c_i: self.clicks.c_i as f64,
            c_b: self.clicks.c_b as f64,
            c_c: self.clicks.c_c as f64,
        }
    }
}

/// State of one run. `history[t]` is the record of iteration `t`, so
/// `history.len() == iteration + 1` once the initial record is written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ALState {
    pub version: u32,
    pub run: usize,
    /// Seed of this run, derived from the experiment seed.
    pub seed: u64,
    pub strategy: String,
    pub iteration: usize,
    /// Pool indices of the initial fully labeled images.
    pub l0: Vec<usize>,
    /// Pool indices of the meta set.
    pub meta: Vec<usize>,
    pub ledger: CostLedger,
    pub history: Vec<IterationRecord>,
    pub queries: Vec<QueryRecord>,
    /// Labeled pixels per pool image; stored as PGMs in checkpoints.
    #[serde(skip)]
    pub labeled: Vec<BitMask>,
}

impl ALState {
    /// Pool indices still open for querying.
    pub fn unlabeled(&self) -> Vec<usize> {
        (0..self.labeled.len())
            .filter(|i| !self.meta.contains(i) && !self.labeled[*i].is_full())
            .collect()
    }

    /// Writes `state.json` and one PGM per image with labeled pixels.
    pub fn save(&self, dir: &Path, ids: &[String]) -> Result<()> {
        for (i, m) in self.labeled.iter().enumerate() {
            if m.count() > 0 {
                let mut f = create_file(&dir.join("masks").join(format!("{}.pgm", ids[i])))?;
                write_bitmask_pgm(m, &mut f)?;
                f.flush()?;
            }
        }
        let tmp = dir.join("state.json.tmp");
        let mut f = create_file(&tmp)?;
        serde_json::to_writer(&mut f, self)?;
        f.flush()?;
        drop(f);
        let path = dir.join("state.json");
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path, pool: &Dataset) -> Result<Self> {
        let mut state: ALState = serde_json::from_reader(open_file(&dir.join("state.json"))?)?;
        if state.version != STATE_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} (expected {STATE_VERSION})",
                state.version
            )));
        }
        state.labeled = (0..pool.len())
            .map(|i| {
                let path = dir.join("masks").join(format!("{}.pgm", pool.ids[i]));
                let (h, w) = pool.masks[i].dims();
                if path.exists() {
                    let m = read_bitmask_pgm(open_file(&path)?)?;
                    if m.dims() != (h, w) {
                        return Err(Error::Format(format!("{}: wrong size", path.display())));
                    }
                    Ok(m)
                } else {
                    Ok(BitMask::new(h, w))
                }
            })
            .collect::<Result<_>>()?;
        Ok(state)
    }
}

/// Samples L₀ and the meta set and charges their clicks.
pub fn init_experiment(cfg: &ExperimentConfig, pool: &Dataset, run: usize) -> Result<ALState> {
    let n_meta = cfg.meta_images();
    if pool.len() < cfg.m_init + n_meta {
        return Err(Error::invalid(format!(
            "pool of {} images is smaller than m_init + n_meta = {}",
            pool.len(),
            cfg.m_init + n_meta
        )));
    }
    let seed = derive_seed(cfg.seed, &[run as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
    let picked = rand::seq::index::sample(&mut rng, pool.len(), cfg.m_init + n_meta).into_vec();
    let mut l0 = picked[..cfg.m_init].to_vec();
    let mut meta = picked[cfg.m_init..].to_vec();
    l0.sort_unstable();
    meta.sort_unstable();
    let mut ledger = pool.ledger();
    let mut labeled: Vec<BitMask> = pool
        .masks
        .iter()
        .map(|m| BitMask::new(m.height(), m.width()))
        .collect();
    for &i in l0.iter().chain(&meta) {
        let (h, w) = pool.masks[i].dims();
        labeled[i] = BitMask::full(h, w);
        ledger.charge_image(pool.polygon_clicks(i), pool.class_clicks(i), pool.pixels(i));
    }
    Ok(ALState {
        version: STATE_VERSION,
        run,
        seed,
        strategy: cfg.strategy.name().to_string(),
        iteration: 0,
        l0,
        meta,
        ledger,
        history: Vec::new(),
        queries: Vec::new(),
        labeled,
    })
}

/// One configured experiment over loaded data with a model adapter.
pub struct Experiment<'a> {
    pub cfg: &'a ExperimentConfig,
    pub pool: &'a Dataset,
    pub val: &'a Dataset,
    adapter: Box<dyn ModelAdapter>,
    clicks: Vec<TrueClickIndex<'a>>,
}

impl<'a> Experiment<'a> {
    pub fn new(
        cfg: &'a ExperimentConfig,
        pool: &'a Dataset,
        val: &'a Dataset,
        adapter: Box<dyn ModelAdapter>,
    ) -> Result<Self> {
        cfg.validate()?;
        if pool.is_empty() || val.is_empty() {
            return Err(Error::invalid("pool and validation sets must not be empty"));
        }
        let clicks = pool
            .polygons
            .par_iter()
            .zip(&pool.masks)
            .map(|(p, m)| TrueClickIndex::new(p, m))
            .collect();
        Ok(Self {
            cfg,
            pool,
            val,
            adapter,
            clicks,
        })
    }

    /// Retrains the adapter on the labels of `state`.
    pub fn train(&mut self, state: &ALState) -> Result<()> {
        let idx: Vec<usize> = (0..self.pool.len())
            .filter(|&i| state.labeled[i].count() > 0)
            .collect();
        let images: Vec<&RgbImage> = idx.iter().map(|&i| &self.pool.images[i]).collect();
        let masks: Vec<&SegMask> = idx.iter().map(|&i| &self.pool.masks[i]).collect();
        let labeled: Vec<&BitMask> = idx.iter().map(|&i| &state.labeled[i]).collect();
        self.adapter.train(&TrainData {
            images: &images,
            masks: &masks,
            labeled: &labeled,
            labeled_fraction: state.ledger.labeled_pixels as f64 / state.ledger.total_pixels.max(1) as f64,
            phase: Phase::Iteration(state.iteration),
            seed: state.seed,
        })
    }

    fn predict(&self, split: Split, index: usize) -> Result<ProbMap> {
        let data = match split {
            Split::Pool => self.pool,
            Split::Val => self.val,
        };
        self.adapter.predict(&PredictRequest {
            split,
            index,
            id: &data.ids[index],
            image: &data.images[index],
            gt: &data.masks[index],
        })
    }

    /// Validation mIoU of the current model.
    pub fn evaluate(&self) -> Result<f64> {
        let preds: Vec<SegMask> = (0..self.val.len())
            .into_par_iter()
            .map(|i| Ok(argmax_mask(&self.predict(Split::Val, i)?)))
            .collect::<Result<_>>()?;
        let mut acc = IouAccumulator::new(self.val.classes.max(self.pool.classes));
        for (p, gt) in preds.iter().zip(&self.val.masks) {
            acc.add(p, gt)?;
        }
        Ok(acc.mean_iou())
    }

    fn record(&self, state: &ALState, miou: f64) -> Result<IterationRecord> {
        let costs = compute_costs(&state.ledger)?;
        Ok(IterationRecord {
            iteration: state.iteration,
            cost_a: costs.cost_a,
            cost_b: costs.cost_b,
            cost_p: costs.cost_p,
            miou,
            clicks: state.ledger.totals(),
            labeled_pixels: state.ledger.labeled_pixels,
        })
    }

    /// Initial state of run `run` with its iteration-0 record; leaves the
    /// adapter trained on L₀ ∪ M.
    pub fn start(&mut self, run: usize) -> Result<ALState> {
        let mut state = init_experiment(self.cfg, self.pool, run)?;
        self.train(&state)?;
        let miou = self.evaluate()?;
        let rec = self.record(&state, miou)?;
        state.history.push(rec);
        Ok(state)
    }

    /// One query-annotate-retrain cycle. Expects the adapter to be trained
    /// on the labels of `state`. Returns `false` without changes when no
    /// box with unlabeled pixels is left.
    pub fn run_iteration(&mut self, state: &mut ALState) -> Result<bool> {
        let cfg = self.cfg;
        let u = state.unlabeled();
        if u.is_empty() {
            return Ok(false);
        }
        let preds: Vec<ProbMap> = u
            .par_iter()
            .map(|&i| self.predict(Split::Pool, i))
            .collect::<Result<_>>()?;

        let quality = if cfg.strategy.uses_metaseg() {
            let meta_preds: Vec<ProbMap> = state
                .meta
                .par_iter()
                .map(|&i| self.predict(Split::Pool, i))
                .collect::<Result<_>>()?;
            let pairs: Vec<(&ProbMap, &SegMask)> = meta_preds
                .iter()
                .zip(&state.meta)
                .map(|(p, &i)| (p, &self.pool.masks[i]))
                .collect();
            let targets: Vec<&ProbMap> = preds.iter().collect();
            Some(metaseg_cycle(&pairs, &targets, &GbtParams::default())?.1)
        } else {
            None
        };

        let inputs: Vec<ImageInputs> = u
            .iter()
            .enumerate()
            .map(|(k, &i)| ImageInputs {
                prediction: &preds[k],
                labeled: &state.labeled[i],
                quality_priority: quality.as_ref().map(|q| &q[k]),
                polygons: Some(&self.pool.polygons[i]),
            })
            .collect();
        let strategy = Strategy::new(cfg.strategy, state.seed);
        let params = PriorityParams {
            b: cfg.b,
            stride: cfg.stride,
            epsilon: cfg.epsilon,
            iteration: state.iteration as u64,
        };
        let maps = build_priorities(&strategy, &inputs, &params)?;
        let open: Vec<ScalarMap> = u
            .par_iter()
            .map(|&i| {
                let m = &state.labeled[i];
                let free = ScalarMap::from_fn(m.height(), m.width(), |r, c| if m.get(r, c) { 0.0 } else { 1.0 });
                aggregate_boxes(&free, cfg.b, cfg.stride)
            })
            .collect::<Result<_>>()?;
        let mut cands = candidates_from_maps(&maps, cfg.b, cfg.stride);
        cands.retain(|c| open[c.image].get(c.row / cfg.stride, c.col / cfg.stride) > 0.0);
        if cands.is_empty() {
            return Ok(false);
        }
        let selected = select_query(&cands, cfg.m_q)?;

        let next = state.iteration + 1;
        for c in &selected {
            let i = u[c.image];
            let region = BoxRegion::new(c.row, c.col, c.b);
            let clicks = self.clicks[i].count(region, Some(&state.labeled[i]));
            let new_pixels = state.labeled[i].fill_box(c.row, c.col, c.b) as u64;
            state.ledger.charge_box(&clicks, new_pixels);
            state.queries.push(QueryRecord {
                image_id: self.pool.ids[i].clone(),
                row: c.row,
                col: c.col,
                b: c.b,
                score: c.score as f64,
                strategy: state.strategy.clone(),
                iteration: next,
            });
        }
        state.iteration = next;
        self.train(state)?;
        let miou = self.evaluate()?;
        let rec = self.record(state, miou)?;
        state.history.push(rec);
        Ok(true)
    }

    /// Validation mIoU after training on the fully labeled pool.
    pub fn full_set_miou(&mut self) -> Result<f64> {
        let images: Vec<&RgbImage> = self.pool.images.iter().collect();
        let masks: Vec<&SegMask> = self.pool.masks.iter().collect();
        let full: Vec<BitMask> = self
            .pool
            .masks
            .iter()
            .map(|m| BitMask::full(m.height(), m.width()))
            .collect();
        let labeled: Vec<&BitMask> = full.iter().collect();
        self.adapter.train(&TrainData {
            images: &images,
            masks: &masks,
            labeled: &labeled,
            labeled_fraction: 1.0,
            phase: Phase::FullSet,
            seed: self.cfg.seed,
        })?;
        self.evaluate()
    }
}

/// Outcome of the 95% full-set mIoU threshold on a mean curve.
#[derive(Clone, Debug, PartialEq)]
pub struct Threshold {
    pub strategy: String,
    pub full_set_miou: f64,
    pub target_miou: f64,
    /// First iteration whose mean mIoU reaches the target.
    pub iteration: Option<usize>,
    pub cost_a_at_iteration: Option<f64>,
    /// cost_A where the linearly interpolated curve crosses the target.
    pub cost_a_interp: Option<f64>,
}

pub const THRESHOLD_HEADER: &str =
    "strategy,full_set_miou,target_miou,iteration,cost_a_at_iteration,cost_a_interp";

impl Threshold {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_sig6).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.strategy,
            fmt_sig6(self.full_set_miou),
            fmt_sig6(self.target_miou),
            self.iteration.map(|i| i.to_string()).unwrap_or_default(),
            opt(self.cost_a_at_iteration),
            opt(self.cost_a_interp),
        )
    }
}

/// Per-(strategy, iteration) means over runs, with `run = "mean"`.
pub fn mean_rows(rows: &[ResultRow]) -> Vec<ResultRow> {
    let mut groups: Vec<((String, usize), Vec<&ResultRow>)> = Vec::new();
    for r in rows.iter().filter(|r| r.run != "mean") {
        let key = (r.strategy.clone(), r.iteration);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    groups
        .into_iter()
        .map(|((strategy, iteration), v)| {
            let n = v.len() as f64;
            let mean = |f: fn(&ResultRow) -> f64| v.iter().map(|r| f(r)).sum::<f64>() / n;
            ResultRow {
                iteration,
                run: "mean".into(),
                strategy,
                cost_a: mean(|r| r.cost_a),
                cost_b: mean(|r| r.cost_b),
                cost_p: mean(|r| r.cost_p),
                miou: mean(|r| r.miou),
                c_p: mean(|r| r.c_p),
                c_i: mean(|r| r.c_i),
                c_b: mean(|r| r.c_b),
                c_c: mean(|r| r.c_c),
            }
        })
        .collect()
}

/// Threshold crossing of one strategy's mean curve (rows sorted by
/// iteration).
pub fn threshold_crossing(strategy: &str, curve: &[ResultRow], full_set_miou: f64) -> Threshold {
    let target = THRESHOLD_FRACTION * full_set_miou;
    let mut t = Threshold {
        strategy: strategy.to_string(),
        full_set_miou,
        target_miou: target,
        iteration: None,
        cost_a_at_iteration: None,
        cost_a_interp: None,
    };
    if let Some(k) = curve.iter().position(|r| r.miou >= target) {
        let hit = &curve[k];
        t.iteration = Some(hit.iteration);
        t.cost_a_at_iteration = Some(hit.cost_a);
        t.cost_a_interp = Some(if k == 0 {
            hit.cost_a
        } else {
            let prev = &curve[k - 1];
            let frac = (target - prev.miou) / (hit.miou - prev.miou);
            prev.cost_a + frac * (hit.cost_a - prev.cost_a)
        });
    }
    t
}

/// Thresholds for every strategy present in `rows`.
pub fn thresholds(rows: &[ResultRow], full_set_miou: f64) -> Vec<Threshold> {
    let means = mean_rows(rows);
    let mut strategies: Vec<&str> = means.iter().map(|r| r.strategy.as_str()).collect();
    strategies.dedup();
    strategies
        .into_iter()
        .map(|s| {
            let curve: Vec<ResultRow> = means.iter().filter(|r| r.strategy == s).cloned().collect();
            threshold_crossing(s, &curve, full_set_miou)
        })
        .collect()
}

pub fn write_thresholds<W: Write>(rows: &[Threshold], mut sink: W) -> Result<()> {
    writeln!(sink, "{THRESHOLD_HEADER}")?;
    for r in rows {
        writeln!(sink, "{}", r.to_csv())?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
    pub means: Vec<ResultRow>,
    pub full_set_miou: f64,
    pub threshold: Threshold,
}

pub fn checkpoint_dir(cfg: &ExperimentConfig, run: usize) -> PathBuf {
    cfg.out_dir.join("checkpoints").join(format!("run_{run}"))
}

/// Runs all repetitions on already loaded data and writes
/// `results.csv`, `means.csv`, `threshold.csv` and the per-run query sets
/// under `out_dir`. With `resume`, runs continue from their checkpoints.
pub fn run_experiment_on(
    cfg: &ExperimentConfig,
    pool: &Dataset,
    val: &Dataset,
    resume: bool,
) -> Result<ExperimentReport> {
    let classes = pool.classes.max(val.classes);
    let mut exp = Experiment::new(cfg, pool, val, build_adapter(cfg, classes)?)?;
    let full_set_miou = match cfg.full_set_miou {
        Some(m) => m,
        None => exp.full_set_miou()?,
    };
    let mut rows = Vec::new();
    for run in 0..cfg.repetitions {
        let dir = checkpoint_dir(cfg, run);
        let mut state = if resume && dir.join("state.json").exists() {
            let s = ALState::load(&dir, pool)?;
            if s.strategy != cfg.strategy.name() || s.run != run || s.seed != derive_seed(cfg.seed, &[run as u64]) {
                return Err(Error::Config(format!(
                    "checkpoint in {} belongs to a different experiment",
                    dir.display()
                )));
            }
            exp.train(&s)?;
            s
        } else {
            let s = exp.start(run)?;
            if cfg.checkpoints {
                s.save(&dir, &pool.ids)?;
            }
            s
        };
        while state.iteration < cfg.iterations {
            if !exp.run_iteration(&mut state)? {
                break;
            }
            if cfg.checkpoints {
                state.save(&dir, &pool.ids)?;
            }
        }
        let mut f = create_file(&cfg.out_dir.join("queries").join(format!("run_{run}.jsonl")))?;
        write_queries(&state.queries, &mut f)?;
        f.flush()?;
        rows.extend(
            state
                .history
                .iter()
                .map(|h| h.to_row(&run.to_string(), cfg.strategy.name())),
        );
    }
    let means = mean_rows(&rows);
    let threshold = threshold_crossing(cfg.strategy.name(), &means, full_set_miou);
    write_results(&rows, create_file(&cfg.out_dir.join("results.csv"))?)?;
    write_results(&means, create_file(&cfg.out_dir.join("means.csv"))?)?;
    let mut f = create_file(&cfg.out_dir.join("threshold.csv"))?;
    write_thresholds(std::slice::from_ref(&threshold), &mut f)?;
    f.flush()?;
    Ok(ExperimentReport {
        rows,
        means,
        full_set_miou,
        threshold,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig, resume: bool) -> Result<ExperimentReport> {
    cfg.validate()?;
    let pool = Dataset::load(&cfg.pool_dir)?;
    let val = Dataset::load(&cfg.val_dir)?;
    run_experiment_on(cfg, &pool, &val, resume)
}
