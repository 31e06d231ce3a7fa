//! Flat `key = value` experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::acquisition::StrategyKind;
use crate::clickcost::DEFAULT_EPSILON;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdapterKind {
    NoisyOracle,
    PixelClassifier,
    File,
}

impl AdapterKind {
    pub const ALL: [AdapterKind; 3] = [
        AdapterKind::NoisyOracle,
        AdapterKind::PixelClassifier,
        AdapterKind::File,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdapterKind::NoisyOracle => "noisy_oracle",
            AdapterKind::PixelClassifier => "pixel_classifier",
            AdapterKind::File => "file",
        }
    }
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdapterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == s).ok_or_else(|| {
            let valid: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown adapter '{s}' (valid: {})", valid.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub pool_dir: PathBuf,
    pub val_dir: PathBuf,
    pub strategy: StrategyKind,
    pub b: usize,
    pub stride: usize,
    pub m_q: usize,
    pub m_init: usize,
    pub n_meta: usize,
    pub epsilon: f64,
    pub iterations: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub adapter: AdapterKind,
    /// Computed by a full-pool training run when absent.
    pub full_set_miou: Option<f64>,
    pub out_dir: PathBuf,
    /// Root of the file adapter's per-iteration prediction directories.
    pub predictions_dir: Option<PathBuf>,
    /// Write a checkpoint after every iteration.
    pub checkpoints: bool,
}

impl ExperimentConfig {
    /// Defaults for everything but the data directories and strategy.
    pub fn new(pool_dir: impl Into<PathBuf>, val_dir: impl Into<PathBuf>, strategy: StrategyKind) -> Self {
        Self {
            pool_dir: pool_dir.into(),
            val_dir: val_dir.into(),
            strategy,
            b: 32,
            stride: 8,
            m_q: 32,
            m_init: 4,
            n_meta: 3,
            epsilon: DEFAULT_EPSILON,
            iterations: 10,
            repetitions: 1,
            seed: 0,
            adapter: AdapterKind::PixelClassifier,
            full_set_miou: None,
            out_dir: PathBuf::from("results"),
            predictions_dir: None,
            checkpoints: true,
        }
    }

    /// Parses config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::new("", "", StrategyKind::Random);
        let (mut pool, mut val, mut strategy) = (false, false, false);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got '{line}'", i + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let path = |v: &str| base.join(v);
            match key {
                "pool_dir" => {
                    cfg.pool_dir = path(value);
                    pool = true;
                }
                "val_dir" => {
                    cfg.val_dir = path(value);
                    val = true;
                }
                "out_dir" => cfg.out_dir = path(value),
                "predictions_dir" => cfg.predictions_dir = Some(path(value)),
                "strategy" => {
                    cfg.strategy = value.parse()?;
                    strategy = true;
                }
                "adapter" => cfg.adapter = value.parse()?,
                "b" => cfg.b = num(key, value)?,
                "stride" => cfg.stride = num(key, value)?,
                "m_q" => cfg.m_q = num(key, value)?,
                "m_init" => cfg.m_init = num(key, value)?,
                "n_meta" => cfg.n_meta = num(key, value)?,
                "epsilon" => cfg.epsilon = num(key, value)?,
                "iterations" => cfg.iterations = num(key, value)?,
                "repetitions" => cfg.repetitions = num(key, value)?,
                "seed" => cfg.seed = num(key, value)?,
                "full_set_miou" => cfg.full_set_miou = Some(num(key, value)?),
                "checkpoints" => cfg.checkpoints = num(key, value)?,
                _ => return Err(Error::Config(format!("line {}: unknown key '{key}'", i + 1))),
            }
        }
        for (set, key) in [(pool, "pool_dir"), (val, "val_dir"), (strategy, "strategy")] {
            if !set {
                return Err(Error::Config(format!("missing required key '{key}'")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.b == 0 {
            return fail("b must be positive");
        }
        if self.stride == 0 {
            return fail("stride must be positive");
        }
        if self.m_q == 0 {
            return fail("m_q must be positive");
        }
        if self.repetitions == 0 {
            return fail("repetitions must be positive");
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return fail("epsilon must be a non-negative number");
        }
        if let Some(m) = self.full_set_miou {
            if !(m > 0.0 && m <= 1.0) {
                return fail("full_set_miou must lie in (0, 1]");
            }
        }
        if self.adapter == AdapterKind::File && self.predictions_dir.is_none() {
            return fail("the file adapter needs predictions_dir");
        }
        Ok(())
    }

    /// Number of meta-set images used by this strategy.
    pub fn meta_images(&self) -> usize {
        if self.strategy.uses_metaseg() {
            self.n_meta
        } else {
            0
        }
    }

    /// Config text that parses back to `self` (paths written as given).
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "pool_dir = {}\nval_dir = {}\nstrategy = {}\nb = {}\nstride = {}\nm_q = {}\nm_init = {}\n\
             n_meta = {}\nepsilon = {}\niterations = {}\nrepetitions = {}\nseed = {}\nadapter = {}\n\
             out_dir = {}\ncheckpoints = {}\n",
            self.pool_dir.display(),
            self.val_dir.display(),
            self.strategy,
            self.b,
            self.stride,
            self.m_q,
            self.m_init,
            self.n_meta,
            self.epsilon,
            self.iterations,
            self.repetitions,
            self.seed,
            self.adapter,
            self.out_dir.display(),
            self.checkpoints,
        );
        if let Some(m) = self.full_set_miou {
            s.push_str(&format!("full_set_miou = {m}\n"));
        }
        if let Some(p) = &self.predictions_dir {
            s.push_str(&format!("predictions_dir = {}\n", p.display()));
        }
        s
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}
