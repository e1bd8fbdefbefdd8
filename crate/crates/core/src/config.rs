//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional except `mode`; defaults depend on the mode. Unknown and repeated
//! keys are rejected.
//!
//! ```text
//! mode = uh                 # uh | sh
//! code_length = 8
//! hidden_layers = 90,20     # default depends on code_length
//! lambda1 = 1e-5
//! iterations = 10
//! seed = 7
//! per_class_sample = none   # sh only; a count or "none"
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::{default_hidden_layers, LayerSchedule, Mode};
use crate::optimizer::LbfgsConfig;
use crate::sh::{ShConfig, DEFAULT_MAX_PAIRWISE_ENTRIES};
use crate::uh::UhConfig;
use crate::Penalties;

const KEYS: &[&str] = &[
    "mode",
    "code_length",
    "hidden_layers",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda4",
    "iterations",
    "lbfgs_memory",
    "lbfgs_max_iterations",
    "lbfgs_grad_tolerance",
    "wolfe_c1",
    "wolfe_c2",
    "max_line_search_steps",
    "b_step_max_sweeps",
    "itq_iterations",
    "seed",
    "standardize",
    "per_class_sample",
    "max_pairwise_entries",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub code_length: usize,
    pub hidden_layers: Vec<usize>,
    pub penalties: Penalties,
    pub iterations: usize,
    pub lbfgs: LbfgsConfig,
    pub b_step_max_sweeps: usize,
    pub itq_iterations: usize,
    pub seed: u64,
    pub standardize: bool,
    pub per_class_sample: Option<usize>,
    pub max_pairwise_entries: usize,
}

impl RunConfig {
    pub fn defaults(mode: Mode, code_length: usize) -> Self {
        let (penalties, iterations) = match mode {
            Mode::Unsupervised => (Penalties::UNSUPERVISED, 10),
            Mode::Supervised => (Penalties::SUPERVISED, 5),
        };
        Self {
            mode,
            code_length,
            hidden_layers: default_hidden_layers(code_length),
            penalties,
            iterations,
            lbfgs: LbfgsConfig::default(),
            b_step_max_sweeps: 5,
            itq_iterations: 50,
            seed: 0,
            standardize: false,
            per_class_sample: Some(3000),
            max_pairwise_entries: DEFAULT_MAX_PAIRWISE_ENTRIES,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::InvalidArgument(format!("line {}: unknown key {key:?}", n + 1)));
            }
            if map.insert(key, (n + 1, value.trim())).is_some() {
                return Err(Error::InvalidArgument(format!("line {}: duplicate key {key:?}", n + 1)));
            }
        }
        let get = |key: &str| map.get(key).copied();

        let mode = match get("mode") {
            Some((_, "uh")) => Mode::Unsupervised,
            Some((_, "sh")) => Mode::Supervised,
            Some((n, v)) => {
                return Err(Error::InvalidArgument(format!("line {n}: mode must be uh or sh, got {v:?}")))
            }
            None => return Err(Error::InvalidArgument("config must set mode".into())),
        };
        let code_length = match get("code_length") {
            Some(entry) => number(entry, "code_length")?,
            None => 8,
        };
        let mut cfg = Self::defaults(mode, code_length);

        if let Some((n, v)) = get("hidden_layers") {
            cfg.hidden_layers = if v.is_empty() {
                Vec::new()
            } else {
                v.split(',')
                    .map(|t| number((n, t.trim()), "hidden_layers"))
                    .collect::<Result<_>>()?
            };
        }
        set(&get, "lambda1", &mut cfg.penalties.weight_decay)?;
        set(&get, "lambda2", &mut cfg.penalties.binding)?;
        set(&get, "lambda3", &mut cfg.penalties.independence)?;
        set(&get, "lambda4", &mut cfg.penalties.balance)?;
        set(&get, "iterations", &mut cfg.iterations)?;
        set(&get, "lbfgs_memory", &mut cfg.lbfgs.memory)?;
        set(&get, "lbfgs_max_iterations", &mut cfg.lbfgs.max_iterations)?;
        set(&get, "lbfgs_grad_tolerance", &mut cfg.lbfgs.grad_tolerance)?;
        set(&get, "wolfe_c1", &mut cfg.lbfgs.wolfe_c1)?;
        set(&get, "wolfe_c2", &mut cfg.lbfgs.wolfe_c2)?;
        set(&get, "max_line_search_steps", &mut cfg.lbfgs.max_line_search_steps)?;
        set(&get, "b_step_max_sweeps", &mut cfg.b_step_max_sweeps)?;
        set(&get, "itq_iterations", &mut cfg.itq_iterations)?;
        set(&get, "seed", &mut cfg.seed)?;
        set(&get, "standardize", &mut cfg.standardize)?;
        set(&get, "max_pairwise_entries", &mut cfg.max_pairwise_entries)?;
        if let Some((n, v)) = get("per_class_sample") {
            cfg.per_class_sample = if v == "none" {
                None
            } else {
                Some(number((n, v), "per_class_sample")?)
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.code_length == 0 {
            return Err(Error::Parameter("code_length must be at least 1".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::Parameter("hidden layer sizes must be positive".into()));
        }
        if self.mode == Mode::Supervised && self.hidden_layers.is_empty() {
            return Err(Error::Parameter("supervised networks need at least one hidden layer".into()));
        }
        self.penalties.validate()?;
        self.lbfgs.validate()?;
        if self.iterations == 0 {
            return Err(Error::Parameter("iterations must be at least 1".into()));
        }
        if self.b_step_max_sweeps == 0 {
            return Err(Error::Parameter("b_step_max_sweeps must be at least 1".into()));
        }
        if self.itq_iterations == 0 {
            return Err(Error::Parameter("itq_iterations must be at least 1".into()));
        }
        if self.per_class_sample == Some(0) {
            return Err(Error::Parameter("per_class_sample must be at least 1".into()));
        }
        if self.max_pairwise_entries == 0 {
            return Err(Error::Parameter("max_pairwise_entries must be at least 1".into()));
        }
        Ok(())
    }

    pub fn schedule(&self, input_dim: usize) -> Result<LayerSchedule> {
        match self.mode {
            Mode::Unsupervised => LayerSchedule::unsupervised(input_dim, &self.hidden_layers, self.code_length),
            Mode::Supervised => LayerSchedule::supervised(input_dim, &self.hidden_layers, self.code_length),
        }
    }

    pub fn uh_config(&self, input_dim: usize) -> Result<UhConfig> {
        let mut c = UhConfig::new(self.schedule(input_dim)?);
        c.penalties = self.penalties;
        c.iterations = self.iterations;
        c.lbfgs = self.lbfgs.clone();
        c.b_step_max_sweeps = self.b_step_max_sweeps;
        c.itq_iterations = self.itq_iterations;
        c.seed = self.seed;
        Ok(c)
    }

    pub fn sh_config(&self, input_dim: usize) -> Result<ShConfig> {
        let mut c = ShConfig::new(self.schedule(input_dim)?);
        c.penalties = self.penalties;
        c.iterations = self.iterations;
        c.lbfgs = self.lbfgs.clone();
        c.per_class_sample = self.per_class_sample;
        c.max_pairwise_entries = self.max_pairwise_entries;
        c.itq_iterations = self.itq_iterations;
        c.seed = self.seed;
        Ok(c)
    }
}

fn number<T: FromStr>((line, value): (usize, &str), key: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("line {line}: cannot parse {key} from {value:?}")))
}

fn set<'a, T: FromStr>(
    get: &impl Fn(&str) -> Option<(usize, &'a str)>,
    key: &str,
    slot: &mut T,
) -> Result<()> {
    if let Some(entry) = get(key) {
        *slot = number(entry, key)?;
    }
    Ok(())
}
