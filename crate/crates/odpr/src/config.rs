//! Experiment configuration files.
//!
//! Flat `key = value` lines with dotted sections, `#` comments, and hard
//! rejection of unknown keys. Example:
//!
//! ```text
//! dataset.generator = bandit
//! dataset.per_mode = 250
//! priority.kind = advantage
//! priority.iterations = 5
//! train.wiring = dr
//! seeds = 0,1,2
//! out.dir = runs/bandit
//! ```

use std::path::{Path, PathBuf};

use crate::algos::{TrainConfig, Wiring};
use crate::error::OdprError;
use crate::priority::{OdprConfig, PriorityKind};
use crate::value::FitConfig;
use crate::Result;

/// Where the experiment's transitions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// A dataset or CSV file on disk.
    Path(PathBuf),
    /// The four-mode Gaussian bandit generator.
    Bandit { per_mode: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub seeds: Vec<u64>,
    pub priority_kind: String,
    pub top_fraction: f64,
    pub odpr: OdprConfig,
    pub fit: FitConfig,
    pub train: TrainConfig,
    pub algo: String,
    pub mdp_kind: String,
    pub mdp_states: usize,
    pub mdp_actions: usize,
    pub mdp_count: usize,
    pub epsilon: f64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Bandit { per_mode: 250 },
            seeds: vec![0],
            priority_kind: "advantage".into(),
            top_fraction: 0.1,
            odpr: OdprConfig::default(),
            fit: FitConfig::default(),
            train: TrainConfig::default(),
            algo: "td3bc".into(),
            mdp_kind: "concat".into(),
            mdp_states: 8,
            mdp_actions: 3,
            mdp_count: 20,
            epsilon: 0.05,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn cfg_err(line: usize, msg: impl Into<String>) -> OdprError {
    OdprError::Config { line, msg: msg.into() }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse::<T>()
        .map_err(|_| cfg_err(line, format!("cannot parse '{v}' for {key}")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(cfg_err(line, format!("cannot parse '{v}' for {key} (expected true/false)"))),
    }
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| cfg_err(line, format!("cannot parse '{s}' in {key}"))))
        .collect()
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_named(&text)
    }

    pub fn from_str_named(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| cfg_err(line, format!("expected 'key = value', got '{body}'")))?;
            let (key, v) = (key.trim(), value.trim());
            if v.is_empty() {
                return Err(cfg_err(line, format!("empty value for {key}")));
            }
            match key {
                "dataset.path" => cfg.dataset = DatasetSource::Path(PathBuf::from(v)),
                "dataset.generator" => match v {
                    "bandit" => {
                        if !matches!(cfg.dataset, DatasetSource::Bandit { .. }) {
                            cfg.dataset = DatasetSource::Bandit { per_mode: 250 };
                        }
                    }
                    other => {
                        return Err(cfg_err(line, format!("unknown dataset generator '{other}'")))
                    }
                },
                "dataset.per_mode" => {
                    let per_mode = parse_num(line, key, v)?;
                    cfg.dataset = DatasetSource::Bandit { per_mode };
                }
                "seeds" => cfg.seeds = parse_list(line, key, v)?,
                "priority.kind" => cfg.priority_kind = v.to_string(),
                "priority.iterations" => cfg.odpr.iterations = parse_num(line, key, v)?,
                "priority.sigma" => cfg.odpr.sigma = parse_num(line, key, v)?,
                "priority.p_base" => cfg.odpr.p_base = parse_num(line, key, v)?,
                "priority.clip_below_one" => cfg.odpr.clip_below_one = parse_bool(line, key, v)?,
                "priority.top_fraction" => cfg.top_fraction = parse_num(line, key, v)?,
                "fit.gamma" => cfg.fit.gamma = parse_num(line, key, v)?,
                "fit.steps" => cfg.fit.steps = parse_num(line, key, v)?,
                "fit.batch_size" => cfg.fit.batch_size = parse_num(line, key, v)?,
                "fit.learning_rate" => cfg.fit.learning_rate = parse_num(line, key, v)?,
                "fit.hidden" => cfg.fit.hidden = parse_list(line, key, v)?,
                "fit.double_heads" => cfg.fit.double_heads = parse_bool(line, key, v)?,
                "train.steps" => cfg.train.steps = parse_num(line, key, v)?,
                "train.batch_size" => cfg.train.batch_size = parse_num(line, key, v)?,
                "train.actor_lr" => cfg.train.actor_lr = parse_num(line, key, v)?,
                "train.critic_lr" => cfg.train.critic_lr = parse_num(line, key, v)?,
                "train.alpha" => cfg.train.alpha = parse_num(line, key, v)?,
                "train.policy_delay" => cfg.train.policy_delay = parse_num(line, key, v)?,
                "train.hidden" => cfg.train.hidden = parse_list(line, key, v)?,
                "train.log_every" => cfg.train.log_every = parse_num(line, key, v)?,
                "train.wiring" => {
                    cfg.train.wiring = Wiring::parse(v).map_err(|e| cfg_err(line, e.to_string()))?
                }
                "train.algo" => match v {
                    "td3bc" | "bc" => cfg.algo = v.to_string(),
                    other => return Err(cfg_err(line, format!("unknown algo '{other}'"))),
                },
                "mdp.kind" => match v {
                    "concat" | "random" => cfg.mdp_kind = v.to_string(),
                    other => return Err(cfg_err(line, format!("unknown mdp kind '{other}'"))),
                },
                "mdp.n_states" => cfg.mdp_states = parse_num(line, key, v)?,
                "mdp.n_actions" => cfg.mdp_actions = parse_num(line, key, v)?,
                "mdp.count" => cfg.mdp_count = parse_num(line, key, v)?,
                "constraint.epsilon" => cfg.epsilon = parse_num(line, key, v)?,
                "out.dir" => cfg.out_dir = PathBuf::from(v),
                other => return Err(cfg_err(line, format!("unknown key '{other}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(OdprError::invalid("need at least one seed"));
        }
        if let DatasetSource::Bandit { per_mode } = self.dataset {
            if per_mode == 0 {
                return Err(OdprError::invalid("dataset.per_mode must be positive"));
            }
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(OdprError::invalid(format!(
                "priority.top_fraction must be in (0, 1], got {}",
                self.top_fraction
            )));
        }
        if self.mdp_states == 0 || self.mdp_actions == 0 || self.mdp_count == 0 {
            return Err(OdprError::invalid("mdp sizes and count must be positive"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(OdprError::invalid(format!(
                "constraint.epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        self.odpr.validate()?;
        self.fit.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Materialize the configured baseline priority family.
    pub fn priority_kind(&self) -> Result<PriorityKind> {
        match self.priority_kind.as_str() {
            "advantage" => Ok(PriorityKind::Advantage),
            "return" => Ok(PriorityKind::Return),
            "abs_td" => Ok(PriorityKind::AbsTd),
            "traj_uniform" => Ok(PriorityKind::TrajUniform),
            "percentage" => Ok(PriorityKind::Percentage(self.top_fraction)),
            other => Err(OdprError::invalid(format!(
                "unknown priority.kind '{other}' \
                 (expected advantage|return|abs_td|traj_uniform|percentage)"
            ))),
        }
    }

    /// Apply command-line overrides on top of the file.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.seeds = vec![s];
        }
        if let Some(o) = out {
            self.out_dir = o;
        }
        self
    }
}
