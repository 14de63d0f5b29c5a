//! Run configuration: `key = value` text with `#` comments, flag overrides
//! and a canonical resolved snapshot.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datakit::{GeneratorConfig, SplitSpec};
use crate::error::{MrisError, Result};
use crate::evaluation::ProbeConfig;
use crate::metric::Reduction;
use crate::numerics::Activation;
use crate::pipeline::{Preprocess, TargetGroups};
use crate::synthesis::SynthesisConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    /// Worker threads for training and evaluation; 0 uses every core.
    pub threads: usize,
    pub normalize_query: bool,
    pub clip_query: bool,
    pub groups: TargetGroups,
    pub synthesis: SynthesisConfig,
    pub probe: ProbeConfig,
    pub baseline_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("run"),
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
            threads: 0,
            normalize_query: false,
            clip_query: false,
            groups: TargetGroups::Combined,
            synthesis: SynthesisConfig::default(),
            probe: ProbeConfig::default(),
            baseline_seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| MrisError::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(MrisError::Config(format!("invalid boolean '{value}' for '{key}'"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let value = value.trim();
    if value.is_empty() || value == "none" {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
    }
}

fn parse_split(key: &str, value: &str) -> Result<SplitSpec> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(MrisError::Config(format!(
            "'{key}' needs three comma-separated values (train_db, downstream, test)"
        )));
    }
    if parts.iter().all(|p| p.parse::<usize>().is_ok()) {
        let c: Vec<usize> = parts.iter().map(|p| p.parse().unwrap_or(0)).collect();
        return Ok(SplitSpec::Counts([c[0], c[1], c[2]]));
    }
    let f: Vec<f64> = parts.iter().map(|p| parse(key, p)).collect::<Result<_>>()?;
    Ok(SplitSpec::Fractions([f[0], f[1], f[2]]))
}

fn split_text(s: &SplitSpec) -> String {
    match s {
        SplitSpec::Counts(c) => join(c),
        SplitSpec::Fractions(f) => f.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","),
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Identity => "identity",
        Activation::Relu => "relu",
        Activation::Tanh => "tanh",
    }
}

impl RunConfig {
    /// Parses config text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                MrisError::Config(format!("line {}: expected 'key = value', got '{raw}'", n + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Reads `path` (if given), then applies `overrides` in order and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    MrisError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                RunConfig::from_text(&text)?
            }
            None => RunConfig::default(),
        };
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let g = &mut self.generator;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "run_dir" => self.run_dir = PathBuf::from(value),
            "threads" => self.threads = parse(key, value)?,
            "generate.subjects" => g.num_subjects = parse(key, value)?,
            "generate.timepoints" => g.max_timepoints = parse(key, value)?,
            "generate.latent_dim" => g.latent_dim = parse(key, value)?,
            "generate.query_dim" => g.query_dim = parse(key, value)?,
            "generate.height" => g.height = parse(key, value)?,
            "generate.width" => g.width = parse(key, value)?,
            "generate.noise" => g.noise = parse(key, value)?,
            "generate.drift_rate" => g.drift_rate = parse(key, value)?,
            "generate.severity_scale" => g.severity_scale = parse(key, value)?,
            "generate.query_offset" => g.query_offset = parse(key, value)?,
            "generate.target_offset" => g.target_offset = parse(key, value)?,
            "generate.split" => g.split = parse_split(key, value)?,
            "train.embed_dim" => t.embed_dim = parse(key, value)?,
            "train.hidden" => t.hidden = parse_list(key, value)?,
            "train.activation" => {
                t.activation = Activation::parse(value.trim()).ok_or_else(|| {
                    MrisError::Config(format!("unknown activation '{value}'"))
                })?
            }
            "train.margin" => t.loss.margin = parse(key, value)?,
            "train.reduction" => {
                t.loss.reduction = Reduction::parse(value.trim()).ok_or_else(|| {
                    MrisError::Config(format!("unknown reduction '{value}'"))
                })?
            }
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.query_lr" => t.query_lr = parse(key, value)?,
            "train.target_lr" => t.target_lr = parse(key, value)?,
            "train.lr_decay" => t.decay_factor = parse(key, value)?,
            "train.lr_decay_every" => t.decay_every = parse(key, value)?,
            "train.beta1" => t.adamw.beta1 = parse(key, value)?,
            "train.beta2" => t.adamw.beta2 = parse(key, value)?,
            "train.epsilon" => t.adamw.epsilon = parse(key, value)?,
            "train.weight_decay" => t.adamw.weight_decay = parse(key, value)?,
            "data.normalize_query" => self.normalize_query = parse_bool(key, value)?,
            "data.clip_query" => self.clip_query = parse_bool(key, value)?,
            "data.target_groups" => self.groups = TargetGroups::parse(value)?,
            "synthesis.k" => self.synthesis.k = parse(key, value)?,
            "probe.epochs" => self.probe.epochs = parse(key, value)?,
            "probe.lr" => self.probe.lr = parse(key, value)?,
            "probe.weight_decay" => self.probe.weight_decay = parse(key, value)?,
            "probe.standardize" => self.probe.standardize = parse_bool(key, value)?,
            "evaluate.baseline_seed" => self.baseline_seed = parse(key, value)?,
            _ => return Err(MrisError::Config(format!("unknown config key '{key}'"))),
        }
        self.generator.seed = self.seed;
        self.train.seed = self.seed;
        self.probe.seed = self.seed;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        if self.synthesis.k == 0 {
            return Err(MrisError::Config("synthesis.k must be >= 1".into()));
        }
        if self.probe.epochs == 0 || !(self.probe.lr > 0.0) || !(self.probe.weight_decay >= 0.0) {
            return Err(MrisError::Config("probe settings must be positive".into()));
        }
        if let TargetGroups::Rows(r) = &self.groups {
            if r.is_empty() {
                return Err(MrisError::Config("data.target_groups is empty".into()));
            }
        }
        Ok(())
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess {
            normalize_query: self.normalize_query,
            clip_query: self.clip_query,
            rows: None,
        }
    }

    /// Canonical `key = value` listing of every setting.
    pub fn to_text(&self) -> String {
        let g = &self.generator;
        let t = &self.train;
        let rows: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("run_dir", self.run_dir.display().to_string()),
            ("threads", self.threads.to_string()),
            ("generate.subjects", g.num_subjects.to_string()),
            ("generate.timepoints", g.max_timepoints.to_string()),
            ("generate.latent_dim", g.latent_dim.to_string()),
            ("generate.query_dim", g.query_dim.to_string()),
            ("generate.height", g.height.to_string()),
            ("generate.width", g.width.to_string()),
            ("generate.noise", format!("{:?}", g.noise)),
            ("generate.drift_rate", format!("{:?}", g.drift_rate)),
            ("generate.severity_scale", format!("{:?}", g.severity_scale)),
            ("generate.query_offset", format!("{:?}", g.query_offset)),
            ("generate.target_offset", format!("{:?}", g.target_offset)),
            ("generate.split", split_text(&g.split)),
            ("train.embed_dim", t.embed_dim.to_string()),
            ("train.hidden", join(&t.hidden)),
            ("train.activation", activation_name(t.activation).into()),
            ("train.margin", format!("{:?}", t.loss.margin)),
            ("train.reduction", t.loss.reduction.name().into()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.query_lr", format!("{:?}", t.query_lr)),
            ("train.target_lr", format!("{:?}", t.target_lr)),
            ("train.lr_decay", format!("{:?}", t.decay_factor)),
            ("train.lr_decay_every", t.decay_every.to_string()),
            ("train.beta1", format!("{:?}", t.adamw.beta1)),
            ("train.beta2", format!("{:?}", t.adamw.beta2)),
            ("train.epsilon", format!("{:?}", t.adamw.epsilon)),
            ("train.weight_decay", format!("{:?}", t.adamw.weight_decay)),
            ("data.normalize_query", self.normalize_query.to_string()),
            ("data.clip_query", self.clip_query.to_string()),
            ("data.target_groups", self.groups.name()),
            ("synthesis.k", self.synthesis.k.to_string()),
            ("probe.epochs", self.probe.epochs.to_string()),
            ("probe.lr", format!("{:?}", self.probe.lr)),
            ("probe.weight_decay", format!("{:?}", self.probe.weight_decay)),
            ("probe.standardize", self.probe.standardize.to_string()),
            ("evaluate.baseline_seed", self.baseline_seed.to_string()),
        ];
        rows.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
