//! Flat `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors. Later assignments win, which is how flag overrides are applied.

use std::fmt::Write as _;
use std::str::FromStr;

use hetcast_core::dataset::{DatasetConfig, Normalization};
use hetcast_core::hetgnn::{HetGnnConfig, ModelConfig};
use hetcast_core::relation::{AdjacencyNorm, RelationConfig, RelationKind};
use hetcast_core::temporal::{Activation, TemporalConfig};
use hetcast_core::training::{LossChoice, TrainConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub delimiter: char,
    pub header: bool,
    pub window: usize,
    pub horizons: Vec<usize>,
    pub split_ratios: [f64; 3],
    pub normalization: Normalization,
    pub relation: RelationConfig,
    pub temporal: TemporalConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            delimiter: ',',
            header: false,
            window: 32,
            horizons: vec![3],
            split_ratios: [0.6, 0.2, 0.2],
            normalization: Normalization::MaxAbs,
            relation: RelationConfig::default(),
            temporal: TemporalConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Keys in canonical output order.
pub const KEYS: &[&str] = &[
    "delimiter",
    "header",
    "window",
    "horizons",
    "split_ratios",
    "normalization",
    "te_history",
    "te_bins",
    "threshold",
    "adjacency_norm",
    "kernel_sizes",
    "channels_per_branch",
    "temporal_activation",
    "gnn_layers",
    "hidden_size",
    "relations",
    "attention",
    "loss",
    "batch_size",
    "epochs",
    "lr",
    "seed",
    "early_stop_patience",
    "clip_norm",
];

/// Keys that shape the prepared data; a manifest fixes them.
pub const DATA_KEYS: &[&str] = &["delimiter", "header", "window", "split_ratios", "normalization"];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "delimiter" => {
                self.delimiter = match value {
                    "tab" | "\\t" => '\t',
                    "space" => ' ',
                    v if v.chars().count() == 1 => v.chars().next().unwrap(),
                    v => return Err(Error::Config(format!("delimiter must be one character, got {v:?}"))),
                }
            }
            "header" => self.header = parse_bool(key, value)?,
            "window" => self.window = parse(key, value)?,
            "horizons" | "horizon" => self.horizons = parse_list(key, value)?,
            "split_ratios" => {
                let r: Vec<f64> = parse_list(key, value)?;
                self.split_ratios = r
                    .try_into()
                    .map_err(|_| Error::Config("split_ratios needs three values".into()))?;
            }
            "normalization" => self.normalization = value.parse()?,
            "te_history" => self.relation.te_history = parse(key, value)?,
            "te_bins" => self.relation.te_bins = parse(key, value)?,
            "threshold" => self.relation.threshold = parse(key, value)?,
            "adjacency_norm" => self.relation.adjacency_norm = value.parse::<AdjacencyNorm>()?,
            "kernel_sizes" => self.temporal.kernel_sizes = parse_list(key, value)?,
            "channels_per_branch" => self.temporal.channels_per_branch = parse(key, value)?,
            "temporal_activation" => self.temporal.activation = value.parse::<Activation>()?,
            "gnn_layers" => self.model.gnn_layers = parse(key, value)?,
            "hidden_size" => self.model.hidden_size = parse(key, value)?,
            "relations" => {
                let kinds = value
                    .split(',')
                    .map(|t| RelationKind::from_tag(t.trim()))
                    .collect::<hetcast_core::Result<Vec<_>>>()?;
                self.model = self.model.clone().with_relations(&kinds);
            }
            "attention" => self.model.attention = parse_bool(key, value)?,
            "loss" => self.train.loss = value.parse::<LossChoice>()?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "seed" => self.train.seed = parse(key, value)?,
            "early_stop_patience" => self.train.early_stop_patience = parse(key, value)?,
            "clip_norm" => self.train.clip_norm = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` override strings.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn value(&self, key: &str) -> String {
        match key {
            "delimiter" => match self.delimiter {
                '\t' => "tab".into(),
                ' ' => "space".into(),
                c => c.to_string(),
            },
            "header" => self.header.to_string(),
            "window" => self.window.to_string(),
            "horizons" => join(&self.horizons),
            "split_ratios" => join(&self.split_ratios),
            "normalization" => self.normalization.as_str().into(),
            "te_history" => self.relation.te_history.to_string(),
            "te_bins" => self.relation.te_bins.to_string(),
            "threshold" => self.relation.threshold.to_string(),
            "adjacency_norm" => self.relation.adjacency_norm.as_str().into(),
            "kernel_sizes" => join(&self.temporal.kernel_sizes),
            "channels_per_branch" => self.temporal.channels_per_branch.to_string(),
            "temporal_activation" => self.temporal.activation.as_str().into(),
            "gnn_layers" => self.model.gnn_layers.to_string(),
            "hidden_size" => self.model.hidden_size.to_string(),
            "relations" => self.model.relations.iter().map(|k| k.tag()).collect::<Vec<_>>().join(","),
            "attention" => self.model.attention.to_string(),
            "loss" => self.train.loss.as_str().into(),
            "batch_size" => self.train.batch_size.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "lr" => self.train.lr.to_string(),
            "seed" => self.train.seed.to_string(),
            "early_stop_patience" => self.train.early_stop_patience.to_string(),
            "clip_norm" => self.train.clip_norm.to_string(),
            other => panic!("unknown key {other}"),
        }
    }

    /// Canonical text: every key in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        self.text_for(KEYS)
    }

    pub fn text_for(&self, keys: &[&str]) -> String {
        let mut out = String::new();
        for key in keys {
            writeln!(out, "{key}={}", self.value(key)).unwrap();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() {
            return Err(Error::Config("horizons must list at least one horizon".into()));
        }
        for &h in &self.horizons {
            self.dataset(h).validate()?;
        }
        self.relation.validate()?;
        self.temporal.validate(self.window)?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn dataset(&self, horizon: usize) -> DatasetConfig {
        DatasetConfig {
            window: self.window,
            horizon,
            split_ratios: self.split_ratios,
            normalization: self.normalization,
        }
    }

    pub fn model_config(&self, n: usize) -> HetGnnConfig {
        HetGnnConfig {
            n,
            window: self.window,
            temporal: self.temporal.clone(),
            model: self.model.clone(),
            threshold: self.relation.threshold,
            norm: self.relation.adjacency_norm,
        }
    }
}
