//! The steps behind each subcommand, independent of argument parsing.

use std::path::Path;

use hetcast_core::dataset::{chronological_split, make_samples, normalize, SeriesMatrix, WindowSample};
use hetcast_core::evaluation::{persistence_baseline, ForecastReport};
use hetcast_core::relation::{build_relation_stack, RelationStack};
use hetcast_core::training::{evaluate, train, TrainData};

use crate::checkpoint::{Checkpoint, TrainingSummary};
use crate::config::{RunConfig, DATA_KEYS};
use crate::error::{Error, Result};
use crate::io::load_series;
use crate::log::format_log;
use crate::manifest::Manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn range(self, m: &Manifest) -> std::ops::Range<usize> {
        match self {
            Split::Train => m.train.clone(),
            Split::Valid => m.valid.clone(),
            Split::Test => m.test.clone(),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Loads the raw data, fixes the splits and fits the scales on the train range.
pub fn prepare(data: &Path, cfg: &RunConfig) -> Result<(Manifest, SeriesMatrix)> {
    cfg.validate()?;
    let (raw, sha) = load_series(data, cfg.delimiter, cfg.header)?;
    let mut splits = None;
    for &h in &cfg.horizons {
        splits = Some(chronological_split(raw.len(), &cfg.dataset(h))?);
    }
    let splits = splits.expect("validated: horizons nonempty");
    let (normalized, scales) = normalize(&raw, cfg.normalization, splits.train.clone())?;
    let manifest = Manifest {
        data_path: data.to_path_buf(),
        data_sha256: sha,
        data_config: cfg.text_for(DATA_KEYS),
        n: raw.n(),
        len: raw.len(),
        train: splits.train,
        valid: splits.valid,
        test: splits.test,
        scales,
    };
    Ok((manifest, normalized))
}

/// Reloads the manifest's data file, checking it is unchanged, and returns
/// it normalized with the manifest's scales.
pub fn load_prepared(manifest: &Manifest) -> Result<SeriesMatrix> {
    let cfg = RunConfig::parse(&manifest.data_config)?;
    let (raw, sha) = load_series(&manifest.data_path, cfg.delimiter, cfg.header)?;
    if sha != manifest.data_sha256 {
        return Err(Error::Mismatch(format!(
            "{} changed since `prepare` (sha256 {sha}, manifest {})",
            manifest.data_path.display(),
            manifest.data_sha256
        )));
    }
    let (normalized, scales) = normalize(&raw, cfg.normalization, manifest.train.clone())?;
    if scales != manifest.scales {
        return Err(Error::Mismatch("recomputed scales differ from the manifest".into()));
    }
    Ok(normalized)
}

pub fn compute_relations(data: &SeriesMatrix, manifest: &Manifest, cfg: &RunConfig) -> Result<RelationStack> {
    Ok(build_relation_stack(data, manifest.train.clone(), &cfg.relation)?)
}

pub fn samples(data: &SeriesMatrix, manifest: &Manifest, cfg: &RunConfig, horizon: usize, split: Split) -> Result<Vec<WindowSample>> {
    Ok(make_samples(data, split.range(manifest), &cfg.dataset(horizon))?)
}

pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    pub log: String,
}

/// Trains one model for `horizon`. Errors from the optimization itself are
/// returned as [`Error::Core`].
pub fn train_horizon(
    data: &SeriesMatrix,
    manifest: &Manifest,
    stack: &RelationStack,
    cfg: &RunConfig,
    horizon: usize,
    clock: &mut dyn FnMut() -> u64,
) -> Result<TrainedModel> {
    let train_samples = samples(data, manifest, cfg, horizon, Split::Train)?;
    let valid_samples = samples(data, manifest, cfg, horizon, Split::Valid)?;
    let outcome = train(
        &cfg.model_config(manifest.n),
        stack,
        TrainData {
            train: &train_samples,
            valid: &valid_samples,
            scales: &manifest.scales,
        },
        &cfg.train,
        clock,
    )?;
    let mut stored = cfg.clone();
    stored.horizons = vec![horizon];
    let log = format_log(&outcome.log, outcome.loss, outcome.best_epoch, outcome.best_val);
    Ok(TrainedModel {
        checkpoint: Checkpoint {
            manifest_hash: manifest.hash(),
            config: stored,
            summary: TrainingSummary {
                loss: outcome.loss,
                best_epoch: outcome.best_epoch,
                val: outcome.best_val,
            },
            horizon,
            scales: manifest.scales.clone(),
            stack: stack.clone(),
            params: outcome.store,
        },
        log,
    })
}

pub fn evaluate_checkpoint(ckpt: &Checkpoint, data: &SeriesMatrix, manifest: &Manifest, split: Split) -> Result<ForecastReport> {
    if ckpt.manifest_hash != manifest.hash() {
        return Err(Error::Mismatch(format!(
            "checkpoint was trained on manifest {} but the current manifest is {}",
            ckpt.manifest_hash,
            manifest.hash()
        )));
    }
    let model = ckpt.model()?;
    let s = samples(data, manifest, &ckpt.config, ckpt.horizon, split)?;
    let mut report = evaluate(&model, &ckpt.params, &s, &ckpt.scales)?;
    report.horizon = ckpt.horizon;
    Ok(report)
}

pub fn persistence(data: &SeriesMatrix, manifest: &Manifest, cfg: &RunConfig, horizon: usize, split: Split) -> Result<ForecastReport> {
    let s = samples(data, manifest, cfg, horizon, split)?;
    Ok(persistence_baseline(&s, manifest.n, horizon, &manifest.scales)?)
}

/// Forecasts from one window given in original units, variable-major `n × T`.
pub fn predict_window(ckpt: &Checkpoint, window: &[f64]) -> Result<Vec<f64>> {
    let n = ckpt.stack.n;
    let t = ckpt.config.window;
    if window.len() != n * t {
        return Err(Error::Config(format!(
            "window holds {} values, expected {t} rows of {n} variables",
            window.len()
        )));
    }
    let normalized: Vec<f64> = window
        .iter()
        .enumerate()
        .map(|(i, v)| v / ckpt.scales[i / t])
        .collect();
    let sample = WindowSample {
        input: normalized,
        target: vec![0.0; n],
        origin_index: 0,
    };
    let model = ckpt.model()?;
    let mut out = model.predict(&ckpt.params, std::slice::from_ref(&sample), 1)?;
    for (v, s) in out.iter_mut().zip(&ckpt.scales) {
        *v *= s;
    }
    Ok(out)
}
