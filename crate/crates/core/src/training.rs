//! Losses, the optimization loop and ablation variants.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
use crate::evaluation::{rescale_rows, score, targets, Metrics};
use crate::hetgnn::{batch_windows, HetGnn, HetGnnConfig, ModelConfig};
use crate::numerics::{AdamConfig, AdamState, ParameterStore, Tape, Tensor, Var};
use crate::relation::{RelationKind, RelationStack};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L1,
    L2,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossChoice {
    L1,
    L2,
    /// Train with both losses and keep the better validation RSE.
    Auto,
}

impl LossChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            LossChoice::L1 => "l1",
            LossChoice::L2 => "l2",
            LossChoice::Auto => "auto",
        }
    }

    pub fn kinds(self) -> &'static [LossKind] {
        match self {
            LossChoice::L1 => &[LossKind::L1],
            LossChoice::L2 => &[LossKind::L2],
            LossChoice::Auto => &[LossKind::L2, LossKind::L1],
        }
    }
}

impl core::str::FromStr for LossChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(LossChoice::L1),
            "l2" => Ok(LossChoice::L2),
            "auto" => Ok(LossChoice::Auto),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

fn loss_terms(tape: &mut Tape, pred: Var, truth: Var) -> Result<(Var, usize)> {
    let (p, t) = (tape.value(pred).shape(), tape.value(truth).shape());
    if p != t || p.is_empty() {
        return Err(Error::Shape {
            op: "loss",
            lhs: p.to_vec(),
            rhs: t.to_vec(),
        });
    }
    let batch = p[0];
    Ok((tape.sub(pred, truth)?, batch))
}

/// `(1/k) Σ_i Σ_j (y_ij − ŷ_ij)²` over a `[k, n]` batch.
pub fn loss_l2(tape: &mut Tape, pred: Var, truth: Var) -> Result<Var> {
    let (diff, batch) = loss_terms(tape, pred, truth)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / batch as f64))
}

/// `(1/k) Σ_i Σ_j |y_ij − ŷ_ij|` over a `[k, n]` batch.
pub fn loss_l1(tape: &mut Tape, pred: Var, truth: Var) -> Result<Var> {
    let (diff, batch) = loss_terms(tape, pred, truth)?;
    let abs = tape.abs(diff);
    let total = tape.sum(abs);
    Ok(tape.scale(total, 1.0 / batch as f64))
}

pub fn loss(kind: LossKind, tape: &mut Tape, pred: Var, truth: Var) -> Result<Var> {
    match kind {
        LossKind::L1 => loss_l1(tape, pred, truth),
        LossKind::L2 => loss_l2(tape, pred, truth),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub loss: LossChoice,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 never stops.
    pub early_stop_patience: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossChoice::Auto,
            batch_size: 32,
            epochs: 100,
            lr: 1e-3,
            seed: 0,
            early_stop_patience: 15,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be a finite non-negative number, got {}", self.lr)));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub loss: LossKind,
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Metrics,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: HetGnn,
    /// Parameters of the best validation epoch.
    pub store: ParameterStore,
    pub loss: LossKind,
    pub best_epoch: usize,
    pub best_val: Metrics,
    /// Records of every run, in training order.
    pub log: Vec<EpochRecord>,
}

/// Samples and the per-variable scales that map them back to original units.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [WindowSample],
    pub valid: &'a [WindowSample],
    pub scales: &'a [f64],
}

const EVAL_CHUNK: usize = 128;

/// Scores a model on samples in original units.
pub fn evaluate(
    model: &HetGnn,
    store: &ParameterStore,
    samples: &[WindowSample],
    scales: &[f64],
) -> Result<crate::evaluation::ForecastReport> {
    let n = model.config.n;
    let mut pred = model.predict(store, samples, EVAL_CHUNK)?;
    let mut truth = targets(samples);
    rescale_rows(&mut pred, scales);
    rescale_rows(&mut truth, scales);
    score(&pred, &truth, n, 0)
}

/// Trains one model per selected loss and keeps the best validation RSE.
///
/// `clock` returns milliseconds; it only feeds the `wall_ms` log column.
pub fn train(
    config: &HetGnnConfig,
    stack: &RelationStack,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    clock: &mut dyn FnMut() -> u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    config.validate()?;
    if data.train.is_empty() || data.valid.len() < 2 {
        return Err(Error::Contract(format!(
            "training needs train samples and at least two validation samples (got {} and {})",
            data.train.len(),
            data.valid.len()
        )));
    }
    if data.scales.len() != config.n {
        return Err(Error::Dimension(format!("{} scales for {} variables", data.scales.len(), config.n)));
    }
    let mut log = Vec::new();
    let mut best: Option<TrainOutcome> = None;
    for &kind in cfg.loss.kinds() {
        let run = train_single(config, stack, data, cfg, kind, clock)?;
        log.extend_from_slice(&run.log);
        let better = match &best {
            Some(b) => run.best_val.rse < b.best_val.rse,
            None => true,
        };
        if better {
            best = Some(run);
        }
    }
    let mut outcome = best.expect("at least one loss kind");
    outcome.log = log;
    Ok(outcome)
}

fn train_single(
    config: &HetGnnConfig,
    stack: &RelationStack,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    kind: LossKind,
    clock: &mut dyn FnMut() -> u64,
) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParameterStore::new();
    let model = HetGnn::new(config.clone(), stack, &mut store, &mut rng)?;
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &store,
    );
    let (n, window) = (config.n, config.window);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(usize, Metrics, ParameterStore)> = None;

    for epoch in 1..=cfg.epochs {
        let started = clock();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&WindowSample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let windows = batch_windows(&batch, n, window)?;
            let truth: Vec<f64> = batch.iter().flat_map(|s| s.target.iter().copied()).collect();
            let mut tape = Tape::new();
            let pred = model.forward(&mut tape, &store, &windows)?;
            let truth = tape.constant(Tensor::new(&[batch.len(), n], truth)?);
            let l = loss(kind, &mut tape, pred, truth)?;
            let value = tape.value(l).item().expect("scalar loss");
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, lr: cfg.lr });
            }
            total += value * batch.len() as f64;
            let grads = tape.backward(l)?;
            store.accumulate(&grads);
            if cfg.clip_norm > 0.0 {
                store.clip_grad_norm(cfg.clip_norm);
            }
            adam.step(&mut store)?;
        }
        let train_loss = total / data.train.len() as f64;
        let val = evaluate(&model, &store, data.valid, data.scales)?.metrics();
        if !val.rse.is_finite() {
            return Err(Error::Diverged { epoch, lr: cfg.lr });
        }
        log.push(EpochRecord {
            loss: kind,
            epoch,
            train_loss,
            val,
            wall_ms: clock().saturating_sub(started),
        });
        match &best {
            Some((_, b, _)) if val.rse >= b.rse => {}
            _ => best = Some((epoch, val, store.clone())),
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if cfg.early_stop_patience > 0 && epoch - best_epoch >= cfg.early_stop_patience {
            break;
        }
    }
    let (best_epoch, best_val, store) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        store,
        loss: kind,
        best_epoch,
        best_val,
        log,
    })
}

/// Model variants compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Causality graph only.
    Type1,
    /// Similarity graph only.
    Type2,
    /// Dynamic graph only.
    Type3,
    /// All graphs averaged into one, no attention.
    Type4,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::Type1,
        Variant::Type2,
        Variant::Type3,
        Variant::Type4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Type1 => "type1",
            Variant::Type2 => "type2",
            Variant::Type3 => "type3",
            Variant::Type4 => "type4",
        }
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let only = |kind| base.clone().with_relations(&[kind]);
        match self {
            Variant::Full => ModelConfig {
                attention: true,
                ..base.clone().with_relations(&RelationKind::ALL)
            },
            Variant::Type1 => only(RelationKind::Causality),
            Variant::Type2 => only(RelationKind::Similarity),
            Variant::Type3 => only(RelationKind::Dynamic),
            Variant::Type4 => ModelConfig {
                attention: false,
                ..base.clone().with_relations(&RelationKind::ALL)
            },
        }
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// One line of the training log.
pub fn format_record(r: &EpochRecord) -> String {
    format!(
        "loss={} epoch={} train_loss={:e} val_rse={:e} val_rae={:e} val_corr={:e} wall_ms={}",
        r.loss.as_str(),
        r.epoch,
        r.train_loss,
        r.val.rse,
        r.val.rae,
        r.val.corr,
        r.wall_ms
    )
}
