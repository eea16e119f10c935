//! The heterogeneous relation-graph forecaster.
//!
//! A layer updates node embeddings `H` as
//!
//! ```text
//! H' = σ( H·W0 + Σ_r softmax(α)_r · Â_r · H · W_r )
//! ```
//!
//! over the enabled relations `r`, with `σ = relu` on hidden layers and the
//! identity on the last. The dynamic relation is rebuilt for every window as
//! `relu(D·W_dyn)` on the window's distance base `D`, then sparsified through
//! a constant mask (gradients flow through surviving entries) and row
//! normalized. Node embeddings are read out by one linear map shared across
//! variables.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
use crate::numerics::{glorot_uniform, ParamId, ParameterStore, Tape, Tensor, Var};
use crate::relation::{distance_base, AdjacencyNorm, RelationKind, RelationStack};
use crate::temporal::{temporal_embed, Activation, TemporalConfig, TemporalParams};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub gnn_layers: usize,
    pub hidden_size: usize,
    /// Enabled relations, kept in canonical order (sim, cas, dyn).
    pub relations: Vec<RelationKind>,
    /// With attention off, the enabled adjacencies are averaged into one graph.
    pub attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gnn_layers: 2,
            hidden_size: 50,
            relations: RelationKind::ALL.to_vec(),
            attention: true,
        }
    }
}

impl ModelConfig {
    pub fn with_relations(mut self, relations: &[RelationKind]) -> Self {
        self.relations = RelationKind::ALL
            .iter()
            .copied()
            .filter(|k| relations.contains(k))
            .collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.gnn_layers == 0 {
            return Err(Error::Config("gnn_layers must be at least 1".into()));
        }
        if self.hidden_size == 0 {
            return Err(Error::Config("hidden_size must be at least 1".into()));
        }
        if self.relations.is_empty() {
            return Err(Error::Config("at least one relation must be enabled".into()));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a model's shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct HetGnnConfig {
    pub n: usize,
    pub window: usize,
    pub temporal: TemporalConfig,
    pub model: ModelConfig,
    /// Sparsification threshold of the dynamic adjacency.
    pub threshold: f64,
    pub norm: AdjacencyNorm,
}

impl HetGnnConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.temporal.validate(self.window)?;
        if self.n < 2 {
            return Err(Error::Dimension(format!("need at least 2 variables, got {}", self.n)));
        }
        Ok(())
    }
}

/// One relation's contribution to a propagation step.
#[derive(Debug, Clone, Copy)]
pub struct RelationTerm {
    pub tag: &'static str,
    /// `[n, n]` or `[B, n, n]`.
    pub adjacency: Var,
    /// `[d, d']`.
    pub weight: Var,
}

fn in_layer(layer: usize, part: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| Error::Dimension(format!("layer {layer}, {part}: {e}"))
}

/// One propagation step.
///
/// With `attention` the relation terms are weighted by the softmax of the
/// logits; without it every term gets weight `1/|R|`.
pub fn propagate(
    tape: &mut Tape,
    layer: usize,
    h: Var,
    self_weight: Var,
    relations: &[RelationTerm],
    attention: Option<Var>,
    activation: Activation,
) -> Result<Var> {
    let mut acc = tape
        .matmul(h, self_weight)
        .map_err(in_layer(layer, "self term"))?;
    let weights = match attention {
        Some(logits) => {
            let count = tape.value(logits).numel();
            if count != relations.len() {
                return Err(Error::Dimension(format!(
                    "layer {layer}: {count} attention logits for {} relations",
                    relations.len()
                )));
            }
            Some(tape.softmax(logits))
        }
        None => None,
    };
    for (r, term) in relations.iter().enumerate() {
        let part = format!("relation {}", term.tag);
        let projected = tape
            .matmul(h, term.weight)
            .map_err(in_layer(layer, &part))?;
        let aggregated = tape
            .matmul(term.adjacency, projected)
            .map_err(in_layer(layer, &part))?;
        let weighted = match weights {
            Some(w) => {
                let wr = tape.slice(w, r, 1)?;
                tape.mul(aggregated, wr)?
            }
            None => tape.scale(aggregated, 1.0 / relations.len() as f64),
        };
        acc = if tape.value(acc).numel() >= tape.value(weighted).numel() {
            tape.add(acc, weighted)
        } else {
            tape.add(weighted, acc)
        }
        .map_err(in_layer(layer, &part))?;
    }
    Ok(match activation {
        Activation::Relu => tape.relu(acc),
        Activation::Identity => acc,
    })
}

/// `relu(base · W)`, masked below `threshold`, then normalized per `norm`.
pub fn dynamic_adjacency(
    tape: &mut Tape,
    base: Var,
    weight: Var,
    threshold: f64,
    norm: AdjacencyNorm,
) -> Result<Var> {
    let product = tape.matmul(base, weight)?;
    let active = tape.relu(product);
    let mask_values = tape
        .value(active)
        .data()
        .iter()
        .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
        .collect();
    let mask = tape.constant(Tensor::new(tape.value(active).shape(), mask_values)?);
    let sparse = tape.mul(active, mask)?;
    Ok(match norm {
        AdjacencyNorm::Row => tape.row_normalize(sparse),
        AdjacencyNorm::None => sparse,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub self_weight: ParamId,
    /// One weight per propagated graph (a single one when averaging).
    pub relation_weights: Vec<ParamId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HetGnnParams {
    pub temporal: TemporalParams,
    pub dynamic: Option<ParamId>,
    pub layers: Vec<LayerParams>,
    pub attention: Option<ParamId>,
    pub readout_weight: ParamId,
    pub readout_bias: ParamId,
}

/// Names of the graphs propagated in each layer.
fn graph_tags(model: &ModelConfig) -> Vec<&'static str> {
    if model.attention {
        model.relations.iter().map(|k| k.tag()).collect()
    } else {
        vec!["avg"]
    }
}

/// Stacks sample windows into a `[B, n, T]` tensor.
pub fn batch_windows(samples: &[&WindowSample], n: usize, window: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(samples.len() * n * window);
    for s in samples {
        if s.input.len() != n * window {
            return Err(Error::Dimension(format!(
                "window of {} values, expected {n} x {window}",
                s.input.len()
            )));
        }
        data.extend_from_slice(&s.input);
    }
    Tensor::new(&[samples.len(), n, window], data)
}

/// A configured model: shapes, static graphs and parameter handles. The
/// parameter values live in a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct HetGnn {
    pub config: HetGnnConfig,
    statics: Vec<(RelationKind, Tensor)>,
    pub params: HetGnnParams,
}

impl HetGnn {
    /// Registers freshly initialized parameters in `store`.
    pub fn new<R: Rng>(
        config: HetGnnConfig,
        stack: &RelationStack,
        store: &mut ParameterStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let statics = Self::static_graphs(&config, stack)?;
        let n = config.n;
        let temporal = TemporalParams::register(&config.temporal, store, rng)?;
        let dynamic = if config.model.relations.contains(&RelationKind::Dynamic) {
            Some(store.add("dynamic.weight", glorot_uniform(&[n, n], n, n, rng))?)
        } else {
            None
        };
        let tags = graph_tags(&config.model);
        let mut layers = Vec::with_capacity(config.model.gnn_layers);
        let mut d_in = config.temporal.output_dim(config.window);
        let d_out = config.model.hidden_size;
        for l in 0..config.model.gnn_layers {
            let self_weight = store.add(
                format!("gnn.layer{l}.self"),
                glorot_uniform(&[d_in, d_out], d_in, d_out, rng),
            )?;
            let relation_weights = tags
                .iter()
                .map(|tag| {
                    store.add(
                        format!("gnn.layer{l}.{tag}"),
                        glorot_uniform(&[d_in, d_out], d_in, d_out, rng),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            layers.push(LayerParams {
                self_weight,
                relation_weights,
            });
            d_in = d_out;
        }
        let attention = if config.model.attention {
            Some(store.add(
                "attention.logits",
                Tensor::zeros(&[config.model.relations.len()]),
            )?)
        } else {
            None
        };
        let readout_weight = store.add(
            "readout.weight",
            glorot_uniform(&[d_out, 1], d_out, 1, rng),
        )?;
        let readout_bias = store.add("readout.bias", Tensor::zeros(&[1]))?;
        Ok(Self {
            config,
            statics,
            params: HetGnnParams {
                temporal,
                dynamic,
                layers,
                attention,
                readout_weight,
                readout_bias,
            },
        })
    }

    /// Rebinds a model to parameters already present in `store` (e.g. loaded
    /// from a checkpoint), checking every name and shape.
    pub fn from_store(config: HetGnnConfig, stack: &RelationStack, store: &ParameterStore) -> Result<Self> {
        config.validate()?;
        let statics = Self::static_graphs(&config, stack)?;
        let n = config.n;
        let lookup = |name: String, shape: &[usize]| -> Result<ParamId> {
            let id = store
                .find(&name)
                .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))?;
            if store.value(id).shape() != shape {
                return Err(Error::Dimension(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    store.value(id).shape()
                )));
            }
            Ok(id)
        };
        let temporal = TemporalParams::find(&config.temporal, store)?;
        for (i, (&(kernel, bias), &k)) in temporal
            .branches
            .iter()
            .zip(&config.temporal.kernel_sizes)
            .enumerate()
        {
            let c = config.temporal.channels_per_branch;
            if store.value(kernel).shape() != [c, k] || store.value(bias).shape() != [c] {
                return Err(Error::Dimension(format!(
                    "temporal branch {i} parameters do not match kernel {k} with {c} channels"
                )));
            }
        }
        let dynamic = if config.model.relations.contains(&RelationKind::Dynamic) {
            Some(lookup("dynamic.weight".into(), &[n, n])?)
        } else {
            None
        };
        let tags = graph_tags(&config.model);
        let mut layers = Vec::new();
        let mut d_in = config.temporal.output_dim(config.window);
        let d_out = config.model.hidden_size;
        for l in 0..config.model.gnn_layers {
            let self_weight = lookup(format!("gnn.layer{l}.self"), &[d_in, d_out])?;
            let relation_weights = tags
                .iter()
                .map(|tag| lookup(format!("gnn.layer{l}.{tag}"), &[d_in, d_out]))
                .collect::<Result<Vec<_>>>()?;
            layers.push(LayerParams {
                self_weight,
                relation_weights,
            });
            d_in = d_out;
        }
        let attention = if config.model.attention {
            Some(lookup(
                "attention.logits".into(),
                &[config.model.relations.len()],
            )?)
        } else {
            None
        };
        let readout_weight = lookup("readout.weight".into(), &[d_out, 1])?;
        let readout_bias = lookup("readout.bias".into(), &[1])?;
        Ok(Self {
            config,
            statics,
            params: HetGnnParams {
                temporal,
                dynamic,
                layers,
                attention,
                readout_weight,
                readout_bias,
            },
        })
    }

    fn static_graphs(config: &HetGnnConfig, stack: &RelationStack) -> Result<Vec<(RelationKind, Tensor)>> {
        if stack.n != config.n {
            return Err(Error::Dimension(format!(
                "relation stack is {}x{} but the model has {} variables",
                stack.n, stack.n, config.n
            )));
        }
        config
            .model
            .relations
            .iter()
            .filter(|k| **k != RelationKind::Dynamic)
            .map(|&kind| {
                stack
                    .adjacency(kind)
                    .map(|a| (kind, a))
                    .ok_or_else(|| Error::Contract(format!("relation stack lacks {}", kind.tag())))
            })
            .collect()
    }

    /// The normalized static adjacency used for `kind`, if enabled.
    pub fn static_adjacency(&self, kind: RelationKind) -> Option<&Tensor> {
        self.statics.iter().find(|(k, _)| *k == kind).map(|(_, a)| a)
    }

    /// Forecasts `[B, n]` for windows `[B, n, T]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, windows: &Tensor) -> Result<Var> {
        let cfg = &self.config;
        let shape = windows.shape();
        if shape.len() != 3 || shape[1] != cfg.n || shape[2] != cfg.window {
            return Err(Error::Dimension(format!(
                "windows have shape {shape:?}, expected [B, {}, {}]",
                cfg.n, cfg.window
            )));
        }
        let batch = shape[0];
        let x = tape.constant(windows.clone());
        let mut h = temporal_embed(tape, x, &cfg.temporal, &self.params.temporal, store)?;

        let mut graphs: Vec<(&'static str, Var)> = Vec::new();
        for &kind in &cfg.model.relations {
            let adjacency = match kind {
                RelationKind::Dynamic => {
                    let mut bases = Vec::with_capacity(batch * cfg.n * cfg.n);
                    for window in windows.data().chunks(cfg.n * cfg.window) {
                        bases.extend_from_slice(distance_base(window, cfg.n, cfg.window)?.data());
                    }
                    let base = tape.constant(Tensor::new(&[batch, cfg.n, cfg.n], bases)?);
                    let weight = tape.param(store, self.params.dynamic.expect("dyn enabled"));
                    dynamic_adjacency(tape, base, weight, cfg.threshold, cfg.norm)?
                }
                _ => {
                    let a = self.static_adjacency(kind).expect("statics cover enabled kinds");
                    tape.constant(a.clone())
                }
            };
            graphs.push((kind.tag(), adjacency));
        }
        if !cfg.model.attention {
            // Batched graphs first so the static ones broadcast onto them.
            graphs.sort_by_key(|(_, v)| core::cmp::Reverse(tape.value(*v).numel()));
            let count = graphs.len() as f64;
            let mut sum = graphs[0].1;
            for &(_, g) in &graphs[1..] {
                sum = tape.add(sum, g)?;
            }
            graphs = vec![("avg", tape.scale(sum, 1.0 / count))];
        }

        let attention = self.params.attention.map(|id| tape.param(store, id));
        let layer_count = self.params.layers.len();
        for (l, layer) in self.params.layers.iter().enumerate() {
            let self_weight = tape.param(store, layer.self_weight);
            let terms: Vec<RelationTerm> = graphs
                .iter()
                .zip(&layer.relation_weights)
                .map(|(&(tag, adjacency), &w)| RelationTerm {
                    tag,
                    adjacency,
                    weight: tape.param(store, w),
                })
                .collect();
            let activation = if l + 1 == layer_count {
                Activation::Identity
            } else {
                Activation::Relu
            };
            h = propagate(tape, l, h, self_weight, &terms, attention, activation)?;
        }
        let w = tape.param(store, self.params.readout_weight);
        let b = tape.param(store, self.params.readout_bias);
        let out = tape.matmul(h, w)?;
        let out = tape.add(out, b)?;
        tape.reshape(out, &[batch, cfg.n])
    }

    /// Forecasts for many samples, evaluated in chunks; row-major `S × n`.
    pub fn predict(&self, store: &ParameterStore, samples: &[WindowSample], chunk: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len() * self.config.n);
        for part in samples.chunks(chunk.max(1)) {
            let refs: Vec<&WindowSample> = part.iter().collect();
            let windows = batch_windows(&refs, self.config.n, self.config.window)?;
            let mut tape = Tape::new();
            let y = self.forward(&mut tape, store, &windows)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relation::Relation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stack(n: usize) -> RelationStack {
        let mut sim = Tensor::full(&[n, n], 0.5);
        let mut cas = Tensor::zeros(&[n, n]);
        for i in 0..n {
            sim.data_mut()[i * n + i] = 0.0;
            cas.data_mut()[i * n + (i + 1) % n] = 0.3;
        }
        RelationStack::new(
            n,
            AdjacencyNorm::Row,
            vec![
                Relation { kind: RelationKind::Similarity, matrix: sim },
                Relation { kind: RelationKind::Causality, matrix: cas },
            ],
        )
        .unwrap()
    }

    fn small_config(n: usize) -> HetGnnConfig {
        HetGnnConfig {
            n,
            window: 8,
            temporal: TemporalConfig {
                kernel_sizes: vec![3, 5],
                channels_per_branch: 2,
                activation: Activation::Relu,
            },
            model: ModelConfig {
                hidden_size: 4,
                ..ModelConfig::default()
            },
            threshold: 0.0,
            norm: AdjacencyNorm::Row,
        }
    }

    #[test]
    fn singleton_identity_relation_passes_features_through() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::new(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let w0 = tape.constant(Tensor::zeros(&[2, 2]));
        let a = tape.constant(Tensor::eye(2));
        let wr = tape.constant(Tensor::eye(2));
        let logits = tape.constant(Tensor::new(&[1], vec![0.3]).unwrap());
        let term = RelationTerm { tag: "sim", adjacency: a, weight: wr };
        let out = propagate(&mut tape, 0, h, w0, &[term], Some(logits), Activation::Identity).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, -2.0, 3.0, 0.5]);
    }

    #[test]
    fn equal_logits_weight_relations_equally() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::eye(2));
        let w0 = tape.constant(Tensor::zeros(&[2, 2]));
        let eye = tape.constant(Tensor::eye(2));
        let terms: Vec<RelationTerm> = (0..3)
            .map(|r| {
                let a = tape.constant(Tensor::full(&[2, 2], r as f64));
                RelationTerm { tag: "x", adjacency: a, weight: eye }
            })
            .collect();
        let logits = tape.constant(Tensor::full(&[3], 2.0));
        let out = propagate(&mut tape, 0, h, w0, &terms, Some(logits), Activation::Identity).unwrap();
        for &v in tape.value(out).data() {
            assert!((v - 1.0).abs() < 1e-15, "{v}");
        }
    }

    #[test]
    fn attention_length_mismatch_names_layer() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::eye(2));
        let w = tape.constant(Tensor::eye(2));
        let logits = tape.constant(Tensor::zeros(&[2]));
        let term = RelationTerm { tag: "sim", adjacency: w, weight: w };
        let err = propagate(&mut tape, 3, h, w, &[term], Some(logits), Activation::Relu).unwrap_err();
        assert!(matches!(err, Error::Dimension(ref m) if m.contains("layer 3")));
        let bad = tape.constant(Tensor::zeros(&[5, 2]));
        let term = RelationTerm { tag: "cas", adjacency: w, weight: bad };
        let err = propagate(&mut tape, 1, h, w, &[term], None, Activation::Relu).unwrap_err();
        assert!(matches!(err, Error::Dimension(ref m) if m.contains("layer 1") && m.contains("cas")));
    }

    #[test]
    fn identity_dynamic_weight_reproduces_distance_base() {
        let window: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).cos()).collect();
        let base = distance_base(&window, 3, 4).unwrap();
        let mut tape = Tape::new();
        let b = tape.constant(base.clone());
        let w = tape.constant(Tensor::eye(3));
        let a = dynamic_adjacency(&mut tape, b, w, 0.0, AdjacencyNorm::Row).unwrap();
        for (x, y) in tape.value(a).data().iter().zip(base.data()) {
            assert!((x - y).abs() < 1e-15);
        }
        let z = tape.constant(Tensor::zeros(&[3, 3]));
        let a = dynamic_adjacency(&mut tape, b, z, 0.1, AdjacencyNorm::Row).unwrap();
        assert!(tape.value(a).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_window_with_zero_biases_forecasts_zero() {
        let cfg = small_config(3);
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = HetGnn::new(cfg, &stack(3), &mut store, &mut rng).unwrap();
        let mut tape = Tape::new();
        let y = model.forward(&mut tape, &store, &Tensor::zeros(&[2, 3, 8])).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_names_follow_convention() {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        HetGnn::new(small_config(3), &stack(3), &mut store, &mut rng).unwrap();
        let names: Vec<&str> = store.iter().map(|(_, p)| p.name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "temporal.branch0.kernel",
                "temporal.branch0.bias",
                "temporal.branch1.kernel",
                "temporal.branch1.bias",
                "dynamic.weight",
                "gnn.layer0.self",
                "gnn.layer0.sim",
                "gnn.layer0.cas",
                "gnn.layer0.dyn",
                "gnn.layer1.self",
                "gnn.layer1.sim",
                "gnn.layer1.cas",
                "gnn.layer1.dyn",
                "attention.logits",
                "readout.weight",
                "readout.bias",
            ]
        );
    }

    #[test]
    fn from_store_rebinds_identically() {
        let cfg = small_config(3);
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = HetGnn::new(cfg.clone(), &stack(3), &mut store, &mut rng).unwrap();
        let rebound = HetGnn::from_store(cfg, &stack(3), &store).unwrap();
        assert_eq!(model, rebound);
    }
}
