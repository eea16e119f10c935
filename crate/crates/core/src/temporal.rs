//! Multi-scale temporal embedding.
//!
//! Parallel 1-D convolution branches with different kernel sizes run along
//! the time axis of every variable (kernels are shared across variables).
//! Each branch yields `C × (T − k + 1)` features per variable; the flattened
//! branch outputs are concatenated into `d0 = Σ C·(T − kᵢ + 1)` features.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{glorot_uniform, ParamId, ParameterStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

impl core::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConfig {
    pub kernel_sizes: Vec<usize>,
    pub channels_per_branch: usize,
    pub activation: Activation,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            kernel_sizes: alloc::vec![3, 5, 7],
            channels_per_branch: 8,
            activation: Activation::Relu,
        }
    }
}

impl TemporalConfig {
    pub fn validate(&self, window: usize) -> Result<()> {
        if self.kernel_sizes.is_empty() {
            return Err(Error::Config("at least one kernel size is required".into()));
        }
        if self.channels_per_branch == 0 {
            return Err(Error::Config("channels_per_branch must be at least 1".into()));
        }
        if let Some(&k) = self.kernel_sizes.iter().find(|&&k| k == 0 || k > window) {
            return Err(Error::Dimension(format!(
                "kernel size {k} does not fit a window of {window} steps"
            )));
        }
        Ok(())
    }

    pub fn max_kernel(&self) -> usize {
        self.kernel_sizes.iter().copied().max().unwrap_or(0)
    }

    /// Feature width `d0` produced for a window of `window` steps.
    pub fn output_dim(&self, window: usize) -> usize {
        self.kernel_sizes
            .iter()
            .map(|&k| self.channels_per_branch * (window + 1).saturating_sub(k))
            .sum()
    }
}

/// Kernel and bias parameters of every branch.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalParams {
    pub branches: Vec<(ParamId, ParamId)>,
}

impl TemporalParams {
    /// Registers `temporal.branch{i}.kernel` (`[C, k]`) and
    /// `temporal.branch{i}.bias` (`[C]`, zero) for every branch.
    pub fn register<R: Rng>(
        cfg: &TemporalConfig,
        store: &mut ParameterStore,
        rng: &mut R,
    ) -> Result<Self> {
        let c = cfg.channels_per_branch;
        let branches = cfg
            .kernel_sizes
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let kernel = store.add(
                    format!("temporal.branch{i}.kernel"),
                    glorot_uniform(&[c, k], k, c, rng),
                )?;
                let bias = store.add(format!("temporal.branch{i}.bias"), Tensor::zeros(&[c]))?;
                Ok((kernel, bias))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { branches })
    }

    /// Looks the branch parameters up by name.
    pub fn find(cfg: &TemporalConfig, store: &ParameterStore) -> Result<Self> {
        let branches = (0..cfg.kernel_sizes.len())
            .map(|i| {
                let get = |suffix: &str| {
                    let name = format!("temporal.branch{i}.{suffix}");
                    store
                        .find(&name)
                        .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
                };
                Ok((get("kernel")?, get("bias")?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { branches })
    }
}

/// Maps windows `[B, n, T]` (or `[n, T]`) to features `[B, n, d0]`.
pub fn temporal_embed(
    tape: &mut Tape,
    windows: Var,
    cfg: &TemporalConfig,
    params: &TemporalParams,
    store: &ParameterStore,
) -> Result<Var> {
    let window = tape.value(windows).last_dim();
    cfg.validate(window)?;
    if params.branches.len() != cfg.kernel_sizes.len() {
        return Err(Error::Contract(format!(
            "{} kernel sizes but {} parameter branches",
            cfg.kernel_sizes.len(),
            params.branches.len()
        )));
    }
    let mut outputs = Vec::with_capacity(params.branches.len());
    for &(kernel, bias) in &params.branches {
        let k = tape.param(store, kernel);
        let b = tape.param(store, bias);
        let conv = tape.conv1d(windows, k, b)?;
        outputs.push(match cfg.activation {
            Activation::Relu => tape.relu(conv),
            Activation::Identity => conv,
        });
    }
    tape.concat(&outputs)
}
