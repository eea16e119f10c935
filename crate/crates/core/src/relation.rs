//! Static and dynamic relation graphs between variables.
//!
//! * similarity: absolute Pearson correlation over the fit range;
//! * causality: positive part of the net transfer entropy `T(i→j) − T(j→i)`;
//! * distance base: row-wise softmax of negative Euclidean distances, the
//!   input to the learned dynamic graph.
//!
//! Every adjacency is non-negative with a zero diagonal; self-information is
//! carried by the self term of the propagation rule instead.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::dataset::SeriesMatrix;
use crate::error::{Error, Result};
use crate::math;
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjacencyNorm {
    Row,
    None,
}

impl AdjacencyNorm {
    pub fn as_str(self) -> &'static str {
        match self {
            AdjacencyNorm::Row => "row",
            AdjacencyNorm::None => "none",
        }
    }
}

impl core::str::FromStr for AdjacencyNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row" => Ok(AdjacencyNorm::Row),
            "none" => Ok(AdjacencyNorm::None),
            other => Err(Error::Config(format!("unknown adjacency norm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationConfig {
    /// History length `k` of the transfer-entropy estimator.
    pub te_history: usize,
    /// Equal-width bins per series.
    pub te_bins: usize,
    /// Entries below this value are dropped from every adjacency.
    pub threshold: f64,
    pub adjacency_norm: AdjacencyNorm,
}

impl Default for RelationConfig {
    fn default() -> Self {
        Self {
            te_history: 1,
            te_bins: 8,
            threshold: 0.1,
            adjacency_norm: AdjacencyNorm::Row,
        }
    }
}

impl RelationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.te_bins < 2 {
            return Err(Error::Config("te_bins must be at least 2".into()));
        }
        if self.te_history < 1 {
            return Err(Error::Config("te_history must be at least 1".into()));
        }
        if !(self.threshold >= 0.0) || !self.threshold.is_finite() {
            return Err(Error::Config(format!(
                "threshold must be a finite non-negative number, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationKind {
    Similarity,
    Causality,
    Dynamic,
}

impl RelationKind {
    pub const ALL: [RelationKind; 3] = [
        RelationKind::Similarity,
        RelationKind::Causality,
        RelationKind::Dynamic,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            RelationKind::Similarity => "sim",
            RelationKind::Causality => "cas",
            RelationKind::Dynamic => "dyn",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "sim" => Ok(RelationKind::Similarity),
            "cas" => Ok(RelationKind::Causality),
            "dyn" => Ok(RelationKind::Dynamic),
            other => Err(Error::Config(format!(
                "unknown relation {other:?} (expected sim, cas or dyn)"
            ))),
        }
    }
}

fn check_range(m: &SeriesMatrix, range: &Range<usize>, min_len: usize) -> Result<()> {
    if range.end > m.len() || range.len() < min_len {
        return Err(Error::Dimension(format!(
            "range {range:?} must lie in [0, {}) and span at least {min_len} steps",
            m.len()
        )));
    }
    Ok(())
}

/// Absolute Pearson correlation between every pair of variables over `range`.
///
/// Pairs involving a zero-variance variable get 0; the diagonal is 0.
pub fn similarity_adjacency(m: &SeriesMatrix, range: Range<usize>) -> Result<Tensor> {
    check_range(m, &range, 2)?;
    let n = m.n();
    let len = range.len() as f64;
    let centered: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let s = &m.series(i)[range.clone()];
            let mean = s.iter().sum::<f64>() / len;
            s.iter().map(|v| v - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = centered
        .iter()
        .map(|c| math::sqrt(c.iter().map(|v| v * v).sum()))
        .collect();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in (i + 1)..n {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                continue;
            }
            let cov: f64 = centered[i]
                .iter()
                .zip(&centered[j])
                .map(|(a, b)| a * b)
                .sum();
            let r = math::abs(cov / (norms[i] * norms[j])).min(1.0);
            out.data_mut()[i * n + j] = r;
            out.data_mut()[j * n + i] = r;
        }
    }
    Ok(out)
}

/// Equal-width binning fitted on the series itself. A constant series maps
/// entirely to bin 0.
pub fn discretize(series: &[f64], bins: usize) -> Vec<usize> {
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return vec![0; series.len()];
    }
    let width = (hi - lo) / bins as f64;
    series
        .iter()
        .map(|&v| (((v - lo) / width) as usize).min(bins - 1))
        .collect()
}

/// Plug-in entropy (bits) of the multiset of `codes`; sorts in place.
fn entropy_bits(codes: &mut [u64]) -> f64 {
    codes.sort_unstable();
    let total = codes.len() as f64;
    let mut h = 0.0;
    let mut i = 0;
    while i < codes.len() {
        let mut j = i + 1;
        while j < codes.len() && codes[j] == codes[i] {
            j += 1;
        }
        let p = (j - i) as f64 / total;
        h -= p * math::log2(p);
        i = j;
    }
    h
}

/// Transfer entropy `T(source → target)` in bits between symbol sequences
/// over an alphabet of `alphabet` symbols, with history length `history`.
///
/// `T = H(Y+ | Y⁽ᵏ⁾) − H(Y+ | Y⁽ᵏ⁾, X⁽ᵏ⁾)` from plug-in joint frequencies.
/// Results within rounding of zero are clamped to 0.
pub fn transfer_entropy_symbols(
    source: &[usize],
    target: &[usize],
    alphabet: usize,
    history: usize,
) -> Result<f64> {
    if source.len() != target.len() {
        return Err(Error::Dimension(format!(
            "source has {} steps, target has {}",
            source.len(),
            target.len()
        )));
    }
    if history == 0 || source.len() < history + 2 {
        return Err(Error::Dimension(format!(
            "transfer entropy with history {history} needs at least {} steps, got {}",
            history + 2,
            source.len()
        )));
    }
    if source.iter().chain(target).any(|&s| s >= alphabet) {
        return Err(Error::Contract("symbol outside alphabet".into()));
    }
    let base = alphabet as u64;
    let past_span = base
        .checked_pow(history as u32)
        .ok_or_else(|| Error::Config("history too long for the alphabet size".into()))?;
    past_span
        .checked_mul(past_span)
        .and_then(|v| v.checked_mul(base))
        .ok_or_else(|| Error::Config("history too long for the alphabet size".into()))?;

    let encode = |seq: &[usize], t: usize| -> u64 {
        (0..history).fold(0u64, |acc, lag| acc * base + seq[t - lag] as u64)
    };
    let steps = source.len() - history;
    let mut y_past = Vec::with_capacity(steps);
    let mut y_future_past = Vec::with_capacity(steps);
    let mut y_past_x_past = Vec::with_capacity(steps);
    let mut joint = Vec::with_capacity(steps);
    for t in (history - 1)..(source.len() - 1) {
        let yp = encode(target, t);
        let xp = encode(source, t);
        let yf = target[t + 1] as u64;
        y_past.push(yp);
        y_future_past.push(yf * past_span + yp);
        y_past_x_past.push(yp * past_span + xp);
        joint.push((yf * past_span + yp) * past_span + xp);
    }
    let te = entropy_bits(&mut y_future_past) - entropy_bits(&mut y_past)
        - entropy_bits(&mut joint)
        + entropy_bits(&mut y_past_x_past);
    Ok(te.max(0.0))
}

/// Transfer entropy between two real series, each binned on its own range.
///
/// A constant source or target carries no transferable information and
/// yields 0.
pub fn transfer_entropy(source: &[f64], target: &[f64], cfg: &RelationConfig) -> Result<f64> {
    cfg.validate()?;
    let xs = discretize(source, cfg.te_bins);
    let ys = discretize(target, cfg.te_bins);
    let te = transfer_entropy_symbols(&xs, &ys, cfg.te_bins, cfg.te_history)?;
    let constant = |s: &[usize]| s.iter().all(|&v| v == s[0]);
    if constant(&xs) || constant(&ys) {
        return Ok(0.0);
    }
    Ok(te)
}

/// Pairwise transfer entropy: entry `(i, j)` is `T(i → j)`; diagonal 0.
pub fn transfer_entropy_matrix(
    m: &SeriesMatrix,
    range: Range<usize>,
    cfg: &RelationConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    check_range(m, &range, cfg.te_history + 2)?;
    let n = m.n();
    let symbols: Vec<Vec<usize>> = (0..n)
        .map(|i| discretize(&m.series(i)[range.clone()], cfg.te_bins))
        .collect();
    let constant: Vec<bool> = symbols
        .iter()
        .map(|s| s.iter().all(|&v| v == s[0]))
        .collect();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i == j || constant[i] || constant[j] {
                continue;
            }
            out.data_mut()[i * n + j] =
                transfer_entropy_symbols(&symbols[i], &symbols[j], cfg.te_bins, cfg.te_history)?;
        }
    }
    Ok(out)
}

/// Entry `(i, j)` is `max(T(i → j) − T(j → i), 0)`.
pub fn causality_adjacency(
    m: &SeriesMatrix,
    range: Range<usize>,
    cfg: &RelationConfig,
) -> Result<Tensor> {
    let te = transfer_entropy_matrix(m, range, cfg)?;
    Ok(net_positive(&te))
}

/// Positive part of `a − aᵀ`.
pub fn net_positive(a: &Tensor) -> Tensor {
    let n = a.shape()[0];
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let net = a.data()[i * n + j] - a.data()[j * n + i];
                out.data_mut()[i * n + j] = net.max(0.0);
            }
        }
    }
    out
}

/// Row-wise softmax of negative Euclidean distances between the rows of a
/// variable-major `n × t` window.
pub fn distance_base(window: &[f64], n: usize, t: usize) -> Result<Tensor> {
    if window.len() != n * t {
        return Err(Error::Dimension(format!(
            "window of {} values is not {n} x {t}",
            window.len()
        )));
    }
    let mut out = Tensor::zeros(&[n, n]);
    let data = out.data_mut();
    for i in 0..n {
        let xi = &window[i * t..(i + 1) * t];
        for j in i..n {
            let xj = &window[j * t..(j + 1) * t];
            let d = math::sqrt(xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum());
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    // Distances are non-negative and d_ii = 0, so exp(-d) never overflows.
    for row in data.chunks_mut(n) {
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(-*v);
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Zeroes every entry below `threshold`.
pub fn sparsify(a: &Tensor, threshold: f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .map(|&v| if v < threshold { 0.0 } else { v })
        .collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

/// Divides each nonzero row by its sum; zero rows stay zero.
pub fn row_normalize(a: &Tensor) -> Tensor {
    let width = a.last_dim();
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(width) {
        let total: f64 = row.iter().sum();
        if total != 0.0 {
            for v in row.iter_mut() {
                *v /= total;
            }
        }
    }
    out
}

/// A relation matrix with its provenance tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    pub kind: RelationKind,
    pub matrix: Tensor,
}

/// Relation graphs computed once from the training range.
///
/// Static matrices are stored sparsified but not normalized, so the stored
/// similarity matrix stays symmetric; [`RelationStack::adjacency`] applies
/// the configured normalization. The dynamic entry is the distance base over
/// the whole fit range, kept for inspection; the model recomputes it for
/// every window.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationStack {
    pub n: usize,
    pub norm: AdjacencyNorm,
    pub relations: Vec<Relation>,
}

impl RelationStack {
    pub fn new(n: usize, norm: AdjacencyNorm, relations: Vec<Relation>) -> Result<Self> {
        for r in &relations {
            if r.matrix.shape() != [n, n] {
                return Err(Error::Dimension(format!(
                    "relation {} has shape {:?}, expected [{n}, {n}]",
                    r.kind.tag(),
                    r.matrix.shape()
                )));
            }
            if r.matrix.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Contract(format!(
                    "relation {} has negative or non-finite entries",
                    r.kind.tag()
                )));
            }
        }
        Ok(Self {
            n,
            norm,
            relations,
        })
    }

    pub fn tags(&self) -> Vec<&'static str> {
        self.relations.iter().map(|r| r.kind.tag()).collect()
    }

    pub fn get(&self, kind: RelationKind) -> Option<&Tensor> {
        self.relations
            .iter()
            .find(|r| r.kind == kind)
            .map(|r| &r.matrix)
    }

    /// The stored matrix of `kind` after the configured normalization.
    pub fn adjacency(&self, kind: RelationKind) -> Option<Tensor> {
        self.get(kind).map(|m| match self.norm {
            AdjacencyNorm::Row => row_normalize(m),
            AdjacencyNorm::None => m.clone(),
        })
    }
}

/// Computes the static graphs and the inspection distance base over `range`.
pub fn build_relation_stack(
    m: &SeriesMatrix,
    range: Range<usize>,
    cfg: &RelationConfig,
) -> Result<RelationStack> {
    cfg.validate()?;
    let sim = sparsify(&similarity_adjacency(m, range.clone())?, cfg.threshold);
    let cas = sparsify(&causality_adjacency(m, range.clone(), cfg)?, cfg.threshold);
    let base = distance_base(&m.window(range.clone()), m.n(), range.len())?;
    RelationStack::new(
        m.n(),
        cfg.adjacency_norm,
        vec![
            Relation {
                kind: RelationKind::Similarity,
                matrix: sim,
            },
            Relation {
                kind: RelationKind::Causality,
                matrix: cas,
            },
            Relation {
                kind: RelationKind::Dynamic,
                matrix: base,
            },
        ],
    )
}
