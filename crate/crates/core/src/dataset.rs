//! Series containers, normalization, chronological splits and window samples.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::math;

/// Dense `n × L` matrix of observations: `n` variables, `L` timestamps.
///
/// Storage is variable-major, so each variable's series is one contiguous
/// slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMatrix {
    values: Vec<f64>,
    variable_ids: Vec<String>,
    n: usize,
    len: usize,
}

impl SeriesMatrix {
    /// Builds a matrix from per-variable series. Labels default to `v0..v{n-1}`.
    pub fn from_series(series: Vec<Vec<f64>>) -> Result<Self> {
        let n = series.len();
        let len = series.first().map_or(0, Vec::len);
        if series.iter().any(|s| s.len() != len) {
            return Err(Error::Dimension("series have different lengths".into()));
        }
        let values: Vec<f64> = series.into_iter().flatten().collect();
        Self::from_variable_major(n, len, values)
    }

    /// Builds a matrix from a variable-major buffer (`values[i * len + t]`).
    pub fn from_variable_major(n: usize, len: usize, values: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Dimension(format!(
                "need at least 2 variables, found {n}"
            )));
        }
        if values.len() != n * len {
            return Err(Error::Dimension(format!(
                "buffer of {} values does not match {n} x {len}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos % len.max(1) + 1,
                column: pos / len.max(1) + 1,
            });
        }
        let variable_ids = (0..n).map(|i| format!("v{i}")).collect();
        Ok(Self {
            values,
            variable_ids,
            n,
            len,
        })
    }

    pub fn with_variable_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n {
            return Err(Error::Dimension(format!(
                "{} labels for {} variables",
                ids.len(),
                self.n
            )));
        }
        self.variable_ids = ids;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of timestamps `L`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn variable_ids(&self) -> &[String] {
        &self.variable_ids
    }

    pub fn series(&self, var: usize) -> &[f64] {
        &self.values[var * self.len..(var + 1) * self.len]
    }

    pub fn value(&self, var: usize, t: usize) -> f64 {
        self.values[var * self.len + t]
    }

    /// All variables at timestamp `t`.
    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.value(i, t)).collect()
    }

    pub fn as_variable_major(&self) -> &[f64] {
        &self.values
    }

    /// Copies columns `range` into a variable-major `n × range.len()` buffer.
    pub fn window(&self, range: Range<usize>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * range.len());
        for i in 0..self.n {
            out.extend_from_slice(&self.series(i)[range.clone()]);
        }
        out
    }
}

/// Parses delimited text: one timestamp per row, one variable per column.
///
/// Blank lines are ignored. Row numbers in errors are 1-based and count data
/// rows only (a skipped header is not counted).
pub fn parse_series(text: &str, delimiter: char, skip_header: bool) -> Result<SeriesMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if skip_header {
        lines.next();
    }
    for (idx, line) in lines.enumerate() {
        let row = idx + 1;
        let fields: Vec<&str> = line.split(delimiter).collect();
        if let Some(first) = rows.first() {
            if fields.len() != first.len() {
                return Err(Error::RaggedRow {
                    row,
                    expected: first.len(),
                    found: fields.len(),
                });
            }
        }
        let mut parsed = Vec::with_capacity(fields.len());
        for (col, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row,
                column: col + 1,
                field: field.trim().to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row,
                    column: col + 1,
                });
            }
            parsed.push(v);
        }
        rows.push(parsed);
    }
    let len = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if n < 2 {
        return Err(Error::Dimension(format!(
            "need at least 2 variables (columns), found {n}"
        )));
    }
    let mut values = alloc::vec![0.0; n * len];
    for (t, row) in rows.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            values[i * len + t] = v;
        }
    }
    SeriesMatrix::from_variable_major(n, len, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Divide each variable by its maximum absolute value over the fit range.
    MaxAbs,
    None,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::MaxAbs => "max_abs",
            Normalization::None => "none",
        }
    }
}

impl core::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_abs" => Ok(Normalization::MaxAbs),
            "none" => Ok(Normalization::None),
            other => Err(Error::Config(format!("unknown normalization {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub window: usize,
    pub horizon: usize,
    /// Train/validation/test fractions.
    pub split_ratios: [f64; 3],
    pub normalization: Normalization,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            window: 32,
            horizon: 3,
            split_ratios: [0.6, 0.2, 0.2],
            normalization: Normalization::MaxAbs,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.split_ratios.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::Config("split ratios must all be positive".into()));
        }
        let sum: f64 = self.split_ratios.iter().sum();
        if math::abs(sum - 1.0) > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Timestamps consumed by one sample: the window plus the forecast lead.
    pub fn sample_span(&self) -> usize {
        self.window + self.horizon
    }
}

/// One supervised instance.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Variable-major `n × T` window.
    pub input: Vec<f64>,
    /// Values at `origin_index + horizon`.
    pub target: Vec<f64>,
    /// Timestamp of the last column in the window.
    pub origin_index: usize,
}

impl WindowSample {
    /// Most recent observation of every variable (the persistence forecast).
    pub fn last_observed(&self, n: usize) -> Vec<f64> {
        let t = self.input.len() / n;
        (0..n).map(|i| self.input[i * t + t - 1]).collect()
    }
}

/// Normalizes each variable, fitting the scale on `fit_range` only.
///
/// Returns the normalized matrix and the per-variable scales; variables whose
/// fit-range maximum is zero get scale 1.
pub fn normalize(
    m: &SeriesMatrix,
    mode: Normalization,
    fit_range: Range<usize>,
) -> Result<(SeriesMatrix, Vec<f64>)> {
    if fit_range.is_empty() || fit_range.end > m.len() {
        return Err(Error::Dimension(format!(
            "fit range {fit_range:?} is empty or outside [0, {})",
            m.len()
        )));
    }
    let scales: Vec<f64> = match mode {
        Normalization::None => alloc::vec![1.0; m.n()],
        Normalization::MaxAbs => (0..m.n())
            .map(|i| {
                let peak = m.series(i)[fit_range.clone()]
                    .iter()
                    .fold(0.0_f64, |acc, &v| acc.max(math::abs(v)));
                if peak == 0.0 {
                    1.0
                } else {
                    peak
                }
            })
            .collect(),
    };
    let mut values = m.values.clone();
    for (i, &s) in scales.iter().enumerate() {
        for v in &mut values[i * m.len..(i + 1) * m.len] {
            *v /= s;
        }
    }
    let out = SeriesMatrix {
        values,
        variable_ids: m.variable_ids.clone(),
        n: m.n,
        len: m.len,
    };
    Ok((out, scales))
}

/// Inverse of [`normalize`].
pub fn denormalize(m: &SeriesMatrix, scales: &[f64]) -> Result<SeriesMatrix> {
    if scales.len() != m.n() {
        return Err(Error::Dimension(format!(
            "{} scales for {} variables",
            scales.len(),
            m.n()
        )));
    }
    let mut values = m.values.clone();
    for (i, &s) in scales.iter().enumerate() {
        for v in &mut values[i * m.len..(i + 1) * m.len] {
            *v *= s;
        }
    }
    Ok(SeriesMatrix {
        values,
        variable_ids: m.variable_ids.clone(),
        n: m.n,
        len: m.len,
    })
}

/// Train, validation and test index ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
}

fn split_bounds(len: usize, ratios: &[f64; 3]) -> (usize, usize) {
    // The epsilon keeps exact products such as 0.6 * 100 from flooring to 59.
    let first = math::floor(ratios[0] * len as f64 + 1e-9) as usize;
    let second = math::floor((ratios[0] + ratios[1]) * len as f64 + 1e-9) as usize;
    (first.min(len), second.min(len))
}

/// Splits `[0, len)` into contiguous train/validation/test ranges.
pub fn chronological_split(len: usize, cfg: &DatasetConfig) -> Result<Splits> {
    cfg.validate()?;
    let span = cfg.sample_span();
    let fits = |len: usize| {
        let (a, b) = split_bounds(len, &cfg.split_ratios);
        a >= span && b - a >= span && len - b >= span
    };
    if !fits(len) {
        let mut minimum = span * 3;
        while !fits(minimum) {
            minimum += 1;
        }
        return Err(Error::Dimension(format!(
            "series length {len} too short for window {} and horizon {}: every split needs \
             at least one sample, which requires L >= {minimum}",
            cfg.window, cfg.horizon
        )));
    }
    let (a, b) = split_bounds(len, &cfg.split_ratios);
    Ok(Splits {
        train: 0..a,
        valid: a..b,
        test: b..len,
    })
}

/// Number of samples that fit entirely inside a range of `range_len` steps.
pub fn sample_count(range_len: usize, window: usize, horizon: usize) -> usize {
    (range_len + 1).saturating_sub(window + horizon)
}

/// All windows whose inputs and target lie inside `range`.
pub fn make_samples(
    m: &SeriesMatrix,
    range: Range<usize>,
    cfg: &DatasetConfig,
) -> Result<Vec<WindowSample>> {
    if range.end > m.len() {
        return Err(Error::Dimension(format!(
            "range {range:?} outside [0, {})",
            m.len()
        )));
    }
    let count = sample_count(range.len(), cfg.window, cfg.horizon);
    let samples = (0..count)
        .map(|offset| {
            let start = range.start + offset;
            let origin = start + cfg.window - 1;
            WindowSample {
                input: m.window(start..start + cfg.window),
                target: m.column(origin + cfg.horizon),
                origin_index: origin,
            }
        })
        .collect();
    Ok(samples)
}
