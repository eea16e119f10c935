//! The `prepare` manifest: data identity, splits and scales.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use crate::config::{RunConfig, DATA_KEYS};
use crate::error::{Error, Result};
use crate::io::sha256_hex;

pub const FORMAT: &str = "hetcast-manifest-1";

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub data_path: PathBuf,
    pub data_sha256: String,
    /// `delimiter`, `header`, `window`, `split_ratios`, `normalization`.
    pub data_config: String,
    pub n: usize,
    pub len: usize,
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
    pub scales: Vec<f64>,
}

fn range_text(r: &Range<usize>) -> String {
    format!("{}..{}", r.start, r.end)
}

fn parse_range(s: &str) -> Option<Range<usize>> {
    let (a, b) = s.split_once("..")?;
    Some(a.parse().ok()?..b.parse().ok()?)
}

impl Manifest {
    /// Every line except the trailing hash.
    pub fn body(&self) -> String {
        let mut out = String::new();
        writeln!(out, "format={FORMAT}").unwrap();
        writeln!(out, "data_path={}", self.data_path.display()).unwrap();
        writeln!(out, "data_sha256={}", self.data_sha256).unwrap();
        for line in self.data_config.lines() {
            writeln!(out, "{line}").unwrap();
        }
        writeln!(out, "n={}", self.n).unwrap();
        writeln!(out, "len={}", self.len).unwrap();
        writeln!(out, "train={}", range_text(&self.train)).unwrap();
        writeln!(out, "valid={}", range_text(&self.valid)).unwrap();
        writeln!(out, "test={}", range_text(&self.test)).unwrap();
        let scales: Vec<String> = self.scales.iter().map(f64::to_string).collect();
        writeln!(out, "scales={}", scales.join(",")).unwrap();
        out
    }

    /// SHA-256 of [`Manifest::body`]; checkpoints record it.
    pub fn hash(&self) -> String {
        sha256_hex(self.body().as_bytes())
    }

    pub fn to_text(&self) -> String {
        format!("{}hash={}\n", self.body(), self.hash())
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let bad = |msg: String| Error::format(path, msg);
        let mut fields = std::collections::BTreeMap::new();
        let mut data_cfg = RunConfig::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
            if DATA_KEYS.contains(&k) {
                data_cfg.set(k, v)?;
            } else {
                fields.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| fields.get(k).cloned().ok_or_else(|| bad(format!("missing {k}")));
        if get("format")? != FORMAT {
            return Err(bad(format!("unsupported format {:?}", get("format")?)));
        }
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };
        let range = |k: &str| -> Result<Range<usize>> { parse_range(&get(k)?).ok_or_else(|| bad(format!("bad {k}"))) };
        let scales = get("scales")?
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|_| bad(format!("bad scale {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            data_path: PathBuf::from(get("data_path")?),
            data_sha256: get("data_sha256")?,
            data_config: data_cfg.text_for(DATA_KEYS),
            n: num("n")?,
            len: num("len")?,
            train: range("train")?,
            valid: range("valid")?,
            test: range("test")?,
            scales,
        };
        if manifest.scales.len() != manifest.n {
            return Err(bad(format!("{} scales for n={}", manifest.scales.len(), manifest.n)));
        }
        if get("hash")? != manifest.hash() {
            return Err(bad("hash does not match contents".into()));
        }
        Ok(manifest)
    }

    /// Checks that the data-shaping keys of `cfg` agree with the manifest.
    pub fn check_config(&self, cfg: &RunConfig) -> Result<()> {
        let ours = cfg.text_for(DATA_KEYS);
        if ours != self.data_config {
            return Err(Error::Mismatch(format!(
                "configuration differs from the prepared manifest:\n  manifest: {}\n  requested: {}",
                self.data_config.trim().replace('\n', " "),
                ours.trim().replace('\n', " ")
            )));
        }
        Ok(())
    }
}
