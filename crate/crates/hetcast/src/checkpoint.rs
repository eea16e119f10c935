//! Binary checkpoint format.
//!
//! All integers and floats are little-endian; strings are a `u32` byte
//! length followed by UTF-8 bytes.
//!
//! ```text
//! magic            8 bytes  "HETCKPT\0"
//! version          u32      1
//! manifest_hash    string   hex SHA-256 of the manifest body
//! config           string   canonical run configuration (horizons = this model's horizon)
//! meta             string   key=value lines: loss, best_epoch, val_rse, val_rae, val_corr
//! horizon          u64
//! n                u64
//! scales           n × f64
//! adjacency_norm   u8       0 = row, 1 = none
//! relation_count   u32
//!   tag            string   sim | cas | dyn
//!   matrix         n·n × f64, row-major
//! param_count      u32
//!   name           string
//!   rank           u32
//!   dims           rank × u64
//!   values         Π dims × f64, row-major
//! checksum         32 bytes SHA-256 of every preceding byte
//! ```

use std::path::Path;

use hetcast_core::evaluation::Metrics;
use hetcast_core::hetgnn::HetGnn;
use hetcast_core::numerics::{ParameterStore, Tensor};
use hetcast_core::relation::{AdjacencyNorm, Relation, RelationKind, RelationStack};
use hetcast_core::training::LossKind;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{read_bytes, write_bytes};

pub const MAGIC: &[u8; 8] = b"HETCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSummary {
    pub loss: LossKind,
    pub best_epoch: usize,
    pub val: Metrics,
}

impl TrainingSummary {
    fn to_text(self) -> String {
        format!(
            "loss={}\nbest_epoch={}\nval_rse={}\nval_rae={}\nval_corr={}\n",
            self.loss.as_str(),
            self.best_epoch,
            self.val.rse,
            self.val.rae,
            self.val.corr
        )
    }

    fn parse(text: &str) -> Option<Self> {
        let mut loss = None;
        let (mut epoch, mut rse, mut rae, mut corr) = (None, None, None, None);
        for line in text.lines() {
            let (k, v) = line.split_once('=')?;
            match k {
                "loss" => {
                    loss = Some(match v {
                        "l1" => LossKind::L1,
                        "l2" => LossKind::L2,
                        _ => return None,
                    })
                }
                "best_epoch" => epoch = v.parse().ok(),
                "val_rse" => rse = v.parse().ok(),
                "val_rae" => rae = v.parse().ok(),
                "val_corr" => corr = v.parse().ok(),
                _ => return None,
            }
        }
        Some(Self {
            loss: loss?,
            best_epoch: epoch?,
            val: Metrics {
                rse: rse?,
                rae: rae?,
                corr: corr?,
            },
        })
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest_hash: String,
    pub config: RunConfig,
    pub summary: TrainingSummary,
    pub horizon: usize,
    pub scales: Vec<f64>,
    pub stack: RelationStack,
    pub params: ParameterStore,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(len)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }
    fn u8(&mut self) -> Option<u8> {
        Some(self.take(1)?[0])
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn f64s(&mut self, count: usize) -> Option<Vec<f64>> {
        let raw = self.take(count.checked_mul(8)?)?;
        Some(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }
    fn str(&mut self) -> Option<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).ok()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(&self.manifest_hash);
        w.str(&self.config.to_text());
        w.str(&self.summary.to_text());
        w.u64(self.horizon as u64);
        w.u64(self.scales.len() as u64);
        w.f64s(&self.scales);
        w.u8(match self.stack.norm {
            AdjacencyNorm::Row => 0,
            AdjacencyNorm::None => 1,
        });
        w.u32(self.stack.relations.len() as u32);
        for r in &self.stack.relations {
            w.str(r.kind.tag());
            w.f64s(r.matrix.data());
        }
        w.u32(self.params.len() as u32);
        for (_, p) in self.params.iter() {
            w.str(&p.name);
            w.u32(p.value.shape().len() as u32);
            for &d in p.value.shape() {
                w.u64(d as u64);
            }
            w.f64s(p.value.data());
        }
        let checksum = Sha256::digest(&w.0);
        w.0.extend_from_slice(&checksum);
        w.0
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format(path, format!("checkpoint: {m}"));
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("bad magic"));
        }
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(bad("truncated"));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader {
            bytes: body,
            pos: MAGIC.len(),
        };
        let truncated = || bad("truncated");
        let version = r.u32().ok_or_else(truncated)?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let manifest_hash = r.str().ok_or_else(truncated)?;
        let config = RunConfig::parse(&r.str().ok_or_else(truncated)?)?;
        let summary = TrainingSummary::parse(&r.str().ok_or_else(truncated)?)
            .ok_or_else(|| bad("malformed training summary"))?;
        let horizon = r.u64().ok_or_else(truncated)? as usize;
        let n = r.u64().ok_or_else(truncated)? as usize;
        if n > body.len() {
            return Err(truncated());
        }
        let scales = r.f64s(n).ok_or_else(truncated)?;
        let norm = match r.u8().ok_or_else(truncated)? {
            0 => AdjacencyNorm::Row,
            1 => AdjacencyNorm::None,
            other => return Err(bad(&format!("unknown adjacency norm {other}"))),
        };
        let count = r.u32().ok_or_else(truncated)?;
        let mut relations = Vec::new();
        for _ in 0..count {
            let kind = RelationKind::from_tag(&r.str().ok_or_else(truncated)?)?;
            let matrix = Tensor::new(&[n, n], r.f64s(n * n).ok_or_else(truncated)?)?;
            relations.push(Relation { kind, matrix });
        }
        let stack = RelationStack::new(n, norm, relations)?;
        let count = r.u32().ok_or_else(truncated)?;
        let mut params = ParameterStore::new();
        for _ in 0..count {
            let name = r.str().ok_or_else(truncated)?;
            let rank = r.u32().ok_or_else(truncated)? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(truncated)?;
            let numel = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&c| c <= body.len())
                .ok_or_else(truncated)?;
            let values = r.f64s(numel).ok_or_else(truncated)?;
            params.add(name, Tensor::new(&dims, values)?)?;
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            manifest_hash,
            config,
            summary,
            horizon,
            scales,
            stack,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &read_bytes(path)?)
    }

    /// Binds the stored parameters to a model.
    pub fn model(&self) -> Result<HetGnn> {
        Ok(HetGnn::from_store(
            self.config.model_config(self.stack.n),
            &self.stack,
            &self.params,
        )?)
    }
}
