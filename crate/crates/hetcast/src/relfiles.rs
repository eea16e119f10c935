//! Relation matrices on disk: `sim.csv`, `cas.csv`, `dyn_base.csv` and
//! `summary.txt` inside the relations directory.

use std::fmt::Write as _;
use std::path::Path;

use hetcast_core::numerics::Tensor;
use hetcast_core::relation::{Relation, RelationKind, RelationStack};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{format_matrix, parse_matrix, read_text, write_bytes};

pub const RELATION_KEYS: &[&str] = &["te_history", "te_bins", "threshold", "adjacency_norm"];

pub fn file_name(kind: RelationKind) -> &'static str {
    match kind {
        RelationKind::Similarity => "sim.csv",
        RelationKind::Causality => "cas.csv",
        RelationKind::Dynamic => "dyn_base.csv",
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixSummary {
    /// Fraction of off-diagonal entries that are non-zero.
    pub density: f64,
    /// Extremes over off-diagonal entries.
    pub min: f64,
    pub max: f64,
}

pub fn summarize(m: &Tensor) -> MatrixSummary {
    let n = m.last_dim();
    let off: Vec<f64> = (0..n * n)
        .filter(|i| i / n != i % n)
        .map(|i| m.data()[i])
        .collect();
    let nonzero = off.iter().filter(|&&v| v != 0.0).count();
    MatrixSummary {
        density: if off.is_empty() { 0.0 } else { nonzero as f64 / off.len() as f64 },
        min: off.iter().copied().fold(f64::INFINITY, f64::min),
        max: off.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Writes every matrix and the summary. Returns the static relations left
/// without any edge.
pub fn write_relations(dir: &Path, stack: &RelationStack, manifest_hash: &str, cfg: &RunConfig) -> Result<Vec<RelationKind>> {
    let mut summary = String::new();
    writeln!(summary, "manifest_hash={manifest_hash}").unwrap();
    write!(summary, "{}", cfg.text_for(RELATION_KEYS)).unwrap();
    let mut empty = Vec::new();
    for r in &stack.relations {
        write_bytes(&dir.join(file_name(r.kind)), format_matrix(&r.matrix).as_bytes())?;
        let s = summarize(&r.matrix);
        writeln!(
            summary,
            "relation={} density={} min={} max={}",
            r.kind.tag(),
            s.density,
            s.min,
            s.max
        )
        .unwrap();
        if r.kind != RelationKind::Dynamic && s.density == 0.0 {
            empty.push(r.kind);
        }
    }
    write_bytes(&dir.join("summary.txt"), summary.as_bytes())?;
    Ok(empty)
}

/// Reads the matrices back, checking they were computed for this manifest
/// and relation configuration.
pub fn read_relations(dir: &Path, n: usize, manifest_hash: &str, cfg: &RunConfig) -> Result<RelationStack> {
    let summary_path = dir.join("summary.txt");
    let summary = read_text(&summary_path)?;
    let recorded = summary
        .lines()
        .find_map(|l| l.strip_prefix("manifest_hash="))
        .ok_or_else(|| Error::format(&summary_path, "missing manifest_hash"))?;
    if recorded != manifest_hash {
        return Err(Error::Mismatch(format!(
            "{} was computed for a different manifest; rerun `relations`",
            summary_path.display()
        )));
    }
    let wanted = cfg.text_for(RELATION_KEYS);
    for line in wanted.lines() {
        if !summary.lines().any(|l| l == line) {
            return Err(Error::Mismatch(format!(
                "{} does not match the requested {line}; rerun `relations`",
                summary_path.display()
            )));
        }
    }
    let relations = RelationKind::ALL
        .iter()
        .map(|&kind| {
            let path = dir.join(file_name(kind));
            let matrix = parse_matrix(&path, &read_text(&path)?, n)?;
            Ok(Relation { kind, matrix })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RelationStack::new(n, cfg.relation.adjacency_norm, relations)?)
}
