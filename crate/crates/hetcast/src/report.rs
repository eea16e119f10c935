//! Forecast reports: structured text and a delimited summary row.

use std::fmt::Write as _;

use hetcast_core::evaluation::ForecastReport;

pub const SUMMARY_HEADER: &str = "dataset,model,split,horizon,rse,rae,corr";

pub fn format_report(dataset: &str, model: &str, split: &str, r: &ForecastReport) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "dataset={dataset} model={model} split={split} horizon={} samples={} rse={} rae={} corr={}",
        r.horizon, r.n_samples, r.rse, r.rae, r.corr
    )
    .unwrap();
    let per: Vec<String> = r.per_variable_corr.iter().map(f64::to_string).collect();
    writeln!(out, "per_variable_corr={}", per.join(",")).unwrap();
    out
}

pub fn summary_row(dataset: &str, model: &str, split: &str, r: &ForecastReport) -> String {
    format!("{dataset},{model},{split},{},{},{},{}", r.horizon, r.rse, r.rae, r.corr)
}
