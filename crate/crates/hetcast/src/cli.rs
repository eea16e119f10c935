//! Command-line driver.
//!
//! Working directory layout (root from `--workdir` or `HETCAST_WORKDIR`):
//!
//! ```text
//! config.txt            resolved run configuration written by `prepare`
//! manifest.txt          data identity, splits and scales
//! relations/            sim.csv, cas.csv, dyn_base.csv, summary.txt
//! checkpoints/h{h}.ckpt one model per horizon
//! logs/h{h}.log         training log per horizon
//! results.csv           appended summary rows from `eval`
//! ablation/             per-variant checkpoints, logs and h{h}.csv table
//! ```

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hetcast_core::dataset::parse_series;
use hetcast_core::training::Variant;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::Error;
use crate::io::{read_text, write_bytes};
use crate::manifest::Manifest;
use crate::pipeline::{self, Split};
use crate::relfiles::{read_relations, write_relations};
use crate::report::{format_report, summary_row, SUMMARY_HEADER};

#[derive(Debug, Parser)]
#[command(name = "hetcast", version, about = "Multivariate time-series forecasting with heterogeneous relation graphs")]
pub struct Cli {
    /// Directory holding manifest, relations, checkpoints and logs.
    #[arg(long, global = true, env = "HETCAST_WORKDIR", default_value = ".")]
    pub workdir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// key=value configuration file applied over the workdir's config.txt.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key (repeatable), e.g. `--set hidden_size=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Horizons to train (default: the configured list).
    #[arg(long = "horizon")]
    pub horizons: Vec<usize>,
    /// Comma-separated relations to enable: sim, cas, dyn.
    #[arg(long)]
    pub relations: Option<String>,
    /// Average the relation graphs instead of attention fusion.
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Write wall_ms=0 in logs so they are reproducible byte for byte.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a data file, fix splits and scales, write manifest.txt.
    Prepare {
        #[arg(long)]
        data: PathBuf,
        /// Skip one header row.
        #[arg(long)]
        header: bool,
        #[arg(long)]
        delimiter: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compute the static relation matrices from the train range.
    Relations {
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train one model per horizon; keep the best validation checkpoint.
    Train {
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score checkpoints (or the persistence baseline) on a split.
    Eval {
        /// Checkpoint files (default: checkpoints/h{h}.ckpt per horizon).
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        #[arg(long = "horizon")]
        horizons: Vec<usize>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Score the last-value baseline instead of a model.
        #[arg(long)]
        persistence: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Forecast from one window file (T rows, n columns, original units).
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        window: PathBuf,
        #[arg(long)]
        header: bool,
        #[arg(long)]
        delimiter: Option<String>,
    },
    /// Train the full model and the type1 to type4 variants and tabulate.
    Ablate {
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    fn input(e: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: e.into() }
    }

    fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Self { code: 3, error: e.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::input(e)
    }
}

type CliResult<T> = Result<T, Failure>;

/// Parses arguments and runs; returns the exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(&cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn resolve_config(workdir: &Path, args: &ConfigArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    let stored = workdir.join("config.txt");
    if stored.exists() {
        cfg.apply_text(&read_text(&stored)?)?;
    }
    if let Some(path) = &args.config {
        cfg.apply_text(&read_text(path)?)?;
    }
    cfg.apply_overrides(&args.overrides)?;
    Ok(cfg)
}

fn apply_train_args(cfg: &mut RunConfig, args: &TrainArgs) -> CliResult<()> {
    if !args.horizons.is_empty() {
        cfg.horizons = args.horizons.clone();
    }
    if let Some(r) = &args.relations {
        cfg.set("relations", r)?;
    }
    if args.no_attention {
        cfg.model.attention = false;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    Ok(())
}

fn load_manifest(workdir: &Path) -> CliResult<Manifest> {
    let path = workdir.join("manifest.txt");
    Ok(Manifest::parse(&path, &read_text(&path)?)?)
}

fn dataset_name(manifest: &Manifest) -> String {
    manifest
        .data_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into())
}

fn clock(no_timing: bool) -> Box<dyn FnMut() -> u64> {
    if no_timing {
        Box::new(|| 0)
    } else {
        let start = Instant::now();
        Box::new(move || start.elapsed().as_millis() as u64)
    }
}

fn write_out(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_bytes(path, bytes).map_err(Failure::runtime)
}

fn emit(out: &mut dyn std::io::Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(Failure::runtime)
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn std::io::Write) -> CliResult<()> {
    let workdir = &cli.workdir;
    match &cli.command {
        Command::Prepare {
            data,
            header,
            delimiter,
            config,
        } => {
            let mut cfg = resolve_config(workdir, config)?;
            if *header {
                cfg.header = true;
            }
            if let Some(d) = delimiter {
                cfg.set("delimiter", d)?;
            }
            let (manifest, _) = pipeline::prepare(data, &cfg)?;
            write_out(&workdir.join("config.txt"), cfg.to_text().as_bytes())?;
            write_out(&workdir.join("manifest.txt"), manifest.to_text().as_bytes())?;
            emit(
                out,
                &format!(
                    "prepared n={} len={} train={:?} valid={:?} test={:?}\n",
                    manifest.n, manifest.len, manifest.train, manifest.valid, manifest.test
                ),
            )
        }
        Command::Relations { threshold, config } => {
            let mut cfg = resolve_config(workdir, config)?;
            if let Some(t) = threshold {
                cfg.relation.threshold = *t;
            }
            cfg.relation.validate().map_err(Error::from)?;
            let manifest = load_manifest(workdir)?;
            manifest.check_config(&cfg)?;
            let data = pipeline::load_prepared(&manifest)?;
            let stack = pipeline::compute_relations(&data, &manifest, &cfg)?;
            let dir = workdir.join("relations");
            let empty = write_relations(&dir, &stack, &manifest.hash(), &cfg).map_err(Failure::runtime)?;
            for kind in empty {
                eprintln!(
                    "warning: relation {} has no edges at threshold {}",
                    kind.tag(),
                    cfg.relation.threshold
                );
            }
            // Later commands read the threshold from config.txt.
            write_out(&workdir.join("config.txt"), cfg.to_text().as_bytes())?;
            emit(out, &read_text(&dir.join("summary.txt"))?)
        }
        Command::Train { train, config } => {
            let mut cfg = resolve_config(workdir, config)?;
            apply_train_args(&mut cfg, train)?;
            cfg.validate()?;
            let manifest = load_manifest(workdir)?;
            manifest.check_config(&cfg)?;
            let data = pipeline::load_prepared(&manifest)?;
            let stack = read_relations(&workdir.join("relations"), manifest.n, &manifest.hash(), &cfg)?;
            for &h in &cfg.horizons {
                let mut clock = clock(train.no_timing);
                let trained = pipeline::train_horizon(&data, &manifest, &stack, &cfg, h, &mut *clock)
                    .map_err(train_failure)?;
                write_out(&workdir.join(format!("checkpoints/h{h}.ckpt")), &trained.checkpoint.to_bytes())?;
                write_out(&workdir.join(format!("logs/h{h}.log")), trained.log.as_bytes())?;
                let s = &trained.checkpoint.summary;
                emit(
                    out,
                    &format!(
                        "horizon={h} loss={} best_epoch={} val_rse={} val_rae={} val_corr={}\n",
                        s.loss.as_str(),
                        s.best_epoch,
                        s.val.rse,
                        s.val.rae,
                        s.val.corr
                    ),
                )?;
            }
            Ok(())
        }
        Command::Eval {
            checkpoints,
            horizons,
            split,
            persistence,
            config,
        } => {
            let split: Split = split.parse()?;
            let manifest = load_manifest(workdir)?;
            let data = pipeline::load_prepared(&manifest)?;
            let name = dataset_name(&manifest);
            let mut cfg = resolve_config(workdir, config)?;
            if !horizons.is_empty() {
                cfg.horizons = horizons.clone();
            }
            let mut reports = Vec::new();
            if *persistence {
                manifest.check_config(&cfg)?;
                for &h in &cfg.horizons {
                    reports.push(("persistence".to_string(), pipeline::persistence(&data, &manifest, &cfg, h, split)?));
                }
            } else {
                let paths: Vec<PathBuf> = if checkpoints.is_empty() {
                    cfg.horizons
                        .iter()
                        .map(|h| workdir.join(format!("checkpoints/h{h}.ckpt")))
                        .collect()
                } else {
                    checkpoints.clone()
                };
                for path in paths {
                    let ckpt = Checkpoint::load(&path)?;
                    let label = path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    reports.push((label, pipeline::evaluate_checkpoint(&ckpt, &data, &manifest, split)?));
                }
            }
            let results = workdir.join("results.csv");
            let fresh = !results.exists();
            let mut rows = String::new();
            if fresh {
                writeln!(rows, "{SUMMARY_HEADER}").unwrap();
            }
            for (label, r) in &reports {
                emit(out, &format_report(&name, label, split.as_str(), r))?;
                writeln!(rows, "{}", summary_row(&name, label, split.as_str(), r)).unwrap();
            }
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&results)
                .map_err(|e| Failure::runtime(Error::io(&results, e)))?;
            file.write_all(rows.as_bytes())
                .map_err(|e| Failure::runtime(Error::io(&results, e)))
        }
        Command::Predict {
            checkpoint,
            window,
            header,
            delimiter,
        } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let mut delim = ckpt.config.delimiter;
            if let Some(d) = delimiter {
                let mut tmp = RunConfig::default();
                tmp.set("delimiter", d)?;
                delim = tmp.delimiter;
            }
            let text = read_text(window)?;
            let m = parse_series(&text, delim, *header).map_err(|e| Error::format(window, e.to_string()))?;
            if m.n() != ckpt.stack.n || m.len() != ckpt.config.window {
                return Err(Failure::input(Error::format(
                    window,
                    format!(
                        "window is {} rows x {} columns, expected {} x {}",
                        m.len(),
                        m.n(),
                        ckpt.config.window,
                        ckpt.stack.n
                    ),
                )));
            }
            let forecast = pipeline::predict_window(&ckpt, m.as_variable_major())?;
            let cells: Vec<String> = forecast.iter().map(f64::to_string).collect();
            emit(out, &format!("{}\n", cells.join(",")))
        }
        Command::Ablate { train, config } => {
            let mut cfg = resolve_config(workdir, config)?;
            apply_train_args(&mut cfg, train)?;
            cfg.validate()?;
            let manifest = load_manifest(workdir)?;
            manifest.check_config(&cfg)?;
            let data = pipeline::load_prepared(&manifest)?;
            let stack = read_relations(&workdir.join("relations"), manifest.n, &manifest.hash(), &cfg)?;
            let h = cfg.horizons[0];
            let mut table = String::from("variant,val_rse,val_rae,val_corr,test_rse,test_rae,test_corr\n");
            for variant in Variant::ALL {
                let mut vcfg = cfg.clone();
                vcfg.model = variant.apply(&cfg.model);
                let mut clock = clock(train.no_timing);
                let trained = pipeline::train_horizon(&data, &manifest, &stack, &vcfg, h, &mut *clock)
                    .map_err(train_failure)?;
                let dir = workdir.join("ablation");
                write_out(&dir.join(format!("{}-h{h}.ckpt", variant.name())), &trained.checkpoint.to_bytes())?;
                write_out(&dir.join(format!("{}-h{h}.log", variant.name())), trained.log.as_bytes())?;
                let test = pipeline::evaluate_checkpoint(&trained.checkpoint, &data, &manifest, Split::Test)?;
                let v = trained.checkpoint.summary.val;
                let row = format!(
                    "{},{},{},{},{},{},{}\n",
                    variant.name(),
                    v.rse,
                    v.rae,
                    v.corr,
                    test.rse,
                    test.rae,
                    test.corr
                );
                emit(out, &row)?;
                table.push_str(&row);
            }
            write_out(&workdir.join(format!("ablation/h{h}.csv")), table.as_bytes())
        }
    }
}

/// Optimization failures exit with 3; bad inputs found while setting up
/// training still exit with 2.
fn train_failure(e: Error) -> Failure {
    match e {
        Error::Core(
            hetcast_core::Error::Diverged { .. }
            | hetcast_core::Error::UndefinedMetric(_)
            | hetcast_core::Error::Contract(_),
        ) => Failure::runtime(e),
        other => Failure::input(other),
    }
}
