//! Command-line front end: single runs, multi-seed benchmarks, one-parameter
//! sweeps, and the labeling server.
//!
//! Every run configuration field is a kebab-case flag (`--lambda1 0`,
//! `--strategy cp`). Values are applied over the defaults and an optional
//! `--config` file (JSON, or TOML by extension).

pub mod config;
mod tables;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Args, FromArgMatches, Parser, Subcommand, ValueEnum};
use imboost::data::{load_csv, make_synthetic, write_scores_csv, Dataset, SyntheticSpec};
use imboost::pipeline::{run_simulated, RunConfig, RunOutput};
use thiserror::Error;

pub use tables::{bench, sweep, BenchRow, SweepRow};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, values, or combinations; exit code 2.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(imboost::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

impl From<imboost::Error> for CliError {
    fn from(e: imboost::Error) -> Self {
        match e {
            imboost::Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Core(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "imboost", version, about = "Active outlier detection with a boosted VAE")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train once and write scores and metrics.
    Run(RunArgs),
    /// Run every dataset in a directory over several seeds and tabulate AUC and AP.
    Bench(BenchArgs),
    /// Vary one parameter over a grid of values.
    Sweep(SweepArgs),
    /// Serve the labeling API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Two Gaussian clusters with uniform-box outliers.
    Default,
    /// Outliers allowed into the cluster tails.
    Ambiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    /// Answers from the dataset's label column.
    Simulated,
    /// Answers posted to the HTTP API; requires `--serve`.
    Human,
}

/// Where the rows come from.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Headered CSV file; numeric feature columns plus an optional label column.
    #[arg(long, value_name = "CSV", conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Generated two-dimensional data. Its generator seed follows the run seed.
    #[arg(long, value_enum)]
    pub synthetic: Option<Preset>,
    /// Number of generated rows.
    #[arg(long, value_name = "N", requires = "synthetic")]
    pub synthetic_n: Option<usize>,
    /// Label column name (default: `label` or `y` when present).
    #[arg(long, value_name = "NAME")]
    pub label_column: Option<String>,
}

/// Base configuration: `--config FILE` plus one flag per tunable.
#[derive(Debug, Clone, Default)]
pub struct ConfigArgs {
    pub file: Option<PathBuf>,
    /// `(parameter, raw value)` in table order.
    pub overrides: Vec<(String, String)>,
}

const CONFIG_HEADING: &str = "Run configuration";

impl Args for ConfigArgs {
    fn augment_args(cmd: clap::Command) -> clap::Command {
        let mut cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("JSON or TOML run configuration applied before flags")
                .help_heading(CONFIG_HEADING),
        );
        for p in config::PARAMS {
            let mut arg = Arg::new(p.name)
                .long(p.name)
                .value_name("VALUE")
                .help(p.help)
                .action(ArgAction::Set)
                .help_heading(CONFIG_HEADING);
            if p.switch {
                arg = arg.num_args(0..=1).default_missing_value("true");
            }
            cmd = cmd.arg(arg);
        }
        cmd
    }

    fn augment_args_for_update(cmd: clap::Command) -> clap::Command {
        Self::augment_args(cmd)
    }
}

impl FromArgMatches for ConfigArgs {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        Ok(Self {
            file: m.get_one::<PathBuf>("config").cloned(),
            overrides: config::PARAMS
                .iter()
                .filter_map(|p| m.get_one::<String>(p.name).map(|v| (p.name.to_string(), v.clone())))
                .collect(),
        })
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.file {
            Some(path) => config::load_file(path)?,
            None => RunConfig::default(),
        };
        if !self.overrides.is_empty() {
            config = config::apply_all(&config, &self.overrides)?;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, value_enum, default_value = "simulated")]
    pub oracle: OracleKind,
    /// Start the labeling server with this run as its first session.
    #[arg(long)]
    pub serve: bool,
    #[arg(long, default_value = "127.0.0.1:8080", requires = "serve")]
    pub addr: SocketAddr,
    /// Persist sessions here so they survive restarts.
    #[arg(long, value_name = "DIR", requires = "serve")]
    pub state_dir: Option<PathBuf>,
    /// Receives `scores.csv` and `metrics.json`.
    #[arg(long, value_name = "DIR", default_value = "imboost-out")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory of headered `.csv` files, one dataset each.
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// Add generated datasets to the benchmark.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub synthetic: Vec<Preset>,
    #[arg(long, value_name = "N")]
    pub synthetic_n: Option<usize>,
    #[arg(long, value_name = "NAME")]
    pub label_column: Option<String>,
    /// Seeds as a list (`0,1,2`) or a half-open range (`0..10`).
    #[arg(long, default_value = "0,1,2", value_parser = parse_seeds)]
    pub seeds: SeedList,
    /// Table destination (default: standard output).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// `name=v1,v2,...`; list values such as `hidden` are separated by `;`.
    #[arg(long, value_name = "NAME=VALUES", required = true)]
    pub grid: Vec<String>,
    #[arg(long, default_value = "0", value_parser = parse_seeds)]
    pub seeds: SeedList,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, value_name = "DIR")]
    pub state_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

fn parse_seeds(raw: &str) -> Result<SeedList, String> {
    let seeds = if let Some((a, b)) = raw.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
        (a..b).collect()
    } else {
        raw.split(',')
            .map(|s| s.trim().parse::<u64>().map_err(|e| format!("bad seed '{s}': {e}")))
            .collect::<Result<Vec<_>, _>>()?
    };
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(SeedList(seeds))
}

/// A dataset that can be materialized for a given run seed.
#[derive(Debug, Clone)]
pub enum Source {
    Loaded { name: String, dataset: Box<Dataset> },
    Synthetic { preset: Preset, n: Option<usize> },
}

impl Source {
    pub fn name(&self) -> String {
        match self {
            Source::Loaded { name, .. } => name.clone(),
            Source::Synthetic { preset, .. } => format!("synthetic-{}", preset_name(*preset)),
        }
    }

    /// Loaded data is returned as is; generated data uses `seed` for its generator.
    pub fn dataset(&self, seed: u64) -> Result<Dataset, CliError> {
        match self {
            Source::Loaded { dataset, .. } => Ok((**dataset).clone()),
            Source::Synthetic { preset, n } => {
                let mut spec = match preset {
                    Preset::Default => SyntheticSpec {
                        seed,
                        ..SyntheticSpec::default()
                    },
                    Preset::Ambiguous => SyntheticSpec::ambiguous(seed),
                };
                if let Some(n) = n {
                    spec.n = *n;
                }
                Ok(make_synthetic(&spec)?)
            }
        }
    }

    pub fn has_labels(&self) -> bool {
        match self {
            Source::Loaded { dataset, .. } => dataset.labels.is_some(),
            Source::Synthetic { .. } => true,
        }
    }
}

fn preset_name(p: Preset) -> &'static str {
    match p {
        Preset::Default => "default",
        Preset::Ambiguous => "ambiguous",
    }
}

impl SourceArgs {
    pub fn resolve(&self) -> Result<Source, CliError> {
        match (&self.data, self.synthetic) {
            (Some(path), None) => Ok(Source::Loaded {
                name: dataset_name(path),
                dataset: Box::new(load_csv(path, self.label_column.as_deref())?),
            }),
            (None, Some(preset)) => Ok(Source::Synthetic {
                preset,
                n: self.synthetic_n,
            }),
            _ => Err(CliError::Usage("give one of --data or --synthetic".into())),
        }
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Serve(args) => serve(args.addr, args.state_dir, None),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    let source = args.source.resolve()?;
    match (args.oracle, args.serve) {
        (OracleKind::Human, true) => {
            let dataset = source.dataset(config.trainer.seed)?;
            serve(args.addr, args.state_dir, Some((dataset, config)))
        }
        (OracleKind::Human, false) => Err(CliError::Usage(
            "--oracle human needs --serve so labels can be posted".into(),
        )),
        (OracleKind::Simulated, true) => Err(CliError::Usage(
            "--serve is for human labeling; pass --oracle human".into(),
        )),
        (OracleKind::Simulated, false) => {
            if !source.has_labels() {
                return Err(CliError::Usage(
                    "a simulated oracle needs a label column; pass --label-column or use --oracle human --serve"
                        .into(),
                ));
            }
            let output = run_simulated(source.dataset(config.trainer.seed)?, &config)?;
            write_run(&args.out_dir, &config, &output)?;
            let m = &output.metrics;
            println!(
                "{} seed {} strategy {}: auc_test {} ap_test {} auc_train {} ap_train {}",
                source.name(),
                m.seed,
                m.strategy,
                fmt_metric(m.auc_test),
                fmt_metric(m.ap_test),
                fmt_metric(m.auc_train),
                fmt_metric(m.ap_train),
            );
            println!("wrote {}", args.out_dir.display());
            Ok(())
        }
    }
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

/// `scores.csv` opens with a `# config:` comment line; `metrics.json` embeds
/// the config and seed.
pub fn write_run(dir: &Path, config: &RunConfig, output: &RunOutput) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut scores = BufWriter::new(File::create(dir.join("scores.csv"))?);
    writeln!(scores, "# config: {}", config_json(config)?)?;
    write_scores_csv(&mut scores, &output.scores)?;
    scores.flush()?;
    let metrics = serde_json::to_vec_pretty(&output.metrics).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(dir.join("metrics.json"), metrics)?;
    Ok(())
}

pub(crate) fn config_json(config: &RunConfig) -> Result<String, CliError> {
    serde_json::to_string(config).map_err(|e| CliError::Runtime(e.to_string()))
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    let mut sources: Vec<Result<Source, (String, String)>> = Vec::new();
    if let Some(dir) = &args.data_dir {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        paths.sort();
        for path in paths {
            let name = dataset_name(&path);
            sources.push(match load_csv(&path, args.label_column.as_deref()) {
                Ok(dataset) => Ok(Source::Loaded {
                    name,
                    dataset: Box::new(dataset),
                }),
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    Err((name, e.to_string()))
                }
            });
        }
    }
    for &preset in &args.synthetic {
        sources.push(Ok(Source::Synthetic {
            preset,
            n: args.synthetic_n,
        }));
    }
    if sources.is_empty() {
        return Err(CliError::Usage("no datasets: pass --data-dir or --synthetic".into()));
    }
    let rows = bench(&sources, &config, &args.seeds.0);
    let header = format!("# config: {} seeds: {:?}", config_json(&config)?, args.seeds.0);
    emit(args.out.as_deref(), &header, &rows)
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    let [grid] = args.grid.as_slice() else {
        return Err(CliError::Usage(format!(
            "sweep varies exactly one parameter; got {} --grid flags",
            args.grid.len()
        )));
    };
    let (name, values) = parse_grid(grid)?;
    let source = args.source.resolve()?;
    if !source.has_labels() {
        return Err(CliError::Usage("sweeps need a label column to score runs".into()));
    }
    // Reject bad values before any training starts.
    for v in &values {
        config::apply(&config, &name, v)?;
    }
    let rows = sweep(&source, &config, &name, &values, &args.seeds.0)?;
    let header = format!("# config: {} seeds: {:?}", config_json(&config)?, args.seeds.0);
    emit(args.out.as_deref(), &header, &rows)
}

/// Split `name=v1,v2` into a parameter and its values. When any `;` is
/// present it separates values instead, so list values can contain commas.
pub fn parse_grid(raw: &str) -> Result<(String, Vec<String>), CliError> {
    let (name, values) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("grid '{raw}' is not name=values")))?;
    let name = name.trim();
    if config::PARAMS.iter().all(|p| p.name != name) {
        return Err(CliError::Usage(format!(
            "unknown parameter '{name}' (known: {})",
            config::param_names().join(", ")
        )));
    }
    let sep = if values.contains(';') { ';' } else { ',' };
    let values: Vec<String> = values
        .split(sep)
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(CliError::Usage(format!("grid for {name} has no values")));
    }
    Ok((name.to_string(), values))
}

fn emit<T: serde::Serialize>(out: Option<&Path>, header: &str, rows: &[T]) -> Result<(), CliError> {
    let mut text = Vec::new();
    tables::write_table(&mut text, header, rows)?;
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(&text)?,
    }
    Ok(())
}

fn serve(addr: SocketAddr, state_dir: Option<PathBuf>, first: Option<(Dataset, RunConfig)>) -> Result<(), CliError> {
    let state = imboost_service::load_state(state_dir)?;
    if let Some((dataset, config)) = first {
        let session = state.create_session(dataset, config)?;
        println!("session {} at http://{addr}/v1/sessions/{}", session.id, session.id);
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(imboost_service::serve(addr, state))?;
    Ok(())
}
