//! The `robin` command line: single reconstructions, noise sweeps and the
//! verification battery.
//!
//! Settings resolve in three layers: registry defaults for the chosen
//! example, then a flat TOML file given by `--config`, then explicit flags.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::experiments::{run_experiment, ExampleId, ExperimentResult, ExperimentSpec};
use crate::verify::{run_checks, CheckGroup};

pub const HISTORY_HEADER: &str = "iter,residual,beta,rel_change,rel_error";
pub const PROFILE_HEADER: &str = "y,gamma_exact,gamma_reconstructed";
pub const SWEEP_HEADER: &str = "delta,seed,status,iterations,stop,final_error,final_residual";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("config file {path}: {source}")]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "robin", version, about = "Robin coefficient reconstruction by a Levenberg-Marquardt surrogate iteration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reconstruct one coefficient and write history, profile and summary.
    Run(RunArgs),
    /// Run independent reconstructions over noise levels and seeds.
    Sweep(SweepArgs),
    /// Run the numerical self-checks.
    Verify(VerifyArgs),
}

/// Initial coefficient: a constant, or `exact` to start from the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialGuess(pub Option<f64>);

impl FromStr for InitialGuess {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("exact") {
            return Ok(InitialGuess(None));
        }
        s.parse::<f64>()
            .map(|v| InitialGuess(Some(v)))
            .map_err(|_| format!("expected a number or `exact`, got `{s}`"))
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// Registered example id (5.1, 5.2, 5.3, 5.4).
    #[arg(long)]
    pub example: Option<String>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    /// Number of time steps (parabolic examples).
    #[arg(long)]
    pub nt: Option<usize>,
    /// Final time (parabolic examples).
    #[arg(long = "t-final")]
    pub t_final: Option<f64>,
    /// Relative-change stopping tolerance.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Constant initial guess, or `exact`.
    #[arg(long)]
    pub gamma0: Option<InitialGuess>,
    /// Surrogate constant.
    #[arg(long = "A")]
    pub a: Option<f64>,
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    #[arg(long = "gamma-min")]
    pub gamma_min: Option<f64>,
    #[arg(long = "gamma-max")]
    pub gamma_max: Option<f64>,
    /// Stop when the residual norm drops below this value.
    #[arg(long = "residual-floor")]
    pub residual_floor: Option<f64>,
    /// Flat TOML file with any of the settings above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Relative noise level.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',')]
    pub delta: Vec<f64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Restrict to these groups: adjoint, derivative, oracle, fem.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<CheckGroup>,
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub example: Option<String>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub nt: Option<usize>,
    pub t_final: Option<f64>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
    pub eps: Option<f64>,
    pub gamma0: Option<GammaSetting>,
    #[serde(rename = "A")]
    pub a: Option<f64>,
    pub max_iters: Option<usize>,
    pub gamma_min: Option<f64>,
    pub gamma_max: Option<f64>,
    pub residual_floor: Option<f64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GammaSetting {
    Value(f64),
    Named(String),
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|source| CliError::ConfigFile {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn load_file(args: &ExperimentArgs) -> CliResult<FileConfig> {
    args.config.as_deref().map_or(Ok(FileConfig::default()), FileConfig::load)
}

/// Merges defaults, file and flags into one spec.
pub fn resolve_spec(
    args: &ExperimentArgs,
    file: &FileConfig,
    delta: Option<f64>,
    seed: Option<u64>,
) -> CliResult<ExperimentSpec> {
    let example: ExampleId = args
        .example
        .as_deref()
        .or(file.example.as_deref())
        .unwrap_or("5.1")
        .parse()?;
    let mut spec = ExperimentSpec::defaults(example);
    let file_gamma0 = match &file.gamma0 {
        None => None,
        Some(GammaSetting::Value(v)) => Some(InitialGuess(Some(*v))),
        Some(GammaSetting::Named(s)) => Some(s.parse::<InitialGuess>().map_err(CliError::Config)?),
    };

    macro_rules! layer {
        ($target:expr, $flag:expr, $file:expr) => {
            if let Some(v) = $flag.or($file) {
                $target = v;
            }
        };
    }
    layer!(spec.nx, args.nx, file.nx);
    layer!(spec.ny, args.ny, file.ny);
    layer!(spec.nt, args.nt, file.nt);
    layer!(spec.t_final, args.t_final, file.t_final);
    layer!(spec.delta, delta, file.delta);
    layer!(spec.seed, seed, file.seed);
    layer!(spec.lm.eps, args.eps, file.eps);
    layer!(spec.lm.a, args.a, file.a);
    layer!(spec.lm.max_iters, args.max_iters, file.max_iters);
    layer!(spec.lm.gamma_min, args.gamma_min, file.gamma_min);
    layer!(spec.lm.gamma_max, args.gamma_max, file.gamma_max);
    if let Some(g) = args.gamma0.or(file_gamma0) {
        spec.gamma0 = g.0;
    }
    if let Some(floor) = args.residual_floor.or(file.residual_floor) {
        spec.lm.residual_floor = Some(floor);
    }
    spec.validate()?;
    Ok(spec)
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn history_csv(result: &ExperimentResult) -> String {
    let rows = &result.state.history;
    let with_error = rows.iter().all(|r| r.rel_error.is_some());
    let mut out = String::new();
    if with_error {
        out.push_str(HISTORY_HEADER);
    } else {
        out.push_str("iter,residual,beta,rel_change");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{}", r.iter, num(r.residual), num(r.beta), num(r.rel_change)));
        if let (true, Some(e)) = (with_error, r.rel_error) {
            out.push_str(&format!(",{}", num(e)));
        }
        out.push('\n');
    }
    out
}

pub fn profile_csv(result: &ExperimentResult) -> String {
    let mut out = format!("{PROFILE_HEADER}\n");
    for ((y, exact), rec) in result.ys.iter().zip(&result.gamma_exact.values).zip(&result.state.gamma.values) {
        out.push_str(&format!("{},{},{}\n", num(*y), num(*exact), num(*rec)));
    }
    out
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub spec: Option<ExperimentSpec>,
    pub status: &'static str,
    pub stop: Option<String>,
    pub iterations: usize,
    pub final_residual: Option<f64>,
    pub final_error: Option<f64>,
    pub clamped_nodes: usize,
    pub wall_time_s: f64,
    pub error: Option<String>,
    pub error_iteration: Option<usize>,
}

impl RunSummary {
    pub fn from_result(result: &ExperimentResult) -> Self {
        let rows = &result.state.history;
        Self {
            spec: Some(result.spec),
            status: if result.failure.is_some() { "failed" } else { "ok" },
            stop: result.stop.map(|s| s.to_string()),
            iterations: result.iterations(),
            final_residual: rows.last().map(|r| r.residual),
            final_error: result.final_error(),
            clamped_nodes: rows.iter().map(|r| r.clamped).sum(),
            wall_time_s: result.wall_time,
            error: result.failure.as_ref().map(|(_, e)| e.to_string()),
            error_iteration: result.failure.as_ref().map(|(k, _)| *k),
        }
    }

    fn setup_failure(spec: Option<ExperimentSpec>, err: &Error) -> Self {
        Self {
            spec,
            status: "failed",
            stop: None,
            iterations: 0,
            final_residual: None,
            final_error: None,
            clamped_nodes: 0,
            wall_time_s: 0.0,
            error: Some(err.to_string()),
            error_iteration: None,
        }
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(io_err(path))
}

fn write_summary(dir: &Path, summary: &RunSummary) -> CliResult<()> {
    let json = serde_json::to_string_pretty(summary).map_err(|e| CliError::Config(e.to_string()))?;
    write_file(&dir.join("run.json"), &(json + "\n"))
}

/// Runs one spec into `dir`; artifacts and summary are written whether or
/// not the iteration fails.
pub fn run_into(spec: &ExperimentSpec, dir: &Path) -> CliResult<Result<ExperimentResult, Error>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    match run_experiment(spec) {
        Ok(result) => {
            write_file(&dir.join("history.csv"), &history_csv(&result))?;
            write_file(&dir.join("profile.csv"), &profile_csv(&result))?;
            write_summary(dir, &RunSummary::from_result(&result))?;
            Ok(Ok(result))
        }
        Err(e) => {
            write_summary(dir, &RunSummary::setup_failure(Some(*spec), &e))?;
            Ok(Err(e))
        }
    }
}

pub fn cmd_run(args: &RunArgs) -> CliResult<i32> {
    let file = load_file(&args.experiment)?;
    let spec = resolve_spec(&args.experiment, &file, args.delta, args.seed)?;
    let out = args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("results"));
    match run_into(&spec, &out)? {
        Ok(result) => {
            let err = result.final_error().map_or("n/a".into(), |e| format!("{e:.4e}"));
            if let Some((k, e)) = &result.failure {
                eprintln!("example {}: iteration {k} failed: {e}", spec.example);
                eprintln!("partial history written to {}", out.display());
                return Ok(1);
            }
            let stop = result.stop.map_or("none".into(), |s| s.to_string());
            println!(
                "example {}: {} iterations, stop {stop}, relative error {err}, output in {}",
                spec.example,
                result.iterations(),
                out.display()
            );
            Ok(0)
        }
        Err(e) => {
            eprintln!("example {}: {e}", spec.example);
            Ok(1)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub delta: f64,
    pub seed: u64,
    pub ok: bool,
    pub iterations: usize,
    pub stop: Option<String>,
    pub final_error: Option<f64>,
    pub final_residual: Option<f64>,
}

impl SweepRow {
    fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.delta,
            self.seed,
            if self.ok { "ok" } else { "failed" },
            self.iterations,
            self.stop.as_deref().unwrap_or(""),
            opt(self.final_error),
            opt(self.final_residual),
        )
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<i32> {
    let file = load_file(&args.experiment)?;
    let deltas = if args.delta.is_empty() { file.delta.into_iter().collect() } else { args.delta.clone() };
    if deltas.is_empty() {
        return Err(CliError::Config("sweep needs at least one noise level (--delta)".into()));
    }
    let base = resolve_spec(&args.experiment, &file, Some(deltas[0]), None)?;
    let seeds = if args.seed.is_empty() { vec![base.seed] } else { args.seed.clone() };
    let specs = deltas
        .iter()
        .flat_map(|&delta| seeds.iter().map(move |&seed| (delta, seed)))
        .map(|(delta, seed)| resolve_spec(&args.experiment, &file, Some(delta), Some(seed)))
        .collect::<CliResult<Vec<_>>>()?;
    let out = args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("sweep"));
    fs::create_dir_all(&out).map_err(io_err(&out))?;

    let jobs = args.jobs.or(file.jobs).unwrap_or(1).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))?;
    let rows = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                let dir = out.join(format!("delta_{}_seed_{}", spec.delta, spec.seed));
                let row = match run_into(spec, &dir)? {
                    Ok(r) => SweepRow {
                        delta: spec.delta,
                        seed: spec.seed,
                        ok: r.failure.is_none(),
                        iterations: r.iterations(),
                        stop: r.stop.map(|s| s.to_string()),
                        final_error: r.final_error(),
                        final_residual: r.state.history.last().map(|h| h.residual),
                    },
                    Err(_) => SweepRow {
                        delta: spec.delta,
                        seed: spec.seed,
                        ok: false,
                        iterations: 0,
                        stop: None,
                        final_error: None,
                        final_residual: None,
                    },
                };
                Ok(row)
            })
            .collect::<Vec<CliResult<SweepRow>>>()
    });

    let mut csv = format!("{SWEEP_HEADER}\n");
    let mut failed = 0;
    for row in rows {
        match row {
            Ok(row) => {
                failed += usize::from(!row.ok);
                csv.push_str(&row.csv());
                csv.push('\n');
            }
            Err(e) => {
                failed += 1;
                eprintln!("{e}");
            }
        }
    }
    write_file(&out.join("sweep.csv"), &csv)?;
    println!("{} runs, {failed} failed, summary in {}", specs.len(), out.join("sweep.csv").display());
    Ok(i32::from(failed > 0))
}

pub fn cmd_verify(args: &VerifyArgs) -> CliResult<i32> {
    let groups = if args.only.is_empty() { CheckGroup::ALL.to_vec() } else { args.only.clone() };
    let outcomes = run_checks(&groups);
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    for o in &outcomes {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        writeln!(lock, "{tag} [{}] {}: {}", o.group, o.name, o.detail).map_err(io_err(Path::new("<stdout>")))?;
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    writeln!(lock, "{} checks, {failed} failed", outcomes.len()).map_err(io_err(Path::new("<stdout>")))?;
    Ok(i32::from(failed > 0))
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 1 when a run or check fails, 2 on usage
/// and configuration errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => cmd_verify(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        2
    })
}
