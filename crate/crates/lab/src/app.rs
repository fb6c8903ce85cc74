//! Command-line front end.
//!
//! Exit status: `0` success, `1` failed check or other error, `2` usage or
//! config error, `3` solver nonconvergence.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use pencil_core::cache::{write_atomic, Cache, CACHE_ENV};
use pencil_core::inverse::ReconstructionMode;

use crate::checks::{self, CRITERIA};
use crate::config::ExperimentConfig;
use crate::studies::{self, Context, StudyError, StudyOutput};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

/// Output directory when neither `--out` nor `run.output_dir` is given.
pub const DEFAULT_OUT: &str = "pencil-out";

#[derive(Debug, Parser)]
#[command(name = "pencil-lab", version, about = "Nodal experiments for quadratic pencil operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory for tables and reports.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Spectrum/nodes cache directory.
    #[arg(long, global = true, value_name = "DIR")]
    cache: Option<PathBuf>,
    /// Reconstruction modes and metric weights to run.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Override `run.n_max`.
    #[arg(long, global = true, value_name = "INT")]
    nmax: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Paper,
    Corrected,
    Both,
}

impl Mode {
    fn modes(self) -> Vec<ReconstructionMode> {
        match self {
            Mode::Paper => vec![ReconstructionMode::Paper],
            Mode::Corrected => vec![ReconstructionMode::Corrected],
            Mode::Both => vec![ReconstructionMode::Paper, ReconstructionMode::Corrected],
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Eigenvalues with residuals and asymptotic remainders.
    Forward,
    /// Nodal points next to their asymptotic form.
    Nodes,
    /// Reconstruction of q from nodes, with h recovery and local averages.
    Reconstruct,
    /// Recovery of the boundary parameter h.
    RecoverH,
    /// Nodal distance of two problems and the Lipschitz identity.
    Stability,
    /// Derivative-order distances and reconstruction of q^(m).
    HighOrder,
    /// Trivial-problem discrepancy table, or named acceptance targets.
    Selfcheck {
        /// `c1`..`c11`, or `all`.
        #[arg(long, value_name = "NAME")]
        target: Vec<String>,
    },
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn other(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FAILED,
            message: message.into(),
        }
    }
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        let code = match &e {
            StudyError::Unsuitable(_) => EXIT_USAGE,
            e if e.is_nonconvergence() => EXIT_NONCONVERGENCE,
            _ => EXIT_FAILED,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| Failure::usage(e.to_string()))?,
        None => return Err(Failure::usage("--config <path> is required for this command")),
    };
    if let Some(n) = cli.nmax {
        cfg.n_max = n;
    }
    if let Some(m) = cli.mode {
        cfg.modes = m.modes();
    }
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// `--cache`, then `run.cache_dir`, then the environment, then `<out>/.cache`.
fn cache_dir(cli: &Cli, cfg: &ExperimentConfig, out: &Path) -> PathBuf {
    cli.cache
        .clone()
        .or_else(|| cfg.cache_dir.clone())
        .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| out.join(".cache"))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    write_atomic(&path, contents.as_bytes()).map_err(|e| Failure::other(format!("cannot write {}: {e}", path.display())))
}

fn emit(dir: &Path, out: &StudyOutput) -> Result<(), Failure> {
    for t in &out.tables {
        write(dir, &t.name, &t.csv)?;
    }
    let stem = out.study.replace('-', "_");
    let report = serde_json::to_string_pretty(&out.report).expect("report serializes") + "\n";
    write(dir, &format!("{stem}_report.json"), &report)?;
    write(dir, &format!("{stem}_summary.txt"), &out.summary())?;
    Ok(())
}

fn configure_pool(workers: usize) {
    if workers > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
}

fn execute(cli: Cli) -> Result<i32, Failure> {
    if let Command::Selfcheck { target } = &cli.command {
        return selfcheck(&cli, target);
    }
    let cfg = load_config(&cli)?;
    configure_pool(cfg.workers);
    let out = out_dir(&cli, Some(&cfg));
    let ctx = Context {
        cache: Some(Cache::new(cache_dir(&cli, &cfg, &out))),
    };
    let study = match cli.command {
        Command::Forward => studies::forward,
        Command::Nodes => studies::nodes,
        Command::Reconstruct => studies::convergence,
        Command::RecoverH => studies::recover_h_study,
        Command::Stability => studies::stability,
        Command::HighOrder => studies::high_order,
        Command::Selfcheck { .. } => unreachable!("handled above"),
    };
    let output = study(&cfg, &ctx)?;
    emit(&out, &output)?;
    println!("{}: {} tables written to {}", output.study, output.tables.len(), out.display());
    Ok(EXIT_OK)
}

fn csv_field(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn selfcheck(cli: &Cli, targets: &[String]) -> Result<i32, Failure> {
    let out = out_dir(cli, None);
    if targets.is_empty() {
        let cfg = ExperimentConfig::bundled_trivial();
        let rows = checks::trivial_discrepancies(&cfg, &Context::default())?;
        write(&out, "selfcheck.csv", &checks::discrepancy_csv(&rows))?;
        let failed: Vec<&str> = rows.iter().filter(|r| r.excess() != 0.0).map(|r| r.check).collect();
        if failed.is_empty() {
            println!("selfcheck: {} checks, all discrepancies zero", rows.len());
            return Ok(EXIT_OK);
        }
        println!("selfcheck: nonzero discrepancies in {}", failed.join(", "));
        return Ok(EXIT_FAILED);
    }
    let mut ids = Vec::new();
    for t in targets {
        if t == "all" {
            ids.extend(CRITERIA.iter().map(|c| c.0));
        } else {
            ids.push(checks::parse_target(t).ok_or_else(|| Failure::usage(format!("unknown selfcheck target `{t}` (expected c1..c11 or all)")))?);
        }
    }
    ids.sort_unstable();
    ids.dedup();
    let mut csv = String::from("criterion,title,status,detail\n");
    let mut all_passed = true;
    for id in ids {
        let o = checks::run(id);
        println!("{}", o.line());
        all_passed &= o.passed;
        csv.push_str(&format!(
            "{},{},{},{}\n",
            o.id,
            csv_field(o.title),
            if o.passed { "PASS" } else { "FAIL" },
            csv_field(&o.detail)
        ));
    }
    write(&out, "acceptance.csv", &csv)?;
    Ok(if all_passed { EXIT_OK } else { EXIT_FAILED })
}
