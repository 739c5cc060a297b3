//! Command-line driver: `generate`, `degrade`, `restore`, `evaluate` and
//! `benchmark`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver or domain error,
//! 4 I/O error.

pub mod config;
pub mod experiment;
pub mod io;
pub mod trace;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, ExperimentConfig, RawConfig, SolverKind, KEYS};
use experiment::{Operators, RunError};
use io::{ImageIoError, PgmFormat};

#[derive(Debug, Parser)]
#[command(
    name = "pis",
    version,
    about = "Poisson image restoration by iterative shrinkage",
    after_help = "Run `pis keys` for the configuration keys. The Gaussian kernel cut-off is the \
                  frequency where the amplitude response falls to 1/sqrt(2)."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Key-value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set pis.gamma=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured phantom.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output image (.csv or .pgm).
        #[arg(long)]
        out: PathBuf,
    },
    /// Blur a ground truth, add the background and draw Poisson counts.
    Degrade {
        #[command(flatten)]
        config: ConfigArgs,
        /// Ground truth (.csv or .pgm).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output counts (.pgm).
        #[arg(long)]
        out: PathBuf,
        /// Also write the Poisson mean as CSV.
        #[arg(long)]
        mean: Option<PathBuf>,
    },
    /// Restore observed counts with one solver.
    Restore {
        #[command(flatten)]
        config: ConfigArgs,
        /// Observed counts (.pgm) or a real-valued CSV.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "pis")]
        solver: String,
        /// Ground truth without background; enables NMSE tracking.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Restored image (.csv or .pgm).
        #[arg(long)]
        out: PathBuf,
        /// Trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Print NMSE and SSIM of an estimate against a reference.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        /// Constant added to the truth before scoring.
        #[arg(long, default_value_t = 0.0)]
        offset: f64,
        /// SSIM dynamic range; defaults to the truth's max - min.
        #[arg(long)]
        range: Option<f64>,
    },
    /// Full pipeline over independent trials.
    Benchmark {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List configuration keys and defaults.
    Keys,
}

fn load_config(args: &ConfigArgs, extra: &[(&str, String)]) -> Result<ExperimentConfig, RunError> {
    let mut raw = match &args.config {
        Some(path) => RawConfig::load(path).map_err(|e| ImageIoError::io(path, e))??,
        None => RawConfig::default(),
    };
    for pair in &args.overrides {
        raw.set_pair(pair)?;
    }
    for (k, v) in extra {
        raw.set(k, v.clone());
    }
    Ok(raw.build()?)
}

fn parse_solver(name: &str) -> Result<SolverKind, RunError> {
    SolverKind::parse(name).ok_or_else(|| {
        RunError::Config(ConfigError::Value {
            key: "--solver".into(),
            line: None,
            message: format!("unknown solver `{name}`"),
        })
    })
}

fn read_observation(path: &Path) -> Result<crate::ImageGrid, RunError> {
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    Ok(if is_pgm {
        io::read_counts(path)?.to_image()
    } else {
        io::read_image(path)?
    })
}

fn execute(command: Command) -> Result<(), RunError> {
    match command {
        Command::Generate { config, seed, out } => {
            let cfg = load_config(&config, &[])?;
            let truth = experiment::make_phantom(&cfg, seed)?;
            io::write_image(&out, &truth)?;
        }
        Command::Degrade {
            config,
            input,
            seed,
            out,
            mean,
        } => {
            let cfg = load_config(&config, &[])?;
            let truth = io::read_image(&input)?;
            let (lambda, counts) = experiment::degrade(&cfg, &truth, seed)?;
            io::write_counts(&out, &counts, PgmFormat::Raw)?;
            if let Some(path) = mean {
                io::write_image(&path, &lambda)?;
            }
        }
        Command::Restore {
            config,
            input,
            solver,
            truth,
            out,
            trace: trace_path,
        } => {
            let cfg = load_config(&config, &[])?;
            let solver = parse_solver(&solver)?;
            let g = read_observation(&input)?;
            let truth = truth.map(|p| io::read_image(&p)).transpose()?;
            let (background, _) = experiment::noise_level(&cfg, truth.as_ref().unwrap_or(&g))?;
            let reference = truth.map(|t| t.add_scalar(background));
            let ops = Operators::new(&cfg, g.height(), g.width())?;
            match experiment::restore(&cfg, &ops, solver, &g, background, reference.as_ref()) {
                Ok(r) => {
                    io::write_image(&out, &r.image)?;
                    if let Some(p) = &trace_path {
                        trace::emit_trace(&r.trace, p)?;
                    }
                    if solver == SolverKind::Pis {
                        if let Some(it) = r.trace.first_increase(1e-9) {
                            eprintln!("warning: objective increased at iteration {it}");
                        }
                    }
                    for w in &r.trace.warnings {
                        eprintln!("warning: {w}");
                    }
                    print!("{solver}: {} iterations", r.trace.iterations());
                    if let (Some(n), Some(s)) = (r.nmse, r.ssim) {
                        print!(", reported iterate {}, nmse {n:.6}, ssim {s:.4}", r.reported_iter);
                    }
                    println!(", {:.2?}", r.wall_time);
                }
                Err(e) => {
                    if let (RunError::Solver { trace, .. }, Some(p)) = (&e, &trace_path) {
                        trace::emit_trace(trace, p)?;
                    }
                    return Err(e);
                }
            }
        }
        Command::Evaluate {
            truth,
            estimate,
            offset,
            range,
        } => {
            let truth = io::read_image(&truth)?.add_scalar(offset);
            let est = io::read_image(&estimate)?;
            let nmse = crate::metrics::nmse(&truth, &est)?;
            let ssim = match range {
                Some(r) => crate::metrics::ssim(&truth, &est, r)?,
                None => crate::metrics::ssim_auto(&truth, &est)?,
            };
            println!("nmse,ssim\n{nmse},{ssim}");
        }
        Command::Benchmark {
            config,
            trials,
            seed,
            out,
        } => {
            let mut extra = Vec::new();
            if let Some(t) = trials {
                extra.push(("trials", t.to_string()));
            }
            if let Some(s) = seed {
                extra.push(("seed", s.to_string()));
            }
            if let Some(o) = out {
                extra.push(("output", o.display().to_string()));
            }
            let cfg = load_config(&config, &extra)?;
            let report = experiment::run_experiment(&cfg)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("solver  trials  mean_nmse  stderr     mean_ssim  iterations  mean_time");
            for row in &report.summary {
                let a = &row.aggregate;
                let secs: f64 = report
                    .trials
                    .iter()
                    .flat_map(|t| &t.restorations)
                    .filter(|r| r.solver == row.solver)
                    .map(|r| r.wall_time.as_secs_f64())
                    .sum::<f64>()
                    / a.trials as f64;
                println!(
                    "{:<7} {:>6}  {:<9.5}  {:<9.5}  {:<9.4}  {:>10.1}  {secs:.2}s",
                    row.solver.name(),
                    a.trials,
                    a.mean_nmse,
                    a.stderr_nmse,
                    a.mean_ssim,
                    a.mean_iterations
                );
            }
            println!("artifacts in {}", report.output.display());
        }
        Command::Keys => {
            for (k, d, help) in KEYS {
                println!("{k:<28} {d:<12} {help}");
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
