//! generate → degrade → restore → evaluate, over independent trials.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use super::config::{
    BackgroundAtom, ConfigError, ExperimentConfig, FrameChoice, GisWeight, PhantomSource, SolverKind,
};
use super::io::{self, ImageIoError, PgmFormat};
use super::trace::{self, SUMMARY_HEADER, TRIALS_HEADER};
use crate::error::Error;
use crate::grid::{CountGrid, ImageGrid};
use crate::metrics::{self, Aggregate, TrialSummary, SSIM_WINDOW};
use crate::operators::{
    augment_background_scaled, compose, BackgroundAugmented, Composed, Convolution, Identity, Kernel,
    LinearOp, TiHaar,
};
use crate::phantoms::{apply_degradation, derive_seed, poisson_sample, shepp_logan, sparse_point_phantom};
use crate::solvers::{
    default_initial_coeffs, gis_solve, gis_step_size, pis_solve, rltv_solve, GisConfig, PriorConfig,
    Problem, SolveFailure, SolveTrace, StopRule,
};

const PHANTOM_TAG: u64 = 1;
const NOISE_TAG: u64 = 2;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Image(#[from] ImageIoError),
    #[error("{0}")]
    Setup(#[from] Error),
    #[error("{solver} failed{}: {source} (after {} iterations)", trial.map(|t| format!(" in trial {t}")).unwrap_or_default(), trace.iterations())]
    Solver {
        solver: SolverKind,
        trial: Option<usize>,
        #[source]
        source: Error,
        trace: Box<SolveTrace>,
    },
}

impl RunError {
    /// 2 configuration, 3 solver or domain error, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Setup(Error::Domain { .. }) => 3,
            RunError::Setup(_) => 2,
            RunError::Solver { .. } => 3,
            RunError::Image(_) => 4,
        }
    }

    fn solver(solver: SolverKind, failure: SolveFailure) -> Self {
        RunError::Solver {
            solver,
            trial: None,
            source: failure.error,
            trace: Box::new(failure.trace),
        }
    }
}

/// Operators shared by every trial of an experiment.
pub struct Operators {
    pub convolution: Arc<Convolution>,
    pub forward: BackgroundAugmented<Composed<Arc<Convolution>, Arc<dyn LinearOp>>>,
    pub synthesis: BackgroundAugmented<Arc<dyn LinearOp>>,
}

impl Operators {
    pub fn new(cfg: &ExperimentConfig, height: usize, width: usize) -> Result<Self, RunError> {
        let kernel = cfg.kernel.build()?.unwrap_or_else(Kernel::delta);
        let convolution = Arc::new(Convolution::new(kernel, height, width)?);
        let frame: Arc<dyn LinearOp> = match cfg.frame {
            FrameChoice::TiHaar { levels } => Arc::new(TiHaar::new(height, width, levels)?),
            FrameChoice::Identity => Arc::new(Identity::new(height, width)),
        };
        let scale = match cfg.background_atom {
            BackgroundAtom::Unit => 1.0 / ((height * width) as f64).sqrt(),
            BackgroundAtom::Ones => 1.0,
        };
        Ok(Self {
            forward: augment_background_scaled(compose(convolution.clone(), frame.clone())?, scale)?,
            synthesis: augment_background_scaled(frame, scale)?,
            convolution,
        })
    }
}

/// Ground truth and simulated observation for one trial.
#[derive(Debug, Clone)]
pub struct Scene {
    pub seed: u64,
    pub truth: ImageGrid,
    /// `truth + f₀`, the image restorations are scored against.
    pub reference: ImageGrid,
    pub mean: ImageGrid,
    pub counts: CountGrid,
    pub background: f64,
    pub snr: f64,
}

/// Phantom for a trial seed. File phantoms ignore the seed and the
/// configured size.
pub fn make_phantom(cfg: &ExperimentConfig, seed: u64) -> Result<ImageGrid, RunError> {
    let (h, w) = (cfg.phantom.height, cfg.phantom.width);
    Ok(match &cfg.phantom.source {
        PhantomSource::SheppLogan => shepp_logan(h, w)?,
        PhantomSource::Sparse { density, peak } => {
            sparse_point_phantom(h, w, *density, *peak, derive_seed(seed, PHANTOM_TAG))?
        }
        PhantomSource::File(path) => io::read_image(path)?,
    })
}

/// Background level and SNR implied by the config for a given truth.
pub fn noise_level(cfg: &ExperimentConfig, truth: &ImageGrid) -> Result<(f64, f64), RunError> {
    let file_peak = matches!(cfg.phantom.source, PhantomSource::File(_)).then(|| truth.max());
    Ok(cfg.background(cfg.reference_peak(file_peak))?)
}

/// `λ = H[f] + f₀` and a Poisson draw from it.
pub fn degrade(
    cfg: &ExperimentConfig,
    truth: &ImageGrid,
    seed: u64,
) -> Result<(ImageGrid, CountGrid), RunError> {
    let (background, _) = noise_level(cfg, truth)?;
    let kernel = cfg.kernel.build()?;
    let mean = apply_degradation(truth, kernel.as_ref(), background)?;
    let counts = poisson_sample(&mean, derive_seed(seed, NOISE_TAG))?;
    Ok((mean, counts))
}

pub fn make_scene(cfg: &ExperimentConfig, seed: u64) -> Result<Scene, RunError> {
    let truth = make_phantom(cfg, seed)?;
    let (background, snr) = noise_level(cfg, &truth)?;
    let (mean, counts) = degrade(cfg, &truth, seed)?;
    Ok(Scene {
        seed,
        reference: truth.add_scalar(background),
        truth,
        mean,
        counts,
        background,
        snr,
    })
}

/// A restored image with its history and scores.
#[derive(Debug, Clone)]
pub struct Restoration {
    pub solver: SolverKind,
    pub image: ImageGrid,
    pub trace: SolveTrace,
    /// Iteration whose image is reported (the lowest-NMSE one for RL/RLTV
    /// in `best` mode).
    pub reported_iter: usize,
    pub nmse: Option<f64>,
    pub ssim: Option<f64>,
    pub wall_time: Duration,
}

fn score_ssim(cfg: &ExperimentConfig, reference: &ImageGrid, image: &ImageGrid) -> Result<Option<f64>, RunError> {
    let (h, w) = reference.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Ok(None);
    }
    Ok(Some(match cfg.ssim_range {
        Some(r) => metrics::ssim(reference, image, r)?,
        None => metrics::ssim_auto(reference, image)?,
    }))
}

/// Runs one solver on `g`. `background` is the level used for the GIS noise
/// variance when none is configured; `reference` enables NMSE tracking.
pub fn restore(
    cfg: &ExperimentConfig,
    ops: &Operators,
    solver: SolverKind,
    g: &ImageGrid,
    background: f64,
    reference: Option<&ImageGrid>,
) -> Result<Restoration, RunError> {
    let start = Instant::now();
    let mut problem = Problem::new(&ops.forward, &ops.synthesis);
    if let Some(r) = reference {
        problem = problem.with_truth(r);
    }
    let fail = |f: SolveFailure| RunError::solver(solver, f);
    let (image, trace, reported_iter) = match solver {
        SolverKind::Pis => {
            let c0 = default_initial_coeffs(g, &ops.synthesis)?;
            let p = &cfg.pis;
            let sol = pis_solve(g, &problem, &p.prior, &p.step, &p.stop, &c0).map_err(fail)?;
            let it = sol.trace.iterations();
            (sol.image, sol.trace, it)
        }
        SolverKind::Gis => {
            let sigma2 = cfg.gis.sigma2.unwrap_or(background);
            let gamma = match cfg.gis.weight {
                GisWeight::Beta(beta) => sigma2 / beta,
                GisWeight::Gamma(gamma) => gamma,
            };
            let prior = PriorConfig::from_gamma(gamma)?
                .with_background_penalty(cfg.pis.prior.penalizes_background())
                .with_approximation_penalty(cfg.pis.prior.penalizes_approximation());
            let (mu, lambda) = gis_step_size(&ops.forward, cfg.gis.mu_factor)?;
            let gis = GisConfig {
                prior,
                mu,
                lambda_max: Some(lambda),
            };
            let c0 = default_initial_coeffs(g, &ops.synthesis)?;
            let sol = gis_solve(g, &problem, &gis, &cfg.gis.stop, &c0).map_err(fail)?;
            let it = sol.trace.iterations();
            (sol.image, sol.trace, it)
        }
        SolverKind::Rl | SolverKind::Rltv => {
            let p = cfg.rl_params(solver);
            let f0 = ImageGrid::filled(g.height(), g.width(), g.mean().max(f64::MIN_POSITIVE));
            let sol = rltv_solve(
                g,
                &ops.convolution,
                &f0,
                p.gamma_tv,
                0.0,
                &StopRule::iterations(p.max_iter),
                reference,
            )
            .map_err(fail)?;
            match sol.best {
                Some((it, img)) if p.report_best => (img, sol.trace, it),
                _ => {
                    let it = sol.trace.iterations();
                    (sol.image, sol.trace, it)
                }
            }
        }
    };
    let wall_time = start.elapsed();
    let (nmse, ssim) = match reference {
        Some(r) => (Some(metrics::nmse(r, &image)?), score_ssim(cfg, r, &image)?),
        None => (None, None),
    };
    Ok(Restoration {
        solver,
        image,
        trace,
        reported_iter,
        nmse,
        ssim,
        wall_time,
    })
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub index: usize,
    pub scene: Scene,
    pub restorations: Vec<Restoration>,
}

/// Partial result of a trial that stopped at a solver failure.
struct TrialFailure {
    scene: Option<Scene>,
    done: Vec<Restoration>,
    error: RunError,
}

pub fn trial_seed(cfg: &ExperimentConfig, index: usize) -> u64 {
    cfg.seed.wrapping_add(index as u64)
}

fn run_trial_inner(cfg: &ExperimentConfig, ops: &Operators, index: usize) -> Result<TrialOutcome, TrialFailure> {
    let scene = make_scene(cfg, trial_seed(cfg, index)).map_err(|error| TrialFailure {
        scene: None,
        done: Vec::new(),
        error,
    })?;
    let g = scene.counts.to_image();
    let mut done = Vec::new();
    for &solver in &cfg.solvers {
        match restore(cfg, ops, solver, &g, scene.background, Some(&scene.reference)) {
            Ok(r) => done.push(r),
            Err(mut error) => {
                if let RunError::Solver { trial, .. } = &mut error {
                    *trial = Some(index);
                }
                return Err(TrialFailure {
                    scene: Some(scene),
                    done,
                    error,
                });
            }
        }
    }
    Ok(TrialOutcome {
        index,
        scene,
        restorations: done,
    })
}

/// One trial without writing anything.
pub fn run_trial(cfg: &ExperimentConfig, ops: &Operators, index: usize) -> Result<TrialOutcome, RunError> {
    run_trial_inner(cfg, ops, index).map_err(|f| f.error)
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub solver: SolverKind,
    pub kernel: String,
    pub snr: f64,
    pub height: usize,
    pub width: usize,
    pub aggregate: Aggregate,
}

impl SummaryRow {
    pub fn csv_line(&self) -> String {
        let a = &self.aggregate;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.solver,
            self.kernel,
            self.snr,
            a.trials,
            a.mean_nmse,
            a.stderr_nmse,
            a.mean_ssim,
            a.mean_iterations,
            a.stderr_ssim,
            self.height,
            self.width
        )
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub trials: Vec<TrialOutcome>,
    pub summary: Vec<SummaryRow>,
    pub warnings: Vec<String>,
    pub output: PathBuf,
}

impl ExperimentReport {
    pub fn row(&self, solver: SolverKind) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.solver == solver)
    }

    /// Scores of one solver across trials, in trial order.
    pub fn scores(&self, solver: SolverKind) -> Vec<(f64, f64)> {
        self.trials
            .iter()
            .filter_map(|t| t.restorations.iter().find(|r| r.solver == solver))
            .map(|r| (r.nmse.unwrap_or(f64::NAN), r.ssim.unwrap_or(f64::NAN)))
            .collect()
    }
}

pub fn trial_dir(out: &Path, index: usize) -> PathBuf {
    out.join(format!("trial_{index:03}"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ImageIoError> {
    std::fs::write(path, contents).map_err(|e| ImageIoError::io(path, e))
}

fn write_scene(cfg: &ExperimentConfig, dir: &Path, scene: &Scene) -> Result<(), ImageIoError> {
    std::fs::create_dir_all(dir).map_err(|e| ImageIoError::io(dir, e))?;
    io::write_image(&dir.join("truth.csv"), &scene.truth)?;
    io::write_counts(&dir.join("counts.pgm"), &scene.counts, PgmFormat::Raw)?;
    if cfg.write_images {
        io::write_image(&dir.join("truth.pgm"), &scene.truth)?;
        io::write_image(&dir.join("mean.csv"), &scene.mean)?;
    }
    Ok(())
}

fn write_restoration(cfg: &ExperimentConfig, dir: &Path, r: &Restoration) -> Result<(), ImageIoError> {
    io::write_image(&dir.join(format!("{}.csv", r.solver)), &r.image)?;
    trace::emit_trace(&r.trace, &dir.join(format!("{}_trace.csv", r.solver)))?;
    if cfg.write_images {
        io::write_image(&dir.join(format!("{}.pgm", r.solver)), &r.image)?;
    }
    Ok(())
}

/// Runs every trial, writes per-trial artifacts, `trials.csv`, `summary.csv`
/// and per-solver mean NMSE curves under `cfg.output`. On a solver failure
/// the partial trace is written before the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, RunError> {
    let out = cfg.output.clone();
    std::fs::create_dir_all(&out).map_err(|e| ImageIoError::io(&out, e))?;
    let probe = make_phantom(cfg, trial_seed(cfg, 0))?;
    let (height, width) = probe.shape();
    let ops = Operators::new(cfg, height, width)?;

    let results: Vec<Result<TrialOutcome, TrialFailure>> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| run_trial_inner(cfg, &ops, k))
        .collect();

    let mut trials = Vec::with_capacity(cfg.trials);
    for (k, result) in results.into_iter().enumerate() {
        let dir = trial_dir(&out, k);
        match result {
            Ok(t) => {
                write_scene(cfg, &dir, &t.scene)?;
                for r in &t.restorations {
                    write_restoration(cfg, &dir, r)?;
                }
                trials.push(t);
            }
            Err(f) => {
                if let Some(scene) = &f.scene {
                    write_scene(cfg, &dir, scene)?;
                }
                for r in &f.done {
                    write_restoration(cfg, &dir, r)?;
                }
                if let RunError::Solver { solver, trace, .. } = &f.error {
                    trace::emit_trace(trace, &dir.join(format!("{solver}_trace.csv")))?;
                }
                return Err(f.error);
            }
        }
    }

    let mut warnings = Vec::new();
    let mut trials_csv = format!("{TRIALS_HEADER}\n");
    let mut summary_csv = format!("{SUMMARY_HEADER}\n");
    let mut summary = Vec::new();
    for &solver in &cfg.solvers {
        let mut rows = Vec::new();
        for t in &trials {
            let r = t
                .restorations
                .iter()
                .find(|r| r.solver == solver)
                .expect("every solver ran");
            if solver == SolverKind::Pis {
                if let Some(it) = r.trace.first_increase(1e-9) {
                    warnings.push(format!("pis objective increased at iteration {it} in trial {}", t.index));
                }
            }
            for w in &r.trace.warnings {
                warnings.push(format!("{solver} trial {}: {w}", t.index));
            }
            trials_csv.push_str(&format!(
                "{solver},{},{},{},{},{},{},{}\n",
                t.index,
                t.scene.seed,
                opt(r.nmse),
                opt(r.ssim),
                r.trace.iterations(),
                r.reported_iter,
                r.trace.termination.map(|x| x.to_string()).unwrap_or_default()
            ));
            rows.push(TrialSummary {
                seed: t.scene.seed,
                nmse: r.nmse.unwrap_or(f64::NAN),
                ssim: r.ssim.unwrap_or(f64::NAN),
                iterations: r.reported_iter,
                wall_time: r.wall_time,
            });
        }
        let row = SummaryRow {
            solver,
            kernel: cfg.kernel.label(),
            snr: trials[0].scene.snr,
            height,
            width,
            aggregate: metrics::aggregate(&rows)?,
        };
        summary_csv.push_str(&row.csv_line());
        summary_csv.push('\n');
        summary.push(row);

        let traces: Vec<&SolveTrace> = trials
            .iter()
            .filter_map(|t| t.restorations.iter().find(|r| r.solver == solver))
            .map(|r| &r.trace)
            .collect();
        write(
            &out.join(format!("trace_mean_{solver}.csv")),
            trace::mean_curve_csv(&trace::mean_nmse_curve(&traces)),
        )?;
    }
    write(&out.join("trials.csv"), trials_csv)?;
    write(&out.join("summary.csv"), summary_csv)?;
    Ok(ExperimentReport {
        trials,
        summary,
        warnings,
        output: out,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
