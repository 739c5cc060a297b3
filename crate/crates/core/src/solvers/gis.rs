//! Gaussian-likelihood iterative shrinkage (ISTA):
//! `c ← S_{γ/μ}(c + A*[g − A c] / μ)`, convergent for `μ > λ_max(A*A)`.
//! The data may take any real values.

use super::pis::shrink;
use super::{
    rel_change, IterRecord, PriorConfig, Problem, Solution, SolveFailure, SolveTrace,
    StopRule, Termination,
};
use crate::error::{Error, Result};
use crate::grid::{accurate_sum, CoeffField, ImageGrid};
use crate::operators::{operator_norm_sq, LinearOp};

const POWER_ITERATIONS: usize = 50;
const POWER_SEED: u64 = 0x6715;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GisConfig {
    pub prior: PriorConfig,
    pub mu: f64,
    /// `λ_max(A*A)` when already known; estimated by power iteration otherwise.
    pub lambda_max: Option<f64>,
}

/// `factor · λ_max(A*A)` with `λ_max` from power iteration; the returned pair
/// is `(μ, λ_max)`.
pub fn gis_step_size<A: LinearOp + ?Sized>(op: &A, factor: f64) -> Result<(f64, f64)> {
    let lambda = operator_norm_sq(op, POWER_ITERATIONS, POWER_SEED)?;
    Ok((factor * lambda, lambda))
}

/// `½‖g − A c‖² + γ‖c‖₁`.
pub fn gis_objective<A: LinearOp + ?Sized>(
    c: &CoeffField,
    g: &ImageGrid,
    op: &A,
    prior: &PriorConfig,
) -> Result<f64> {
    let ax = op.apply(c)?;
    ax.same_shape(g)?;
    Ok(residual_energy(&ax, g) + prior.penalty(c))
}

fn residual_energy(ax: &ImageGrid, g: &ImageGrid) -> f64 {
    0.5 * accurate_sum(
        ax.as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(a, b)| (b - a) * (b - a)),
    )
}

pub fn gis_solve(
    g: &ImageGrid,
    problem: &Problem<'_>,
    cfg: &GisConfig,
    stop: &StopRule,
    c0: &CoeffField,
) -> std::result::Result<Solution, SolveFailure> {
    stop.validate()?;
    if !(cfg.mu > 0.0 && cfg.mu.is_finite()) {
        return Err(Error::invalid(format!("mu must be positive, got {}", cfg.mu)).into());
    }
    problem.validate(g, c0)?;
    let mut trace = SolveTrace::default();
    match run_gis(g, problem, cfg, stop, c0, &mut trace) {
        Ok((coeffs, image)) => Ok(Solution {
            coeffs,
            image,
            trace,
        }),
        Err(e) => Err(SolveFailure::new(e, trace)),
    }
}

fn run_gis(
    g: &ImageGrid,
    problem: &Problem<'_>,
    cfg: &GisConfig,
    stop: &StopRule,
    c0: &CoeffField,
    trace: &mut SolveTrace,
) -> Result<(CoeffField, ImageGrid)> {
    let op = problem.forward;
    let lambda = match cfg.lambda_max {
        Some(l) => l,
        None => operator_norm_sq(op, POWER_ITERATIONS, POWER_SEED)?,
    };
    if cfg.mu <= lambda {
        trace.warnings.push(format!(
            "mu = {} does not exceed lambda_max(A*A) = {lambda}; convergence is not guaranteed",
            cfg.mu
        ));
    }
    let mut c = c0.clone();
    let mut ax = op.apply(&c)?;
    let mut f = problem.synthesis.apply(&c)?;
    trace.push(IterRecord {
        iter: 0,
        objective: residual_energy(&ax, g) + cfg.prior.penalty(&c),
        mu: None,
        rel_change: None,
        nmse: problem.nmse(&f)?,
    });
    for t in 1..=stop.max_iter {
        let resid = g.zip_map(&ax, |a, b| a - b)?;
        let arg = c.add_scaled(&op.adjoint(&resid)?, 1.0 / cfg.mu)?;
        let c_next = shrink(&arg, &cfg.prior, cfg.mu);
        let unchanged = c_next == c;
        ax = op.apply(&c_next)?;
        let f_next = problem.synthesis.apply(&c_next)?;
        let change = rel_change(&f, &f_next)?;
        trace.push(IterRecord {
            iter: t,
            objective: residual_energy(&ax, g) + cfg.prior.penalty(&c_next),
            mu: Some(cfg.mu),
            rel_change: Some(change),
            nmse: problem.nmse(&f_next)?,
        });
        c = c_next;
        f = f_next;
        if unchanged {
            trace.termination = Some(Termination::FixedPoint);
            return Ok((c, f));
        }
        if change < stop.rel_tol {
            trace.termination = Some(Termination::Converged);
            return Ok((c, f));
        }
    }
    trace.termination = Some(Termination::MaxIterations);
    Ok((c, f))
}
