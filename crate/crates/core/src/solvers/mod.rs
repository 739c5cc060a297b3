//! Iterative restoration solvers: Poisson iterative shrinkage (PIS) and the
//! reference methods GIS, Richardson-Lucy and RL with total-variation
//! regularisation.
//!
//! Every solver takes real-valued nonnegative data so that noiseless
//! consistency checks can feed `A[c★]` directly; photon counts enter through
//! [`CountGrid::to_image`](crate::grid::CountGrid::to_image).

mod gis;
mod pis;
mod rl;
#[cfg(test)]
mod tests;

use std::fmt;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::grid::{BandId, CoeffField, ImageGrid};
use crate::operators::LinearOp;

pub use gis::{gis_objective, gis_solve, gis_step_size, GisConfig};
pub use pis::{
    default_initial_coeffs, find_mu, objective, pis_gradient_arg, pis_solve, shrink,
    smooth_gradient, smooth_objective, soft_threshold, surrogate_gap, MuStep,
};
pub use rl::{curvature, poisson_nll, rl_solve, rl_step, rltv_solve, rltv_step, RlSolution};

/// Lower clamp applied to `A[c]` before division and logarithm.
pub const FORWARD_FLOOR: f64 = 1e-12;

/// Regulariser of the gradient norm in the TV curvature term.
pub const CURVATURE_EPS: f64 = 1e-8;

/// Laplacian prior `exp(-|c|/β)`, i.e. the ℓ₁ penalty `γ‖c‖₁` with `γ = 1/β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    gamma: f64,
    penalize_background: bool,
    penalize_approximation: bool,
}

impl PriorConfig {
    pub fn from_gamma(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be finite and >= 0, got {gamma}")));
        }
        Ok(Self {
            gamma,
            penalize_background: false,
            penalize_approximation: true,
        })
    }

    pub fn from_beta(beta: f64) -> Result<Self> {
        if !(beta > 0.0) || beta.is_nan() {
            return Err(Error::invalid(format!("beta must be positive, got {beta}")));
        }
        Self::from_gamma(1.0 / beta)
    }

    /// Both parameters given: they must agree, `γ·β = 1`.
    pub fn new(gamma: f64, beta: f64) -> Result<Self> {
        let prior = Self::from_beta(beta)?;
        if (gamma * beta - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "gamma = {gamma} is inconsistent with beta = {beta} (expected gamma = 1/beta)"
            )));
        }
        Ok(prior)
    }

    /// Whether the background coefficient is penalised and thresholded too.
    pub fn with_background_penalty(mut self, penalize: bool) -> Self {
        self.penalize_background = penalize;
        self
    }

    /// Whether coarse approximation bands of a frame are penalised and
    /// thresholded. Detail bands and pixel bands always are.
    pub fn with_approximation_penalty(mut self, penalize: bool) -> Self {
        self.penalize_approximation = penalize;
        self
    }

    pub fn penalizes_approximation(&self) -> bool {
        self.penalize_approximation
    }

    pub(crate) fn penalizes_band(&self, id: BandId) -> bool {
        self.penalize_approximation || !matches!(id, BandId::Approximation { .. })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn beta(&self) -> f64 {
        1.0 / self.gamma
    }

    /// Shape parameter of the generalised Gaussian; fixed at 1.
    pub fn p(&self) -> f64 {
        1.0
    }

    pub fn penalizes_background(&self) -> bool {
        self.penalize_background
    }

    /// `γ‖c‖₁` over the penalised coefficients.
    pub fn penalty(&self, c: &CoeffField) -> f64 {
        if self.gamma == 0.0 {
            return 0.0;
        }
        let bands = crate::grid::accurate_sum(
            c.bands()
                .iter()
                .filter(|(id, _)| self.penalizes_band(*id))
                .flat_map(|(_, g)| g.as_slice().iter().map(|v| v.abs())),
        );
        let bg = match c.background() {
            Some(b) if self.penalize_background => b.abs(),
            _ => 0.0,
        };
        self.gamma * (bands + bg)
    }
}

/// Parameters of the geometric step-size search. `alpha` closer to 1 gives
/// a finer search at the cost of more operator applications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuSearchConfig {
    pub alpha: f64,
    pub nu_init: f64,
    pub max_doublings: usize,
}

impl Default for MuSearchConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            nu_init: 1.0,
            max_doublings: 400,
        }
    }
}

impl MuSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.nu_init > 0.0 && self.nu_init.is_finite()) {
            return Err(Error::invalid(format!("nu_init must be positive, got {}", self.nu_init)));
        }
        if self.max_doublings == 0 {
            return Err(Error::invalid("max_doublings must be positive"));
        }
        Ok(())
    }
}

/// How PIS chooses `μ_t` each iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Search(MuSearchConfig),
    Fixed(f64),
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Search(MuSearchConfig::default())
    }
}

impl StepRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            StepRule::Search(cfg) => cfg.validate(),
            StepRule::Fixed(mu) if *mu > 0.0 && mu.is_finite() => Ok(()),
            StepRule::Fixed(mu) => Err(Error::invalid(format!("fixed mu must be positive, got {mu}"))),
        }
    }
}

/// Stop when the reconstructed image changes by less than `rel_tol`
/// (relative Frobenius norm) or after `max_iter` iterations. A zero
/// tolerance runs the full budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            max_iter: 500,
        }
    }
}

impl StopRule {
    pub fn iterations(max_iter: usize) -> Self {
        Self {
            rel_tol: 0.0,
            max_iter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol >= 0.0) {
            return Err(Error::invalid(format!("rel_tol must be >= 0, got {}", self.rel_tol)));
        }
        Ok(())
    }
}

/// One row of a solver trace. Row 0 describes the starting point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub mu: Option<f64>,
    pub rel_change: Option<f64>,
    pub nmse: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// The update left the iterate exactly unchanged.
    FixedPoint,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::FixedPoint => "fixed_point",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveTrace {
    pub records: Vec<IterRecord>,
    pub termination: Option<Termination>,
    /// Number of times `A[c]` was clamped to [`FORWARD_FLOOR`] at a pixel with data.
    pub floor_activations: usize,
    pub warnings: Vec<String>,
}

impl SolveTrace {
    /// Iterations performed (rows after the starting point).
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iter)
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// First `t` with `E_t > E_{t-1} + slack`, if any.
    pub fn first_increase(&self, slack: f64) -> Option<usize> {
        self.records
            .windows(2)
            .find(|w| w[1].objective > w[0].objective + slack)
            .map(|w| w[1].iter)
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.first_increase(slack).is_none()
    }

    /// Row with the smallest NMSE, when ground truth was supplied.
    pub fn best_nmse(&self) -> Option<&IterRecord> {
        self.records
            .iter()
            .filter(|r| r.nmse.is_some())
            .min_by(|a, b| a.nmse.partial_cmp(&b.nmse).expect("NMSE is finite"))
    }

    pub(crate) fn push(&mut self, record: IterRecord) {
        self.records.push(record);
    }
}

/// Coefficients, the restored image and the run history.
#[derive(Debug, Clone)]
pub struct Solution {
    pub coeffs: CoeffField,
    /// Restored image `Φ̃[c]`, background included.
    pub image: ImageGrid,
    pub trace: SolveTrace,
}

/// A solver error together with the trace recorded up to the failure.
#[derive(Debug, Clone, Error)]
#[error("{error} (after {} iterations)", trace.iterations())]
pub struct SolveFailure {
    #[source]
    pub error: Error,
    pub trace: SolveTrace,
}

impl SolveFailure {
    pub(crate) fn new(error: Error, trace: SolveTrace) -> Self {
        Self { error, trace }
    }
}

impl From<Error> for SolveFailure {
    fn from(error: Error) -> Self {
        Self::new(error, SolveTrace::default())
    }
}

/// Operators and optional ground truth for a synthesis-model solve.
///
/// `forward` maps coefficients to the noiseless data mean; `synthesis` maps
/// the same coefficients to the restored image. Both share one domain. With a
/// background slot the restored image is `Φ[c] + f₀`, and ground truth must
/// carry the same offset.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub forward: &'a dyn LinearOp,
    pub synthesis: &'a dyn LinearOp,
    pub truth: Option<&'a ImageGrid>,
}

impl<'a> Problem<'a> {
    pub fn new(forward: &'a dyn LinearOp, synthesis: &'a dyn LinearOp) -> Self {
        Self {
            forward,
            synthesis,
            truth: None,
        }
    }

    pub fn with_truth(mut self, truth: &'a ImageGrid) -> Self {
        self.truth = Some(truth);
        self
    }

    pub(crate) fn validate(&self, g: &ImageGrid, c0: &CoeffField) -> Result<()> {
        let domain = self.forward.domain();
        if self.synthesis.domain() != domain {
            return Err(Error::dims(domain, self.synthesis.domain()));
        }
        if c0.shape() != domain {
            return Err(Error::dims(domain, c0.shape()));
        }
        let range = self.forward.range();
        if g.shape() != range {
            return Err(Error::dims(
                format!("{}x{} data", range.0, range.1),
                format!("{}x{}", g.height(), g.width()),
            ));
        }
        if let Some(t) = self.truth {
            if t.shape() != self.synthesis.range() {
                return Err(Error::dims(
                    format!("{:?} ground truth", self.synthesis.range()),
                    format!("{:?}", t.shape()),
                ));
            }
        }
        Ok(())
    }

    pub(crate) fn nmse(&self, f: &ImageGrid) -> Result<Option<f64>> {
        self.truth.map(|t| crate::metrics::nmse(t, f)).transpose()
    }
}

pub(crate) fn check_data(g: &ImageGrid) -> Result<()> {
    let (h, w) = g.shape();
    for (i, &v) in g.as_slice().iter().enumerate() {
        if v < 0.0 {
            return Err(Error::Domain {
                row: i / w,
                col: i % w,
                detail: format!("negative data value {v} in {h}x{w} image"),
            });
        }
    }
    Ok(())
}

/// Relative change that tolerates a zero previous iterate.
pub(crate) fn rel_change(prev: &ImageGrid, next: &ImageGrid) -> Result<f64> {
    if prev.norm_sq() == 0.0 {
        return Ok(if next.norm_sq() == 0.0 { 0.0 } else { f64::INFINITY });
    }
    crate::metrics::relative_change(prev, next)
}
