//! Poisson iterative shrinkage.
//!
//! Minimises `E(c) = ⟨1, A c⟩ − ⟨g, log A c⟩ + γ‖c‖₁` by iterating
//! `c ← S_{γ/μ}(c + A*[g/Ac − 1] / μ)`, with `μ` chosen per iteration so
//! that the quadratic surrogate majorises the data term at the new point.

use super::{
    check_data, rel_change, IterRecord, MuSearchConfig, PriorConfig, Problem, Solution,
    SolveFailure, SolveTrace, StepRule, StopRule, Termination, FORWARD_FLOOR,
};
use crate::error::{Error, Result};
use crate::grid::{accurate_sum, CoeffField, ImageGrid};
use crate::operators::LinearOp;

fn soft(x: f64, tau: f64) -> f64 {
    if x.abs() >= tau {
        (x.abs() - tau).copysign(x)
    } else {
        0.0
    }
}

/// `S_{γ,μ}`: soft thresholding of every coefficient, the background
/// included, at level `γ/μ`.
pub fn soft_threshold(c: &CoeffField, gamma: f64, mu: f64) -> CoeffField {
    assert!(mu > 0.0, "mu must be positive");
    let tau = gamma / mu;
    c.map(|v| soft(v, tau))
}

/// Soft thresholding at `γ/μ` of the coefficients the prior penalises;
/// the rest pass through unchanged.
pub fn shrink(c: &CoeffField, prior: &PriorConfig, mu: f64) -> CoeffField {
    assert!(mu > 0.0, "mu must be positive");
    let tau = prior.gamma() / mu;
    let bands = c
        .bands()
        .iter()
        .map(|(id, g)| {
            if prior.penalizes_band(*id) {
                (*id, g.map(|v| soft(v, tau)))
            } else {
                (*id, g.clone())
            }
        })
        .collect();
    let bg = c
        .background()
        .map(|b| if prior.penalizes_background() { soft(b, tau) } else { b });
    CoeffField::new(bands, bg).expect("shape preserved")
}

/// `A[c]` with the pixels carrying data clamped to [`FORWARD_FLOOR`];
/// nonpositive values there are a domain error.
struct Forward {
    raw: ImageGrid,
    safe: Vec<f64>,
    floors: usize,
}

fn forward_checked(ax: ImageGrid, g: &ImageGrid) -> Result<Forward> {
    let w = ax.width();
    let mut floors = 0;
    let mut safe = Vec::with_capacity(ax.len());
    for (i, (&a, &gi)) in ax.as_slice().iter().zip(g.as_slice()).enumerate() {
        if gi > 0.0 && a <= 0.0 {
            return Err(Error::Domain {
                row: i / w,
                col: i % w,
                detail: format!("A[c] = {a:e} is not positive where the data is {gi}"),
            });
        }
        if gi > 0.0 && a < FORWARD_FLOOR {
            floors += 1;
        }
        safe.push(a.max(FORWARD_FLOOR));
    }
    Ok(Forward {
        raw: ax,
        safe,
        floors,
    })
}

fn evaluate<A: LinearOp + ?Sized>(op: &A, c: &CoeffField, g: &ImageGrid) -> Result<Forward> {
    forward_checked(op.apply(c)?, g)
}

/// `⟨1, A c⟩ − ⟨g, log A c⟩` from a checked forward image.
fn data_term(fwd: &Forward, g: &ImageGrid) -> f64 {
    accurate_sum(
        fwd.raw
            .as_slice()
            .iter()
            .zip(&fwd.safe)
            .zip(g.as_slice())
            .map(|((&a, &s), &gi)| if gi > 0.0 { a - gi * s.ln() } else { a }),
    )
}

/// `g / A c`, zero where there is no data.
fn ratio(fwd: &Forward, g: &ImageGrid) -> ImageGrid {
    let (h, w) = g.shape();
    let data = fwd
        .safe
        .iter()
        .zip(g.as_slice())
        .map(|(&s, &gi)| if gi > 0.0 { gi / s } else { 0.0 })
        .collect();
    ImageGrid::new(h, w, data).expect("finite ratio")
}

fn check_inputs<A: LinearOp + ?Sized>(c: &CoeffField, g: &ImageGrid, op: &A) -> Result<()> {
    if c.shape() != op.domain() {
        return Err(Error::dims(op.domain(), c.shape()));
    }
    if g.shape() != op.range() {
        let (h, w) = op.range();
        return Err(Error::dims(format!("{h}x{w}"), format!("{}x{}", g.height(), g.width())));
    }
    check_data(g)
}

/// `E(c)`, the negative log-posterior up to constants.
pub fn objective<A: LinearOp + ?Sized>(
    c: &CoeffField,
    g: &ImageGrid,
    op: &A,
    prior: &PriorConfig,
) -> Result<f64> {
    check_inputs(c, g, op)?;
    let fwd = evaluate(op, c, g)?;
    Ok(data_term(&fwd, g) + prior.penalty(c))
}

/// Smooth part `⟨1, A c⟩ − ⟨g, log A c⟩` of the objective.
pub fn smooth_objective<A: LinearOp + ?Sized>(c: &CoeffField, g: &ImageGrid, op: &A) -> Result<f64> {
    check_inputs(c, g, op)?;
    Ok(data_term(&evaluate(op, c, g)?, g))
}

/// Gradient `A*[1 − g/Ac]` of [`smooth_objective`].
pub fn smooth_gradient<A: LinearOp + ?Sized>(
    c: &CoeffField,
    g: &ImageGrid,
    op: &A,
) -> Result<CoeffField> {
    check_inputs(c, g, op)?;
    let fwd = evaluate(op, c, g)?;
    let resid = ratio(&fwd, g).map(|r| 1.0 - r);
    op.adjoint(&resid)
}

/// Shrinkage input `c + (1/μ) A*[(g − A c) / A c]`.
pub fn pis_gradient_arg<A: LinearOp + ?Sized>(
    c: &CoeffField,
    g: &ImageGrid,
    op: &A,
    mu: f64,
) -> Result<CoeffField> {
    check_inputs(c, g, op)?;
    if !(mu > 0.0) {
        return Err(Error::invalid(format!("mu must be positive, got {mu}")));
    }
    let fwd = evaluate(op, c, g)?;
    let resid = fwd
        .safe
        .iter()
        .zip(g.as_slice())
        .map(|(&s, &gi)| (gi - s) / s)
        .collect();
    let resid = ImageGrid::new(g.height(), g.width(), resid)?;
    c.add_scaled(&op.adjoint(&resid)?, 1.0 / mu)
}

/// `x − log(1 + x)` without cancellation near zero.
fn x_minus_log1p(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        // x² Σ_{j≥0} (−x)^j / (j + 2)
        let mut acc = 0.0;
        for j in (0..=10).rev() {
            acc = acc * -x + 1.0 / (j + 2) as f64;
        }
        acc * x * x
    } else {
        x - x.ln_1p()
    }
}

/// `F(c', c)` from the two forward images. Using `⟨A*[r], Δ⟩ = ⟨r, AΔ⟩`
/// the gap becomes `Σ g · φ((a' − a)/a)` with `φ(x) = x − log(1 + x)`.
/// `None` when `a'` leaves the domain.
fn gap_from_images(next_ax: &ImageGrid, cur: &Forward, g: &ImageGrid) -> Option<f64> {
    let mut terms = Vec::with_capacity(g.len());
    for ((&an, &a), &gi) in next_ax.as_slice().iter().zip(&cur.safe).zip(g.as_slice()) {
        if gi > 0.0 {
            if an <= 0.0 {
                return None;
            }
            let x = (an.max(FORWARD_FLOOR) - a) / a;
            terms.push(gi * x_minus_log1p(x));
        }
    }
    Some(accurate_sum(terms))
}

/// `F(c', c) = ⟨A*[g/Ac], c' − c⟩ − ⟨g, log(Ac'/Ac)⟩`, the amount by which
/// the linearised data term undershoots the true one.
pub fn surrogate_gap<A: LinearOp + ?Sized>(
    c_next: &CoeffField,
    c_t: &CoeffField,
    g: &ImageGrid,
    op: &A,
) -> Result<f64> {
    check_inputs(c_t, g, op)?;
    check_inputs(c_next, g, op)?;
    let cur = evaluate(op, c_t, g)?;
    let next = evaluate(op, c_next, g)?;
    Ok(gap_from_images(&next.raw, &cur, g).expect("domain already checked"))
}

/// Step-size search result.
#[derive(Debug, Clone)]
pub struct MuStep {
    pub mu: f64,
    pub c_next: CoeffField,
    /// Surrogate gap `F(c_next, c_t)`.
    pub gap: f64,
    /// `‖c_next − c_t‖²`.
    pub delta_sq: f64,
    /// Whether the initial `ν` already passed, so the search shrank it.
    pub shrank: bool,
    /// Candidate evaluations performed.
    pub evaluations: usize,
}

/// Per-iteration quantities shared by all step-size candidates.
struct StepContext<'a, A: ?Sized> {
    op: &'a A,
    g: &'a ImageGrid,
    prior: &'a PriorConfig,
    c: &'a CoeffField,
    cur: &'a Forward,
    grad: CoeffField,
}

struct Candidate {
    nu: f64,
    c: CoeffField,
    ax: ImageGrid,
    gap: Option<f64>,
    delta_sq: f64,
}

impl Candidate {
    fn passes(&self) -> bool {
        matches!(self.gap, Some(f) if self.nu * self.delta_sq >= 2.0 * f)
    }
}

impl<'a, A: LinearOp + ?Sized> StepContext<'a, A> {
    fn new(
        op: &'a A,
        g: &'a ImageGrid,
        prior: &'a PriorConfig,
        c: &'a CoeffField,
        cur: &'a Forward,
        back_one: &CoeffField,
    ) -> Result<Self> {
        let back = op.adjoint(&ratio(cur, g))?;
        let grad = back.sub(back_one)?;
        Ok(Self {
            op,
            g,
            prior,
            c,
            cur,
            grad,
        })
    }

    fn candidate(&self, nu: f64) -> Result<Candidate> {
        let c = shrink(&self.c.add_scaled(&self.grad, 1.0 / nu)?, self.prior, nu);
        let ax = self.op.apply(&c)?;
        let gap = gap_from_images(&ax, self.cur, self.g);
        let delta_sq = c.sub(self.c)?.norm_sq();
        Ok(Candidate {
            nu,
            c,
            ax,
            gap,
            delta_sq,
        })
    }

    fn search(&self, cfg: &MuSearchConfig) -> Result<(Candidate, bool, usize)> {
        let mut evals = 1;
        let mut cand = self.candidate(cfg.nu_init)?;
        if cand.passes() {
            let mut accepted = cand;
            for _ in 0..cfg.max_doublings {
                if accepted.delta_sq == 0.0 {
                    // c is a fixed point of the shrinkage map for this ν and all smaller ones
                    return Ok((accepted, true, evals));
                }
                let next = self.candidate(accepted.nu * cfg.alpha)?;
                evals += 1;
                if !next.passes() {
                    return Ok((accepted, true, evals));
                }
                accepted = next;
            }
            Err(Error::MuSearchExhausted(cfg.max_doublings))
        } else {
            for _ in 0..cfg.max_doublings {
                cand = self.candidate(cand.nu / cfg.alpha)?;
                evals += 1;
                if cand.passes() {
                    return Ok((cand, false, evals));
                }
            }
            Err(Error::MuSearchExhausted(cfg.max_doublings))
        }
    }
}

/// Algorithm 1: geometric search for the smallest `μ` (to within a factor
/// `α`) such that `μ‖c' − c‖² ≥ 2F(c', c)` for `c' = S(c + A*[g/Ac − 1]/μ)`.
pub fn find_mu<A: LinearOp + ?Sized>(
    c_t: &CoeffField,
    g: &ImageGrid,
    op: &A,
    prior: &PriorConfig,
    cfg: &MuSearchConfig,
) -> Result<MuStep> {
    cfg.validate()?;
    check_inputs(c_t, g, op)?;
    let cur = evaluate(op, c_t, g)?;
    let back_one = op.adjoint(&ImageGrid::filled(g.height(), g.width(), 1.0))?;
    let ctx = StepContext::new(op, g, prior, c_t, &cur, &back_one)?;
    let (cand, shrank, evaluations) = ctx.search(cfg)?;
    Ok(MuStep {
        mu: cand.nu,
        gap: cand.gap.expect("accepted candidate is in the domain"),
        delta_sq: cand.delta_sq,
        c_next: cand.c,
        shrank,
        evaluations,
    })
}

/// Starting coefficients that lie inside the objective's domain.
///
/// With a background slot the background level starts at `median(g)` and
/// the image part at `Φ*[max(g − median(g), ε)]`; otherwise the image part
/// is `Φ*[max(g, ε)]`. For a Parseval frame `Φ Φ* = I`, so the initial image
/// is the clipped data itself.
pub fn default_initial_coeffs<S: LinearOp + ?Sized>(g: &ImageGrid, synthesis: &S) -> Result<CoeffField> {
    const EPS: f64 = 1e-3;
    check_data(g)?;
    if synthesis.domain().background {
        let med = g.median();
        let c = synthesis.adjoint(&g.map(|v| (v - med).max(EPS)))?;
        // the adjoint of a constant image exposes the amplitude of the constant atom
        let ones = synthesis.adjoint(&ImageGrid::filled(g.height(), g.width(), 1.0))?;
        let scale = ones.background().expect("background slot") / g.len() as f64;
        Ok(c.with_background(Some(med / scale)))
    } else {
        synthesis.adjoint(&g.map(|v| v.max(EPS)))
    }
}

/// Runs PIS from `c0` until the stop rule fires.
pub fn pis_solve(
    g: &ImageGrid,
    problem: &Problem<'_>,
    prior: &PriorConfig,
    step: &StepRule,
    stop: &StopRule,
    c0: &CoeffField,
) -> std::result::Result<Solution, SolveFailure> {
    step.validate()?;
    stop.validate()?;
    check_data(g)?;
    problem.validate(g, c0)?;
    let mut trace = SolveTrace::default();
    match run_pis(g, problem, prior, step, stop, c0, &mut trace) {
        Ok((coeffs, image)) => Ok(Solution {
            coeffs,
            image,
            trace,
        }),
        Err(e) => Err(SolveFailure::new(e, trace)),
    }
}

fn run_pis(
    g: &ImageGrid,
    problem: &Problem<'_>,
    prior: &PriorConfig,
    step: &StepRule,
    stop: &StopRule,
    c0: &CoeffField,
    trace: &mut SolveTrace,
) -> Result<(CoeffField, ImageGrid)> {
    let op = problem.forward;
    let back_one = op.adjoint(&ImageGrid::filled(g.height(), g.width(), 1.0))?;
    let mut c = c0.clone();
    let mut cur = evaluate(op, &c, g)?;
    trace.floor_activations += cur.floors;
    let mut f = problem.synthesis.apply(&c)?;
    trace.push(IterRecord {
        iter: 0,
        objective: data_term(&cur, g) + prior.penalty(&c),
        mu: None,
        rel_change: None,
        nmse: problem.nmse(&f)?,
    });

    for t in 1..=stop.max_iter {
        let ctx = StepContext::new(op, g, prior, &c, &cur, &back_one)?;
        let (mu, c_next, ax_next) = match step {
            StepRule::Search(cfg) => {
                let (cand, _, _) = ctx.search(cfg)?;
                (cand.nu, cand.c, cand.ax)
            }
            StepRule::Fixed(mu) => {
                let cand = ctx.candidate(*mu)?;
                (*mu, cand.c, cand.ax)
            }
        };
        let unchanged = c_next == c;
        let next = forward_checked(ax_next, g)?;
        trace.floor_activations += next.floors;
        let f_next = problem.synthesis.apply(&c_next)?;
        let change = rel_change(&f, &f_next)?;
        trace.push(IterRecord {
            iter: t,
            objective: data_term(&next, g) + prior.penalty(&c_next),
            mu: Some(mu),
            rel_change: Some(change),
            nmse: problem.nmse(&f_next)?,
        });
        c = c_next;
        cur = next;
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
