//! Richardson-Lucy deconvolution and its total-variation regularised
//! variant.

use super::{check_data, rel_change, IterRecord, SolveFailure, SolveTrace, StopRule, Termination};
use crate::error::{Error, Result};
use crate::grid::{accurate_sum, ImageGrid};
use crate::operators::Convolution;

/// `div(∇f / ‖∇f‖_ε)` on the periodic grid: forward differences for the
/// gradient, `‖∇f‖_ε = sqrt(fx² + fy² + ε²)`, backward differences for the
/// divergence. `fx` differences along a row, `fy` down a column.
pub fn curvature(f: &ImageGrid, eps: f64) -> ImageGrid {
    assert!(eps > 0.0, "eps must be positive");
    let (h, w) = f.shape();
    let v = f.as_slice();
    let mut px = vec![0.0; v.len()];
    let mut py = vec![0.0; v.len()];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let fx = v[r * w + (c + 1) % w] - v[i];
            let fy = v[((r + 1) % h) * w + c] - v[i];
            let n = (fx * fx + fy * fy + eps * eps).sqrt();
            px[i] = fx / n;
            py[i] = fy / n;
        }
    }
    ImageGrid::from_fn(h, w, |r, c| {
        let i = r * w + c;
        (px[i] - px[r * w + (c + w - 1) % w]) + (py[i] - py[((r + h - 1) % h) * w + c])
    })
}

/// Poisson negative log-likelihood `⟨1, λ⟩ − ⟨g, log λ⟩`.
pub fn poisson_nll(lambda: &ImageGrid, g: &ImageGrid) -> Result<f64> {
    lambda.same_shape(g)?;
    Ok(accurate_sum(
        lambda
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(&l, &gi)| if gi > 0.0 { l - gi * l.ln() } else { l }),
    ))
}

fn positive_where_data(lambda: &ImageGrid, g: &ImageGrid) -> Result<()> {
    let w = lambda.width();
    for (i, (&l, &gi)) in lambda.as_slice().iter().zip(g.as_slice()).enumerate() {
        if gi > 0.0 && l <= 0.0 {
            return Err(Error::Domain {
                row: i / w,
                col: i % w,
                detail: format!("blurred estimate {l:e} is not positive where the data is {gi}"),
            });
        }
    }
    Ok(())
}

/// `H*[g / (H f + b)]` together with the model mean `H f + b`.
fn correction(g: &ImageGrid, h: &Convolution, f: &ImageGrid, background: f64) -> Result<(ImageGrid, ImageGrid)> {
    let lambda = h.convolve(f)?.add_scalar(background);
    positive_where_data(&lambda, g)?;
    let ratio = g.zip_map(&lambda, |gi, l| if gi > 0.0 { gi / l } else { 0.0 })?;
    Ok((h.correlate(&ratio)?, lambda))
}

/// One RL update `f · H*[g / (H f + b)]`.
pub fn rl_step(g: &ImageGrid, h: &Convolution, f: &ImageGrid, background: f64) -> Result<ImageGrid> {
    let (corr, _) = correction(g, h, f, background)?;
    f.zip_map(&corr, |a, b| a * b)
}

/// One RLTV update `f / (1 − γ div(∇f/‖∇f‖)) · H*[g / (H f + b)]`.
pub fn rltv_step(
    g: &ImageGrid,
    h: &Convolution,
    f: &ImageGrid,
    gamma_tv: f64,
    background: f64,
) -> Result<ImageGrid> {
    let (corr, _) = correction(g, h, f, background)?;
    let next = f.zip_map(&corr, |a, b| a * b)?;
    apply_tv_denominator(&next, f, gamma_tv)
}

fn apply_tv_denominator(next: &ImageGrid, f: &ImageGrid, gamma_tv: f64) -> Result<ImageGrid> {
    if gamma_tv == 0.0 {
        return Ok(next.clone());
    }
    let kappa = curvature(f, super::CURVATURE_EPS);
    let w = f.width();
    let mut out = Vec::with_capacity(f.len());
    for (i, (&n, &k)) in next.as_slice().iter().zip(kappa.as_slice()).enumerate() {
        let denom = 1.0 - gamma_tv * k;
        if denom <= 0.0 {
            return Err(Error::Domain {
                row: i / w,
                col: i % w,
                detail: format!(
                    "TV denominator 1 - {gamma_tv}*{k} = {denom} is not positive; reduce the TV weight"
                ),
            });
        }
        out.push(n / denom);
    }
    ImageGrid::new(f.height(), f.width(), out)
}

/// Final RL/RLTV estimate plus, with ground truth, the NMSE-optimal iterate.
#[derive(Debug, Clone)]
pub struct RlSolution {
    pub image: ImageGrid,
    /// `(iteration, image)` of the lowest-NMSE iterate.
    pub best: Option<(usize, ImageGrid)>,
    pub trace: SolveTrace,
}

/// Richardson-Lucy iterations from `f0`. `background` is a known constant
/// added to the blurred estimate (zero gives the classical update). The
/// trace objective is the Poisson negative log-likelihood of the iterate.
pub fn rl_solve(
    g: &ImageGrid,
    h: &Convolution,
    f0: &ImageGrid,
    background: f64,
    stop: &StopRule,
    truth: Option<&ImageGrid>,
) -> std::result::Result<RlSolution, SolveFailure> {
    rltv_solve(g, h, f0, 0.0, background, stop, truth)
}

/// RL with the total-variation denominator; `gamma_tv = 0` is plain RL.
pub fn rltv_solve(
    g: &ImageGrid,
    h: &Convolution,
    f0: &ImageGrid,
    gamma_tv: f64,
    background: f64,
    stop: &StopRule,
    truth: Option<&ImageGrid>,
) -> std::result::Result<RlSolution, SolveFailure> {
    stop.validate()?;
    validate(g, h, f0, gamma_tv, background, truth)?;
    let mut trace = SolveTrace::default();
    let mut best = None;
    match run(g, h, f0, gamma_tv, background, stop, truth, &mut trace, &mut best) {
        Ok(image) => Ok(RlSolution { image, best, trace }),
        Err(e) => Err(SolveFailure::new(e, trace)),
    }
}

fn validate(
    g: &ImageGrid,
    h: &Convolution,
    f0: &ImageGrid,
    gamma_tv: f64,
    background: f64,
    truth: Option<&ImageGrid>,
) -> Result<()> {
    let (hh, hw) = h.shape();
    let expected = ImageGrid::zeros(hh, hw);
    expected.same_shape(g)?;
    expected.same_shape(f0)?;
    if let Some(t) = truth {
        expected.same_shape(t)?;
    }
    check_data(g)?;
    let w = f0.width();
    if let Some(i) = f0.as_slice().iter().position(|&v| v <= 0.0) {
        return Err(Error::Domain {
            row: i / w,
            col: i % w,
            detail: "initial estimate must be strictly positive".into(),
        });
    }
    if !(gamma_tv >= 0.0 && gamma_tv.is_finite()) {
        return Err(Error::invalid(format!("TV weight must be >= 0, got {gamma_tv}")));
    }
    if !(background >= 0.0 && background.is_finite()) {
        return Err(Error::invalid(format!("background must be >= 0, got {background}")));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    g: &ImageGrid,
    h: &Convolution,
    f0: &ImageGrid,
    gamma_tv: f64,
    background: f64,
    stop: &StopRule,
    truth: Option<&ImageGrid>,
    trace: &mut SolveTrace,
    best: &mut Option<(usize, ImageGrid)>,
) -> Result<ImageGrid> {
    let nmse = |f: &ImageGrid| truth.map(|t| crate::metrics::nmse(t, f)).transpose();
    let mut best_nmse = f64::INFINITY;
    let mut track = |t: usize, f: &ImageGrid, e: Option<f64>| {
        if let Some(e) = e {
            if e < best_nmse {
                best_nmse = e;
                *best = Some((t, f.clone()));
            }
        }
    };

    let mut f = f0.clone();
    let (mut corr, lambda) = correction(g, h, &f, background)?;
    let e0 = nmse(&f)?;
    trace.push(IterRecord {
        iter: 0,
        objective: poisson_nll(&lambda, g)?,
        mu: None,
        rel_change: None,
        nmse: e0,
    });
    track(0, &f, e0);

    for t in 1..=stop.max_iter {
        let raw = f.zip_map(&corr, |a, b| a * b)?;
        let next = apply_tv_denominator(&raw, &f, gamma_tv)?;
        let change = rel_change(&f, &next)?;
        let unchanged = next == f;
        f = next;
        let (c, lambda) = correction(g, h, &f, background)?;
        corr = c;
        let e = nmse(&f)?;
        trace.push(IterRecord {
            iter: t,
            objective: poisson_nll(&lambda, g)?,
            mu: None,
            rel_change: Some(change),
            nmse: e,
        });
        track(t, &f, e);
        if unchanged {
            trace.termination = Some(Termination::FixedPoint);
            return Ok(f);
        }
        if change < stop.rel_tol {
            trace.termination = Some(Termination::Converged);
            return Ok(f);
        }
    }
    trace.termination = Some(Termination::MaxIterations);
    Ok(f)
}
