//! Reconstruction quality: NMSE, SSIM, relative change and multi-trial
//! aggregation.

use std::time::Duration;

use crate::error::{Error, Result};
use crate::grid::{accurate_sum, ImageGrid};

/// `‖f − f̃‖²_F / ‖f‖²_F` for a single realisation.
pub fn nmse(truth: &ImageGrid, estimate: &ImageGrid) -> Result<f64> {
    truth.same_shape(estimate)?;
    let denom = truth.norm_sq();
    if denom == 0.0 {
        return Err(Error::invalid("NMSE is undefined for an all-zero reference image"));
    }
    let num = accurate_sum(
        truth
            .as_slice()
            .iter()
            .zip(estimate.as_slice())
            .map(|(a, b)| (a - b) * (a - b)),
    );
    Ok(num / denom)
}

/// `‖next − prev‖_F / ‖prev‖_F`.
pub fn relative_change(prev: &ImageGrid, next: &ImageGrid) -> Result<f64> {
    prev.same_shape(next)?;
    let denom = prev.norm();
    if denom == 0.0 {
        return Err(Error::invalid("relative change from an all-zero iterate"));
    }
    let diff = accurate_sum(
        prev.as_slice()
            .iter()
            .zip(next.as_slice())
            .map(|(a, b)| (a - b) * (a - b)),
    );
    Ok(diff.sqrt() / denom)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalised 1-D Gaussian of length [`SSIM_WINDOW`]; the 2-D window is its
/// outer product.
pub fn ssim_window_1d() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean SSIM over all fully contained 11×11 Gaussian windows (σ = 1.5),
/// with `C₁ = (0.01 L)²` and `C₂ = (0.03 L)²` for dynamic range `L`.
pub fn ssim(truth: &ImageGrid, estimate: &ImageGrid, dynamic_range: f64) -> Result<f64> {
    truth.same_shape(estimate)?;
    if !(dynamic_range > 0.0 && dynamic_range.is_finite()) {
        return Err(Error::invalid(format!(
            "dynamic range must be positive, got {dynamic_range}"
        )));
    }
    let (h, w) = truth.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let win = ssim_window_1d();
    let x = truth.as_slice();
    let y = estimate.as_slice();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();

    let mu_x = filter_valid(x, h, w, &win);
    let mu_y = filter_valid(y, h, w, &win);
    let e_xx = filter_valid(&xx, h, w, &win);
    let e_yy = filter_valid(&yy, h, w, &win);
    let e_xy = filter_valid(&xy, h, w, &win);

    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let n = mu_x.len();
    let map = (0..n).map(|i| {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sx = e_xx[i] - mx * mx;
        let sy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sx + sy + c2))
    });
    Ok(accurate_sum(map) / n as f64)
}

/// Separable "valid" correlation with a symmetric window.
fn filter_valid(src: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        let line = &src[r * w..(r + 1) * w];
        for c in 0..ow {
            rows[r * ow + c] = line[c..c + k].iter().zip(win).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| rows[(r + i) * ow + c] * win[i]).sum();
        }
    }
    out
}

/// SSIM with the dynamic range taken from the reference image.
pub fn ssim_auto(truth: &ImageGrid, estimate: &ImageGrid) -> Result<f64> {
    let range = truth.max() - truth.min();
    ssim(truth, estimate, if range > 0.0 { range } else { 1.0 })
}

/// Outcome of one restoration trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub seed: u64,
    pub nmse: f64,
    pub ssim: f64,
    pub iterations: usize,
    pub wall_time: Duration,
}

/// Sample means and standard errors over trials.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub trials: usize,
    pub mean_nmse: f64,
    pub stderr_nmse: f64,
    pub mean_ssim: f64,
    pub stderr_ssim: f64,
    pub mean_iterations: f64,
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = accurate_sum(values.iter().copied()) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = accurate_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn aggregate(trials: &[TrialSummary]) -> Result<Aggregate> {
    if trials.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty list of trials"));
    }
    let nmse: Vec<f64> = trials.iter().map(|t| t.nmse).collect();
    let ssim: Vec<f64> = trials.iter().map(|t| t.ssim).collect();
    let iters: Vec<f64> = trials.iter().map(|t| t.iterations as f64).collect();
    let (mean_nmse, stderr_nmse) = mean_stderr(&nmse);
    let (mean_ssim, stderr_ssim) = mean_stderr(&ssim);
    let (mean_iterations, _) = mean_stderr(&iters);
    Ok(Aggregate {
        trials: trials.len(),
        mean_nmse,
        stderr_nmse,
        mean_ssim,
        stderr_ssim,
        mean_iterations,
    })
}
