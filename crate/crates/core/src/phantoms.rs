//! Ground-truth phantoms and the blur + background + Poisson degradation
//! pipeline.
//!
//! All randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded
//! with a 64-bit integer, so results are bit-identical across platforms.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{CountGrid, ImageGrid};
use crate::operators::{
    convolve, default_gaussian_radius, gaussian_kernel, rational_kernel, Kernel,
};

/// Default fraction of nonzero pixels in the sparse point phantom.
pub const DEFAULT_DENSITY: f64 = 0.01;
/// Default peak intensity of generated phantoms.
pub const DEFAULT_PEAK: f64 = 255.0;

/// SplitMix64 finaliser applied to `seed ^ tag`; used to derive independent
/// generator seeds from a trial seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `⌊density·h·w⌋` distinct random pixels holding `|N(0,1)|` draws rescaled
/// so the brightest equals `peak`; every other pixel is zero.
pub fn sparse_point_phantom(
    height: usize,
    width: usize,
    density: f64,
    peak: f64,
    seed: u64,
) -> Result<ImageGrid> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("phantom dimensions must be positive"));
    }
    if !(density > 0.0 && density < 1.0) {
        return Err(Error::invalid(format!("density must lie in (0, 1), got {density}")));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::invalid(format!("peak must be positive, got {peak}")));
    }
    let n = height * width;
    let count = (density * n as f64).floor() as usize;
    if count == 0 {
        return Err(Error::invalid(format!(
            "density {density} selects no pixels of a {height}x{width} image"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let positions = index::sample(&mut rng, n, count);
    let mut data = vec![0.0; n];
    let mut top = 0.0f64;
    for pos in positions.iter() {
        let mut v: f64 = rng.sample::<f64, _>(StandardNormal).abs();
        while v == 0.0 {
            v = rng.sample::<f64, _>(StandardNormal).abs();
        }
        top = top.max(v);
        data[pos] = v;
    }
    for v in &mut data {
        *v = *v / top * peak;
    }
    ImageGrid::new(height, width, data)
}

/// `(intensity, semi-axis x, semi-axis y, centre x, centre y, angle in degrees)`.
/// Ten-ellipse head phantom with the higher-contrast intensities commonly
/// used for display.
const SHEPP_LOGAN: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.605, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

/// Shepp–Logan head phantom sampled at pixel centres of `[-1, 1]²`
/// (x to the right, y upward) and rescaled to `[0, 255]`.
pub fn shepp_logan(height: usize, width: usize) -> Result<ImageGrid> {
    if height < 32 || width < 32 {
        return Err(Error::invalid(format!(
            "Shepp-Logan phantom needs at least 32x32 pixels, got {height}x{width}"
        )));
    }
    let coord = |i: usize, n: usize| (i as f64 - (n as f64 - 1.0) / 2.0) / ((n as f64 - 1.0) / 2.0);
    let raw = ImageGrid::from_fn(height, width, |r, c| {
        let x = coord(c, width);
        let y = -coord(r, height);
        let mut v = 0.0;
        for &[amp, a, b, x0, y0, deg] in &SHEPP_LOGAN {
            let (s, co) = deg.to_radians().sin_cos();
            let (dx, dy) = (x - x0, y - y0);
            let u = dx * co + dy * s;
            let w = dy * co - dx * s;
            if (u / a).powi(2) + (w / b).powi(2) <= 1.0 {
                v += amp;
            }
        }
        v
    });
    let (lo, hi) = (raw.min(), raw.max());
    Ok(raw.map(|v| 255.0 * (v - lo) / (hi - lo)))
}

/// Blur kernel selection for the degradation pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelChoice {
    /// Isotropic Gaussian with −3 dB cut-off (rad/sample); radius defaults to `⌈4σ⌉`.
    Gaussian { cutoff: f64, radius: Option<usize> },
    /// `(i²+j²+1)⁻¹` on `[-d, d]²`.
    Rational { d: usize },
    None,
}

impl KernelChoice {
    pub fn build(&self) -> Result<Option<Kernel>> {
        Ok(match *self {
            KernelChoice::Gaussian { cutoff, radius } => {
                let r = radius.unwrap_or_else(|| default_gaussian_radius(cutoff).max(1));
                Some(gaussian_kernel(cutoff, r)?)
            }
            KernelChoice::Rational { d } => Some(rational_kernel(d)?),
            KernelChoice::None => None,
        })
    }

    /// Short label used in summaries, e.g. `gaussian(0.628)` or `rational(2)`.
    pub fn label(&self) -> String {
        match self {
            KernelChoice::Gaussian { cutoff, .. } => format!("gaussian({cutoff:.4})"),
            KernelChoice::Rational { d } => format!("rational({d})"),
            KernelChoice::None => "none".into(),
        }
    }
}

/// Everything needed to turn a ground truth into observed counts.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationSpec {
    pub kernel: KernelChoice,
    /// Background level `f₀ > 0` added after blurring.
    pub background: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(kernel: KernelChoice, background: f64, seed: u64) -> Result<Self> {
        if !(background > 0.0 && background.is_finite()) {
            return Err(Error::invalid(format!(
                "background level must be positive, got {background}"
            )));
        }
        Ok(Self {
            kernel,
            background,
            seed,
        })
    }

    /// Returns the Poisson mean `H[f] + f₀` and a count image drawn from it.
    pub fn degrade(&self, f: &ImageGrid) -> Result<(ImageGrid, CountGrid)> {
        let kernel = self.kernel.build()?;
        let lambda = apply_degradation(f, kernel.as_ref(), self.background)?;
        let counts = poisson_sample(&lambda, self.seed)?;
        Ok((lambda, counts))
    }
}

/// Background level giving `snr = peak / f₀`.
pub fn background_for_snr(peak: f64, snr: f64) -> Result<f64> {
    if !(snr > 0.0 && snr.is_finite()) {
        return Err(Error::invalid(format!("SNR must be positive, got {snr}")));
    }
    Ok(peak / snr)
}

/// `λ = H[f] + f₀`, strictly positive everywhere.
pub fn apply_degradation(f: &ImageGrid, kernel: Option<&Kernel>, background: f64) -> Result<ImageGrid> {
    if let Some(i) = f.as_slice().iter().position(|&v| v < 0.0) {
        return Err(Error::Domain {
            row: i / f.width(),
            col: i % f.width(),
            detail: "ground truth must be nonnegative".into(),
        });
    }
    let blurred = match kernel {
        Some(k) => convolve(f, k)?,
        None => f.clone(),
    };
    let lambda = blurred.add_scalar(background);
    if let Some(i) = lambda.as_slice().iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Domain {
            row: i / f.width(),
            col: i % f.width(),
            detail: format!("Poisson mean {} is not positive", lambda.as_slice()[i]),
        });
    }
    Ok(lambda)
}

/// Independent Poisson draws with the given per-pixel means.
///
/// Sequential-search inversion for `λ < 30`, Hörmann's transformed
/// rejection with squeeze (PTRS) otherwise. Both are exact.
pub fn poisson_sample(lambda: &ImageGrid, seed: u64) -> Result<CountGrid> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(lambda.len());
    for (i, &l) in lambda.as_slice().iter().enumerate() {
        if !(l > 0.0) {
            return Err(Error::Domain {
                row: i / lambda.width(),
                col: i % lambda.width(),
                detail: format!("Poisson mean {l} is not positive"),
            });
        }
        let k = sample_one(&mut rng, l);
        out.push(u32::try_from(k).map_err(|_| Error::invalid("Poisson draw overflows u32"))?);
    }
    CountGrid::new(lambda.height(), lambda.width(), out)
}

pub(crate) fn sample_one<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    if lambda < 30.0 {
        inversion(rng, lambda)
    } else {
        ptrs(rng, lambda)
    }
}

fn inversion<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    // the cap only matters when u rounds above the representable cdf
    let cap = (lambda * 10.0) as u64 + 100;
    while u > cdf && k < cap {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
    }
    k
}

fn ptrs<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -lambda + k * loglam - ln_factorial(k as u64);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// `ln(k!)`: exact table below 16, Stirling series above.
fn ln_factorial(k: u64) -> f64 {
    if k < 16 {
        return (2..=k).map(|i| (i as f64).ln()).sum();
    }
    let x = k as f64 + 1.0;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}
