use crate::error::{Error, Result};

/// Point spread function sampled on a `(2D+1) × (2D+1)` support centred at
/// the origin, normalised to unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    radius: usize,
    taps: Vec<f64>,
}

impl Kernel {
    /// Builds a kernel from raw row-major taps and rescales them to unit sum.
    /// Taps must be nonnegative with a positive total.
    pub fn new(radius: usize, taps: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if taps.len() != side * side {
            return Err(Error::dims(
                format!("{} taps for radius {radius}", side * side),
                format!("{} taps", taps.len()),
            ));
        }
        if taps.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::invalid("kernel taps must be finite and nonnegative"));
        }
        let total: f64 = taps.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("kernel taps must have a positive sum"));
        }
        Ok(Self {
            radius,
            taps: taps.into_iter().map(|t| t / total).collect(),
        })
    }

    /// Unit impulse: convolution with it is the identity.
    pub fn delta() -> Self {
        Self {
            radius: 0,
            taps: vec![1.0],
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Tap at offset `(di, dj)` with `-radius ≤ di, dj ≤ radius`.
    pub fn tap(&self, di: isize, dj: isize) -> f64 {
        let r = self.radius as isize;
        assert!(di.abs() <= r && dj.abs() <= r, "tap offset outside support");
        self.taps[((di + r) as usize) * self.side() + (dj + r) as usize]
    }

    /// Kernel mirrored through the origin, `h[-i, -j]`.
    pub fn flipped(&self) -> Self {
        Self {
            radius: self.radius,
            taps: self.taps.iter().rev().copied().collect(),
        }
    }

    /// True when `h[i, j] = h[-i, -j]` to within `tol`.
    pub fn is_point_symmetric(&self, tol: f64) -> bool {
        self.taps
            .iter()
            .zip(self.taps.iter().rev())
            .all(|(a, b)| (a - b).abs() <= tol)
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }
}

/// Standard deviation (in pixels) of the isotropic Gaussian whose amplitude
/// response `exp(-σ²ω²/2)` drops to `1/√2` at `cutoff` rad/sample.
pub fn gaussian_sigma_for_cutoff(cutoff: f64) -> f64 {
    std::f64::consts::LN_2.sqrt() / cutoff
}

/// Truncation radius `⌈4σ⌉` used when none is requested explicitly.
pub fn default_gaussian_radius(cutoff: f64) -> usize {
    (4.0 * gaussian_sigma_for_cutoff(cutoff)).ceil() as usize
}

/// Isotropic Gaussian with a −3 dB (amplitude) cut-off at `cutoff` rad/sample,
/// truncated to `radius` and renormalised.
pub fn gaussian_kernel(cutoff: f64, radius: usize) -> Result<Kernel> {
    if !(cutoff > 0.0 && cutoff < std::f64::consts::PI) {
        return Err(Error::invalid(format!(
            "cut-off frequency must lie in (0, π), got {cutoff}"
        )));
    }
    if radius == 0 {
        return Err(Error::invalid("gaussian kernel radius must be positive"));
    }
    let sigma = gaussian_sigma_for_cutoff(cutoff);
    let r = radius as isize;
    let mut taps = Vec::with_capacity((2 * radius + 1).pow(2));
    for i in -r..=r {
        for j in -r..=r {
            let d2 = (i * i + j * j) as f64;
            taps.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    Kernel::new(radius, taps)
}

/// `h[i, j] ∝ 1 / (i² + j² + 1)` for `i, j = -D..=D`.
pub fn rational_kernel(d: usize) -> Result<Kernel> {
    if d == 0 {
        return Err(Error::invalid("rational kernel radius must be at least 1"));
    }
    Kernel::new(d, rational_taps_unnormalised(d))
}

pub(crate) fn rational_taps_unnormalised(d: usize) -> Vec<f64> {
    let r = d as isize;
    let mut taps = Vec::with_capacity((2 * d + 1).pow(2));
    for i in -r..=r {
        for j in -r..=r {
            taps.push(1.0 / ((i * i + j * j + 1) as f64));
        }
    }
    taps
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gaussian_unit_sum_and_isotropic() {
        for &cut in &[0.1 * PI, 0.2 * PI, 0.7 * PI] {
            let k = gaussian_kernel(cut, default_gaussian_radius(cut).max(1)).unwrap();
            assert!((k.sum() - 1.0).abs() < 1e-14);
            let r = k.radius() as isize;
            for i in -r..=r {
                for j in -r..=r {
                    assert!((k.tap(i, j) - k.tap(-i, -j)).abs() < 1e-16);
                    assert!((k.tap(i, j) - k.tap(j, i)).abs() < 1e-16);
                    assert!(k.tap(i, j) > 0.0);
                }
            }
        }
    }

    #[test]
    fn gaussian_sigma_matches_minus_3db_definition() {
        let cut = 0.2 * PI;
        let sigma = gaussian_sigma_for_cutoff(cut);
        assert!((sigma - 1.3249).abs() < 2e-4, "sigma = {sigma}");
        // continuous transform amplitude at the cut-off
        let amp = (-sigma * sigma * cut * cut / 2.0).exp();
        assert!((amp - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(default_gaussian_radius(cut), 6);
    }

    #[test]
    fn gaussian_rejects_bad_cutoff() {
        assert!(gaussian_kernel(0.0, 3).is_err());
        assert!(gaussian_kernel(PI, 3).is_err());
        assert!(gaussian_kernel(-1.0, 3).is_err());
        assert!(gaussian_kernel(1.0, 0).is_err());
    }

    #[test]
    fn rational_kernel_ratios() {
        let raw = rational_taps_unnormalised(1);
        assert_eq!(raw[4], 1.0);
        assert_eq!(raw[0] / raw[4], 1.0 / 3.0);
        let k = rational_kernel(1).unwrap();
        assert!((k.tap(1, 1) / k.tap(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((k.sum() - 1.0).abs() < 1e-15);
        assert!(rational_kernel(0).is_err());
    }

    #[test]
    fn rational_normalisation_constant_d2() {
        // direct 25-term sum
        let mut z = 0.0;
        for i in -2i32..=2 {
            for j in -2i32..=2 {
                z += 1.0 / f64::from(i * i + j * j + 1);
            }
        }
        // 1 + 4/2 + 4/3 + 4/5 + 8/6 + 4/9 = 311/45
        assert!((z - 311.0 / 45.0).abs() < 1e-12, "z = {z}");
        let k = rational_kernel(2).unwrap();
        assert!((k.tap(0, 0) - 1.0 / z).abs() < 1e-15);
    }

    #[test]
    fn new_validates() {
        assert!(Kernel::new(1, vec![1.0; 8]).is_err());
        assert!(Kernel::new(0, vec![-1.0]).is_err());
        assert!(Kernel::new(0, vec![0.0]).is_err());
        let k = Kernel::new(1, (1..=9).map(f64::from).collect()).unwrap();
        assert!((k.flipped().tap(-1, -1) - k.tap(1, 1)).abs() < 1e-16);
        assert!(!k.is_point_symmetric(1e-12));
    }
}
