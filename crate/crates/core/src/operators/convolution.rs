//! Periodic convolution diagonalised by the 2-D FFT.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{check_domain, check_range, Kernel, LinearOp};
use crate::error::{Error, Result};
use crate::grid::{CoeffField, CoeffShape, ImageGrid};

struct Plans {
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Plans {
    fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }
}

/// Circular convolution `H` with a fixed kernel on `height × width` images.
///
/// The kernel spectrum is computed once; each call allocates its own FFT
/// buffers, so a `Convolution` can be shared between threads.
pub struct Convolution {
    kernel: Kernel,
    height: usize,
    width: usize,
    spectrum: Vec<Complex64>,
    plans: Plans,
}

impl fmt::Debug for Convolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Convolution")
            .field("radius", &self.kernel.radius())
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl Convolution {
    pub fn new(kernel: Kernel, height: usize, width: usize) -> Result<Self> {
        if kernel.side() > height || kernel.side() > width {
            return Err(Error::invalid(format!(
                "kernel of side {} does not fit a {height}x{width} image",
                kernel.side()
            )));
        }
        let plans = Plans::new(height, width);
        let mut buf = vec![Complex64::new(0.0, 0.0); height * width];
        let r = kernel.radius() as isize;
        for di in -r..=r {
            for dj in -r..=r {
                let i = di.rem_euclid(height as isize) as usize;
                let j = dj.rem_euclid(width as isize) as usize;
                buf[i * width + j].re += kernel.tap(di, dj);
            }
        }
        fft2(&plans, height, width, &mut buf, true);
        Ok(Self {
            kernel,
            height,
            width,
            spectrum: buf,
            plans,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// DFT of the zero-padded, origin-centred kernel.
    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    /// `max |ĥ(ω)|²`, the exact largest eigenvalue of `H*H`.
    pub fn max_gain_sq(&self) -> f64 {
        self.spectrum
            .iter()
            .map(|z| z.norm_sqr())
            .fold(0.0, f64::max)
    }

    /// `H[f]`.
    pub fn convolve(&self, f: &ImageGrid) -> Result<ImageGrid> {
        self.filter(f, false)
    }

    /// `H*[y]`: correlation, i.e. convolution with the flipped kernel.
    pub fn correlate(&self, y: &ImageGrid) -> Result<ImageGrid> {
        self.filter(y, true)
    }

    fn filter(&self, f: &ImageGrid, conjugate: bool) -> Result<ImageGrid> {
        if f.shape() != (self.height, self.width) {
            return Err(Error::dims(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", f.height(), f.width()),
            ));
        }
        let mut buf: Vec<Complex64> = f
            .as_slice()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        fft2(&self.plans, self.height, self.width, &mut buf, true);
        for (z, k) in buf.iter_mut().zip(&self.spectrum) {
            *z *= if conjugate { k.conj() } else { *k };
        }
        fft2(&self.plans, self.height, self.width, &mut buf, false);
        let norm = 1.0 / (self.height * self.width) as f64;
        Ok(ImageGrid::from_vec_unchecked(
            self.height,
            self.width,
            buf.into_iter().map(|z| z.re * norm).collect(),
        ))
    }
}

fn fft2(plans: &Plans, height: usize, width: usize, buf: &mut [Complex64], forward: bool) {
    let (row, col) = if forward {
        (&plans.row_fwd, &plans.col_fwd)
    } else {
        (&plans.row_inv, &plans.col_inv)
    };
    // rustfft processes every contiguous chunk of the plan length
    row.process(buf);
    let mut t = transpose(buf, height, width);
    col.process(&mut t);
    let back = transpose(&t, width, height);
    buf.copy_from_slice(&back);
}

fn transpose(src: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

impl LinearOp for Convolution {
    fn domain(&self) -> CoeffShape {
        CoeffShape::pixels(self.height, self.width)
    }

    fn range(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn apply(&self, c: &CoeffField) -> Result<ImageGrid> {
        check_domain(self, c)?;
        self.convolve(&c.bands()[0].1)
    }

    fn adjoint(&self, y: &ImageGrid) -> Result<CoeffField> {
        check_range(self, y)?;
        Ok(CoeffField::from_image(self.correlate(y)?))
    }
}

/// Periodic convolution of `f` with `h`.
pub fn convolve(f: &ImageGrid, h: &Kernel) -> Result<ImageGrid> {
    Convolution::new(h.clone(), f.height(), f.width())?.convolve(f)
}

/// Adjoint of [`convolve`]: periodic correlation of `y` with `h`.
pub fn convolve_adjoint(y: &ImageGrid, h: &Kernel) -> Result<ImageGrid> {
    Convolution::new(h.clone(), y.height(), y.width())?.correlate(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::inner_product;
    use crate::operators::{gaussian_kernel, rational_kernel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
    }

    // brute-force periodic double sum
    fn direct(f: &ImageGrid, k: &Kernel) -> ImageGrid {
        let (h, w) = f.shape();
        let r = k.radius() as isize;
        ImageGrid::from_fn(h, w, |i, j| {
            let mut acc = 0.0;
            for a in -r..=r {
                for b in -r..=r {
                    let ii = (i as isize - a).rem_euclid(h as isize) as usize;
                    let jj = (j as isize - b).rem_euclid(w as isize) as usize;
                    acc += k.tap(a, b) * f.get(ii, jj);
                }
            }
            acc
        })
    }

    #[test]
    fn delta_kernel_is_identity() {
        let f = random_image(6, 5, 1);
        let g = convolve(&f, &Kernel::delta()).unwrap();
        for (a, b) in f.as_slice().iter().zip(g.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_is_preserved() {
        let f = ImageGrid::filled(16, 12, 7.0);
        let g = convolve(&f, &rational_kernel(2).unwrap()).unwrap();
        assert!(g.as_slice().iter().all(|v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn matches_direct_sum_on_8x8() {
        let f = random_image(8, 8, 7);
        let k = Kernel::new(1, (1..=9).map(f64::from).collect()).unwrap();
        let fast = convolve(&f, &k).unwrap();
        let slow = direct(&f, &k);
        for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_of_impulse_is_flipped_kernel() {
        let k = Kernel::new(1, (1..=9).map(f64::from).collect()).unwrap();
        let mut data = vec![0.0; 49];
        data[3 * 7 + 3] = 1.0;
        let delta = ImageGrid::new(7, 7, data).unwrap();
        let out = convolve_adjoint(&delta, &k).unwrap();
        for di in -1isize..=1 {
            for dj in -1isize..=1 {
                let v = out.get((3 + di) as usize, (3 + dj) as usize);
                assert!((v - k.tap(-di, -dj)).abs() < 1e-14);
            }
        }
        assert!((out.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_kernel_is_self_adjoint() {
        let k = gaussian_kernel(0.3 * std::f64::consts::PI, 3).unwrap();
        let y = random_image(16, 16, 3);
        let a = convolve(&y, &k).unwrap();
        let b = convolve_adjoint(&y, &k).unwrap();
        for (x, z) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - z).abs() < 1e-13);
        }
    }

    #[test]
    fn adjoint_identity_random_16x16() {
        let k = Kernel::new(2, (1..=25).map(|v| f64::from(v).sqrt()).collect()).unwrap();
        let x = random_image(16, 16, 11);
        let y = random_image(16, 16, 12);
        let lhs = inner_product(&convolve(&x, &k).unwrap(), &y).unwrap();
        let rhs = inner_product(&x, &convolve_adjoint(&y, &k).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn kernel_larger_than_image_is_rejected() {
        let f = ImageGrid::zeros(4, 8);
        assert!(convolve(&f, &rational_kernel(2).unwrap()).is_err());
        assert!(convolve(&ImageGrid::zeros(5, 5), &rational_kernel(2).unwrap()).is_ok());
    }
}
