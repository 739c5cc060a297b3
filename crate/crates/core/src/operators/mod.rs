//! Linear operators of the image formation model and their adjoints.
//!
//! Every operator maps a [`CoeffField`] to an [`ImageGrid`]. Image-to-image
//! operators such as the blur `H` take a single [`BandId::Pixels`] band, so
//! the same trait covers `H`, the frame `Φ`, their composition and the
//! background-augmented operator.

mod convolution;
mod haar;
mod kernel;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use convolution::{convolve, convolve_adjoint, Convolution};
pub use haar::{ti_haar_analysis, ti_haar_synthesis, TiHaar};
pub use kernel::{
    default_gaussian_radius, gaussian_kernel, gaussian_sigma_for_cutoff, rational_kernel, Kernel,
};

use crate::error::{Error, Result};
use crate::grid::{BandId, CoeffField, CoeffShape, ImageGrid};

/// A bounded linear map from coefficient space to image space together with
/// its exact adjoint.
pub trait LinearOp: Send + Sync {
    fn domain(&self) -> CoeffShape;

    /// `(height, width)` of the produced image.
    fn range(&self) -> (usize, usize);

    fn apply(&self, c: &CoeffField) -> Result<ImageGrid>;

    fn adjoint(&self, y: &ImageGrid) -> Result<CoeffField>;
}

impl<T: LinearOp + ?Sized> LinearOp for &T {
    fn domain(&self) -> CoeffShape {
        (**self).domain()
    }
    fn range(&self) -> (usize, usize) {
        (**self).range()
    }
    fn apply(&self, c: &CoeffField) -> Result<ImageGrid> {
        (**self).apply(c)
    }
    fn adjoint(&self, y: &ImageGrid) -> Result<CoeffField> {
        (**self).adjoint(y)
    }
}

impl<T: LinearOp + ?Sized> LinearOp for Box<T> {
    fn domain(&self) -> CoeffShape {
        (**self).domain()
    }
    fn range(&self) -> (usize, usize) {
        (**self).range()
    }
    fn apply(&self, c: &CoeffField) -> Result<ImageGrid> {
        (**self).apply(c)
    }
    fn adjoint(&self, y: &ImageGrid) -> Result<CoeffField> {
        (**self).adjoint(y)
    }
}

impl<T: LinearOp + ?Sized> LinearOp for Arc<T> {
    fn domain(&self) -> CoeffShape {
        (**self).domain()
    }
    fn range(&self) -> (usize, usize) {
        (**self).range()
    }
    fn apply(&self, c: &CoeffField) -> Result<ImageGrid> {
        (**self).apply(c)
    }
    fn adjoint(&self, y: &ImageGrid) -> Result<CoeffField> {
        (**self).adjoint(y)
    }
}

pub(crate) fn check_domain<A: LinearOp + ?Sized>(op: &A, c: &CoeffField) -> Result<()> {
    let (want, got) = (op.domain(), c.shape());
    if want != got {
        return Err(Error::dims(want, got));
    }
    Ok(())
}

pub(crate) fn check_range<A: LinearOp + ?Sized>(op: &A, y: &ImageGrid) -> Result<()> {
    let (h, w) = op.range();
    if y.shape() != (h, w) {
        return Err(Error::dims(
            format!("{h}x{w}"),
            format!("{}x{}", y.height(), y.width()),
        ));
    }
    Ok(())
}

/// Identity on images (pixel band in, image out).
#[derive(Debug, Clone)]
pub struct Identity {
    height: usize,
    width: usize,
}

impl Identity {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }
}

impl LinearOp for Identity {
    fn domain(&self) -> CoeffShape {
        CoeffShape::pixels(self.height, self.width)
    }
    fn range(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    fn apply(&self, c: &CoeffField) -> Result<ImageGrid> {
        check_domain(self, c)?;
        Ok(c.bands()[0].1.clone())
    }
    fn adjoint(&self, y: &ImageGrid) -> Result<CoeffField> {
        check_range(self, y)?;
        Ok(CoeffField::from_image(y.clone()))
    }
}

/// `s · A`.
#[derive(Debug, Clone)]
pub struct Scaled<A> {
    inner: A,
    factor: f64,
}

impl<A: LinearOp> Scaled<A> {
    pub fn new(inner: A, factor: f64) -> Self {
        Self { inner, factor }
    }
}

impl<A: LinearOp> LinearOp for Scaled<A> {
    fn domain(&self) -> CoeffShape {
        self.inner.domain()
    }
    fn range(&self) -> (usize, usize) {
        self.inner.range()
    }
    fn apply(&self, c: &CoeffField) -> Result<ImageGrid> {
        Ok(self.inner.apply(c)?.scale(self.factor))
    }
    fn adjoint(&self, y: &ImageGrid) -> Result<CoeffField> {
        Ok(self.inner.adjoint(y)?.scale(self.factor))
    }
}

/// `A = H·Φ`: an image-to-image operator after a synthesis operator.
#[derive(Debug, Clone)]
pub struct Composed<H, P> {
    outer: H,
    inner: P,
}

impl<H: LinearOp, P: LinearOp> Composed<H, P> {
    pub fn outer(&self) -> &H {
        &self.outer
    }
    pub fn inner(&self) -> &P {
        &self.inner
    }
}

/// Builds `H·Φ`. `H` must accept exactly the image `Φ` produces.
pub fn compose<H: LinearOp, P: LinearOp>(outer: H, inner: P) -> Result<Composed<H, P>> {
    let (h, w) = inner.range();
    let want = CoeffShape::pixels(h, w);
    let got = outer.domain();
    if got != want {
        return Err(Error::dims(want, got));
    }
    Ok(Composed { outer, inner })
}

impl<H: LinearOp, P: LinearOp> LinearOp for Composed<H, P> {
    fn domain(&self) -> CoeffShape {
        self.inner.domain()
    }
    fn range(&self) -> (usize, usize) {
        self.outer.range()
    }
    fn apply(&self, c: &CoeffField) -> Result<ImageGrid> {
        let f = self.inner.apply(c)?;
        self.outer.apply(&CoeffField::from_image(f))
    }
    fn adjoint(&self, y: &ImageGrid) -> Result<CoeffField> {
        let f = self.outer.adjoint(y)?.into_image()?;
        self.inner.adjoint(&f)
    }
}

/// `Ã[c, b] = A[c] + b·s·1`: the operator extended by a constant frame
/// element `s·1` whose coefficient `b` sets the background level `f₀ = b·s`.
///
/// With `s = 1` the coefficient is the background level itself. The
/// unit-norm atom `s = 1/√(KL)` gives the background direction the same
/// scale as a Parseval frame atom, which keeps the step-size search of the
/// shrinkage solvers from being dominated by it.
#[derive(Debug, Clone)]
pub struct BackgroundAugmented<A> {
    inner: A,
    scale: f64,
}

impl<A: LinearOp> BackgroundAugmented<A> {
    pub fn inner(&self) -> &A {
        &self.inner
    }

    /// Amplitude `s` of the constant atom.
    pub fn atom_scale(&self) -> f64 {
        self.scale
    }

    /// Background level `f₀ = b·s` encoded by a coefficient field.
    pub fn level(&self, c: &CoeffField) -> Option<f64> {
        c.background().map(|b| b * self.scale)
    }

    /// Coefficient that encodes background level `f₀`.
    pub fn coefficient_for(&self, level: f64) -> f64 {
        level / self.scale
    }
}

/// Wraps `A` with a scalar background coefficient multiplying `1`.
pub fn augment_background<A: LinearOp>(inner: A) -> Result<BackgroundAugmented<A>> {
    augment_background_scaled(inner, 1.0)
}

/// Wraps `A` with a background coefficient multiplying the unit-norm
/// constant image `1/√(KL)`.
pub fn augment_background_unit<A: LinearOp>(inner: A) -> Result<BackgroundAugmented<A>> {
    let (h, w) = inner.range();
    augment_background_scaled(inner, 1.0 / ((h * w) as f64).sqrt())
}

pub fn augment_background_scaled<A: LinearOp>(inner: A, scale: f64) -> Result<BackgroundAugmented<A>> {
    if inner.domain().background {
        return Err(Error::invalid("operator already carries a background slot"));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("background atom scale must be positive, got {scale}")));
    }
    Ok(BackgroundAugmented { inner, scale })
}

impl<A: LinearOp> LinearOp for BackgroundAugmented<A> {
    fn domain(&self) -> CoeffShape {
        self.inner.domain().with_background(true)
    }
    fn range(&self) -> (usize, usize) {
        self.inner.range()
    }
    fn apply(&self, c: &CoeffField) -> Result<ImageGrid> {
        let (coeffs, bg) = c.clone().split_background();
        let bg = bg.ok_or_else(|| {
            Error::invalid("background-augmented operator needs a background coefficient")
        })?;
        Ok(self.inner.apply(&coeffs)?.add_scalar(bg * self.scale))
    }
    fn adjoint(&self, y: &ImageGrid) -> Result<CoeffField> {
        let c = self.inner.adjoint(y)?;
        Ok(c.with_background(Some(y.sum() * self.scale)))
    }
}

/// Power-iteration estimate of `λ_max(A*A)`.
///
/// Returns the Rayleigh quotient `‖A x‖²` of the unit iterate reached after
/// `iterations` applications of `A*A`, starting from a seeded random vector.
pub fn operator_norm_sq<A: LinearOp + ?Sized>(op: &A, iterations: usize, seed: u64) -> Result<f64> {
    if iterations == 0 {
        return Err(Error::invalid("power iteration needs at least one step"));
    }
    let shape = op.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = CoeffField::zeros(&shape);
    for _ in 0..16 {
        x = x.map(|_| rng.random_range(-1.0..1.0));
        if x.norm() > 0.0 {
            break;
        }
    }
    let n = x.norm();
    if n == 0.0 {
        return Err(Error::invalid("could not draw a nonzero starting vector"));
    }
    x = x.scale(1.0 / n);
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let y = op.apply(&x)?;
        estimate = y.norm_sq();
        let z = op.adjoint(&y)?;
        let zn = z.norm();
        if zn == 0.0 {
            // x lies in the null space; A*A has no larger eigenvalue along it
            break;
        }
        x = z.scale(1.0 / zn);
    }
    Ok(estimate)
}

/// Pixel-band helper for image-to-image operators.
pub fn apply_to_image<A: LinearOp + ?Sized>(op: &A, f: &ImageGrid) -> Result<ImageGrid> {
    op.apply(&CoeffField::from_image(f.clone()))
}

/// `true` when the operator takes one pixel band and no background.
pub fn is_image_operator<A: LinearOp + ?Sized>(op: &A) -> bool {
    let d = op.domain();
    d.bands == [BandId::Pixels] && !d.background
}
