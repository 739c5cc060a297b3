//! Dense 2-D grids and multi-band coefficient fields.
//!
//! Everything is stored row-major in `f64`. Values are treated as immutable
//! once constructed; arithmetic returns new values.

use std::fmt;

use crate::error::{Error, Result};

/// Compensated (Neumaier) summation.
///
/// Objective values are compared across iterations at a resolution close to
/// one ulp of their magnitude, so plain left-to-right accumulation is not
/// good enough for them.
pub fn accurate_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Real-valued image of `height × width` pixels.
#[derive(Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl fmt::Debug for ImageGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageGrid")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("sum", &self.sum())
            .finish()
    }
}

impl ImageGrid {
    /// Builds a grid from row-major data. Rejects empty shapes, length
    /// mismatches and non-finite values.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::dims(
                format!("{} values for {height}x{width}", height * width),
                format!("{} values", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value {} at ({}, {})",
                data[i],
                i / width,
                i % width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub(crate) fn from_vec_unchecked(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self::from_vec_unchecked(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::from_vec_unchecked(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn same_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dims(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        Self::from_vec_unchecked(
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn zip_map(&self, other: &ImageGrid, f: impl Fn(f64, f64) -> f64) -> Result<ImageGrid> {
        self.same_shape(other)?;
        Ok(Self::from_vec_unchecked(
            self.height,
            self.width,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn scale(&self, s: f64) -> ImageGrid {
        self.map(|v| v * s)
    }

    pub fn add_scalar(&self, s: f64) -> ImageGrid {
        self.map(|v| v + s)
    }

    pub fn sum(&self) -> f64 {
        accurate_sum(self.data.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn norm_sq(&self) -> f64 {
        accurate_sum(self.data.iter().map(|v| v * v))
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Median of the pixel values (mean of the two middle values for even counts).
    pub fn median(&self) -> f64 {
        let mut v = self.data.clone();
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

/// `⟨a, b⟩ = Σ aᵢ bᵢ` over matching grids.
pub fn inner_product(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    a.same_shape(b)?;
    Ok(accurate_sum(a.data.iter().zip(&b.data).map(|(x, y)| x * y)))
}

/// Observed photon counts.
#[derive(Clone, PartialEq, Eq)]
pub struct CountGrid {
    height: usize,
    width: usize,
    data: Vec<u32>,
}

impl fmt::Debug for CountGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CountGrid")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("total", &self.total())
            .finish()
    }
}

impl CountGrid {
    pub fn new(height: usize, width: usize, data: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "count grid dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::dims(
                format!("{} counts for {height}x{width}", height * width),
                format!("{} counts", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.data[row * self.width + col]
    }

    pub fn total(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }

    pub fn max(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    pub fn to_image(&self) -> ImageGrid {
        ImageGrid::from_vec_unchecked(
            self.height,
            self.width,
            self.data.iter().map(|&v| v as f64).collect(),
        )
    }
}

/// Orientation of a detail band in a separable 2-D wavelet frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Orientation {
    /// Smoothed along each row, differenced down the columns (horizontal edges).
    Horizontal,
    /// Differenced along each row, smoothed down the columns (vertical edges).
    Vertical,
    Diagonal,
}

/// Identifier of one band of a [`CoeffField`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BandId {
    /// Coefficients identified with image pixels (identity frame).
    Pixels,
    Detail { level: usize, orientation: Orientation },
    Approximation { level: usize },
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandId::Pixels => write!(f, "pixels"),
            BandId::Detail { level, orientation } => {
                let o = match orientation {
                    Orientation::Horizontal => "h",
                    Orientation::Vertical => "v",
                    Orientation::Diagonal => "d",
                };
                write!(f, "d{level}{o}")
            }
            BandId::Approximation { level } => write!(f, "a{level}"),
        }
    }
}

/// Structure of a coefficient field: band layout plus background slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoeffShape {
    pub height: usize,
    pub width: usize,
    pub bands: Vec<BandId>,
    pub background: bool,
}

impl CoeffShape {
    pub fn pixels(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bands: vec![BandId::Pixels],
            background: false,
        }
    }

    pub fn with_background(mut self, background: bool) -> Self {
        self.background = background;
        self
    }

    /// Number of scalar coefficients, the background included.
    pub fn len(&self) -> usize {
        self.bands.len() * self.height * self.width + usize::from(self.background)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for CoeffShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} band(s) of {}x{}{}",
            self.bands.len(),
            self.height,
            self.width,
            if self.background { " + background" } else { "" }
        )
    }
}

/// Representation coefficients: equally sized bands plus an optional scalar
/// background coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffField {
    bands: Vec<(BandId, ImageGrid)>,
    background: Option<f64>,
}

impl CoeffField {
    pub fn new(bands: Vec<(BandId, ImageGrid)>, background: Option<f64>) -> Result<Self> {
        let Some((_, first)) = bands.first() else {
            return Err(Error::invalid("coefficient field needs at least one band"));
        };
        let shape = first.shape();
        for (i, (id, band)) in bands.iter().enumerate() {
            if band.shape() != shape {
                return Err(Error::dims(
                    format!("band {id} of {}x{}", shape.0, shape.1),
                    format!("{}x{}", band.height(), band.width()),
                ));
            }
            if bands[..i].iter().any(|(other, _)| other == id) {
                return Err(Error::invalid(format!("duplicate band id {id}")));
            }
        }
        if let Some(b) = background {
            if !b.is_finite() {
                return Err(Error::invalid("background coefficient must be finite"));
            }
        }
        Ok(Self { bands, background })
    }

    /// Single pixel band, no background.
    pub fn from_image(image: ImageGrid) -> Self {
        Self {
            bands: vec![(BandId::Pixels, image)],
            background: None,
        }
    }

    pub fn zeros(shape: &CoeffShape) -> Self {
        Self {
            bands: shape
                .bands
                .iter()
                .map(|&id| (id, ImageGrid::zeros(shape.height, shape.width)))
                .collect(),
            background: shape.background.then_some(0.0),
        }
    }

    pub fn shape(&self) -> CoeffShape {
        let (height, width) = self.bands[0].1.shape();
        CoeffShape {
            height,
            width,
            bands: self.bands.iter().map(|(id, _)| *id).collect(),
            background: self.background.is_some(),
        }
    }

    pub fn bands(&self) -> &[(BandId, ImageGrid)] {
        &self.bands
    }

    pub fn band(&self, id: BandId) -> Option<&ImageGrid> {
        self.bands.iter().find(|(b, _)| *b == id).map(|(_, g)| g)
    }

    pub fn background(&self) -> Option<f64> {
        self.background
    }

    pub fn with_background(mut self, background: Option<f64>) -> Self {
        self.background = background;
        self
    }

    /// Drops the background slot and returns `(coefficients, background)`.
    pub fn split_background(self) -> (CoeffField, Option<f64>) {
        let bg = self.background;
        (
            CoeffField {
                bands: self.bands,
                background: None,
            },
            bg,
        )
    }

    /// The single pixel band, when the field is exactly one un-augmented image.
    pub fn into_image(self) -> Result<ImageGrid> {
        let shape = self.shape();
        match (self.bands.len(), self.background) {
            (1, None) if self.bands[0].0 == BandId::Pixels => {
                Ok(self.bands.into_iter().next().map(|(_, g)| g).unwrap())
            }
            _ => Err(Error::dims("a single pixel band", shape)),
        }
    }

    pub fn num_coefficients(&self) -> usize {
        self.shape().len()
    }

    /// Iterates every scalar coefficient, bands first, background last.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.bands
            .iter()
            .flat_map(|(_, g)| g.as_slice().iter().copied())
            .chain(self.background)
    }

    pub fn check_compatible(&self, other: &CoeffField) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::dims(a, b));
        }
        Ok(())
    }

    /// Applies `f` to every coefficient including the background.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> CoeffField {
        CoeffField {
            bands: self
                .bands
                .iter()
                .map(|(id, g)| {
                    let data = g.as_slice().iter().map(|&v| f(v)).collect();
                    (*id, ImageGrid::from_vec_unchecked(g.height(), g.width(), data))
                })
                .collect(),
            background: self.background.map(f),
        }
    }

    /// Applies `band_fn` to band coefficients and `bg_fn` to the background.
    pub fn map_split(
        &self,
        band_fn: impl Fn(f64) -> f64,
        bg_fn: impl Fn(f64) -> f64,
    ) -> CoeffField {
        CoeffField {
            bands: self
                .bands
                .iter()
                .map(|(id, g)| (*id, g.map(&band_fn)))
                .collect(),
            background: self.background.map(bg_fn),
        }
    }

    pub fn zip_map(&self, other: &CoeffField, f: impl Fn(f64, f64) -> f64) -> Result<CoeffField> {
        self.check_compatible(other)?;
        Ok(CoeffField {
            bands: self
                .bands
                .iter()
                .zip(&other.bands)
                .map(|((id, a), (_, b))| {
                    let data = a
                        .as_slice()
                        .iter()
                        .zip(b.as_slice())
                        .map(|(&x, &y)| f(x, y))
                        .collect();
                    (*id, ImageGrid::from_vec_unchecked(a.height(), a.width(), data))
                })
                .collect(),
            background: self.background.zip(other.background).map(|(x, y)| f(x, y)),
        })
    }

    /// `self + s·other`.
    pub fn add_scaled(&self, other: &CoeffField, s: f64) -> Result<CoeffField> {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn sub(&self, other: &CoeffField) -> Result<CoeffField> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> CoeffField {
        self.map(|v| v * s)
    }

    pub fn norm_sq(&self) -> f64 {
        accurate_sum(self.values().map(|v| v * v))
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

/// Inner product in coefficient space; the background pair contributes
/// `a₀·b₀` when present.
pub fn coeff_inner_product(a: &CoeffField, b: &CoeffField) -> Result<f64> {
    a.check_compatible(b)?;
    Ok(accurate_sum(a.values().zip(b.values()).map(|(x, y)| x * y)))
}

/// `‖c‖_p^p = Σ |c_k|^p`, the background counted as one coefficient.
pub fn lp_norm_p(c: &CoeffField, p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::invalid(format!("p must be a finite value >= 1, got {p}")));
    }
    Ok(if p == 1.0 {
        accurate_sum(c.values().map(f64::abs))
    } else {
        accurate_sum(c.values().map(|v| v.abs().powf(p)))
    })
}
