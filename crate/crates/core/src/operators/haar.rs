//! Translation-invariant (undecimated) 2-D Haar frame.
//!
//! Level `j` filters the previous approximation with the à trous pair
//! `lo[n] = (x[n] + x[n+s]) / 2`, `hi[n] = (x[n] - x[n+s]) / 2`, `s = 2^(j-1)`,
//! separably along both axes with periodic wrap. Because
//! `|lo(ω)|² + |hi(ω)|² = 1` the analysis map is an isometry and synthesis
//! (its adjoint) reconstructs exactly: the frame is tight with bound 1.

use super::{check_domain, check_range, LinearOp};
use crate::error::{Error, Result};
use crate::grid::{BandId, CoeffField, CoeffShape, ImageGrid, Orientation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    /// Filter along each row (horizontal neighbours).
    Cols,
    /// Filter along each column (vertical neighbours).
    Rows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pass {
    Low,
    High,
}

/// Synthesis operator `Φ` of the TI Haar frame; `adjoint` is the analysis `Φ*`.
#[derive(Debug, Clone)]
pub struct TiHaar {
    height: usize,
    width: usize,
    levels: usize,
}

const ORIENTATIONS: [Orientation; 3] = [
    Orientation::Horizontal,
    Orientation::Vertical,
    Orientation::Diagonal,
];

impl TiHaar {
    pub fn new(height: usize, width: usize, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::invalid("wavelet levels must be at least 1"));
        }
        let block = 1usize
            .checked_shl(levels as u32)
            .ok_or_else(|| Error::invalid(format!("too many wavelet levels: {levels}")))?;
        if height == 0 || width == 0 || !height.is_multiple_of(block) || !width.is_multiple_of(block) {
            return Err(Error::invalid(format!(
                "image {height}x{width} is not divisible by 2^{levels} = {block}"
            )));
        }
        Ok(Self {
            height,
            width,
            levels,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Band layout: three detail bands per level (coarsening), then the
    /// coarsest approximation.
    pub fn band_ids(levels: usize) -> Vec<BandId> {
        let mut ids = Vec::with_capacity(3 * levels + 1);
        for level in 1..=levels {
            for orientation in ORIENTATIONS {
                ids.push(BandId::Detail { level, orientation });
            }
        }
        ids.push(BandId::Approximation { level: levels });
        ids
    }

    pub fn analysis(&self, f: &ImageGrid) -> Result<CoeffField> {
        check_range(self, f)?;
        let (h, w) = (self.height, self.width);
        let mut approx = f.as_slice().to_vec();
        let mut bands = Vec::with_capacity(3 * self.levels + 1);
        for level in 1..=self.levels {
            let s = 1usize << (level - 1);
            let lo_c = filter(&approx, h, w, s, Axis::Cols, Pass::Low, false);
            let hi_c = filter(&approx, h, w, s, Axis::Cols, Pass::High, false);
            let next = filter(&lo_c, h, w, s, Axis::Rows, Pass::Low, false);
            let horiz = filter(&lo_c, h, w, s, Axis::Rows, Pass::High, false);
            let vert = filter(&hi_c, h, w, s, Axis::Rows, Pass::Low, false);
            let diag = filter(&hi_c, h, w, s, Axis::Rows, Pass::High, false);
            for (orientation, data) in ORIENTATIONS.into_iter().zip([horiz, vert, diag]) {
                bands.push((
                    BandId::Detail { level, orientation },
                    ImageGrid::from_vec_unchecked(h, w, data),
                ));
            }
            approx = next;
        }
        bands.push((
            BandId::Approximation { level: self.levels },
            ImageGrid::from_vec_unchecked(h, w, approx),
        ));
        CoeffField::new(bands, None)
    }

    pub fn synthesis(&self, c: &CoeffField) -> Result<ImageGrid> {
        check_domain(self, c)?;
        let (h, w) = (self.height, self.width);
        let band = |id: BandId| c.band(id).expect("checked band layout").as_slice();
        let mut approx = band(BandId::Approximation { level: self.levels }).to_vec();
        for level in (1..=self.levels).rev() {
            let s = 1usize << (level - 1);
            let d = |o| {
                band(BandId::Detail {
                    level,
                    orientation: o,
                })
            };
            // undo the row pass for the low and high column branches
            let mut lo_c = filter(&approx, h, w, s, Axis::Rows, Pass::Low, true);
            add(
                &mut lo_c,
                &filter(d(Orientation::Horizontal), h, w, s, Axis::Rows, Pass::High, true),
            );
            let mut hi_c = filter(d(Orientation::Vertical), h, w, s, Axis::Rows, Pass::Low, true);
            add(
                &mut hi_c,
                &filter(d(Orientation::Diagonal), h, w, s, Axis::Rows, Pass::High, true),
            );
            let mut out = filter(&lo_c, h, w, s, Axis::Cols, Pass::Low, true);
            add(&mut out, &filter(&hi_c, h, w, s, Axis::Cols, Pass::High, true));
            approx = out;
        }
        Ok(ImageGrid::from_vec_unchecked(h, w, approx))
    }
}

fn add(acc: &mut [f64], other: &[f64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// One periodic Haar pass with dilation `s`. The adjoint of
/// `y[n] = (x[n] ± x[n+s]) / 2` is `x[m] = (y[m] ± y[m-s]) / 2`.
fn filter(
    x: &[f64],
    h: usize,
    w: usize,
    s: usize,
    axis: Axis,
    pass: Pass,
    adjoint: bool,
) -> Vec<f64> {
    let sign = match pass {
        Pass::Low => 1.0,
        Pass::High => -1.0,
    };
    let mut out = vec![0.0; x.len()];
    for r in 0..h {
        for c in 0..w {
            let (nr, nc) = match (axis, adjoint) {
                (Axis::Cols, false) => (r, (c + s) % w),
                (Axis::Cols, true) => (r, (c + w - s % w) % w),
                (Axis::Rows, false) => ((r + s) % h, c),
                (Axis::Rows, true) => ((r + h - s % h) % h, c),
            };
            out[r * w + c] = 0.5 * (x[r * w + c] + sign * x[nr * w + nc]);
        }
    }
    out
}

impl LinearOp for TiHaar {
    fn domain(&self) -> CoeffShape {
        CoeffShape {
            height: self.height,
            width: self.width,
            bands: Self::band_ids(self.levels),
            background: false,
        }
    }

    fn range(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn apply(&self, c: &CoeffField) -> Result<ImageGrid> {
        self.synthesis(c)
    }

    fn adjoint(&self, y: &ImageGrid) -> Result<CoeffField> {
        self.analysis(y)
    }
}

/// `Φ[c]` for a TI Haar frame with `levels` resolutions.
pub fn ti_haar_synthesis(c: &CoeffField, levels: usize) -> Result<ImageGrid> {
    let shape = c.shape();
    TiHaar::new(shape.height, shape.width, levels)?.synthesis(c)
}

/// `Φ*[f]` for a TI Haar frame with `levels` resolutions.
pub fn ti_haar_analysis(f: &ImageGrid, levels: usize) -> Result<CoeffField> {
    TiHaar::new(f.height(), f.width(), levels)?.analysis(f)
}
