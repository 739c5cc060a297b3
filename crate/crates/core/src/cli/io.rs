//! PGM (P2/P5) and headerless CSV grid files.
//!
//! Count data is stored as PGM. Real-valued grids are stored as CSV with
//! shortest round-trip decimal formatting, or quantised to 16-bit PGM for
//! viewing with a `# scale <s>` comment recording `pixel = value · s`.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::grid::{CountGrid, ImageGrid};

pub const PGM_MAXVAL: u32 = 65535;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file at byte {offset}: {detail}")]
    Malformed { offset: usize, detail: String },
    #[error("dimension mismatch at byte {offset}: {detail}")]
    Dimension { offset: usize, detail: String },
    #[error("cannot store image: {0}")]
    Unsupported(String),
}

impl ImageIoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ImageIoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

type Result<T> = std::result::Result<T, ImageIoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmFormat {
    /// ASCII samples.
    Plain,
    /// Binary samples, one byte for maxval < 256 and two big-endian bytes otherwise.
    Raw,
}

/// Decoded PGM contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub counts: CountGrid,
    pub maxval: u32,
    /// Value of a `# scale` comment, if present.
    pub scale: Option<f64>,
}

impl Pgm {
    /// Sample values divided by the recorded scale (1 when absent).
    pub fn to_image(&self) -> ImageGrid {
        let img = self.counts.to_image();
        match self.scale {
            Some(s) => img.scale(1.0 / s),
            None => img,
        }
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    scale: Option<f64>,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                let start = self.pos + 1;
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                let text = String::from_utf8_lossy(&self.bytes[start..self.pos]);
                if let Some(v) = text.trim().strip_prefix("scale") {
                    self.scale = v.trim().parse().ok();
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageIoError::Malformed {
                offset: start,
                detail: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| ImageIoError::Malformed {
                offset: start,
                detail: format!("{what} does not fit in 32 bits"),
            })
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Pgm> {
    let format = match bytes.get(..2) {
        Some(b"P2") => PgmFormat::Plain,
        Some(b"P5") => PgmFormat::Raw,
        _ => {
            return Err(ImageIoError::Malformed {
                offset: 0,
                detail: "missing P2/P5 magic number".into(),
            })
        }
    };
    let mut h = Header {
        bytes,
        pos: 2,
        scale: None,
    };
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval_at = h.pos;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageIoError::Dimension {
            offset: maxval_at,
            detail: format!("{width}x{height} image"),
        });
    }
    if maxval == 0 || maxval > PGM_MAXVAL {
        return Err(ImageIoError::Malformed {
            offset: maxval_at,
            detail: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    let n = width * height;
    let mut data = Vec::with_capacity(n);
    match format {
        PgmFormat::Plain => {
            for _ in 0..n {
                h.skip_space_and_comments();
                if h.pos >= bytes.len() {
                    return Err(ImageIoError::Dimension {
                        offset: h.pos,
                        detail: format!("expected {n} samples, found {}", data.len()),
                    });
                }
                let at = h.pos;
                let v = h.number("sample")?;
                if v > maxval {
                    return Err(ImageIoError::Malformed {
                        offset: at,
                        detail: format!("sample {v} exceeds maxval {maxval}"),
                    });
                }
                data.push(v);
            }
            h.skip_space_and_comments();
            if h.pos < bytes.len() {
                return Err(ImageIoError::Dimension {
                    offset: h.pos,
                    detail: format!("trailing data after {n} samples"),
                });
            }
        }
        PgmFormat::Raw => {
            // exactly one whitespace byte separates the header from the raster
            if !bytes.get(h.pos).is_some_and(|b| b.is_ascii_whitespace()) {
                return Err(ImageIoError::Malformed {
                    offset: h.pos,
                    detail: "expected whitespace after maxval".into(),
                });
            }
            let start = h.pos + 1;
            let width_bytes = if maxval < 256 { 1 } else { 2 };
            let raster = &bytes[start..];
            if raster.len() != n * width_bytes {
                return Err(ImageIoError::Dimension {
                    offset: start,
                    detail: format!(
                        "expected {} raster bytes for {width}x{height}, found {}",
                        n * width_bytes,
                        raster.len()
                    ),
                });
            }
            for (i, chunk) in raster.chunks(width_bytes).enumerate() {
                let v = match *chunk {
                    [b] => b as u32,
                    [hi, lo] => u16::from_be_bytes([hi, lo]) as u32,
                    _ => unreachable!(),
                };
                if v > maxval {
                    return Err(ImageIoError::Malformed {
                        offset: start + i * width_bytes,
                        detail: format!("sample {v} exceeds maxval {maxval}"),
                    });
                }
                data.push(v);
            }
        }
    }
    let counts = CountGrid::new(height, width, data).expect("size checked");
    Ok(Pgm {
        counts,
        maxval,
        scale: h.scale,
    })
}

/// Encodes counts with `maxval` = max(count, 1). Counts above 65535 are rejected.
pub fn encode_pgm(counts: &CountGrid, format: PgmFormat, scale: Option<f64>) -> Result<Vec<u8>> {
    let maxval = counts.max().max(1);
    if maxval > PGM_MAXVAL {
        return Err(ImageIoError::Unsupported(format!(
            "count {maxval} exceeds the PGM limit {PGM_MAXVAL}"
        )));
    }
    let (h, w) = counts.shape();
    let magic = match format {
        PgmFormat::Plain => "P2",
        PgmFormat::Raw => "P5",
    };
    let mut out = format!("{magic}\n");
    if let Some(s) = scale {
        out.push_str(&format!("# scale {s}\n"));
    }
    out.push_str(&format!("{w} {h}\n{maxval}\n"));
    let mut bytes = out.into_bytes();
    match format {
        PgmFormat::Plain => {
            for row in counts.as_slice().chunks(w) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                bytes.extend_from_slice(line.join(" ").as_bytes());
                bytes.push(b'\n');
            }
        }
        PgmFormat::Raw => {
            for &v in counts.as_slice() {
                if maxval < 256 {
                    bytes.push(v as u8);
                } else {
                    bytes.extend_from_slice(&(v as u16).to_be_bytes());
                }
            }
        }
    }
    Ok(bytes)
}

/// Quantises a nonnegative real image to 16 bits, `pixel = round(value · s)`
/// with `s = 65535 / max`. Negative values clip to 0.
pub fn quantize(img: &ImageGrid) -> (CountGrid, f64) {
    let max = img.max();
    let scale = if max > 0.0 { PGM_MAXVAL as f64 / max } else { 1.0 };
    let data = img
        .as_slice()
        .iter()
        .map(|&v| (v * scale).round().clamp(0.0, PGM_MAXVAL as f64) as u32)
        .collect();
    let (h, w) = img.shape();
    (CountGrid::new(h, w, data).expect("same shape"), scale)
}

/// One row per line, comma-separated, shortest round-trip decimals.
pub fn encode_csv_grid(img: &ImageGrid) -> String {
    let mut out = String::with_capacity(img.len() * 20);
    for row in img.as_slice().chunks(img.width()) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn parse_csv_grid(text: &str) -> Result<ImageGrid> {
    let mut data = Vec::new();
    let mut width = None;
    let mut height = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let content = line.trim_end_matches(['\n', '\r']);
        if content.trim().is_empty() {
            offset += line.len();
            continue;
        }
        let mut field_at = offset;
        let mut count = 0;
        for field in content.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| ImageIoError::Malformed {
                offset: field_at,
                detail: format!("not a number: {:?}", field.trim()),
            })?;
            data.push(v);
            count += 1;
            field_at += field.len() + 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(ImageIoError::Dimension {
                    offset,
                    detail: format!("row {} has {count} values, expected {w}", height + 1),
                })
            }
            _ => {}
        }
        height += 1;
        offset += line.len();
    }
    let width = width.ok_or(ImageIoError::Dimension {
        offset: 0,
        detail: "no rows".into(),
    })?;
    ImageGrid::new(height, width, data).map_err(|e| ImageIoError::Malformed {
        offset: 0,
        detail: e.to_string(),
    })
}

fn is_pgm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Reads a `.pgm` (scaled back when a scale comment is present) or a CSV grid.
pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let bytes = std::fs::read(path).map_err(|e| ImageIoError::io(path, e))?;
    if is_pgm(path) {
        Ok(parse_pgm(&bytes)?.to_image())
    } else {
        let text = String::from_utf8(bytes).map_err(|e| ImageIoError::Malformed {
            offset: e.utf8_error().valid_up_to(),
            detail: "CSV is not valid UTF-8".into(),
        })?;
        parse_csv_grid(&text)
    }
}

/// Writes a `.pgm` (quantised, scale recorded) or a CSV grid by extension.
pub fn write_image(path: &Path, img: &ImageGrid) -> Result<()> {
    let bytes = if is_pgm(path) {
        let (counts, scale) = quantize(img);
        encode_pgm(&counts, PgmFormat::Raw, Some(scale))?
    } else {
        encode_csv_grid(img).into_bytes()
    };
    std::fs::write(path, bytes).map_err(|e| ImageIoError::io(path, e))
}

pub fn read_counts(path: &Path) -> Result<CountGrid> {
    let bytes = std::fs::read(path).map_err(|e| ImageIoError::io(path, e))?;
    Ok(parse_pgm(&bytes)?.counts)
}

pub fn write_counts(path: &Path, counts: &CountGrid, format: PgmFormat) -> Result<()> {
    let bytes = encode_pgm(counts, format, None)?;
    std::fs::write(path, bytes).map_err(|e| ImageIoError::io(path, e))
}
