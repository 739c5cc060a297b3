//! Flat `key = value` experiment configuration with dotted keys.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; see
//! [`KEYS`] for the full list and defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::phantoms::{background_for_snr, KernelChoice, DEFAULT_DENSITY, DEFAULT_PEAK};
use crate::solvers::{MuSearchConfig, PriorConfig, StepRule, StopRule};

/// Every accepted key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("phantom", "shepp_logan", "shepp_logan | sparse | path to a .pgm or .csv image"),
    ("phantom.height", "128", "image height"),
    ("phantom.width", "128", "image width"),
    ("phantom.density", "0.01", "fraction of nonzero pixels (sparse)"),
    ("phantom.peak", "255", "peak intensity (sparse); also the SNR reference"),
    ("kernel", "rational", "rational | gaussian | none"),
    ("kernel.d", "2", "rational kernel radius"),
    ("kernel.cutoff", "0.2pi", "gaussian -3 dB amplitude cut-off, rad/sample (suffix pi allowed)"),
    ("kernel.radius", "auto", "gaussian support radius; auto = ceil(4 sigma)"),
    ("frame", "ti_haar", "ti_haar | identity"),
    ("frame.levels", "4", "TI-Haar resolution levels"),
    ("frame.background_atom", "unit", "unit (norm-1 constant atom) | ones"),
    ("noise.snr", "32", "peak / background; exclusive with noise.background"),
    ("noise.background", "-", "background level f0 > 0; exclusive with noise.snr"),
    ("solver", "pis", "comma-separated list of pis, gis, rl, rltv"),
    ("pis.gamma", "0.02", "l1 weight; exclusive with pis.beta"),
    ("pis.beta", "-", "Laplacian bandwidth, gamma = 1/beta"),
    ("pis.mu", "search", "search | fixed positive value"),
    ("pis.alpha", "0.8", "step-size search factor"),
    ("pis.nu_init", "1", "step-size search start"),
    ("pis.max_doublings", "400", "step-size search safeguard"),
    ("pis.penalize_background", "false", "threshold the background coefficient too (pis and gis)"),
    ("pis.penalize_approximation", "true", "threshold the coarse approximation band (pis and gis)"),
    ("pis.rel_tol", "1e-6", "relative image change stop threshold"),
    ("pis.max_iter", "500", "iteration budget"),
    ("gis.beta", "4.5", "gamma = sigma^2 / beta; exclusive with gis.gamma"),
    ("gis.gamma", "-", "explicit l1 weight"),
    ("gis.sigma2", "auto", "noise variance; auto = background level"),
    ("gis.mu_factor", "1.1", "mu = factor * lambda_max(A*A)"),
    ("gis.rel_tol", "1e-6", "relative image change stop threshold"),
    ("gis.max_iter", "500", "iteration budget"),
    ("rl.max_iter", "200", "iteration budget"),
    ("rl.report", "best", "best (lowest-NMSE iterate) | final"),
    ("rltv.gamma_tv", "0.002", "TV weight"),
    ("rltv.max_iter", "200", "iteration budget"),
    ("rltv.report", "best", "best (lowest-NMSE iterate) | final"),
    ("trials", "20", "number of noise realisations"),
    ("seed", "0", "master seed; trial k uses seed + k"),
    ("output", "out", "output directory"),
    ("ssim.range", "auto", "SSIM dynamic range; auto = truth max - min"),
    ("artifacts.images", "true", "write per-trial images next to the traces"),
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("{}unknown key `{key}`", at(*line))]
    UnknownKey { key: String, line: Option<usize> },
    #[error("{}`{key}`: {message}", at(*line))]
    Value {
        key: String,
        line: Option<usize>,
        message: String,
    },
    #[error("{0}")]
    Conflict(String),
}

fn at(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhantomSource {
    SheppLogan,
    Sparse { density: f64, peak: f64 },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub source: PhantomSource,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameChoice {
    TiHaar { levels: usize },
    Identity,
}

/// Amplitude of the constant atom modelling the background.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundAtom {
    /// `1/√n`, unit norm.
    Unit,
    /// All ones.
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    Snr(f64),
    Background(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SolverKind {
    Pis,
    Gis,
    Rl,
    Rltv,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Pis => "pis",
            SolverKind::Gis => "gis",
            SolverKind::Rl => "rl",
            SolverKind::Rltv => "rltv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "pis" => SolverKind::Pis,
            "gis" => SolverKind::Gis,
            "rl" => SolverKind::Rl,
            "rltv" => SolverKind::Rltv,
            _ => return None,
        })
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PisParams {
    pub prior: PriorConfig,
    pub step: StepRule,
    pub stop: StopRule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GisWeight {
    /// `γ = σ²/β`.
    Beta(f64),
    Gamma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GisParams {
    pub weight: GisWeight,
    /// `None` uses the background level.
    pub sigma2: Option<f64>,
    pub mu_factor: f64,
    pub stop: StopRule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlParams {
    /// Zero for plain RL.
    pub gamma_tv: f64,
    pub max_iter: usize,
    /// Report the lowest-NMSE iterate instead of the last one.
    pub report_best: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub phantom: PhantomConfig,
    pub kernel: KernelChoice,
    pub frame: FrameChoice,
    pub background_atom: BackgroundAtom,
    pub noise: NoiseLevel,
    pub solvers: Vec<SolverKind>,
    pub pis: PisParams,
    pub gis: GisParams,
    pub rl: RlParams,
    pub rltv: RlParams,
    pub trials: usize,
    pub seed: u64,
    pub output: PathBuf,
    pub ssim_range: Option<f64>,
    pub write_images: bool,
}

impl ExperimentConfig {
    /// Peak intensity that `noise.snr` refers to. For file phantoms this is
    /// the image maximum, supplied by the caller.
    pub fn reference_peak(&self, file_peak: Option<f64>) -> f64 {
        match &self.phantom.source {
            PhantomSource::Sparse { peak, .. } => *peak,
            PhantomSource::SheppLogan => DEFAULT_PEAK,
            PhantomSource::File(_) => file_peak.unwrap_or(DEFAULT_PEAK),
        }
    }

    /// Background level `f₀` and the SNR it corresponds to.
    pub fn background(&self, peak: f64) -> Result<(f64, f64), ConfigError> {
        match self.noise {
            NoiseLevel::Background(b) => Ok((b, peak / b)),
            NoiseLevel::Snr(s) => {
                let b = background_for_snr(peak, s).map_err(|e| ConfigError::Value {
                    key: "noise.snr".into(),
                    line: None,
                    message: e.to_string(),
                })?;
                Ok((b, s))
            }
        }
    }

    pub fn rl_params(&self, kind: SolverKind) -> &RlParams {
        match kind {
            SolverKind::Rltv => &self.rltv,
            _ => &self.rl,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        RawConfig::default().build().expect("defaults are valid")
    }
}

/// Key-value pairs before validation, with the line each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, Option<usize>)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: line.to_string(),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: line.to_string(),
                });
            }
            raw.entries
                .insert(key.to_string(), (value.trim().to_string(), Some(i + 1)));
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> std::io::Result<std::result::Result<Self, ConfigError>> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    /// Sets or replaces a key (command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (value.into(), None));
    }

    /// Parses `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: pair.to_string(),
        })?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn build(&self) -> Result<ExperimentConfig, ConfigError> {
        for (key, (_, line)) in &self.entries {
            if !KEYS.iter().any(|(k, _, _)| k == key) {
                return Err(ConfigError::UnknownKey {
                    key: key.clone(),
                    line: *line,
                });
            }
        }
        let r = Reader(self);

        let height = r.positive_usize("phantom.height", 128)?;
        let width = r.positive_usize("phantom.width", 128)?;
        let source = match r.str("phantom").unwrap_or("shepp_logan") {
            "shepp_logan" => PhantomSource::SheppLogan,
            "sparse" => PhantomSource::Sparse {
                density: r.number("phantom.density", DEFAULT_DENSITY)?,
                peak: r.number("phantom.peak", DEFAULT_PEAK)?,
            },
            path => PhantomSource::File(PathBuf::from(path)),
        };

        let kernel = match r.str("kernel").unwrap_or("rational") {
            "rational" => KernelChoice::Rational {
                d: r.positive_usize("kernel.d", 2)?,
            },
            "gaussian" => {
                let cutoff = match r.str("kernel.cutoff") {
                    Some(v) => parse_angle(v).ok_or_else(|| r.bad("kernel.cutoff", "expected a number, optionally suffixed with pi"))?,
                    None => 0.2 * std::f64::consts::PI,
                };
                let radius = match r.str("kernel.radius") {
                    None | Some("auto") => None,
                    Some(_) => Some(r.positive_usize("kernel.radius", 1)?),
                };
                KernelChoice::Gaussian { cutoff, radius }
            }
            "none" => KernelChoice::None,
            _ => return Err(r.bad("kernel", "expected rational, gaussian or none")),
        };

        let frame = match r.str("frame").unwrap_or("ti_haar") {
            "ti_haar" => FrameChoice::TiHaar {
                levels: r.positive_usize("frame.levels", 4)?,
            },
            "identity" => FrameChoice::Identity,
            _ => return Err(r.bad("frame", "expected ti_haar or identity")),
        };
        let background_atom = match r.str("frame.background_atom").unwrap_or("unit") {
            "unit" => BackgroundAtom::Unit,
            "ones" => BackgroundAtom::Ones,
            _ => return Err(r.bad("frame.background_atom", "expected unit or ones")),
        };

        let noise = match (r.str("noise.snr"), r.str("noise.background")) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Conflict(
                    "give exactly one of noise.snr and noise.background".into(),
                ))
            }
            (_, Some(_)) => NoiseLevel::Background(r.positive("noise.background", 1.0)?),
            _ => NoiseLevel::Snr(r.positive("noise.snr", 32.0)?),
        };

        let mut solvers = Vec::new();
        for name in r.str("solver").unwrap_or("pis").split(',') {
            let kind = SolverKind::parse(name.trim())
                .ok_or_else(|| r.bad("solver", &format!("unknown solver `{}`", name.trim())))?;
            if !solvers.contains(&kind) {
                solvers.push(kind);
            }
        }

        let prior = match (r.str("pis.gamma"), r.str("pis.beta")) {
            (Some(_), Some(_)) => PriorConfig::new(r.number("pis.gamma", 0.0)?, r.number("pis.beta", 0.0)?),
            (None, Some(_)) => PriorConfig::from_beta(r.number("pis.beta", 0.0)?),
            _ => PriorConfig::from_gamma(r.number("pis.gamma", 0.02)?),
        }
        .map_err(|e| r.bad("pis.gamma", &e.to_string()))?
        .with_background_penalty(r.boolean("pis.penalize_background", false)?)
        .with_approximation_penalty(r.boolean("pis.penalize_approximation", true)?);
        let step = match r.str("pis.mu").unwrap_or("search") {
            "search" => StepRule::Search(MuSearchConfig {
                alpha: r.number("pis.alpha", 0.8)?,
                nu_init: r.number("pis.nu_init", 1.0)?,
                max_doublings: r.positive_usize("pis.max_doublings", 400)?,
            }),
            _ => StepRule::Fixed(r.positive("pis.mu", 1.0)?),
        };
        step.validate().map_err(|e| r.bad("pis.alpha", &e.to_string()))?;
        let pis = PisParams {
            prior,
            step,
            stop: r.stop("pis")?,
        };

        let weight = match (r.str("gis.gamma"), r.str("gis.beta")) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Conflict("give at most one of gis.gamma and gis.beta".into()))
            }
            (Some(_), None) => GisWeight::Gamma(r.nonnegative("gis.gamma", 0.0)?),
            _ => GisWeight::Beta(r.positive("gis.beta", 4.5)?),
        };
        let sigma2 = match r.str("gis.sigma2") {
            None | Some("auto") => None,
            Some(_) => Some(r.positive("gis.sigma2", 1.0)?),
        };
        let gis = GisParams {
            weight,
            sigma2,
            mu_factor: r.positive("gis.mu_factor", 1.1)?,
            stop: r.stop("gis")?,
        };

        let rl = RlParams {
            gamma_tv: 0.0,
            max_iter: r.positive_usize("rl.max_iter", 200)?,
            report_best: r.report("rl.report")?,
        };
        let rltv = RlParams {
            gamma_tv: r.nonnegative("rltv.gamma_tv", 0.002)?,
            max_iter: r.positive_usize("rltv.max_iter", 200)?,
            report_best: r.report("rltv.report")?,
        };

        let ssim_range = match r.str("ssim.range") {
            None | Some("auto") => None,
            Some(_) => Some(r.positive("ssim.range", 1.0)?),
        };

        Ok(ExperimentConfig {
            phantom: PhantomConfig {
                source,
                height,
                width,
            },
            kernel,
            frame,
            background_atom,
            noise,
            solvers,
            pis,
            gis,
            rl,
            rltv,
            trials: r.positive_usize("trials", 20)?,
            seed: r.parse("seed", 0u64)?,
            output: PathBuf::from(r.str("output").unwrap_or("out")),
            ssim_range,
            write_images: r.boolean("artifacts.images", true)?,
        })
    }
}

/// `0.628`, `0.2pi` or `pi`.
fn parse_angle(v: &str) -> Option<f64> {
    let v = v.trim();
    match v.strip_suffix("pi") {
        Some("") => Some(std::f64::consts::PI),
        Some(m) => m.trim().trim_end_matches('*').trim().parse::<f64>().ok().map(|m| m * std::f64::consts::PI),
        None => v.parse().ok(),
    }
}

struct Reader<'a>(&'a RawConfig);

impl Reader<'_> {
    fn str(&self, key: &str) -> Option<&str> {
        self.0.get(key)
    }

    fn bad(&self, key: &str, message: &str) -> ConfigError {
        ConfigError::Value {
            key: key.to_string(),
            line: self.0.entries.get(key).and_then(|(_, l)| *l),
            message: message.to_string(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.str(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| self.bad(key, &format!("cannot parse {v:?}"))),
        }
    }

    fn number(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v: f64 = self.parse(key, default)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.bad(key, "must be finite"))
        }
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.number(key, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(self.bad(key, &format!("must be positive, got {v}")))
        }
    }

    fn nonnegative(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.number(key, default)?;
        if v >= 0.0 {
            Ok(v)
        } else {
            Err(self.bad(key, &format!("must be >= 0, got {v}")))
        }
    }

    fn positive_usize(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.parse(key, default)? {
            0 => Err(self.bad(key, "must be positive")),
            v => Ok(v),
        }
    }

    fn boolean(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        self.parse(key, default)
    }

    fn report(&self, key: &str) -> Result<bool, ConfigError> {
        match self.str(key).unwrap_or("best") {
            "best" => Ok(true),
            "final" => Ok(false),
            _ => Err(self.bad(key, "expected best or final")),
        }
    }

    fn stop(&self, prefix: &str) -> Result<StopRule, ConfigError> {
        Ok(StopRule {
            rel_tol: self.nonnegative(&format!("{prefix}.rel_tol"), 1e-6)?,
            max_iter: self.positive_usize(&format!("{prefix}.max_iter"), 500)?,
        })
    }
}
