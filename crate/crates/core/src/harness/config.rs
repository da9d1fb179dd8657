//! Run configuration: a flat TOML file with a version tag.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{GridSpec, ModelParams, SpectralDensity};
use crate::wlmc::{Schedule, UpdateKind};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BathKind {
    /// Cavity-mediated density; the coupling list is g.
    Structured,
    /// `(α/2) ω Θ(ω_c − ω)`; the coupling list is α.
    PureOhmic,
    /// Modes read from `bath_file`; the coupling list must be empty.
    Discrete,
}

fn default_delta() -> f64 {
    1.0
}
fn default_omega0() -> f64 {
    0.75
}
fn default_alpha_cav() -> f64 {
    0.2
}
fn default_omega_c() -> f64 {
    10.0
}
fn default_chains() -> u64 {
    8
}
fn default_tol() -> f64 {
    1e-8
}
fn default_points() -> usize {
    2048
}
fn default_update() -> UpdateKind {
    UpdateKind::Cluster
}
fn default_h() -> f64 {
    1e-3
}
fn default_eps() -> f64 {
    1e-3
}

/// Every key of the configuration file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub bath: BathKind,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_omega0")]
    pub omega0: f64,
    #[serde(default = "default_alpha_cav")]
    pub alpha_cav: f64,
    #[serde(default)]
    pub alpha_q: f64,
    #[serde(default = "default_omega_c")]
    pub omega_c: f64,
    /// g values (structured) or α values (pure Ohmic).
    #[serde(default)]
    pub couplings: Vec<f64>,
    pub betas: Vec<f64>,
    #[serde(default)]
    pub bath_file: Option<PathBuf>,

    pub n_therm: u64,
    pub n_sweeps: u64,
    pub bin_len: u64,
    #[serde(default = "default_chains")]
    pub n_chains: u64,
    pub seed: u64,
    #[serde(default = "default_update")]
    pub update: UpdateKind,
    /// Sweeps between checkpoints; 0 disables checkpointing.
    #[serde(default)]
    pub checkpoint_every: u64,

    #[serde(default = "default_tol")]
    pub kernel_tol: f64,
    #[serde(default = "default_points")]
    pub kernel_points: usize,

    /// Boson truncation per discrete mode for ED.
    #[serde(default)]
    pub n_max: Vec<usize>,
    /// Modes used when a continuous bath is discretized for ED.
    #[serde(default)]
    pub ed_modes: usize,
    #[serde(default = "default_eps")]
    pub ed_eps: f64,
    #[serde(default = "default_h")]
    pub relax_h: f64,
    #[serde(default)]
    pub relax_t_max: f64,
    #[serde(default)]
    pub relax_points: usize,

    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub resume: bool,
    /// Stop every chain once it reaches this many sweeps, after writing its
    /// checkpoint, and report the run as interrupted.
    #[serde(default)]
    pub halt_after: Option<u64>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl RunConfig {
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| line_of(text, s.start));
            let key = e
                .span()
                .and_then(|s| text.get(s.clone()))
                .map(|k| k.split('=').next().unwrap_or(k).trim().to_string())
                .filter(|k| !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
            Error::Parse { source_name: source_name.to_string(), line, key, message: e.message().to_string() }
        })?;
        cfg.validate(source_name)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        if let Some(f) = &cfg.bath_file {
            if f.is_relative() {
                cfg.bath_file = Some(path.parent().unwrap_or(Path::new(".")).join(f));
            }
        }
        Ok(cfg)
    }

    fn validate(&self, source_name: &str) -> Result<()> {
        let bad = |key: &str, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: 0,
            key: Some(key.to_string()),
            message,
        };
        if self.version != CONFIG_VERSION {
            return Err(bad("version", format!("unsupported version {}, expected {CONFIG_VERSION}", self.version)));
        }
        if self.betas.is_empty() || self.betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(bad("betas", "must be a non-empty list of positive numbers".into()));
        }
        match self.bath {
            BathKind::Discrete => {
                if self.bath_file.is_none() {
                    return Err(bad("bath_file", "required for a discrete bath".into()));
                }
                if !self.couplings.is_empty() {
                    return Err(bad("couplings", "not used with a discrete bath".into()));
                }
            }
            _ => {
                if self.couplings.is_empty() || self.couplings.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
                    return Err(bad("couplings", "must be a non-empty list of non-negative numbers".into()));
                }
            }
        }
        if self.n_chains == 0 {
            return Err(bad("n_chains", "must be positive".into()));
        }
        self.schedule().validate().map_err(|e| bad("n_sweeps", e.to_string()))?;
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            n_therm: self.n_therm,
            n_sweeps: self.n_sweeps,
            bin_len: self.bin_len,
            seed: self.seed,
            update: self.update,
        }
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec { n_points: self.kernel_points, target_tol: self.kernel_tol, ..GridSpec::default() }
    }

    /// Coupling labels to iterate over; a single 0 for discrete baths.
    pub fn coupling_list(&self) -> Vec<f64> {
        if self.bath == BathKind::Discrete {
            vec![0.0]
        } else {
            self.couplings.clone()
        }
    }

    /// Model parameters and spectral density for one grid point. For pure
    /// Ohmic baths α is stored in `alpha_q` and g is 0.
    pub fn point(&self, coupling: f64, beta: f64) -> Result<(ModelParams, SpectralDensity)> {
        let mut p = ModelParams {
            delta: self.delta,
            omega0: self.omega0,
            g: 0.0,
            alpha_cav: self.alpha_cav,
            alpha_q: self.alpha_q,
            omega_c: self.omega_c,
            beta,
        };
        let sd = match self.bath {
            BathKind::Structured => {
                p.g = coupling;
                SpectralDensity::structured(&p)
            }
            BathKind::PureOhmic => {
                p.alpha_q = coupling;
                SpectralDensity::pure_ohmic(coupling, self.omega_c)
            }
            BathKind::Discrete => {
                let path = self.bath_file.as_ref().expect("validated");
                let file = std::fs::File::open(path)?;
                crate::ed::DiscretizedBath::read_from(file, &path.display().to_string())?.spectral_density()
            }
        };
        p.validate()?;
        Ok((p, sd))
    }

    /// α multiplying M² in Ψ.
    pub fn psi_alpha(&self, params: &ModelParams) -> f64 {
        match self.bath {
            BathKind::Structured => params.alpha_total(),
            BathKind::PureOhmic => params.alpha_q,
            BathKind::Discrete => 0.0,
        }
    }

    /// Physics and schedule fields only; run-control keys (out, resume,
    /// halt_after) are echoed separately so that results do not depend on them.
    pub fn echo(&self) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(self)?;
        if let Some(m) = v.as_object_mut() {
            for k in ["out", "resume", "halt_after"] {
                m.remove(k);
            }
        }
        Ok(v)
    }
}
