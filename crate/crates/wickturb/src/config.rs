//! JSON experiment configuration shared by the CLI and the examples.

use crate::error::{Error, Result};
use crate::kinetic::{KGrid, XGrid, ZGrid};
use crate::spectra::{InitialProfile, QuadratureSpec, Regime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub l_sweep: Vec<f64>,
    /// `λ^{-2} = L^α`.
    pub alpha: f64,
    /// `ε^{-1} = L^β`.
    pub beta: f64,
    /// Kinetic time horizon.
    pub t: f64,
    pub dt: f64,
    /// Lattice ball radius for finite-L sums and counts.
    pub radius: f64,
    pub profile: InitialProfile,
    pub quadrature: QuadratureSpec,
    pub k_grid: KGrid,
    pub x_grid: Option<XGrid>,
    pub zeta_grid: Option<ZGrid>,
    pub samples: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d: 3,
            l_sweep: vec![2.0, 4.0, 8.0],
            alpha: 1.0,
            beta: 2.0,
            t: 0.25,
            dt: 0.05,
            radius: 2.0,
            profile: InitialProfile::gaussian(3, 1.0, PI),
            quadrature: QuadratureSpec::default(),
            k_grid: KGrid::Cartesian { kmax: 1.5, m: 9 },
            x_grid: None,
            zeta_grid: None,
            samples: 10_000,
            seed: 20261018,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn bad(field: &str, msg: String) -> Error {
    Error::Validation(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(bad("alpha", format!("must lie in the open interval (0,2), got {}", self.alpha)));
        }
        if !(self.beta >= self.alpha) {
            return Err(bad("beta", format!("must satisfy alpha <= beta, got alpha={} beta={}", self.alpha, self.beta)));
        }
        if !(2..=3).contains(&self.d) {
            return Err(bad("d", format!("must be 2 or 3, got {}", self.d)));
        }
        if self.profile.dim() != self.d {
            return Err(bad("profile.k0", format!("has dimension {}, expected d={}", self.profile.dim(), self.d)));
        }
        if self.l_sweep.is_empty() || self.l_sweep.iter().any(|&l| !(l >= 1.0) || l.fract() != 0.0) {
            return Err(bad("l_sweep", format!("needs integer box sizes >= 1, got {:?}", self.l_sweep)));
        }
        for (name, v) in [("t", self.t), ("dt", self.dt), ("radius", self.radius)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(name, format!("must be positive and finite, got {v}")));
            }
        }
        if self.dt > self.t {
            return Err(bad("dt", format!("exceeds the horizon t={}", self.t)));
        }
        if !(self.profile.a >= 0.0 && self.profile.b > 0.0) {
            return Err(bad("profile", format!("needs a >= 0 and b > 0, got a={} b={}", self.profile.a, self.profile.b)));
        }
        if self.samples < 2 {
            return Err(bad("samples", format!("needs at least 2, got {}", self.samples)));
        }
        self.k_grid.validate().map_err(|e| bad("k_grid", e.to_string()))?;
        Ok(())
    }

    /// Nonlinearity strength `λ = L^{-α/2}`.
    pub fn lambda(&self, l: f64) -> f64 {
        l.powf(-self.alpha / 2.0)
    }

    /// Inhomogeneity scale `ε = L^{-β}`.
    pub fn epsilon(&self, l: f64) -> f64 {
        l.powf(-self.beta)
    }

    pub fn regime(&self) -> Result<Regime> {
        Regime::from_exponents(self.alpha, self.beta)
    }

    /// The config with `output_dir` cleared: where results go does not change them.
    pub fn canonical(&self) -> ExperimentConfig {
        ExperimentConfig { output_dir: PathBuf::new(), ..self.clone() }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.canonical()).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
