//! Monte Carlo validation of the finite-lattice chaos expansion.
//!
//! Initial modes are `ψ(k) g_k` with independent complex Gaussians `g_k` of unit
//! second moment. The amplitude of chaos order `2n+1` is
//! `J^n_{t,k} = Σ_τ ς_τ (λ/L^d)^n Σ_dec Θ^τ_t(Ω^τ) Π ψ^± Π g^±` with Wick-ordered
//! Gaussian products.

use crate::combinatorics::enumerate_couples;
use crate::decorations::{IVec, LatticeSpec};
use crate::error::{Error, Result};
use crate::spectra::{finite_l_spectrum, InitialProfile};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// One draw of the Gaussian modes on the lattice ball.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianField {
    pub spec: LatticeSpec,
    pub modes: Vec<IVec>,
    pub values: Vec<Complex64>,
    pub seed: u64,
    pub stream: u64,
    index: CubeIndex,
}

#[derive(Clone, Debug, PartialEq)]
struct CubeIndex {
    r: i64,
    side: usize,
    d: usize,
    slot: Vec<u32>,
}

impl CubeIndex {
    fn new(spec: &LatticeSpec, modes: &[IVec]) -> Self {
        let r = (spec.max_norm2() as f64).sqrt().floor() as i64;
        let side = (2 * r + 1) as usize;
        let d = spec.d;
        let mut slot = vec![u32::MAX; side.pow(d as u32)];
        let mut ci = CubeIndex { r, side, d, slot: Vec::new() };
        for (i, m) in modes.iter().enumerate() {
            slot[ci.flat(m).unwrap()] = i as u32;
        }
        ci.slot = slot;
        ci
    }
    #[inline]
    fn flat(&self, m: &IVec) -> Option<usize> {
        let mut idx = 0;
        let mut stride = 1;
        for &c in &m[..self.d] {
            let c = c + self.r;
            if c < 0 || c >= self.side as i64 {
                return None;
            }
            idx += c as usize * stride;
            stride *= self.side;
        }
        Some(idx)
    }
    #[inline]
    fn get(&self, m: &IVec) -> Option<usize> {
        let s = self.slot[self.flat(m)?];
        (s != u32::MAX).then_some(s as usize)
    }
}

/// Sample `g_k` for every `k` in the ball: real and imaginary parts independent
/// `N(0, ½)`. Stream `stream` of the ChaCha8 generator seeded with `seed`.
pub fn sample_field(spec: &LatticeSpec, seed: u64, stream: u64) -> GaussianField {
    let modes = spec.ball();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let normal = Normal::new(0.0, FRAC_1_SQRT_2).unwrap();
    let values = modes.iter().map(|_| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))).collect();
    let index = CubeIndex::new(spec, &modes);
    GaussianField { spec: *spec, modes, values, seed, stream, index }
}

impl GaussianField {
    pub fn get(&self, m: &IVec) -> Option<Complex64> {
        self.index.get(m).map(|i| self.values[i])
    }
}

fn ivec(k: &[i64]) -> Result<IVec> {
    if k.len() > 4 {
        return Err(Error::DimensionMismatch { expected: 4, found: k.len() });
    }
    let mut v = [0; 4];
    v[..k.len()].copy_from_slice(k);
    Ok(v)
}

/// Precomputed lattice data for order-one amplitudes at one `(t, L, α, ψ)`.
#[derive(Clone, Debug)]
pub struct DysonContext {
    spec: LatticeSpec,
    t: f64,
    lambda: f64,
    psi: Vec<f64>,
    modes: Vec<IVec>,
    index: CubeIndex,
}

impl DysonContext {
    pub fn new(spec: &LatticeSpec, t: f64, alpha: f64, profile: &InitialProfile) -> Result<Self> {
        if profile.dim() != spec.d {
            return Err(Error::DimensionMismatch { expected: spec.d, found: profile.dim() });
        }
        let modes = spec.ball();
        let psi = modes.iter().map(|m| profile.psi(&spec.to_real(m))).collect();
        let index = CubeIndex::new(spec, &modes);
        Ok(DysonContext { spec: *spec, t, lambda: spec.l.powf(-alpha / 2.0), psi, modes, index })
    }

    /// `Θ_t(ω) = (e^{2πitω} − 1)/(2πiω)`.
    fn theta(&self, w: i64) -> Complex64 {
        let om = w as f64 / (self.spec.l * self.spec.l);
        if w == 0 {
            return Complex64::new(self.t, 0.0);
        }
        let z = Complex64::new(0.0, 2.0 * PI * om);
        ((z * self.t).exp() - 1.0) / z
    }

    /// `J^n_{t,k}` for `n ∈ {0, 1}`.
    pub fn amplitude(&self, n: usize, k: &[i64], field: &GaussianField) -> Result<Complex64> {
        if field.spec != self.spec {
            return Err(Error::Validation("field and context use different lattices".into()));
        }
        let kv = ivec(k)?;
        let Some(ik) = self.index.get(&kv) else {
            return Ok(Complex64::new(0.0, 0.0));
        };
        match n {
            0 => Ok(self.psi[ik] * field.values[ik]),
            1 => Ok(self.order_one(&kv, field)),
            _ => Err(Error::Unsupported(format!("amplitudes of order {n} are not implemented"))),
        }
    }

    fn order_one(&self, k: &IVec, field: &GaussianField) -> Complex64 {
        let d = self.spec.d;
        let g = &field.values;
        let mut s = Complex64::new(0.0, 0.0);
        for (i1, k1) in self.modes.iter().enumerate() {
            let p1 = self.psi[i1];
            if p1 == 0.0 {
                continue;
            }
            for (i3, k3) in self.modes.iter().enumerate() {
                let mut k2 = [0i64; 4];
                let mut w = 0;
                for j in 0..d {
                    k2[j] = k1[j] + k3[j] - k[j];
                    w += (k[j] - k1[j]) * (k[j] - k3[j]);
                }
                let Some(i2) = self.index.get(&k2) else { continue };
                // Wick-ordered g1 ḡ2 g3: remove self-pairings of the conjugated mode.
                let mut wick = g[i1] * g[i2].conj() * g[i3];
                if i2 == i1 && i2 == i3 {
                    wick -= 2.0 * g[i1];
                } else if i2 == i1 {
                    wick -= g[i3];
                } else if i2 == i3 {
                    wick -= g[i1];
                }
                s += self.theta(w) * (p1 * self.psi[i2] * self.psi[i3]) * wick;
            }
        }
        let pref = Complex64::new(0.0, 1.0) * self.lambda / self.spec.l.powi(d as i32);
        pref * s
    }
}

/// `J^n_{t,k}` for one field sample; `n ∈ {0, 1}`.
#[allow(clippy::too_many_arguments)]
pub fn dyson_amplitude(
    n: usize,
    t: f64,
    k: &[i64],
    field: &GaussianField,
    spec: &LatticeSpec,
    alpha: f64,
    profile: &InitialProfile,
) -> Result<Complex64> {
    DysonContext::new(spec, t, alpha, profile)?.amplitude(n, k, field)
}

/// Estimate of `E[J^n_{t,k} conj(J^{n'}_{t,k'})]` against its diagrammatic target.
#[derive(Clone, Debug, Serialize)]
pub struct WickReport {
    pub n: usize,
    pub n_prime: usize,
    pub k: Vec<i64>,
    pub k_prime: Vec<i64>,
    pub samples: usize,
    pub estimate: [f64; 2],
    pub stderr: f64,
    pub target: [f64; 2],
    pub z: f64,
}

/// Sum of finite-lattice spectra over all couples of order `n`.
pub fn diagrammatic_target(n: usize, t: f64, k: &[i64], spec: &LatticeSpec, alpha: f64, profile: &InitialProfile) -> Result<Complex64> {
    let mut s = Complex64::new(0.0, 0.0);
    for c in enumerate_couples(n)? {
        s += finite_l_spectrum(&c, t, k, spec, alpha, profile)?;
    }
    Ok(s)
}

/// Sample mean of `J^n_{t,k} conj(J^{n'}_{t,k'})` over `nsamples` fields (sample `i`
/// uses stream `i` of `seed`), compared with `Σ_{q ∈ K_n}` finite-L spectra on the
/// diagonal and with 0 off it.
#[allow(clippy::too_many_arguments)]
pub fn wick_crosscheck(
    n: usize,
    n_prime: usize,
    t: f64,
    k: &[i64],
    k_prime: &[i64],
    spec: &LatticeSpec,
    alpha: f64,
    profile: &InitialProfile,
    nsamples: usize,
    seed: u64,
) -> Result<WickReport> {
    if nsamples < 2 {
        return Err(Error::Validation("need at least two samples".into()));
    }
    let ctx = DysonContext::new(spec, t, alpha, profile)?;
    let xs: Vec<Complex64> = (0..nsamples as u64)
        .into_par_iter()
        .map(|i| {
            let f = sample_field(spec, seed, i);
            Ok(ctx.amplitude(n, k, &f)? * ctx.amplitude(n_prime, k_prime, &f)?.conj())
        })
        .collect::<Result<_>>()?;
    let mean = xs.iter().sum::<Complex64>() / nsamples as f64;
    let var = xs.iter().map(|x| (x - mean).norm_sqr()).sum::<f64>() / (nsamples - 1) as f64;
    let stderr = (var / nsamples as f64).sqrt();
    let target = if n == n_prime && k == k_prime {
        diagrammatic_target(n, t, k, spec, alpha, profile)?
    } else {
        Complex64::new(0.0, 0.0)
    };
    let z = if stderr > 0.0 { (mean - target).norm() / stderr } else { f64::INFINITY };
    Ok(WickReport {
        n,
        n_prime,
        k: k.to_vec(),
        k_prime: k_prime.to_vec(),
        samples: nsamples,
        estimate: [mean.re, mean.im],
        stderr,
        target: [target.re, target.im],
        z,
    })
}
