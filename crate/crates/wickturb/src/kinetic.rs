//! Solvers for the wave kinetic equation `(∂_t + 1_{α=β} k·∇_x) W = 2 ∫ δ(Ω) W1 W2 W3`
//! and its phase-space refinement, where each `W_j` becomes `E_{k_j, ζ_j}` and the
//! product is convolved over `ζ1 − ζ2 + ζ3 = ζ`.
//!
//! States live on a wavenumber grid (Cartesian cube or radial line), optionally times a
//! position grid and a periodic ζ-grid. All grids are three-dimensional.

use crate::error::{Error, Result};
use crate::spectra::{InitialProfile, Regime, ResonantRule};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

const D: usize = 3;

/// Wavenumber grid. Reads outside the grid return 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum KGrid {
    /// `m` points per axis on `[−kmax, kmax]³`.
    Cartesian { kmax: f64, m: usize },
    /// `n` points on `[0, kmax]`, for isotropic data; node `i` sits at `(r_i, 0, 0)`.
    Radial { kmax: f64, n: usize },
}

/// Up to eight (index, weight) pairs of a multilinear stencil.
#[derive(Clone, Copy, Debug, Default)]
struct Stencil {
    idx: [usize; 8],
    w: [f64; 8],
    len: usize,
}

impl KGrid {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            KGrid::Cartesian { kmax, m } => kmax > 0.0 && m >= 2,
            KGrid::Radial { kmax, n } => kmax > 0.0 && n >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid k-grid {self:?}")))
        }
    }
    pub fn len(&self) -> usize {
        match *self {
            KGrid::Cartesian { m, .. } => m * m * m,
            KGrid::Radial { n, .. } => n,
        }
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn kmax(&self) -> f64 {
        match *self {
            KGrid::Cartesian { kmax, .. } | KGrid::Radial { kmax, .. } => kmax,
        }
    }
    fn step(&self) -> f64 {
        match *self {
            KGrid::Cartesian { kmax, m } => 2.0 * kmax / (m - 1) as f64,
            KGrid::Radial { kmax, n } => kmax / (n - 1) as f64,
        }
    }
    pub fn node(&self, i: usize) -> [f64; 3] {
        let h = self.step();
        match *self {
            KGrid::Cartesian { kmax, m } => [
                -kmax + (i % m) as f64 * h,
                -kmax + ((i / m) % m) as f64 * h,
                -kmax + (i / (m * m)) as f64 * h,
            ],
            KGrid::Radial { .. } => [i as f64 * h, 0.0, 0.0],
        }
    }
    pub fn nodes(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }
    /// Radius of a ball containing the grid.
    pub fn support_radius(&self) -> f64 {
        match *self {
            KGrid::Cartesian { kmax, .. } => kmax * (D as f64).sqrt(),
            KGrid::Radial { kmax, .. } => kmax,
        }
    }
    /// Volume weight of each node for `∫ dk` (trapezoid; radial includes `4πr²`).
    pub fn volume_weights(&self) -> Vec<f64> {
        let h = self.step();
        match *self {
            KGrid::Cartesian { m, .. } => {
                let e = |i: usize| if i == 0 || i == m - 1 { 0.5 } else { 1.0 };
                (0..self.len()).map(|i| h.powi(3) * e(i % m) * e((i / m) % m) * e(i / (m * m))).collect()
            }
            KGrid::Radial { n, .. } => (0..n)
                .map(|i| {
                    let r = i as f64 * h;
                    let e = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                    4.0 * std::f64::consts::PI * r * r * h * e
                })
                .collect(),
        }
    }
    #[inline]
    fn stencil(&self, k: &[f64]) -> Stencil {
        let mut s = Stencil::default();
        let h = self.step();
        match *self {
            KGrid::Cartesian { kmax, m } => {
                let mut base = [0usize; 3];
                let mut f = [0.0; 3];
                for j in 0..D {
                    let x = (k[j] + kmax) / h;
                    if !(x >= 0.0 && x <= (m - 1) as f64) {
                        return s;
                    }
                    let i = (x.floor() as usize).min(m - 2);
                    base[j] = i;
                    f[j] = x - i as f64;
                }
                for c in 0..8 {
                    let mut w = 1.0;
                    let mut idx = 0;
                    let mut stride = 1;
                    for j in 0..D {
                        let bit = (c >> j) & 1;
                        w *= if bit == 1 { f[j] } else { 1.0 - f[j] };
                        idx += (base[j] + bit) * stride;
                        stride *= m;
                    }
                    if w != 0.0 {
                        s.idx[s.len] = idx;
                        s.w[s.len] = w;
                        s.len += 1;
                    }
                }
            }
            KGrid::Radial { kmax, n } => {
                let r = k.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r > kmax {
                    return s;
                }
                let x = r / h;
                let i = (x.floor() as usize).min(n - 2);
                let f = x - i as f64;
                s.idx[0] = i;
                s.w[0] = 1.0 - f;
                s.idx[1] = i + 1;
                s.w[1] = f;
                s.len = 2;
            }
        }
        s
    }
    /// Multilinear interpolation of `values` at `k`; 0 outside the grid.
    pub fn interpolate(&self, values: &[f64], k: &[f64]) -> f64 {
        let s = self.stencil(k);
        (0..s.len).map(|i| s.w[i] * values[s.idx[i]]).sum()
    }
}

/// Uniform position grid, `points` per axis on `[−extent, extent]³`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct XGrid {
    pub extent: f64,
    pub points: usize,
}

impl XGrid {
    pub fn len(&self) -> usize {
        self.points.pow(D as u32)
    }
    pub fn is_empty(&self) -> bool {
        self.points == 0
    }
    fn step(&self) -> f64 {
        2.0 * self.extent / (self.points - 1) as f64
    }
    pub fn node(&self, i: usize) -> [f64; 3] {
        let (p, h) = (self.points, self.step());
        [
            -self.extent + (i % p) as f64 * h,
            -self.extent + ((i / p) % p) as f64 * h,
            -self.extent + (i / (p * p)) as f64 * h,
        ]
    }
    /// Multilinear stencil with linear extrapolation beyond the boundary cells, so
    /// affine data is reproduced everywhere.
    fn stencil(&self, x: &[f64]) -> Stencil {
        let (p, h) = (self.points, self.step());
        let mut base = [0usize; 3];
        let mut f = [0.0; 3];
        for j in 0..D {
            let u = (x[j] + self.extent) / h;
            let i = (u.floor().max(0.0) as usize).min(p - 2);
            base[j] = i;
            f[j] = u - i as f64;
        }
        let mut s = Stencil::default();
        for c in 0..8 {
            let mut w = 1.0;
            let mut idx = 0;
            let mut stride = 1;
            for j in 0..D {
                let bit = (c >> j) & 1;
                w *= if bit == 1 { f[j] } else { 1.0 - f[j] };
                idx += (base[j] + bit) * stride;
                stride *= p;
            }
            s.idx[c] = idx;
            s.w[c] = w;
        }
        s.len = 8;
        s
    }
}

/// Periodic ζ-grid, `points` per axis on `[−extent, extent)³`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZGrid {
    pub extent: f64,
    pub points: usize,
}

impl ZGrid {
    pub fn len(&self) -> usize {
        self.points.pow(D as u32)
    }
    pub fn is_empty(&self) -> bool {
        self.points == 0
    }
    pub fn step(&self) -> f64 {
        2.0 * self.extent / self.points as f64
    }
    pub fn node(&self, i: usize) -> [f64; 3] {
        let (p, h) = (self.points, self.step());
        [
            -self.extent + (i % p) as f64 * h,
            -self.extent + ((i / p) % p) as f64 * h,
            -self.extent + (i / (p * p)) as f64 * h,
        ]
    }
}

/// Grid description shared by states and trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub k: KGrid,
    pub x: Option<XGrid>,
    pub zeta: Option<ZGrid>,
}

impl Layout {
    pub fn nx(&self) -> usize {
        self.x.map_or(1, |g| g.len())
    }
    pub fn nk(&self) -> usize {
        self.k.len()
    }
    pub fn nz(&self) -> usize {
        self.zeta.map_or(1, |g| g.len())
    }
    pub fn len(&self) -> usize {
        self.nx() * self.nk() * self.nz()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    #[inline]
    pub fn index(&self, ix: usize, ik: usize, iz: usize) -> usize {
        (ix * self.nk() + ik) * self.nz() + iz
    }
}

/// `W` (no ζ-grid) or `E` (with ζ-grid) on a layout, at time `t`.
/// Data is stored as `[x][k][ζ]`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KineticState {
    pub layout: Layout,
    pub data: Vec<f64>,
    pub t: f64,
}

impl KineticState {
    pub fn zeros(layout: Layout) -> Self {
        KineticState { layout, data: vec![0.0; layout.len()], t: 0.0 }
    }

    pub fn from_fn<F: Fn(&[f64; 3], &[f64; 3], &[f64; 3]) -> f64>(layout: Layout, f: F) -> Self {
        let mut s = Self::zeros(layout);
        let zero = [0.0; 3];
        for ix in 0..layout.nx() {
            let x = layout.x.map_or(zero, |g| g.node(ix));
            for ik in 0..layout.nk() {
                let k = layout.k.node(ik);
                for iz in 0..layout.nz() {
                    let z = layout.zeta.map_or(zero, |g| g.node(iz));
                    s.data[layout.index(ix, ik, iz)] = f(&x, &k, &z);
                }
            }
        }
        s
    }

    /// `W_0 = |φ(x,k)|²` (or `|ψ(k)|²` without a position grid).
    pub fn initial_w(k: KGrid, x: Option<XGrid>, profile: &InitialProfile) -> Result<Self> {
        k.validate()?;
        check_profile(profile)?;
        Ok(Self::from_fn(Layout { k, x, zeta: None }, |x, k, _| profile.phi2(x, k)))
    }

    /// `E_0 = Wigner transform of φ(·,k)` at `(x, ζ)`.
    pub fn initial_e(k: KGrid, x: Option<XGrid>, zeta: ZGrid, profile: &InitialProfile) -> Result<Self> {
        k.validate()?;
        check_profile(profile)?;
        if profile.a <= 0.0 {
            return Err(Error::Validation("Wigner data needs a > 0".into()));
        }
        Ok(Self::from_fn(Layout { k, x, zeta: Some(zeta) }, |x, k, z| profile.wigner(k, x, z).unwrap()))
    }

    pub fn is_phase_space(&self) -> bool {
        self.layout.zeta.is_some()
    }

    /// Values at one position as a `k`-array (W states only).
    pub fn slice_x(&self, ix: usize) -> &[f64] {
        let nk = self.layout.nk() * self.layout.nz();
        &self.data[ix * nk..(ix + 1) * nk]
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Total mass `∫ W dk` at every position (W states only).
    pub fn mass(&self) -> Vec<f64> {
        let w = self.layout.k.volume_weights();
        (0..self.layout.nx()).map(|ix| self.slice_x(ix).iter().zip(&w).map(|(a, b)| a * b).sum()).collect()
    }
}

fn check_profile(p: &InitialProfile) -> Result<()> {
    if p.dim() != D {
        return Err(Error::DimensionMismatch { expected: D, found: p.dim() });
    }
    Ok(())
}

/// `∫ E dζ` by the (periodic) trapezoid rule.
pub fn marginalize_zeta(e: &KineticState) -> Result<KineticState> {
    let zg = e.layout.zeta.ok_or_else(|| Error::Validation("marginalization needs a ζ-grid".into()))?;
    let vol = zg.step().powi(D as i32);
    let nz = zg.len();
    let layout = Layout { zeta: None, ..e.layout };
    let data = e.data.chunks(nz).map(|c| vol * c.iter().sum::<f64>()).collect();
    Ok(KineticState { layout, data, t: e.t })
}

/// Semi-Lagrangian transport `W(x, k) ← W(x − dt·k, k)` on the position grid.
pub fn transport_shift(state: &KineticState, dt: f64) -> Result<KineticState> {
    let l = state.layout;
    let xg = l.x.ok_or_else(|| Error::Validation("transport needs a position grid".into()))?;
    if matches!(l.k, KGrid::Radial { .. }) {
        return Err(Error::Validation("transport needs a Cartesian k-grid".into()));
    }
    let (nk, nz) = (l.nk(), l.nz());
    let mut out = vec![0.0; state.data.len()];
    out.par_chunks_mut(nk * nz).enumerate().for_each(|(ix, chunk)| {
        let x = xg.node(ix);
        for ik in 0..nk {
            let k = l.k.node(ik);
            let src = [x[0] - dt * k[0], x[1] - dt * k[1], x[2] - dt * k[2]];
            let s = xg.stencil(&src);
            for iz in 0..nz {
                let mut v = 0.0;
                for c in 0..s.len {
                    v += s.w[c] * state.data[l.index(s.idx[c], ik, iz)];
                }
                chunk[ik * nz + iz] = v;
            }
        }
    });
    Ok(KineticState { layout: l, data: out, t: state.t })
}

/// `C(a, b, c)(k) = 2 ∫ δ(Ω) a(k1) b(k2) c(k3)` for W-layout arrays, evaluated at every
/// grid wavenumber and position.
pub fn collision_trilinear(layout: &Layout, a: &[f64], b: &[f64], c: &[f64], rule: &ResonantRule) -> Result<Vec<f64>> {
    if layout.zeta.is_some() {
        return Err(Error::Validation("trilinear collision takes W-layout arrays".into()));
    }
    if rule.d != D {
        return Err(Error::DimensionMismatch { expected: D, found: rule.d });
    }
    let (nx, nk) = (layout.nx(), layout.nk());
    let g = layout.k;
    let supp = g.support_radius();
    let out: Vec<f64> = (0..nx * nk)
        .into_par_iter()
        .map(|i| {
            let (ix, ik) = (i / nk, i % nk);
            let off = ix * nk;
            let (a, b, c) = (&a[off..off + nk], &b[off..off + nk], &c[off..off + nk]);
            let k = g.node(ik);
            let kn = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
            2.0 * rule.integrate(&k, supp + kn, |k1, k2, k3| {
                let v1 = g.interpolate(a, k1);
                if v1 == 0.0 {
                    return 0.0;
                }
                let v3 = g.interpolate(c, k3);
                if v3 == 0.0 {
                    return 0.0;
                }
                v1 * g.interpolate(b, k2) * v3
            })
        })
        .collect();
    Ok(out)
}

/// WK collision rate `2 ∫ δ(Ω) W1 W2 W3`.
pub fn collision_wk(state: &KineticState, rule: &ResonantRule) -> Result<Vec<f64>> {
    if state.is_phase_space() {
        return Err(Error::Validation("collision_wk takes a W state".into()));
    }
    collision_trilinear(&state.layout, &state.data, &state.data, &state.data, rule)
}

struct Fft3 {
    p: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft3 {
    fn new(p: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft3 { p, fwd: planner.plan_fft_forward(p), inv: planner.plan_fft_inverse(p) }
    }
    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        let p = self.p;
        let f = if inverse { &self.inv } else { &self.fwd };
        let mut line = vec![Complex64::new(0.0, 0.0); p];
        for axis in 0..D {
            let stride = p.pow(axis as u32);
            for base in 0..buf.len() {
                if (base / stride) % p != 0 {
                    continue;
                }
                for (j, l) in line.iter_mut().enumerate() {
                    *l = buf[base + j * stride];
                }
                f.process(&mut line);
                for (j, l) in line.iter().enumerate() {
                    buf[base + j * stride] = *l;
                }
            }
        }
    }
}

/// WK-2 collision rate: per `(k, ζ)`, twice the resonant integral of the ζ-convolution
/// `∫_{ζ1−ζ2+ζ3=ζ} E_{k1,ζ1} E_{k2,ζ2} E_{k3,ζ3}`, computed as a product in the
/// discrete Fourier dual of the periodic ζ-grid.
pub fn collision_wk2(state: &KineticState, rule: &ResonantRule) -> Result<Vec<f64>> {
    let l = state.layout;
    let zg = l.zeta.ok_or_else(|| Error::Validation("collision_wk2 takes an E state".into()))?;
    if rule.d != D {
        return Err(Error::DimensionMismatch { expected: D, found: rule.d });
    }
    let (nk, nz) = (l.nk(), l.nz());
    let fft = Fft3::new(zg.points);
    let hat: Vec<Complex64> = {
        let mut h: Vec<Complex64> = state.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        h.par_chunks_mut(nz).for_each(|c| fft.run(c, false));
        h
    };
    let vol2 = zg.step().powi(2 * D as i32);
    let g = l.k;
    let supp = g.support_radius();
    let mut out = vec![0.0; state.data.len()];
    out.par_chunks_mut(nz).enumerate().for_each(|(i, dst)| {
        let (ix, ik) = (i / nk, i % nk);
        let k = g.node(ik);
        let kn = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
        let scale = supp + kn;
        let jac = scale.powi(2 * D as i32 - 2);
        let block = |s: &Stencil, buf: &mut Vec<Complex64>| {
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for c in 0..s.len {
                let src = &hat[(ix * nk + s.idx[c]) * nz..][..nz];
                for (b, v) in buf.iter_mut().zip(src) {
                    *b += s.w[c] * v;
                }
            }
        };
        let mut acc = vec![Complex64::new(0.0, 0.0); nz];
        let (mut h1, mut h2, mut h3) = (vec![Complex64::default(); nz], vec![Complex64::default(); nz], vec![Complex64::default(); nz]);
        for (a, b, w) in &rule.nodes {
            let mut k1 = [0.0; 3];
            let mut k2 = [0.0; 3];
            let mut k3 = [0.0; 3];
            for j in 0..D {
                k1[j] = k[j] + scale * a[j];
                k3[j] = k[j] + scale * b[j];
                k2[j] = k[j] + scale * (a[j] + b[j]);
            }
            let s1 = g.stencil(&k1);
            if s1.len == 0 {
                continue;
            }
            let s3 = g.stencil(&k3);
            if s3.len == 0 {
                continue;
            }
            let s2 = g.stencil(&k2);
            if s2.len == 0 {
                continue;
            }
            block(&s1, &mut h1);
            block(&s2, &mut h2);
            block(&s3, &mut h3);
            for y in 0..nz {
                acc[y] += *w * h1[y] * h2[y].conj() * h3[y];
            }
        }
        fft.run(&mut acc, true);
        let norm = 2.0 * jac * vol2 / nz as f64;
        for (d, v) in dst.iter_mut().zip(&acc) {
            *d = norm * v.re;
        }
    });
    Ok(out)
}

/// Collision rate of either state variant.
pub fn collision(state: &KineticState, rule: &ResonantRule) -> Result<Vec<f64>> {
    if state.is_phase_space() {
        collision_wk2(state, rule)
    } else {
        collision_wk(state, rule)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    Rk4,
    Picard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub t_end: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub regime: Regime,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// RK4 aborts when the sup-norm exceeds this multiple of the initial one.
    pub growth_guard: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            t_end: 0.25,
            dt: 0.05,
            scheme: Scheme::Rk4,
            regime: Regime::SemiHomogeneous,
            picard_tol: 1e-8,
            picard_max_iter: 20,
            growth_guard: 1e6,
        }
    }
}

/// States at uniformly spaced times.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub layout: Layout,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> KineticState {
        KineticState { layout: self.layout, data: self.states.last().unwrap().clone(), t: *self.times.last().unwrap() }
    }
    pub fn state(&self, i: usize) -> KineticState {
        KineticState { layout: self.layout, data: self.states[i].clone(), t: self.times[i] }
    }

    /// Write `<stem>.bin` (little-endian f64, states back to back) and `<stem>.json`
    /// (layout, times, config hash).
    pub fn save(&self, stem: &Path, config_hash: &str) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.states.len() * self.layout.len() * 8);
        for s in &self.states {
            for v in s {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(stem.with_extension("bin"), bytes)?;
        let side = serde_json::json!({
            "layout": self.layout,
            "times": self.times,
            "values_per_state": self.layout.len(),
            "dtype": "f64-le",
            "config_hash": config_hash,
        });
        std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }
}

fn transport_on(state: &KineticState, regime: Regime) -> bool {
    regime == Regime::Transport && state.layout.x.is_some()
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(p, q)| p + a * q).collect()
}

/// Integrate from `state0` to `opts.t_end`.
///
/// RK4 uses Strang splitting: half a transport step, a collision step, half a
/// transport step. Picard iterates the Duhamel form
/// `W(t) = S(t) W0 + 2 ∫_0^t S(t − s) C[W(s)] ds` (S the transport flow) on the time grid
/// with the trapezoid rule.
pub fn solve(state0: &KineticState, opts: &SolveOptions, rule: &ResonantRule) -> Result<Trajectory> {
    if !(opts.dt > 0.0) || !(opts.t_end >= 0.0) {
        return Err(Error::Validation(format!("need dt > 0 and T ≥ 0, got dt={} T={}", opts.dt, opts.t_end)));
    }
    let steps = (opts.t_end / opts.dt).round().max(0.0) as usize;
    if ((steps as f64) * opts.dt - opts.t_end).abs() > 1e-9 * opts.t_end.max(1.0) {
        return Err(Error::Validation("T must be a multiple of dt".into()));
    }
    let dt = opts.dt;
    let times: Vec<f64> = (0..=steps).map(|i| state0.t + i as f64 * dt).collect();
    let tr = transport_on(state0, opts.regime);
    let states = match opts.scheme {
        Scheme::Rk4 => {
            let limit = opts.growth_guard * state0.sup_norm().max(1e-300);
            let mut cur = state0.clone();
            let mut out = vec![cur.data.clone()];
            for _ in 0..steps {
                if tr {
                    cur = transport_shift(&cur, dt / 2.0)?;
                }
                let f = |d: &[f64]| collision(&KineticState { layout: cur.layout, data: d.to_vec(), t: 0.0 }, rule);
                let k1 = f(&cur.data)?;
                let k2 = f(&axpy(&cur.data, dt / 2.0, &k1))?;
                let k3 = f(&axpy(&cur.data, dt / 2.0, &k2))?;
                let k4 = f(&axpy(&cur.data, dt, &k3))?;
                for i in 0..cur.data.len() {
                    cur.data[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                if tr {
                    cur = transport_shift(&cur, dt / 2.0)?;
                }
                cur.t += dt;
                if cur.data.iter().any(|v| !v.is_finite()) || cur.sup_norm() > limit {
                    return Err(Error::Instability(format!("sup-norm {:.3e} at t={}", cur.sup_norm(), cur.t)));
                }
                out.push(cur.data.clone());
            }
            out
        }
        Scheme::Picard => picard(state0, steps, dt, tr, opts, rule)?,
    };
    Ok(Trajectory { layout: state0.layout, times, states })
}

fn picard(
    state0: &KineticState,
    steps: usize,
    dt: f64,
    tr: bool,
    opts: &SolveOptions,
    rule: &ResonantRule,
) -> Result<Vec<Vec<f64>>> {
    let l = state0.layout;
    let shift = |d: &[f64], s: f64| -> Result<Vec<f64>> {
        if tr && s != 0.0 {
            Ok(transport_shift(&KineticState { layout: l, data: d.to_vec(), t: 0.0 }, s)?.data)
        } else {
            Ok(d.to_vec())
        }
    };
    let free: Vec<Vec<f64>> = (0..=steps).map(|i| shift(&state0.data, i as f64 * dt)).collect::<Result<_>>()?;
    let mut w = free.clone();
    for _ in 0..opts.picard_max_iter {
        let rates: Vec<Vec<f64>> =
            w.iter().map(|d| collision(&KineticState { layout: l, data: d.clone(), t: 0.0 }, rule)).collect::<Result<_>>()?;
        let mut next = free.clone();
        for i in 1..=steps {
            for j in 0..=i {
                let tw = if j == 0 || j == i { 0.5 } else { 1.0 };
                let moved = shift(&rates[j], (i - j) as f64 * dt)?;
                for (n, r) in next[i].iter_mut().zip(&moved) {
                    *n += dt * tw * r;
                }
            }
        }
        let diff = next.iter().zip(&w).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs())).fold(0.0, f64::max);
        w = next;
        if diff <= opts.picard_tol {
            return Ok(w);
        }
    }
    Err(Error::NonConvergence(format!("Picard did not reach {} in {} iterations", opts.picard_tol, opts.picard_max_iter)))
}

/// Graded Duhamel expansion of the homogeneous equation: `W(t) = Σ_m t^m A_m` with
/// `A_0 = W_0` and `A_m = (1/m) Σ_{m1+m2+m3=m−1} C(A_{m1}, A_{m2}, A_{m3})`. The order-m
/// term of the m-th Picard iterate is `t^m A_m`.
pub fn picard_orders(state0: &KineticState, max_order: usize, rule: &ResonantRule) -> Result<Vec<Vec<f64>>> {
    if state0.is_phase_space() {
        return Err(Error::Validation("graded expansion takes a W state".into()));
    }
    let l = state0.layout;
    let mut a = vec![state0.data.clone()];
    for m in 1..=max_order {
        let mut acc = vec![0.0; l.len()];
        for m1 in 0..m {
            for m2 in 0..m - m1 {
                let m3 = m - 1 - m1 - m2;
                let c = collision_trilinear(&l, &a[m1], &a[m2], &a[m3], rule)?;
                for (x, y) in acc.iter_mut().zip(&c) {
                    *x += y / m as f64;
                }
            }
        }
        a.push(acc);
    }
    Ok(a)
}

/// Largest relative spread `(max_x − min_x) / max` of a W state over the position grid.
pub fn spatial_variation(state: &KineticState) -> f64 {
    let l = state.layout;
    let per = l.nk() * l.nz();
    let mut worst: f64 = 0.0;
    let scale = state.sup_norm().max(1e-300);
    for j in 0..per {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for ix in 0..l.nx() {
            let v = state.data[ix * per + j];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        worst = worst.max((hi - lo) / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{gaussian_resonant_integral, resonant_integral_mc, QuadratureSpec};
    use std::f64::consts::PI;

    fn rule(r: usize, a: usize) -> ResonantRule {
        ResonantRule::new(3, r, a).unwrap()
    }

    #[test]
    fn zero_and_positive_rates() {
        let g = KGrid::Cartesian { kmax: 1.0, m: 5 };
        let z = KineticState::zeros(Layout { k: g, x: None, zeta: None });
        assert!(collision_wk(&z, &rule(4, 2)).unwrap().iter().all(|&v| v == 0.0));
        let p = InitialProfile::gaussian(3, 1.0, 2.0);
        let w = KineticState::initial_w(g, None, &p).unwrap();
        assert!(collision_wk(&w, &rule(4, 2)).unwrap().iter().all(|&v| v >= 0.0));
        let zg = ZGrid { extent: 1.0, points: 4 };
        let e = KineticState::zeros(Layout { k: g, x: None, zeta: Some(zg) });
        assert!(collision_wk2(&e, &rule(3, 2)).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn radial_rate_matches_oracles() {
        let c = 2.0 * PI;
        let g = KGrid::Radial { kmax: 1.6, n: 801 };
        let st = KineticState::from_fn(Layout { k: g, x: None, zeta: None }, |_, k, _| (-c * (k[0] * k[0])).exp());
        let rate = collision_wk(&st, &rule(20, 8)).unwrap();
        let exact = 2.0 * gaussian_resonant_integral(c, &[0.0; 3]);
        assert!((rate[0] - exact).abs() < 1e-4 * exact, "{} vs {exact}", rate[0]);
        let f = |a: &[f64], b: &[f64], d: &[f64]| {
            let s: f64 = a.iter().chain(b).chain(d).map(|v| v * v).sum();
            (-c * s).exp()
        };
        let (mc, se) = resonant_integral_mc(f, &[0.0; 3], 1.6, 100_000, 11).unwrap();
        assert!((rate[0] - 2.0 * mc).abs() < 3.0 * 2.0 * se + 1e-4 * exact);
        let q = QuadratureSpec { radial: 20, angular: 8, kmax: 1.6, ..Default::default() };
        let _ = q;
    }

    #[test]
    fn wk2_marginalizes_to_wk() {
        let g = KGrid::Cartesian { kmax: 1.0, m: 5 };
        let zg = ZGrid { extent: 1.5, points: 6 };
        let p = InitialProfile::gaussian(3, PI, 2.0);
        let e = KineticState::initial_e(g, None, zg, &p).unwrap();
        let w = marginalize_zeta(&e).unwrap();
        let r = rule(4, 2);
        let rate2 = collision_wk2(&e, &r).unwrap();
        let marg = marginalize_zeta(&KineticState { data: rate2.clone(), ..e.clone() }).unwrap();
        let rate = collision_wk(&w, &r).unwrap();
        for (a, b) in marg.data.iter().zip(&rate) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-12), "{a} vs {b}");
        }
        assert!(rate2.iter().all(|v| v.is_finite()));
        // E = W ⊗ ρ with ∫ρ = 1 marginalizes to W.
        let rho = |z: &[f64; 3]| (-(z[0] * z[0] + z[1] * z[1] + z[2] * z[2])).exp();
        let mass: f64 = (0..zg.len()).map(|i| rho(&zg.node(i))).sum::<f64>() * zg.step().powi(3);
        let sep = KineticState::from_fn(e.layout, |_, k, z| (-k[0] * k[0]).exp() * rho(z) / mass);
        let m = marginalize_zeta(&sep).unwrap();
        for (i, v) in m.data.iter().enumerate() {
            let k = g.node(i);
            assert!((v - (-k[0] * k[0]).exp()).abs() < 1e-13);
        }
    }

    #[test]
    fn transport_examples() {
        let g = KGrid::Cartesian { kmax: 1.0, m: 3 };
        let xg = XGrid { extent: 2.0, points: 9 };
        let l = Layout { k: g, x: Some(xg), zeta: None };
        // Affine data is transported exactly; k = 0 slice is unchanged.
        let affine = KineticState::from_fn(l, |x, k, _| 1.0 + 0.3 * x[0] - 0.2 * x[1] + 0.1 * x[2] + k[0]);
        let s = transport_shift(&affine, 0.37).unwrap();
        let want = KineticState::from_fn(l, |x, k, _| {
            let y = [x[0] - 0.37 * k[0], x[1] - 0.37 * k[1], x[2] - 0.37 * k[2]];
            1.0 + 0.3 * y[0] - 0.2 * y[1] + 0.1 * y[2] + k[0]
        });
        for (a, b) in s.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-12);
        }
        let constant = KineticState::from_fn(l, |_, _, _| 2.5);
        assert!(transport_shift(&constant, 0.3).unwrap().data.iter().all(|v| (v - 2.5).abs() < 1e-14));
        // Plane wave shifted by whole cells: exact at interior nodes.
        let wave = KineticState::from_fn(l, |x, _, _| (0.7 * x[0]).sin());
        let s = transport_shift(&wave, 0.5).unwrap();
        let h = 0.5;
        for ix in 0..xg.len() {
            let x = xg.node(ix);
            for ik in 0..g.len() {
                let k = g.node(ik);
                if x[0] - 0.5 * k[0] < -2.0 || x[0] - 0.5 * k[0] > 2.0 {
                    continue;
                }
                let v = s.data[l.index(ix, ik, 0)];
                assert!((v - (0.7 * (x[0] - 0.5 * k[0])).sin()).abs() < 1e-12, "{h}");
            }
        }
        // Reversal error is O(h²).
        let rev = |points: usize| {
            let l = Layout { k: g, x: Some(XGrid { extent: 2.0, points }), zeta: None };
            let smooth = KineticState::from_fn(l, |x, _, _| (-(x[0] * x[0] + x[1] * x[1]) / 4.0).exp());
            let back = transport_shift(&transport_shift(&smooth, 0.1).unwrap(), -0.1).unwrap();
            back.data.iter().zip(&smooth.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (rev(17), rev(33));
        assert!(e2 < e1 / 3.0 && e2 < 5e-3, "{e1} {e2}");
    }

    #[test]
    fn first_picard_iterate_and_solver_agreement() {
        let g = KGrid::Radial { kmax: 1.6, n: 161 };
        let p = InitialProfile::gaussian(3, 1.0, PI);
        let w0 = KineticState::initial_w(g, None, &p).unwrap();
        let r = rule(8, 4);
        let a = picard_orders(&w0, 1, &r).unwrap();
        let rate = collision_wk(&w0, &r).unwrap();
        for (x, y) in a[1].iter().zip(&rate) {
            assert!((x - y).abs() <= 1e-14 * y.abs());
        }
        let base = SolveOptions { t_end: 0.25, dt: 0.025, ..Default::default() };
        let rk = solve(&w0, &base, &r).unwrap().last();
        let pc = solve(&w0, &SolveOptions { scheme: Scheme::Picard, ..base.clone() }, &r).unwrap().last();
        let scale = rk.sup_norm();
        let dev = rk.data.iter().zip(&pc.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        assert!(dev < 1e-3, "{dev}");
        // Mass grows.
        assert!(rk.mass()[0] >= w0.mass()[0]);
        // Zero data stays zero.
        let z = KineticState::zeros(w0.layout);
        assert!(solve(&z, &base, &r).unwrap().last().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn semi_homogeneous_solution_factorizes() {
        let g = KGrid::Cartesian { kmax: 1.0, m: 5 };
        let xg = XGrid { extent: 1.0, points: 3 };
        let p = InitialProfile::gaussian(3, 0.8, 2.0);
        let w = KineticState::initial_w(g, Some(xg), &p).unwrap();
        let r = rule(3, 2);
        let opts = SolveOptions { t_end: 0.2, dt: 0.1, ..Default::default() };
        let inh = solve(&w, &opts, &r).unwrap().last();
        for ix in [0, 13, 26] {
            let x = xg.node(ix);
            let h0 = KineticState::initial_w(g, None, &p.frozen_at(&x)).unwrap();
            let h = solve(&h0, &opts, &r).unwrap().last();
            for (a, b) in inh.slice_x(ix).iter().zip(&h.data) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
            }
        }
        let moving = solve(&w, &SolveOptions { regime: Regime::Transport, ..opts }, &r).unwrap().last();
        assert!(spatial_variation(&moving) > 0.0);
    }

    #[test]
    fn instability_and_validation_errors() {
        let g = KGrid::Radial { kmax: 1.0, n: 11 };
        let w0 = KineticState::from_fn(Layout { k: g, x: None, zeta: None }, |_, _, _| 50.0);
        let opts = SolveOptions { t_end: 1.0, dt: 0.5, growth_guard: 2.0, ..Default::default() };
        assert!(matches!(solve(&w0, &opts, &rule(4, 2)), Err(Error::Instability(_))));
        let bad = SolveOptions { dt: 0.3, ..opts.clone() };
        assert!(matches!(solve(&w0, &bad, &rule(4, 2)), Err(Error::Validation(_))));
        let pic = SolveOptions { scheme: Scheme::Picard, picard_max_iter: 1, growth_guard: 1e9, ..opts };
        assert!(matches!(solve(&w0, &pic, &rule(4, 2)), Err(Error::NonConvergence(_))));
    }
}
