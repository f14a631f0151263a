//! Gauss sums and the oscillatory lattice functional
//! `S_L(Φ) = L^{-2nd} Σ_z ∫ e^{2πi s·ϖ(z)} Φ(s, z) ds` with `ϖ_j(z) = x_j·y_j`,
//! together with its continuum counterpart `S_∞`.
//!
//! Test functions are separable: each time slot carries a temporal profile and a
//! product of one-dimensional spatial profiles for the `x` and `y` blocks, so the
//! functional is a product over slots of one-dimensional `s` integrals.

use crate::error::{Error, Result};
use crate::quad::{composite_gl, whole_line_complex};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

/// `Σ_{n=h}^{h+N} e^{πi(s n² + r n)}`.
pub fn gauss_sum(s: f64, r: f64, h: i64, n: u64) -> Complex64 {
    (0..=n as i64)
        .map(|j| {
            let m = (h + j) as f64;
            Complex64::from_polar(1.0, PI * (s * m * m + r * m))
        })
        .sum()
}

/// Trapezoid approximation of the period mean `½ ∫_0^2 |G_h(s, r, N)|^p ds` on `grid`
/// equispaced nodes. Exact when `grid` exceeds the largest frequency of `|G|^p`.
pub fn gauss_sum_moment(p: u32, n: u64, r: f64, h: i64, grid: usize) -> Result<f64> {
    if p != 4 && p != 6 {
        return Err(Error::Validation(format!("moment order must be 4 or 6, got {p}")));
    }
    if grid == 0 {
        return Err(Error::Validation("empty grid".into()));
    }
    let ds = 2.0 / grid as f64;
    let total: f64 = (0..grid)
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let s = i as f64 * ds;
            // e^{πi s m²} advanced through m² → (m+1)² by the factor e^{πi s (2m+1)}.
            let h0 = h as f64;
            let mut ph = Complex64::from_polar(1.0, PI * (s * h0 * h0 + r * h0));
            let mut step = Complex64::from_polar(1.0, PI * (s * (2.0 * h0 + 1.0) + r));
            let inc = Complex64::from_polar(1.0, 2.0 * PI * s);
            let mut g = Complex64::new(0.0, 0.0);
            for _ in 0..=n {
                g += ph;
                ph *= step;
                step *= inc;
            }
            g.norm_sqr().powi(p as i32 / 2)
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / grid as f64)
}

/// One-dimensional temporal profile `T(s)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TemporalProfile {
    /// `e^{-π s²}`
    Gaussian,
    /// `s² e^{-π s²}`, which vanishes at `s = 0`.
    GaussianS2,
    /// `e^{-1/(1-s²)}` on `|s| < 1`.
    Bump,
    /// `T ≡ c`; the image of a profile under the infinite-scale limit.
    Constant(f64),
}

impl TemporalProfile {
    pub fn value(&self, s: f64) -> f64 {
        match *self {
            TemporalProfile::Gaussian => (-PI * s * s).exp(),
            TemporalProfile::GaussianS2 => s * s * (-PI * s * s).exp(),
            TemporalProfile::Bump => {
                if s.abs() < 1.0 {
                    (-1.0 / (1.0 - s * s)).exp()
                } else {
                    0.0
                }
            }
            TemporalProfile::Constant(c) => c,
        }
    }
    /// Half-width outside which the profile is negligible (or zero).
    fn support(&self) -> Option<f64> {
        match self {
            TemporalProfile::Gaussian | TemporalProfile::GaussianS2 => Some(6.0),
            TemporalProfile::Bump => Some(1.0),
            TemporalProfile::Constant(_) => None,
        }
    }
}

/// One-dimensional spatial profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpatialProfile {
    /// `e^{-π((u-center)/width)²}`
    Gaussian { center: f64, width: f64 },
    /// `e^{-1/(1-v²)}` with `v = (u-center)/width`, zero for `|v| ≥ 1`.
    Bump { center: f64, width: f64 },
}

impl SpatialProfile {
    pub fn unit_gaussian() -> Self {
        SpatialProfile::Gaussian { center: 0.0, width: 1.0 }
    }
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            SpatialProfile::Gaussian { center, width } => {
                let v = (u - center) / width;
                (-PI * v * v).exp()
            }
            SpatialProfile::Bump { center, width } => {
                let v = (u - center) / width;
                if v.abs() < 1.0 {
                    (-1.0 / (1.0 - v * v)).exp()
                } else {
                    0.0
                }
            }
        }
    }
    fn range(&self) -> (f64, f64) {
        match *self {
            SpatialProfile::Gaussian { center, width } => (center - 6.0 * width, center + 6.0 * width),
            SpatialProfile::Bump { center, width } => (center - width, center + width),
        }
    }
}

/// One time slot: `T(s/γ) Π_coords φx_c(x_c) φy_c(y_c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Slot {
    pub temporal: TemporalProfile,
    /// Temporal dilation `γ`: the slot uses `T(s/γ)`.
    pub dilation: f64,
    pub x: Vec<SpatialProfile>,
    pub y: Vec<SpatialProfile>,
}

/// Separable test function on `R^n × (R^{2d})^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableTestFunction {
    pub slots: Vec<Slot>,
}

impl SeparableTestFunction {
    /// `n` identical slots with the given temporal profile and unit Gaussians in space.
    pub fn gaussian(n: usize, d: usize, temporal: TemporalProfile) -> Self {
        let sp = vec![SpatialProfile::unit_gaussian(); d];
        SeparableTestFunction { slots: vec![Slot { temporal, dilation: 1.0, x: sp.clone(), y: sp }; n] }
    }
    pub fn n(&self) -> usize {
        self.slots.len()
    }
    pub fn d(&self) -> usize {
        self.slots.first().map(|s| s.x.len()).unwrap_or(0)
    }
    fn check(&self, n: usize, d: usize) -> Result<()> {
        if self.n() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.n() });
        }
        for s in &self.slots {
            if s.x.len() != d || s.y.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: s.x.len().min(s.y.len()) });
            }
        }
        Ok(())
    }
}

/// Temporal scaling `θ_L`: dilate every temporal profile by `γ = L^α`.
/// `L = ∞` replaces each temporal profile by its value at the dilated origin.
pub fn scale_theta(phi: &SeparableTestFunction, l: f64, alpha: f64) -> SeparableTestFunction {
    let mut out = phi.clone();
    for s in &mut out.slots {
        if l.is_infinite() {
            s.temporal = TemporalProfile::Constant(s.temporal.value(0.0));
            s.dilation = 1.0;
        } else {
            s.dilation *= l.powf(alpha);
        }
    }
    out
}

/// Which scale to evaluate the functional at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scale {
    Finite(f64),
    Infinite,
}

/// Options for the finite-`L` evaluation.
#[derive(Clone, Copy, Debug)]
pub struct OscOptions {
    /// Width of each Gauss-Legendre panel in `s`.
    pub panel_width: f64,
    /// Nodes per panel.
    pub panel_order: usize,
    /// Relative tolerance for the continuum quadrature.
    pub tol: f64,
}

impl Default for OscOptions {
    fn default() -> Self {
        OscOptions { panel_width: 0.02, panel_order: 10, tol: 1e-9 }
    }
}

/// `S_L(Φ)` or `S_∞(Φ)` for a separable test function.
pub fn osc_functional(phi: &SeparableTestFunction, scale: Scale, n: usize, d: usize) -> Result<Complex64> {
    osc_functional_with(phi, scale, n, d, &OscOptions::default())
}

pub fn osc_functional_with(
    phi: &SeparableTestFunction,
    scale: Scale,
    n: usize,
    d: usize,
    opt: &OscOptions,
) -> Result<Complex64> {
    phi.check(n, d)?;
    let mut out = Complex64::new(1.0, 0.0);
    for slot in &phi.slots {
        out *= match scale {
            Scale::Finite(l) => slot_finite(slot, l, opt)?,
            Scale::Infinite => slot_infinite(slot, opt)?,
        };
    }
    Ok(out)
}

/// `H(s) = ∫∫ φx(x) φy(y) e^{2πi s x y} dx dy` for Gaussian factors.
fn pair_integral(px: &SpatialProfile, py: &SpatialProfile, s: f64) -> Result<Complex64> {
    match (*px, *py) {
        (SpatialProfile::Gaussian { center: c1, width: w1 }, SpatialProfile::Gaussian { center: c2, width: w2 }) => {
            // ∫ φy(y) e^{2πi s x y} dy = w2 e^{-π w2² s² x²} e^{2πi c2 s x}; the x integral is Gaussian.
            let a = Complex64::new(PI * (1.0 / (w1 * w1) + w2 * w2 * s * s), 0.0);
            let b = Complex64::new(2.0 * PI * c1 / (w1 * w1), 2.0 * PI * s * c2);
            let c = PI * c1 * c1 / (w1 * w1);
            Ok(w2 * (Complex64::new(PI, 0.0) / a).sqrt() * (b * b / (4.0 * a) - c).exp())
        }
        _ => Err(Error::Unsupported("continuum functional needs Gaussian spatial profiles".into())),
    }
}

fn slot_infinite(slot: &Slot, opt: &OscOptions) -> Result<Complex64> {
    if let TemporalProfile::Constant(_) = slot.temporal {
        // Π H decays like (1+s²)^{-d/2}; the s integral needs d ≥ 2.
        if slot.x.len() < 2 {
            return Err(Error::Unsupported("constant temporal profile diverges for d < 2".into()));
        }
    }
    for (px, py) in slot.x.iter().zip(&slot.y) {
        pair_integral(px, py, 0.0)?;
    }
    let g = slot.dilation;
    let f = |s: f64| -> Complex64 {
        let mut v = Complex64::new(slot.temporal.value(s / g), 0.0);
        if v == Complex64::new(0.0, 0.0) {
            return v;
        }
        for (px, py) in slot.x.iter().zip(&slot.y) {
            v *= pair_integral(px, py, s).unwrap();
        }
        v
    };
    let sym = if let Some(w) = slot.temporal.support() {
        // Finite effective support: split at the origin for accuracy, then map the tails.
        let (a, _) = crate::quad::adaptive_complex(f, -w * g, w * g, opt.tol, 20_000);
        a
    } else {
        whole_line_complex(f, opt.tol)
    };
    Ok(sym)
}

/// Per-coordinate lattice factor
/// `G_L(s) = L^{-2} Σ_{a,b} φx(a/L) φy(b/L) e^{2πi s a b / L²}`.
pub fn lattice_factor(px: &SpatialProfile, py: &SpatialProfile, l: f64, s: f64) -> Complex64 {
    let (lo, hi) = px.range();
    let a0 = (lo * l).floor() as i64;
    let a1 = (hi * l).ceil() as i64;
    let mut tot = Complex64::new(0.0, 0.0);
    match *py {
        SpatialProfile::Gaussian { center: c, width: w } => {
            // Poisson summation in b: Σ_b φy(b/L) e^{2πi b θ} = Σ_m f̂(m − θ),
            // f̂(ν) = L w e^{-π L² w² ν²} e^{-2πi L c ν}.
            let reach = (6.0 / (l * w)).ceil() as i64 + 1;
            for a in a0..=a1 {
                let fa = px.value(a as f64 / l);
                if fa == 0.0 {
                    continue;
                }
                let theta = s * a as f64 / (l * l);
                let m0 = theta.round() as i64;
                let mut inner = Complex64::new(0.0, 0.0);
                for m in (m0 - reach)..=(m0 + reach) {
                    let nu = m as f64 - theta;
                    inner += Complex64::from_polar((-PI * l * l * w * w * nu * nu).exp(), -2.0 * PI * l * c * nu);
                }
                tot += fa * inner * w;
            }
            tot / l
        }
        SpatialProfile::Bump { .. } => {
            let (ylo, yhi) = py.range();
            let b0 = (ylo * l).floor() as i64;
            let b1 = (yhi * l).ceil() as i64;
            for a in a0..=a1 {
                let fa = px.value(a as f64 / l);
                if fa == 0.0 {
                    continue;
                }
                for b in b0..=b1 {
                    let fb = py.value(b as f64 / l);
                    if fb != 0.0 {
                        tot += Complex64::from_polar(fa * fb, 2.0 * PI * s * (a * b) as f64 / (l * l));
                    }
                }
            }
            tot / (l * l)
        }
    }
}

fn slot_finite(slot: &Slot, l: f64, opt: &OscOptions) -> Result<Complex64> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::Validation(format!("invalid box size {l}")));
    }
    let w = slot
        .temporal
        .support()
        .ok_or_else(|| Error::Unsupported("finite-L functional needs a decaying temporal profile".into()))?;
    let g = slot.dilation;
    let half = w * g;
    let panels = ((2.0 * half / opt.panel_width).ceil() as usize).max(1);
    let nodes = composite_gl(opt.panel_order, panels, -half, half);
    let total: Complex64 = nodes
        .par_iter()
        .with_min_len(64)
        .map(|&(s, wt)| {
            let tv = slot.temporal.value(s / g);
            if tv == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let mut v = Complex64::new(tv * wt, 0.0);
            for (px, py) in slot.x.iter().zip(&slot.y) {
                v *= lattice_factor(px, py, l, s);
            }
            v
        })
        .collect::<Vec<Complex64>>()
        .iter()
        .sum();
    Ok(total)
}

/// One row of a convergence sweep.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct ConvergenceRow {
    pub l: f64,
    pub alpha: f64,
    pub value_re: f64,
    pub value_im: f64,
    pub reference: f64,
    pub abs_error: f64,
}

/// `|S_L(θ_L Φ) − S_∞(θ_∞ Φ)|` over a list of box sizes.
pub fn convergence_sweep(phi: &SeparableTestFunction, ls: &[f64], alpha: f64) -> Result<Vec<ConvergenceRow>> {
    let (n, d) = (phi.n(), phi.d());
    let reference = osc_functional(&scale_theta(phi, f64::INFINITY, alpha), Scale::Infinite, n, d)?;
    ls.iter()
        .map(|&l| {
            let v = osc_functional(&scale_theta(phi, l, alpha), Scale::Finite(l), n, d)?;
            Ok(ConvergenceRow {
                l,
                alpha,
                value_re: v.re,
                value_im: v.im,
                reference: reference.re,
                abs_error: (v - reference).norm(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::adaptive_real;

    #[test]
    fn gauss_sum_examples() {
        assert!((gauss_sum(0.0, 0.0, 3, 7) - Complex64::new(8.0, 0.0)).norm() < 1e-12);
        assert!((gauss_sum(1.0, 0.0, 0, 4) - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(gauss_sum(1.0, 0.0, 0, 5).norm() < 1e-12);
        assert!(gauss_sum(0.0, 1.0, 0, 1).norm() < 1e-12);
    }

    #[test]
    fn moment_n1() {
        let m = gauss_sum_moment(4, 1, 0.0, 0, 1 << 10).unwrap();
        assert!((m - 6.0).abs() < 1e-12);
        // Order 6: Σ_j C(3,j)² = 20.
        let m6 = gauss_sum_moment(6, 1, 0.0, 0, 1 << 10).unwrap();
        assert!((m6 - 20.0).abs() < 1e-10);
        assert!(gauss_sum_moment(5, 1, 0.0, 0, 16).is_err());
    }

    #[test]
    fn moment_recurrence_matches_direct() {
        let grid = 64;
        let direct: f64 = (0..grid)
            .map(|i| gauss_sum(2.0 * i as f64 / grid as f64, 0.3, 2, 5).norm().powi(4))
            .sum::<f64>()
            / grid as f64;
        let fast = gauss_sum_moment(4, 5, 0.3, 2, grid).unwrap();
        assert!((direct - fast).abs() < 1e-9 * direct);
    }

    #[test]
    fn continuum_unit_gaussian() {
        let phi = SeparableTestFunction::gaussian(1, 3, TemporalProfile::Gaussian);
        let v = osc_functional(&phi, Scale::Infinite, 1, 3).unwrap();
        let oracle = adaptive_real(|s| (-PI * s * s).exp() * (1.0 + s * s).powf(-1.5), -8.0, 8.0, 1e-13, 400);
        assert!((v.re - oracle).abs() < 1e-8 && v.im.abs() < 1e-10);
        let inf = scale_theta(&phi, f64::INFINITY, 1.0);
        let v = osc_functional(&inf, Scale::Infinite, 1, 3).unwrap();
        assert!((v.re - 2.0).abs() < 1e-7);
    }

    #[test]
    fn pair_integral_matches_quadrature() {
        let px = SpatialProfile::Gaussian { center: 0.3, width: 0.8 };
        let py = SpatialProfile::Gaussian { center: -0.2, width: 1.3 };
        let s = 0.7;
        let q = crate::quad::gauss_legendre_on(120, -8.0, 8.0);
        let mut direct = Complex64::new(0.0, 0.0);
        for &(x, wx) in &q {
            for &(y, wy) in &q {
                direct += Complex64::from_polar(wx * wy * px.value(x) * py.value(y), 2.0 * PI * s * x * y);
            }
        }
        assert!((pair_integral(&px, &py, s).unwrap() - direct).norm() < 1e-9);
    }

    #[test]
    fn conjugation_symmetry() {
        let px = SpatialProfile::Bump { center: 0.0, width: 1.0 };
        let py = SpatialProfile::Gaussian { center: 0.3, width: 0.5 };
        let l = 4.0;
        for &s in &[0.3, 2.1] {
            let gp = lattice_factor(&px, &py, l, s);
            let gm = lattice_factor(&px, &py, l, -s);
            assert!((gp - gm.conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn finite_l_matches_direct_sum_in_1d() {
        // d = 1, Gaussian in time dilated by γ: the s integral of e^{2πisϖ} e^{-π s²/γ²}
        // is γ e^{-π γ² ϖ²}, giving an independent lattice-sum oracle.
        for &(l, gamma) in &[(3.0, 1.0), (4.0, 2.0), (5.0, 1.7)] {
            let mut phi = SeparableTestFunction::gaussian(1, 1, TemporalProfile::Gaussian);
            phi.slots[0].dilation = gamma;
            phi.slots[0].x[0] = SpatialProfile::Gaussian { center: 0.2, width: 0.9 };
            let v = osc_functional(&phi, Scale::Finite(l), 1, 1).unwrap();
            let px = phi.slots[0].x[0];
            let py = phi.slots[0].y[0];
            let r = (8.0 * l) as i64;
            let mut direct = 0.0;
            for a in -r..=r {
                for b in -r..=r {
                    let w = (a * b) as f64 / (l * l);
                    direct += px.value(a as f64 / l) * py.value(b as f64 / l) * gamma * (-PI * gamma * gamma * w * w).exp();
                }
            }
            direct /= l * l;
            assert!((v.re - direct).abs() < 1e-8, "{} vs {}", v.re, direct);
            assert!(v.im.abs() < 1e-8);
        }
    }

    #[test]
    fn bump_matches_gaussian_route_for_poisson() {
        // Gaussian y-profile (Poisson route) against a direct b-sum of the same profile.
        let px = SpatialProfile::Bump { center: 0.1, width: 1.2 };
        let py = SpatialProfile::Gaussian { center: 0.0, width: 0.7 };
        let l = 5.0;
        for &s in &[0.0, 0.4, 3.3] {
            let fast = lattice_factor(&px, &py, l, s);
            let mut direct = Complex64::new(0.0, 0.0);
            for a in -10..=10 {
                for b in -60..=60 {
                    direct += Complex64::from_polar(
                        px.value(a as f64 / l) * py.value(b as f64 / l),
                        2.0 * PI * s * (a * b) as f64 / (l * l),
                    );
                }
            }
            assert!((fast - direct / (l * l)).norm() < 1e-12);
        }
    }

    #[test]
    fn scale_theta_examples() {
        let phi = SeparableTestFunction::gaussian(1, 2, TemporalProfile::Gaussian);
        assert_eq!(scale_theta(&phi, 1.0, 0.7), phi);
        let s = scale_theta(&phi, 4.0, 0.5);
        assert_eq!(s.slots[0].dilation, 2.0);
        let z = scale_theta(&SeparableTestFunction::gaussian(1, 2, TemporalProfile::GaussianS2), f64::INFINITY, 1.0);
        assert_eq!(z.slots[0].temporal, TemporalProfile::Constant(0.0));
        let v = osc_functional(&z, Scale::Infinite, 1, 2).unwrap();
        assert_eq!(v, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn unsupported_profiles() {
        let phi = SeparableTestFunction::gaussian(1, 1, TemporalProfile::Constant(1.0));
        assert!(matches!(osc_functional(&phi, Scale::Finite(4.0), 1, 1), Err(Error::Unsupported(_))));
        assert!(matches!(osc_functional(&phi, Scale::Infinite, 1, 1), Err(Error::Unsupported(_))));
        let mut b = SeparableTestFunction::gaussian(1, 1, TemporalProfile::Gaussian);
        b.slots[0].x[0] = SpatialProfile::Bump { center: 0.0, width: 1.0 };
        assert!(matches!(osc_functional(&b, Scale::Infinite, 1, 1), Err(Error::Unsupported(_))));
    }
}
