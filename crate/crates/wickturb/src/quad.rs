//! Small quadrature helpers shared by the numerical modules.

use gauss_quad::GaussLegendre;
use num_complex::Complex64;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    if n == 1 {
        return vec![(0.0, 2.0)];
    }
    let mut v = GaussLegendre::new(n)
        .expect("degree >= 2")
        .as_node_weight_pairs()
        .to_vec();
    v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    v
}

/// Gauss-Legendre rule mapped onto `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let h = 0.5 * (b - a);
    let c = 0.5 * (b + a);
    gauss_legendre(n)
        .into_iter()
        .map(|(x, w)| (c + h * x, h * w))
        .collect()
}

/// Composite Gauss-Legendre rule with `panels` equal panels of `order` nodes each.
pub fn composite_gl(order: usize, panels: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let base = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(order * panels);
    for p in 0..panels {
        let lo = a + h * p as f64;
        for &(x, w) in &base {
            out.push((lo + 0.5 * h * (x + 1.0), 0.5 * h * w));
        }
    }
    out
}

fn gl_panel<F: FnMut(f64) -> Complex64>(f: &mut F, rule: &[(f64, f64)], a: f64, b: f64) -> Complex64 {
    let h = 0.5 * (b - a);
    let c = 0.5 * (b + a);
    let mut s = Complex64::new(0.0, 0.0);
    for &(x, w) in rule {
        s += f(c + h * x) * w;
    }
    s * h
}

/// Globally adaptive Gauss-Legendre quadrature of a complex integrand on `[a, b]`.
///
/// Each panel is estimated with a 10-point and a 20-point rule; the panel with the
/// largest discrepancy is bisected until the summed discrepancy drops below
/// `tol * max(1, |I|)` or `max_panels` is reached. Returns the estimate and the
/// final error indicator.
pub fn adaptive_complex<F: FnMut(f64) -> Complex64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_panels: usize,
) -> (Complex64, f64) {
    let lo = gauss_legendre(10);
    let hi = gauss_legendre(20);
    let eval = |a: f64, b: f64, f: &mut F| {
        let c = gl_panel(f, &lo, a, b);
        let d = gl_panel(f, &hi, a, b);
        (d, (d - c).norm())
    };
    let init = 8usize;
    let h = (b - a) / init as f64;
    let mut panels: Vec<(f64, f64, Complex64, f64)> = (0..init)
        .map(|i| {
            let (x0, x1) = (a + h * i as f64, a + h * (i + 1) as f64);
            let (v, e) = eval(x0, x1, &mut f);
            (x0, x1, v, e)
        })
        .collect();
    loop {
        let total: Complex64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= tol * total.norm().max(1.0) || panels.len() >= max_panels {
            return (total, err);
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .unwrap();
        let (x0, x1, _, _) = panels.swap_remove(idx);
        let m = 0.5 * (x0 + x1);
        let (v0, e0) = eval(x0, m, &mut f);
        let (v1, e1) = eval(m, x1, &mut f);
        panels.push((x0, m, v0, e0));
        panels.push((m, x1, v1, e1));
    }
}

/// Real-valued convenience wrapper around [`adaptive_complex`].
pub fn adaptive_real<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64, max_panels: usize) -> f64 {
    adaptive_complex(|x| Complex64::new(f(x), 0.0), a, b, tol, max_panels).0.re
}

/// Integral over the whole real line through the map `s = tan(theta)`.
pub fn whole_line_complex<F: FnMut(f64) -> Complex64>(mut f: F, tol: f64) -> Complex64 {
    let half = std::f64::consts::FRAC_PI_2;
    adaptive_complex(
        |th| {
            let c = th.cos();
            if c.abs() < 1e-300 {
                return Complex64::new(0.0, 0.0);
            }
            f(th.tan()) / (c * c)
        },
        -half,
        half,
        tol,
        4000,
    )
    .0
}

/// Kahan-Babuska compensated accumulator, used where long sums must be reproducible.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_integrates_polynomials_exactly() {
        let r = gauss_legendre_on(5, 0.0, 2.0);
        let s: f64 = r.iter().map(|&(x, w)| w * x.powi(9)).sum();
        assert!((s - 2f64.powi(10) / 10.0).abs() < 1e-10);
        assert_eq!(gauss_legendre(1), vec![(0.0, 2.0)]);
    }

    #[test]
    fn adaptive_handles_gaussian_and_oscillation() {
        let v = adaptive_real(|x| (-x * x).exp(), -10.0, 10.0, 1e-12, 200);
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-11);
        let (c, _) = adaptive_complex(|x| Complex64::from_polar(1.0, 40.0 * x), 0.0, 1.0, 1e-12, 400);
        let exact = (Complex64::from_polar(1.0, 40.0) - 1.0) / Complex64::new(0.0, 40.0);
        assert!((c - exact).norm() < 1e-11);
    }

    #[test]
    fn whole_line_cauchy() {
        let v = whole_line_complex(|s| Complex64::new(1.0 / (1.0 + s * s), 0.0), 1e-12);
        assert!((v.re - std::f64::consts::PI).abs() < 1e-10);
    }

    #[test]
    fn kahan_beats_naive() {
        let mut k = KahanSum::default();
        for _ in 0..1_000_000 {
            k.add(0.1);
        }
        assert!((k.value() - 100_000.0).abs() < 1e-8);
    }
}
