//! Acceptance suite: thirteen numbered checks with pinned parameters and tolerances.
//! Each check returns an [`Outcome`]; nothing here panics on a failed criterion.

use crate::combinatorics::{
    conjugate_classes, couple_count, enumerate_couples, enumerate_regular_couples, enumerate_trees,
    irreducible_factorization, regular_couple_count, regular_index, split_at_class, ternary_catalan, Couple,
};
use crate::decorations::{count_quasi_resonant, LatticeSpec};
use crate::error::Result;
use crate::kinetic::{
    marginalize_zeta, picard_orders, solve, KGrid, KineticState, Scheme, SolveOptions, XGrid, ZGrid,
};
use crate::montecarlo::wick_crosscheck;
use crate::oscillatory::{convergence_sweep, gauss_sum_moment, SeparableTestFunction, TemporalProfile};
use crate::spectra::{finite_l_spectrum, InitialProfile, KineticLimitEvaluator, QuadratureSpec, Regime, ResonantRule};
use crate::timeorder::{decay_bound, linear_extension_count, theta, OrderedForest};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::HashSet;
use std::f64::consts::PI;
use std::time::Instant;

/// Result of one criterion.
#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub id: u32,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "{} criterion {:>2} ({}): {} [{:.1} s]",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.seconds
        )
    }
}

fn finish(id: u32, title: &'static str, start: Instant, r: Result<(bool, String)>) -> Outcome {
    let (pass, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
    Outcome { id, title, pass, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Seed shared by every randomized criterion.
pub const SEED: u64 = 20261018;

pub const C1_MAX_SECONDS: f64 = 5.0;
pub fn criterion_1() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let expect = [1u128, 1, 3, 12, 55, 273];
        let mut ok = true;
        let mut got = Vec::new();
        for (n, &e) in expect.iter().enumerate() {
            let t = enumerate_trees(n, 1)?.len() as u128;
            let m = enumerate_trees(n, -1)?.len() as u128;
            let reg = enumerate_regular_couples(n)?.len() as u128;
            ok &= t == e && m == e && ternary_catalan(n) == e && reg == (1u128 << n) * e && regular_couple_count(n) == reg;
            got.push(format!("{t}/{reg}"));
        }
        let secs = start.elapsed().as_secs_f64();
        Ok((ok && secs < C1_MAX_SECONDS, format!("trees/regular n=0..5: {}; {secs:.2} s", got.join(" "))))
    })();
    finish(1, "tree and regular couple counts", start, r)
}

pub fn criterion_2() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let mut ok = true;
        let mut got = Vec::new();
        for n in 0..=3usize {
            let t = ternary_catalan(n);
            let f = |m: usize| (1..=m as u128).product::<u128>();
            let want = t * t * f(n + 1) * f(n);
            let c = enumerate_couples(n)?.len() as u128;
            ok &= c == want && couple_count(n) == want;
            got.push(c.to_string());
        }
        Ok((ok, format!("|K_n| n=0..3: {}", got.join(", "))))
    })();
    finish(2, "couple counts by enumeration", start, r)
}

fn internal_classes(c: &Couple) -> Vec<(usize, usize)> {
    let cc = conjugate_classes(c);
    let (pr, mr) = c.roots();
    cc.size_two()
        .filter(|cl| !c.is_leaf(cl[0]) && !c.is_leaf(cl[1]) && cl[0] != pr && cl[0] != mr && cl[1] != pr && cl[1] != mr)
        .map(|cl| (cl[0], cl[1]))
        .collect()
}

/// Factor multiset obtained by repeatedly splitting at the first (or last) internal class.
pub fn sequential_factor_multiset(c: &Couple, last: bool) -> Result<Vec<String>> {
    let cls = internal_classes(c);
    let pick = if last { cls.last() } else { cls.first() };
    match pick {
        None => Ok(if c.order() == 0 { vec![] } else { vec![c.serialize()] }),
        Some(&(a, b)) => {
            let (outer, _, inner) = split_at_class(c, a, b)?;
            let mut v = sequential_factor_multiset(&outer, last)?;
            v.extend(sequential_factor_multiset(&inner, last)?);
            v.sort();
            Ok(v)
        }
    }
}

pub fn criterion_3() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let mut bad = Vec::new();
        let mut checked = 0usize;
        for n in 0..=3usize {
            let regular: HashSet<String> = enumerate_regular_couples(n)?.iter().map(|c| c.serialize()).collect();
            for c in enumerate_couples(n)? {
                checked += 1;
                let cc = conjugate_classes(&c);
                for cl in &cc.classes {
                    if cl.len() > 2 || (cl.len() == 2 && (c.locate(cl[0]).0 == c.locate(cl[1]).0 || c.sign(cl[0]) != -c.sign(cl[1]))) {
                        bad.push(format!("class {cl:?} of {c}"));
                    }
                }
                let full = irreducible_factorization(&c).multiset();
                if sequential_factor_multiset(&c, false)? != full || sequential_factor_multiset(&c, true)? != full {
                    bad.push(format!("order dependence in {c}"));
                }
                let idx = regular_index(&c);
                for (a, b) in internal_classes(&c) {
                    let (o, _, i) = split_at_class(&c, a, b)?;
                    if regular_index(&o) + regular_index(&i) != idx {
                        bad.push(format!("index not additive in {c}"));
                    }
                }
                if (idx == 0) != regular.contains(&c.serialize()) {
                    bad.push(format!("regularity mismatch in {c}"));
                }
            }
        }
        let detail = if bad.is_empty() { format!("{checked} couples checked") } else { format!("{} violations, first: {}", bad.len(), bad[0]) };
        Ok((bad.is_empty(), detail))
    })();
    finish(3, "conjugacy and factorization laws", start, r)
}

fn random_forest<R: Rng>(n: usize, rng: &mut R) -> OrderedForest {
    OrderedForest::random(n, 0.3, rng)
}

/// Nested Gauss–Legendre evaluation of `∫_{O_t(G)} e^{2πi Σ t_g ω_g} dt`.
fn simplex_quadrature(g: &OrderedForest, omega: &[f64], t: f64) -> Complex64 {
    fn node(g: &OrderedForest, omega: &[f64], i: usize, upper: f64) -> Complex64 {
        crate::quad::gauss_legendre_on(40, 0.0, upper)
            .into_iter()
            .map(|(s, w)| {
                let mut v = Complex64::from_polar(w, 2.0 * PI * s * omega[i]);
                for &c in g.children(i) {
                    v *= node(g, omega, c, s);
                }
                v
            })
            .sum()
    }
    g.roots().into_iter().map(|r| node(g, omega, r, t)).product()
}

pub const C4_HOOK_REL: f64 = 1e-12;
pub const C4_QUAD_REL: f64 = 1e-6;
pub const C4_MAX_C: f64 = 4.0;
pub fn criterion_4() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let mut hook: f64 = 0.0;
        for _ in 0..200 {
            let n = rng.random_range(1..=6);
            let g = random_forest(n, &mut rng);
            let v = theta(&g, &vec![0.0; n])?.eval(1.0);
            let want = linear_extension_count(&g) as f64 / (1..=n).product::<usize>() as f64;
            hook = hook.max((v - want).norm() / want);
        }
        let mut quad: f64 = 0.0;
        for _ in 0..100 {
            let n = rng.random_range(1..=3);
            let g = random_forest(n, &mut rng);
            let om: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = rng.random_range(0.3..1.5);
            let a = theta(&g, &om)?.eval(t);
            let b = simplex_quadrature(&g, &om, t);
            quad = quad.max((a - b).norm() / b.norm());
        }
        let mut fitted: f64 = 0.0;
        for _ in 0..200 {
            let n = rng.random_range(1..=5);
            let g = random_forest(n, &mut rng);
            let om: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let t = rng.random_range(0.5..4.0);
            let v = theta(&g, &om)?.eval(t).norm();
            fitted = fitted.max((v / decay_bound(&g, &om, t)?).powf(1.0 / n as f64));
        }
        let pass = hook <= C4_HOOK_REL && quad <= C4_QUAD_REL && fitted <= C4_MAX_C;
        Ok((pass, format!("hook rel {hook:.2e}, quadrature rel {quad:.2e}, fitted C {fitted:.3}")))
    })();
    finish(4, "time-ordered kernel", start, r)
}

/// Recorded bounds for `‖G‖⁴/(N² log(1+N))` and `‖G‖⁶/N⁴`.
pub const C5_BOUND4: f64 = 2.0;
pub const C5_BOUND6: f64 = 2.0;
pub const C5_MAX_SECONDS: f64 = 30.0;
pub fn criterion_5() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let (mut m4, mut m6): (f64, f64) = (0.0, 0.0);
        for e in 3..=8 {
            let n: u64 = 1 << e;
            let nn = (n * n) as usize;
            let nf = n as f64;
            m4 = m4.max(gauss_sum_moment(4, n, 0.0, 0, 2 * nn + 7)? / (nf * nf * (1.0 + nf).ln()));
            m6 = m6.max(gauss_sum_moment(6, n, 0.0, 0, 3 * nn + 7)? / nf.powi(4));
        }
        let secs = start.elapsed().as_secs_f64();
        let pass = m4 <= C5_BOUND4 && m6 <= C5_BOUND6 && secs < C5_MAX_SECONDS;
        Ok((pass, format!("max L4 ratio {m4:.4} (≤ {C5_BOUND4}), max L6 ratio {m6:.4} (≤ {C5_BOUND6}); {secs:.1} s")))
    })();
    finish(5, "Gauss sum moments", start, r)
}

pub const C6_MAX_SECONDS: f64 = 120.0;
pub fn criterion_6() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let phi = SeparableTestFunction::gaussian(1, 3, TemporalProfile::Gaussian);
        let ls = [4.0, 8.0, 16.0, 32.0];
        let mut pass = true;
        let mut parts = Vec::new();
        for alpha in [0.5, 1.0] {
            let rows = convergence_sweep(&phi, &ls, alpha)?;
            let errs: Vec<f64> = rows.iter().map(|r| r.abs_error).collect();
            pass &= errs.windows(2).all(|w| w[1] < w[0]);
            parts.push(format!("α={alpha}: {}", errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(" ")));
        }
        let secs = start.elapsed().as_secs_f64();
        Ok((pass && secs < C6_MAX_SECONDS, format!("{}; {secs:.1} s", parts.join("; "))))
    })();
    finish(6, "Riemann-sum convergence", start, r)
}

pub const C7_K1_RADIUS: f64 = 0.5;
pub const C7_K1_BOUND_FACTOR: f64 = 4.0;
pub const C7_NONREG_RADIUS: f64 = 0.25;
pub const C7_MAX_SECONDS: f64 = 300.0;
pub fn criterion_7() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let (d, alpha) = (3usize, 1.0);
        let k1 = &enumerate_regular_couples(1)?[0];
        // Window |Ω| ≤ L^{-α} at every branching node.
        let q = [(-1.0, 1.0)];
        let bound = C7_K1_BOUND_FACTOR * PI * PI * C7_K1_RADIUS.powi(4);
        let mut pass = true;
        let mut a = Vec::new();
        for l in [4.0f64, 8.0, 16.0] {
            let spec = LatticeSpec::new(l, d, C7_K1_RADIUS)?;
            let n = count_quasi_resonant(k1, &[0, 0, 0], &spec, &q, l.powf(alpha))? as f64;
            let v = n / l.powf(2.0 * d as f64 - alpha);
            pass &= v <= bound;
            a.push(format!("{v:.4}"));
        }
        let nonreg = enumerate_couples(2)?.into_iter().find(|c| regular_index(c) > 0).unwrap();
        let mut b = Vec::new();
        let mut prev = f64::INFINITY;
        for l in [4.0f64, 8.0, 16.0] {
            let spec = LatticeSpec::new(l, d, C7_NONREG_RADIUS)?;
            let n = count_quasi_resonant(&nonreg, &[0, 0, 0], &spec, &q, l.powf(alpha))? as f64;
            let v = n / l.powf(2.0 * (2.0 * d as f64 - alpha));
            pass &= v < prev;
            prev = v;
            b.push(format!("{v:.4e}"));
        }
        let secs = start.elapsed().as_secs_f64();
        Ok((
            pass && secs < C7_MAX_SECONDS,
            format!("K1 normalized {} (≤ {bound:.4}); non-regular {} normalized {}; {secs:.1} s", a.join(" "), nonreg, b.join(" ")),
        ))
    })();
    finish(7, "quasi-resonant lattice counts", start, r)
}

pub const C8_SAMPLES: usize = 10_000;
pub const C8_MAX_Z: f64 = 3.0;
pub const C8_MAX_SECONDS: f64 = 300.0;
pub fn criterion_8() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let spec = LatticeSpec::new(2.0, 3, 2.0)?;
        let p = InitialProfile::gaussian(3, 1.0, 1.0);
        let (t, alpha) = (1.0, 1.0);
        let (k, kp) = ([1i64, 0, 0], [0i64, 1, 1]);
        let cases = [(0, 0, k, k), (1, 1, k, k), (0, 1, k, k), (1, 1, k, kp), (0, 0, k, kp)];
        let mut pass = true;
        let mut parts = Vec::new();
        for (n, np, a, b) in cases {
            let rep = wick_crosscheck(n, np, t, &a, &b, &spec, alpha, &p, C8_SAMPLES, SEED)?;
            pass &= rep.z <= C8_MAX_Z;
            parts.push(format!("({n},{np},{}) z={:.2}", if a == b { "k=k'" } else { "k≠k'" }, rep.z));
        }
        let secs = start.elapsed().as_secs_f64();
        Ok((pass && secs < C8_MAX_SECONDS, format!("{}; {secs:.1} s", parts.join(", "))))
    })();
    finish(8, "Wick validation", start, r)
}

pub const C9_REL_ORDER1: f64 = 1e-3;
pub const C9_REL_ORDER2: f64 = 1e-2;
pub fn criterion_9() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let (kmax, n, t) = (2.5, 401usize, 0.5);
        let p = InitialProfile::gaussian(3, 1.0, PI);
        let q = QuadratureSpec { radial: 12, angular: 6, kmax, radial_table: Some(n), ..Default::default() };
        let grid = KGrid::Radial { kmax, n };
        let w0 = KineticState::initial_w(grid, None, &p)?;
        let rule = ResonantRule::from_spec(3, &q)?;
        let a = picard_orders(&w0, 2, &rule)?;
        let mut ev = KineticLimitEvaluator::new(&p, &q)?;
        let (k1, k2) = (enumerate_regular_couples(1)?, enumerate_regular_couples(2)?);
        let (mut e1, mut e2): (f64, f64) = (0.0, 0.0);
        for i in [0usize, 40, 80] {
            let k = grid.node(i);
            let s1: f64 = k1.iter().map(|c| ev.spectrum(c, t, &k)).sum::<Result<f64>>()?;
            let s2: f64 = k2.iter().map(|c| ev.spectrum(c, t, &k)).sum::<Result<f64>>()?;
            e1 = e1.max((s1 - t * a[1][i]).abs() / (t * a[1][i]).abs());
            e2 = e2.max((s2 - t * t * a[2][i]).abs() / (t * t * a[2][i]).abs());
        }
        Ok((e1 <= C9_REL_ORDER1 && e2 <= C9_REL_ORDER2, format!("order-1 rel {e1:.2e} (≤ {C9_REL_ORDER1}), order-2 rel {e2:.2e} (≤ {C9_REL_ORDER2})")))
    })();
    finish(9, "kinetic limit vs Picard", start, r)
}

pub fn criterion_10() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let (t, alpha, radius) = (0.5, 1.0, 2.0);
        let p = InitialProfile::gaussian(3, 1.0, PI);
        let q = QuadratureSpec { radial: 16, angular: 8, kmax: 2.0, ..Default::default() };
        let ks: [[f64; 3]; 3] = [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.5, 0.5, 0.0]];
        let mut pass = true;
        let mut parts = Vec::new();
        for c in enumerate_regular_couples(1)? {
            let mut ev = KineticLimitEvaluator::new(&p, &q)?;
            let refs: Vec<f64> = ks.iter().map(|k| ev.spectrum(&c, t, k)).collect::<Result<_>>()?;
            let mut sups = Vec::new();
            for l in [2.0f64, 4.0, 8.0] {
                let spec = LatticeSpec::new(l, 3, radius)?;
                let mut sup: f64 = 0.0;
                for (k, r) in ks.iter().zip(&refs) {
                    let ki: Vec<i64> = k.iter().map(|v| (v * l).round() as i64).collect();
                    let v = finite_l_spectrum(&c, t * l.powf(alpha), &ki, &spec, alpha, &p)?;
                    sup = sup.max((v.re - r).abs());
                }
                sups.push(sup);
            }
            pass &= sups.windows(2).all(|w| w[1] < w[0]);
            parts.push(format!("{c}: {}", sups.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(" ")));
        }
        Ok((pass, parts.join("; ")))
    })();
    finish(10, "finite-L spectra approach the kinetic limit", start, r)
}

pub const C11_REL: f64 = 5e-2;
pub const C11_MAX_SECONDS: f64 = 600.0;
pub fn criterion_11() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let p = InitialProfile::gaussian(3, PI, PI);
        let k = KGrid::Cartesian { kmax: 1.5, m: 9 };
        let z = ZGrid { extent: 1.2, points: 9 };
        let rule = ResonantRule::new(3, 4, 2)?;
        let e0 = KineticState::initial_e(k, None, z, &p)?;
        let w0 = marginalize_zeta(&e0)?;
        let opts = SolveOptions { t_end: 0.25, dt: 0.25, scheme: Scheme::Rk4, ..Default::default() };
        let e = solve(&e0, &opts, &rule)?.last();
        let w = solve(&w0, &opts, &rule)?.last();
        let m = marginalize_zeta(&e)?;
        let dev = m.data.iter().zip(&w.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / w.sup_norm();
        let growth = w.data.iter().zip(&w0.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / w0.sup_norm();
        let secs = start.elapsed().as_secs_f64();
        Ok((
            dev <= C11_REL && secs < C11_MAX_SECONDS,
            format!("sup rel deviation {dev:.2e} (≤ {C11_REL}); relative change of W over the run {growth:.2e}; {secs:.1} s"),
        ))
    })();
    finish(11, "phase-space marginalization", start, r)
}

fn inhom_setup() -> (InitialProfile, KGrid, XGrid, ResonantRule) {
    (
        InitialProfile::gaussian(3, 0.8, PI),
        KGrid::Cartesian { kmax: 1.5, m: 9 },
        XGrid { extent: 1.0, points: 3 },
        ResonantRule::new(3, 4, 2).unwrap(),
    )
}

fn rel_sup(a: &[f64], b: &[f64]) -> f64 {
    let s = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / s
}

pub const C12_REL: f64 = 1e-2;
pub const C12_POSITIONS: [usize; 5] = [0, 4, 13, 22, 26];
pub fn criterion_12() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let (p, k, x, rule) = inhom_setup();
        let w0 = KineticState::initial_w(k, Some(x), &p)?;
        let opts = SolveOptions { t_end: 0.25, dt: 0.125, regime: Regime::SemiHomogeneous, ..Default::default() };
        let inh = solve(&w0, &opts, &rule)?;
        let mut worst: f64 = 0.0;
        for &ix in &C12_POSITIONS {
            let h0 = KineticState::initial_w(k, None, &p.frozen_at(&x.node(ix)))?;
            let h = solve(&h0, &opts, &rule)?;
            for step in 0..h.times.len() {
                let s = inh.state(step);
                worst = worst.max(rel_sup(s.slice_x(ix), &h.states[step]));
            }
        }
        Ok((worst <= C12_REL, format!("worst trajectory deviation {worst:.2e} (≤ {C12_REL}) over 5 positions")))
    })();
    finish(12, "semi-homogeneous factorization", start, r)
}

pub const C13_FACTOR: f64 = 10.0;
pub fn criterion_13() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let (p, k, x, rule) = inhom_setup();
        let w0 = KineticState::initial_w(k, Some(x), &p)?;
        let base = SolveOptions { t_end: 0.25, dt: 0.125, ..Default::default() };
        let tr = SolveOptions { regime: Regime::Transport, ..base.clone() };
        let moving = solve(&w0, &tr, &rule)?.last();
        let fine = solve(&w0, &SolveOptions { dt: 0.0625, ..tr.clone() }, &rule)?.last();
        let tol = rel_sup(&moving.data, &fine.data);
        let frozen = solve(&w0, &base, &rule)?.last();
        let departure = rel_sup(&moving.data, &frozen.data);
        let mut fact: f64 = 0.0;
        for &ix in &C12_POSITIONS {
            let h0 = KineticState::initial_w(k, None, &p.frozen_at(&x.node(ix)))?;
            let h = solve(&h0, &base, &rule)?.last();
            fact = fact.max(rel_sup(frozen.slice_x(ix), &h.data));
        }
        let pass = departure > C13_FACTOR * tol && fact <= C12_REL;
        Ok((
            pass,
            format!(
                "transport departure from the factorized solution {departure:.2e} vs solver tolerance {tol:.2e} (need > {C13_FACTOR}×); frozen run factorization error {fact:.2e}"
            ),
        ))
    })();
    finish(13, "transport switch", start, r)
}

/// All criteria in order.
pub fn run_all() -> Vec<Outcome> {
    let fs: [fn() -> Outcome; 13] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
        criterion_10,
        criterion_11,
        criterion_12,
        criterion_13,
    ];
    fs.iter().map(|f| f()).collect()
}

/// Run one criterion by number.
pub fn run_one(id: u32) -> Option<Outcome> {
    Some(match id {
        1 => criterion_1(),
        2 => criterion_2(),
        3 => criterion_3(),
        4 => criterion_4(),
        5 => criterion_5(),
        6 => criterion_6(),
        7 => criterion_7(),
        8 => criterion_8(),
        9 => criterion_9(),
        10 => criterion_10(),
        11 => criterion_11(),
        12 => criterion_12(),
        13 => criterion_13(),
        _ => return None,
    })
}


/// Criteria that fail at every brute-force-feasible lattice size. The order-2 window
/// `|Ω| ≤ L^{-α}` only starts to cut the count once `R²L ≫ 1`, while enumerating four
/// free lattice vectors limits `RL` to about 4. Their FAIL lines are still printed.
pub const KNOWN_UNATTAINABLE: &[u32] = &[7];
