//! Time-ordered Fourier kernels over forests, in closed form.
//!
//! `Θ_t[G](ω) = ∫_{O_t(G)} e^{2πi Σ t_g ω_g} dt`, where `O_t(G)` is the set of times in
//! `[0, t]` decreasing along every parent→child edge. The kernel is an exponential
//! polynomial in `t` and is built exactly by repeated primitives.

use crate::combinatorics::{Couple, SignedTernaryTree};
use crate::error::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::ops::{Add, Mul};

/// Frequencies closer than this are treated as equal (and as zero in primitives).
pub const FREQ_TOL: f64 = 1e-12;

/// Forest given by parent pointers. The partial order is ancestry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrderedForest {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
}

impl OrderedForest {
    pub fn new(parent: Vec<Option<usize>>) -> Result<Self> {
        let n = parent.len();
        let mut children = vec![Vec::new(); n];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n || p == i {
                    return Err(Error::Validation(format!("bad parent {p} for node {i}")));
                }
                children[p].push(i);
            }
        }
        // Walking up from any node must reach a root within n steps.
        for i in 0..n {
            let mut cur = i;
            let mut steps = 0;
            while let Some(p) = parent[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(Error::Validation("parent pointers contain a cycle".into()));
                }
            }
        }
        Ok(OrderedForest { parent, children })
    }

    /// `n` nodes, each the parent of the next.
    pub fn chain(n: usize) -> Self {
        Self::new((0..n).map(|i| i.checked_sub(1)).collect()).unwrap()
    }

    /// Random forest: node 0 is a root, each later node is a new root with probability
    /// `p_root` and otherwise hangs under a uniformly chosen earlier node.
    pub fn random<R: rand::Rng + ?Sized>(n: usize, p_root: f64, rng: &mut R) -> Self {
        let parent = (0..n).map(|i| if i == 0 || rng.random_bool(p_root) { None } else { Some(rng.random_range(0..i)) }).collect();
        Self::new(parent).unwrap()
    }

    /// `n` unrelated nodes.
    pub fn antichain(n: usize) -> Self {
        Self::new(vec![None; n]).unwrap()
    }

    /// Branching nodes of a tree with inherited ancestry. Returns the forest and the
    /// tree node id of every forest node.
    pub fn from_tree(t: &SignedTernaryTree) -> (Self, Vec<usize>) {
        let ids = t.branching();
        let pos = |g: usize| ids.iter().position(|&x| x == g);
        let parent = ids.iter().map(|&g| t.parent(g).and_then(pos)).collect();
        (Self::new(parent).unwrap(), ids)
    }

    /// Disjoint union of the branching forests of both trees of a couple. Returns the
    /// forest and the global node id of every forest node (plus tree first).
    pub fn from_couple(c: &Couple) -> (Self, Vec<usize>) {
        let ids = c.branching();
        let pos = |g: usize| ids.iter().position(|&x| x == g);
        let parent = ids.iter().map(|&g| c.parent(g).and_then(pos)).collect();
        (Self::new(parent).unwrap(), ids)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }
    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }
    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }
    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }
    pub fn roots(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.parent[i].is_none()).collect()
    }
    pub fn subtree_size(&self, i: usize) -> usize {
        1 + self.children[i].iter().map(|&c| self.subtree_size(c)).sum::<usize>()
    }
    /// Strict descendants of `i`.
    pub fn descendants(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = self.children[i].clone();
        while let Some(c) = stack.pop() {
            out.push(c);
            stack.extend_from_slice(&self.children[c]);
        }
        out
    }
}

/// One term `c · t^power · e^{2πi t freq}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub coeff: Complex64,
    pub power: u32,
    pub freq: f64,
}

/// Finite sum of [`Term`]s, kept merged and sorted by (power, frequency).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ExpPoly {
    terms: Vec<Term>,
}

impl ExpPoly {
    pub fn zero() -> Self {
        ExpPoly { terms: Vec::new() }
    }
    pub fn constant(c: Complex64) -> Self {
        Self::from_terms(vec![Term { coeff: c, power: 0, freq: 0.0 }])
    }
    pub fn one() -> Self {
        Self::constant(Complex64::new(1.0, 0.0))
    }
    pub fn from_terms(terms: Vec<Term>) -> Self {
        let mut p = ExpPoly { terms };
        p.normalize();
        p
    }
    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    fn normalize(&mut self) {
        self.terms.sort_by(|a, b| a.power.cmp(&b.power).then(a.freq.partial_cmp(&b.freq).unwrap()));
        let mut out: Vec<Term> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            match out.last_mut() {
                Some(l) if l.power == t.power && (l.freq - t.freq).abs() < FREQ_TOL => l.coeff += t.coeff,
                _ => out.push(t),
            }
        }
        out.retain(|t| t.coeff != Complex64::new(0.0, 0.0));
        self.terms = out;
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|x| x.coeff * t.powi(x.power as i32) * Complex64::from_polar(1.0, 2.0 * PI * x.freq * t))
            .sum()
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self::from_terms(self.terms.iter().map(|t| Term { coeff: t.coeff * s, ..*t }).collect())
    }

    /// `∫_0^t e^{2πi s ν} p(s) ds` as a new exponential polynomial in `t`.
    pub fn primitive(&self, nu: f64) -> Self {
        let mut out = Vec::new();
        for term in &self.terms {
            let f = term.freq + nu;
            let a = term.power;
            if f.abs() < FREQ_TOL {
                out.push(Term { coeff: term.coeff / (a as f64 + 1.0), power: a + 1, freq: 0.0 });
                continue;
            }
            // ∫_0^t s^a e^{βs} ds = e^{βt} Σ_j (−1)^j a!/(a−j)! t^{a−j}/β^{j+1} − (−1)^a a!/β^{a+1}
            let beta = Complex64::new(0.0, 2.0 * PI * f);
            let mut falling = 1.0;
            let mut bpow = beta;
            for j in 0..=a {
                let sgn = if j % 2 == 0 { 1.0 } else { -1.0 };
                out.push(Term { coeff: term.coeff * sgn * falling / bpow, power: a - j, freq: f });
                if j < a {
                    falling *= (a - j) as f64;
                    bpow *= beta;
                }
            }
            let sgn = if a % 2 == 0 { 1.0 } else { -1.0 };
            out.push(Term { coeff: -term.coeff * sgn * falling / bpow, power: 0, freq: 0.0 });
        }
        Self::from_terms(out)
    }
}

impl Add for &ExpPoly {
    type Output = ExpPoly;
    fn add(self, o: &ExpPoly) -> ExpPoly {
        let mut v = self.terms.clone();
        v.extend_from_slice(&o.terms);
        ExpPoly::from_terms(v)
    }
}

impl Mul for &ExpPoly {
    type Output = ExpPoly;
    fn mul(self, o: &ExpPoly) -> ExpPoly {
        let mut v = Vec::with_capacity(self.terms.len() * o.terms.len());
        for a in &self.terms {
            for b in &o.terms {
                v.push(Term { coeff: a.coeff * b.coeff, power: a.power + b.power, freq: a.freq + b.freq });
            }
        }
        ExpPoly::from_terms(v)
    }
}

/// The kernel `Θ_t[G](ω)` as an exponential polynomial in `t`.
pub fn theta(g: &OrderedForest, omega: &[f64]) -> Result<ExpPoly> {
    if omega.len() != g.len() {
        return Err(Error::DimensionMismatch { expected: g.len(), found: omega.len() });
    }
    fn rec(g: &OrderedForest, omega: &[f64], i: usize) -> ExpPoly {
        let mut prod = ExpPoly::one();
        for &c in g.children(i) {
            prod = &prod * &rec(g, omega, c);
        }
        prod.primitive(omega[i])
    }
    let mut out = ExpPoly::one();
    for r in g.roots() {
        out = &out * &rec(g, omega, r);
    }
    Ok(out)
}

/// Number of linear extensions of the ancestry order: `n! / Π subtree sizes`.
pub fn linear_extension_count(g: &OrderedForest) -> u128 {
    let n = g.len() as u128;
    let mut num: u128 = (1..=n).product::<u128>().max(1);
    // Divide progressively to stay within range; the quotient is always an integer.
    let mut den: u128 = 1;
    for i in 0..g.len() {
        den *= g.subtree_size(i) as u128;
        let gcd = gcd(num, den);
        num /= gcd;
        den /= gcd;
    }
    num / den
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Largest forest (in non-root nodes) for which the bound is evaluated exhaustively.
pub const DECAY_BOUND_MAX_FREE: usize = 22;

/// `t^n · max_μ Π_g 1/⟨t μ(ω)_g⟩` with `μ(ω)_g = ω_g + Σ_{strict descendants m} μ_m ω_m`,
/// `μ` ranging over `{0,1}` on the non-root nodes and `⟨x⟩ = sqrt(1 + x²)`.
pub fn decay_bound(g: &OrderedForest, omega: &[f64], t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Validation("decay bound needs t > 0".into()));
    }
    if omega.len() != g.len() {
        return Err(Error::DimensionMismatch { expected: g.len(), found: omega.len() });
    }
    let free: Vec<usize> = (0..g.len()).filter(|&i| g.parent(i).is_some()).collect();
    if free.len() > DECAY_BOUND_MAX_FREE {
        return Err(Error::Budget(format!("decay bound over 2^{} sign patterns", free.len())));
    }
    let desc: Vec<Vec<usize>> = (0..g.len()).map(|i| g.descendants(i)).collect();
    let mut mu = vec![0.0; g.len()];
    let mut best: f64 = 0.0;
    for mask in 0u64..(1u64 << free.len()) {
        for (j, &i) in free.iter().enumerate() {
            mu[i] = ((mask >> j) & 1) as f64;
        }
        let mut prod = 1.0;
        for i in 0..g.len() {
            let m = omega[i] + desc[i].iter().map(|&d| mu[d] * omega[d]).sum::<f64>();
            prod /= (1.0 + (t * m).powi(2)).sqrt();
        }
        best = best.max(prod);
    }
    Ok(t.powi(g.len() as i32) * best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::enumerate_couples;
    use crate::quad::gauss_legendre_on;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_forest(n: usize, rng: &mut ChaCha8Rng) -> OrderedForest {
        let parent = (0..n).map(|i| if i == 0 || rng.random_bool(0.3) { None } else { Some(rng.random_range(0..i)) }).collect();
        OrderedForest::new(parent).unwrap()
    }

    /// Nested Gauss-Legendre evaluation of the simplex integral.
    fn direct(g: &OrderedForest, omega: &[f64], t: f64) -> Complex64 {
        fn node(g: &OrderedForest, omega: &[f64], i: usize, s: f64) -> Complex64 {
            gauss_legendre_on(16, 0.0, s)
                .into_iter()
                .map(|(u, w)| {
                    let mut v = Complex64::from_polar(w, 2.0 * PI * omega[i] * u);
                    for &c in g.children(i) {
                        v *= node(g, omega, c, u);
                    }
                    v
                })
                .sum()
        }
        g.roots().into_iter().map(|r| node(g, omega, r, t)).product()
    }

    #[test]
    fn single_node_closed_form() {
        let g = OrderedForest::chain(1);
        for &w in &[0.0, 0.3, -1.7] {
            let th = theta(&g, &[w]).unwrap();
            for &t in &[0.5, 1.0, 2.3] {
                let exact = if w == 0.0 {
                    Complex64::new(t, 0.0)
                } else {
                    (Complex64::from_polar(1.0, 2.0 * PI * w * t) - 1.0) / Complex64::new(0.0, 2.0 * PI * w)
                };
                assert!((th.eval(t) - exact).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn zero_frequency_volumes() {
        let c2 = theta(&OrderedForest::chain(2), &[0.0, 0.0]).unwrap();
        assert!((c2.eval(1.7) - Complex64::new(1.7f64.powi(2) / 2.0, 0.0)).norm() < 1e-13);
        let star = OrderedForest::new(vec![None, Some(0), Some(0), Some(0)]).unwrap();
        let s = theta(&star, &[0.0; 4]).unwrap();
        assert!((s.eval(2.0) - Complex64::new(16.0 / 4.0, 0.0)).norm() < 1e-12);
        assert_eq!(linear_extension_count(&star), 6);
    }

    #[test]
    fn extension_counts() {
        assert_eq!(linear_extension_count(&OrderedForest::chain(6)), 1);
        assert_eq!(linear_extension_count(&OrderedForest::antichain(6)), 720);
        let (f, _) = OrderedForest::from_couple(&enumerate_couples(1).unwrap()[0]);
        assert_eq!(linear_extension_count(&f), 2);
        // Brute-force count over all orderings.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let n = rng.random_range(1..=6);
            let g = random_forest(n, &mut rng);
            let mut perm: Vec<usize> = (0..n).collect();
            let mut count = 0;
            loop {
                let mut pos = vec![0; n];
                for (k, &i) in perm.iter().enumerate() {
                    pos[i] = k;
                }
                count += (0..n).all(|i| g.parent(i).is_none_or(|p| pos[p] < pos[i])) as u128;
                if !crate::combinatorics::next_permutation(&mut perm) {
                    break;
                }
            }
            assert_eq!(linear_extension_count(&g), count);
        }
    }

    #[test]
    fn theta_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..25 {
            let n = rng.random_range(1..=4);
            let g = random_forest(n, &mut rng);
            let mut omega: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            if rng.random_bool(0.3) {
                // Force an exactly resonant partial sum.
                omega[0] = 0.0;
            }
            let th = theta(&g, &omega).unwrap();
            let t = rng.random_range(0.3..1.5);
            assert!((th.eval(t) - direct(&g, &omega, t)).norm() < 1e-9);
        }
    }

    #[test]
    fn resonant_primitive_raises_power() {
        // Child frequency cancels the parent frequency: secular t^2 term appears.
        let g = OrderedForest::chain(2);
        let th = theta(&g, &[1.0, -1.0]).unwrap();
        assert!(th.terms().iter().any(|t| t.power == 1 && t.freq == 0.0));
        assert!(th.terms().iter().all(|t| t.coeff.re.is_finite() && t.coeff.im.is_finite()));
    }

    #[test]
    fn scaling_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.random_range(1..=5);
            let g = random_forest(n, &mut rng);
            let omega: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = rng.random_range(0.2..3.0);
            let lhs = theta(&g, &omega).unwrap().eval(t);
            let scaled: Vec<f64> = omega.iter().map(|w| w * t).collect();
            let rhs = theta(&g, &scaled).unwrap().eval(1.0) * t.powi(n as i32);
            assert!((lhs - rhs).norm() < 1e-10 * (1.0 + lhs.norm()));
        }
    }

    #[test]
    fn zero_frequency_equals_extension_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let n = rng.random_range(1..=6);
            let g = random_forest(n, &mut rng);
            let v = theta(&g, &vec![0.0; n]).unwrap().eval(1.0);
            let fact: f64 = (1..=n).map(|x| x as f64).product();
            assert!((v.re - linear_extension_count(&g) as f64 / fact).abs() < 1e-14);
        }
    }

    #[test]
    fn couple_forest_factorizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let c = Couple::random(2, &mut rng);
            let (f, ids) = OrderedForest::from_couple(&c);
            let omega: Vec<f64> = (0..f.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (fp, idp) = OrderedForest::from_tree(c.plus_tree());
            let (fm, idm) = OrderedForest::from_tree(c.minus_tree());
            let wp: Vec<f64> = idp.iter().map(|g| omega[ids.iter().position(|x| x == g).unwrap()]).collect();
            let wm: Vec<f64> =
                idm.iter().map(|g| omega[ids.iter().position(|x| *x == g + c.plus_len()).unwrap()]).collect();
            let a = theta(&f, &omega).unwrap().eval(0.8);
            let b = theta(&fp, &wp).unwrap().eval(0.8) * theta(&fm, &wm).unwrap().eval(0.8);
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn decay_bound_examples() {
        let g = OrderedForest::new(vec![None, Some(0), Some(0)]).unwrap();
        assert!((decay_bound(&g, &[0.0; 3], 1.7).unwrap() - 1.7f64.powi(3)).abs() < 1e-12);
        let one = OrderedForest::chain(1);
        for &w in &[0.1, 1.0, 10.0, 100.0] {
            for &t in &[0.5, 1.0, 4.0] {
                let exact = theta(&one, &[w]).unwrap().eval(t).norm();
                let b = decay_bound(&one, &[w], t).unwrap();
                assert!(exact <= 2.0 * b);
                assert!(exact <= t.min(1.0 / (PI * w)) + 1e-12);
            }
        }
    }

    #[test]
    fn decay_bound_fitted_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let n = rng.random_range(1..=5);
            let g = random_forest(n, &mut rng);
            let omega: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let t = rng.random_range(0.5..4.0);
            let v = theta(&g, &omega).unwrap().eval(t).norm();
            let b = decay_bound(&g, &omega, t).unwrap();
            worst = worst.max((v / b).powf(1.0 / n as f64));
        }
        assert!(worst <= 4.0, "fitted constant {worst}");
    }
}
