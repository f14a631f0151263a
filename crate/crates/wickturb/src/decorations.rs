//! Decorations of trees and couples, resonance factors, the Λ coordinates of regular
//! couples, and exhaustive lattice enumeration with quasi-resonance counting.

use crate::combinatorics::{is_regular, Couple, SignedTernaryTree};
use crate::error::{Error, Result};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Maximum lattice dimension supported by the integer kernels.
pub const MAX_DIM: usize = 4;

/// Integer lattice vector; only the first `d` entries are used.
pub type IVec = [i64; MAX_DIM];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecorationKind {
    /// Signed sums: `ι_b v_b = Σ ι_n v_n` over the children.
    D,
    /// Plain sums: `v_b = Σ v_n`.
    C,
}

/// Node values indexed by node id (tree-local id for trees, global id for couples).
#[derive(Clone, Debug, PartialEq)]
pub struct Decoration {
    pub values: Vec<Vec<f64>>,
    pub kind: DecorationKind,
    pub dim: usize,
}

/// Tree or couple that a decoration lives on.
#[derive(Clone, Copy, Debug)]
pub enum Host<'a> {
    Tree(&'a SignedTernaryTree),
    Couple(&'a Couple),
}

impl Host<'_> {
    fn len(&self) -> usize {
        match self {
            Host::Tree(t) => t.len(),
            Host::Couple(c) => c.num_nodes(),
        }
    }
    fn sign(&self, g: usize) -> i8 {
        match self {
            Host::Tree(t) => t.node_sign(g),
            Host::Couple(c) => c.sign(g),
        }
    }
    fn children(&self, g: usize) -> Option<[usize; 3]> {
        match self {
            Host::Tree(t) => t.children(g),
            Host::Couple(c) => c.children(g),
        }
    }
}

/// Lattice `L^{-1} Z^d` truncated to the closed Euclidean ball of radius `radius`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeSpec {
    pub l: f64,
    pub d: usize,
    pub radius: f64,
}

impl LatticeSpec {
    pub fn new(l: f64, d: usize, radius: f64) -> Result<Self> {
        if !(l > 0.0) || d == 0 || d > MAX_DIM || !(radius > 0.0) {
            return Err(Error::Validation(format!("invalid lattice spec L={l} d={d} R={radius}")));
        }
        Ok(LatticeSpec { l, d, radius })
    }
    /// Largest admissible squared integer norm `|m|^2` for `m / L` in the ball.
    pub fn max_norm2(&self) -> i64 {
        let r = self.radius * self.l;
        (r * r + 1e-9).floor() as i64
    }
    /// Integer points of the ball, in lexicographic order.
    pub fn ball(&self) -> Vec<IVec> {
        let r2 = self.max_norm2();
        let r = (r2 as f64).sqrt().floor() as i64;
        let mut out = Vec::new();
        let mut cur = [0i64; MAX_DIM];
        fn rec(j: usize, d: usize, r: i64, r2: i64, acc: i64, cur: &mut IVec, out: &mut Vec<IVec>) {
            if j == d {
                out.push(*cur);
                return;
            }
            for m in -r..=r {
                let a = acc + m * m;
                if a <= r2 {
                    cur[j] = m;
                    rec(j + 1, d, r, r2, a, cur, out);
                }
            }
            cur[j] = 0;
        }
        rec(0, self.d, r, r2, 0, &mut cur, &mut out);
        out
    }
    pub fn to_real(&self, m: &IVec) -> Vec<f64> {
        m[..self.d].iter().map(|&x| x as f64 / self.l).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Ω = ½(|k1−k2+k3|² − |k1|² + |k2|² − |k3|²)`, evaluated as `(k−k1)·(k−k3)`.
pub fn resonance_factor(k1: &[f64], k2: &[f64], k3: &[f64]) -> Result<f64> {
    if k2.len() != k1.len() {
        return Err(Error::DimensionMismatch { expected: k1.len(), found: k2.len() });
    }
    if k3.len() != k1.len() {
        return Err(Error::DimensionMismatch { expected: k1.len(), found: k3.len() });
    }
    let a: Vec<f64> = k2.iter().zip(k3).map(|(x, y)| x - y).collect();
    let b: Vec<f64> = k2.iter().zip(k1).map(|(x, y)| x - y).collect();
    // k − k1 = k3 − k2 and k − k3 = k1 − k2.
    Ok(dot(&a, &b))
}

/// Resonance value at every branching node: `ι_b (v_b − v_{b1})·(v_b − v_{b3})`.
/// Returned as (node id, value) in increasing node order.
pub fn resonance_vector(host: Host<'_>, dec: &Decoration) -> Result<Vec<(usize, f64)>> {
    if dec.kind != DecorationKind::D {
        return Err(Error::Validation("resonance needs a D-kind decoration".into()));
    }
    let mut out = Vec::new();
    for g in 0..host.len() {
        if let Some([a, _, c]) = host.children(g) {
            let v = &dec.values[g];
            let x: Vec<f64> = v.iter().zip(&dec.values[a]).map(|(p, q)| p - q).collect();
            let y: Vec<f64> = v.iter().zip(&dec.values[c]).map(|(p, q)| p - q).collect();
            out.push((g, host.sign(g) as f64 * dot(&x, &y)));
        }
    }
    Ok(out)
}

/// Extend leaf values to the whole host by bottom-up sums.
pub fn extend_leaf_assignment(
    host: Host<'_>,
    leaf_values: &BTreeMap<usize, Vec<f64>>,
    kind: DecorationKind,
) -> Result<Decoration> {
    let n = host.len();
    let dim = leaf_values.values().next().map(|v| v.len()).unwrap_or(0);
    if let Some(v) = leaf_values.values().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
    }
    let mut values: Vec<Option<Vec<f64>>> = vec![None; n];
    for g in 0..n {
        if host.children(g).is_none() {
            let v = leaf_values.get(&g).ok_or_else(|| Error::Validation(format!("leaf {g} has no value")))?;
            values[g] = Some(v.clone());
        } else if leaf_values.contains_key(&g) {
            return Err(Error::NotALeaf(g));
        }
    }
    if let Host::Couple(c) = host {
        for (p, (a, b)) in c.pairs().into_iter().enumerate() {
            if values[a] != values[b] {
                return Err(Error::PairingViolation(p));
            }
        }
    }
    // Pre-order arenas: children have larger ids than parents within a tree.
    for g in (0..n).rev() {
        if let Some(ch) = host.children(g) {
            let mut acc = vec![0.0; dim];
            let sb = host.sign(g) as f64;
            for c in ch {
                let w = match kind {
                    DecorationKind::D => host.sign(c) as f64 * sb,
                    DecorationKind::C => 1.0,
                };
                for (a, x) in acc.iter_mut().zip(values[c].as_ref().unwrap()) {
                    *a += w * x;
                }
            }
            values[g] = Some(acc);
        }
    }
    Ok(Decoration { values: values.into_iter().map(|v| v.unwrap()).collect(), kind, dim })
}

/// D-decoration of a couple from one value per pair.
pub fn decoration_from_pairs(c: &Couple, pair_values: &[Vec<f64>]) -> Result<Decoration> {
    if pair_values.len() != c.num_pairs() {
        return Err(Error::Validation("one value per pair required".into()));
    }
    let mut m = BTreeMap::new();
    for (p, (a, b)) in c.pairs().into_iter().enumerate() {
        m.insert(a, pair_values[p].clone());
        m.insert(b, pair_values[p].clone());
    }
    extend_leaf_assignment(Host::Couple(c), &m, DecorationKind::D)
}

/// Integer coefficients `C[g][p]` with `v_g = Σ_p C[g][p] v_p` for every D-decoration
/// of the couple, in terms of the pair values.
pub fn node_pair_coefficients(c: &Couple) -> Vec<Vec<i64>> {
    let pairs = c.pairs();
    (0..c.num_nodes())
        .map(|g| {
            let sg = c.sign(g) as i64;
            pairs
                .iter()
                .map(|&(a, b)| {
                    if c.is_under(a, g) {
                        sg * c.sign(a) as i64
                    } else if c.is_under(b, g) {
                        sg * c.sign(b) as i64
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect()
}

/// Plus-tree branching nodes of a regular couple, one per irreducible factor, in pre-order.
pub fn coordinate_nodes(c: &Couple) -> Result<Vec<usize>> {
    if !is_regular(c) {
        return Err(Error::NonRegular);
    }
    Ok((0..c.plus_len()).filter(|&g| !c.is_leaf(g)).collect())
}

/// Inverse of the Λ map: the D-decoration with both roots equal to `k` whose
/// coordinates `ι_b x_b = v_b − v_{b1}`, `ι_b y_b = v_b − v_{b3}` at the plus-tree
/// branching nodes are `z`.
pub fn change_of_variables(c: &Couple, k: &[f64], z: &[(Vec<f64>, Vec<f64>)]) -> Result<Decoration> {
    let nodes = coordinate_nodes(c)?;
    if z.len() != nodes.len() {
        return Err(Error::Validation(format!("expected {} coordinate pairs, got {}", nodes.len(), z.len())));
    }
    let d = k.len();
    let mut vals: Vec<Vec<f64>> = vec![vec![0.0; d]; c.num_nodes()];
    vals[0] = k.to_vec();
    for (i, &b) in nodes.iter().enumerate() {
        let [c1, c2, c3] = c.children(b).unwrap();
        let s = c.sign(b) as f64;
        let (x, y) = (&z[i].0, &z[i].1);
        if x.len() != d || y.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: x.len().min(y.len()) });
        }
        let vb = vals[b].clone();
        vals[c1] = (0..d).map(|j| vb[j] - s * x[j]).collect();
        vals[c3] = (0..d).map(|j| vb[j] - s * y[j]).collect();
        vals[c2] = (0..d).map(|j| vb[j] - s * (x[j] + y[j])).collect();
    }
    let pair_values: Vec<Vec<f64>> = c.pairs().iter().map(|&(a, _)| vals[a].clone()).collect();
    decoration_from_pairs(c, &pair_values)
}

/// Forward Λ map: coordinates of a D-decoration at the plus-tree branching nodes.
pub fn coords_from_decoration(c: &Couple, dec: &Decoration) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let nodes = coordinate_nodes(c)?;
    Ok(nodes
        .iter()
        .map(|&b| {
            let [c1, _, c3] = c.children(b).unwrap();
            let s = c.sign(b) as f64;
            let x = dec.values[b].iter().zip(&dec.values[c1]).map(|(p, q)| s * (p - q)).collect();
            let y = dec.values[b].iter().zip(&dec.values[c3]).map(|(p, q)| s * (p - q)).collect();
            (x, y)
        })
        .collect())
}

/// Lattice decoration in integer coordinates (`value = m / L`), indexed by global node id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeDecoration {
    pub ints: Vec<IVec>,
}

impl LatticeDecoration {
    pub fn to_decoration(&self, spec: &LatticeSpec) -> Decoration {
        Decoration { values: self.ints.iter().map(|m| spec.to_real(m)).collect(), kind: DecorationKind::D, dim: spec.d }
    }
}

/// Precomputed enumeration plan: node values as linear forms in the free pair values
/// and `k`, plus the depth at which each node and each resonance becomes known.
#[derive(Clone, Debug)]
struct Plan {
    d: usize,
    r2: i64,
    /// `coef[g][j]` multiplies the j-th free pair value (in enumeration order).
    coef: Vec<Vec<i64>>,
    kcoef: Vec<i64>,
    /// Nodes whose value becomes known once free values `0..=j` are set. Index 0
    /// holds nodes fixed by `k` alone; index j+1 those known at depth j.
    known_at: Vec<Vec<usize>>,
    /// Branching nodes whose resonance becomes checkable at the same stages.
    res_at: Vec<Vec<usize>>,
    children: Vec<Option<[usize; 3]>>,
    signs: Vec<i64>,
    nfree: usize,
}

// Only leaf (pair) values are truncated to the ball; internal values are sums of
// truncated modes and may leave it.

impl Plan {
    fn new(c: &Couple, spec: &LatticeSpec) -> Plan {
        let full = node_pair_coefficients(c);
        let pairs = c.pairs();
        let np = pairs.len();
        let p0 = (0..np).find(|&p| c.sign(pairs[p].0) > 0).expect("a positive plus leaf exists");
        let free: Vec<usize> = (0..np).filter(|&p| p != p0).collect();
        // v_{p0} = k − Σ_{p≠p0} ι_{p+} v_p
        let sub = |row: &Vec<i64>| -> (Vec<i64>, i64) {
            let a = row[p0];
            let f: Vec<i64> = free.iter().map(|&p| row[p] - a * c.sign(pairs[p].0) as i64).collect();
            (f, a)
        };
        let rows: Vec<(Vec<i64>, i64)> = full.iter().map(sub).collect();
        let nfree = free.len();
        // Order the free pairs so that as many nodes as possible are known early.
        let order = best_order(&rows, nfree);
        let coef: Vec<Vec<i64>> = rows.iter().map(|(f, _)| order.iter().map(|&j| f[j]).collect()).collect();
        let kcoef: Vec<i64> = rows.iter().map(|r| r.1).collect();
        let stage = |g: usize| -> usize { coef[g].iter().rposition(|&x| x != 0).map(|j| j + 1).unwrap_or(0) };
        let n = c.num_nodes();
        let mut known_at = vec![Vec::new(); nfree + 1];
        for g in 0..n {
            known_at[stage(g)].push(g);
        }
        let children: Vec<Option<[usize; 3]>> = (0..n).map(|g| c.children(g)).collect();
        let mut res_at = vec![Vec::new(); nfree + 1];
        for g in 0..n {
            if let Some([a, _, b]) = children[g] {
                res_at[stage(g).max(stage(a)).max(stage(b))].push(g);
            }
        }
        let signs = (0..n).map(|g| c.sign(g) as i64).collect();
        Plan { d: spec.d, r2: spec.max_norm2(), coef, kcoef, known_at, res_at, children, signs, nfree }
    }
}

fn best_order(rows: &[(Vec<i64>, i64)], nfree: usize) -> Vec<usize> {
    let identity: Vec<usize> = (0..nfree).collect();
    if nfree > 7 {
        return identity;
    }
    let score = |ord: &[usize]| -> usize {
        let mut pos = vec![0; nfree];
        for (i, &j) in ord.iter().enumerate() {
            pos[j] = i;
        }
        rows.iter()
            .map(|(f, _)| f.iter().enumerate().filter(|(_, &x)| x != 0).map(|(j, _)| pos[j] + 1).max().unwrap_or(0))
            .sum()
    };
    let mut best = identity.clone();
    let mut best_s = score(&best);
    let mut cur = identity;
    while next_perm(&mut cur) {
        let s = score(&cur);
        if s < best_s {
            best_s = s;
            best = cur.clone();
        }
    }
    best
}

fn next_perm(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Integer resonance bounds: node `g` passes iff its integer resonance `w = Ω L²`
/// lies in `[lo, hi]`.
#[derive(Clone, Debug)]
struct ResFilter {
    bounds: Vec<(i64, i64)>,
}

/// Stack-based depth-first enumerator over the free pair values.
struct Walker<'p> {
    plan: &'p Plan,
    ball: &'p [IVec],
    k: IVec,
    filter: Option<&'p ResFilter>,
    vals: Vec<IVec>,
    free: Vec<IVec>,
    cursor: Vec<usize>,
    depth: usize,
    first_range: (usize, usize),
    started: bool,
    dead: bool,
}

impl<'p> Walker<'p> {
    fn new(plan: &'p Plan, ball: &'p [IVec], k: IVec, filter: Option<&'p ResFilter>, first_range: (usize, usize)) -> Self {
        let n = plan.coef.len();
        let mut w = Walker {
            plan,
            ball,
            k,
            filter,
            vals: vec![[0; MAX_DIM]; n],
            free: vec![[0; MAX_DIM]; plan.nfree],
            cursor: vec![0; plan.nfree],
            depth: 0,
            first_range,
            started: false,
            dead: false,
        };
        if plan.nfree > 0 {
            w.cursor[0] = first_range.0;
        }
        w.dead = !w.settle(0);
        w
    }

    /// Fill and check everything that becomes known at `stage`.
    fn settle(&mut self, stage: usize) -> bool {
        let p = self.plan;
        for &g in &p.known_at[stage] {
            let mut v = [0i64; MAX_DIM];
            for (t, vt) in v.iter_mut().enumerate().take(p.d) {
                let mut s = p.kcoef[g] * self.k[t];
                for j in 0..stage {
                    s += p.coef[g][j] * self.free[j][t];
                }
                *vt = s;
            }
            if p.children[g].is_none() {
                let n2: i64 = v[..p.d].iter().map(|x| x * x).sum();
                if n2 > p.r2 {
                    return false;
                }
            }
            self.vals[g] = v;
        }
        if let Some(f) = self.filter {
            for &g in &p.res_at[stage] {
                let [a, _, b] = p.children[g].unwrap();
                let (vb, va, vc) = (&self.vals[g], &self.vals[a], &self.vals[b]);
                let mut w = 0i64;
                for t in 0..p.d {
                    w += (vb[t] - va[t]) * (vb[t] - vc[t]);
                }
                w *= p.signs[g];
                let (lo, hi) = f.bounds[g];
                if w < lo || w > hi {
                    return false;
                }
            }
        }
        true
    }

    fn advance(&mut self) -> bool {
        if self.dead {
            return false;
        }
        let nf = self.plan.nfree;
        if nf == 0 {
            if self.started {
                return false;
            }
            self.started = true;
            return true;
        }
        loop {
            let j = self.depth;
            let end = if j == 0 { self.first_range.1 } else { self.ball.len() };
            if self.cursor[j] >= end {
                if j == 0 {
                    self.dead = true;
                    return false;
                }
                self.depth -= 1;
                continue;
            }
            self.free[j] = self.ball[self.cursor[j]];
            self.cursor[j] += 1;
            if !self.settle(j + 1) {
                continue;
            }
            if j + 1 == nf {
                return true;
            }
            self.depth = j + 1;
            self.cursor[j + 1] = 0;
        }
    }
}

/// Streaming iterator over lattice D-decorations of a couple with root value `k`.
pub struct LatticeDecorationIter {
    plan: Box<Plan>,
    ball: Box<[IVec]>,
    k: IVec,
    state: Option<WalkerState>,
}

struct WalkerState {
    vals: Vec<IVec>,
    free: Vec<IVec>,
    cursor: Vec<usize>,
    depth: usize,
    started: bool,
    dead: bool,
}

impl Iterator for LatticeDecorationIter {
    type Item = LatticeDecoration;
    fn next(&mut self) -> Option<LatticeDecoration> {
        let st = self.state.take()?;
        let range = (0, self.ball.len());
        let mut w = Walker {
            plan: &self.plan,
            ball: &self.ball,
            k: self.k,
            filter: None,
            vals: st.vals,
            free: st.free,
            cursor: st.cursor,
            depth: st.depth,
            first_range: range,
            started: st.started,
            dead: st.dead,
        };
        let ok = w.advance();
        let out = if ok { Some(LatticeDecoration { ints: w.vals.clone() }) } else { None };
        self.state = Some(WalkerState {
            vals: w.vals,
            free: w.free,
            cursor: w.cursor,
            depth: w.depth,
            started: w.started,
            dead: w.dead,
        });
        out
    }
}

fn to_ivec(k: &[i64], d: usize) -> Result<IVec> {
    if k.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: k.len() });
    }
    let mut v = [0i64; MAX_DIM];
    v[..d].copy_from_slice(k);
    Ok(v)
}

/// Every D-decoration of `c` with pair values in the lattice ball and both roots equal
/// to `k / L` (`k` given in integer coordinates).
pub fn enumerate_lattice_decorations(c: &Couple, k: &[i64], spec: &LatticeSpec) -> Result<LatticeDecorationIter> {
    let kv = to_ivec(k, spec.d)?;
    let plan = Box::new(Plan::new(c, spec));
    let ball: Box<[IVec]> = spec.ball().into_boxed_slice();
    let w = Walker::new(&plan, &ball, kv, None, (0, ball.len()));
    let state = WalkerState { vals: w.vals, free: w.free, cursor: w.cursor, depth: w.depth, started: w.started, dead: w.dead };
    Ok(LatticeDecorationIter { plan, ball, k: kv, state: Some(state) })
}

/// Default cap on the nominal search size `|ball|^free` for full decoration sweeps.
pub const DEFAULT_SWEEP_LIMIT: u128 = 100_000_000_000;

/// Fold over every lattice decoration (see [`enumerate_lattice_decorations`]) in
/// parallel over the first free pair value. `visit` receives node values in integer
/// coordinates, indexed by global node id.
pub fn fold_lattice_decorations<A, I, V, M>(
    c: &Couple,
    k: &[i64],
    spec: &LatticeSpec,
    limit: u128,
    init: I,
    visit: V,
    merge: M,
) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    V: Fn(&mut A, &[IVec]) + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    let kv = to_ivec(k, spec.d)?;
    let plan = Plan::new(c, spec);
    let ball = spec.ball();
    let nominal = (ball.len() as u128).checked_pow(plan.nfree as u32).unwrap_or(u128::MAX);
    if nominal > limit {
        return Err(Error::Capacity { what: "lattice decoration sweep".into(), needed: nominal, limit });
    }
    if plan.nfree == 0 {
        let mut acc = init();
        let mut w = Walker::new(&plan, &ball, kv, None, (0, 0));
        if w.advance() {
            visit(&mut acc, &w.vals);
        }
        return Ok(acc);
    }
    // Blocks depend only on the ball size, and partial results merge in block order,
    // so floating-point accumulations do not depend on the thread count.
    let block = ball.len().div_ceil(256).max(1);
    let parts: Vec<A> = (0..ball.len().div_ceil(block))
        .into_par_iter()
        .map(|b| {
            let mut acc = init();
            let mut w = Walker::new(&plan, &ball, kv, None, (b * block, ((b + 1) * block).min(ball.len())));
            while w.advance() {
                visit(&mut acc, &w.vals);
            }
            acc
        })
        .collect();
    Ok(parts.into_iter().fold(init(), merge))
}

/// Closed interval, used for the per-node resonance window.
pub type Interval = (f64, f64);

/// Default cap on the nominal search size `|ball|^free` for counting.
pub const DEFAULT_COUNT_LIMIT: u128 = 1_000_000_000_000;

/// Number of lattice decorations with `γ Ω_b ∈ Q_b` at every branching node `b`.
///
/// `q` holds one interval per branching node (in increasing node order) or a single
/// interval used for all of them.
pub fn count_quasi_resonant(c: &Couple, k: &[i64], spec: &LatticeSpec, q: &[Interval], gamma: f64) -> Result<u64> {
    count_quasi_resonant_with_limit(c, k, spec, q, gamma, DEFAULT_COUNT_LIMIT)
}

pub fn count_quasi_resonant_with_limit(
    c: &Couple,
    k: &[i64],
    spec: &LatticeSpec,
    q: &[Interval],
    gamma: f64,
    limit: u128,
) -> Result<u64> {
    let kv = to_ivec(k, spec.d)?;
    let branching = c.branching();
    if q.len() != 1 && q.len() != branching.len() {
        return Err(Error::Validation(format!("need 1 or {} intervals, got {}", branching.len(), q.len())));
    }
    let plan = Plan::new(c, spec);
    let ball = spec.ball();
    let nominal = (ball.len() as u128).checked_pow(plan.nfree as u32).unwrap_or(u128::MAX);
    if nominal > limit {
        return Err(Error::Capacity { what: "quasi-resonant scan".into(), needed: nominal, limit });
    }
    let l2 = spec.l * spec.l;
    let mut bounds = vec![(i64::MIN, i64::MAX); c.num_nodes()];
    for (i, &g) in branching.iter().enumerate() {
        let (a, b) = if q.len() == 1 { q[0] } else { q[i] };
        bounds[g] = if gamma == 0.0 {
            if a <= 0.0 && 0.0 <= b {
                (i64::MIN, i64::MAX)
            } else {
                (1, 0)
            }
        } else {
            let (x, y) = (a * l2 / gamma, b * l2 / gamma);
            let (x, y) = if gamma > 0.0 { (x, y) } else { (y, x) };
            let lo = if x.is_finite() { (x - 1e-9).ceil() as i64 } else { i64::MIN };
            let hi = if y.is_finite() { (y + 1e-9).floor() as i64 } else { i64::MAX };
            (lo, hi)
        };
    }
    let filter = ResFilter { bounds };
    if plan.nfree == 0 {
        let mut w = Walker::new(&plan, &ball, kv, Some(&filter), (0, 0));
        return Ok(w.advance() as u64);
    }
    let total = (0..ball.len())
        .into_par_iter()
        .map(|i| {
            let mut w = Walker::new(&plan, &ball, kv, Some(&filter), (i, i + 1));
            let mut n = 0u64;
            while w.advance() {
                n += 1;
            }
            n
        })
        .sum();
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::{enumerate_couples, enumerate_regular_couples, irreducible_factorization};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rv(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn resonance_factor_examples() {
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        let e3 = [0.0, 0.0, 1.0];
        assert_eq!(resonance_factor(&e1, &e2, &e3).unwrap(), 1.0);
        assert_eq!(resonance_factor(&e2, &e2, &e3).unwrap(), 0.0);
        assert!(resonance_factor(&e1, &[0.0], &e3).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (a, b, c) = (rv(&mut rng, 3), rv(&mut rng, 3), rv(&mut rng, 3));
            let k: Vec<f64> = (0..3).map(|i| a[i] - b[i] + c[i]).collect();
            let n2 = |v: &[f64]| dot(v, v);
            let direct = 0.5 * (n2(&k) - n2(&a) + n2(&b) - n2(&c));
            assert!((direct - resonance_factor(&a, &b, &c).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn k1_resonance_example() {
        for c in enumerate_couples(1).unwrap() {
            let pl = c.plus_tree().leaves();
            let e = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
            let pv: Vec<Vec<f64>> = (0..3).map(|p| e[pl[p] - 1].clone()).collect();
            let dec = decoration_from_pairs(&c, &pv).unwrap();
            let r = resonance_vector(Host::Couple(&c), &dec).unwrap();
            assert_eq!(r[0], (0, 1.0));
            assert_eq!(r[1].1, -1.0);
        }
    }

    #[test]
    fn regular_factors_carry_opposite_resonances() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for c in enumerate_regular_couples(2).unwrap() {
            let pv: Vec<Vec<f64>> = (0..c.num_pairs()).map(|_| rv(&mut rng, 2)).collect();
            let dec = decoration_from_pairs(&c, &pv).unwrap();
            let r: BTreeMap<usize, f64> = resonance_vector(Host::Couple(&c), &dec).unwrap().into_iter().collect();
            for f in irreducible_factorization(&c).factors {
                assert_eq!(f.branching.len(), 2);
                let s = r[&f.branching[0]] + r[&f.branching[1]];
                assert!(s.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn extend_single_leaf_and_pairing_violation() {
        let t = SignedTernaryTree::from_shape("BBLLLLL", 1).unwrap();
        for l in t.leaves() {
            let mut m = BTreeMap::new();
            for x in t.leaves() {
                m.insert(x, vec![if x == l { 2.0 } else { 0.0 }]);
            }
            let dec = extend_leaf_assignment(Host::Tree(&t), &m, DecorationKind::D).unwrap();
            for g in 0..t.len() {
                let expect = if t.is_under(l, g) { 2.0 * (t.node_sign(l) * t.node_sign(g)) as f64 } else { 0.0 };
                assert_eq!(dec.values[g][0], expect);
            }
        }
        let c = &enumerate_couples(1).unwrap()[0];
        let mut m = BTreeMap::new();
        for (a, b) in c.pairs() {
            m.insert(a, vec![1.0]);
            m.insert(b, vec![1.0]);
        }
        let (a, _) = c.pairs()[1];
        m.insert(a, vec![3.0]);
        assert!(matches!(extend_leaf_assignment(Host::Couple(c), &m, DecorationKind::D), Err(Error::PairingViolation(1))));
    }

    #[test]
    fn bottom_up_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let c = Couple::random(3, &mut rng);
            let pv: Vec<Vec<f64>> = (0..c.num_pairs()).map(|_| rv(&mut rng, 3)).collect();
            let dec = decoration_from_pairs(&c, &pv).unwrap();
            let coef = node_pair_coefficients(&c);
            for g in 0..c.num_nodes() {
                for t in 0..3 {
                    let s: f64 = (0..c.num_pairs()).map(|p| coef[g][p] as f64 * pv[p][t]).sum();
                    assert!((s - dec.values[g][t]).abs() < 1e-12);
                }
            }
            assert_eq!(dec.values[0], dec.values[c.plus_len()]);
        }
    }

    #[test]
    fn lambda_roundtrip_and_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in 0..=3 {
            for c in enumerate_regular_couples(n).unwrap() {
                let k = rv(&mut rng, 2);
                let zero: Vec<(Vec<f64>, Vec<f64>)> = (0..n).map(|_| (vec![0.0; 2], vec![0.0; 2])).collect();
                let dec = change_of_variables(&c, &k, &zero).unwrap();
                assert!(dec.values.iter().all(|v| v == &k));
                let z: Vec<(Vec<f64>, Vec<f64>)> = (0..n).map(|_| (rv(&mut rng, 2), rv(&mut rng, 2))).collect();
                let dec = change_of_variables(&c, &k, &z).unwrap();
                assert_eq!(dec.values[c.plus_len()].len(), 2);
                for t in 0..2 {
                    assert!((dec.values[c.plus_len()][t] - k[t]).abs() < 1e-12);
                }
                let back = coords_from_decoration(&c, &dec).unwrap();
                for (a, b) in back.iter().zip(&z) {
                    for t in 0..2 {
                        assert!((a.0[t] - b.0[t]).abs() < 1e-12 && (a.1[t] - b.1[t]).abs() < 1e-12);
                    }
                }
                // Resonance at plus-tree branching nodes equals ι x·y.
                let r: BTreeMap<usize, f64> = resonance_vector(Host::Couple(&c), &dec).unwrap().into_iter().collect();
                for (i, b) in coordinate_nodes(&c).unwrap().into_iter().enumerate() {
                    let xy = c.sign(b) as f64 * dot(&z[i].0, &z[i].1);
                    assert!((r[&b] - xy).abs() < 1e-10);
                }
            }
        }
        let nonreg = enumerate_couples(2).unwrap().into_iter().find(|c| !is_regular(c)).unwrap();
        assert!(matches!(change_of_variables(&nonreg, &[0.0], &[]), Err(Error::NonRegular)));
    }

    fn int_det(mut m: Vec<Vec<i128>>) -> i128 {
        // Bareiss fraction-free elimination.
        let n = m.len();
        let mut sign = 1;
        let mut prev = 1i128;
        for i in 0..n {
            if m[i][i] == 0 {
                match (i + 1..n).find(|&r| m[r][i] != 0) {
                    Some(r) => {
                        m.swap(i, r);
                        sign = -sign;
                    }
                    None => return 0,
                }
            }
            for r in i + 1..n {
                for cc in i + 1..n {
                    m[r][cc] = (m[r][cc] * m[i][i] - m[r][i] * m[i][cc]) / prev;
                }
            }
            prev = m[i][i];
        }
        sign * m[n - 1][n - 1]
    }

    #[test]
    fn lambda_is_unimodular() {
        // Map coordinates (k = 0, scalar d = 1) to the pair values of all pairs but the
        // first positive one; the integer matrix must have determinant ±1.
        for n in 1..=3 {
            for c in enumerate_regular_couples(n).unwrap() {
                let pairs = c.pairs();
                let p0 = (0..pairs.len()).find(|&p| c.sign(pairs[p].0) > 0).unwrap();
                let free: Vec<usize> = (0..pairs.len()).filter(|&p| p != p0).collect();
                let mut cols = Vec::new();
                for j in 0..2 * n {
                    let z: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
                        .map(|i| (vec![(2 * i == j) as i32 as f64], vec![(2 * i + 1 == j) as i32 as f64]))
                        .collect();
                    let dec = change_of_variables(&c, &[0.0], &z).unwrap();
                    cols.push(free.iter().map(|&p| dec.values[pairs[p].0][0] as i128).collect::<Vec<_>>());
                }
                let m: Vec<Vec<i128>> = (0..2 * n).map(|r| (0..2 * n).map(|cc| cols[cc][r]).collect()).collect();
                assert_eq!(int_det(m).abs(), 1);
            }
        }
    }

    #[test]
    fn decoration_criterion_matches_ancestor_criterion() {
        use crate::combinatorics::conjugate_classes;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let n = rng.random_range(0..=4);
            let c = Couple::random(n, &mut rng);
            let coef = node_pair_coefficients(&c);
            let cc = conjugate_classes(&c);
            for a in 0..c.num_nodes() {
                for b in 0..c.num_nodes() {
                    assert_eq!(coef[a] == coef[b], cc.class_of[a] == cc.class_of[b], "{c} {a} {b}");
                }
            }
        }
    }

    #[test]
    fn lattice_enumeration_examples() {
        let spec = LatticeSpec::new(1.0, 1, 1.0).unwrap();
        let tr = Couple::trivial();
        assert_eq!(enumerate_lattice_decorations(&tr, &[0], &spec).unwrap().count(), 1);
        assert_eq!(enumerate_lattice_decorations(&tr, &[2], &spec).unwrap().count(), 0);
        for c in enumerate_couples(1).unwrap() {
            let all: Vec<LatticeDecoration> = enumerate_lattice_decorations(&c, &[0], &spec).unwrap().collect();
            assert_eq!(all.len(), 7);
            for dec in &all {
                let r = dec.to_decoration(&spec);
                let mut m = BTreeMap::new();
                for g in 0..c.num_nodes() {
                    if c.is_leaf(g) {
                        m.insert(g, r.values[g].clone());
                    }
                }
                assert_eq!(extend_leaf_assignment(Host::Couple(&c), &m, DecorationKind::D).unwrap(), r);
            }
        }
    }

    #[test]
    fn lattice_enumeration_matches_brute_force() {
        let spec = LatticeSpec::new(1.0, 2, 1.5).unwrap();
        let ball = spec.ball();
        for c in enumerate_couples(1).unwrap() {
            let mut brute = 0;
            for a in &ball {
                for b in &ball {
                    for e in &ball {
                        let pv: Vec<Vec<f64>> = [a, b, e].iter().map(|m| spec.to_real(m)).collect();
                        let dec = decoration_from_pairs(&c, &pv).unwrap();
                        let ok = dec.values[0].iter().all(|x| x.abs() < 1e-12);
                        brute += ok as usize;
                    }
                }
            }
            assert_eq!(enumerate_lattice_decorations(&c, &[0, 0], &spec).unwrap().count(), brute);
            let n = count_quasi_resonant(&c, &[0, 0], &spec, &[(-1.0, 1.0)], 0.0).unwrap();
            assert_eq!(n as usize, brute);
        }
    }

    #[test]
    fn quasi_resonant_matches_filter() {
        let spec = LatticeSpec::new(2.0, 2, 1.0).unwrap();
        let gamma = 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..6 {
            let c = Couple::random(2, &mut rng);
            let mut brute = 0u64;
            for dec in enumerate_lattice_decorations(&c, &[1, 0], &spec).unwrap() {
                let r = resonance_vector(Host::Couple(&c), &dec.to_decoration(&spec)).unwrap();
                brute += r.iter().all(|&(_, w)| (-0.5..=0.5).contains(&(gamma * w))) as u64;
            }
            let n = count_quasi_resonant(&c, &[1, 0], &spec, &[(-0.5, 0.5)], gamma).unwrap();
            assert_eq!(n, brute);
        }
    }

    #[test]
    fn count_capacity() {
        let spec = LatticeSpec::new(10.0, 3, 1.0).unwrap();
        let c = &enumerate_couples(2).unwrap()[0];
        let r = count_quasi_resonant_with_limit(c, &[0, 0, 0], &spec, &[(-1.0, 1.0)], 1.0, 1000);
        assert!(matches!(r, Err(Error::Capacity { .. })));
    }
}
