//! Signed ternary trees, couples, conjugate classes, couple products and the
//! irreducible factorization.
//!
//! Trees live in index arenas kept in pre-order, so the subtree of node `i` is the
//! contiguous range `i..end(i)`. Couples address nodes by *global ids*: the plus
//! tree occupies `0..P` and the minus tree `P..P+M`.

use crate::error::{Error, Result};
use num_complex::Complex64;
use rand::Rng;
use rustc_hash::FxHashMap;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

/// Default cap on the number of diagrams any enumeration may return.
pub const DEFAULT_ENUMERATION_LIMIT: u128 = 10_000_000;

/// One arena record.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub children: Option<[usize; 3]>,
    pub sign: i8,
}

/// Rooted ternary tree with the sign rule `sign(child j) = sign(parent) * (-1)^(j+1)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SignedTernaryTree {
    nodes: Vec<TreeNode>,
    end: Vec<usize>,
}

/// Tree expression used to assemble new trees and couples. Leaves carry a tag used
/// to match leaves across trees; every node remembers where it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Leaf { tag: usize, origin: usize },
    Node { origin: usize, kids: Box<[Expr; 3]> },
}

impl Expr {
    pub fn leaf(tag: usize) -> Self {
        Expr::Leaf { tag, origin: usize::MAX }
    }
    pub fn node(a: Expr, b: Expr, c: Expr) -> Self {
        Expr::Node { origin: usize::MAX, kids: Box::new([a, b, c]) }
    }
    fn map_tags(&self, f: &impl Fn(usize) -> usize) -> Expr {
        match self {
            Expr::Leaf { tag, origin } => Expr::Leaf { tag: f(*tag), origin: *origin },
            Expr::Node { origin, kids } => Expr::Node {
                origin: *origin,
                kids: Box::new([kids[0].map_tags(f), kids[1].map_tags(f), kids[2].map_tags(f)]),
            },
        }
    }
    fn clear_origin(&self) -> Expr {
        match self {
            Expr::Leaf { tag, .. } => Expr::leaf(*tag),
            Expr::Node { kids, .. } => Expr::node(kids[0].clear_origin(), kids[1].clear_origin(), kids[2].clear_origin()),
        }
    }
}

/// Generalized Catalan number `C(3n, n) / (2n + 1)` = number of ternary trees of order n.
pub fn ternary_catalan(n: usize) -> u128 {
    binomial(3 * n as u128, n as u128) / (2 * n as u128 + 1)
}

/// Binomial coefficient in exact integer arithmetic.
pub fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

pub fn factorial(n: u128) -> u128 {
    (1..=n).product::<u128>().max(1)
}

/// Number of couples of order n: `|T_n|^2 (n+1)! n!`.
pub fn couple_count(n: usize) -> u128 {
    let t = ternary_catalan(n);
    t * t * factorial(n as u128 + 1) * factorial(n as u128)
}

/// Number of regular couples of order n: `2^n |T_n|`.
pub fn regular_couple_count(n: usize) -> u128 {
    (1u128 << n) * ternary_catalan(n)
}

impl SignedTernaryTree {
    /// Single-node tree of the given sign.
    pub fn leaf(sign: i8) -> Self {
        assert!(sign == 1 || sign == -1);
        SignedTernaryTree { nodes: vec![TreeNode { parent: None, children: None, sign }], end: vec![1] }
    }

    /// Build from a pre-order shape string over `{B, L}` and a root sign.
    pub fn from_shape(shape: &str, sign: i8) -> Result<Self> {
        if sign != 1 && sign != -1 {
            return Err(Error::Parse(format!("bad sign {sign}")));
        }
        let bytes = shape.as_bytes();
        let mut pos = 0usize;
        fn rec(b: &[u8], pos: &mut usize) -> Result<Expr> {
            let c = *b.get(*pos).ok_or_else(|| Error::Parse("truncated shape".into()))?;
            *pos += 1;
            match c {
                b'L' => Ok(Expr::leaf(0)),
                b'B' => {
                    let a = rec(b, pos)?;
                    let m = rec(b, pos)?;
                    let z = rec(b, pos)?;
                    Ok(Expr::node(a, m, z))
                }
                other => Err(Error::Parse(format!("unexpected character {:?}", other as char))),
            }
        }
        let e = rec(bytes, &mut pos)?;
        if pos != bytes.len() {
            return Err(Error::Parse("trailing characters in shape".into()));
        }
        Ok(Self::from_expr(&e, sign).0)
    }

    /// Assemble a tree from an expression. Returns the tree, the leaf tags in
    /// pre-order leaf order, and the origin of every node.
    pub fn from_expr(e: &Expr, sign: i8) -> (Self, Vec<usize>, Vec<usize>) {
        let mut nodes = Vec::new();
        let mut end = Vec::new();
        let mut tags = Vec::new();
        let mut origins = Vec::new();
        fn rec(
            e: &Expr,
            sign: i8,
            parent: Option<usize>,
            nodes: &mut Vec<TreeNode>,
            end: &mut Vec<usize>,
            tags: &mut Vec<usize>,
            origins: &mut Vec<usize>,
        ) -> usize {
            let id = nodes.len();
            nodes.push(TreeNode { parent, children: None, sign });
            end.push(0);
            match e {
                Expr::Leaf { tag, origin } => {
                    tags.push(*tag);
                    origins.push(*origin);
                }
                Expr::Node { origin, kids } => {
                    origins.push(*origin);
                    let a = rec(&kids[0], sign, Some(id), nodes, end, tags, origins);
                    let b = rec(&kids[1], -sign, Some(id), nodes, end, tags, origins);
                    let c = rec(&kids[2], sign, Some(id), nodes, end, tags, origins);
                    nodes[id].children = Some([a, b, c]);
                }
            }
            end[id] = nodes.len();
            id
        }
        rec(e, sign, None, &mut nodes, &mut end, &mut tags, &mut origins);
        (SignedTernaryTree { nodes, end }, tags, origins)
    }

    /// Expression with leaf tags equal to the leaf order index and origins equal to node ids.
    pub fn to_expr(&self) -> Expr {
        let pos = self.leaf_positions();
        self.expr_at(0, &|i| pos[i].unwrap())
    }

    fn expr_at(&self, i: usize, tag: &impl Fn(usize) -> usize) -> Expr {
        match self.nodes[i].children {
            None => Expr::Leaf { tag: tag(i), origin: i },
            Some([a, b, c]) => Expr::Node {
                origin: i,
                kids: Box::new([self.expr_at(a, tag), self.expr_at(b, tag), self.expr_at(c, tag)]),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn root(&self) -> usize {
        0
    }
    pub fn sign(&self) -> i8 {
        self.nodes[0].sign
    }
    /// Number of branching nodes.
    pub fn order(&self) -> usize {
        (self.nodes.len() - 1) / 3
    }
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }
    pub fn node_sign(&self, i: usize) -> i8 {
        self.nodes[i].sign
    }
    pub fn children(&self, i: usize) -> Option<[usize; 3]> {
        self.nodes[i].children
    }
    pub fn parent(&self, i: usize) -> Option<usize> {
        self.nodes[i].parent
    }
    pub fn is_leaf(&self, i: usize) -> bool {
        self.nodes[i].children.is_none()
    }
    /// One past the last node of the subtree rooted at `i`.
    pub fn subtree_end(&self, i: usize) -> usize {
        self.end[i]
    }
    /// `a ⪯ b`: `a` lies in the subtree rooted at `b` (including `a == b`).
    pub fn is_under(&self, a: usize, b: usize) -> bool {
        b <= a && a < self.end[b]
    }
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_leaf(i)).collect()
    }
    pub fn branching(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_leaf(i)).collect()
    }
    /// For every node, its index among the leaves (None for branching nodes).
    pub fn leaf_positions(&self) -> Vec<Option<usize>> {
        let mut k = 0;
        self.nodes
            .iter()
            .map(|n| {
                if n.children.is_none() {
                    k += 1;
                    Some(k - 1)
                } else {
                    None
                }
            })
            .collect()
    }
    /// Range of leaf indices covered by the subtree of `i`.
    pub fn leaf_range(&self, i: usize) -> (usize, usize) {
        let pos = self.leaf_positions();
        let lo = (i..self.end[i]).find_map(|j| pos[j]).unwrap();
        let hi = (i..self.end[i]).rev().find_map(|j| pos[j]).unwrap() + 1;
        (lo, hi)
    }

    /// Canonical pre-order shape string, `B` for branching and `L` for leaves.
    pub fn shape(&self) -> String {
        self.nodes.iter().map(|n| if n.children.is_some() { 'B' } else { 'L' }).collect()
    }

    /// Power `e` such that the polarity equals `i^e`.
    pub fn polarity_exp(&self) -> u8 {
        self.nodes
            .iter()
            .filter(|n| n.children.is_some())
            .map(|n| if n.sign > 0 { 1u8 } else { 3u8 })
            .fold(0u8, |a, b| (a + b) % 4)
    }

    /// Product over branching nodes of `i * sign`.
    pub fn polarity(&self) -> Complex64 {
        i_power(self.polarity_exp())
    }

    /// Attach `sub` at the leaf `leaf` of `self`.
    pub fn graft(&self, leaf: usize, sub: &SignedTernaryTree) -> Result<Self> {
        if leaf >= self.len() || !self.is_leaf(leaf) {
            return Err(Error::NotALeaf(leaf));
        }
        if self.nodes[leaf].sign != sub.sign() {
            return Err(Error::SignMismatch { expected: self.nodes[leaf].sign, found: sub.sign() });
        }
        let sub_e = sub.to_expr();
        let e = self.replace(0, leaf, &sub_e);
        Ok(Self::from_expr(&e, self.sign()).0)
    }

    fn replace(&self, i: usize, at: usize, with: &Expr) -> Expr {
        if i == at {
            return with.clone();
        }
        match self.nodes[i].children {
            None => Expr::leaf(0),
            Some([a, b, c]) => Expr::node(self.replace(a, at, with), self.replace(b, at, with), self.replace(c, at, with)),
        }
    }

    /// Inverse of [`graft`](Self::graft): cut the subtree at `node`, leaving a leaf behind.
    /// Returns the base tree, the id of the new leaf in the base, and the removed subtree.
    pub fn split_at(&self, node: usize) -> (Self, usize, Self) {
        let e = self.replace(0, node, &Expr::leaf(0));
        let (base, _, _) = Self::from_expr(&e, self.sign());
        let sub_e = self.expr_at(node, &|_| 0);
        let (sub, _, _) = Self::from_expr(&sub_e, self.nodes[node].sign);
        // The new leaf sits at the same pre-order position as `node`.
        (base, node, sub)
    }

    /// The tree `⊗(t1, t2, t3)` with a fresh root.
    pub fn product(t1: &Self, t2: &Self, t3: &Self) -> Result<Self> {
        let s = t1.sign();
        if t2.sign() != -s {
            return Err(Error::SignMismatch { expected: -s, found: t2.sign() });
        }
        if t3.sign() != s {
            return Err(Error::SignMismatch { expected: s, found: t3.sign() });
        }
        let e = Expr::node(t1.to_expr(), t2.to_expr(), t3.to_expr());
        Ok(Self::from_expr(&e, s).0)
    }

    /// Serialized form `shape sign`, e.g. `BLLL +`.
    pub fn serialize(&self) -> String {
        format!("{} {}", self.shape(), if self.sign() > 0 { '+' } else { '-' })
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut it = s.split_whitespace();
        let shape = it.next().ok_or_else(|| Error::Parse("empty tree".into()))?;
        let sign = match it.next() {
            Some("+") => 1,
            Some("-") => -1,
            other => return Err(Error::Parse(format!("bad tree sign {other:?}"))),
        };
        if it.next().is_some() {
            return Err(Error::Parse("trailing tokens in tree".into()));
        }
        Self::from_shape(shape, sign)
    }

    /// Random tree of order n (not uniform over shapes).
    pub fn random<R: Rng + ?Sized>(n: usize, sign: i8, rng: &mut R) -> Self {
        fn rec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Expr {
            if n == 0 {
                return Expr::leaf(0);
            }
            let m = n - 1;
            let a = rng.random_range(0..=m);
            let b = rng.random_range(0..=(m - a));
            Expr::node(rec(a, rng), rec(b, rng), rec(m - a - b, rng))
        }
        Self::from_expr(&rec(n, rng), sign).0
    }
}

fn i_power(e: u8) -> Complex64 {
    match e % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

fn shapes_of_order(n: usize) -> &'static Vec<String> {
    static CACHE: OnceLock<std::sync::Mutex<BTreeMap<usize, &'static Vec<String>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(v) = cache.lock().unwrap().get(&n) {
        return v;
    }
    let v: Vec<String> = if n == 0 {
        vec!["L".to_string()]
    } else {
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..(n - a) {
                let c = n - 1 - a - b;
                for s1 in shapes_of_order(a) {
                    for s2 in shapes_of_order(b) {
                        for s3 in shapes_of_order(c) {
                            out.push(format!("B{s1}{s2}{s3}"));
                        }
                    }
                }
            }
        }
        out.sort();
        out
    };
    let leaked: &'static Vec<String> = Box::leak(Box::new(v));
    cache.lock().unwrap().insert(n, leaked);
    leaked
}

/// All trees of order `n` and root sign `sign`, sorted by shape string (`B < L`).
pub fn enumerate_trees(n: usize, sign: i8) -> Result<Vec<SignedTernaryTree>> {
    enumerate_trees_with_limit(n, sign, DEFAULT_ENUMERATION_LIMIT)
}

pub fn enumerate_trees_with_limit(n: usize, sign: i8, limit: u128) -> Result<Vec<SignedTernaryTree>> {
    let count = ternary_catalan(n);
    if count > limit {
        return Err(Error::Capacity { what: format!("trees of order {n}"), needed: count, limit });
    }
    shapes_of_order(n)
        .iter()
        .map(|s| SignedTernaryTree::from_shape(s, sign))
        .collect()
}

/// Plus tree, minus tree and a perfect matching of leaves across the two trees.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Couple {
    plus: SignedTernaryTree,
    minus: SignedTernaryTree,
    /// `pairing[p]` = leaf index (in the minus tree) matched with plus-tree leaf `p`.
    pairing: Vec<usize>,
}

impl fmt::Display for Couple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

impl Couple {
    pub fn new(plus: SignedTernaryTree, minus: SignedTernaryTree, pairing: Vec<usize>) -> Result<Self> {
        if plus.sign() != 1 {
            return Err(Error::SignMismatch { expected: 1, found: plus.sign() });
        }
        if minus.sign() != -1 {
            return Err(Error::SignMismatch { expected: -1, found: minus.sign() });
        }
        if plus.order() != minus.order() {
            return Err(Error::Validation("trees of a couple must have equal order".into()));
        }
        let pl = plus.leaves();
        let ml = minus.leaves();
        if pairing.len() != pl.len() {
            return Err(Error::Validation("pairing length differs from leaf count".into()));
        }
        let mut seen = vec![false; ml.len()];
        for (p, &q) in pairing.iter().enumerate() {
            if q >= ml.len() || seen[q] {
                return Err(Error::Validation("pairing is not a bijection".into()));
            }
            seen[q] = true;
            if plus.node_sign(pl[p]) != -minus.node_sign(ml[q]) {
                return Err(Error::Validation(format!("pair {p} joins leaves of equal sign")));
            }
        }
        Ok(Couple { plus, minus, pairing })
    }

    /// The order-0 couple: two single-node roots paired with each other.
    pub fn trivial() -> Self {
        Couple { plus: SignedTernaryTree::leaf(1), minus: SignedTernaryTree::leaf(-1), pairing: vec![0] }
    }

    /// Assemble a couple from two expressions whose leaf tags match one-to-one.
    pub fn from_exprs(plus: &Expr, minus: &Expr) -> Result<Self> {
        Ok(Self::from_exprs_with_origins(plus, minus)?.0)
    }

    /// As [`from_exprs`](Self::from_exprs) but also returns the origin of every global node.
    pub fn from_exprs_with_origins(plus: &Expr, minus: &Expr) -> Result<(Self, Vec<usize>)> {
        let (tp, tags_p, orig_p) = SignedTernaryTree::from_expr(plus, 1);
        let (tm, tags_m, orig_m) = SignedTernaryTree::from_expr(minus, -1);
        let mut where_m: FxHashMap<usize, usize> = FxHashMap::default();
        for (i, &t) in tags_m.iter().enumerate() {
            if where_m.insert(t, i).is_some() {
                return Err(Error::Validation(format!("duplicate leaf tag {t}")));
            }
        }
        let mut pairing = Vec::with_capacity(tags_p.len());
        for &t in &tags_p {
            pairing.push(*where_m.get(&t).ok_or_else(|| Error::Validation(format!("unmatched leaf tag {t}")))?);
        }
        let c = Couple::new(tp, tm, pairing)?;
        let mut origins = orig_p;
        origins.extend(orig_m);
        Ok((c, origins))
    }

    /// Expressions for both trees, with leaf tags equal to pair indices and origins
    /// equal to global node ids.
    pub fn to_exprs(&self) -> (Expr, Expr) {
        let pp = self.plus.leaf_positions();
        let mp = self.minus.leaf_positions();
        let mut inv = vec![0; self.pairing.len()];
        for (p, &q) in self.pairing.iter().enumerate() {
            inv[q] = p;
        }
        let pe = self.plus.expr_at(0, &|i| pp[i].unwrap());
        let off = self.plus.len();
        let me = self.minus.expr_at(0, &|i| inv[mp[i].unwrap()]);
        (pe, shift_origins(&me, off))
    }

    pub fn plus_tree(&self) -> &SignedTernaryTree {
        &self.plus
    }
    pub fn minus_tree(&self) -> &SignedTernaryTree {
        &self.minus
    }
    pub fn pairing(&self) -> &[usize] {
        &self.pairing
    }
    pub fn order(&self) -> usize {
        self.plus.order()
    }
    pub fn is_trivial(&self) -> bool {
        self.order() == 0
    }
    pub fn num_pairs(&self) -> usize {
        self.pairing.len()
    }
    pub fn num_nodes(&self) -> usize {
        self.plus.len() + self.minus.len()
    }
    pub fn plus_len(&self) -> usize {
        self.plus.len()
    }
    /// Which tree a global id lives in (`true` = plus tree) and its local id.
    pub fn locate(&self, g: usize) -> (bool, usize) {
        if g < self.plus.len() {
            (true, g)
        } else {
            (false, g - self.plus.len())
        }
    }
    pub fn global(&self, in_plus: bool, local: usize) -> usize {
        if in_plus {
            local
        } else {
            local + self.plus.len()
        }
    }
    pub fn tree(&self, in_plus: bool) -> &SignedTernaryTree {
        if in_plus {
            &self.plus
        } else {
            &self.minus
        }
    }
    pub fn sign(&self, g: usize) -> i8 {
        let (t, l) = self.locate(g);
        self.tree(t).node_sign(l)
    }
    pub fn is_leaf(&self, g: usize) -> bool {
        let (t, l) = self.locate(g);
        self.tree(t).is_leaf(l)
    }
    pub fn children(&self, g: usize) -> Option<[usize; 3]> {
        let (t, l) = self.locate(g);
        self.tree(t).children(l).map(|c| c.map(|x| self.global(t, x)))
    }
    pub fn parent(&self, g: usize) -> Option<usize> {
        let (t, l) = self.locate(g);
        self.tree(t).parent(l).map(|x| self.global(t, x))
    }
    pub fn roots(&self) -> (usize, usize) {
        (0, self.plus.len())
    }
    /// `a ⪯ b` for global ids (false across trees).
    pub fn is_under(&self, a: usize, b: usize) -> bool {
        let (ta, la) = self.locate(a);
        let (tb, lb) = self.locate(b);
        ta == tb && self.tree(ta).is_under(la, lb)
    }
    /// Global ids of the two leaves of every pair, indexed by pair.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let pl = self.plus.leaves();
        let ml = self.minus.leaves();
        self.pairing.iter().enumerate().map(|(p, &q)| (pl[p], ml[q] + self.plus.len())).collect()
    }
    /// For every global node: `Some(pair index)` if it is a leaf.
    pub fn pair_of_node(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.num_nodes()];
        for (p, (a, b)) in self.pairs().into_iter().enumerate() {
            out[a] = Some(p);
            out[b] = Some(p);
        }
        out
    }
    /// All branching nodes (global ids), plus tree first.
    pub fn branching(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&g| !self.is_leaf(g)).collect()
    }

    pub fn polarity_exp(&self) -> u8 {
        (self.plus.polarity_exp() + self.minus.polarity_exp()) % 4
    }
    /// Product of the polarities of both trees.
    pub fn polarity(&self) -> Complex64 {
        i_power(self.polarity_exp())
    }

    /// Serialized form `tree | tree | pairing`, e.g. `BLLL + | BLLL - | 0 1 2`.
    pub fn serialize(&self) -> String {
        let perm: Vec<String> = self.pairing.iter().map(|x| x.to_string()).collect();
        format!("{} | {} | {}", self.plus.serialize(), self.minus.serialize(), perm.join(" "))
    }

    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('|').collect();
        if parts.len() != 3 {
            return Err(Error::Parse("couple needs three '|'-separated fields".into()));
        }
        let plus = SignedTernaryTree::parse(parts[0].trim())?;
        let minus = SignedTernaryTree::parse(parts[1].trim())?;
        let pairing = parts[2]
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Couple::new(plus, minus, pairing)
    }

    /// Random couple of order n (trees and pairing drawn independently).
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        use rand::seq::SliceRandom;
        let plus = SignedTernaryTree::random(n, 1, rng);
        let minus = SignedTernaryTree::random(n, -1, rng);
        let pl = plus.leaves();
        let ml = minus.leaves();
        let mut pos_m: Vec<usize> = (0..ml.len()).filter(|&q| minus.node_sign(ml[q]) < 0).collect();
        let mut neg_m: Vec<usize> = (0..ml.len()).filter(|&q| minus.node_sign(ml[q]) > 0).collect();
        pos_m.shuffle(rng);
        neg_m.shuffle(rng);
        let mut pairing = vec![0; pl.len()];
        let (mut i, mut j) = (0, 0);
        for (p, &l) in pl.iter().enumerate() {
            if plus.node_sign(l) > 0 {
                pairing[p] = pos_m[i];
                i += 1;
            } else {
                pairing[p] = neg_m[j];
                j += 1;
            }
        }
        Couple::new(plus, minus, pairing).expect("random couple is valid")
    }
}

fn shift_origins(e: &Expr, off: usize) -> Expr {
    match e {
        Expr::Leaf { tag, origin } => Expr::Leaf { tag: *tag, origin: origin + off },
        Expr::Node { origin, kids } => Expr::Node {
            origin: origin + off,
            kids: Box::new([shift_origins(&kids[0], off), shift_origins(&kids[1], off), shift_origins(&kids[2], off)]),
        },
    }
}

pub(crate) fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// All couples of order n: plus tree index, then minus tree index, then the pairing
/// as a pair of lexicographic permutations (positive block, then negative block).
pub fn enumerate_couples(n: usize) -> Result<Vec<Couple>> {
    enumerate_couples_with_limit(n, DEFAULT_ENUMERATION_LIMIT)
}

pub fn enumerate_couples_with_limit(n: usize, limit: u128) -> Result<Vec<Couple>> {
    let count = couple_count(n);
    if count > limit {
        return Err(Error::Capacity { what: format!("couples of order {n}"), needed: count, limit });
    }
    let plus_trees = enumerate_trees(n, 1)?;
    let minus_trees = enumerate_trees(n, -1)?;
    let mut out = Vec::with_capacity(count as usize);
    for tp in &plus_trees {
        let pl = tp.leaves();
        let p_pos: Vec<usize> = (0..pl.len()).filter(|&p| tp.node_sign(pl[p]) > 0).collect();
        let p_neg: Vec<usize> = (0..pl.len()).filter(|&p| tp.node_sign(pl[p]) < 0).collect();
        for tm in &minus_trees {
            let ml = tm.leaves();
            let m_neg: Vec<usize> = (0..ml.len()).filter(|&q| tm.node_sign(ml[q]) < 0).collect();
            let m_pos: Vec<usize> = (0..ml.len()).filter(|&q| tm.node_sign(ml[q]) > 0).collect();
            let mut a: Vec<usize> = (0..p_pos.len()).collect();
            loop {
                let mut b: Vec<usize> = (0..p_neg.len()).collect();
                loop {
                    let mut pairing = vec![0; pl.len()];
                    for (i, &p) in p_pos.iter().enumerate() {
                        pairing[p] = m_neg[a[i]];
                    }
                    for (i, &p) in p_neg.iter().enumerate() {
                        pairing[p] = m_pos[b[i]];
                    }
                    out.push(Couple { plus: tp.clone(), minus: tm.clone(), pairing });
                    if !next_permutation(&mut b) {
                        break;
                    }
                }
                if !next_permutation(&mut a) {
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// Partition of all nodes of a couple into conjugate classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConjugateClassPartition {
    /// Classes sorted by their smallest member; members sorted.
    pub classes: Vec<Vec<usize>>,
    /// Class index of every global node.
    pub class_of: Vec<usize>,
}

impl ConjugateClassPartition {
    pub fn size_two(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.classes.iter().filter(|c| c.len() == 2)
    }
    /// Partner of `g` in its class, if the class has two members.
    pub fn partner(&self, g: usize) -> Option<usize> {
        let c = &self.classes[self.class_of[g]];
        if c.len() == 2 {
            Some(if c[0] == g { c[1] } else { c[0] })
        } else {
            None
        }
    }
}

/// Group nodes by membership pattern in the ancestor sets `A_p` of every pair.
///
/// A plus-tree node lies in `A_p` iff the plus leaf of `p` sits below it, so its
/// pattern is the contiguous range of plus leaf indices under it. A minus-tree node
/// matches a plus-tree node iff its pattern is the same set.
pub fn conjugate_classes(c: &Couple) -> ConjugateClassPartition {
    let mut sigs: Vec<Vec<u64>> = Vec::with_capacity(c.num_nodes());
    let np = c.num_pairs();
    let words = np.div_ceil(64);
    let pairs = c.pairs();
    for g in 0..c.num_nodes() {
        let mut s = vec![0u64; words];
        for (p, &(a, b)) in pairs.iter().enumerate() {
            if c.is_under(a, g) || c.is_under(b, g) {
                s[p / 64] |= 1 << (p % 64);
            }
        }
        sigs.push(s);
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut first: FxHashMap<&Vec<u64>, usize> = FxHashMap::default();
    for (g, s) in sigs.iter().enumerate() {
        let head = *first.entry(s).or_insert(g);
        groups.entry(head).or_default().push(g);
    }
    let classes: Vec<Vec<usize>> = groups.into_values().collect();
    let mut class_of = vec![0; c.num_nodes()];
    for (i, cl) in classes.iter().enumerate() {
        for &g in cl {
            class_of[g] = i;
        }
    }
    ConjugateClassPartition { classes, class_of }
}

/// Size-2 classes made of two branching nodes other than the two roots.
fn internal_cuts(c: &Couple, cc: &ConjugateClassPartition) -> Vec<(usize, usize)> {
    let (r0, r1) = c.roots();
    cc.size_two()
        .filter(|cl| !c.is_leaf(cl[0]) && !c.is_leaf(cl[1]))
        .filter(|cl| !(cl[0] == r0 && cl[1] == r1))
        .map(|cl| (cl[0], cl[1]))
        .collect()
}

/// A couple of order at least one with no size-2 class besides the roots and the pairs.
pub fn is_irreducible(c: &Couple) -> bool {
    if c.order() == 0 {
        return false;
    }
    let cc = conjugate_classes(c);
    cc.size_two().count() == 1 + c.num_pairs()
}

/// `base ⊗_p attachment`: replace the two leaves of pair `pair` by the trees of `attachment`.
///
/// If the plus-tree leaf of the pair has sign `+`, the plus tree of the attachment
/// goes there and its minus tree goes to the partner leaf; otherwise the roles swap.
pub fn couple_product(base: &Couple, pair: usize, attachment: &Couple) -> Result<Couple> {
    if pair >= base.num_pairs() {
        return Err(Error::InvalidPair(pair));
    }
    let (bp, bm) = base.to_exprs();
    let off = base.num_pairs();
    let (ap, am) = attachment.to_exprs();
    let ap = ap.map_tags(&|t| t + off).clear_origin();
    let am = am.map_tags(&|t| t + off).clear_origin();
    let (lp, _) = base.pairs()[pair];
    let plus_leaf_positive = base.sign(lp) > 0;
    let (for_plus, for_minus) = if plus_leaf_positive { (ap, am) } else { (am, ap) };
    let np = substitute_tag(&bp.clear_origin(), pair, &for_plus);
    let nm = substitute_tag(&bm.clear_origin(), pair, &for_minus);
    Couple::from_exprs(&np, &nm)
}

fn substitute_tag(e: &Expr, tag: usize, with: &Expr) -> Expr {
    match e {
        Expr::Leaf { tag: t, .. } if *t == tag => with.clone(),
        Expr::Leaf { .. } => e.clone(),
        Expr::Node { origin, kids } => Expr::Node {
            origin: *origin,
            kids: Box::new([
                substitute_tag(&kids[0], tag, with),
                substitute_tag(&kids[1], tag, with),
                substitute_tag(&kids[2], tag, with),
            ]),
        },
    }
}

/// Expression for the region below `top` (global id), with every node of `cuts`
/// strictly below `top` turned into a leaf. Leaf tags: pair index for original
/// leaves, `num_pairs + cut node's class index` for cut leaves.
fn region_expr(
    c: &Couple,
    top: usize,
    cuts: &FxHashMap<usize, usize>,
    pair_of: &[Option<usize>],
    is_top: bool,
) -> Expr {
    if !is_top {
        if let Some(&cls) = cuts.get(&top) {
            return Expr::Leaf { tag: c.num_pairs() + cls, origin: top };
        }
    }
    match c.children(top) {
        None => Expr::Leaf { tag: pair_of[top].unwrap(), origin: top },
        Some([a, b, d]) => Expr::Node {
            origin: top,
            kids: Box::new([
                region_expr(c, a, cuts, pair_of, false),
                region_expr(c, b, cuts, pair_of, false),
                region_expr(c, d, cuts, pair_of, false),
            ]),
        },
    }
}

/// Split a couple at the size-2 class `{a, b}` (`a` in the plus tree, `b` in the
/// minus tree, both branching). Returns the outer couple, the pair index of the
/// outer couple where the inner one was attached, and the inner couple, so that
/// `couple_product(outer, pair, inner) == c`.
pub fn split_at_class(c: &Couple, a: usize, b: usize) -> Result<(Couple, usize, Couple)> {
    let cc = conjugate_classes(c);
    if cc.class_of[a] != cc.class_of[b] || a == b || c.is_leaf(a) || c.is_leaf(b) {
        return Err(Error::Validation("nodes are not a conjugate pair of branching nodes".into()));
    }
    let (a, b) = if c.locate(a).0 { (a, b) } else { (b, a) };
    let pair_of = c.pair_of_node();
    let marker = c.num_pairs();
    let mut cut = FxHashMap::default();
    cut.insert(a, 0usize);
    cut.insert(b, 0usize);
    let outer_p = region_expr(c, 0, &cut, &pair_of, false);
    let outer_m = region_expr(c, c.plus_len(), &cut, &pair_of, false);
    let (outer, _) = Couple::from_exprs_with_origins(&outer_p, &outer_m)?;
    let none = FxHashMap::default();
    let ia = region_expr(c, a, &none, &pair_of, true);
    let ib = region_expr(c, b, &none, &pair_of, true);
    let inner = if c.sign(a) > 0 { Couple::from_exprs(&ia, &ib)? } else { Couple::from_exprs(&ib, &ia)? };
    // Locate the pair of the outer couple holding the marker tag: it is the plus leaf
    // whose expression tag equals `marker`.
    let (tp, tags, _) = SignedTernaryTree::from_expr(&outer_p, 1);
    let _ = tp;
    let pair = tags.iter().position(|&t| t == marker).expect("marker leaf present");
    Ok((outer, pair, inner))
}

/// One irreducible factor located inside the factored couple.
#[derive(Clone, Debug)]
pub struct Factor {
    /// The factor as a standalone couple.
    pub couple: Couple,
    /// Top class of the factor: (node in the plus tree, node in the minus tree) of the host.
    pub top: (usize, usize),
    /// Host global ids of the branching nodes owned by this factor.
    pub branching: Vec<usize>,
    /// Host global id of every global node of `couple`.
    pub node_map: Vec<usize>,
    /// Index of the factor this one is attached to (None for the root factor).
    pub parent: Option<usize>,
}

impl Factor {
    pub fn order(&self) -> usize {
        self.couple.order()
    }
}

/// Multiset of irreducible factors and the regular index.
#[derive(Clone, Debug)]
pub struct IrreducibleFactorization {
    pub factors: Vec<Factor>,
    pub regular_index: usize,
}

impl IrreducibleFactorization {
    /// Canonical serializations of the factors, sorted (the multiset).
    pub fn multiset(&self) -> Vec<String> {
        let mut v: Vec<String> = self.factors.iter().map(|f| f.couple.serialize()).collect();
        v.sort();
        v
    }
    /// Parent indices of the factor forest (nesting order).
    pub fn forest_parents(&self) -> Vec<Option<usize>> {
        self.factors.iter().map(|f| f.parent).collect()
    }
}

/// Cut the couple at every internal size-2 conjugate class at once. Since the classes
/// of a product are the disjoint union of the classes of its parts, this yields the
/// same factors as any sequence of single splits.
pub fn irreducible_factorization(c: &Couple) -> IrreducibleFactorization {
    if c.order() == 0 {
        return IrreducibleFactorization { factors: vec![], regular_index: 0 };
    }
    let cc = conjugate_classes(c);
    let cuts = internal_cuts(c, &cc);
    let mut cut_map: FxHashMap<usize, usize> = FxHashMap::default();
    for &(a, b) in &cuts {
        cut_map.insert(a, cc.class_of[a]);
        cut_map.insert(b, cc.class_of[b]);
    }
    let pair_of = c.pair_of_node();
    let mut tops: Vec<(usize, usize)> = vec![c.roots()];
    for &(a, b) in &cuts {
        let (a, b) = if c.locate(a).0 { (a, b) } else { (b, a) };
        tops.push((a, b));
    }
    tops.sort();
    let mut factors = Vec::with_capacity(tops.len());
    let mut top_index: FxHashMap<usize, usize> = FxHashMap::default();
    for (i, &(a, _)) in tops.iter().enumerate() {
        top_index.insert(a, i);
    }
    for &(a, b) in &tops {
        let ea = region_expr(c, a, &cut_map, &pair_of, true);
        let eb = region_expr(c, b, &cut_map, &pair_of, true);
        let (couple, node_map) = if c.sign(a) > 0 {
            Couple::from_exprs_with_origins(&ea, &eb).expect("factor is a couple")
        } else {
            Couple::from_exprs_with_origins(&eb, &ea).expect("factor is a couple")
        };
        let branching: Vec<usize> = couple.branching().into_iter().map(|g| node_map[g]).collect();
        factors.push(Factor { couple, top: (a, b), branching, node_map, parent: None });
    }
    // Parent: the factor in which this factor's plus-tree top appears as a cut leaf.
    let n_f = factors.len();
    for i in 0..n_f {
        let leaves: Vec<usize> = (0..factors[i].couple.num_nodes())
            .filter(|&g| factors[i].couple.is_leaf(g))
            .map(|g| factors[i].node_map[g])
            .collect();
        for h in leaves {
            if let Some(&j) = top_index.get(&h) {
                factors[j].parent = Some(i);
            }
        }
    }
    let regular_index = factors.iter().filter(|f| f.order() != 1).count();
    IrreducibleFactorization { factors, regular_index }
}

/// Regular index: number of irreducible factors whose order differs from one.
pub fn regular_index(c: &Couple) -> usize {
    irreducible_factorization(c).regular_index
}

pub fn is_regular(c: &Couple) -> bool {
    regular_index(c) == 0
}

/// `⊗^σ(q1, q2, q3)`. The plus tree is `⊗(q1⁺, q2⁻, q3⁺)`; the minus tree is
/// `⊗(q1⁻, q2⁺, q3⁻)` for `σ = +` and `⊗(q3⁻, q2⁺, q1⁻)` for `σ = -`.
pub fn regular_product(sigma: i8, q1: &Couple, q2: &Couple, q3: &Couple) -> Couple {
    let (p1, m1) = q1.to_exprs();
    let (p2, m2) = q2.to_exprs();
    let (p3, m3) = q3.to_exprs();
    let o2 = q1.num_pairs();
    let o3 = o2 + q2.num_pairs();
    let f2 = |t: usize| t + o2;
    let f3 = |t: usize| t + o3;
    let (p1, m1) = (p1.clear_origin(), m1.clear_origin());
    let (p2, m2) = (p2.map_tags(&f2).clear_origin(), m2.map_tags(&f2).clear_origin());
    let (p3, m3) = (p3.map_tags(&f3).clear_origin(), m3.map_tags(&f3).clear_origin());
    let plus = Expr::node(p1, m2, p3);
    let minus = if sigma > 0 { Expr::node(m1, p2, m3) } else { Expr::node(m3, p2, m1) };
    Couple::from_exprs(&plus, &minus).expect("regular product is a couple")
}

/// Inverse of [`regular_product`] for a regular couple of order at least one.
pub fn regular_decompose(c: &Couple) -> Result<(i8, [Couple; 3])> {
    if c.order() == 0 || !is_regular(c) {
        return Err(Error::NonRegular);
    }
    let cc = conjugate_classes(c);
    let pairs = c.pairs();
    let pair_of = c.pair_of_node();
    let partner = |g: usize| -> usize {
        if let Some(p) = pair_of[g] {
            let (a, b) = pairs[p];
            if a == g {
                b
            } else {
                a
            }
        } else {
            cc.partner(g).expect("branching child of a regular root has a partner")
        }
    };
    let rp = c.children(0).unwrap();
    let rm = c.children(c.plus_len()).unwrap();
    let sigma = if partner(rp[0]) == rm[0] {
        1
    } else if partner(rp[0]) == rm[2] {
        -1
    } else {
        return Err(Error::NonRegular);
    };
    let sub = |a: usize, b: usize| -> Couple {
        if c.is_leaf(a) {
            Couple::trivial()
        } else {
            split_at_class(c, a, b).expect("conjugate pair").2
        }
    };
    let q1 = sub(rp[0], partner(rp[0]));
    let q2 = sub(rp[1], partner(rp[1]));
    let q3 = sub(rp[2], partner(rp[2]));
    Ok((sigma, [q1, q2, q3]))
}

/// All regular couples of order n, built by the two-branch recursion
/// `K^reg_n = ∪_σ ⊗^σ(K^reg_{n1}, K^reg_{n2}, K^reg_{n3})`.
pub fn enumerate_regular_couples(n: usize) -> Result<Vec<Couple>> {
    enumerate_regular_couples_with_limit(n, DEFAULT_ENUMERATION_LIMIT)
}

pub fn enumerate_regular_couples_with_limit(n: usize, limit: u128) -> Result<Vec<Couple>> {
    let count = regular_couple_count(n);
    if count > limit {
        return Err(Error::Capacity { what: format!("regular couples of order {n}"), needed: count, limit });
    }
    let mut memo: Vec<Vec<Couple>> = vec![vec![Couple::trivial()]];
    for m in 1..=n {
        let mut out = Vec::with_capacity(regular_couple_count(m) as usize);
        for sigma in [1i8, -1] {
            for a in 0..m {
                for b in 0..(m - a) {
                    let cc = m - 1 - a - b;
                    for q1 in &memo[a] {
                        for q2 in &memo[b] {
                            for q3 in &memo[cc] {
                                out.push(regular_product(sigma, q1, q2, q3));
                            }
                        }
                    }
                }
            }
        }
        memo.push(out);
    }
    Ok(memo.swap_remove(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn catalan_values() {
        let v: Vec<u128> = (0..=5).map(ternary_catalan).collect();
        assert_eq!(v, vec![1, 1, 3, 12, 55, 273]);
        assert_eq!(ternary_catalan(8), 43263);
    }

    #[test]
    fn tree_counts_and_order() {
        for n in 0..=6 {
            assert_eq!(enumerate_trees(n, 1).unwrap().len() as u128, ternary_catalan(n));
        }
        let t2: Vec<String> = enumerate_trees(2, 1).unwrap().iter().map(|t| t.shape()).collect();
        assert_eq!(t2, vec!["BBLLLLL", "BLBLLLL", "BLLBLLL"]);
    }

    #[test]
    fn tree_leaf_signs() {
        for n in 0..5 {
            for s in [1i8, -1] {
                for t in enumerate_trees(n, s).unwrap() {
                    let l = t.leaves();
                    assert_eq!(l.len(), 2 * n + 1);
                    let same = l.iter().filter(|&&i| t.node_sign(i) == s).count();
                    assert_eq!(same, n + 1);
                    for b in t.branching() {
                        let ch = t.children(b).unwrap();
                        for (j, &c) in ch.iter().enumerate() {
                            let expect = t.node_sign(b) * if j == 1 { -1 } else { 1 };
                            assert_eq!(t.node_sign(c), expect);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn capacity_limit() {
        assert!(matches!(enumerate_trees_with_limit(5, 1, 100), Err(Error::Capacity { .. })));
        assert!(matches!(enumerate_couples(6), Err(Error::Capacity { .. })));
    }

    #[test]
    fn graft_examples() {
        let t0 = SignedTernaryTree::leaf(1);
        let t1 = SignedTernaryTree::from_shape("BLLL", 1).unwrap();
        assert_eq!(t0.graft(0, &t1).unwrap(), t1);
        let g = t1.graft(1, &t1).unwrap();
        assert_eq!(g.shape(), "BBLLLLL");
        let (base, leaf, sub) = g.split_at(1);
        assert_eq!((base, leaf, sub), (t1.clone(), 1, t1.clone()));
        assert!(matches!(t1.graft(2, &t1), Err(Error::SignMismatch { .. })));
        assert!(matches!(t1.graft(0, &t1), Err(Error::NotALeaf(0))));
    }

    #[test]
    fn product_examples() {
        let p0 = SignedTernaryTree::leaf(1);
        let m0 = SignedTernaryTree::leaf(-1);
        let t1 = SignedTernaryTree::product(&p0, &m0, &p0).unwrap();
        assert_eq!(t1.shape(), "BLLL");
        let t2 = SignedTernaryTree::product(&t1, &m0, &p0).unwrap();
        assert_eq!(t2.shape(), "BBLLLLL");
        assert!(SignedTernaryTree::product(&p0, &p0, &p0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let (a, b, c) = (rng.random_range(0..4), rng.random_range(0..4), rng.random_range(0..4));
            let t = SignedTernaryTree::product(
                &SignedTernaryTree::random(a, -1, &mut rng),
                &SignedTernaryTree::random(b, 1, &mut rng),
                &SignedTernaryTree::random(c, -1, &mut rng),
            )
            .unwrap();
            assert_eq!(t.order(), a + b + c + 1);
            assert_eq!(t.sign(), -1);
        }
    }

    #[test]
    fn polarity_examples() {
        assert_eq!(SignedTernaryTree::leaf(1).polarity(), Complex64::new(1.0, 0.0));
        assert_eq!(SignedTernaryTree::from_shape("BLLL", 1).unwrap().polarity(), Complex64::new(0.0, 1.0));
        assert_eq!(SignedTernaryTree::from_shape("BLLL", -1).unwrap().polarity(), Complex64::new(0.0, -1.0));
        for n in 0..=4 {
            for q in enumerate_regular_couples(n).unwrap() {
                assert_eq!(q.polarity_exp(), 0);
            }
        }
    }

    #[test]
    fn couple_counts() {
        assert_eq!(enumerate_couples(0).unwrap().len(), 1);
        assert_eq!(enumerate_couples(1).unwrap().len(), 2);
        assert_eq!(enumerate_couples(2).unwrap().len(), 108);
        assert_eq!(couple_count(3), 20736);
        for n in 0..=5 {
            assert_eq!(enumerate_regular_couples(n).unwrap().len() as u128, regular_couple_count(n));
        }
        assert_eq!(regular_couple_count(3), 96);
    }

    #[test]
    fn regular_one_equals_all_one() {
        let mut a: Vec<String> = enumerate_couples(1).unwrap().iter().map(|c| c.serialize()).collect();
        let mut b: Vec<String> = enumerate_regular_couples(1).unwrap().iter().map(|c| c.serialize()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn serialization_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 0..5 {
            for _ in 0..20 {
                let c = Couple::random(n, &mut rng);
                assert_eq!(Couple::parse(&c.serialize()).unwrap(), c);
            }
        }
        assert_eq!(Couple::trivial().serialize(), "L + | L - | 0");
        assert!(Couple::parse("BLLL + | BLLL - | 0 0 1").is_err());
    }

    #[test]
    fn conjugate_examples() {
        let t = conjugate_classes(&Couple::trivial());
        assert_eq!(t.classes, vec![vec![0, 1]]);
        for q in enumerate_couples(1).unwrap() {
            let cc = conjugate_classes(&q);
            assert_eq!(cc.classes.len(), 4);
            assert!(cc.classes.iter().all(|c| c.len() == 2));
        }
    }

    #[test]
    fn conjugate_classes_have_opposite_members() {
        for n in 0..=2 {
            for q in enumerate_couples(n).unwrap() {
                let cc = conjugate_classes(&q);
                for cl in &cc.classes {
                    assert!(cl.len() <= 2);
                    if cl.len() == 2 {
                        assert_ne!(q.locate(cl[0]).0, q.locate(cl[1]).0);
                        assert_eq!(q.sign(cl[0]), -q.sign(cl[1]));
                    }
                }
            }
        }
    }

    #[test]
    fn couple_product_examples() {
        let tr = Couple::trivial();
        assert_eq!(couple_product(&tr, 0, &tr).unwrap(), tr);
        let k1 = enumerate_couples(1).unwrap();
        for q in &k1 {
            assert_eq!(&couple_product(&tr, 0, q).unwrap(), q);
            for p in 0..3 {
                assert_eq!(&couple_product(q, p, &tr).unwrap(), q);
                for r in &k1 {
                    let c = couple_product(q, p, r).unwrap();
                    assert_eq!(c.order(), 2);
                    assert!(is_regular(&c));
                }
            }
        }
        assert!(matches!(couple_product(&tr, 3, &tr), Err(Error::InvalidPair(3))));
    }

    #[test]
    fn split_product_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let base = Couple::random(rng.random_range(1..3), &mut rng);
            let att = Couple::random(rng.random_range(1..3), &mut rng);
            let p = rng.random_range(0..base.num_pairs());
            let c = couple_product(&base, p, &att).unwrap();
            // Find the class created by the product: the root of the attachment.
            let cc = conjugate_classes(&c);
            let mut found = false;
            for cl in cc.size_two() {
                if c.is_leaf(cl[0]) || c.is_leaf(cl[1]) || cl[0] == 0 {
                    continue;
                }
                let (o, pp, inner) = split_at_class(&c, cl[0], cl[1]).unwrap();
                assert_eq!(couple_product(&o, pp, &inner).unwrap(), c);
                if o == base && inner == att && pp == p {
                    found = true;
                }
            }
            assert!(found);
        }
    }

    #[test]
    fn k1_factorization() {
        for q in enumerate_couples(1).unwrap() {
            let f = irreducible_factorization(&q);
            assert_eq!(f.factors.len(), 1);
            assert_eq!(f.regular_index, 0);
            assert_eq!(f.factors[0].couple, q);
            assert!(is_irreducible(&q));
        }
    }

    #[test]
    fn regular_membership_matches_index() {
        for n in 0..=2 {
            let reg: HashSet<String> = enumerate_regular_couples(n).unwrap().iter().map(|c| c.serialize()).collect();
            let all = enumerate_couples(n).unwrap();
            let mut hits = 0;
            for q in &all {
                let r = is_regular(q);
                assert_eq!(r, reg.contains(&q.serialize()));
                hits += r as usize;
            }
            assert_eq!(hits, reg.len());
        }
    }

    #[test]
    fn regular_decomposition_roundtrip() {
        for n in 1..=3 {
            for q in enumerate_regular_couples(n).unwrap() {
                let (s, [a, b, c]) = regular_decompose(&q).unwrap();
                assert_eq!(regular_product(s, &a, &b, &c), q);
            }
        }
    }

    #[test]
    fn regular_enumeration_has_no_duplicates() {
        for n in 0..=4 {
            let v = enumerate_regular_couples(n).unwrap();
            let s: HashSet<String> = v.iter().map(|c| c.serialize()).collect();
            assert_eq!(s.len(), v.len());
        }
    }

    #[test]
    fn four_factor_regular_couple() {
        // A chain of K1 blocks nested on three levels: four order-one factors.
        let k1 = enumerate_couples(1).unwrap();
        let inner = couple_product(&k1[0], 0, &k1[1]).unwrap();
        let mid = couple_product(&k1[1], 1, &inner).unwrap();
        let q = couple_product(&mid, 4, &k1[0]).unwrap();
        assert_eq!(q.order(), 4);
        let f = irreducible_factorization(&q);
        assert_eq!(f.factors.len(), 4);
        assert!(f.factors.iter().all(|x| x.order() == 1));
        assert_eq!(f.regular_index, 0);
    }
}
