//! Polynomials in the adjacency matrix and the lag-substitution recursion.
//!
//! Every lag matrix in this crate has the form `sum_g c_g A^g`, so products of
//! lag matrices reduce to convolutions of coefficient vectors. The
//! coefficients are either plain numbers or symbolic polynomials in the
//! timing weights `delta`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;

use crate::network::Network;

/// Coefficient ring for [`APoly`].
pub trait Coeff: Clone + fmt::Debug {
    fn zero() -> Self;
    fn one() -> Self;
    fn is_zero(&self) -> bool;
    fn add(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
}

impl Coeff for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
}

/// Polynomial in `delta_1, delta_2, ...` with real coefficients.
///
/// Monomials are exponent vectors with trailing zeros trimmed, so the
/// representation is canonical regardless of how many variables exist.
#[derive(Clone, PartialEq, Default)]
pub struct DeltaPoly {
    terms: BTreeMap<Vec<u32>, f64>,
}

impl DeltaPoly {
    /// The variable `delta_l` (1-based).
    pub fn var(l: usize) -> Self {
        assert!(l >= 1, "delta indices start at 1");
        let mut e = vec![0; l];
        e[l - 1] = 1;
        DeltaPoly { terms: BTreeMap::from([(e, 1.0)]) }
    }

    pub fn constant(c: f64) -> Self {
        let mut p = DeltaPoly::default();
        if c != 0.0 {
            p.terms.insert(Vec::new(), c);
        }
        p
    }

    /// Builds a polynomial from `(coefficient, exponents)` pairs.
    pub fn from_terms(terms: &[(f64, &[u32])]) -> Self {
        let mut p = DeltaPoly::default();
        for (c, e) in terms {
            p.add_term(trim(e.to_vec()), *c);
        }
        p
    }

    fn add_term(&mut self, e: Vec<u32>, c: f64) {
        let entry = self.terms.entry(e.clone()).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            self.terms.remove(&e);
        }
    }

    /// `(coefficient, exponents)` pairs in lexicographic monomial order.
    pub fn terms(&self) -> impl Iterator<Item = (f64, &[u32])> {
        self.terms.iter().map(|(e, c)| (*c, e.as_slice()))
    }

    pub fn eval(&self, delta: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                e.iter().enumerate().fold(*c, |acc, (l, &k)| acc * delta[l].powi(k as i32))
            })
            .sum()
    }
}

fn trim(mut e: Vec<u32>) -> Vec<u32> {
    while e.last() == Some(&0) {
        e.pop();
    }
    e
}

impl fmt::Debug for DeltaPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for DeltaPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            let mut factors = Vec::new();
            if *c != 1.0 || e.iter().all(|k| *k == 0) {
                factors.push(format!("{c}"));
            }
            for (l, &k) in e.iter().enumerate() {
                match k {
                    0 => {}
                    1 => factors.push(format!("d{}", l + 1)),
                    _ => factors.push(format!("d{}^{}", l + 1, k)),
                }
            }
            write!(f, "{}", factors.join("*"))?;
        }
        Ok(())
    }
}

impl Coeff for DeltaPoly {
    fn zero() -> Self {
        DeltaPoly::default()
    }
    fn one() -> Self {
        DeltaPoly::constant(1.0)
    }
    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
    fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }
    fn mul(&self, other: &Self) -> Self {
        let mut out = DeltaPoly::default();
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let len = e1.len().max(e2.len());
                let e: Vec<u32> = (0..len)
                    .map(|i| e1.get(i).copied().unwrap_or(0) + e2.get(i).copied().unwrap_or(0))
                    .collect();
                out.add_term(trim(e), c1 * c2);
            }
        }
        out
    }
}

/// `sum_g coeffs[g] * A^g`.
#[derive(Clone, Debug)]
pub struct APoly<C> {
    pub coeffs: Vec<C>,
}

impl<C: Coeff> APoly<C> {
    pub fn zero() -> Self {
        APoly { coeffs: Vec::new() }
    }

    pub fn identity() -> Self {
        APoly { coeffs: vec![C::one()] }
    }

    /// `c * A^power`.
    pub fn monomial(c: C, power: usize) -> Self {
        let mut coeffs = vec![C::zero(); power + 1];
        coeffs[power] = c;
        APoly { coeffs }.trimmed()
    }

    fn trimmed(mut self) -> Self {
        while self.coeffs.last().is_some_and(|c| c.is_zero()) {
            self.coeffs.pop();
        }
        self
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    /// Highest power with a nonzero coefficient.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.iter().rposition(|c| !c.is_zero())
    }

    /// Lowest power with a nonzero coefficient.
    pub fn low_degree(&self) -> Option<usize> {
        self.coeffs.iter().position(|c| !c.is_zero())
    }

    pub fn coeff(&self, g: usize) -> C {
        self.coeffs.get(g).cloned().unwrap_or_else(C::zero)
    }

    pub fn add(&self, other: &Self) -> Self {
        let len = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..len).map(|g| self.coeff(g).add(&other.coeff(g))).collect();
        APoly { coeffs }.trimmed()
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return APoly::zero();
        }
        let mut coeffs = vec![C::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (g, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (k, b) in other.coeffs.iter().enumerate() {
                if b.is_zero() {
                    continue;
                }
                coeffs[g + k] = coeffs[g + k].add(&a.mul(b));
            }
        }
        APoly { coeffs }.trimmed()
    }
}

impl APoly<f64> {
    /// Materialises the matrix using the network's cached powers.
    pub fn to_matrix(&self, net: &Network) -> DMatrix<f64> {
        let n = net.n();
        let mut m = DMatrix::zeros(n, n);
        for (g, c) in self.coeffs.iter().enumerate() {
            if *c != 0.0 {
                m += &*net.power(g) * *c;
            }
        }
        m
    }
}

impl APoly<DeltaPoly> {
    /// Substitutes numeric `delta` into every coefficient.
    pub fn eval(&self, delta: &[f64]) -> APoly<f64> {
        APoly { coeffs: self.coeffs.iter().map(|c| c.eval(delta)).collect() }.trimmed()
    }
}

/// Result of the lag-substitution recursion. Both vectors are 1-based:
/// index 0 is unused and always zero.
#[derive(Clone, Debug)]
pub struct Substitution<C> {
    /// Coefficients on `x_{tau-l}` after the final iteration.
    pub v: Vec<APoly<C>>,
    /// Coefficients on `v_{tau-l+1}`; `w[1]` is the identity.
    pub w: Vec<APoly<C>>,
}

/// Runs the recursion that substitutes out lagged values one at a time.
///
/// `lags[k - 1]` is the coefficient on `x_{tau-k}` in the original law of
/// motion. Iteration `h` (for `h = 2..=steps`) replaces `x_{tau-h+1}` by its
/// own law of motion unless `keep(h - 1)` says that lag is observed and must
/// stay in the equation.
pub fn substitute<C: Coeff>(
    lags: &[APoly<C>],
    steps: usize,
    keep: impl Fn(usize) -> bool,
) -> Substitution<C> {
    let p = lags.len();
    let len = steps.max(1) + p + 1;
    let mut v = vec![APoly::zero(); len];
    for (k, lag) in lags.iter().enumerate() {
        v[k + 1] = lag.clone();
    }
    let mut w = vec![APoly::zero(); steps.max(1) + 1];
    w[1] = APoly::identity();
    for h in 2..=steps {
        if keep(h - 1) {
            continue;
        }
        let c = std::mem::replace(&mut v[h - 1], APoly::zero());
        if c.is_zero() {
            w[h] = c;
            continue;
        }
        for (k, lag) in lags.iter().enumerate() {
            let l = h + k;
            v[l] = v[l].add(&c.mul(lag));
        }
        w[h] = c;
    }
    Substitution { v, w }
}
