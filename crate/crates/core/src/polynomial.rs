//! Sparse multivariate polynomials over `f64` and graded monomial bases.
//!
//! Variables are positional. Across the crate the parametric variable `y`
//! (the scalarization weight) is always variable 0, followed by the decision
//! variables `x_1..x_n`, followed by the lifting variable `omega` when one is
//! present.
//!
//! Monomials are ordered graded-lexicographically: by total degree first,
//! then with a larger exponent on an earlier variable coming first, so the
//! degree-one monomials in `(y, x_1)` enumerate as `1, y, x_1`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A multi-index `(k, alpha)`; one exponent per variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    /// The monomial `v_i^power`.
    pub fn var(nvars: usize, i: usize, power: u32) -> Self {
        let mut e = vec![0; nvars];
        e[i] = power;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|&e| e as usize).sum()
    }

    /// Product of monomials, i.e. the sum of exponent vectors.
    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(point)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One serialized term: `{"exps": [...], "coef": ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub exps: Vec<u32>,
    pub coef: f64,
}

/// Sparse polynomial. Zero coefficients are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::one(nvars), c);
        p
    }

    /// The polynomial `v_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::var(nvars, i, 1), 1.0);
        p
    }

    /// Builds a polynomial from `(exponents, coefficient)` pairs, summing
    /// repeated monomials.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, f64)>,
    {
        let mut p = Self::zero(nvars);
        for (exps, coef) in terms {
            if exps.len() != nvars {
                return Err(Error::DimensionMismatch {
                    expected: nvars,
                    found: exps.len(),
                });
            }
            p.add_term(Monomial(exps), coef);
        }
        Ok(p)
    }

    pub fn from_term_list(nvars: usize, terms: &[Term]) -> Result<Self> {
        Self::from_terms(nvars, terms.iter().map(|t| (t.exps.clone(), t.coef)))
    }

    pub fn to_term_list(&self) -> Vec<Term> {
        self.terms
            .iter()
            .map(|(m, &c)| Term {
                exps: m.0.clone(),
                coef: c,
            })
            .collect()
    }

    pub fn add_term(&mut self, mono: Monomial, coef: f64) {
        debug_assert_eq!(mono.nvars(), self.nvars);
        if coef == 0.0 {
            return;
        }
        let entry = self.terms.entry(mono);
        match entry {
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let v = *o.get() + coef;
                if v == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = v;
                }
            }
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(coef);
            }
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Maximum total degree over the terms; 0 for the zero polynomial.
    pub fn degree(&self) -> usize {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Largest exponent of variable `var` over the terms.
    pub fn degree_in(&self, var: usize) -> usize {
        self.terms
            .keys()
            .map(|m| m.0[var] as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn coefficient(&self, mono: &Monomial) -> f64 {
        self.terms.get(mono).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> + '_ {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    /// The constant value if the polynomial has no non-constant terms.
    pub fn as_constant(&self) -> Option<f64> {
        match self.degree() {
            0 => Some(self.coefficient(&Monomial::one(self.nvars))),
            _ => None,
        }
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.nvars {
            return Err(Error::DimensionMismatch {
                expected: self.nvars,
                found: point.len(),
            });
        }
        Ok(self.terms.iter().map(|(m, c)| c * m.eval(point)).sum())
    }

    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_same(other)?;
        let mut out = Polynomial::zero(self.nvars);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        Ok(out)
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        Ok(out)
    }

    pub fn scale(&self, factor: f64) -> Polynomial {
        if factor == 0.0 {
            return Polynomial::zero(self.nvars);
        }
        Polynomial {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(m, &c)| (m.clone(), c * factor)).collect(),
        }
    }

    /// Returns `(self - shift) / scale`.
    pub fn affine_scale(&self, shift: f64, scale: f64) -> Result<Polynomial> {
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::ZeroScale);
        }
        let mut out = self.clone();
        out.add_term(Monomial::one(self.nvars), -shift);
        Ok(out.scale(1.0 / scale))
    }

    /// Re-expresses the polynomial in a larger variable space: variable `i`
    /// of `self` becomes variable `placement[i]` of the result.
    pub fn embed(&self, nvars: usize, placement: &[usize]) -> Polynomial {
        assert_eq!(placement.len(), self.nvars);
        let mut out = Polynomial::zero(nvars);
        for (m, &c) in &self.terms {
            let mut e = vec![0; nvars];
            for (i, &p) in placement.iter().enumerate() {
                e[p] += m.0[i];
            }
            out.add_term(Monomial(e), c);
        }
        out
    }

    /// Substitutes `v_var = value` and drops that variable.
    pub fn fix_variable(&self, var: usize, value: f64) -> Polynomial {
        assert!(var < self.nvars);
        let mut out = Polynomial::zero(self.nvars - 1);
        for (m, &c) in &self.terms {
            let mut e = m.0.clone();
            let power = e.remove(var);
            out.add_term(Monomial(e), c * value.powi(power as i32));
        }
        out
    }

    fn check_same(&self, other: &Polynomial) -> Result<()> {
        if self.nvars != other.nvars {
            return Err(Error::DimensionMismatch {
                expected: self.nvars,
                found: other.nvars,
            });
        }
        Ok(())
    }
}

// Operator forms panic on mismatched variable counts; use the `try_*`
// methods for untrusted input.
impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(rhs).expect("polynomial variable counts differ")
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(&rhs.scale(-1.0))
            .expect("polynomial variable counts differ")
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.try_mul(rhs).expect("polynomial variable counts differ")
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}")?;
            for (v, &e) in m.0.iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*v{v}")?,
                    _ => write!(f, "*v{v}^{e}")?,
                }
            }
        }
        Ok(())
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// All monomials of total degree `<= degree` in graded-lex order, with an
/// inverse position lookup.
#[derive(Clone, Debug)]
pub struct Basis {
    nvars: usize,
    degree: usize,
    members: Vec<Monomial>,
    index: HashMap<Monomial, usize>,
}

impl Basis {
    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn degree_bound(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Monomial] {
        &self.members
    }

    pub fn get(&self, i: usize) -> &Monomial {
        &self.members[i]
    }

    pub fn position(&self, mono: &Monomial) -> Option<usize> {
        self.index.get(mono).copied()
    }

    /// Number of members of degree `<= d`; since the order is graded, these
    /// are exactly the first `prefix_len(d)` members.
    pub fn prefix_len(&self, d: usize) -> usize {
        binomial(self.nvars + d.min(self.degree), d.min(self.degree))
    }
}

pub fn enumerate_basis(nvars: usize, degree: usize) -> Basis {
    assert!(nvars >= 1, "a basis needs at least one variable");
    let mut members = Vec::with_capacity(binomial(nvars + degree, degree));
    let mut scratch = vec![0u32; nvars];
    for total in 0..=degree {
        push_exact_degree(&mut members, &mut scratch, 0, total as u32);
    }
    let index = members
        .iter()
        .enumerate()
        .map(|(i, m)| (m.clone(), i))
        .collect();
    Basis {
        nvars,
        degree,
        members,
        index,
    }
}

fn push_exact_degree(out: &mut Vec<Monomial>, scratch: &mut [u32], var: usize, remaining: u32) {
    if var + 1 == scratch.len() {
        scratch[var] = remaining;
        out.push(Monomial(scratch.to_vec()));
        return;
    }
    for e in (0..=remaining).rev() {
        scratch[var] = e;
        push_exact_degree(out, scratch, var + 1, remaining - e);
    }
    scratch[var] = 0;
}
