//! Density estimates from generalized moments on `[0, 1]`.
//!
//! Given `m_k = int_0^1 lambda^k h(lambda) dlambda` for `k = 0..=s`, the
//! degree-`s` polynomial whose moments match is the `L^2([0,1])` projection
//! of `h` onto polynomials of degree at most `s`. In the monomial basis its
//! coefficients solve `H_s h = m` with the Hilbert-type matrix
//! `H_s(i,j) = 1/(i+j+1)`. That matrix is too ill-conditioned to factor
//! directly past `s ~ 10`, so the projection is computed in the shifted
//! Legendre basis, where the Gram matrix is diagonal, and converted back.
//!
//! No smoothing is applied to the moments: noise in them goes straight into
//! the coefficients. When the value function is not unique on a set of
//! positive measure the estimate approximates whichever measurable selection
//! the moments encode.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::polynomial::{binomial, Polynomial};

pub const S_MAX: usize = 12;
pub const S_WARN: usize = 10;

pub fn hankel_matrix(s: usize) -> DMatrix<f64> {
    DMatrix::from_fn(s + 1, s + 1, |i, j| 1.0 / (i + j + 1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentVector {
    /// `values[k]` approximates `int lambda^k f_j*(lambda)`.
    pub values: Vec<f64>,
    pub s: usize,
    pub criterion: usize,
}

impl MomentVector {
    pub fn new(values: Vec<f64>, criterion: usize) -> Self {
        assert!(!values.is_empty(), "a moment vector needs at least m_0");
        MomentVector {
            s: values.len() - 1,
            values,
            criterion,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityEstimate {
    /// Monomial coefficients, constant term first.
    pub coeffs: Vec<f64>,
    pub s: usize,
}

impl DensityEstimate {
    pub fn eval(&self, lambda: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * lambda + c)
    }

    pub fn to_polynomial(&self) -> Polynomial {
        Polynomial::from_terms(
            1,
            self.coeffs.iter().enumerate().map(|(k, c)| (vec![k as u32], *c)),
        )
        .expect("univariate terms")
    }

    /// `int_0^1 lambda^k h(lambda) dlambda`.
    pub fn moment(&self, k: usize) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c / (i + k + 1) as f64)
            .sum()
    }
}

/// Monomial coefficients of the shifted Legendre polynomial of degree `k`
/// on `[0, 1]`: `sum_i (-1)^(k+i) C(k,i) C(k+i,i) lambda^i`.
pub fn shifted_legendre(k: usize) -> Vec<f64> {
    (0..=k)
        .map(|i| {
            let sign = if (k + i) % 2 == 0 { 1.0 } else { -1.0 };
            sign * binomial(k, i) as f64 * binomial(k + i, i) as f64
        })
        .collect()
}

fn check_degree(s: usize) -> Result<()> {
    if s > S_MAX {
        return Err(Error::IllConditioned { s, s_max: S_MAX });
    }
    if s >= S_WARN {
        log::warn!("density degree {s} is close to the conditioning limit {S_MAX}");
    }
    Ok(())
}

pub fn recover_density(m: &MomentVector) -> Result<DensityEstimate> {
    let s = m.s;
    check_degree(s)?;
    let mut coeffs = vec![0.0; s + 1];
    for k in 0..=s {
        let leg = shifted_legendre(k);
        // <P_k, h> / <P_k, P_k> with <P_k, P_k> = 1 / (2k + 1)
        let proj: f64 = leg.iter().zip(&m.values).map(|(c, v)| c * v).sum::<f64>() * (2 * k + 1) as f64;
        for (i, c) in leg.iter().enumerate() {
            coeffs[i] += proj * c;
        }
    }
    Ok(DensityEstimate { coeffs, s })
}

/// Direct `H_s^{-1} m` by Cholesky. Reliable only for small `s`.
pub fn recover_density_direct(m: &MomentVector) -> Result<DensityEstimate> {
    check_degree(m.s)?;
    let h = hankel_matrix(m.s);
    let chol = h
        .cholesky()
        .ok_or(Error::IllConditioned { s: m.s, s_max: S_MAX })?;
    let x = chol.solve(&DVector::from_column_slice(&m.values));
    Ok(DensityEstimate {
        coeffs: x.iter().copied().collect(),
        s: m.s,
    })
}

/// `n` uniform points on `[0, 1]` including both ends.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn parametric_curve(h1: &DensityEstimate, h2: &DensityEstimate, n: usize) -> Result<Vec<(f64, f64)>> {
    if n < 2 {
        return Err(Error::Usage(format!("curve grid needs at least 2 points, got {n}")));
    }
    Ok(uniform_grid(n)
        .into_iter()
        .map(|l| (h1.eval(l), h2.eval(l)))
        .collect())
}
