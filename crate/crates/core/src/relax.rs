//! Order-`d` moment relaxation of a (parametric) polynomial program.
//!
//! The SDP variable is the truncated moment vector `z`, indexed by the
//! graded-lex basis of all monomials of degree `<= 2d`. The relaxation is
//!
//! ```text
//! min  L_z(f)
//! s.t. M_d(z) >= 0
//!      M_{d - v_l}(p_l z) >= 0          for every constraint p_l >= 0
//!      L_z(y^k) = 1 / (k + 1)           k = 0..2d   (parametric case)
//!      L_z(1)   = 1                                  (non-parametric case)
//! ```
//!
//! with `v_l = ceil(deg p_l / 2)`. Each block is stored as a symmetric map
//! from matrix entries to sparse linear forms in `z`.
//!
//! # Text dump
//!
//! [`MomentSdp::write_listing`] emits a line-oriented, SDPA-like listing:
//!
//! ```text
//! * comment lines start with '*'
//! <m>                    number of moment variables
//! <nblocks>
//! <side_1> ... <side_B>
//! <c_1> ... <c_m>        objective coefficients
//! <i> <block> <row> <col> <value>     one line per nonzero, upper triangle
//! = <i> <value>          one line per moment equality z_i = value
//! ```
//!
//! Variable, block, row and column numbers are 1-based.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::polynomial::{enumerate_basis, Basis, Monomial, Polynomial};
use crate::scalarize::ParametricPop;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Moment,
    /// Localizing block of constraint number `l` (0-based).
    Localizing(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsdBlock {
    pub kind: BlockKind,
    pub side: usize,
    /// Packed upper triangle, row-major: entry `(r, c)` with `r <= c`.
    entries: Vec<Vec<(usize, f64)>>,
}

impl PsdBlock {
    fn new(kind: BlockKind, side: usize) -> Self {
        PsdBlock {
            kind,
            side,
            entries: vec![Vec::new(); side * (side + 1) / 2],
        }
    }

    /// Hand-built block from `(row, col, form)` cells; cells not listed are
    /// zero and the lower triangle mirrors the upper one.
    pub fn from_cells(
        kind: BlockKind,
        side: usize,
        cells: impl IntoIterator<Item = (usize, usize, Vec<(usize, f64)>)>,
    ) -> Self {
        let mut block = PsdBlock::new(kind, side);
        for (r, c, form) in cells {
            let at = block.packed(r, c);
            block.entries[at] = form;
        }
        block
    }

    fn packed(&self, r: usize, c: usize) -> usize {
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        r * self.side - r * (r + 1) / 2 + c
    }

    /// Linear form in `z` giving matrix entry `(r, c)`; symmetric in its
    /// arguments.
    pub fn entry(&self, r: usize, c: usize) -> &[(usize, f64)] {
        &self.entries[self.packed(r, c)]
    }

    /// Iterates `(r, c, form)` over the upper triangle.
    pub fn upper_entries(&self) -> impl Iterator<Item = (usize, usize, &[(usize, f64)])> + '_ {
        (0..self.side).flat_map(move |r| {
            (r..self.side).map(move |c| (r, c, self.entries[self.packed(r, c)].as_slice()))
        })
    }

    /// Dense matrix of the block evaluated at `z`.
    pub fn evaluate(&self, z: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.side, self.side);
        for (r, c, form) in self.upper_entries() {
            let v: f64 = form.iter().map(|&(i, a)| a * z[i]).sum();
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
        m
    }
}

#[derive(Clone, Debug)]
pub struct MomentSdp {
    pub order: usize,
    pub z_basis: Basis,
    /// `c` with `c^T z = L_z(f)`.
    pub objective: Vec<f64>,
    pub blocks: Vec<PsdBlock>,
    /// `(index into z, value)`: for the parametric relaxation entry `k` pins
    /// `L_z(y^k) = 1/(k+1)`.
    pub equalities: Vec<(usize, f64)>,
    /// Typical magnitude of each variable on the feasible set. Only used to
    /// precondition the solver.
    pub variable_scales: Vec<f64>,
}

impl MomentSdp {
    pub fn num_moments(&self) -> usize {
        self.z_basis.len()
    }

    /// `L_z(p) = sum_beta p_beta z_beta`.
    pub fn eval_linear_functional(&self, z: &[f64], p: &Polynomial) -> Result<f64> {
        if p.nvars() != self.z_basis.nvars() {
            return Err(Error::DimensionMismatch {
                expected: self.z_basis.nvars(),
                found: p.nvars(),
            });
        }
        if z.len() != self.z_basis.len() {
            return Err(Error::DimensionMismatch {
                expected: self.z_basis.len(),
                found: z.len(),
            });
        }
        let mut acc = 0.0;
        for (mono, coef) in p.terms() {
            let i = self
                .z_basis
                .position(mono)
                .ok_or(Error::DegreeOverflow {
                    degree: p.degree(),
                    bound: self.z_basis.degree_bound(),
                })?;
            acc += coef * z[i];
        }
        Ok(acc)
    }

    pub fn moment_block(&self) -> &PsdBlock {
        &self.blocks[0]
    }

    pub fn write_listing<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "* moment relaxation of order {}", self.order)?;
        writeln!(w, "{}", self.num_moments())?;
        writeln!(w, "{}", self.blocks.len())?;
        let sides: Vec<String> = self.blocks.iter().map(|b| b.side.to_string()).collect();
        writeln!(w, "{}", sides.join(" "))?;
        let obj: Vec<String> = self.objective.iter().map(|c| format!("{c:e}")).collect();
        writeln!(w, "{}", obj.join(" "))?;
        for (bi, block) in self.blocks.iter().enumerate() {
            for (r, c, form) in block.upper_entries() {
                for &(i, a) in form {
                    writeln!(w, "{} {} {} {} {:e}", i + 1, bi + 1, r + 1, c + 1, a)?;
                }
            }
        }
        for &(i, v) in &self.equalities {
            writeln!(w, "= {} {:e}", i + 1, v)?;
        }
        Ok(())
    }
}

/// `ceil(deg p / 2)`.
pub fn half_degree(p: &Polynomial) -> usize {
    p.degree().div_ceil(2)
}

/// Smallest admissible order: `max(ceil(deg f / 2), v_1, ..., v_m)`.
pub fn min_order_of(objective: &Polynomial, constraints: &[Polynomial]) -> usize {
    constraints
        .iter()
        .map(half_degree)
        .chain(std::iter::once(half_degree(objective)))
        .max()
        .unwrap_or(0)
        .max(1)
}

pub fn min_order(pop: &ParametricPop) -> usize {
    min_order_of(&pop.objective, &pop.constraints)
}

/// Parametric relaxation: variable 0 is the parameter `y`, whose marginal is
/// pinned to the Lebesgue measure on `[0, 1]`.
pub fn assemble(pop: &ParametricPop, d: usize) -> Result<MomentSdp> {
    let mut sdp = assemble_program(
        &pop.objective,
        &pop.constraints,
        &pop.variable_scales,
        d,
    )?;
    let nvars = sdp.z_basis.nvars();
    sdp.equalities = (0..=2 * d)
        .map(|k| {
            let idx = sdp
                .z_basis
                .position(&Monomial::var(nvars, 0, k as u32))
                .expect("y^k lies in the degree-2d basis");
            (idx, 1.0 / (k as f64 + 1.0))
        })
        .collect();
    Ok(sdp)
}

/// Non-parametric relaxation with only the mass normalization `L_z(1) = 1`.
pub fn assemble_static(
    objective: &Polynomial,
    constraints: &[Polynomial],
    variable_scales: &[f64],
    d: usize,
) -> Result<MomentSdp> {
    let mut sdp = assemble_program(objective, constraints, variable_scales, d)?;
    sdp.equalities = vec![(0, 1.0)];
    Ok(sdp)
}

fn assemble_program(
    objective: &Polynomial,
    constraints: &[Polynomial],
    variable_scales: &[f64],
    d: usize,
) -> Result<MomentSdp> {
    let nvars = objective.nvars();
    if variable_scales.len() != nvars {
        return Err(Error::DimensionMismatch {
            expected: nvars,
            found: variable_scales.len(),
        });
    }
    if let Some(p) = constraints.iter().find(|p| p.nvars() != nvars) {
        return Err(Error::DimensionMismatch {
            expected: nvars,
            found: p.nvars(),
        });
    }
    let d0 = min_order_of(objective, constraints);
    if d < d0 {
        return Err(Error::OrderTooLow {
            order: d,
            min_order: d0,
        });
    }

    let z_basis = enumerate_basis(nvars, 2 * d);
    let mut c = vec![0.0; z_basis.len()];
    for (mono, coef) in objective.terms() {
        c[z_basis.position(mono).expect("deg f <= 2d")] = coef;
    }

    let mut blocks = Vec::with_capacity(constraints.len() + 1);
    blocks.push(localizing_block(
        &z_basis,
        &Polynomial::constant(nvars, 1.0),
        d,
        BlockKind::Moment,
    ));
    for (l, p) in constraints.iter().enumerate() {
        blocks.push(localizing_block(
            &z_basis,
            p,
            d - half_degree(p),
            BlockKind::Localizing(l),
        ));
    }

    Ok(MomentSdp {
        order: d,
        z_basis,
        objective: c,
        blocks,
        equalities: Vec::new(),
        variable_scales: variable_scales.to_vec(),
    })
}

/// `M_k(p z)`: rows and columns indexed by the monomials of degree `<= k`;
/// entry `(a, b)` is `sum_gamma p_gamma z_{a + b + gamma}`.
fn localizing_block(z_basis: &Basis, p: &Polynomial, k: usize, kind: BlockKind) -> PsdBlock {
    let side = z_basis.prefix_len(k);
    let rows = &z_basis.members()[..side];
    let mut block = PsdBlock::new(kind, side);
    for r in 0..side {
        for c in r..side {
            let base = rows[r].mul(&rows[c]);
            let form: Vec<(usize, f64)> = p
                .terms()
                .map(|(g, coef)| {
                    let idx = z_basis
                        .position(&base.mul(g))
                        .expect("localizing entry within degree 2d");
                    (idx, coef)
                })
                .collect();
            let at = block.packed(r, c);
            block.entries[at] = form;
        }
    }
    block
}

/// Truncated moment vector of the atomic measure `sum_i w_i delta_{x_i}`.
pub fn atomic_moments(basis: &Basis, atoms: &[(f64, Vec<f64>)]) -> Vec<f64> {
    basis
        .members()
        .iter()
        .map(|m| atoms.iter().map(|(w, pt)| w * m.eval(pt)).sum())
        .collect()
}
