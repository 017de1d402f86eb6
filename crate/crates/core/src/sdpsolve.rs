//! Dense primal-dual interior-point solver for moment relaxations.
//!
//! The moment side is handled as the problem in free variables
//!
//! ```text
//! min  c^T z   s.t.  A z = b,   S_j = G_j(z) >= 0
//! ```
//!
//! where `G_j` maps `z` to the `j`-th moment or localizing matrix. Its dual
//! is the sums-of-squares program
//!
//! ```text
//! max  b^T q   s.t.  A^T q + sum_j G_j^*(Y_j) = c,   Y_j >= 0
//! ```
//!
//! so `q` holds the coefficients of the univariate lower bound `q(y)` and the
//! `Y_j` are the Gram matrices of the SOS multipliers.
//!
//! Each iteration uses the Nesterov-Todd scaling `W_j S_j W_j = Y_j` and a
//! Mehrotra predictor-corrector step. The Newton system is reduced to the
//! Schur complement in the columns of `z` left free by the equality rows. Columns of
//! `z` are rescaled by the monomial magnitudes implied by
//! [`MomentSdp::variable_scales`] before solving.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Error, Result};
use crate::polynomial::{Basis, Monomial, Polynomial};
use crate::relax::MomentSdp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    NumericalTrouble,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            gap_tol: 1e-7,
            feas_tol: 1e-7,
            max_iter: 200,
            verbose: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// Approximate optimal moment vector, indexed like `z_basis`.
    pub z: Vec<f64>,
    /// Multipliers of the moment equalities, in the order of
    /// `MomentSdp::equalities`.
    pub q_coeffs: Vec<f64>,
    pub objective_primal: f64,
    pub objective_dual: f64,
    /// `|primal - dual| / (1 + |primal| + |dual|)`.
    pub gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub iterations: usize,
    /// Equality right-hand sides, kept so the dual value can be re-derived.
    pub equality_values: Vec<f64>,
    /// Gram matrices of the SOS multipliers, one per block.
    pub(crate) dual_blocks: Vec<DMatrix<f64>>,
    gap_tol: f64,
    feas_tol: f64,
}

impl SdpSolution {
    /// Optimal, or stopped early with gap and residuals within a factor 100
    /// of the requested tolerances.
    pub fn is_usable(&self) -> bool {
        match self.status {
            SolveStatus::Optimal => true,
            SolveStatus::MaxIter | SolveStatus::NumericalTrouble => {
                self.gap <= 100.0 * self.gap_tol
                    && self.primal_infeasibility <= 100.0 * self.feas_tol
                    && self.dual_infeasibility <= 100.0 * self.feas_tol
            }
            SolveStatus::Infeasible | SolveStatus::Unbounded => false,
        }
    }

    pub fn dual_blocks(&self) -> &[DMatrix<f64>] {
        &self.dual_blocks
    }
}

/// `q(y) = sum_k q_k y^k` from the multipliers of the `2d + 1` marginal
/// equalities of a parametric relaxation.
pub fn extract_dual_polynomial(sol: &SdpSolution, d: usize) -> Result<Polynomial> {
    if !sol.is_usable() {
        return Err(Error::Solver(sol.status));
    }
    if sol.q_coeffs.len() != 2 * d + 1 {
        return Err(Error::DimensionMismatch {
            expected: 2 * d + 1,
            found: sol.q_coeffs.len(),
        });
    }
    Polynomial::from_terms(
        1,
        sol.q_coeffs
            .iter()
            .enumerate()
            .map(|(k, &q)| (vec![k as u32], q)),
    )
}

struct Block {
    side: usize,
    /// Per participating variable: `(variable, [(r, c, coef)])`, `r <= c`.
    vars: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

impl Block {
    fn apply(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.side, self.side);
        for (i, entries) in &self.vars {
            let ui = u[*i];
            if ui == 0.0 {
                continue;
            }
            for &(r, c, a) in entries {
                m[(r, c)] += a * ui;
                if r != c {
                    m[(c, r)] += a * ui;
                }
            }
        }
        m
    }

    fn adjoint_into(&self, t: &DMatrix<f64>, out: &mut DVector<f64>) {
        for (i, entries) in &self.vars {
            out[*i] += inner(entries, t);
        }
    }
}

/// `<G, T>` for the symmetric matrix `G` given by its upper entries.
fn inner(entries: &[(usize, usize, f64)], t: &DMatrix<f64>) -> f64 {
    entries
        .iter()
        .map(|&(r, c, a)| {
            if r == c {
                a * t[(r, c)]
            } else {
                a * (t[(r, c)] + t[(c, r)])
            }
        })
        .sum()
}

/// Polynomial basis used inside the solver. The parameter variable (when
/// its marginal is pinned) uses shifted Legendre polynomials orthonormal on
/// `[0, 1]`; every other variable uses `(x_v / s_v)^k`. Moment matrices in
/// the monomial basis are Hilbert-like in `y`, which ruins the Newton
/// systems long before the gap is small.
struct BasisChange {
    /// `fwd[v][k]`: monomial coefficients `(i, a)` of basis function `k` of
    /// variable `v`.
    fwd: Vec<Vec<Vec<(usize, f64)>>>,
    /// `inv[v][i]`: expansion of `t^i` in the basis functions of `v`.
    inv: Vec<Vec<Vec<(usize, f64)>>>,
}

impl BasisChange {
    fn new(scales: &[f64], max_degree: usize, legendre_first: bool) -> Self {
        let mut fwd = Vec::new();
        let mut inv = Vec::new();
        for (v, &s) in scales.iter().enumerate() {
            if v == 0 && legendre_first {
                let leg: Vec<Vec<f64>> = (0..=max_degree)
                    .map(|k| {
                        let norm = ((2 * k + 1) as f64).sqrt();
                        crate::densrec::shifted_legendre(k).iter().map(|c| c * norm).collect()
                    })
                    .collect();
                fwd.push(
                    leg.iter()
                        .map(|row| row.iter().copied().enumerate().collect())
                        .collect(),
                );
                // <t^i, L_k> on [0, 1]
                inv.push(
                    (0..=max_degree)
                        .map(|i| {
                            (0..=i)
                                .map(|k| {
                                    let ip: f64 =
                                        leg[k].iter().enumerate().map(|(j, c)| c / (i + j + 1) as f64).sum();
                                    (k, ip)
                                })
                                .collect()
                        })
                        .collect(),
                );
            } else {
                fwd.push((0..=max_degree).map(|k| vec![(k, s.powi(-(k as i32)))]).collect());
                inv.push((0..=max_degree).map(|i| vec![(i, s.powi(i as i32))]).collect());
            }
        }
        BasisChange { fwd, inv }
    }

    /// Tensor expansion of a multi-index through per-variable tables.
    fn expand(
        table: &[Vec<Vec<(usize, f64)>>],
        basis: &Basis,
        exps: &[u32],
    ) -> Vec<(usize, f64)> {
        let mut acc: Vec<(Vec<u32>, f64)> = vec![(Vec::with_capacity(exps.len()), 1.0)];
        for (v, &e) in exps.iter().enumerate() {
            let row = &table[v][e as usize];
            let mut next = Vec::with_capacity(acc.len() * row.len());
            for (prefix, a) in &acc {
                for &(k, b) in row {
                    let mut p = prefix.clone();
                    p.push(k as u32);
                    next.push((p, a * b));
                }
            }
            acc = next;
        }
        acc.into_iter()
            .map(|(e, a)| (basis.position(&Monomial::new(e)).expect("degree preserved"), a))
            .collect()
    }
}

/// Accumulates linear forms over monomial moments, re-expressed in the
/// solver variables.
struct FormBuilder<'a> {
    z_map: &'a [Vec<(usize, f64)>],
    acc: Vec<f64>,
    touched: Vec<usize>,
    hit: Vec<bool>,
}

impl<'a> FormBuilder<'a> {
    fn new(z_map: &'a [Vec<(usize, f64)>]) -> Self {
        let m = z_map.len();
        FormBuilder {
            z_map,
            acc: vec![0.0; m],
            touched: Vec::new(),
            hit: vec![false; m],
        }
    }

    fn add(&mut self, form: &[(usize, f64)], scale: f64) {
        for &(beta, a) in form {
            for &(i, b) in &self.z_map[beta] {
                if !self.hit[i] {
                    self.hit[i] = true;
                    self.touched.push(i);
                }
                self.acc[i] += scale * a * b;
            }
        }
    }

    /// Takes the accumulated form, dropping round-off debris.
    fn take(&mut self) -> Vec<(usize, f64)> {
        let big = self.touched.iter().map(|&i| self.acc[i].abs()).fold(0.0, f64::max);
        let mut out: Vec<(usize, f64)> = self
            .touched
            .iter()
            .filter_map(|&i| {
                let v = self.acc[i];
                (v.abs() > 1e-13 * big).then_some((i, v))
            })
            .collect();
        for &i in &self.touched {
            self.acc[i] = 0.0;
            self.hit[i] = false;
        }
        self.touched.clear();
        out.sort_unstable_by_key(|e| e.0);
        out
    }
}

struct Problem {
    m: usize,
    c: DVector<f64>,
    /// Equality rows `(column, coefficient)`, one nonzero each.
    eq: Vec<(usize, f64)>,
    b: DVector<f64>,
    blocks: Vec<Block>,
    objective_scale: f64,
    /// Monomial moment `i` as a form in the solver variables.
    z_map: Vec<Vec<(usize, f64)>>,
    /// Equality multipliers in the caller's rows: `q = q_map q'`.
    q_map: DMatrix<f64>,
    /// Per block, the row basis change `C` with `S_solver = C^T S C`.
    row_maps: Vec<DMatrix<f64>>,
    b_orig: Vec<f64>,
}

impl Problem {
    fn from_sdp(sdp: &MomentSdp) -> Self {
        let m = sdp.num_moments();
        let basis = &sdp.z_basis;
        let nvars = basis.nvars();
        let max_degree = basis.degree_bound();
        let parametric = sdp.equalities.len() > 1
            && sdp
                .equalities
                .iter()
                .enumerate()
                .all(|(k, &(i, _))| basis.get(i) == &Monomial::var(nvars, 0, k as u32));
        let change = BasisChange::new(&sdp.variable_scales, max_degree, parametric);
        let z_map: Vec<Vec<(usize, f64)>> = basis
            .members()
            .iter()
            .map(|mono| BasisChange::expand(&change.inv, basis, mono.exponents()))
            .collect();
        let mut fb = FormBuilder::new(&z_map);

        for (beta, &a) in sdp.objective.iter().enumerate() {
            if a != 0.0 {
                fb.add(&[(beta, a)], 1.0);
            }
        }
        let mut c = DVector::zeros(m);
        for (i, a) in fb.take() {
            c[i] = a;
        }
        let objective_scale = c.amax().max(1.0);
        c /= objective_scale;

        let mut blocks = Vec::with_capacity(sdp.blocks.len());
        let mut row_maps = Vec::with_capacity(sdp.blocks.len());
        for blk in &sdp.blocks {
            let side = blk.side;
            let funcs: Vec<Vec<(usize, f64)>> = (0..side)
                .map(|a| BasisChange::expand(&change.fwd, basis, basis.get(a).exponents()))
                .collect();
            let mut cmat = DMatrix::zeros(side, side);
            for (a, f) in funcs.iter().enumerate() {
                for &(r, v) in f {
                    cmat[(r, a)] = v;
                }
            }
            let mut per_var: std::collections::BTreeMap<usize, Vec<(usize, usize, f64)>> =
                Default::default();
            for a in 0..side {
                for b in a..side {
                    for &(r, cra) in &funcs[a] {
                        for &(cc, ccb) in &funcs[b] {
                            fb.add(blk.entry(r, cc), cra * ccb);
                        }
                    }
                    for (i, v) in fb.take() {
                        per_var.entry(i).or_default().push((a, b, v));
                    }
                }
            }
            blocks.push(Block {
                side,
                vars: per_var.into_iter().collect(),
            });
            row_maps.push(cmat);
        }

        let neq = sdp.equalities.len();
        let b_orig: Vec<f64> = sdp.equalities.iter().map(|e| e.1).collect();
        let mut eq = Vec::with_capacity(neq);
        let mut b = DVector::zeros(neq);
        let mut q_map = DMatrix::identity(neq, neq);
        if parametric {
            q_map.fill(0.0);
        }
        if parametric {
            // rows L(phi_j(y)) = sum_i fwd[j][i] a_i pin the variable of phi_j
            for (j, &(idx, _)) in sdp.equalities.iter().enumerate() {
                eq.push((idx, 1.0));
                b[j] = change.fwd[0][j].iter().map(|&(i, a)| a * b_orig[i]).sum();
                for &(i, a) in &change.fwd[0][j] {
                    q_map[(i, j)] = a;
                }
            }
        } else {
            for (k, &(idx, val)) in sdp.equalities.iter().enumerate() {
                let form = &z_map[idx];
                assert_eq!(form.len(), 1, "equality rows must pin single moments");
                eq.push((form[0].0, form[0].1));
                b[k] = val;
            }
        }
        Problem {
            m,
            c,
            eq,
            b,
            blocks,
            objective_scale,
            z_map,
            q_map,
            row_maps,
            b_orig,
        }
    }

    fn a_apply(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.eq.len(), self.eq.iter().map(|&(i, a)| a * u[i]))
    }

    fn a_adjoint(&self, q: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for (k, &(i, a)) in self.eq.iter().enumerate() {
            out[i] += a * q[k];
        }
        out
    }

    fn g_apply(&self, u: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.blocks.iter().map(|b| b.apply(u)).collect()
    }

    fn g_adjoint(&self, mats: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for (b, t) in self.blocks.iter().zip(mats) {
            b.adjoint_into(t, &mut out);
        }
        out
    }

    fn total_side(&self) -> usize {
        self.blocks.iter().map(|b| b.side).sum()
    }

    /// `K_ik = sum_j <G_ji, G_jk>` restricted to the columns not fixed by
    /// an equality row.
    fn gram_free(&self) -> (Vec<usize>, Option<Cholesky<f64, nalgebra::Dyn>>) {
        let mut pos = vec![usize::MAX; self.m];
        let mut free = Vec::new();
        let pinned: std::collections::HashSet<usize> = self.eq.iter().map(|&(i, _)| i).collect();
        for i in 0..self.m {
            if !pinned.contains(&i) {
                pos[i] = free.len();
                free.push(i);
            }
        }
        let mut k = DMatrix::zeros(free.len(), free.len());
        for blk in &self.blocks {
            let mut g = DMatrix::zeros(blk.side, blk.side);
            for (ai, (i, ei)) in blk.vars.iter().enumerate() {
                if pos[*i] == usize::MAX {
                    continue;
                }
                g.fill(0.0);
                for &(r, c, a) in ei {
                    g[(r, c)] += a;
                    if r != c {
                        g[(c, r)] += a;
                    }
                }
                for (j, ej) in &blk.vars[ai..] {
                    if pos[*j] == usize::MAX {
                        continue;
                    }
                    let v = inner(ej, &g);
                    k[(pos[*i], pos[*j])] += v;
                    if i != j {
                        k[(pos[*j], pos[*i])] += v;
                    }
                }
            }
        }
        (free, k.cholesky())
    }

    /// Schur complement `M_ik = sum_j <G_ji, W_j G_jk W_j>`.
    fn schur(&self, scalings: &[Nt]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.m, self.m);
        for (blk, nt) in self.blocks.iter().zip(scalings) {
            let w = &nt.w;
            let n = blk.side;
            let mut b = DMatrix::zeros(n, n);
            for (ai, (i, ei)) in blk.vars.iter().enumerate() {
                b.fill(0.0);
                for &(r, c, a) in ei {
                    let wr = w.column(r);
                    let wc = w.column(c);
                    if r == c {
                        b.ger(a, &wr, &wr, 1.0);
                    } else {
                        b.ger(a, &wr, &wc, 1.0);
                        b.ger(a, &wc, &wr, 1.0);
                    }
                }
                for (k, ek) in &blk.vars[ai..] {
                    let v = inner(ek, &b);
                    m[(*i, *k)] += v;
                    if i != k {
                        m[(*k, *i)] += v;
                    }
                }
            }
        }
        m
    }
}

/// Nesterov-Todd scaling of one block: `W = G G^T`, `G^T S G = D = G^{-1} Y G^{-T}`.
struct Nt {
    w: DMatrix<f64>,
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    d: DVector<f64>,
}

impl Nt {
    fn new(s: &DMatrix<f64>, y: &DMatrix<f64>) -> Option<Nt> {
        let ls = Cholesky::new(s.clone())?.l();
        let ly = Cholesky::new(y.clone())?.l();
        let svd = SVD::new(ls.transpose() * &ly, true, true);
        let v = svd.v_t?.transpose();
        let d = svd.singular_values;
        if d.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return None;
        }
        let n = d.len();
        let mut g = &ly * &v;
        let mut gi = v.transpose() * ly.clone().try_inverse()?;
        for k in 0..n {
            let sq = d[k].sqrt();
            g.column_mut(k).scale_mut(1.0 / sq);
            gi.row_mut(k).scale_mut(sq);
        }
        let w = &g * g.transpose();
        Some(Nt { w, g, g_inv: gi, d })
    }

    /// Solves the scaled Lyapunov equation `(D X + X D) / 2 = R` and maps
    /// back: returns `G X G^T`.
    fn lyap_back(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.d.len();
        let x = DMatrix::from_fn(n, n, |i, j| 2.0 * r[(i, j)] / (self.d[i] + self.d[j]));
        &self.g * x * self.g.transpose()
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

/// Largest `alpha` in `(0, inf]` with `x + alpha dx >= 0`, for `x > 0`.
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Option<f64> {
    let l = Cholesky::new(x.clone())?.l();
    let li = l.try_inverse()?;
    let mut t = &li * dx * li.transpose();
    symmetrize(&mut t);
    let lo = SymmetricEigen::new(t).eigenvalues.min();
    if lo >= 0.0 {
        Some(f64::INFINITY)
    } else {
        Some(-1.0 / lo)
    }
}

/// Dense Cholesky on a symmetrically equilibrated matrix. Pivots that fall
/// below a relative threshold are replaced by a huge value, which zeroes
/// the corresponding component of the solution instead of failing.
struct SkipCholesky {
    n: usize,
    /// Row-major lower triangle.
    l: Vec<f64>,
    equil: Vec<f64>,
    skipped: usize,
}

impl SkipCholesky {
    const PIVOT_TOL: f64 = 1e-14;
    const HUGE: f64 = 1e64;

    fn new(m: &DMatrix<f64>) -> Option<SkipCholesky> {
        let n = m.nrows();
        let equil: Vec<f64> = (0..n)
            .map(|i| {
                let d = m[(i, i)];
                if d > 0.0 && d.is_finite() {
                    1.0 / d.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                l[i * n + j] = m[(i, j)] * equil[i] * equil[j];
            }
        }
        let mut skipped = 0;
        for j in 0..n {
            let (head, tail) = l.split_at_mut(j * n + n);
            let row_j = &head[j * n..j * n + n];
            let mut pivot = row_j[j] - row_j[..j].iter().map(|v| v * v).sum::<f64>();
            if !pivot.is_finite() {
                return None;
            }
            if pivot <= Self::PIVOT_TOL {
                pivot = Self::HUGE;
                skipped += 1;
            }
            let ljj = pivot.sqrt();
            head[j * n + j] = ljj;
            let row_j = &head[j * n..j * n + j];
            for i in (j + 1)..n {
                let row_i = &mut tail[(i - j - 1) * n..(i - j) * n];
                let dot: f64 = row_i[..j].iter().zip(row_j).map(|(a, b)| a * b).sum();
                row_i[j] = (row_i[j] - dot) / ljj;
            }
        }
        Some(SkipCholesky { n, l, equil, skipped })
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut x: Vec<f64> = rhs.iter().zip(&self.equil).map(|(r, e)| r * e).collect();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let dot: f64 = row.iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - dot) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            x[i] /= self.l[i * n + i];
            let xi = x[i];
            for k in 0..i {
                x[k] -= self.l[i * n + k] * xi;
            }
        }
        DVector::from_iterator(n, x.iter().zip(&self.equil).map(|(v, e)| v * e))
    }
}

struct Iterate {
    u: DVector<f64>,
    q: DVector<f64>,
    s: Vec<DMatrix<f64>>,
    y: Vec<DMatrix<f64>>,
}

struct Residuals {
    rp: DVector<f64>,
    rs: Vec<DMatrix<f64>>,
    rd: DVector<f64>,
    pobj: f64,
    dobj: f64,
    gap: f64,
    pinf: f64,
    dinf: f64,
    mu: f64,
}

impl Residuals {
    fn merit(&self) -> f64 {
        self.gap.max(self.pinf).max(self.dinf)
    }
}

fn residuals(p: &Problem, it: &Iterate) -> Residuals {
    let rp = &p.b - p.a_apply(&it.u);
    let gu = p.g_apply(&it.u);
    let rs: Vec<DMatrix<f64>> = gu.iter().zip(&it.s).map(|(g, s)| g - s).collect();
    let rd = &p.c - p.a_adjoint(&it.q) - p.g_adjoint(&it.y);
    let pobj = p.c.dot(&it.u);
    let dobj = p.b.dot(&it.q);
    let os = p.objective_scale;
    let gap = os * (pobj - dobj).abs() / (1.0 + os * (pobj.abs() + dobj.abs()));
    let rs_norm = rs.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
    let pinf = (rp.norm() + rs_norm) / (1.0 + p.b.norm());
    let dinf = rd.norm() / (1.0 + p.c.norm());
    let mu = it
        .s
        .iter()
        .zip(&it.y)
        .map(|(s, y)| frob_dot(s, y))
        .sum::<f64>()
        / p.total_side() as f64;
    Residuals {
        rp,
        rs,
        rd,
        pobj,
        dobj,
        gap,
        pinf,
        dinf,
        mu,
    }
}

struct Direction {
    du: DVector<f64>,
    dq: DVector<f64>,
    ds: Vec<DMatrix<f64>>,
    dy: Vec<DMatrix<f64>>,
}

/// Factored Gram operator `G^* G` on the free columns.
struct Gram {
    free: Vec<usize>,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

struct Newton<'a> {
    p: &'a Problem,
    gram: Option<&'a Gram>,
    nt: &'a [Nt],
    /// Columns of `z` not fixed by an equality row.
    free: Vec<usize>,
    /// `(column, equality row, coefficient)` of each fixed column.
    pinned: Vec<(usize, usize, f64)>,
    /// Schur columns of the fixed variables, restricted to free rows.
    m_fp: DMatrix<f64>,
    chol: SkipCholesky,
}

impl<'a> Newton<'a> {
    fn new(p: &'a Problem, nt: &'a [Nt], gram: Option<&'a Gram>) -> Option<Self> {
        let m = p.schur(nt);
        let mut is_pinned = vec![None; p.m];
        for (k, &(i, a)) in p.eq.iter().enumerate() {
            is_pinned[i] = Some((k, a));
        }
        let free: Vec<usize> = (0..p.m).filter(|&i| is_pinned[i].is_none()).collect();
        let pinned: Vec<(usize, usize, f64)> = (0..p.m)
            .filter_map(|i| is_pinned[i].map(|(k, a)| (i, k, a)))
            .collect();
        let m_ff = DMatrix::from_fn(free.len(), free.len(), |r, c| m[(free[r], free[c])]);
        let m_fp = DMatrix::from_fn(free.len(), pinned.len(), |r, c| m[(free[r], pinned[c].0)]);
        let chol = SkipCholesky::new(&m_ff)?;
        if chol.skipped > 0 {
            log::trace!("schur factor skipped {} of {} pivots", chol.skipped, chol.n);
        }
        Some(Newton {
            p,
            gram,
            nt,
            free,
            pinned,
            m_fp,
            chol,
        })
    }

    /// `G^*(W G(u) W)` without the assembled matrix.
    fn schur_apply(&self, u: &DVector<f64>) -> DVector<f64> {
        let gu = self.p.g_apply(u);
        let t: Vec<DMatrix<f64>> = gu.iter().zip(self.nt).map(|(g, nt)| &nt.w * g * &nt.w).collect();
        self.p.g_adjoint(&t)
    }

    /// Solves `M du - A^T dq = r1`, `A du = r2`. Each equality row fixes a
    /// single column of `du`, so the fixed part is substituted and `dq` read
    /// off the fixed rows.
    fn bordered(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p = self.p;
        let mut du = DVector::zeros(p.m);
        let mut du_p = DVector::zeros(self.pinned.len());
        for (c, &(i, k, a)) in self.pinned.iter().enumerate() {
            du[i] = r2[k] / a;
            du_p[c] = du[i];
        }
        let rhs_f = DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| r1[i])) - &self.m_fp * &du_p;
        let mut du_f = self.chol.solve(&rhs_f);
        for (r, &i) in self.free.iter().enumerate() {
            du[i] = du_f[r];
        }
        // refinement against the operator that produces dY
        let mut mdu = self.schur_apply(&du);
        let free_err = |mdu: &DVector<f64>| {
            DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| r1[i] - mdu[i]))
        };
        let mut e = free_err(&mdu);
        let mut err = e.amax();
        for _ in 0..8 {
            if !(err > 1e-15 * (1.0 + rhs_f.amax())) {
                break;
            }
            let trial_f = &du_f + self.chol.solve(&e);
            let mut trial = du.clone();
            for (r, &i) in self.free.iter().enumerate() {
                trial[i] = trial_f[r];
            }
            let trial_mdu = self.schur_apply(&trial);
            let trial_e = free_err(&trial_mdu);
            let trial_err = trial_e.amax();
            if !(trial_err < 0.9 * err) {
                break;
            }
            (du_f, du, mdu, e, err) = (trial_f, trial, trial_mdu, trial_e, trial_err);
        }
        let mut dq = DVector::zeros(p.eq.len());
        for &(i, k, a) in &self.pinned {
            dq[k] = (mdu[i] - r1[i]) / a;
        }
        (du, dq)
    }

    /// Direction for complementarity targets `rc` (scaled space, one per
    /// block).
    fn solve(&self, res: &Residuals, rc: &[DMatrix<f64>]) -> Option<Direction> {
        let p = self.p;
        let base: Vec<DMatrix<f64>> = self.nt.iter().zip(rc).map(|(nt, r)| nt.lyap_back(r)).collect();
        let t: Vec<DMatrix<f64>> = base
            .iter()
            .zip(self.nt)
            .zip(&res.rs)
            .map(|((bm, nt), rs)| bm - &nt.w * rs * &nt.w)
            .collect();
        let r1 = p.g_adjoint(&t) - &res.rd;
        let (du, mut dq) = self.bordered(&r1, &res.rp);
        let gdu = p.g_apply(&du);
        let ds: Vec<DMatrix<f64>> = res.rs.iter().zip(gdu).map(|(rs, g)| rs + g).collect();
        let dy: Vec<DMatrix<f64>> = base
            .into_iter()
            .zip(self.nt)
            .zip(&ds)
            .map(|((bm, nt), ds)| {
                let mut m = bm - &nt.w * ds * &nt.w;
                symmetrize(&mut m);
                m
            })
            .collect();
        let mut dy = dy;
        if let Some(gram) = self.gram {
            // The Schur solve error would land in the dual equation; move it
            // into the complementarity equation instead.
            let r = &res.rd - p.g_adjoint(&dy);
            let rf = DVector::from_iterator(gram.free.len(), gram.free.iter().map(|&i| r[i]));
            let vf = gram.chol.solve(&rf);
            let mut v = DVector::zeros(p.m);
            for (k, &i) in gram.free.iter().enumerate() {
                v[i] = vf[k];
            }
            for (y, e) in dy.iter_mut().zip(p.g_apply(&v)) {
                *y += e;
            }
            let r = &res.rd - p.g_adjoint(&dy);
            for &(i, k, a) in &self.pinned {
                dq[k] = r[i] / a;
            }
        }
        if !du.iter().chain(dq.iter()).all(|v| v.is_finite()) {
            return None;
        }
        Some(Direction { du, dq, ds, dy })
    }
}

fn step_lengths(it: &Iterate, dir: &Direction) -> Option<(f64, f64)> {
    let mut ap = f64::INFINITY;
    let mut ad = f64::INFINITY;
    for (s, ds) in it.s.iter().zip(&dir.ds) {
        ap = ap.min(max_step(s, ds)?);
    }
    for (y, dy) in it.y.iter().zip(&dir.dy) {
        ad = ad.min(max_step(y, dy)?);
    }
    Some((ap, ad))
}

fn initial_iterate(p: &Problem) -> Iterate {
    let mut s = Vec::new();
    let mut y = Vec::new();
    for blk in &p.blocks {
        let n = blk.side as f64;
        let mut max_norm: f64 = 0.0;
        let mut max_ratio: f64 = 0.0;
        for (i, e) in &blk.vars {
            let norm = e
                .iter()
                .map(|&(r, c, a)| if r == c { a * a } else { 2.0 * a * a })
                .sum::<f64>()
                .sqrt();
            max_norm = max_norm.max(norm);
            max_ratio = max_ratio.max((1.0 + p.c[*i].abs()) / (1.0 + norm));
        }
        let xi = 10f64.max(n.sqrt()).max(n * max_ratio);
        let eta = 10f64.max(n.sqrt()).max(max_norm);
        s.push(DMatrix::identity(blk.side, blk.side) * eta);
        y.push(DMatrix::identity(blk.side, blk.side) * xi);
    }
    Iterate {
        u: DVector::zeros(p.m),
        q: DVector::zeros(p.eq.len()),
        s,
        y,
    }
}

pub fn solve(sdp: &MomentSdp, opts: &SolverOptions) -> SdpSolution {
    assert!(opts.gap_tol > 0.0 && opts.feas_tol > 0.0);
    let p = Problem::from_sdp(sdp);
    let mut it = initial_iterate(&p);
    let gram = match p.gram_free() {
        (free, Some(chol)) => Some(Gram { free, chol }),
        _ => None,
    };
    let mut best: Option<(f64, Iterate, Residuals)> = None;
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut stalls = 0;

    for iter in 0..=opts.max_iter {
        iterations = iter;
        let res = residuals(&p, &it);
        if opts.verbose {
            eprintln!(
                "iter {iter:3}  pobj {:+.9e}  dobj {:+.9e}  gap {:.2e}  pinf {:.2e}  dinf {:.2e}  mu {:.2e}",
                res.pobj * p.objective_scale,
                res.dobj * p.objective_scale,
                res.gap,
                res.pinf,
                res.dinf,
                res.mu
            );
        }
        if res.gap <= opts.gap_tol && res.pinf <= opts.feas_tol && res.dinf <= opts.feas_tol {
            status = SolveStatus::Optimal;
            best = Some((res.merit(), snapshot(&it), res));
            break;
        }
        if let Some(cert) = infeasibility(&p, &it, &res) {
            status = cert;
            best = Some((res.merit(), snapshot(&it), res));
            break;
        }
        if best.as_ref().is_none_or(|(m, _, _)| res.merit() < *m) {
            best = Some((res.merit(), snapshot(&it), residuals(&p, &it)));
        }
        if iter == opts.max_iter {
            break;
        }

        let Some(nt) = it
            .s
            .iter()
            .zip(&it.y)
            .map(|(s, y)| Nt::new(s, y))
            .collect::<Option<Vec<_>>>()
        else {
            status = SolveStatus::NumericalTrouble;
            break;
        };
        let Some(newton) = Newton::new(&p, &nt, gram.as_ref()) else {
            status = SolveStatus::NumericalTrouble;
            break;
        };

        // predictor
        let rc_aff: Vec<DMatrix<f64>> = nt
            .iter()
            .map(|n| DMatrix::from_diagonal(&n.d.map(|v| -v * v)))
            .collect();
        let Some(aff) = newton.solve(&res, &rc_aff) else {
            status = SolveStatus::NumericalTrouble;
            break;
        };
        let Some((ap, ad)) = step_lengths(&it, &aff) else {
            status = SolveStatus::NumericalTrouble;
            break;
        };
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mu_aff = it
            .s
            .iter()
            .zip(&aff.ds)
            .zip(it.y.iter().zip(&aff.dy))
            .map(|((s, ds), (y, dy))| frob_dot(&(s + ds * ap), &(y + dy * ad)))
            .sum::<f64>()
            / p.total_side() as f64;
        let sigma = (mu_aff / res.mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let rc: Vec<DMatrix<f64>> = nt
            .iter()
            .zip(aff.dy.iter().zip(&aff.ds))
            .map(|(n, (dy, ds))| {
                let dys = &n.g_inv * dy * n.g_inv.transpose();
                let dss = n.g.transpose() * ds * &n.g;
                let prod = dys * dss;
                let mut r = -0.5 * (&prod + prod.transpose());
                for k in 0..n.d.len() {
                    r[(k, k)] += sigma * res.mu - n.d[k] * n.d[k];
                }
                r
            })
            .collect();
        let Some(dir) = newton.solve(&res, &rc) else {
            status = SolveStatus::NumericalTrouble;
            break;
        };
        let Some((ap, ad)) = step_lengths(&it, &dir) else {
            status = SolveStatus::NumericalTrouble;
            break;
        };
        let tau = if res.merit() < 1e-6 { 0.99 } else if res.merit() < 1e-3 { 0.98 } else { 0.95 };
        let ap = (tau * ap).min(1.0);
        let ad = (tau * ad).min(1.0);

        it.u += &dir.du * ap;
        for (s, ds) in it.s.iter_mut().zip(&dir.ds) {
            *s += ds * ap;
            symmetrize(s);
        }
        it.q += &dir.dq * ad;
        for (y, dy) in it.y.iter_mut().zip(&dir.dy) {
            *y += dy * ad;
            symmetrize(y);
        }

        if ap.max(ad) < 1e-8 {
            stalls += 1;
            if stalls >= 3 {
                status = SolveStatus::NumericalTrouble;
                break;
            }
        } else {
            stalls = 0;
        }
    }

    let (_, it, res) = match status {
        SolveStatus::Optimal | SolveStatus::Infeasible | SolveStatus::Unbounded => {
            best.expect("set on exit")
        }
        _ => best.unwrap_or_else(|| {
            let r = residuals(&p, &it);
            (r.merit(), snapshot(&it), r)
        }),
    };
    finish(&p, &it, &res, status, iterations, opts)
}

fn snapshot(it: &Iterate) -> Iterate {
    Iterate {
        u: it.u.clone(),
        q: it.q.clone(),
        s: it.s.clone(),
        y: it.y.clone(),
    }
}

/// Certificates of infeasibility along the iterates: a dual ray
/// `(q, Y)` with `A^T q + G^*(Y) ~ 0`, `b^T q > 0` proves the moment side
/// infeasible; a primal ray `u` with `A u ~ 0`, `G(u) >= 0`, `c^T u < 0` proves
/// it unbounded.
fn infeasibility(p: &Problem, it: &Iterate, res: &Residuals) -> Option<SolveStatus> {
    const RAY_TOL: f64 = 1e-8;
    if res.dobj > 0.0 {
        let ray = (p.a_adjoint(&it.q) + p.g_adjoint(&it.y)).norm();
        if res.dobj > 1e6 * (1.0 + res.pobj.abs()) && ray / res.dobj < RAY_TOL {
            return Some(SolveStatus::Infeasible);
        }
    }
    if res.pobj < 0.0 {
        let ray = p.a_apply(&it.u).norm()
            + res.rs.iter().map(|m| m.norm()).sum::<f64>();
        if -res.pobj > 1e6 * (1.0 + res.dobj.abs()) && ray / -res.pobj < RAY_TOL {
            return Some(SolveStatus::Unbounded);
        }
    }
    None
}

fn finish(
    p: &Problem,
    it: &Iterate,
    res: &Residuals,
    status: SolveStatus,
    iterations: usize,
    opts: &SolverOptions,
) -> SdpSolution {
    let z: Vec<f64> = p
        .z_map
        .iter()
        .map(|form| form.iter().map(|&(i, a)| a * it.u[i]).sum())
        .collect();
    let os = p.objective_scale;
    let q_coeffs: Vec<f64> = (&p.q_map * &it.q).iter().map(|q| q * os).collect();
    SdpSolution {
        status,
        z,
        q_coeffs,
        objective_primal: res.pobj * os,
        objective_dual: res.dobj * os,
        gap: res.gap,
        primal_infeasibility: res.pinf,
        dual_infeasibility: res.dinf,
        iterations,
        equality_values: p.b_orig.clone(),
        dual_blocks: it
            .y
            .iter()
            .zip(&p.row_maps)
            .map(|(y, cm)| cm * y * cm.transpose() * os)
            .collect(),
        gap_tol: opts.gap_tol,
        feas_tol: opts.feas_tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relax::{assemble, assemble_static, BlockKind, PsdBlock};

    /// min z1 + z2 s.t. [[z1, z0], [z0, z1]] >= 0, [z2] >= 0, z0 = 1.
    fn toy_two_by_two() -> MomentSdp {
        let x = Polynomial::var(1, 0);
        let mut sdp = assemble_static(&x, &[], &[1.0], 1).unwrap();
        sdp.blocks = vec![
            PsdBlock::from_cells(
                BlockKind::Moment,
                2,
                [
                    (0, 0, vec![(1, 1.0)]),
                    (0, 1, vec![(0, 1.0)]),
                    (1, 1, vec![(1, 1.0)]),
                ],
            ),
            PsdBlock::from_cells(BlockKind::Localizing(0), 1, [(0, 0, vec![(2, 1.0)])]),
        ];
        sdp.objective = vec![0.0, 1.0, 1.0];
        sdp
    }

    #[test]
    fn toy_psd_minimum_is_one() {
        let sdp = toy_two_by_two();
        let sol = solve(&sdp, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.gap <= 1e-7);
        assert!((sol.objective_primal - 1.0).abs() < 1e-6, "{}", sol.objective_primal);
        assert!(sol.objective_dual <= sol.objective_primal + 1e-7);
    }

    #[test]
    fn pinned_moments_give_direct_objective() {
        // One variable y with no x: the marginal equalities pin every moment.
        let y = Polynomial::var(1, 0);
        let f = &(&y * &y) + &y.scale(-3.0);
        let mut pop = crate::scalarize::ParametricPop::bare(f.clone(), vec![]);
        pop.variable_scales = vec![1.0];
        let sdp = assemble(&pop, 2).unwrap();
        let sol = solve(&sdp, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        let want = 1.0 / 3.0 - 1.5;
        assert!((sol.objective_primal - want).abs() < 1e-7);
        // f does not depend on anything but y, so q = f is dual optimal.
        let q = extract_dual_polynomial(&sol, 2).unwrap();
        for t in [0.0, 0.3, 0.77, 1.0] {
            assert!((q.eval(&[t]).unwrap() - f.eval(&[t]).unwrap()).abs() < 1e-5);
        }
    }

    #[test]
    fn parameter_objective_is_its_own_underestimator() {
        // f(y, x) = y does not depend on x, so f* = y and q = y.
        let y = Polynomial::var(2, 0);
        let x = Polynomial::var(2, 1);
        let ball = &Polynomial::constant(2, 1.0) - &(&x * &x);
        let sdp = assemble(&crate::scalarize::ParametricPop::bare(y, vec![ball]), 2).unwrap();
        let sol = solve(&sdp, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective_primal - 0.5).abs() < 1e-7);
        let q = extract_dual_polynomial(&sol, 2).unwrap();
        for t in [0.0, 0.25, 0.5, 1.0] {
            assert!((q.eval(&[t]).unwrap() - t).abs() < 1e-5, "{t}");
        }
    }

    #[test]
    fn dual_integral_matches_dual_objective() {
        let pop = crate::scalarize::build_method_a(&crate::fixtures::example1());
        let sdp = assemble(&pop, 2).unwrap();
        let sol = solve(&sdp, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        let q = extract_dual_polynomial(&sol, 2).unwrap();
        let integral: f64 = q
            .terms()
            .map(|(m, c)| c / (m.exponents()[0] as f64 + 1.0))
            .sum();
        assert!((integral - sol.objective_dual).abs() < 1e-8);
    }

    #[test]
    fn infeasible_relaxation_is_reported() {
        // x >= 2 and 1 - x^2 >= 0 have no common point; order 2 detects it.
        let x = Polynomial::var(1, 0);
        let ge2 = &x - &Polynomial::constant(1, 2.0);
        let ball = &Polynomial::constant(1, 1.0) - &(&x * &x);
        let sdp = assemble_static(&x, &[ge2, ball], &[1.0], 2).unwrap();
        let sol = solve(&sdp, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Infeasible, "{sol:?}");
        assert!(!sol.is_usable());
        assert!(extract_dual_polynomial(&sol, 2).is_err());
    }

    #[test]
    fn feasible_points_bound_the_optimum() {
        use rand::{Rng, SeedableRng};
        let prob = crate::fixtures::example1();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let constraints = prob.feasible_set_constraints();
        for trial in 0..10 {
            // random quadratic objective in x
            let f = Polynomial::from_terms(
                2,
                [[1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]
                    .iter()
                    .map(|e| (e.to_vec(), rng.random_range(-1.0..1.0))),
            )
            .unwrap();
            let sdp = assemble_static(&f, &constraints, &[2.0, 2.0], 2).unwrap();
            let sol = solve(&sdp, &SolverOptions::default());
            assert_eq!(sol.status, SolveStatus::Optimal, "trial {trial}");
            for _ in 0..10 {
                let mut atoms = Vec::new();
                for _ in 0..2 {
                    let x1: f64 = rng.random_range(-1.4..0.95);
                    let hi = (3.0 - x1) / 2.0;
                    let x2 = rng.random_range(x1 * x1..hi);
                    atoms.push((0.5, vec![x1, x2]));
                }
                let z = crate::relax::atomic_moments(&sdp.z_basis, &atoms);
                let val = sdp.eval_linear_functional(&z, &f).unwrap();
                assert!(sol.objective_primal <= val + 1e-7);
            }
        }
    }
}
