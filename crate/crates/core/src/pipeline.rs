//! End-to-end runs: scalarize, relax, solve, read off moments or the dual
//! polynomial, recover curves. Also the per-parameter discretization used
//! as a reference.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::densrec::{recover_density, uniform_grid, DensityEstimate, MomentVector, S_MAX};
use crate::error::{Error, Result};
use crate::polynomial::{Monomial, Polynomial};
use crate::relax::{assemble, assemble_static, min_order, MomentSdp};
use crate::scalarize::{build_method_a, build_method_b, build_method_c, default_bounds_order, BicriteriaProblem, BoundRecord, Method, ParametricPop};
use crate::sdpsolve::{extract_dual_polynomial, solve, SdpSolution, SolveStatus, SolverOptions};

/// Trace of the first-order covariance above which a row is flagged as
/// having a non-Dirac optimal measure.
pub const NONUNIQUE_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub enum RunOutput {
    Densities { h1: DensityEstimate, h2: DensityEstimate },
    Underestimator { q: Vec<f64>, a1: f64, b1: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct ParetoRun {
    pub method: Method,
    pub relax_order: usize,
    pub density_degree: Option<usize>,
    pub output: RunOutput,
    /// Primal value `rho_d`.
    pub rho: f64,
    /// Dual value `rho*_d`.
    pub rho_star: f64,
    pub gap: f64,
    pub status: SolveStatus,
    pub bounds: BoundRecord,
    /// `(stage, seconds)`.
    pub timings: Vec<(String, f64)>,
    #[serde(skip)]
    pub moments: Vec<MomentVector>,
}

impl ParetoRun {
    pub fn densities(&self) -> Option<(&DensityEstimate, &DensityEstimate)> {
        match &self.output {
            RunOutput::Densities { h1, h2 } => Some((h1, h2)),
            _ => None,
        }
    }

    /// Monomial coefficients of the underestimator, constant term first.
    pub fn underestimator(&self) -> Option<&[f64]> {
        match &self.output {
            RunOutput::Underestimator { q, .. } => Some(q),
            _ => None,
        }
    }

    /// `q(lambda)` for method C runs.
    pub fn eval_underestimator(&self, lambda: f64) -> Option<f64> {
        self.underestimator()
            .map(|q| q.iter().rev().fold(0.0, |acc, c| acc * lambda + c))
    }

    /// `(a1 + lambda (b1 - a1), q(lambda))` for method C runs.
    pub fn underestimator_curve(&self, n: usize) -> Result<Vec<(f64, f64, f64)>> {
        let RunOutput::Underestimator { a1, b1, .. } = &self.output else {
            return Err(Error::Usage("underestimator curve needs a method C run".into()));
        };
        if n < 2 {
            return Err(Error::Usage(format!("curve grid needs at least 2 points, got {n}")));
        }
        Ok(uniform_grid(n)
            .into_iter()
            .map(|l| (l, a1 + l * (b1 - a1), self.eval_underestimator(l).unwrap()))
            .collect())
    }
}

/// `values[k] = L_z(y^k f)` for `k = 0..=s`, with `y` the first variable.
pub fn extract_generalized_moments(
    sdp: &MomentSdp,
    z: &[f64],
    f: &Polynomial,
    s: usize,
    criterion: usize,
) -> Result<MomentVector> {
    let max = 2 * sdp.order as i64 - f.degree() as i64;
    if s as i64 > max {
        return Err(Error::MomentDegree {
            s,
            max,
            order: sdp.order,
            criterion_degree: f.degree(),
        });
    }
    let nvars = f.nvars();
    let mut values = Vec::with_capacity(s + 1);
    for k in 0..=s {
        let yk = Polynomial::from_terms(nvars, [(Monomial::var(nvars, 0, k as u32).exponents().to_vec(), 1.0)])?;
        values.push(sdp.eval_linear_functional(z, &(&yk * f))?);
    }
    Ok(MomentVector::new(values, criterion))
}

fn check_density_degree(prob: &BicriteriaProblem, d: usize, s: usize) -> Result<()> {
    if s > S_MAX {
        return Err(Error::IllConditioned { s, s_max: S_MAX });
    }
    let deg = prob.f1.degree().max(prob.f2.degree());
    let max = 2 * d as i64 - deg as i64;
    if s as i64 > max {
        return Err(Error::MomentDegree {
            s,
            max,
            order: d,
            criterion_degree: deg,
        });
    }
    Ok(())
}

fn check_order(pop: &ParametricPop, d: usize) -> Result<()> {
    let d0 = min_order(pop);
    if d < d0 {
        return Err(Error::OrderTooLow { order: d, min_order: d0 });
    }
    Ok(())
}

fn solve_usable(sdp: &MomentSdp, opts: &SolverOptions) -> Result<SdpSolution> {
    let sol = solve(sdp, opts);
    if !sol.is_usable() {
        return Err(Error::Solver(sol.status));
    }
    Ok(sol)
}

fn lap(timings: &mut Vec<(String, f64)>, stage: &str, t: &mut Instant) {
    timings.push((stage.to_string(), t.elapsed().as_secs_f64()));
    *t = Instant::now();
}

pub fn run_method_ab(
    prob: &BicriteriaProblem,
    method: Method,
    d: usize,
    s: usize,
    opts: &SolverOptions,
) -> Result<ParetoRun> {
    run_method_ab_with(prob, method, d, s, default_bounds_order(prob), opts)
}

/// As [`run_method_ab`] with the bounds of method B computed at order
/// `d_bounds`.
pub fn run_method_ab_with(
    prob: &BicriteriaProblem,
    method: Method,
    d: usize,
    s: usize,
    d_bounds: usize,
    opts: &SolverOptions,
) -> Result<ParetoRun> {
    check_density_degree(prob, d, s)?;
    let mut timings = Vec::new();
    let mut t = Instant::now();
    let pop = match method {
        Method::A => build_method_a(prob),
        Method::B => build_method_b(prob, d_bounds, None, opts)?,
        Method::C => return Err(Error::Usage("density curves need method a or b".into())),
    };
    check_order(&pop, d)?;
    lap(&mut timings, "scalarize", &mut t);
    let sdp = assemble(&pop, d)?;
    lap(&mut timings, "assemble", &mut t);
    let sol = solve_usable(&sdp, opts)?;
    lap(&mut timings, "solve", &mut t);
    let m1 = extract_generalized_moments(&sdp, &sol.z, &pop.criteria[0], s, 1)?;
    let m2 = extract_generalized_moments(&sdp, &sol.z, &pop.criteria[1], s, 2)?;
    let h1 = recover_density(&m1)?;
    let h2 = recover_density(&m2)?;
    lap(&mut timings, "recover", &mut t);
    Ok(ParetoRun {
        method,
        relax_order: d,
        density_degree: Some(s),
        output: RunOutput::Densities { h1, h2 },
        rho: sol.objective_primal,
        rho_star: sol.objective_dual,
        gap: sol.gap,
        status: sol.status,
        bounds: pop.bounds,
        timings,
        moments: vec![m1, m2],
    })
}

pub fn run_method_c(prob: &BicriteriaProblem, d: usize, opts: &SolverOptions) -> Result<ParetoRun> {
    run_method_c_with(prob, d, default_bounds_order(prob), opts)
}

/// As [`run_method_c`] with `a1`, `b1` computed at order `d_bounds`.
pub fn run_method_c_with(
    prob: &BicriteriaProblem,
    d: usize,
    d_bounds: usize,
    opts: &SolverOptions,
) -> Result<ParetoRun> {
    // a gap below 1/d keeps the dual polynomial nearly optimal
    if !(opts.gap_tol < 1.0 / d as f64) {
        return Err(Error::Usage(format!(
            "gap tolerance {} must be below 1/d = {}",
            opts.gap_tol,
            1.0 / d as f64
        )));
    }
    let mut timings = Vec::new();
    let mut t = Instant::now();
    let pop = build_method_c(prob, d_bounds, opts)?;
    check_order(&pop, d)?;
    lap(&mut timings, "scalarize", &mut t);
    let sdp = assemble(&pop, d)?;
    lap(&mut timings, "assemble", &mut t);
    let sol = solve_usable(&sdp, opts)?;
    lap(&mut timings, "solve", &mut t);
    let q = extract_dual_polynomial(&sol, d)?;
    let coeffs: Vec<f64> = (0..=2 * d).map(|k| q.coefficient(&Monomial::var(1, 0, k as u32))).collect();
    Ok(ParetoRun {
        method: Method::C,
        relax_order: d,
        density_degree: None,
        output: RunOutput::Underestimator {
            q: coeffs,
            a1: pop.bounds.a1.expect("method C records a1"),
            b1: pop.bounds.b1.expect("method C records b1"),
        },
        rho: sol.objective_primal,
        rho_star: sol.objective_dual,
        gap: sol.gap,
        status: sol.status,
        bounds: pop.bounds,
        timings,
        moments: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Optimal,
    /// Solved, but the optimal measure does not look like a single Dirac, so
    /// `L_z(fj)` may mix several minimizers.
    NonUnique,
    MaxIter,
    Numerical,
    Infeasible,
    Unbounded,
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RowStatus::Optimal => "optimal",
            RowStatus::NonUnique => "nonunique",
            RowStatus::MaxIter => "maxiter",
            RowStatus::Numerical => "numerical",
            RowStatus::Infeasible => "infeasible",
            RowStatus::Unbounded => "unbounded",
        }
    }

    /// The solver reached its tolerances.
    pub fn is_solved(self) -> bool {
        matches!(self, RowStatus::Optimal | RowStatus::NonUnique)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DiscretizationRow {
    pub lambda: f64,
    pub value: f64,
    pub f1_star: f64,
    pub f2_star: f64,
    pub status: RowStatus,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiscretizationTable {
    pub method: Method,
    pub order: usize,
    pub bounds: BoundRecord,
    pub rows: Vec<DiscretizationRow>,
}

impl DiscretizationTable {
    pub fn lambdas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.lambda).collect()
    }

    pub fn solved_fraction(&self) -> f64 {
        let ok = self.rows.iter().filter(|r| r.status.is_solved()).count();
        ok as f64 / self.rows.len() as f64
    }

    pub fn row_at(&self, lambda: f64) -> Option<&DiscretizationRow> {
        self.rows.iter().find(|r| (r.lambda - lambda).abs() < 1e-12)
    }
}

/// Trapezoid rule on a uniform grid over `[0, 1]`.
pub fn trapezoid(values: &[f64]) -> f64 {
    let n = values.len();
    assert!(n >= 2, "trapezoid needs two points");
    let h = 1.0 / (n - 1) as f64;
    h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1]))
}

/// Worker count for `discretize`: `PARETO_THREADS` if set and positive,
/// otherwise rayon's default.
pub fn thread_cap() -> Option<usize> {
    parse_thread_cap(std::env::var("PARETO_THREADS").ok().as_deref())
}

fn parse_thread_cap(v: Option<&str>) -> Option<usize> {
    v.and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0)
}

/// Solves the order-`d` static relaxation at `n` uniform parameter values.
/// Bounds for methods B and C use [`default_bounds_order`].
pub fn discretize(
    prob: &BicriteriaProblem,
    method: Method,
    n: usize,
    d: usize,
    opts: &SolverOptions,
) -> Result<DiscretizationTable> {
    if n < 2 {
        return Err(Error::Usage(format!("discretization needs N >= 2, got {n}")));
    }
    let pop = match method {
        Method::A => build_method_a(prob),
        Method::B => build_method_b(prob, default_bounds_order(prob), None, opts)?,
        Method::C => build_method_c(prob, default_bounds_order(prob), opts)?,
    };
    discretize_pop(&pop, n, d, opts)
}

pub fn discretize_pop(pop: &ParametricPop, n: usize, d: usize, opts: &SolverOptions) -> Result<DiscretizationTable> {
    if n < 2 {
        return Err(Error::Usage(format!("discretization needs N >= 2, got {n}")));
    }
    check_order(pop, d)?;
    let lambdas = uniform_grid(n);
    let run = || -> Vec<DiscretizationRow> {
        lambdas
            .par_iter()
            .map(|&l| solve_row(pop, l, d, opts))
            .collect()
    };
    let rows = match thread_cap() {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Usage(format!("PARETO_THREADS: {e}")))?
            .install(run),
        None => run(),
    };
    Ok(DiscretizationTable {
        method: pop.method,
        order: d,
        bounds: pop.bounds.clone(),
        rows,
    })
}

fn solve_row(pop: &ParametricPop, lambda: f64, d: usize, opts: &SolverOptions) -> DiscretizationRow {
    let failed = |status| DiscretizationRow {
        lambda,
        value: f64::NAN,
        f1_star: f64::NAN,
        f2_star: f64::NAN,
        status,
    };
    let Some(fixed) = pop.fix_parameter(lambda) else {
        return failed(RowStatus::Infeasible);
    };
    let sdp = match assemble_static(&fixed.objective, &fixed.constraints, &fixed.variable_scales, d) {
        Ok(sdp) => sdp,
        Err(_) => return failed(RowStatus::Numerical),
    };
    let sol = solve(&sdp, opts);
    let status = match sol.status {
        SolveStatus::Infeasible => return failed(RowStatus::Infeasible),
        SolveStatus::Unbounded => return failed(RowStatus::Unbounded),
        SolveStatus::MaxIter => RowStatus::MaxIter,
        SolveStatus::NumericalTrouble => RowStatus::Numerical,
        SolveStatus::Optimal => RowStatus::Optimal,
    };
    let read = |p: &Polynomial| sdp.eval_linear_functional(&sol.z, p).unwrap_or(f64::NAN);
    let status = if status == RowStatus::Optimal && first_order_spread(&sdp, &sol.z) > NONUNIQUE_TOL {
        RowStatus::NonUnique
    } else {
        status
    };
    DiscretizationRow {
        lambda,
        value: sol.objective_primal.min(sol.objective_dual),
        f1_star: read(&fixed.criteria[0]),
        f2_star: read(&fixed.criteria[1]),
        status,
    }
}

/// Trace of `L_z(x x') - L_z(x) L_z(x)'`, which vanishes for a Dirac.
fn first_order_spread(sdp: &MomentSdp, z: &[f64]) -> f64 {
    let nvars = sdp.z_basis.nvars();
    (0..nvars)
        .map(|i| {
            let m1 = z[sdp.z_basis.position(&Monomial::var(nvars, i, 1)).expect("degree 1")];
            let m2 = z[sdp.z_basis.position(&Monomial::var(nvars, i, 2)).expect("degree 2")];
            (m2 - m1 * m1) / (sdp.variable_scales[i] * sdp.variable_scales[i])
        })
        .sum()
}
