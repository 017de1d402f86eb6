//! Scalarizations of a bicriteria polynomial problem
//! `min { (f1(x), f2(x)) : x in S }` into parametric polynomial programs
//! `f*(y) = min { f(y, x) : (y, x) in K }`, `y in [0, 1]`.
//!
//! * [`Method::A`], weighted sum: `f = y f1 + (1 - y) f2` on `[0,1] x S`.
//!   When `f(S) + R^2_+` is convex, a point is Edgeworth-Pareto optimal iff
//!   it is an image-unique minimizer for some weight.
//! * [`Method::B`], weighted Chebyshev: minimize a lifting variable `omega`
//!   subject to `omega >= y f1~ / C` and `omega >= (1 - y) f2~ / C`, where
//!   the `fj~` are criteria shifted to be positive on `S` and `C` bounds
//!   both from above. Every Edgeworth-Pareto point is an image-unique
//!   minimizer for some weight in `(0, 1)`, without any convexity
//!   assumption.
//! * [`Method::C`], parametric sublevel set: minimize `f2` subject to
//!   `(f1 - a1) / (b1 - a1) <= y`, with `a1 = min_S f1` and `b1` the value of
//!   `f1` at a minimizer of `f2`. Every minimizer is weakly
//!   Edgeworth-Pareto optimal and `f*(y)` is the Pareto curve itself,
//!   parametrized by the normalized level of `f1`.
//!
//! The recovery of the curve from the hierarchy assumes the parametric
//! problem has a unique minimizer (or at least a unique image) for almost
//! every `y`. That hypothesis cannot be checked from the relaxation and is
//! not checked here.
//!
//! Variable layout of every built program: `y` first, then `x_1..x_n`, then
//! `omega` for method B.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::polynomial::Polynomial;
use crate::relax::{assemble_static, min_order_of};
use crate::sdpsolve::{solve, SolverOptions};

#[derive(Clone, Debug)]
pub struct BicriteriaProblem {
    pub f1: Polynomial,
    pub f2: Polynomial,
    /// Feasibility is `g_i(x) >= 0`.
    pub constraints: Vec<Polynomial>,
    /// `M` of the redundant ball constraint `M - |x|^2 >= 0`.
    pub box_radius_sq: f64,
}

impl BicriteriaProblem {
    pub fn new(
        f1: Polynomial,
        f2: Polynomial,
        constraints: Vec<Polynomial>,
        box_radius_sq: f64,
    ) -> Result<Self> {
        let n = f1.nvars();
        if n == 0 {
            return Err(Error::InvalidProblem("at least one variable is required".into()));
        }
        for p in std::iter::once(&f2).chain(&constraints) {
            if p.nvars() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: p.nvars(),
                });
            }
        }
        if !(box_radius_sq > 0.0) || !box_radius_sq.is_finite() {
            return Err(Error::InvalidProblem(format!(
                "box_radius_sq must be positive, got {box_radius_sq}"
            )));
        }
        Ok(BicriteriaProblem {
            f1,
            f2,
            constraints,
            box_radius_sq,
        })
    }

    pub fn nvars(&self) -> usize {
        self.f1.nvars()
    }

    pub fn criterion(&self, which: usize) -> &Polynomial {
        match which {
            1 => &self.f1,
            2 => &self.f2,
            _ => panic!("criterion index must be 1 or 2"),
        }
    }

    /// `M - sum x_i^2`.
    pub fn ball(&self) -> Polynomial {
        let n = self.nvars();
        let mut b = Polynomial::constant(n, self.box_radius_sq);
        for i in 0..n {
            let xi = Polynomial::var(n, i);
            b = &b - &(&xi * &xi);
        }
        b
    }

    /// Constraints of `S` with the ball appended.
    pub fn feasible_set_constraints(&self) -> Vec<Polynomial> {
        let mut out = self.constraints.clone();
        out.push(self.ball());
        out
    }

    /// Scale of each decision variable used to precondition relaxations.
    pub fn radius(&self) -> f64 {
        self.box_radius_sq.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Method {
    A,
    B,
    C,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Method::A),
            "b" => Ok(Method::B),
            "c" => Ok(Method::C),
            other => Err(Error::Usage(format!("unknown method '{other}', expected a, b or c"))),
        }
    }
}

/// Criterion bounds recorded by the builders that need them.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BoundRecord {
    /// Method C: `a1 = min_S f1`.
    pub a1: Option<f64>,
    /// Method C: `f1` at a minimizer of `f2`.
    pub b1: Option<f64>,
    /// Method B: the criteria are shifted to `fj - shift_j`.
    pub shifts: Option<[f64; 2]>,
    /// Method B: the scaling constant `C`.
    pub scale: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ParametricPop {
    pub objective: Polynomial,
    pub constraints: Vec<Polynomial>,
    /// Number of non-parameter variables; polynomials have `n_prime + 1`.
    pub n_prime: usize,
    pub method: Method,
    pub bounds: BoundRecord,
    pub variable_scales: Vec<f64>,
    /// The original criteria `f1`, `f2`, lifted into this program's
    /// variables.
    pub criteria: [Polynomial; 2],
}

impl ParametricPop {
    /// A program with unit variable scales and no criteria attached.
    pub fn bare(objective: Polynomial, constraints: Vec<Polynomial>) -> Self {
        let nvars = objective.nvars();
        ParametricPop {
            objective,
            constraints,
            n_prime: nvars - 1,
            method: Method::A,
            bounds: BoundRecord::default(),
            variable_scales: vec![1.0; nvars],
            criteria: [Polynomial::zero(nvars), Polynomial::zero(nvars)],
        }
    }

    pub fn nvars(&self) -> usize {
        self.n_prime + 1
    }

    /// Freezes `y = lambda`. Constraints that become nonnegative constants
    /// are dropped; `None` if one becomes a negative constant.
    pub fn fix_parameter(&self, lambda: f64) -> Option<FixedProgram> {
        let mut constraints = Vec::with_capacity(self.constraints.len());
        for p in &self.constraints {
            let fixed = p.fix_variable(0, lambda);
            match fixed.as_constant() {
                Some(c) if c >= 0.0 => {}
                Some(_) => return None,
                None => constraints.push(fixed),
            }
        }
        Some(FixedProgram {
            objective: self.objective.fix_variable(0, lambda),
            constraints,
            variable_scales: self.variable_scales[1..].to_vec(),
            criteria: [
                self.criteria[0].fix_variable(0, lambda),
                self.criteria[1].fix_variable(0, lambda),
            ],
        })
    }
}

/// A parametric program at a frozen parameter value.
#[derive(Clone, Debug)]
pub struct FixedProgram {
    pub objective: Polynomial,
    pub constraints: Vec<Polynomial>,
    pub variable_scales: Vec<f64>,
    pub criteria: [Polynomial; 2],
}

/// Order-`d` lower bound of `min { objective : constraints >= 0 }`.
pub(crate) fn relaxed_min(
    objective: &Polynomial,
    constraints: &[Polynomial],
    scales: &[f64],
    d: usize,
    opts: &SolverOptions,
) -> Result<f64> {
    if let Some(c) = objective.as_constant() {
        return Ok(c);
    }
    let sdp = assemble_static(objective, constraints, scales, d)?;
    let sol = solve(&sdp, opts);
    if !sol.is_usable() {
        return Err(Error::Solver(sol.status));
    }
    Ok(sol.objective_primal.min(sol.objective_dual))
}

/// Lower and upper bounds of criterion `which` over `S` from the order-`d`
/// moment relaxations of `min fj` and `min -fj`.
pub fn criterion_bounds(
    prob: &BicriteriaProblem,
    which: usize,
    d: usize,
    opts: &SolverOptions,
) -> Result<(f64, f64)> {
    if which != 1 && which != 2 {
        return Err(Error::Usage(format!("criterion must be 1 or 2, got {which}")));
    }
    let f = prob.criterion(which);
    if let Some(c) = f.as_constant() {
        return Ok((c, c));
    }
    let constraints = prob.feasible_set_constraints();
    let d0 = min_order_of(f, &constraints);
    if d < d0 {
        return Err(Error::OrderTooLow {
            order: d,
            min_order: d0,
        });
    }
    let scales = vec![prob.radius(); prob.nvars()];
    let neg = -f;
    let (lo, hi) = rayon::join(
        || relaxed_min(f, &constraints, &scales, d, opts),
        || relaxed_min(&neg, &constraints, &scales, d, opts),
    );
    Ok((lo?, -hi?))
}

/// Order used for the bound solves unless the caller picks one: 2, or the
/// minimal order of the criteria over `S` if larger. Runs at different
/// relaxation orders then share the same bounds and parametrization.
pub fn default_bounds_order(prob: &BicriteriaProblem) -> usize {
    let s = prob.feasible_set_constraints();
    min_order_of(&prob.f1, &s).max(min_order_of(&prob.f2, &s)).max(2)
}

/// Lifts `S` and the ball into `(y, x[, omega])` and appends `y >= 0`,
/// `1 - y >= 0`.
fn lifted_base(prob: &BicriteriaProblem, nvars: usize) -> (Vec<Polynomial>, Vec<usize>) {
    let placement: Vec<usize> = (1..=prob.nvars()).collect();
    let mut constraints: Vec<Polynomial> = prob
        .feasible_set_constraints()
        .iter()
        .map(|g| g.embed(nvars, &placement))
        .collect();
    let y = Polynomial::var(nvars, 0);
    constraints.push(y.clone());
    constraints.push(&Polynomial::constant(nvars, 1.0) - &y);
    (constraints, placement)
}

pub fn build_method_a(prob: &BicriteriaProblem) -> ParametricPop {
    let nvars = prob.nvars() + 1;
    let (constraints, placement) = lifted_base(prob, nvars);
    let f1 = prob.f1.embed(nvars, &placement);
    let f2 = prob.f2.embed(nvars, &placement);
    let y = Polynomial::var(nvars, 0);
    let one_minus_y = &Polynomial::constant(nvars, 1.0) - &y;
    let objective = &(&y * &f1) + &(&one_minus_y * &f2);
    let mut scales = vec![prob.radius(); nvars];
    scales[0] = 1.0;
    ParametricPop {
        objective,
        constraints,
        n_prime: prob.nvars(),
        method: Method::A,
        bounds: BoundRecord::default(),
        variable_scales: scales,
        criteria: [f1, f2],
    }
}

/// `margin = None` uses `1e-3 * (upper_j - lower_j)` for each criterion.
pub fn build_method_b(
    prob: &BicriteriaProblem,
    d_bounds: usize,
    margin: Option<f64>,
    opts: &SolverOptions,
) -> Result<ParametricPop> {
    if let Some(m) = margin {
        if !(m >= 0.0) {
            return Err(Error::Usage(format!("margin must be nonnegative, got {m}")));
        }
    }
    let (b1, b2) = rayon::join(
        || criterion_bounds(prob, 1, d_bounds, opts),
        || criterion_bounds(prob, 2, d_bounds, opts),
    );
    let bounds = [b1?, b2?];
    let shifts = bounds.map(|(lo, hi)| lo - margin.unwrap_or(1e-3 * (hi - lo)));
    let shifted_upper = [bounds[0].1 - shifts[0], bounds[1].1 - shifts[1]];
    let mut scale = shifted_upper[0].max(shifted_upper[1]);
    if !(scale > 0.0) {
        scale = 1.0;
    }

    let n = prob.nvars();
    let nvars = n + 2;
    let omega_var = n + 1;
    let (mut constraints, placement) = lifted_base(prob, nvars);
    let f1 = prob.f1.embed(nvars, &placement);
    let f2 = prob.f2.embed(nvars, &placement);
    let one = Polynomial::constant(nvars, 1.0);
    let y = Polynomial::var(nvars, 0);
    let omega = Polynomial::var(nvars, omega_var);
    let f1s = f1.affine_scale(shifts[0], scale)?;
    let f2s = f2.affine_scale(shifts[1], scale)?;
    constraints.push(&omega - &(&y * &f1s));
    constraints.push(&omega - &(&(&one - &y) * &f2s));
    constraints.push(omega.clone());
    constraints.push(&one - &omega);

    let mut scales = vec![prob.radius(); nvars];
    scales[0] = 1.0;
    scales[omega_var] = 1.0;
    Ok(ParametricPop {
        objective: omega,
        constraints,
        n_prime: n + 1,
        method: Method::B,
        bounds: BoundRecord {
            shifts: Some(shifts),
            scale: Some(scale),
            ..Default::default()
        },
        variable_scales: scales,
        criteria: [f1, f2],
    })
}

pub fn build_method_c(
    prob: &BicriteriaProblem,
    d_bounds: usize,
    opts: &SolverOptions,
) -> Result<ParametricPop> {
    let s_constraints = prob.feasible_set_constraints();
    let scales = vec![prob.radius(); prob.nvars()];
    for f in [&prob.f1, &prob.f2] {
        let d0 = min_order_of(f, &s_constraints);
        if d_bounds < d0 {
            return Err(Error::OrderTooLow {
                order: d_bounds,
                min_order: d0,
            });
        }
    }
    let (a1, f2_min) = rayon::join(
        || relaxed_min(&prob.f1, &s_constraints, &scales, d_bounds, opts),
        || relaxed_min(&prob.f2, &s_constraints, &scales, d_bounds, opts),
    );
    let (a1, f2_min) = (a1?, f2_min?);

    // b1 = f1 at a minimizer of f2, read off the epigraph problem
    // min { f1 : x in S, f2 <= min f2 + tol } instead of extracting it.
    let tol_b = 1e-6 * (1.0 + f2_min.abs());
    let mut near_opt = s_constraints.clone();
    near_opt.push(&Polynomial::constant(prob.nvars(), f2_min + tol_b) - &prob.f2);
    let d_b1 = d_bounds.max(min_order_of(&prob.f1, &near_opt));
    let b1 = relaxed_min(&prob.f1, &near_opt, &scales, d_b1, opts)?;
    if b1 - a1 <= 1e-8 * (1.0 + a1.abs()) {
        return Err(Error::NoTradeOff { a1, b1 });
    }

    let nvars = prob.nvars() + 1;
    let (mut constraints, placement) = lifted_base(prob, nvars);
    let f1 = prob.f1.embed(nvars, &placement);
    let f2 = prob.f2.embed(nvars, &placement);
    let y = Polynomial::var(nvars, 0);
    constraints.push(&y - &f1.affine_scale(a1, b1 - a1)?);
    let mut scales = vec![prob.radius(); nvars];
    scales[0] = 1.0;
    Ok(ParametricPop {
        objective: f2.clone(),
        constraints,
        n_prime: prob.nvars(),
        method: Method::C,
        bounds: BoundRecord {
            a1: Some(a1),
            b1: Some(b1),
            ..Default::default()
        },
        variable_scales: scales,
        criteria: [f1, f2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn example1_bounds() {
        let prob = fixtures::example1();
        let (lo1, hi1) = criterion_bounds(&prob, 1, 3, &opts()).unwrap();
        assert!((lo1 + 1.0).abs() < 1e-4, "{lo1}");
        // max of -x1 on S is at x1 = -1.5
        assert!((hi1 - 1.5).abs() < 1e-4, "{hi1}");
        let (lo2, _) = criterion_bounds(&prob, 2, 3, &opts()).unwrap();
        // oracle: min over x1 of x1 + x1^4 at x1 = -(1/4)^(1/3)
        let t = -(0.25f64).cbrt();
        let oracle = t + t.powi(4);
        assert!((oracle + 0.4725).abs() < 1e-4);
        assert!((lo2 - oracle).abs() < 1e-3, "{lo2}");
        let grid_min = fixtures::example1_grid(400)
            .iter()
            .map(|x| prob.f2.eval(x).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(lo2 <= grid_min + 1e-7);
    }

    #[test]
    fn constant_criterion_bounds() {
        let prob = fixtures::example1();
        let c = BicriteriaProblem::new(
            Polynomial::constant(2, 3.5),
            prob.f2.clone(),
            prob.constraints.clone(),
            8.0,
        )
        .unwrap();
        assert_eq!(criterion_bounds(&c, 1, 2, &opts()).unwrap(), (3.5, 3.5));
    }

    #[test]
    fn method_a_objective() {
        let prob = fixtures::example1();
        let pop = build_method_a(&prob);
        assert_eq!(pop.n_prime, 2);
        // (1 - 2y) x1 + (1 - y) x2^2
        let want = Polynomial::from_terms(
            3,
            [
                (vec![0, 1, 0], 1.0),
                (vec![1, 1, 0], -2.0),
                (vec![0, 0, 2], 1.0),
                (vec![1, 0, 2], -1.0),
            ],
        )
        .unwrap();
        assert_eq!(pop.objective, want);
        assert!(pop.constraints.contains(&prob.ball().embed(3, &[1, 2])));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let pt = [
                rng.random_range(0.0..1.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ];
            let x = [pt[1], pt[2]];
            let direct = pt[0] * prob.f1.eval(&x).unwrap() + (1.0 - pt[0]) * prob.f2.eval(&x).unwrap();
            assert!((pop.objective.eval(&pt).unwrap() - direct).abs() <= 1e-12);
        }
        let at_zero = pop.objective.fix_variable(0, 0.0);
        assert_eq!(at_zero, prob.f2);
    }

    #[test]
    fn method_a_equal_constant_criteria() {
        let c = Polynomial::constant(2, -2.0);
        let prob = BicriteriaProblem::new(c.clone(), c, vec![], 1.0).unwrap();
        let pop = build_method_a(&prob);
        assert_eq!(pop.objective, Polynomial::constant(3, -2.0));
    }

    #[test]
    fn method_b_shift_and_scaling() {
        let prob = fixtures::example2();
        let pop = build_method_b(&prob, 3, None, &opts()).unwrap();
        assert_eq!(pop.n_prime, 3);
        assert_eq!(pop.method, Method::B);
        let shifts = pop.bounds.shifts.unwrap();
        let scale = pop.bounds.scale.unwrap();
        let grid = fixtures::example2_grid(200);
        assert!(!grid.is_empty());
        for x in &grid {
            for (j, f) in [&prob.f1, &prob.f2].into_iter().enumerate() {
                let shifted = f.eval(x).unwrap() - shifts[j];
                assert!(shifted > 0.0);
                assert!(shifted / scale <= 1.0 + 1e-9);
            }
        }
        assert!(pop.constraints.contains(&prob.ball().embed(4, &[1, 2])));

        // On random feasible points omega dominates both weighted ratios.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 200 {
            let x = grid[rng.random_range(0..grid.len())];
            let pt = [rng.random_range(0.0..1.0), x[0], x[1], rng.random_range(0.0..1.0)];
            if pop.constraints.iter().all(|g| g.eval(&pt).unwrap() >= 0.0) {
                let r1 = pt[0] * (prob.f1.eval(&x).unwrap() - shifts[0]) / scale;
                let r2 = (1.0 - pt[0]) * (prob.f2.eval(&x).unwrap() - shifts[1]) / scale;
                assert!(pop.objective.eval(&pt).unwrap() >= r1.max(r2) - 1e-12);
                checked += 1;
            }
        }
    }

    #[test]
    fn method_b_zero_margin_keeps_positive_criteria_positive() {
        // f1 = 1 + x^2 >= 1, f2 = 2 - x on [-1, 1]
        let x = Polynomial::var(1, 0);
        let one = Polynomial::constant(1, 1.0);
        let f1 = &one + &(&x * &x);
        let f2 = &Polynomial::constant(1, 2.0) - &x;
        let box1 = &one - &(&x * &x);
        let prob = BicriteriaProblem::new(f1.clone(), f2, vec![box1], 1.0).unwrap();
        let pop = build_method_b(&prob, 2, Some(0.0), &opts()).unwrap();
        let shift = pop.bounds.shifts.unwrap()[0];
        assert!(shift <= 1.0 + 1e-6);
        for i in 0..=100 {
            let t = -1.0 + 2.0 * i as f64 / 100.0;
            assert!(f1.eval(&[t]).unwrap() - shift >= -1e-6);
        }
    }

    #[test]
    fn method_c_example1() {
        let prob = fixtures::example1();
        let pop = build_method_c(&prob, 3, &opts()).unwrap();
        let a1 = pop.bounds.a1.unwrap();
        let b1 = pop.bounds.b1.unwrap();
        assert!((a1 + 1.0).abs() < 1e-4, "{a1}");
        let x_star = -(0.25f64).cbrt();
        assert!((b1 - (-x_star)).abs() < 1e-3, "{b1}");
        assert_eq!(pop.n_prime, 2);
        assert_eq!(pop.objective, prob.f2.embed(3, &[1, 2]));
        assert!(pop.constraints.contains(&prob.ball().embed(3, &[1, 2])));

        // relaxed b1 is a lower bound, so at y = 1 the f2 minimizer misses the
        // sublevel constraint by exactly the relaxation gap
        assert!(b1 <= -x_star + 1e-6);
        let fixed = pop.fix_parameter(1.0).unwrap();
        let x = [x_star, x_star * x_star];
        let slack = (b1 + x_star) / (b1 - a1);
        let level = fixed.constraints.last().unwrap().eval(&x).unwrap();
        assert!((level - slack).abs() < 1e-9, "{level} {slack}");
        let rest = &fixed.constraints[..fixed.constraints.len() - 1];
        assert!(rest.iter().all(|g| g.eval(&x).unwrap() >= -1e-9));
    }

    #[test]
    fn method_c_value_function_is_nonincreasing_on_grid() {
        let prob = fixtures::example1();
        let pop = build_method_c(&prob, 3, &opts()).unwrap();
        let grid = fixtures::example1_grid(300);
        let mut prev = f64::INFINITY;
        for i in 0..=20 {
            let lam = i as f64 / 20.0;
            let fixed = pop.fix_parameter(lam).unwrap();
            let best = grid
                .iter()
                .filter(|x| fixed.constraints.iter().all(|g| g.eval(&x[..]).unwrap() >= 0.0))
                .map(|x| prob.f2.eval(x).unwrap())
                .fold(f64::INFINITY, f64::min);
            assert!(best <= prev);
            prev = best;
        }
    }

    #[test]
    fn method_c_rejects_non_conflicting_criteria() {
        let prob = fixtures::example1();
        let same = BicriteriaProblem::new(
            prob.f2.clone(),
            prob.f2.clone(),
            prob.constraints.clone(),
            8.0,
        )
        .unwrap();
        let err = build_method_c(&same, 3, &opts()).unwrap_err();
        assert!(matches!(err, Error::NoTradeOff { .. }), "{err}");
        assert!(err.to_string().contains("no Pareto trade-off detected"));
    }

    #[test]
    fn invalid_problems() {
        let x = Polynomial::var(1, 0);
        assert!(BicriteriaProblem::new(x.clone(), x.clone(), vec![], 0.0).is_err());
        assert!(BicriteriaProblem::new(x.clone(), Polynomial::var(2, 0), vec![], 1.0).is_err());
    }
}
