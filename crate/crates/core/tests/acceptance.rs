//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any criterion fails.
//!
//! Reference values come from per-parameter discretizations, dense grids and
//! closed-form integrals, all computed here and not by the code under test.

use std::process::Command;
use std::time::{Duration, Instant};

use pareto_sdp::densrec::{recover_density, DensityEstimate, MomentVector};
use pareto_sdp::fixtures;
use pareto_sdp::pipeline::{discretize, run_method_ab, run_method_c, DiscretizationTable};
use pareto_sdp::polynomial::Polynomial;
use pareto_sdp::relax::{assemble, assemble_static, atomic_moments, BlockKind, PsdBlock};
use pareto_sdp::scalarize::{build_method_a, ParametricPop, Method};
use pareto_sdp::sdpsolve::{extract_dual_polynomial, solve, SolveStatus, SolverOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn opts() -> SolverOptions {
    SolverOptions::default()
}

/// Trapezoid rule over uniform nodes on `[0, 1]`.
fn trapz(values: &[f64]) -> f64 {
    let h = 1.0 / (values.len() - 1) as f64;
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[values.len() - 1]))
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

fn column(table: &DiscretizationTable, which: usize) -> Vec<f64> {
    table
        .rows
        .iter()
        .map(|r| match which {
            0 => r.value,
            1 => r.f1_star,
            _ => r.f2_star,
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let prob = fixtures::example1();
    let pop = build_method_a(&prob);
    let mut rho = Vec::new();
    for d in 2..=5 {
        let sol = solve(&assemble(&pop, d).unwrap(), &opts());
        if !sol.is_usable() {
            return outcome(false, format!("order {d} ended with {:?}", sol.status));
        }
        rho.push(sol.objective_primal);
    }
    let oracle = discretize(&prob, Method::A, 1000, 4, &opts()).unwrap();
    let integral = trapz(&column(&oracle, 0));
    let monotone = rho.windows(2).all(|w| w[1] >= w[0] - 2e-7);
    let below = rho[3] <= integral + 1e-3;
    let elapsed = t.elapsed();
    let fast = elapsed < Duration::from_secs(120);
    outcome(
        monotone && below && fast,
        format!(
            "rho_2..5 = {:?}, oracle integral {integral:.6}, {:.1}s",
            rho.iter().map(|r| format!("{r:.7}")).collect::<Vec<_>>(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let prob = fixtures::example2();
    let oracle = discretize(&prob, Method::C, 100, 4, &opts()).unwrap();
    let mut l1 = Vec::new();
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut q4 = Vec::new();
    for d in 2..=4 {
        let run = match run_method_c(&prob, d, &opts()) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("order {d}: {e}")),
        };
        let q = run.underestimator().unwrap().to_vec();
        let mut gaps = Vec::new();
        for r in &oracle.rows {
            let v = horner(&q, r.lambda);
            worst = worst.max(v - r.value);
            gaps.push((r.value - v).abs());
        }
        l1.push(trapz(&gaps));
        if d == 4 {
            q4 = q;
        }
    }
    let under = worst <= 1e-5;
    let shrinking = l1.windows(2).all(|w| w[1] <= w[0] + 2e-6);
    // q4'' on a fine grid of (0, 1)
    let second: Vec<f64> = (1..1000)
        .map(|i| {
            let t = i as f64 / 1000.0;
            (2..q4.len()).map(|k| (k * (k - 1)) as f64 * q4[k] * t.powi(k as i32 - 2)).sum()
        })
        .collect();
    let sign_change = second.windows(2).any(|w| w[0] * w[1] < 0.0);
    outcome(
        under && shrinking && sign_change,
        format!("max q - f2* = {worst:.2e}, L1 gaps {l1:.5?}, q4'' sign change {sign_change}"),
    )
}

fn criterion_3() -> Outcome {
    let prob = fixtures::example1();
    let oracle = discretize(&prob, Method::A, 1000, 4, &opts()).unwrap();
    let run = match run_method_ab(&prob, Method::A, 5, 4, &opts()) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mut worst: f64 = 0.0;
    let mut at = (0, 0);
    for (j, m) in run.moments.iter().enumerate() {
        for k in 0..=4 {
            let vals: Vec<f64> = oracle
                .rows
                .iter()
                .map(|r| r.lambda.powi(k as i32) * if j == 0 { r.f1_star } else { r.f2_star })
                .collect();
            let err = (m.values[k] - trapz(&vals)).abs();
            if err > worst {
                worst = err;
                at = (j + 1, k);
            }
        }
    }
    outcome(
        worst <= 1e-3,
        format!("max |m - oracle| = {worst:.2e} at j={}, k={}", at.0, at.1),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_sup: f64 = 0.0;
    let mut worst_margin = f64::INFINITY;
    for s in [2usize, 4, 6, 8] {
        for _ in 0..50 {
            // exact recovery of a degree-s density
            let c: Vec<f64> = (0..=s).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = MomentVector::new((0..=s).map(|k| exact_moment(&c, k)).collect(), 1);
            let h = recover_density(&m).unwrap();
            for i in 0..=1000 {
                let t = i as f64 / 1000.0;
                worst_sup = worst_sup.max((h.eval(t) - horner(&c, t)).abs());
            }
            // projection of a degree-(s+3) density against random rivals
            let target: Vec<f64> = (0..=s + 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = MomentVector::new((0..=s).map(|k| exact_moment(&target, k)).collect(), 1);
            let p = recover_density(&m).unwrap();
            let best = l2_dist_sq(&target, &p.coeffs);
            for _ in 0..20 {
                let rival: Vec<f64> = p.coeffs.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
                worst_margin = worst_margin.min(l2_dist_sq(&target, &rival) - best);
            }
        }
    }
    outcome(
        worst_sup <= 1e-6 && worst_margin >= -1e-8,
        format!("sup error {worst_sup:.2e}, min L2 margin {worst_margin:.2e}"),
    )
}

/// `int_0^1 t^k p(t) dt` in closed form.
fn exact_moment(p: &[f64], k: usize) -> f64 {
    p.iter().enumerate().map(|(i, c)| c / (i + k + 1) as f64).sum()
}

/// `int_0^1 (a - b)^2` in closed form.
fn l2_dist_sq(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    let diff: Vec<f64> = (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0))
        .collect();
    let mut acc = 0.0;
    for (i, x) in diff.iter().enumerate() {
        for (j, y) in diff.iter().enumerate() {
            acc += x * y / (i + j + 1) as f64;
        }
    }
    acc
}

fn curve_rms(table: &DiscretizationTable, h1: &DensityEstimate, h2: &DensityEstimate) -> f64 {
    let sum: f64 = table
        .rows
        .iter()
        .map(|r| (h1.eval(r.lambda) - r.f1_star).powi(2) + (h2.eval(r.lambda) - r.f2_star).powi(2))
        .sum();
    (sum / table.rows.len() as f64).sqrt()
}

fn criterion_5() -> Outcome {
    let prob = fixtures::example1();
    let oracle = discretize(&prob, Method::A, 100, 5, &opts()).unwrap();
    let mut rms = Vec::new();
    for s in [4, 6, 8] {
        let run = match run_method_ab(&prob, Method::A, 5, s, &opts()) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("s={s}: {e}")),
        };
        let (h1, h2) = run.densities().unwrap();
        rms.push(curve_rms(&oracle, h1, h2));
    }
    let improving = rms.windows(2).all(|w| w[1] <= 0.99 * w[0]);
    outcome(improving, format!("RMS for s = 4, 6, 8: {rms:.5?}"))
}

fn criterion_6() -> Outcome {
    let prob = fixtures::example1();
    let table = discretize(&prob, Method::A, 101, 5, &opts()).unwrap();
    // min over S of x1 + x2^2 is attained on x2 = x1^2 at x1 = -(1/4)^(1/3)
    let x = -(0.25f64).cbrt();
    let min_f2 = x + x.powi(4);
    let v0 = table.row_at(0.0).unwrap().value;
    let vh = table.row_at(0.5).unwrap().value;
    let v1 = table.row_at(1.0).unwrap().value;
    let pass = (v1 + 1.0).abs() <= 1e-3 && (v0 + 0.4725).abs() <= 1e-3 && vh.abs() <= 1e-3;
    outcome(
        pass,
        format!("f(1) = {v1:.6}, f(0) = {v0:.6} (closed form {min_f2:.6}), f(0.5) = {vh:.2e}"),
    )
}

fn under_via_cli(file: &str, d: usize) -> Result<Vec<f64>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pareto-sdp"))
        .args(["under", file, "--order", &d.to_string(), "--out", "json"])
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    Ok(doc["q"]
        .as_array()
        .ok_or("missing q")?
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect())
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let file = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/example3.json");
    let (q2, q4) = match (under_via_cli(file, 1), under_via_cli(file, 2)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return outcome(false, e),
    };
    let runs = t.elapsed();
    let prob = fixtures::example3(fixtures::EXAMPLE3_DIM, fixtures::EXAMPLE3_SEED);
    let oracle = discretize(&prob, Method::C, 100, 2, &opts()).unwrap();
    let mut dominance = f64::INFINITY;
    let mut above: f64 = f64::NEG_INFINITY;
    for r in &oracle.rows {
        let (a, b) = (horner(&q2, r.lambda), horner(&q4, r.lambda));
        dominance = dominance.min(b - a);
        above = above.max(a - r.value).max(b - r.value);
    }
    let pass = runs < Duration::from_secs(600) && dominance >= -1e-6 && above <= 1e-5;
    outcome(
        pass,
        format!(
            "min(q4 - q2) = {dominance:.2e}, max(q - oracle) = {above:.2e}, {:.1}s for both orders",
            runs.as_secs_f64()
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // min z1 s.t. [[z1, 1], [1, z1]] >= 0
    let x = Polynomial::var(1, 0);
    let mut sdp = assemble_static(&x, &[], &[1.0], 1).unwrap();
    sdp.blocks = vec![PsdBlock::from_cells(
        BlockKind::Moment,
        2,
        [(0, 0, vec![(1, 1.0)]), (0, 1, vec![(0, 1.0)]), (1, 1, vec![(1, 1.0)])],
    )];
    sdp.objective = vec![0.0, 1.0, 0.0];
    let sol = solve(&sdp, &opts());
    let ok = sol.status == SolveStatus::Optimal && sol.gap <= 1e-7 && (sol.objective_primal - 1.0).abs() < 1e-6;
    pass &= ok;
    notes.push(format!("2x2 toy {:.7} gap {:.1e}", sol.objective_primal, sol.gap));

    // equalities pin every moment: the objective is c'z directly
    let y = Polynomial::var(1, 0);
    let f = &(&y * &y) - &y;
    let sol = solve(&assemble(&ParametricPop::bare(f, vec![]), 2).unwrap(), &opts());
    let ok = sol.status == SolveStatus::Optimal && sol.gap <= 1e-7 && (sol.objective_primal + 1.0 / 6.0).abs() < 1e-7;
    pass &= ok;
    notes.push(format!("pinned toy {:.7}", sol.objective_primal));

    // f(y, x) = y: q(y) = y
    let y = Polynomial::var(2, 0);
    let xv = Polynomial::var(2, 1);
    let ball = &Polynomial::constant(2, 1.0) - &(&xv * &xv);
    let sol = solve(&assemble(&ParametricPop::bare(y, vec![ball]), 2).unwrap(), &opts());
    let q = extract_dual_polynomial(&sol, 2).map(|q| {
        (0..=10).map(|i| (q.eval(&[i as f64 / 10.0]).unwrap() - i as f64 / 10.0).abs()).fold(0.0, f64::max)
    });
    let ok = sol.gap <= 1e-7 && matches!(q, Ok(e) if e < 1e-5);
    pass &= ok;
    notes.push(format!("q = y toy gap {:.1e}", sol.gap));

    // moment vectors of atomic measures on K make every block PSD
    let pop = build_method_a(&fixtures::example1());
    let sdp = assemble(&pop, 2).unwrap();
    let grid = fixtures::example1_grid(60);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut min_eig = f64::INFINITY;
    for _ in 0..100 {
        let atoms: Vec<(f64, Vec<f64>)> = (0..2)
            .map(|_| {
                let p = grid[rng.random_range(0..grid.len())];
                (0.5, vec![rng.random_range(0.0..=1.0), p[0], p[1]])
            })
            .collect();
        let z = atomic_moments(&sdp.z_basis, &atoms);
        for block in &sdp.blocks {
            let m = block.evaluate(&z);
            let scale = m.amax().max(1.0);
            min_eig = min_eig.min(m.symmetric_eigenvalues().min() / scale);
        }
    }
    let ok = min_eig >= -1e-10;
    pass &= ok;
    notes.push(format!("atomic min eigenvalue {min_eig:.1e}"));
    outcome(pass, notes.join(", "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("hierarchy monotonicity", criterion_1),
        ("underestimation", criterion_2),
        ("moment fidelity", criterion_3),
        ("inverse-moment exactness", criterion_4),
        ("curve convergence in s", criterion_5),
        ("endpoint anchors", criterion_6),
        ("desk-scale random quadratics", criterion_7),
        ("solver unit suite", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} {name}: {tag} ({}; {:.1}s)",
            i + 1,
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
