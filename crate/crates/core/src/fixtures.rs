//! Built-in test problems.
//!
//! 1. Convex image: `f1 = -x1`, `f2 = x1 + x2^2` on
//!    `{ x2 >= x1^2, x1 + 2 x2 <= 3 }`.
//! 2. Non-convex, disconnected front on `[0,5] x [0,3]` with a cubic and a
//!    quadratic constraint.
//! 3. Random quadratic pair `x'Q_j x / n^2 - q_j'x / n` on `[-1,1]^n`,
//!    generated from a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::polynomial::Polynomial;
use crate::scalarize::BicriteriaProblem;

pub const EXAMPLE3_SEED: u64 = 20131;
pub const EXAMPLE3_DIM: usize = 6;

fn p2(terms: &[([u32; 2], f64)]) -> Polynomial {
    Polynomial::from_terms(2, terms.iter().map(|(e, c)| (e.to_vec(), *c)))
        .expect("two-variable terms")
}

pub fn example1() -> BicriteriaProblem {
    let g1 = p2(&[([2, 0], -1.0), ([0, 1], 1.0)]);
    let g2 = p2(&[([1, 0], -1.0), ([0, 1], -2.0), ([0, 0], 3.0)]);
    let f1 = p2(&[([1, 0], -1.0)]);
    let f2 = p2(&[([1, 0], 1.0), ([0, 2], 1.0)]);
    BicriteriaProblem::new(f1, f2, vec![g1, g2], 8.0).expect("example 1 is well formed")
}

pub fn example2() -> BicriteriaProblem {
    let x1 = Polynomial::var(2, 0);
    let x2 = Polynomial::var(2, 1);
    let c = |v: f64| Polynomial::constant(2, v);

    let t = &x1 - &c(2.0);
    let g1 = &(&(&(&t * &t) * &t).scale(-0.5) - &x2) + &c(2.5);
    let u = &(&x2 - &x1) + &c(0.65);
    let g2 = &(&(&(&c(3.85) - &x1) - &x2) + &(&u * &u).scale(8.0));

    let a = &(&x1 + &x2) - &c(7.5);
    let b = &(&x2 - &x1) + &c(3.0);
    let f1 = &(&a * &a).scale(0.25) + &(&b * &b);
    let e = &x1 - &c(1.0);
    let h = &x2 - &c(4.0);
    let f2 = (&(&e * &e) + &(&h * &h)).scale(0.4);

    let constraints = vec![
        g1,
        g2.clone(),
        x1.clone(),
        &c(5.0) - &x1,
        x2.clone(),
        &c(3.0) - &x2,
    ];
    BicriteriaProblem::new(f1, f2, constraints, 34.0).expect("example 2 is well formed")
}

/// Random instance on `[-1,1]^n`. Matrix entries are uniform on `[-1,1]`
/// then symmetrized; vector entries are uniform on `[-1,1]`.
pub fn example3(n: usize, seed: u64) -> BicriteriaProblem {
    assert!(n >= 1, "example 3 needs n >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = n as f64;
    let mut criterion = || {
        let raw: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let lin: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let mut f = Polynomial::zero(n);
        for i in 0..n {
            for j in i..n {
                let qij = 0.5 * (raw[i * n + j] + raw[j * n + i]);
                let coef = if i == j { qij } else { 2.0 * qij };
                let mut e = vec![0u32; n];
                e[i] += 1;
                e[j] += 1;
                f = &f + &Polynomial::from_terms(n, [(e, coef / (nf * nf))]).unwrap();
            }
            f = &f - &Polynomial::var(n, i).scale(lin[i] / nf);
        }
        f
    };
    let f1 = criterion();
    let f2 = criterion();
    let one = Polynomial::constant(n, 1.0);
    let constraints = (0..n)
        .map(|i| {
            let x = Polynomial::var(n, i);
            &one - &(&x * &x)
        })
        .collect();
    BicriteriaProblem::new(f1, f2, constraints, nf).expect("example 3 is well formed")
}

/// Points of a uniform `(n+1) x (n+1)` grid over a rectangle that satisfy
/// every constraint of a two-variable problem.
pub fn feasible_grid(prob: &BicriteriaProblem, x1: (f64, f64), x2: (f64, f64), n: usize) -> Vec<[f64; 2]> {
    assert_eq!(prob.nvars(), 2);
    let mut pts = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            let x = [
                x1.0 + (x1.1 - x1.0) * i as f64 / n as f64,
                x2.0 + (x2.1 - x2.0) * j as f64 / n as f64,
            ];
            if prob.constraints.iter().all(|g| g.eval(&x).unwrap() >= 0.0) {
                pts.push(x);
            }
        }
    }
    pts
}

/// Feasible grid of example 1; its feasible set lies in `[-1.5,1] x [0,2.25]`.
pub fn example1_grid(n: usize) -> Vec<[f64; 2]> {
    feasible_grid(&example1(), (-1.5, 1.0), (0.0, 2.25), n)
}

pub fn example2_grid(n: usize) -> Vec<[f64; 2]> {
    feasible_grid(&example2(), (0.0, 5.0), (0.0, 3.0), n)
}
