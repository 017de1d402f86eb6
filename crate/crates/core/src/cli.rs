//! Command-line driver.
//!
//! Problem files are JSON:
//!
//! ```text
//! {"variables": ["x1", "x2"],
//!  "f1": [{"exps": [1, 0], "coef": -1.0}],
//!  "f2": [...],
//!  "constraints": [[...], ...],
//!  "box_radius_sq": 8.0}
//! ```
//!
//! An optional `"generate": {"kind": "random_quadratic", "n": 6, "seed": 20131}`
//! block replaces the polynomial data by a seeded random instance.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::densrec::parametric_curve;
use crate::error::{Error, Result};
use crate::fixtures;
use crate::pipeline::{discretize, run_method_ab, run_method_c};
use crate::polynomial::{Polynomial, Term};
use crate::scalarize::{criterion_bounds, default_bounds_order, BicriteriaProblem, Method};
use crate::sdpsolve::SolverOptions;

/// Fraction of optimal rows below which `discretize` reports failure.
pub const MIN_SOLVED_FRACTION: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub kind: String,
    pub n: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub variables: Vec<String>,
    #[serde(default)]
    pub f1: Vec<Term>,
    #[serde(default)]
    pub f2: Vec<Term>,
    #[serde(default)]
    pub constraints: Vec<Vec<Term>>,
    pub box_radius_sq: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<Generator>,
}

impl ProblemFile {
    pub fn from_problem(prob: &BicriteriaProblem, variables: Vec<String>) -> Result<Self> {
        if variables.len() != prob.nvars() {
            return Err(Error::DimensionMismatch {
                expected: prob.nvars(),
                found: variables.len(),
            });
        }
        Ok(ProblemFile {
            variables,
            f1: prob.f1.to_term_list(),
            f2: prob.f2.to_term_list(),
            constraints: prob.constraints.iter().map(|g| g.to_term_list()).collect(),
            box_radius_sq: prob.box_radius_sq,
            generate: None,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn emit(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// `seed` overrides the generator seed.
    pub fn to_problem(&self, seed: Option<u64>) -> Result<BicriteriaProblem> {
        if let Some(g) = &self.generate {
            if g.kind != "random_quadratic" {
                return Err(Error::InvalidProblem(format!("unknown generator kind {:?}", g.kind)));
            }
            if g.n == 0 || g.n != self.variables.len() {
                return Err(Error::InvalidProblem(format!(
                    "generator size {} does not match {} variables",
                    g.n,
                    self.variables.len()
                )));
            }
            return Ok(fixtures::example3(g.n, seed.unwrap_or(g.seed)));
        }
        let n = self.variables.len();
        if n == 0 {
            return Err(Error::InvalidProblem("no variables".into()));
        }
        let poly = |terms: &[Term]| Polynomial::from_term_list(n, terms);
        let constraints = self
            .constraints
            .iter()
            .map(|c| poly(c))
            .collect::<Result<Vec<_>>>()?;
        BicriteriaProblem::new(poly(&self.f1)?, poly(&self.f2)?, constraints, self.box_radius_sq)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    A,
    B,
    C,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::A => Method::A,
            MethodArg::B => Method::B,
            MethodArg::C => Method::C,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pareto-sdp", version, about = "Pareto curve approximation for bicriteria polynomial problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, global = true, default_value_t = 1e-7)]
    pub gap_tol: f64,
    #[arg(long, global = true, default_value_t = 1e-7)]
    pub feas_tol: f64,
    #[arg(long, global = true, default_value_t = 200)]
    pub max_iter: usize,
    /// Seed for generated problem files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print solver iterations to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

impl SolverArgs {
    pub fn options(&self) -> Result<SolverOptions> {
        if !(self.gap_tol > 0.0 && self.feas_tol > 0.0) {
            return Err(Error::Usage("tolerances must be positive".into()));
        }
        Ok(SolverOptions {
            gap_tol: self.gap_tol,
            feas_tol: self.feas_tol,
            max_iter: self.max_iter,
            verbose: self.verbose,
        })
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lower and upper bounds of one criterion over the feasible set.
    Bounds {
        file: PathBuf,
        #[arg(long, default_value_t = 1)]
        which: usize,
        /// Relaxation order; defaults to max(2, minimal order).
        #[arg(long)]
        order: Option<usize>,
    },
    /// Density estimates (h1, h2) of the Pareto curve (methods a and b).
    Curve {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::A)]
        method: MethodArg,
        #[arg(long, default_value_t = 5)]
        order: usize,
        #[arg(long, default_value_t = 4)]
        density_degree: usize,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
        out: OutFormat,
    },
    /// Polynomial underestimator of the Pareto curve (method c).
    Under {
        file: PathBuf,
        #[arg(long, default_value_t = 5)]
        order: usize,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
        out: OutFormat,
    },
    /// Per-parameter relaxations on a uniform grid.
    Discretize {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::A)]
        method: MethodArg,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        #[arg(long, default_value_t = 5)]
        order: usize,
        #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
        out: OutFormat,
    },
}

/// Runs one command, writing its output to `w`. Returns the exit code.
pub fn run<W: Write>(cli: &Cli, w: &mut W) -> Result<i32> {
    let opts = cli.solver.options()?;
    let load = |file: &Path| ProblemFile::read(file)?.to_problem(cli.solver.seed);
    match &cli.command {
        Command::Bounds { file, which, order } => {
            let prob = load(file)?;
            let d = order.unwrap_or_else(|| default_bounds_order(&prob));
            let (lower, upper) = criterion_bounds(&prob, *which, d, &opts)?;
            writeln!(
                w,
                "{}",
                json!({"which": which, "order": d, "lower": lower, "upper": upper})
            )?;
            Ok(0)
        }
        Command::Curve {
            file,
            method,
            order,
            density_degree,
            grid,
            out,
        } => {
            if *method == MethodArg::C {
                return Err(Error::Usage("curve needs --method a or b; use `under` for method c".into()));
            }
            check_grid(*grid)?;
            let prob = load(file)?;
            let run = run_method_ab(&prob, (*method).into(), *order, *density_degree, &opts)?;
            let (h1, h2) = run.densities().expect("methods a and b give densities");
            let points = parametric_curve(h1, h2, *grid)?;
            let lambdas = crate::densrec::uniform_grid(*grid);
            match out {
                OutFormat::Csv => {
                    writeln!(w, "lambda,h1,h2")?;
                    for (l, (a, b)) in lambdas.iter().zip(&points) {
                        writeln!(w, "{l},{a},{b}")?;
                    }
                }
                OutFormat::Json => {
                    let rows: Vec<_> = lambdas
                        .iter()
                        .zip(&points)
                        .map(|(l, (a, b))| json!({"lambda": l, "h1": a, "h2": b}))
                        .collect();
                    let doc = json!({
                        "method": run.method,
                        "order": run.relax_order,
                        "density_degree": run.density_degree,
                        "rho": run.rho,
                        "rho_star": run.rho_star,
                        "gap": run.gap,
                        "status": run.status,
                        "bounds": run.bounds,
                        "h1": h1.coeffs,
                        "h2": h2.coeffs,
                        "timings": run.timings,
                        "curve": rows,
                    });
                    writeln!(w, "{}", serde_json::to_string_pretty(&doc)?)?;
                }
            }
            Ok(0)
        }
        Command::Under { file, order, grid, out } => {
            check_grid(*grid)?;
            let prob = load(file)?;
            let run = run_method_c(&prob, *order, &opts)?;
            let rows = run.underestimator_curve(*grid)?;
            match out {
                OutFormat::Csv => {
                    writeln!(w, "lambda,f1_of_lambda,q2d")?;
                    for (l, f1, q) in &rows {
                        writeln!(w, "{l},{f1},{q}")?;
                    }
                }
                OutFormat::Json => {
                    let pts: Vec<_> = rows
                        .iter()
                        .map(|(l, f1, q)| json!({"lambda": l, "f1_of_lambda": f1, "q2d": q}))
                        .collect();
                    let doc = json!({
                        "order": run.relax_order,
                        "a1": run.bounds.a1,
                        "b1": run.bounds.b1,
                        "q": run.underestimator(),
                        "rho": run.rho,
                        "rho_star": run.rho_star,
                        "gap": run.gap,
                        "status": run.status,
                        "timings": run.timings,
                        "curve": pts,
                    });
                    writeln!(w, "{}", serde_json::to_string_pretty(&doc)?)?;
                }
            }
            Ok(0)
        }
        Command::Discretize {
            file,
            method,
            grid,
            order,
            out,
        } => {
            check_grid(*grid)?;
            let prob = load(file)?;
            let table = discretize(&prob, (*method).into(), *grid, *order, &opts)?;
            match out {
                OutFormat::Csv => {
                    writeln!(w, "lambda,value,f1_star,f2_star,status")?;
                    for r in &table.rows {
                        writeln!(
                            w,
                            "{},{},{},{},{}",
                            r.lambda,
                            r.value,
                            r.f1_star,
                            r.f2_star,
                            r.status.as_str()
                        )?;
                    }
                }
                OutFormat::Json => writeln!(w, "{}", serde_json::to_string_pretty(&table)?)?,
            }
            let solved = table.solved_fraction();
            if solved < MIN_SOLVED_FRACTION {
                log::error!("only {:.0}% of rows solved", 100.0 * solved);
                return Ok(4);
            }
            Ok(0)
        }
    }
}

fn check_grid(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Usage(format!("--grid needs at least 2 points, got {n}")));
    }
    Ok(())
}
