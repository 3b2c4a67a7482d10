//! Wasserstein distances between discrete probability measures.
//!
//! [`wp_exact`] solves the Kantorovich problem exactly: uniform measures of
//! equal size go through an assignment solver (an optimal plan is then a
//! permutation), everything else through a min-cost flow. [`wp_sliced`] is
//! the large-sample surrogate.

mod assignment;
mod mcf;
mod sliced;

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

pub use sliced::{slice_direction, wp_sliced, wp_sliced_with};

/// Largest `n + m` accepted by [`wp_exact`].
pub const EXACT_SIZE_CAP: usize = 4096;

/// Tolerance on `Σ weights = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Tolerance on coupling marginals.
pub const MARGINAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    uniform: bool,
}

impl DiscreteMeasure {
    /// `points` is row-major `n × dim`.
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return input("measure dimension must be >= 1");
        }
        if weights.is_empty() || points.len() != weights.len() * dim {
            return input(format!(
                "measure needs n >= 1 points of dimension {dim}; got {} coordinates for {} weights",
                points.len(),
                weights.len()
            ));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return input("measure points must be finite");
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return input("measure weights must be finite and > 0");
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return input(format!("measure weights sum to {sum}, not 1"));
        }
        let w0 = weights[0];
        let uniform = weights.iter().all(|w| *w == w0);
        Ok(DiscreteMeasure { dim, points, weights, uniform })
    }

    /// Empirical measure with weight `1/n` on each row.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return input("uniform measure needs a nonempty n × dim point array");
        }
        let n = points.len() / dim;
        Self::new(dim, points, vec![1.0 / n as f64; n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// `∫φ dμ`.
    pub fn integrate(&self, phi: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * phi(self.point(i))).sum()
    }
}

/// A transport plan with its `p`-cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    /// `(i, j, mass)` with `i` indexing `μ` and `j` indexing `ν`.
    pub plan: Vec<(usize, usize, f64)>,
    pub cost_p: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExactMethod {
    Assignment,
    MinCostFlow,
}

/// Full output of [`wp_exact_detailed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub distance: f64,
    pub plan: Coupling,
    pub method: ExactMethod,
    /// Complementary-slackness defect of the final duals, in units of the
    /// normalized cost matrix.
    pub dual_residual: f64,
}

/// `|a - b|^p` with the Euclidean norm accumulated on rescaled differences.
pub fn pair_cost(a: &[f64], b: &[f64], p: f64) -> f64 {
    let scale = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let r = (x - y) / scale;
            r * r
        })
        .sum();
    if p == 2.0 {
        scale * scale * s
    } else {
        (scale * s.sqrt()).powf(p)
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p.is_finite() && p >= 1.0) {
        return input(format!("Wasserstein exponent must be >= 1, got {p}"));
    }
    Ok(())
}

fn cost_matrix(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Vec<f64> {
    let (n, m) = (mu.len(), nu.len());
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let a = mu.point(i);
        for j in 0..m {
            c[i * m + j] = pair_cost(a, nu.point(j), p);
        }
    }
    c
}

/// `W_p(μ, ν)` and an optimal coupling.
pub fn wp_exact(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<(f64, Coupling)> {
    let s = wp_exact_detailed(mu, nu, p)?;
    Ok((s.distance, s.plan))
}

pub fn wp_exact_detailed(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<ExactSolution> {
    check_p(p)?;
    if mu.dim() != nu.dim() {
        return input(format!("measures live in dimensions {} and {}", mu.dim(), nu.dim()));
    }
    let (n, m) = (mu.len(), nu.len());
    if n + m > EXACT_SIZE_CAP {
        return Err(Error::SizeCap { cap: EXACT_SIZE_CAP, got: n + m });
    }
    let cost = cost_matrix(mu, nu, p);
    let max = cost.iter().cloned().fold(0.0, f64::max);
    let inv = if max > 0.0 { 1.0 / max } else { 1.0 };
    let scaled: Vec<f64> = cost.iter().map(|c| c * inv).collect();
    if mu.is_uniform() && nu.is_uniform() && n == m {
        let (col_of, u, v) = assignment::solve(&scaled, n);
        let dual_residual = assignment::dual_residual(&scaled, n, &col_of, &u, &v);
        let total: f64 = (0..n).map(|i| cost[i * n + col_of[i]]).sum();
        let cost_p = total / n as f64;
        let w = 1.0 / n as f64;
        let plan = (0..n).map(|i| (i, col_of[i], w)).collect();
        return Ok(ExactSolution {
            distance: cost_p.powf(1.0 / p),
            plan: Coupling { plan, cost_p, p },
            method: ExactMethod::Assignment,
            dual_residual,
        });
    }
    let sol = mcf::solve(&scaled, mu.weights(), nu.weights());
    let dual_residual = mcf::dual_residual(&scaled, n, m, &sol);
    let mut plan = Vec::new();
    let mut cost_p = 0.0;
    for i in 0..n {
        for j in 0..m {
            let f = sol.flow[i * m + j];
            if f > 0.0 {
                plan.push((i, j, f));
                cost_p += f * cost[i * m + j];
            }
        }
    }
    Ok(ExactSolution {
        distance: cost_p.powf(1.0 / p),
        plan: Coupling { plan, cost_p, p },
        method: ExactMethod::MinCostFlow,
        dual_residual,
    })
}

/// Recomputed marginals and cost of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub max_row_violation: f64,
    pub max_col_violation: f64,
    pub min_mass: f64,
    pub out_of_range: usize,
    pub cost_recomputed: f64,
    pub cost_mismatch: f64,
}

impl CouplingReport {
    pub fn max_marginal_violation(&self) -> f64 {
        self.max_row_violation.max(self.max_col_violation)
    }

    /// Marginals within [`MARGINAL_TOL`], masses nonnegative, indices valid,
    /// recorded cost consistent.
    pub fn is_valid(&self) -> bool {
        self.max_marginal_violation() <= MARGINAL_TOL
            && self.min_mass >= 0.0
            && self.out_of_range == 0
            && self.cost_mismatch <= 1e-9 * self.cost_recomputed.max(1.0)
    }
}

pub fn verify_coupling(plan: &Coupling, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> CouplingReport {
    let mut rows = vec![0.0; mu.len()];
    let mut cols = vec![0.0; nu.len()];
    let mut min_mass = f64::INFINITY;
    let mut out_of_range = 0;
    let mut cost = 0.0;
    for &(i, j, mass) in &plan.plan {
        min_mass = min_mass.min(mass);
        if i >= mu.len() || j >= nu.len() || mu.dim() != nu.dim() {
            out_of_range += 1;
            continue;
        }
        rows[i] += mass;
        cols[j] += mass;
        cost += mass * pair_cost(mu.point(i), nu.point(j), plan.p);
    }
    let viol = |acc: &[f64], w: &[f64]| acc.iter().zip(w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    CouplingReport {
        max_row_violation: viol(&rows, mu.weights()),
        max_col_violation: viol(&cols, nu.weights()),
        min_mass: if plan.plan.is_empty() { 0.0 } else { min_mass },
        out_of_range,
        cost_recomputed: cost,
        cost_mismatch: (cost - plan.cost_p).abs(),
    }
}
