//! Cut-point equations.
//!
//! Cut `j` of equation `k` binarizes the response at `y ≤ j` and solves
//! `(1/N) Σ_i [1{y_ik ≤ j}·E(ε | ε ≤ ν - t_ik) + 1{y_ik > j}·E(ε | ε > ν - t_ik)] = 0`
//! for `ν`, holding the indices `t_ik = x_ik'β` fixed. The left side is strictly
//! increasing in `ν`, so each cut has at most one root.

use crate::error::{Error, Result};
use crate::gauss::{lower_residual, share_quantiles, upper_residual};
use crate::model::Problem;
use crate::par::{chunked_sum_scalar, map_range, Execution};
use crate::roots::{solve, RootOptions};

fn binarized_mean(exec: Execution, index: &[f64], y: &[u32], j: usize, nu: f64) -> Result<f64> {
    let s = chunked_sum_scalar(exec, index.len(), |i| {
        if y[i] as usize <= j {
            lower_residual(nu, index[i])
        } else {
            upper_residual(nu, index[i])
        }
    })?;
    Ok(s / index.len() as f64)
}

/// Value of cut `j` (1-based) of equation `k` at candidate `nu`.
pub fn cut_moment(problem: &Problem, beta: &[f64], k: usize, j: usize, nu: f64) -> Result<f64> {
    let index: Vec<f64> = (0..problem.n_obs()).map(|i| problem.index(beta, k, i)).collect();
    binarized_mean(problem.exec, &index, problem.responses(k), j, nu)
}

/// Solves every cut-point equation at fixed `beta`.
pub fn solve_cutpoints(problem: &Problem, beta: &[f64]) -> Result<Vec<Vec<f64>>> {
    let kk = problem.n_equations();
    let n = problem.n_obs();
    let indices: Vec<Vec<f64>> = map_range(problem.exec, kk, |k| {
        (0..n).map(|i| problem.index(beta, k, i)).collect()
    });
    let tasks: Vec<(usize, usize)> = (0..kk)
        .flat_map(|k| (1..problem.categories(k)).map(move |j| (k, j)))
        .collect();
    let opts = RootOptions { x_tol: 1e-12, f_tol: 1e-12, max_iter: 200 };
    let roots = map_range(problem.exec, tasks.len(), |t| {
        let (k, j) = tasks[t];
        solve(
            |nu| binarized_mean(problem.exec, &indices[k], problem.responses(k), j, nu),
            -10.0,
            10.0,
            opts,
        )
        .map(|r| r.x)
        .map_err(|e| match e {
            Error::Bracket(msg) => Error::Bracket(format!("equation {k}, cut {j}: {msg}")),
            other => other,
        })
    });
    let mut out: Vec<Vec<f64>> = (0..kk).map(|k| Vec::with_capacity(problem.categories(k) - 1)).collect();
    for ((k, _), r) in tasks.iter().zip(roots) {
        out[*k].push(r?);
    }
    for (k, c) in out.iter().enumerate() {
        if c.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Ordering { equation: k, cutpoints: c.clone() });
        }
    }
    Ok(out)
}

/// Cut-points at `β = 0`: normal quantiles of the cumulative category shares.
pub fn quantile_cutpoints(problem: &Problem) -> Result<Vec<Vec<f64>>> {
    (0..problem.n_equations())
        .map(|k| share_quantiles(&problem.category_counts(k)))
        .collect()
}
