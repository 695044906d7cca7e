//! Two-stage estimation by alternating coefficient and cut-point solves.
//!
//! Stage one fixes the residual weight at the identity; stage two re-estimates
//! the between-equation residual covariance once per outer iteration and
//! re-solves the system under the new weight until nothing moves.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cutpoints::{quantile_cutpoints, solve_cutpoints};
use crate::error::{Error, Result};
use crate::model::{ParamSet, Problem};
use crate::par::{chunked_sum, try_map_range};
use crate::residuals::{invert_spd, norm, observed_truncation, Moments};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_outer_iterations: usize,
    /// Cap on coefficient/cut-point alternations within one weight.
    pub max_inner_iterations: usize,
    pub param_tolerance: f64,
    pub moment_tolerance: f64,
    /// Relative step for the finite-difference moment Jacobian.
    pub jacobian_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_outer_iterations: 100,
            max_inner_iterations: 500,
            param_tolerance: 1e-8,
            moment_tolerance: 1e-10,
            jacobian_step: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub first_stage_secs: f64,
    pub second_stage_secs: f64,
    pub covariance_secs: f64,
}

/// Estimates under identity weights (equation-by-equation fits when nothing is tied).
#[derive(Clone, Debug)]
pub struct FirstStage {
    pub params: ParamSet,
    pub se: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub alternations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: ParamSet,
    pub labels: Vec<String>,
    pub se: Vec<f64>,
    /// `estimate / se`; `None` when the standard error is zero.
    pub z: Vec<Option<f64>>,
    pub cov: DMatrix<f64>,
    /// Outer (weight-update) iterations of stage two.
    pub iterations: usize,
    pub converged: bool,
    /// Norm of the averaged moment vector at the returned estimate.
    pub moment_norm: f64,
    pub first_stage: FirstStage,
    pub timings: Timings,
}

pub struct BetaSolve {
    pub beta: Vec<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Averaged β-block moments at weight `weight` (= Σ̄⁻¹) and, optionally, their analytic Jacobian in β.
pub fn beta_block(
    problem: &Problem,
    beta: &[f64],
    cutpoints: &[Vec<f64>],
    weight: &DMatrix<f64>,
    with_jacobian: bool,
) -> Result<(Vec<f64>, Option<DMatrix<f64>>)> {
    let p = problem.n_groups();
    let kk = problem.n_equations();
    let dim = if with_jacobian { p + p * p } else { p };
    let params = ParamSet { beta: beta.to_vec(), cutpoints: cutpoints.to_vec(), between_cov: DMatrix::identity(kk, kk) };
    let layout = problem.layout();
    let n = problem.n_obs();
    let s = chunked_sum(problem.exec, n, dim, |i, acc| {
        let mut e = Vec::with_capacity(kk);
        let mut slope = Vec::with_capacity(kk);
        for k in 0..kk {
            let (_, tr) = observed_truncation(problem, &params, k, i)?;
            e.push(tr.mean);
            slope.push(tr.slope);
        }
        for k in 0..kk {
            let wk: f64 = (0..kk).map(|l| weight[(k, l)] * e[l]).sum();
            for (x, &g) in problem.x_row(k, i).iter().zip(&layout.slots[k]) {
                acc[g] += x * wk;
            }
        }
        if with_jacobian {
            let jac = &mut acc[p..];
            for k1 in 0..kk {
                for (x1, &g1) in problem.x_row(k1, i).iter().zip(&layout.slots[k1]) {
                    for k2 in 0..kk {
                        let c = x1 * weight[(k1, k2)] * slope[k2];
                        if c == 0.0 {
                            continue;
                        }
                        let row = &mut jac[g1 * p..(g1 + 1) * p];
                        for (x2, &g2) in problem.x_row(k2, i).iter().zip(&layout.slots[k2]) {
                            row[g2] += c * x2;
                        }
                    }
                }
            }
        }
        Ok(())
    })?;
    let inv_n = 1.0 / n as f64;
    let g: Vec<f64> = s[..p].iter().map(|v| v * inv_n).collect();
    let jac = with_jacobian.then(|| DMatrix::from_row_slice(p, p, &s[p..]) * inv_n);
    Ok((g, jac))
}

/// Solves the β-block of the moment conditions at fixed cut-points and weight
/// by damped Newton with an analytic Jacobian.
pub fn solve_beta(
    problem: &Problem,
    cutpoints: &[Vec<f64>],
    weight: &DMatrix<f64>,
    start: &[f64],
) -> Result<BetaSolve> {
    let mut beta = start.to_vec();
    let (mut g, _) = beta_block(problem, &beta, cutpoints, weight, false)?;
    let mut gn = norm(&g);
    for it in 0..100 {
        if gn <= 1e-14 {
            return Ok(BetaSolve { beta, gradient_norm: gn, iterations: it });
        }
        let (_, jac) = beta_block(problem, &beta, cutpoints, weight, true)?;
        let jac = jac.expect("jacobian requested");
        let step = jac
            .lu()
            .solve(&-DVector::from_column_slice(&g))
            .ok_or_else(|| Error::Singular("coefficient Jacobian".into()))?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, d)| b + alpha * d).collect();
            match beta_block(problem, &trial, cutpoints, weight, false) {
                Ok((g2, _)) => {
                    let n2 = norm(&g2);
                    if n2 < (1.0 - 1e-4 * alpha) * gn {
                        beta = trial;
                        g = g2;
                        gn = n2;
                        accepted = true;
                        break;
                    }
                }
                Err(e) if e.is_numerical() => {}
                Err(e) => return Err(e),
            }
            alpha *= 0.5;
        }
        if !accepted {
            // At the rounding floor no step can reduce the norm further.
            if gn <= 1e-11 {
                return Ok(BetaSolve { beta, gradient_norm: gn, iterations: it });
            }
            return Err(Error::Solver(format!(
                "coefficient solve stalled with moment norm {gn:e}"
            )));
        }
        if step.amax() * alpha <= 1e-15 * beta.iter().fold(1.0f64, |m, b| m.max(b.abs())) {
            return Ok(BetaSolve { beta, gradient_norm: gn, iterations: it + 1 });
        }
    }
    Ok(BetaSolve { beta, gradient_norm: gn, iterations: 100 })
}

/// `(1/N) Σ_i ē_i ē_i'` at the given parameters.
pub fn estimate_between_cov(problem: &Problem, params: &ParamSet) -> Result<DMatrix<f64>> {
    let kk = problem.n_equations();
    let n = problem.n_obs();
    let s = chunked_sum(problem.exec, n, kk * kk, |i, acc| {
        let e: Vec<f64> = (0..kk)
            .map(|k| observed_truncation(problem, params, k, i).map(|(_, t)| t.mean))
            .collect::<Result<_>>()?;
        for a in 0..kk {
            for b in 0..kk {
                acc[a * kk + b] += e[a] * e[b];
            }
        }
        Ok(())
    })?;
    let m = DMatrix::from_row_slice(kk, kk, &s) / n as f64;
    if m.clone().cholesky().is_none() {
        return Err(Error::Singular("estimated between-equation covariance is not positive definite".into()));
    }
    Ok(m)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

struct Inner {
    alternations: usize,
    converged: bool,
}

/// Alternates coefficient and cut-point solves at a fixed weight.
fn alternate(problem: &Problem, params: &mut ParamSet, opts: &FitOptions) -> Result<Inner> {
    let weight = invert_spd(&params.between_cov, "between-equation covariance")?;
    for it in 1..=opts.max_inner_iterations {
        let before = params.theta();
        params.beta = solve_beta(problem, &params.cutpoints, &weight, &params.beta)?.beta;
        params.cutpoints = solve_cutpoints(problem, &params.beta)?;
        if max_abs_diff(&before, &params.theta()) <= opts.param_tolerance {
            let g = Moments::new(problem, params)?.mean()?;
            if norm(&g) <= opts.moment_tolerance {
                return Ok(Inner { alternations: it, converged: true });
            }
        }
    }
    Ok(Inner { alternations: opts.max_inner_iterations, converged: false })
}

/// Full two-stage fit with sandwich standard errors.
pub fn fit(problem: &Problem, opts: &FitOptions) -> Result<FitResult> {
    let t0 = Instant::now();
    let mut params = problem.zero_params();
    params.cutpoints = quantile_cutpoints(problem)?;
    let inner = alternate(problem, &mut params, opts)?;
    let first_params = params.clone();
    let first_secs = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=opts.max_outer_iterations {
        iterations = t;
        let before = params.theta();
        let cov_before = params.between_cov.clone();
        params.between_cov = estimate_between_cov(problem, &params)?;
        let inner = alternate(problem, &mut params, opts)?;
        let moved = max_abs_diff(&before, &params.theta())
            .max(max_abs_diff(cov_before.as_slice(), params.between_cov.as_slice()));
        if inner.converged && moved <= opts.param_tolerance {
            converged = true;
            break;
        }
    }
    let second_secs = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let moment_norm = norm(&Moments::new(problem, &params)?.mean()?);
    let cov = sandwich_cov(problem, &params, opts.jacobian_step)?.cov;
    let se = std_errors(&cov);
    let first_cov = sandwich_cov(problem, &first_params, opts.jacobian_step)?.cov;
    let first_se = std_errors(&first_cov);
    let cov_secs = t2.elapsed().as_secs_f64();

    let z = z_values(&params.theta(), &se);
    Ok(FitResult {
        labels: problem.param_labels(),
        params,
        se,
        z,
        cov,
        iterations,
        converged,
        moment_norm,
        first_stage: FirstStage {
            params: first_params,
            se: first_se,
            cov: first_cov,
            alternations: inner.alternations,
            converged: inner.converged,
        },
        timings: Timings {
            first_stage_secs: first_secs,
            second_stage_secs: second_secs,
            covariance_secs: cov_secs,
        },
    })
}

fn z_values(theta: &[f64], se: &[f64]) -> Vec<Option<f64>> {
    theta.iter().zip(se).map(|(&b, &s)| (s > 0.0).then(|| b / s)).collect()
}

/// Re-expresses a fit made on demeaned regressors in the scale of the raw data.
///
/// Only the cut-points move: `ν_kj + x̄_k'β_k`, with the covariance carried
/// through that linear map (the means are treated as fixed). The result is for
/// reporting; its parameters no longer match the demeaned `problem`.
pub fn on_data_scale(problem: &Problem, fit: &FitResult, means: &[(String, f64)]) -> FitResult {
    let d = problem.n_params();
    let mut t = DMatrix::<f64>::identity(d, d);
    let mut row = problem.n_groups();
    for (k, eq) in problem.spec().equations.iter().enumerate() {
        let shift: Vec<(usize, f64)> = eq
            .regressors
            .iter()
            .zip(&problem.layout().slots[k])
            .map(|(r, &g)| (g, means.iter().find(|(n, _)| n == r).map_or(0.0, |m| m.1)))
            .collect();
        for _ in 1..eq.categories {
            for &(g, m) in &shift {
                t[(row, g)] += m;
            }
            row += 1;
        }
    }
    let map = |params: &ParamSet, cov: &DMatrix<f64>| {
        let theta = &t * DVector::from_vec(params.theta());
        let mut out = params.clone();
        out.set_theta(theta.as_slice());
        let cov = &t * cov * t.transpose();
        (out, cov)
    };
    let (params, cov) = map(&fit.params, &fit.cov);
    let (first_params, first_cov) = map(&fit.first_stage.params, &fit.first_stage.cov);
    let se = std_errors(&cov);
    FitResult {
        z: z_values(&params.theta(), &se),
        se,
        params,
        cov,
        first_stage: FirstStage {
            se: std_errors(&first_cov),
            params: first_params,
            cov: first_cov,
            ..fit.first_stage.clone()
        },
        ..fit.clone()
    }
}

pub fn std_errors(cov: &DMatrix<f64>) -> Vec<f64> {
    (0..cov.nrows()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect()
}

pub struct Sandwich {
    /// `(1/N) G⁻¹ S G⁻ᵀ`.
    pub cov: DMatrix<f64>,
    /// Jacobian of the averaged moments in `θ`.
    pub jacobian: DMatrix<f64>,
    /// `(1/N) Σ g_i g_i'`.
    pub score_cov: DMatrix<f64>,
}

/// Sandwich covariance of `θ = (β, ν)` at fixed weight `params.between_cov`.
pub fn sandwich_cov(problem: &Problem, params: &ParamSet, step: f64) -> Result<Sandwich> {
    let theta = params.theta();
    let d = theta.len();
    let columns = try_map_range(problem.exec, d, |q| {
        let h = step * theta[q].abs().max(1.0);
        let mut plus = params.clone();
        let mut minus = params.clone();
        let mut tp = theta.clone();
        tp[q] += h;
        plus.set_theta(&tp);
        tp[q] = theta[q] - h;
        minus.set_theta(&tp);
        let gp = Moments::new(problem, &plus)?.mean()?;
        let gm = Moments::new(problem, &minus)?.mean()?;
        Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<f64>>())
    })?;
    let jacobian = DMatrix::from_fn(d, d, |r, c| columns[c][r]);
    let score_cov = Moments::new(problem, params)?.outer_mean()?;
    let ginv = jacobian
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("moment Jacobian".into()))?;
    let v = &ginv * &score_cov * ginv.transpose() / problem.n_obs() as f64;
    let cov = (&v + v.transpose()) * 0.5;
    Ok(Sandwich { cov, jacobian, score_cov })
}
