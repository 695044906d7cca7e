//! Statistics derived from a fitted system.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{ParamSet, Problem};
use crate::par::chunked_sum;

/// Covariance of the latent responses, split into its structural and error parts.
#[derive(Clone, Debug, PartialEq)]
pub struct PolychoricReport {
    pub sigma_yy: DMatrix<f64>,
    pub corr_yy: DMatrix<f64>,
    /// `B' Σ_XX B`: sample cross-moments of the fitted indices.
    pub structural: DMatrix<f64>,
    /// Latent error covariance (unit diagonal).
    pub error: DMatrix<f64>,
}

/// `(1/N) Σ_i t_i t_i'` where `t_ik = x_ik' β_k`.
pub fn index_moments(problem: &Problem, beta: &[f64]) -> Result<DMatrix<f64>> {
    let kk = problem.n_equations();
    let n = problem.n_obs();
    let s = chunked_sum(problem.exec, n, kk * kk, |i, acc| {
        let t: Vec<f64> = (0..kk).map(|k| problem.index(beta, k, i)).collect();
        for a in 0..kk {
            for b in 0..kk {
                acc[a * kk + b] += t[a] * t[b];
            }
        }
        Ok(())
    })?;
    Ok(DMatrix::from_row_slice(kk, kk, &s) / n as f64)
}

/// Polychoric covariance and correlation of the latent responses.
pub fn polychoric_matrix(problem: &Problem, params: &ParamSet, error_corr: &DMatrix<f64>) -> Result<PolychoricReport> {
    let kk = problem.n_equations();
    if error_corr.shape() != (kk, kk) {
        return Err(Error::Domain(format!(
            "error correlation is {:?}, expected {kk}×{kk}",
            error_corr.shape()
        )));
    }
    let structural = index_moments(problem, &params.beta)?;
    let sigma_yy = &structural + error_corr;
    let sd: Vec<f64> = (0..kk).map(|k| sigma_yy[(k, k)].sqrt()).collect();
    let corr_yy = DMatrix::from_fn(kk, kk, |a, b| if a == b { 1.0 } else { sigma_yy[(a, b)] / (sd[a] * sd[b]) });
    Ok(PolychoricReport { sigma_yy, corr_yy, structural, error: error_corr.clone() })
}

/// `s / (s + 1)` with `s` the mean squared fitted index of equation `k`.
pub fn mckelvey_zavoina_r2(problem: &Problem, params: &ParamSet, k: usize) -> Result<f64> {
    let n = problem.n_obs();
    let s = chunked_sum(problem.exec, n, 1, |i, acc| {
        let t = problem.index(&params.beta, k, i);
        acc[0] += t * t;
        Ok(())
    })?[0]
        / n as f64;
    Ok(s / (s + 1.0))
}

/// Pearson correlations of the responses after mapping category `j` to `codes[k][j-1]`.
pub fn pearson_coded(problem: &Problem, codes: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let kk = problem.n_equations();
    if codes.len() != kk {
        return Err(Error::Domain(format!("{} code vectors for {kk} equations", codes.len())));
    }
    for (k, c) in codes.iter().enumerate() {
        if c.len() != problem.categories(k) {
            return Err(Error::Domain(format!(
                "equation {k}: {} codes for {} categories",
                c.len(),
                problem.categories(k)
            )));
        }
    }
    let n = problem.n_obs();
    let coded: Vec<Vec<f64>> = (0..kk)
        .map(|k| problem.responses(k).iter().map(|&y| codes[k][y as usize - 1]).collect())
        .collect();
    let centred: Vec<Vec<f64>> = coded
        .iter()
        .map(|v| {
            let m = v.iter().sum::<f64>() / n as f64;
            v.iter().map(|x| x - m).collect()
        })
        .collect();
    let ss: Vec<f64> = centred.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>()).collect();
    for (k, &s) in ss.iter().enumerate() {
        if s == 0.0 {
            return Err(Error::Domain(format!("coded response of equation {k} has zero variance")));
        }
    }
    Ok(DMatrix::from_fn(kk, kk, |a, b| {
        if a == b {
            return 1.0;
        }
        let c: f64 = centred[a].iter().zip(&centred[b]).map(|(x, y)| x * y).sum();
        c / (ss[a] * ss[b]).sqrt()
    }))
}

/// Codes `0, 1, …, J-1` for every equation.
pub fn default_codes(problem: &Problem) -> Vec<Vec<f64>> {
    (0..problem.n_equations())
        .map(|k| (0..problem.categories(k)).map(|j| j as f64).collect())
        .collect()
}

/// GLS standard errors had the latent responses been observed exactly:
/// `sqrt diag((1/N) A⁻¹)` with `A = (1/N) Σ_i X_i' Σ⁻¹ X_i`.
pub fn exact_data_se(problem: &Problem, error_cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    let kk = problem.n_equations();
    let p = problem.n_groups();
    let winv = error_cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("latent error covariance is not positive definite".into()))?
        .inverse();
    let layout = problem.layout();
    let n = problem.n_obs();
    let s = chunked_sum(problem.exec, n, p * p, |i, acc| {
        for k1 in 0..kk {
            for (x1, &g1) in problem.x_row(k1, i).iter().zip(&layout.slots[k1]) {
                for k2 in 0..kk {
                    let c = x1 * winv[(k1, k2)];
                    for (x2, &g2) in problem.x_row(k2, i).iter().zip(&layout.slots[k2]) {
                        acc[g1 * p + g2] += c * x2;
                    }
                }
            }
        }
        Ok(())
    })?;
    let a = DMatrix::from_row_slice(p, p, &s) / n as f64;
    let ainv = a
        .cholesky()
        .ok_or_else(|| Error::Singular("regressor cross-moment matrix".into()))?
        .inverse();
    Ok((0..p).map(|g| (ainv[(g, g)] / n as f64).sqrt()).collect())
}
