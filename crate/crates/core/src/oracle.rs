//! Maximum-likelihood reference fits: ordered probit for one equation and
//! bivariate ordered probit for a pair. Used to cross-check the moment
//! estimator, not by it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{bvn_rect_prob, interval_mass, share_quantiles, MIN_MASS};
use crate::model::{category_interval, Problem};
use crate::par::chunked_sum_scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleFit {
    pub labels: Vec<String>,
    pub estimates: Vec<f64>,
    pub se: Vec<f64>,
    pub loglik: f64,
    /// Norm of the average-log-likelihood gradient in the reported parameters.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Log-likelihood of equation `k` as a single ordered probit.
pub fn op_loglik(problem: &Problem, k: usize, beta: &[f64], cuts: &[f64]) -> Result<f64> {
    check_cuts(cuts, problem.categories(k))?;
    chunked_sum_scalar(problem.exec, problem.n_obs(), |i| {
        let t: f64 = problem.x_row(k, i).iter().zip(beta).map(|(x, b)| x * b).sum();
        let j = problem.response(k, i);
        let iv = category_interval(cuts, j)?;
        let p = interval_mass(iv.lower() - t, iv.upper() - t);
        if !(p >= MIN_MASS) {
            return Err(Error::DegenerateCell {
                obs: i,
                equation: k,
                category: j,
                lower: iv.lower() - t,
                upper: iv.upper() - t,
            });
        }
        Ok(p.ln())
    })
}

/// Log-likelihood of equations `k1`, `k2` as a bivariate ordered probit.
#[allow(clippy::too_many_arguments)]
pub fn biprobit_loglik(
    problem: &Problem,
    k1: usize,
    k2: usize,
    beta1: &[f64],
    beta2: &[f64],
    cuts1: &[f64],
    cuts2: &[f64],
    rho: f64,
) -> Result<f64> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::Domain(format!("correlation must lie in (-1, 1), got {rho}")));
    }
    check_cuts(cuts1, problem.categories(k1))?;
    check_cuts(cuts2, problem.categories(k2))?;
    chunked_sum_scalar(problem.exec, problem.n_obs(), |i| {
        let t1: f64 = problem.x_row(k1, i).iter().zip(beta1).map(|(x, b)| x * b).sum();
        let t2: f64 = problem.x_row(k2, i).iter().zip(beta2).map(|(x, b)| x * b).sum();
        let a = category_interval(cuts1, problem.response(k1, i))?.shifted(t1);
        let b = category_interval(cuts2, problem.response(k2, i))?.shifted(t2);
        let p = bvn_rect_prob(a, b, rho)?;
        if !(p >= MIN_MASS) {
            return Err(Error::DegenerateCell {
                obs: i,
                equation: k1,
                category: problem.response(k1, i),
                lower: a.lower(),
                upper: a.upper(),
            });
        }
        Ok(p.ln())
    })
}

fn check_cuts(cuts: &[f64], categories: usize) -> Result<()> {
    if cuts.len() + 1 != categories {
        return Err(Error::Domain(format!("{} cut-points for {categories} categories", cuts.len())));
    }
    if cuts.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Ordering { equation: 0, cutpoints: cuts.to_vec() });
    }
    Ok(())
}

// Cut-points as (first, log gaps) so that any real vector maps to an ordered set.
fn cuts_from_free(free: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(free.len());
    for (j, &v) in free.iter().enumerate() {
        out.push(if j == 0 { v } else { out[j - 1] + v.exp() });
    }
    out
}

fn cuts_to_free(cuts: &[f64]) -> Vec<f64> {
    cuts.iter()
        .enumerate()
        .map(|(j, &c)| if j == 0 { c } else { (c - cuts[j - 1]).ln() })
        .collect()
}

fn fd_gradient(f: &dyn Fn(&[f64]) -> Result<f64>, x: &[f64], rel: f64) -> Result<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for q in 0..x.len() {
        let h = rel * x[q].abs().max(1.0);
        xp[q] = x[q] + h;
        let fp = f(&xp)?;
        xp[q] = x[q] - h;
        let fm = f(&xp)?;
        xp[q] = x[q];
        g[q] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

fn fd_hessian(f: &dyn Fn(&[f64]) -> Result<f64>, x: &[f64], rel: f64) -> Result<DMatrix<f64>> {
    let d = x.len();
    let h: Vec<f64> = x.iter().map(|v| rel * v.abs().max(1.0)).collect();
    let mut hess = DMatrix::zeros(d, d);
    let f0 = f(x)?;
    let mut xp = x.to_vec();
    for a in 0..d {
        xp[a] = x[a] + h[a];
        let fp = f(&xp)?;
        xp[a] = x[a] - h[a];
        let fm = f(&xp)?;
        xp[a] = x[a];
        hess[(a, a)] = (fp - 2.0 * f0 + fm) / (h[a] * h[a]);
        for b in 0..a {
            let eval = |sa: f64, sb: f64| {
                let mut y = x.to_vec();
                y[a] += sa * h[a];
                y[b] += sb * h[b];
                f(&y)
            };
            let v = (eval(1.0, 1.0)? - eval(1.0, -1.0)? - eval(-1.0, 1.0)? + eval(-1.0, -1.0)?)
                / (4.0 * h[a] * h[b]);
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    Ok(hess)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Minimum {
    x: Vec<f64>,
    iterations: usize,
}

/// BFGS on a function that may fail outside its domain (treated as +∞).
fn bfgs(f: &dyn Fn(&[f64]) -> Result<f64>, x0: Vec<f64>, max_iter: usize, gtol: f64) -> Result<Minimum> {
    let d = x0.len();
    let mut x = x0;
    let mut fx = f(&x)?;
    let mut g = fd_gradient(f, &x, 1e-5)?;
    let mut hinv = DMatrix::<f64>::identity(d, d);
    let mut stalls = 0;
    let mut flat = 0;
    for it in 0..max_iter {
        if norm(&g) <= gtol {
            return Ok(Minimum { x, iterations: it });
        }
        let gv = DVector::from_column_slice(&g);
        let mut dir = -(&hinv * &gv);
        let mut slope = dir.dot(&gv);
        if slope >= 0.0 {
            hinv = DMatrix::identity(d, d);
            dir = -gv.clone();
            slope = dir.dot(&gv);
        }
        let mut alpha = 1.0;
        let mut next = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, b)| a + alpha * b).collect();
            if let Ok(fnew) = f(&xn) {
                if fnew.is_finite() && fnew <= fx + 1e-4 * alpha * slope {
                    next = Some((xn, fnew));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = next else {
            // Line search exhausted: we are at the resolution of the finite differences.
            stalls += 1;
            if stalls > 2 {
                return Ok(Minimum { x, iterations: it });
            }
            hinv = DMatrix::identity(d, d);
            continue;
        };
        // Decreases at rounding level mean the finite-difference gradient is noise.
        flat = if fx - fnew <= 1e-15 * fx.abs().max(1.0) { flat + 1 } else { 0 };
        if flat >= 3 {
            return Ok(Minimum { x: xn, iterations: it + 1 });
        }
        let gn = fd_gradient(f, &xn, 1e-5)?;
        let s = DVector::from_iterator(d, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(d, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-14 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(d, d);
            let left = &i - rho * &s * y.transpose();
            let right = &i - rho * &y * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
        }
        x = xn;
        fx = fnew;
        g = gn;
    }
    Ok(Minimum { x, iterations: max_iter })
}

fn finish(
    labels: Vec<String>,
    natural: Vec<f64>,
    iterations: usize,
    n: f64,
    loglik_nat: &dyn Fn(&[f64]) -> Result<f64>,
) -> Result<OracleFit> {
    let avg = |v: &[f64]| loglik_nat(v).map(|l| l / n);
    let grad = fd_gradient(&avg, &natural, 1e-5)?;
    let gradient_norm = norm(&grad);
    let hess = fd_hessian(&avg, &natural, 1e-4)? * n;
    let info = -hess;
    let cov = info
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| info.try_inverse())
        .ok_or_else(|| Error::Singular("observed information".into()))?;
    let se = (0..natural.len()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let loglik = loglik_nat(&natural)?;
    Ok(OracleFit {
        labels,
        estimates: natural,
        se,
        loglik,
        gradient_norm,
        iterations,
        converged: gradient_norm <= 1e-6,
    })
}

/// Ordered-probit ML for equation `k`; estimates are `(β_k, ν_k)`.
pub fn op_ml_fit(problem: &Problem, k: usize) -> Result<OracleFit> {
    let m = problem.spec().equations[k].regressors.len();
    let n = problem.n_obs() as f64;
    let start_cuts = share_quantiles(&problem.category_counts(k))?;
    let mut x0 = vec![0.0; m];
    x0.extend(cuts_to_free(&start_cuts));
    let objective = |x: &[f64]| -> Result<f64> {
        Ok(-op_loglik(problem, k, &x[..m], &cuts_from_free(&x[m..]))? / n)
    };
    let min = bfgs(&objective, x0, 1000, 1e-8)?;
    let mut natural = min.x[..m].to_vec();
    natural.extend(cuts_from_free(&min.x[m..]));
    let ll = |v: &[f64]| op_loglik(problem, k, &v[..m], &v[m..]);
    finish(equation_labels(problem, k), natural, min.iterations, n, &ll)
}

fn equation_labels(problem: &Problem, k: usize) -> Vec<String> {
    let eq = &problem.spec().equations[k];
    let mut l: Vec<String> = eq.regressors.iter().map(|r| format!("Eq.{}: var. {r}", eq.response)).collect();
    l.extend((1..eq.categories).map(|j| format!("Eq.{}: cutp. {j}", eq.response)));
    l
}

/// Bivariate ordered-probit ML; estimates are `(β_k1, β_k2, ν_k1, ν_k2, ρ)`.
pub fn biprobit_ml_fit(problem: &Problem, k1: usize, k2: usize) -> Result<OracleFit> {
    let m1 = problem.spec().equations[k1].regressors.len();
    let m2 = problem.spec().equations[k2].regressors.len();
    let c1 = problem.categories(k1) - 1;
    let c2 = problem.categories(k2) - 1;
    let n = problem.n_obs() as f64;
    let a = op_ml_fit(problem, k1)?;
    let b = op_ml_fit(problem, k2)?;
    let mut x0 = a.estimates[..m1].to_vec();
    x0.extend_from_slice(&b.estimates[..m2]);
    x0.extend(cuts_to_free(&a.estimates[m1..]));
    x0.extend(cuts_to_free(&b.estimates[m2..]));
    x0.push(0.0);
    let split = |x: &[f64]| -> (usize, usize, usize, usize) { (m1, m1 + m2, m1 + m2 + c1, x.len() - 1) };
    let objective = |x: &[f64]| -> Result<f64> {
        let (p, q, r, s) = split(x);
        let ll = biprobit_loglik(
            problem,
            k1,
            k2,
            &x[..p],
            &x[p..q],
            &cuts_from_free(&x[q..r]),
            &cuts_from_free(&x[r..s]),
            x[s].tanh(),
        )?;
        Ok(-ll / n)
    };
    let min = bfgs(&objective, x0, 1000, 1e-8)?;
    let (p, q, r, s) = split(&min.x);
    let mut natural = min.x[..q].to_vec();
    natural.extend(cuts_from_free(&min.x[q..r]));
    natural.extend(cuts_from_free(&min.x[r..s]));
    natural.push(min.x[s].tanh());
    debug_assert_eq!(natural.len(), m1 + m2 + c1 + c2 + 1);
    let ll = |v: &[f64]| {
        biprobit_loglik(problem, k1, k2, &v[..p], &v[p..q], &v[q..r], &v[r..s], v[s])
    };
    let mut labels: Vec<String> = equation_labels(problem, k1)[..m1].to_vec();
    labels.extend_from_slice(&equation_labels(problem, k2)[..m2]);
    labels.extend_from_slice(&equation_labels(problem, k1)[m1..]);
    labels.extend_from_slice(&equation_labels(problem, k2)[m2..]);
    labels.push(format!(
        "rho({}, {})",
        problem.spec().equations[k1].response,
        problem.spec().equations[k2].response
    ));
    finish(labels, natural, min.iterations, n, &ll)
}
