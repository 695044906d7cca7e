//! Generalized residuals and the stacked moment vector.
//!
//! For observation `i` the moment vector is `[β-block ; ν-block]`:
//! the β-block is `X_i' Σ̄⁻¹ ē_i` collapsed over tie groups, where `ē_ik` is
//! the mean of the latent error over the observed interval; the ν-block holds,
//! for every equation and interior cut, the one-sided residual on the side of
//! the cut where the response fell.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gauss::{lower_residual, truncated, upper_residual, Truncated};
use crate::model::{ParamSet, Problem};
use crate::par::chunked_sum;

/// Positions of the blocks inside the stacked moment/parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentLayout {
    pub n_beta: usize,
    /// Offset of equation `k`'s first cut-point moment.
    pub cut_offsets: Vec<usize>,
    pub dim: usize,
}

impl MomentLayout {
    pub fn new(problem: &Problem) -> Self {
        let n_beta = problem.n_groups();
        let mut cut_offsets = Vec::with_capacity(problem.n_equations());
        let mut o = n_beta;
        for k in 0..problem.n_equations() {
            cut_offsets.push(o);
            o += problem.categories(k) - 1;
        }
        MomentLayout { n_beta, cut_offsets, dim: o }
    }
}

/// Truncated moments of equation `k`'s error over observation `i`'s observed interval.
pub(crate) fn observed_truncation(
    problem: &Problem,
    params: &ParamSet,
    k: usize,
    i: usize,
) -> Result<(f64, Truncated)> {
    let t = problem.index(&params.beta, k, i);
    let iv = problem.observed_interval(&params.cutpoints[k], k, i)?;
    let s = iv.shifted(t);
    truncated(s.lower(), s.upper())
        .map(|tr| (t, tr))
        .map_err(|e| match e {
            Error::DegenerateInterval { .. } => Error::DegenerateCell {
                obs: i,
                equation: k,
                category: problem.response(k, i),
                lower: s.lower(),
                upper: s.upper(),
            },
            other => other,
        })
}

/// `E[ε_ik | y_ik]` under the current parameters.
pub fn generalized_residual(problem: &Problem, params: &ParamSet, k: usize, i: usize) -> Result<f64> {
    Ok(observed_truncation(problem, params, k, i)?.1.mean)
}

pub(crate) fn invert_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    sym.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

/// Evaluates moments at fixed parameters and weights.
pub struct Moments<'a> {
    problem: &'a Problem,
    params: &'a ParamSet,
    weight: DMatrix<f64>,
    layout: MomentLayout,
}

impl<'a> Moments<'a> {
    pub fn new(problem: &'a Problem, params: &'a ParamSet) -> Result<Self> {
        let weight = invert_spd(&params.between_cov, "between-equation covariance")?;
        Ok(Moments { problem, params, weight, layout: MomentLayout::new(problem) })
    }

    pub fn layout(&self) -> &MomentLayout {
        &self.layout
    }

    /// Adds observation `i`'s moment vector into `out`.
    pub fn accumulate(&self, i: usize, out: &mut [f64]) -> Result<()> {
        let kk = self.problem.n_equations();
        let mut index = Vec::with_capacity(kk);
        let mut e = Vec::with_capacity(kk);
        for k in 0..kk {
            let (t, tr) = observed_truncation(self.problem, self.params, k, i)?;
            index.push(t);
            e.push(tr.mean);
        }
        self.fill(i, &index, &e, out)
    }

    fn fill(&self, i: usize, index: &[f64], e: &[f64], out: &mut [f64]) -> Result<()> {
        let p = self.problem;
        let layout = p.layout();
        for k in 0..e.len() {
            let wk: f64 = (0..e.len()).map(|l| self.weight[(k, l)] * e[l]).sum();
            for (x, &g) in p.x_row(k, i).iter().zip(&layout.slots[k]) {
                out[g] += x * wk;
            }
            let y = p.response(k, i);
            let off = self.layout.cut_offsets[k];
            for (j, &nu) in self.params.cutpoints[k].iter().enumerate() {
                out[off + j] += if y <= j + 1 {
                    lower_residual(nu, index[k])?
                } else {
                    upper_residual(nu, index[k])?
                };
            }
        }
        Ok(())
    }

    /// `(1/N) Σ_i g_i`.
    pub fn mean(&self) -> Result<Vec<f64>> {
        let n = self.problem.n_obs();
        let mut s = chunked_sum(self.problem.exec, n, self.layout.dim, |i, acc| self.accumulate(i, acc))?;
        s.iter_mut().for_each(|v| *v /= n as f64);
        Ok(s)
    }

    /// `(1/N) Σ_i g_i g_i'`.
    pub fn outer_mean(&self) -> Result<DMatrix<f64>> {
        let n = self.problem.n_obs();
        let d = self.layout.dim;
        let s = chunked_sum(self.problem.exec, n, d * d, |i, acc| {
            let mut g = vec![0.0; d];
            self.accumulate(i, &mut g)?;
            for a in 0..d {
                if g[a] == 0.0 {
                    continue;
                }
                let row = &mut acc[a * d..(a + 1) * d];
                for b in 0..d {
                    row[b] += g[a] * g[b];
                }
            }
            Ok(())
        })?;
        Ok(DMatrix::from_row_slice(d, d, &s) / n as f64)
    }
}

/// Moment vector of a single observation.
pub fn moment_vector(problem: &Problem, params: &ParamSet, i: usize) -> Result<Vec<f64>> {
    let m = Moments::new(problem, params)?;
    let mut g = vec![0.0; m.layout.dim];
    m.accumulate(i, &mut g)?;
    Ok(g)
}

/// Sample mean of the moment vector.
pub fn mean_moments(problem: &Problem, params: &ParamSet) -> Result<Vec<f64>> {
    Moments::new(problem, params)?.mean()
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
