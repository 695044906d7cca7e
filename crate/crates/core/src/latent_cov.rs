//! Latent error correlations from between-equation residual covariances.
//!
//! Coarsening shrinks covariances: the covariance of two generalized residuals
//! is a monotone function `f(ρ)` of the latent correlation `ρ`, determined by
//! each observation's pair of individual grids. Inverting `f` pair by pair
//! recovers the latent correlation matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{bvn_cdf, truncated};
use crate::gmm::estimate_between_cov;
use crate::model::{category_interval, ParamSet, Problem};
use crate::par::{chunked_sum, map_range, Execution};
use crate::rng::{stream_id, Stream};
use crate::roots::{brent, RootOptions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CovMode {
    /// Cell probabilities from the bivariate normal CDF.
    Exact,
    /// Cell assignment of simulated error pairs, common random numbers across `ρ`.
    MonteCarlo { draws_per_obs: usize, seed: u64 },
}

/// Per-observation pairs of individual grids: shifted interior cut-points and
/// the truncated mean of each cell.
#[derive(Clone, Debug)]
pub struct PairGrids {
    n: usize,
    j1: usize,
    j2: usize,
    cuts1: Vec<f64>,
    cuts2: Vec<f64>,
    means1: Vec<f64>,
    means2: Vec<f64>,
}

fn cell_means(cuts: &[f64]) -> Vec<f64> {
    (1..=cuts.len() + 1)
        .map(|j| {
            let iv = category_interval(cuts, j).expect("ordered cut-points");
            // Cells without representable mass carry no weight in any expectation.
            truncated(iv.lower(), iv.upper()).map(|t| t.mean).unwrap_or(0.0)
        })
        .collect()
}

impl PairGrids {
    /// Grids shared by every observation (no regressors), replicated `n` times.
    pub fn uniform(cuts1: &[f64], cuts2: &[f64], n: usize) -> Result<Self> {
        Self::with_shifts(cuts1, cuts2, &vec![0.0; n], &vec![0.0; n])
    }

    /// Grids `cuts - shift_i` for observation `i`.
    pub fn with_shifts(cuts1: &[f64], cuts2: &[f64], shift1: &[f64], shift2: &[f64]) -> Result<Self> {
        for c in [cuts1, cuts2] {
            if c.windows(2).any(|w| !(w[0] < w[1])) || c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("grid cut-points must be finite and ascending: {c:?}")));
            }
        }
        if shift1.len() != shift2.len() {
            return Err(Error::Domain("shift vectors differ in length".into()));
        }
        let n = shift1.len();
        let (j1, j2) = (cuts1.len() + 1, cuts2.len() + 1);
        let mut g = PairGrids {
            n,
            j1,
            j2,
            cuts1: Vec::with_capacity(n * (j1 - 1)),
            cuts2: Vec::with_capacity(n * (j2 - 1)),
            means1: Vec::with_capacity(n * j1),
            means2: Vec::with_capacity(n * j2),
        };
        for i in 0..n {
            let c1: Vec<f64> = cuts1.iter().map(|c| c - shift1[i]).collect();
            let c2: Vec<f64> = cuts2.iter().map(|c| c - shift2[i]).collect();
            g.means1.extend(cell_means(&c1));
            g.means2.extend(cell_means(&c2));
            g.cuts1.extend(c1);
            g.cuts2.extend(c2);
        }
        Ok(g)
    }

    /// The fitted grids of equations `k1` and `k2`.
    pub fn from_fit(problem: &Problem, params: &ParamSet, k1: usize, k2: usize) -> Result<Self> {
        let n = problem.n_obs();
        let s1: Vec<f64> = (0..n).map(|i| problem.index(&params.beta, k1, i)).collect();
        let s2: Vec<f64> = (0..n).map(|i| problem.index(&params.beta, k2, i)).collect();
        Self::with_shifts(&params.cutpoints[k1], &params.cutpoints[k2], &s1, &s2)
    }

    pub fn n_obs(&self) -> usize {
        self.n
    }

    fn obs(&self, i: usize) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (a, b) = (self.j1 - 1, self.j2 - 1);
        (
            &self.cuts1[i * a..(i + 1) * a],
            &self.cuts2[i * b..(i + 1) * b],
            &self.means1[i * self.j1..(i + 1) * self.j1],
            &self.means2[i * self.j2..(i + 1) * self.j2],
        )
    }

    fn exact_term(&self, i: usize, rho: f64) -> f64 {
        let (c1, c2, m1, m2) = self.obs(i);
        let edge = |c: &[f64], a: usize| -> f64 {
            if a == 0 {
                f64::NEG_INFINITY
            } else if a > c.len() {
                f64::INFINITY
            } else {
                c[a - 1]
            }
        };
        let (n1, n2) = (self.j1 + 1, self.j2 + 1);
        let mut corner = vec![0.0; n1 * n2];
        for a in 0..n1 {
            for b in 0..n2 {
                corner[a * n2 + b] = bvn_cdf(edge(c1, a), edge(c2, b), rho);
            }
        }
        let mut s = 0.0;
        for a in 0..self.j1 {
            for b in 0..self.j2 {
                let p = corner[(a + 1) * n2 + b + 1] - corner[a * n2 + b + 1] - corner[(a + 1) * n2 + b]
                    + corner[a * n2 + b];
                s += p.max(0.0) * m1[a] * m2[b];
            }
        }
        s
    }
}

/// Standard normal pairs reused for every `ρ` (common random numbers).
pub struct Draws {
    per_obs: usize,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Draws {
    pub fn new(n_obs: usize, per_obs: usize, seed: u64, purpose: u32) -> Self {
        let mut first = Vec::with_capacity(n_obs * per_obs);
        let mut second = Vec::with_capacity(n_obs * per_obs);
        for i in 0..n_obs {
            let mut s = Stream::new(seed, stream_id(purpose, i as u32));
            for _ in 0..per_obs {
                first.push(s.normal());
                second.push(s.normal());
            }
        }
        Draws { per_obs, first, second }
    }
}

fn cell_of(cuts: &[f64], e: f64) -> usize {
    cuts.iter().take_while(|&&c| c < e).count()
}

/// `f(ρ) = (1/N) Σ_i E_ρ[ē_i1 ē_i2]` in exact mode.
pub fn between_cov_exact(grids: &PairGrids, rho: f64, exec: Execution) -> Result<f64> {
    check_rho(rho)?;
    let s = chunked_sum(exec, grids.n, 1, |i, acc| {
        acc[0] += grids.exact_term(i, rho);
        Ok(())
    })?;
    Ok(s[0] / grids.n as f64)
}

/// `f(ρ)` averaged over the simulated pairs `(ε, ρε + sqrt(1-ρ²)η)`.
pub fn between_cov_mc(grids: &PairGrids, draws: &Draws, rho: f64, exec: Execution) -> Result<f64> {
    check_rho(rho)?;
    let r = (1.0 - rho * rho).sqrt();
    let d = draws.per_obs;
    if d == 0 || draws.first.len() != grids.n * d {
        return Err(Error::Config("draws do not match the grids".into()));
    }
    let s = chunked_sum(exec, grids.n, 1, |i, acc| {
        let (c1, c2, m1, m2) = grids.obs(i);
        let mut t = 0.0;
        for q in i * d..(i + 1) * d {
            let e1 = draws.first[q];
            let e2 = rho * e1 + r * draws.second[q];
            t += m1[cell_of(c1, e1)] * m2[cell_of(c2, e2)];
        }
        acc[0] += t / d as f64;
        Ok(())
    })?;
    Ok(s[0] / grids.n as f64)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::Domain(format!("correlation must lie in (-1, 1), got {rho}")));
    }
    Ok(())
}

/// `f(ρ)` in either mode; Monte Carlo draws are regenerated from the seed.
pub fn simulate_between_cov(grids: &PairGrids, rho: f64, mode: CovMode, exec: Execution) -> Result<f64> {
    match mode {
        CovMode::Exact => between_cov_exact(grids, rho, exec),
        CovMode::MonteCarlo { draws_per_obs, seed } => {
            check_rho(rho)?;
            let draws = Draws::new(grids.n, draws_per_obs, seed, 0);
            between_cov_mc(grids, &draws, rho, exec)
        }
    }
}

/// `f` at each `ρ`; Monte Carlo mode reuses one set of draws for all of them.
pub fn between_cov_curve(grids: &PairGrids, rhos: &[f64], mode: CovMode, exec: Execution) -> Result<Vec<f64>> {
    match mode {
        CovMode::Exact => rhos.iter().map(|&r| between_cov_exact(grids, r, exec)).collect(),
        CovMode::MonteCarlo { draws_per_obs, seed } => {
            let draws = Draws::new(grids.n, draws_per_obs, seed, 0);
            rhos.iter().map(|&r| between_cov_mc(grids, &draws, r, exec)).collect()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub mode: CovMode,
    pub f_tol: f64,
    pub bracket_tol: f64,
    /// Search runs over `(-1 + margin, 1 - margin)`.
    pub margin: f64,
}

impl MatchOptions {
    pub fn exact() -> Self {
        MatchOptions { mode: CovMode::Exact, f_tol: 1e-12, bracket_tol: 1e-10, margin: 1e-4 }
    }

    pub fn monte_carlo(draws_per_obs: usize, seed: u64) -> Self {
        MatchOptions {
            mode: CovMode::MonteCarlo { draws_per_obs, seed },
            f_tol: 5e-4,
            bracket_tol: 1e-6,
            margin: 1e-4,
        }
    }
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self::exact()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub rho_hat: f64,
    pub target_between: f64,
    pub achieved_between: f64,
    /// Total simulated pairs per `f` evaluation (0 in exact mode).
    pub n_draws: usize,
    pub bracket_iterations: usize,
    /// False when the target lies outside `f`'s range and `rho_hat` is a boundary value.
    pub attainable: bool,
}

/// Solves `f(ρ) = target` for the given grids.
pub fn match_rho(grids: &PairGrids, target: f64, opts: &MatchOptions, exec: Execution) -> Result<MatchResult> {
    match_rho_with(grids, target, opts, exec, 0)
}

fn match_rho_with(
    grids: &PairGrids,
    target: f64,
    opts: &MatchOptions,
    exec: Execution,
    purpose: u32,
) -> Result<MatchResult> {
    if !target.is_finite() {
        return Err(Error::Domain(format!("target covariance is not finite: {target}")));
    }
    let draws = match opts.mode {
        CovMode::Exact => None,
        CovMode::MonteCarlo { draws_per_obs, seed } => Some(Draws::new(grids.n, draws_per_obs, seed, purpose)),
    };
    let n_draws = draws.as_ref().map_or(0, |d| d.per_obs * grids.n);
    let f = |rho: f64| -> Result<f64> {
        match &draws {
            None => between_cov_exact(grids, rho, exec),
            Some(d) => between_cov_mc(grids, d, rho, exec),
        }
    };
    let (lo, hi) = (-1.0 + opts.margin, 1.0 - opts.margin);
    let (flo, fhi) = (f(lo)?, f(hi)?);
    let boundary = |rho: f64, achieved: f64| MatchResult {
        rho_hat: rho,
        target_between: target,
        achieved_between: achieved,
        n_draws,
        bracket_iterations: 0,
        attainable: false,
    };
    if target >= fhi {
        return Ok(boundary(hi, fhi));
    }
    if target <= flo {
        return Ok(boundary(lo, flo));
    }
    let mut g = |rho: f64| f(rho).map(|v| v - target);
    let root = brent(
        &mut g,
        lo,
        hi,
        flo - target,
        fhi - target,
        RootOptions { x_tol: opts.bracket_tol, f_tol: opts.f_tol, max_iter: 500 },
    )?;
    Ok(MatchResult {
        rho_hat: root.x,
        target_between: target,
        achieved_between: root.fx + target,
        n_draws,
        bracket_iterations: root.iterations,
        attainable: true,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMatch {
    pub first: usize,
    pub second: usize,
    pub result: Option<MatchResult>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct LatentCov {
    /// Unit diagonal; failed pairs hold NaN.
    pub matrix: DMatrix<f64>,
    /// Residual covariance at the estimate, the matching targets.
    pub between_cov: DMatrix<f64>,
    pub pairs: Vec<PairMatch>,
    pub min_eigenvalue: f64,
    pub positive_definite: bool,
}

/// Matches every off-diagonal entry of the latent correlation matrix.
pub fn full_correlation_matrix(problem: &Problem, params: &ParamSet, opts: &MatchOptions) -> Result<LatentCov> {
    let kk = problem.n_equations();
    let between = estimate_between_cov(problem, params)?;
    let pairs: Vec<(usize, usize)> = (0..kk).flat_map(|a| (a + 1..kk).map(move |b| (a, b))).collect();
    let exec = problem.exec;
    let outcomes = map_range(exec, pairs.len(), |p| {
        let (a, b) = pairs[p];
        let grids = PairGrids::from_fit(problem, params, a, b)?;
        match_rho_with(&grids, between[(a, b)], opts, exec, p as u32 + 1)
    });
    let mut matrix = DMatrix::identity(kk, kk);
    let mut report = Vec::with_capacity(pairs.len());
    for (&(a, b), out) in pairs.iter().zip(outcomes) {
        match out {
            Ok(m) => {
                matrix[(a, b)] = m.rho_hat;
                matrix[(b, a)] = m.rho_hat;
                report.push(PairMatch { first: a, second: b, result: Some(m), error: None });
            }
            Err(e) => {
                matrix[(a, b)] = f64::NAN;
                matrix[(b, a)] = f64::NAN;
                report.push(PairMatch { first: a, second: b, result: None, error: Some(e.to_string()) });
            }
        }
    }
    let (min_eigenvalue, positive_definite) = if matrix.iter().any(|v| v.is_nan()) {
        (f64::NAN, false)
    } else {
        let ev = SymmetricEigen::new(matrix.clone()).eigenvalues;
        let m = ev.iter().cloned().fold(f64::INFINITY, f64::min);
        (m, m > 0.0)
    };
    Ok(LatentCov { matrix, between_cov: between, pairs: report, min_eigenvalue, positive_definite })
}
