//! Synthetic data from a latent linear system with correlated normal errors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, EquationSpec, ModelSpec};
use crate::par::{map_range, Execution};
use crate::rng::{stream_id, Stream};

/// Observations per generation block; each block owns its own sub-streams.
const BLOCK: usize = 1024;
const ERROR_PURPOSE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Noise {
    Normal { sd: f64 },
    /// Equiprobable draw from the listed values.
    Discrete { values: Vec<f64> },
    None,
}

/// `column = Σ coef·previous_column + noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnRecipe {
    pub name: String,
    #[serde(default)]
    pub terms: Vec<(String, f64)>,
    pub noise: Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpEquation {
    pub response: String,
    pub coefficients: Vec<(String, f64)>,
    pub cutpoints: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub columns: Vec<ColumnRecipe>,
    pub equations: Vec<DgpEquation>,
    /// Latent error correlation, unit diagonal.
    pub error_corr: Vec<Vec<f64>>,
}

pub struct Simulated {
    /// Responses first, then regressor columns in recipe order.
    pub data: Dataset,
    /// Latent responses `<response>_latent` and errors `<response>_error`.
    pub latent: Dataset,
    /// Untied model with every recipe column the equation uses.
    pub spec: ModelSpec,
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (c, col) in self.columns.iter().enumerate() {
            if self.columns[..c].iter().any(|p| p.name == col.name) {
                return bad(format!("column '{}' defined twice", col.name));
            }
            for (t, _) in &col.terms {
                if !self.columns[..c].iter().any(|p| &p.name == t) {
                    return bad(format!("column '{}' refers to '{t}', which is not an earlier column", col.name));
                }
            }
            match &col.noise {
                Noise::Normal { sd } if !(*sd >= 0.0) => return bad(format!("column '{}': bad sd {sd}", col.name)),
                Noise::Discrete { values } if values.is_empty() => {
                    return bad(format!("column '{}': no discrete values", col.name))
                }
                _ => {}
            }
        }
        let k = self.equations.len();
        if k == 0 {
            return bad("no equations".into());
        }
        for eq in &self.equations {
            if eq.cutpoints.is_empty() || eq.cutpoints.windows(2).any(|w| !(w[0] < w[1])) {
                return bad(format!("equation '{}': cut-points must be non-empty and ascending", eq.response));
            }
            for (c, _) in &eq.coefficients {
                if !self.columns.iter().any(|p| &p.name == c) {
                    return bad(format!("equation '{}' uses unknown column '{c}'", eq.response));
                }
            }
        }
        self.cholesky().map(|_| ())
    }

    fn cholesky(&self) -> Result<DMatrix<f64>> {
        let k = self.equations.len();
        if self.error_corr.len() != k || self.error_corr.iter().any(|r| r.len() != k) {
            return Err(Error::Config(format!("error correlation must be {k}×{k}")));
        }
        let m = DMatrix::from_fn(k, k, |a, b| self.error_corr[a][b]);
        for a in 0..k {
            if m[(a, a)] != 1.0 {
                return Err(Error::Config("error correlation must have unit diagonal".into()));
            }
            for b in 0..a {
                if m[(a, b)] != m[(b, a)] {
                    return Err(Error::Config("error correlation must be symmetric".into()));
                }
            }
        }
        m.cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Config("error correlation is not positive definite".into()))
    }

    /// The model that the generated data follow, without ties.
    pub fn model(&self) -> ModelSpec {
        ModelSpec {
            equations: self
                .equations
                .iter()
                .map(|e| EquationSpec {
                    response: e.response.clone(),
                    regressors: e.coefficients.iter().map(|(c, _)| c.clone()).collect(),
                    categories: e.cutpoints.len() + 1,
                })
                .collect(),
            ties: vec![],
        }
    }
}

struct Block {
    columns: Vec<Vec<f64>>,
    latent: Vec<Vec<f64>>,
    errors: Vec<Vec<f64>>,
    responses: Vec<Vec<f64>>,
}

fn generate_block(cfg: &DgpConfig, chol: &DMatrix<f64>, seed: u64, b: usize, n: usize) -> Block {
    let start = b * BLOCK;
    let len = BLOCK.min(n - start);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(cfg.columns.len());
    for (c, col) in cfg.columns.iter().enumerate() {
        let mut s = Stream::new(seed, stream_id(c as u32, b as u32));
        let terms: Vec<(usize, f64)> = col
            .terms
            .iter()
            .map(|(t, w)| (cfg.columns.iter().position(|p| &p.name == t).unwrap(), *w))
            .collect();
        let v: Vec<f64> = (0..len)
            .map(|i| {
                let base: f64 = terms.iter().map(|&(t, w)| w * columns[t][i]).sum();
                base + match &col.noise {
                    Noise::Normal { sd } => sd * s.normal(),
                    Noise::Discrete { values } => values[s.index(values.len())],
                    Noise::None => 0.0,
                }
            })
            .collect();
        columns.push(v);
    }
    let k = cfg.equations.len();
    let mut s = Stream::new(seed, stream_id(ERROR_PURPOSE, b as u32));
    let mut errors = vec![Vec::with_capacity(len); k];
    let mut z = vec![0.0; k];
    for _ in 0..len {
        z.iter_mut().for_each(|v| *v = s.normal());
        for a in 0..k {
            errors[a].push((0..=a).map(|c| chol[(a, c)] * z[c]).sum());
        }
    }
    let mut latent = Vec::with_capacity(k);
    let mut responses = Vec::with_capacity(k);
    for (a, eq) in cfg.equations.iter().enumerate() {
        let coefs: Vec<(usize, f64)> = eq
            .coefficients
            .iter()
            .map(|(c, w)| (cfg.columns.iter().position(|p| &p.name == c).unwrap(), *w))
            .collect();
        let ys: Vec<f64> = (0..len)
            .map(|i| coefs.iter().map(|&(c, w)| w * columns[c][i]).sum::<f64>() + errors[a][i])
            .collect();
        responses.push(ys.iter().map(|&y| 1.0 + eq.cutpoints.iter().filter(|&&c| c < y).count() as f64).collect());
        latent.push(ys);
    }
    Block { columns, latent, errors, responses }
}

/// Draws `n` observations; identical output for a given seed regardless of `exec`.
pub fn generate(cfg: &DgpConfig, n: usize, seed: u64, exec: Execution) -> Result<Simulated> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Config("sample size must be positive".into()));
    }
    let chol = cfg.cholesky()?;
    let blocks = map_range(exec, n.div_ceil(BLOCK), |b| generate_block(cfg, &chol, seed, b, n));
    let k = cfg.equations.len();
    let join = |pick: &dyn Fn(&Block) -> &Vec<Vec<f64>>, width: usize| -> Vec<Vec<f64>> {
        (0..width)
            .map(|c| blocks.iter().flat_map(|b| pick(b)[c].iter().copied()).collect())
            .collect()
    };
    let mut names: Vec<String> = cfg.equations.iter().map(|e| e.response.clone()).collect();
    names.extend(cfg.columns.iter().map(|c| c.name.clone()));
    let mut cols = join(&|b| &b.responses, k);
    cols.extend(join(&|b| &b.columns, cfg.columns.len()));
    let data = Dataset::new(names, cols)?;
    let mut lnames: Vec<String> = cfg.equations.iter().map(|e| format!("{}_latent", e.response)).collect();
    lnames.extend(cfg.equations.iter().map(|e| format!("{}_error", e.response)));
    let mut lcols = join(&|b| &b.latent, k);
    lcols.extend(join(&|b| &b.errors, k));
    let latent = Dataset::new(lnames, lcols)?;
    Ok(Simulated { data, latent, spec: cfg.model() })
}

/// The four-equation benchmark design: correlated continuous and dummy-driven
/// regressors, mixed signs and 2 to 4 response categories.
pub fn benchmark_config() -> DgpConfig {
    let normal = |sd| Noise::Normal { sd };
    let col = |name: &str, terms: Vec<(&str, f64)>, noise| ColumnRecipe {
        name: name.into(),
        terms: terms.into_iter().map(|(t, w)| (t.to_string(), w)).collect(),
        noise,
    };
    let eq = |resp: &str, b: [f64; 4], cuts: Vec<f64>| DgpEquation {
        response: resp.into(),
        coefficients: ["x1", "x2", "x3", "x4"].iter().zip(b).map(|(n, w)| (n.to_string(), w)).collect(),
        cutpoints: cuts,
    };
    DgpConfig {
        columns: vec![
            col("x1", vec![], normal(1.0)),
            col("x2", vec![("x1", 0.5)], Noise::Discrete { values: vec![-1.0, 1.0] }),
            col("x3", vec![("x2", 0.5)], normal(2.0)),
            col("x4", vec![("x3", -0.5)], Noise::Discrete { values: vec![-1.0, 0.0, 1.0] }),
        ],
        equations: vec![
            eq("y1", [1.0, 1.0, 1.0, 1.0], vec![0.0]),
            eq("y2", [1.0, 2.0, 3.0, 4.0], vec![-1.0, 1.5]),
            eq("y3", [-1.0, 2.0, -3.0, 4.0], vec![-1.0, 0.5]),
            eq("y4", [-1.0, 0.5, -1.0, 1.0], vec![-1.5, -0.5, 1.0]),
        ],
        error_corr: vec![
            vec![1.0, 0.5, -0.5, 0.2],
            vec![0.5, 1.0, 0.3, 0.6],
            vec![-0.5, 0.3, 1.0, -0.1],
            vec![0.2, 0.6, -0.1, 1.0],
        ],
    }
}

pub fn generate_benchmark(n: usize, seed: u64, exec: Execution) -> Result<Simulated> {
    generate(&benchmark_config(), n, seed, exec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data_across_execution_modes() {
        let a = generate_benchmark(3000, 9, Execution::Sequential).unwrap();
        let b = generate_benchmark(3000, 9, Execution::Parallel).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.latent, b.latent);
        let c = generate_benchmark(3000, 10, Execution::Parallel).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn responses_follow_cutpoints() {
        let s = generate_benchmark(2000, 1, Execution::Sequential).unwrap();
        let y = s.data.column("y4").unwrap();
        let ys = s.latent.column("y4_latent").unwrap();
        for (c, l) in y.iter().zip(ys) {
            let want = 1.0 + [-1.5, -0.5, 1.0].iter().filter(|&&v| v < *l).count() as f64;
            assert_eq!(*c, want);
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut cfg = benchmark_config();
        cfg.error_corr[0][1] = 0.99;
        cfg.error_corr[1][0] = 0.99;
        cfg.error_corr[1][3] = -0.99;
        cfg.error_corr[3][1] = -0.99;
        cfg.error_corr[0][3] = 0.99;
        cfg.error_corr[3][0] = 0.99;
        assert!(cfg.validate().is_err());
        let mut cfg = benchmark_config();
        cfg.columns[1].terms[0].0 = "x9".into();
        assert!(cfg.validate().is_err());
    }
}
