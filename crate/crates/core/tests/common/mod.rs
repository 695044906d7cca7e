#![allow(dead_code)]

use coarsemom::datagen::{ColumnRecipe, DgpConfig, DgpEquation, Noise};
use coarsemom::model::{demean, Dataset, ModelSpec};
use coarsemom::{Execution, Problem};

pub fn normal_column(name: &str, sd: f64) -> ColumnRecipe {
    ColumnRecipe { name: name.into(), terms: vec![], noise: Noise::Normal { sd } }
}

/// One equation on `beta.len()` independent standard-normal regressors.
pub fn single_equation(beta: &[f64], cuts: &[f64]) -> DgpConfig {
    let names: Vec<String> = (1..=beta.len()).map(|m| format!("x{m}")).collect();
    DgpConfig {
        columns: names.iter().map(|n| normal_column(n, 1.0)).collect(),
        equations: vec![DgpEquation {
            response: "y1".into(),
            coefficients: names.iter().cloned().zip(beta.iter().copied()).collect(),
            cutpoints: cuts.to_vec(),
        }],
        error_corr: vec![vec![1.0]],
    }
}

/// Two equations sharing regressors `x1, x2` (correlated 0.4) with error correlation `rho`.
pub fn two_equations(b1: [f64; 2], b2: [f64; 2], c1: &[f64], c2: &[f64], rho: f64) -> DgpConfig {
    let eq = |r: &str, b: [f64; 2], c: &[f64]| DgpEquation {
        response: r.into(),
        coefficients: vec![("x1".into(), b[0]), ("x2".into(), b[1])],
        cutpoints: c.to_vec(),
    };
    DgpConfig {
        columns: vec![
            normal_column("x1", 1.0),
            ColumnRecipe { name: "x2".into(), terms: vec![("x1".into(), 0.4)], noise: Noise::Normal { sd: 0.9 } },
        ],
        equations: vec![eq("y1", b1, c1), eq("y2", b2, c2)],
        error_corr: vec![vec![1.0, rho], vec![rho, 1.0]],
    }
}

pub fn problem_from(cfg: &DgpConfig, n: usize, seed: u64, exec: Execution) -> (Problem, Dataset, ModelSpec) {
    let sim = coarsemom::datagen::generate(cfg, n, seed, exec).unwrap();
    let (data, _) = demean(&sim.spec, &sim.data).unwrap();
    (Problem::new(&sim.spec, &data, exec).unwrap(), sim.latent, sim.spec)
}

pub fn sample_corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
