mod common;

use coarsemom::latent_cov::{
    between_cov_curve, between_cov_exact, full_correlation_matrix, match_rho, CovMode, MatchOptions, PairGrids,
};
use coarsemom::{fit, Execution, FitOptions};
use proptest::prelude::*;

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() < 0.05);
    v
}

fn grid_strategy() -> impl Strategy<Value = PairGrids> {
    (
        prop::collection::vec(-2.0f64..2.0, 1..5),
        prop::collection::vec(-2.0f64..2.0, 1..5),
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 12),
    )
        .prop_map(|(c1, c2, shifts)| {
            let (s1, s2): (Vec<f64>, Vec<f64>) = shifts.into_iter().unzip();
            PairGrids::with_shifts(&sorted(c1), &sorted(c2), &s1, &s2).unwrap()
        })
}

fn reflect(c: &[f64]) -> Vec<f64> {
    c.iter().rev().map(|v| -v).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn covariance_curve_is_increasing_and_shrunk(g in grid_strategy()) {
        let rhos: Vec<f64> = (-19..=19).map(|s| s as f64 / 20.0).collect();
        let f = between_cov_curve(&g, &rhos, CovMode::Exact, Execution::Sequential).unwrap();
        for w in f.windows(2) {
            prop_assert!(w[1] > w[0]);
        }
        for (r, v) in rhos.iter().zip(&f) {
            prop_assert!(v.abs() <= r.abs() + 1e-12);
        }
        prop_assert!(f[19].abs() < 1e-12);
    }
}

#[test]
fn reflecting_one_grid_flips_the_curve() {
    let (c1, c2) = ([-0.7, 0.1, 1.2], [-0.2, 0.9]);
    let g = PairGrids::uniform(&c1, &c2, 1).unwrap();
    let r = PairGrids::uniform(&c1, &reflect(&c2), 1).unwrap();
    for rho in [-0.8, -0.3, 0.25, 0.6, 0.95] {
        let a = between_cov_exact(&g, rho, Execution::Sequential).unwrap();
        let b = between_cov_exact(&r, -rho, Execution::Sequential).unwrap();
        assert!((a + b).abs() < 1e-12, "{rho}: {a} {b}");
    }
}

#[test]
fn matching_inverts_the_exact_curve() {
    let shifts: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
    let s2: Vec<f64> = shifts.iter().map(|s| 0.5 * s - 0.2).collect();
    let g = PairGrids::with_shifts(&[-0.5, 0.6], &[0.0, 0.4, 1.1], &shifts, &s2).unwrap();
    for rho in [-0.9, -0.4, 0.0, 0.3, 0.85] {
        let target = between_cov_exact(&g, rho, Execution::Sequential).unwrap();
        let m = match_rho(&g, target, &MatchOptions::exact(), Execution::Parallel).unwrap();
        assert!(m.attainable);
        assert!((m.rho_hat - rho).abs() < 1e-8, "{rho}: {}", m.rho_hat);
    }
}

#[test]
fn simulation_agrees_with_exact_curve_and_is_reproducible() {
    let g = PairGrids::uniform(&[-0.3, 0.8], &[0.2], 20_000).unwrap();
    let mode = CovMode::MonteCarlo { draws_per_obs: 10, seed: 3 };
    let rhos = [-0.6, 0.2, 0.7];
    let mc = between_cov_curve(&g, &rhos, mode, Execution::Parallel).unwrap();
    let again = between_cov_curve(&g, &rhos, mode, Execution::Sequential).unwrap();
    assert_eq!(mc, again);
    let ex = between_cov_curve(&g, &rhos, CovMode::Exact, Execution::Sequential).unwrap();
    for (a, b) in mc.iter().zip(&ex) {
        assert!((a - b).abs() < 5e-3, "{a} vs {b}");
    }
}

#[test]
fn two_equation_correlation_is_recovered() {
    for (rho, seed) in [(-0.5, 21u64), (0.0, 22), (0.6, 23)] {
        let cfg = common::two_equations([0.6, -0.3], [0.4, 0.5], &[-0.6, 0.3], &[-0.2, 0.5, 1.0], rho);
        let (p, latent, _) = common::problem_from(&cfg, 5000, seed, Execution::Parallel);
        let f = fit(&p, &FitOptions::default()).unwrap();
        assert!(f.converged);
        let lc = full_correlation_matrix(&p, &f.params, &MatchOptions::exact()).unwrap();
        let sample = common::sample_corr(latent.column("y1_error").unwrap(), latent.column("y2_error").unwrap());
        let est = lc.matrix[(0, 1)];
        assert!((est - sample).abs() < 0.06, "rho {rho}: estimated {est}, sample {sample}");
        assert!(lc.positive_definite);
    }
}
