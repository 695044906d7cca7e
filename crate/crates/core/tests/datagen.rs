mod common;

use coarsemom::datagen::{benchmark_config, generate, generate_benchmark, Noise};
use coarsemom::gauss::{bvn_rect_prob, Interval};
use coarsemom::model::category_interval;
use coarsemom::Execution;

// Published correlation matrix of the benchmark design at N = 10,000, lower
// triangle, ordered (latent y1..y4, x1..x4). The publication labels the two
// blocks the other way round.
const PUBLISHED: [&[f64]; 8] = [
    &[],
    &[0.8797],
    &[-0.3812, -0.2516],
    &[-0.4803, -0.3452, 0.9240],
    &[0.6278, 0.4450, -0.1164, -0.3281],
    &[0.7033, 0.6220, -0.0943, -0.2136, 0.4566],
    &[0.5598, 0.5484, -0.9312, -0.8929, 0.1250, 0.2659],
    &[-0.2500, -0.0479, 0.9196, 0.8447, -0.0921, -0.2116, -0.7871],
];

/// Largest |simulated − published| relative to its allowance.
fn max_table_gap(x3_sd: f64) -> f64 {
    let mut cfg = benchmark_config();
    cfg.columns[2].noise = Noise::Normal { sd: x3_sd };
    let sim = generate(&cfg, 1_000_000, 31, Execution::Parallel).unwrap();
    let cols: Vec<&[f64]> = ["y1_latent", "y2_latent", "y3_latent", "y4_latent"]
        .iter()
        .map(|n| sim.latent.column(n).unwrap())
        .chain(["x1", "x2", "x3", "x4"].iter().map(|n| sim.data.column(n).unwrap()))
        .collect();
    let mut gap = 0.0f64;
    for (a, row) in PUBLISHED.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            // The published entries carry their own N = 10,000 sampling error.
            let allowed = 0.01f64.max(3.0 * (1.0 - v * v) / 100.0);
            gap = gap.max((common::sample_corr(cols[a], cols[b]) - v).abs() / allowed);
        }
    }
    gap
}

#[test]
fn benchmark_correlations_match_publication() {
    let sd = max_table_gap(2.0);
    let var = max_table_gap(2f64.sqrt());
    assert!(sd <= 1.0, "largest gap is {sd} times its allowance");
    assert!(var > sd, "variance reading fits better: {var} vs {sd}");
}

#[test]
fn errors_reproduce_target_correlation() {
    let cfg = benchmark_config();
    let sim = generate(&cfg, 1_000_000, 32, Execution::Parallel).unwrap();
    let e: Vec<&[f64]> = (1..=4).map(|k| sim.latent.column(&format!("y{k}_error")).unwrap()).collect();
    for a in 0..4 {
        let m = e[a].iter().sum::<f64>() / e[a].len() as f64;
        assert!(m.abs() < 0.005);
        for b in 0..a {
            let r = common::sample_corr(e[a], e[b]);
            assert!((r - cfg.error_corr[a][b]).abs() < 0.01, "({a},{b}) {r}");
        }
    }
    // Latent means: every regressor is mean zero by construction.
    for k in 1..=4 {
        let y = sim.latent.column(&format!("y{k}_latent")).unwrap();
        let m = y.iter().sum::<f64>() / y.len() as f64;
        let sd = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
        assert!(m.abs() < 4.0 * sd / 1000.0, "y{k}: mean {m}, sd {sd}");
    }
}

#[test]
fn symmetric_design_splits_evenly() {
    let cfg = common::single_equation(&[1.0], &[0.0]);
    let sim = generate(&cfg, 200_000, 33, Execution::Parallel).unwrap();
    let y = sim.data.column("y1").unwrap();
    let share = y.iter().filter(|&&v| v == 1.0).count() as f64 / y.len() as f64;
    assert!((share - 0.5).abs() < 4.0 * 0.5 / (200_000f64).sqrt());
}

#[test]
fn null_design_is_independent_of_regressors() {
    let cfg = common::single_equation(&[0.0, 0.0], &[-0.4, 0.6]);
    let sim = generate(&cfg, 20_000, 34, Execution::Parallel).unwrap();
    let y = sim.data.column("y1").unwrap();
    for name in ["x1", "x2"] {
        let x = sim.data.column(name).unwrap();
        let mut sorted = x.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let mut table = [[0.0f64; 3]; 2];
        for (xi, yi) in x.iter().zip(y) {
            table[(*xi > median) as usize][*yi as usize - 1] += 1.0;
        }
        let n = y.len() as f64;
        let mut chi2 = 0.0;
        for r in 0..2 {
            for c in 0..3 {
                let expected = table[r].iter().sum::<f64>() * (table[0][c] + table[1][c]) / n;
                chi2 += (table[r][c] - expected).powi(2) / expected;
            }
        }
        // 1% critical value of chi-square with 2 degrees of freedom.
        assert!(chi2 < 9.2103, "{name}: {chi2}");
    }
}

#[test]
fn cell_counts_follow_bivariate_normal() {
    let (c1, c2) = ([-0.5, 0.5], [0.2, 1.1]);
    let rho = 0.55;
    let cfg = common::two_equations([0.0, 0.0], [0.0, 0.0], &c1, &c2, rho);
    let n = 100_000;
    let sim = generate(&cfg, n, 35, Execution::Parallel).unwrap();
    let (y1, y2) = (sim.data.column("y1").unwrap(), sim.data.column("y2").unwrap());
    for a in 1..=3 {
        for b in 1..=3 {
            let count = y1.iter().zip(y2).filter(|(u, v)| **u as usize == a && **v as usize == b).count();
            let p = bvn_rect_prob(category_interval(&c1, a).unwrap(), category_interval(&c2, b).unwrap(), rho).unwrap();
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((count as f64 / n as f64 - p).abs() < 3.0 * se, "cell ({a},{b})");
        }
    }
    let whole = bvn_rect_prob(Interval::whole(), Interval::whole(), rho).unwrap();
    assert!((whole - 1.0).abs() < 1e-15);
}

#[test]
fn generation_is_deterministic_across_execution_modes() {
    let a = generate_benchmark(5000, 36, Execution::Sequential).unwrap();
    let b = generate_benchmark(5000, 36, Execution::Parallel).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let c = pool.install(|| generate_benchmark(5000, 36, Execution::Parallel).unwrap());
    assert_eq!(a.data, b.data);
    assert_eq!(a.data, c.data);
    assert_eq!(a.latent, c.latent);
    let d = generate_benchmark(5000, 37, Execution::Parallel).unwrap();
    assert_ne!(a.data, d.data);
    // A shorter draw is a prefix of a longer one.
    let short = generate_benchmark(3000, 36, Execution::Parallel).unwrap();
    assert_eq!(short.data.column("x3").unwrap(), &a.data.column("x3").unwrap()[..3000]);
}

#[test]
fn invalid_configurations_are_rejected() {
    let mut cfg = benchmark_config();
    cfg.error_corr[0][1] = 0.99;
    cfg.error_corr[1][0] = 0.99;
    cfg.error_corr[0][2] = -0.99;
    cfg.error_corr[2][0] = -0.99;
    assert!(cfg.validate().is_err());
    assert!(generate(&cfg, 10, 1, Execution::Sequential).is_err());
    let mut cfg = benchmark_config();
    cfg.columns[1].terms[0].0 = "x9".into();
    assert!(cfg.validate().is_err());
    let mut cfg = benchmark_config();
    cfg.equations[1].cutpoints = vec![1.5, -1.0];
    assert!(cfg.validate().is_err());
    assert!(generate(&benchmark_config(), 0, 1, Execution::Sequential).is_err());
}
