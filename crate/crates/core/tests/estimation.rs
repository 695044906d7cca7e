mod common;

use coarsemom::cutpoints::{cut_moment, quantile_cutpoints, solve_cutpoints};
use coarsemom::datagen::generate_benchmark;
use coarsemom::gauss::{interval_mass, trunc_mean};
use coarsemom::gmm::{beta_block, estimate_between_cov, sandwich_cov};
use coarsemom::model::{category_interval, demean, ModelSpec};
use coarsemom::residuals::{mean_moments, moment_vector, norm, MomentLayout};
use coarsemom::{fit, Error, Execution, FitOptions, FitResult, Problem};
use nalgebra::{DMatrix, SymmetricEigen};

fn benchmark_problem(n: usize, seed: u64, exec: Execution) -> Problem {
    let sim = generate_benchmark(n, seed, exec).unwrap();
    let (data, _) = demean(&sim.spec, &sim.data).unwrap();
    Problem::new(&sim.spec, &data, exec).unwrap()
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn check_invariants(p: &Problem, f: &FitResult) {
    assert!(f.converged);
    assert!(f.moment_norm <= 1e-10, "moment norm {:e}", f.moment_norm);
    assert!(norm(&mean_moments(p, &f.params).unwrap()) <= 1e-10);
    assert!(min_eigenvalue(&f.params.between_cov) > 0.0);
    let scale = f.cov.amax();
    assert!(min_eigenvalue(&f.cov) >= -1e-12 * scale);
    f.params.check_ordering().unwrap();
    // Each observation's generalized residuals average to zero over its grid.
    for i in (0..p.n_obs()).step_by(37) {
        for k in 0..p.n_equations() {
            let t = p.index(&f.params.beta, k, i);
            let mut s = 0.0;
            for j in 1..=p.categories(k) {
                let iv = category_interval(&f.params.cutpoints[k], j).unwrap();
                let sh = iv.shifted(t);
                s += interval_mass(sh.lower(), sh.upper()) * trunc_mean(iv, t).unwrap();
            }
            assert!(s.abs() <= 1e-10, "obs {i} eq {k}: {s:e}");
        }
    }
}

#[test]
fn coefficient_jacobian_matches_finite_differences() {
    let p = benchmark_problem(800, 5, Execution::Sequential);
    let cuts = quantile_cutpoints(&p).unwrap();
    let w = DMatrix::from_fn(4, 4, |a, b| if a == b { 1.3 } else { 0.2 });
    let beta: Vec<f64> = (0..p.n_groups()).map(|g| 0.3 * ((g as f64) - 7.0) / 8.0).collect();
    let (_, jac) = beta_block(&p, &beta, &cuts, &w, true).unwrap();
    let jac = jac.unwrap();
    for q in 0..beta.len() {
        let h = 1e-6;
        let mut bp = beta.clone();
        bp[q] += h;
        let mut bm = beta.clone();
        bm[q] -= h;
        let gp = beta_block(&p, &bp, &cuts, &w, false).unwrap().0;
        let gm = beta_block(&p, &bm, &cuts, &w, false).unwrap().0;
        for r in 0..beta.len() {
            let fd = (gp[r] - gm[r]) / (2.0 * h);
            assert!((fd - jac[(r, q)]).abs() < 1e-6, "({r},{q}): {fd} vs {}", jac[(r, q)]);
        }
    }
}

#[test]
fn coefficient_block_matches_full_moment_vector() {
    let p = benchmark_problem(500, 6, Execution::Sequential);
    let mut params = p.zero_params();
    params.cutpoints = quantile_cutpoints(&p).unwrap();
    params.beta.iter_mut().enumerate().for_each(|(g, b)| *b = 0.1 * g as f64 - 0.5);
    params.between_cov = DMatrix::from_fn(4, 4, |a, b| if a == b { 1.0 } else { 0.25 });
    let full = mean_moments(&p, &params).unwrap();
    let w = params.between_cov.clone().try_inverse().unwrap();
    let (g, _) = beta_block(&p, &params.beta, &params.cutpoints, &w, false).unwrap();
    for (a, b) in g.iter().zip(&full) {
        assert!((a - b).abs() < 1e-12);
    }
    let layout = MomentLayout::new(&p);
    assert_eq!(layout.dim, p.n_params());
    assert_eq!(moment_vector(&p, &params, 0).unwrap().len(), layout.dim);
}

#[test]
fn cutpoints_at_zero_coefficients_are_share_quantiles() {
    let p = benchmark_problem(1500, 7, Execution::Parallel);
    let zero = vec![0.0; p.n_groups()];
    let solved = solve_cutpoints(&p, &zero).unwrap();
    let closed = quantile_cutpoints(&p).unwrap();
    for (a, b) in solved.iter().flatten().zip(closed.iter().flatten()) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn cut_moment_is_increasing() {
    let p = benchmark_problem(600, 8, Execution::Sequential);
    let beta = vec![0.5; p.n_groups()];
    let mut prev = f64::NEG_INFINITY;
    for s in 0..40 {
        let v = cut_moment(&p, &beta, 3, 2, -4.0 + 0.2 * s as f64).unwrap();
        assert!(v > prev);
        prev = v;
    }
}

#[test]
fn benchmark_fit_satisfies_invariants() {
    let p = benchmark_problem(3000, 11, Execution::Parallel);
    let f = fit(&p, &FitOptions::default()).unwrap();
    check_invariants(&p, &f);
    assert!(f.first_stage.converged);
    let s = sandwich_cov(&p, &f.params, 1e-6).unwrap();
    assert!(min_eigenvalue(&s.score_cov) >= -1e-14);
    let between = estimate_between_cov(&p, &f.params).unwrap();
    assert!((&between - &f.params.between_cov).amax() < 1e-6);
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let p = benchmark_problem(2000, 12, Execution::Parallel);
    let opts = FitOptions { max_outer_iterations: 1, ..FitOptions::default() };
    let f = fit(&p, &opts).unwrap();
    assert!(!f.converged);
    assert_eq!(f.iterations, 1);
    assert!(f.moment_norm > 0.0);
    assert!(f.se.iter().all(|s| s.is_finite()));
}

#[test]
fn execution_mode_and_thread_count_do_not_change_results() {
    let seq = fit(&benchmark_problem(1500, 13, Execution::Sequential), &FitOptions::default()).unwrap();
    let par = fit(&benchmark_problem(1500, 13, Execution::Parallel), &FitOptions::default()).unwrap();
    assert_eq!(seq.params, par.params);
    assert_eq!(seq.se, par.se);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let three = pool.install(|| fit(&benchmark_problem(1500, 13, Execution::Parallel), &FitOptions::default()).unwrap());
    assert_eq!(seq.params, three.params);
    assert_eq!(seq.se, three.se);
}

#[test]
fn tied_coefficients_are_recovered() {
    // Two waves of one equation: same coefficients, correlated errors.
    let cfg = common::two_equations([1.0, -0.5], [1.0, -0.5], &[-0.5, 0.7], &[-0.5, 0.7], 0.6);
    let (free, _, spec) = common::problem_from(&cfg, 4000, 14, Execution::Parallel);
    let tied_spec: ModelSpec = spec.clone().tie_common();
    assert_eq!(tied_spec.coef_layout().unwrap().n_groups(), 2);
    let sim = coarsemom::datagen::generate(&cfg, 4000, 14, Execution::Parallel).unwrap();
    let (data, _) = demean(&tied_spec, &sim.data).unwrap();
    let tied = Problem::new(&tied_spec, &data, Execution::Parallel).unwrap();
    let f = fit(&tied, &FitOptions::default()).unwrap();
    check_invariants(&tied, &f);
    assert!((f.params.beta[0] - 1.0).abs() < 4.0 * f.se[0]);
    assert!((f.params.beta[1] + 0.5).abs() < 4.0 * f.se[1]);
    // Pooling two waves beats either wave alone.
    let g = fit(&free, &FitOptions::default()).unwrap();
    assert!(f.se[0] < g.se[0] && f.se[0] < g.se[2]);
}

#[test]
fn extreme_parameters_raise_degeneracy_with_location() {
    let p = benchmark_problem(200, 15, Execution::Sequential);
    let mut params = p.zero_params();
    params.cutpoints = quantile_cutpoints(&p).unwrap();
    params.beta = vec![1e4; p.n_groups()];
    match mean_moments(&p, &params) {
        Err(Error::DegenerateCell { obs, equation, .. }) => {
            assert!(obs < 200 && equation < 4);
        }
        other => panic!("expected degenerate cell, got {other:?}"),
    }
}

fn benchmark_data(n: usize, seed: u64) -> (ModelSpec, coarsemom::model::Dataset) {
    let sim = generate_benchmark(n, seed, Execution::Parallel).unwrap();
    let (data, _) = demean(&sim.spec, &sim.data).unwrap();
    (sim.spec, data)
}

#[test]
fn observation_order_does_not_matter() {
    let (spec, data) = benchmark_data(2000, 16);
    let n = data.n_obs();
    let perm: Vec<usize> = (0..n).map(|i| (i * 769 + 11) % n).collect();
    let cols = data.columns().iter().map(|c| perm.iter().map(|&i| c[i]).collect()).collect();
    let shuffled = coarsemom::model::Dataset::new(data.names().to_vec(), cols).unwrap();
    let a = fit(&Problem::new(&spec, &data, Execution::Parallel).unwrap(), &FitOptions::default()).unwrap();
    let b = fit(&Problem::new(&spec, &shuffled, Execution::Parallel).unwrap(), &FitOptions::default()).unwrap();
    for (x, y) in a.params.theta().iter().zip(b.params.theta()) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn first_stage_equals_separate_equation_fits() {
    let (spec, data) = benchmark_data(2000, 17);
    let joint = fit(&Problem::new(&spec, &data, Execution::Parallel).unwrap(), &FitOptions::default()).unwrap();
    let mut offset = 0;
    for (k, eq) in spec.equations.iter().enumerate() {
        let single = ModelSpec { equations: vec![eq.clone()], ties: vec![] };
        let p = Problem::new(&single, &data, Execution::Parallel).unwrap();
        let f = fit(&p, &FitOptions::default()).unwrap();
        let m = eq.regressors.len();
        for q in 0..m {
            assert!((f.params.beta[q] - joint.first_stage.params.beta[offset + q]).abs() < 1e-8);
            assert!((f.se[q] / joint.first_stage.se[offset + q] - 1.0).abs() < 1e-6);
        }
        for (a, b) in f.params.cutpoints[0].iter().zip(&joint.first_stage.params.cutpoints[k]) {
            assert!((a - b).abs() < 1e-8);
        }
        offset += m;
    }
}

#[test]
fn rescaling_a_regressor_rescales_its_standard_errors() {
    let (spec, data) = benchmark_data(2000, 18);
    let c = 3.0;
    let cols = data
        .names()
        .iter()
        .zip(data.columns())
        .map(|(n, col)| if n == "x1" { col.iter().map(|v| v * c).collect() } else { col.clone() })
        .collect();
    let scaled = coarsemom::model::Dataset::new(data.names().to_vec(), cols).unwrap();
    let a = fit(&Problem::new(&spec, &data, Execution::Parallel).unwrap(), &FitOptions::default()).unwrap();
    let b = fit(&Problem::new(&spec, &scaled, Execution::Parallel).unwrap(), &FitOptions::default()).unwrap();
    for (q, label) in a.labels.iter().enumerate() {
        let factor = if label.ends_with("var. x1") { 1.0 / c } else { 1.0 };
        assert!((b.se[q] / (a.se[q] * factor) - 1.0).abs() < 1e-4, "{label}: {} vs {}", b.se[q], a.se[q]);
        let est = if label.ends_with("var. x1") { a.params.theta()[q] / c } else { a.params.theta()[q] };
        assert!((b.params.theta()[q] - est).abs() < 1e-7);
    }
}

#[test]
fn data_scale_report_matches_uncentred_fit() {
    // With binary responses the cut equations force the residuals to average
    // zero, so fitting the raw regressors is the same model re-parameterized.
    let mut cfg = common::two_equations([0.7, -0.4], [0.3, 0.5], &[1.0], &[-0.6], 0.4);
    cfg.columns.push(coarsemom::datagen::ColumnRecipe {
        name: "x3".into(),
        terms: vec![("x1".into(), 0.3)],
        noise: coarsemom::datagen::Noise::Discrete { values: vec![1.0, 2.0, 3.0] },
    });
    cfg.equations[0].coefficients.push(("x3".into(), 0.6));
    cfg.equations[1].coefficients.push(("x3".into(), -0.2));
    let sim = coarsemom::datagen::generate(&cfg, 3000, 19, Execution::Parallel).unwrap();
    let (centred, means) = demean(&sim.spec, &sim.data).unwrap();
    assert!(means.iter().any(|(_, m)| *m > 1.5));
    let p = Problem::new(&sim.spec, &centred, Execution::Parallel).unwrap();
    let f = coarsemom::gmm::on_data_scale(&p, &fit(&p, &FitOptions::default()).unwrap(), &means);
    let raw = Problem::new(&sim.spec, &sim.data, Execution::Parallel).unwrap();
    let g = fit(&raw, &FitOptions::default()).unwrap();
    for q in 0..f.se.len() {
        assert!((f.params.theta()[q] - g.params.theta()[q]).abs() < 1e-7, "{}", f.labels[q]);
        assert!((f.se[q] / g.se[q] - 1.0).abs() < 1e-4, "{}: {} vs {}", f.labels[q], f.se[q], g.se[q]);
        assert!((f.first_stage.se[q] / g.first_stage.se[q] - 1.0).abs() < 1e-4);
    }
}
