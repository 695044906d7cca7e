use std::fmt;
use std::path::Path;
use std::time::Instant;

use coarsemom::datagen::{benchmark_config, generate};
use coarsemom::io::{
    self, FitSection, LatentSection, PolychoricSection, Provenance, ResultsDocument, StageTimings, SCHEMA_VERSION,
};
use coarsemom::latent_cov::{full_correlation_matrix, between_cov_curve, CovMode, MatchOptions, PairGrids};
use coarsemom::model::{demean, validate, Dataset, ModelSpec};
use coarsemom::{oracle, post, Error, Execution, FitOptions, Problem};

use crate::render;
use crate::{CovModeArg, Dgp, FitArgs, Format, GridCovArgs, LatentMode, OracleCommand, ReportArgs, SimulateArgs};

pub enum Failure {
    Usage(String),
    Core(Error),
    NotConverged(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(Error::Validation(_)) | Failure::Core(Error::Config(_)) | Failure::Core(Error::Schema { .. }) => 2,
            Failure::Core(Error::Json(_)) | Failure::Core(Error::Csv(_)) => 2,
            Failure::Core(e) if e.is_numerical() => 3,
            Failure::Core(_) => 2,
            Failure::NotConverged(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::NotConverged(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = Result<(), Failure>;

fn with_path(path: &Path, e: Error) -> Failure {
    match e {
        Error::Io(io) => Failure::Core(Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display())))),
        Error::Json(j) => Failure::Core(Error::Config(format!("{}: {j}", path.display()))),
        other => Failure::Core(other),
    }
}

pub fn simulate(a: SimulateArgs, exec: Execution) -> Outcome {
    let cfg = match (&a.dgp, &a.config) {
        (Some(Dgp::Benchmark), _) => benchmark_config(),
        (None, Some(p)) => io::read_dgp_config(p).map_err(|e| with_path(p, e))?,
        (None, None) => return Err(Failure::Usage("one of --dgp or --config is required".into())),
    };
    let sim = generate(&cfg, a.n as usize, a.seed, exec)?;
    let responses: Vec<String> = cfg.equations.iter().map(|e| e.response.clone()).collect();
    io::write_dataset(&a.out, &sim.data, &responses).map_err(|e| with_path(&a.out, e))?;
    if let Some(p) = &a.latent_out {
        io::write_dataset(p, &sim.latent, &[]).map_err(|e| with_path(p, e))?;
    }
    if let Some(p) = &a.model_out {
        io::write_model(p, &sim.spec).map_err(|e| with_path(p, e))?;
    }
    eprintln!("wrote {} rows to {}", sim.data.n_obs(), a.out.display());
    Ok(())
}

fn load(data: &Path, model: &Path, no_demean: bool) -> Result<(ModelSpec, Dataset, Vec<(String, f64)>), Failure> {
    let spec = io::read_model(model).map_err(|e| with_path(model, e))?;
    let raw = io::read_dataset(data).map_err(|e| with_path(data, e))?;
    let report = validate(&spec, &raw);
    if !report.is_ok() {
        return Err(Failure::Core(Error::Validation(report)));
    }
    if no_demean {
        return Ok((spec, raw, vec![]));
    }
    let (centred, means) = demean(&spec, &raw)?;
    Ok((spec, centred, means))
}

pub fn fit(a: FitArgs, exec: Execution) -> Outcome {
    let (spec, data, means) = load(&a.data, &a.model, a.no_demean)?;
    let problem = Problem::new(&spec, &data, exec)?;
    let mut opts = FitOptions::default();
    if let Some(m) = a.max_iter {
        opts.max_outer_iterations = m as usize;
    }
    if let Some(t) = a.tol {
        if !(t > 0.0) {
            return Err(Failure::Usage(format!("--tol must be positive, got {t}")));
        }
        opts.param_tolerance = t;
    }
    let result = coarsemom::fit(&problem, &opts)?;

    let t_lat = Instant::now();
    let match_opts = match a.latent_cov {
        LatentMode::Exact => Some(MatchOptions::exact()),
        LatentMode::Mc => Some(MatchOptions::monte_carlo(a.draws as usize, a.seed)),
        LatentMode::None => None,
    };
    let latent = match match_opts {
        Some(o) if problem.n_equations() > 1 => Some((full_correlation_matrix(&problem, &result.params, &o)?, o)),
        _ => None,
    };
    let latent_secs = t_lat.elapsed().as_secs_f64();

    let t_post = Instant::now();
    let r2 = (0..problem.n_equations())
        .map(|k| post::mckelvey_zavoina_r2(&problem, &result.params, k))
        .collect::<coarsemom::Result<Vec<f64>>>()?;
    let error_corr = match &latent {
        Some((lc, _)) if lc.positive_definite => Some(lc.matrix.clone()),
        Some(_) => None,
        None if problem.n_equations() == 1 => Some(nalgebra::DMatrix::identity(1, 1)),
        None => None,
    };
    let polychoric = match &error_corr {
        Some(m) => Some(PolychoricSection::from(&post::polychoric_matrix(&problem, &result.params, m)?)),
        None => None,
    };
    let exact_se = match &error_corr {
        Some(m) => post::exact_data_se(&problem, m).ok(),
        None => None,
    };
    let pearson = post::pearson_coded(&problem, &post::default_codes(&problem)).ok().map(|m| io::matrix_rows(&m));
    let post_secs = t_post.elapsed().as_secs_f64();

    // Cut-points are reported for the regressors as supplied, not as centred.
    let reported = coarsemom::gmm::on_data_scale(&problem, &result, &means);
    let doc = ResultsDocument {
        schema: SCHEMA_VERSION,
        provenance: Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            data_path: Some(a.data.display().to_string()),
            n_obs: problem.n_obs(),
            demeaned: !a.no_demean,
            column_means: means,
            fit_options: opts,
            execution: exec,
            seed: Some(a.seed),
        },
        model: spec,
        fit: FitSection::from_fit(&reported),
        latent: latent.as_ref().map(|(lc, o)| LatentSection::new(lc, *o)),
        polychoric,
        r2,
        pearson_coded: pearson,
        exact_data_se: exact_se,
        timings: StageTimings {
            first_stage_secs: result.timings.first_stage_secs,
            second_stage_secs: result.timings.second_stage_secs,
            covariance_secs: result.timings.covariance_secs,
            latent_cov_secs: latent_secs,
            post_secs,
        },
    };
    if let Some(p) = &a.out {
        io::write_results(p, &doc).map_err(|e| with_path(p, e))?;
    }
    print!("{}", render::text(&doc));
    if !doc.fit.converged {
        return Err(Failure::NotConverged(format!(
            "no convergence after {} iterations (moment norm {:e}); results were still written",
            doc.fit.iterations, doc.fit.moment_norm
        )));
    }
    Ok(())
}

fn parse_list(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|_| Failure::Usage(format!("'{t}' is not a number"))))
        .collect()
}

/// Named or explicit pair of grids.
pub fn parse_grid(spec: &str) -> Result<(Vec<f64>, Vec<f64>), Failure> {
    match spec {
        "left" => Ok((vec![-0.5, 0.0, 0.75], vec![-0.75, -0.5, 0.5])),
        "middle" => Ok((vec![0.0], vec![0.0])),
        "right" => Ok((vec![-1.0, 2.0], vec![-2.0, 1.0])),
        other => {
            let parts: Vec<&str> = other.split(';').collect();
            if parts.len() != 2 {
                return Err(Failure::Usage(format!(
                    "grid '{other}' must be left, middle, right or two ';'-separated cut-point lists"
                )));
            }
            let (a, b) = (parse_list(parts[0])?, parse_list(parts[1])?);
            for g in [&a, &b] {
                if g.is_empty() || g.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Failure::Usage(format!("grid '{other}': cut-points must be non-empty and ascending")));
                }
            }
            Ok((a, b))
        }
    }
}

pub fn grid_cov(a: GridCovArgs, exec: Execution) -> Outcome {
    let (c1, c2) = parse_grid(&a.grid)?;
    let rhos = parse_list(&a.rhos)?;
    if let Some(r) = rhos.iter().find(|r| !(r.abs() < 1.0)) {
        return Err(Failure::Usage(format!("correlation {r} is outside (-1, 1)")));
    }
    let grids = PairGrids::uniform(&c1, &c2, 1)?;
    let mode = match a.mode {
        CovModeArg::Exact => CovMode::Exact,
        CovModeArg::Mc => CovMode::MonteCarlo { draws_per_obs: a.n as usize, seed: a.seed },
    };
    let values = between_cov_curve(&grids, &rhos, mode, exec)?;
    let mut out = String::from("rho,rho_bar\n");
    for (r, v) in rhos.iter().zip(values) {
        out.push_str(&format!("{r},{v}\n"));
    }
    match &a.out {
        Some(p) => std::fs::write(p, &out).map_err(|e| with_path(p, e.into()))?,
        None => print!("{out}"),
    }
    Ok(())
}

pub fn report(a: ReportArgs) -> Outcome {
    let doc = io::read_results(&a.results).map_err(|e| with_path(&a.results, e))?;
    match a.format {
        Format::Text => print!("{}", render::text(&doc)),
        Format::Csv => print!("{}", render::csv(&doc)),
    }
    Ok(())
}

fn parse_pair(s: &str) -> Result<(usize, usize), Failure> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| Failure::Usage(format!("'{s}' is not a pair of equation indices"))))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [a, b] if a != b => Ok((a, b)),
        _ => Err(Failure::Usage(format!("'{s}' must name two different equations"))),
    }
}

pub fn oracle(cmd: OracleCommand, exec: Execution) -> Outcome {
    let (fit, out) = match cmd {
        OracleCommand::Op { data, model, equation, no_demean, out } => {
            let (spec, d, _) = load(&data, &model, no_demean)?;
            if equation >= spec.equations.len() {
                return Err(Failure::Usage(format!("model has no equation {equation}")));
            }
            let p = Problem::new(&spec, &d, exec)?;
            (oracle::op_ml_fit(&p, equation)?, out)
        }
        OracleCommand::Biprobit { data, model, equations, no_demean, out } => {
            let (k1, k2) = parse_pair(&equations)?;
            let (spec, d, _) = load(&data, &model, no_demean)?;
            if k1.max(k2) >= spec.equations.len() {
                return Err(Failure::Usage(format!("model has fewer than {} equations", k1.max(k2) + 1)));
            }
            let p = Problem::new(&spec, &d, exec)?;
            (oracle::biprobit_ml_fit(&p, k1, k2)?, out)
        }
    };
    let text = serde_json::to_string_pretty(&fit).map_err(|e| Failure::Core(e.into()))?;
    match out {
        Some(p) => std::fs::write(&p, text + "\n").map_err(|e| with_path(&p, e.into()))?,
        None => println!("{text}"),
    }
    if !fit.converged {
        return Err(Failure::NotConverged(format!("oracle gradient norm {:e} above 1e-6", fit.gradient_norm)));
    }
    Ok(())
}
