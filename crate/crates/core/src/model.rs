//! Model specification, data tables, validation and the fitted-problem view.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::Interval;
use crate::par::Execution;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquationSpec {
    pub response: String,
    pub regressors: Vec<String>,
    /// Number of response categories `J`, coded `1..=J`.
    pub categories: usize,
}

/// A system of ordered-response equations with optional cross-equation ties.
///
/// A tie group lists `(equation index, regressor name)` pairs (0-based
/// equation indices) that share one coefficient.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub equations: Vec<EquationSpec>,
    #[serde(default)]
    pub ties: Vec<Vec<(usize, String)>>,
}

impl ModelSpec {
    /// Ties every regressor name that appears in all equations.
    pub fn tie_common(mut self) -> Self {
        let Some(first) = self.equations.first() else {
            return self;
        };
        let common: Vec<String> = first
            .regressors
            .iter()
            .filter(|r| self.equations.iter().all(|e| e.regressors.contains(r)))
            .cloned()
            .collect();
        self.ties = common
            .into_iter()
            .map(|r| (0..self.equations.len()).map(|k| (k, r.clone())).collect())
            .collect();
        self
    }

    pub fn n_equations(&self) -> usize {
        self.equations.len()
    }

    /// Maps each (equation, regressor) slot to a coefficient group.
    pub fn coef_layout(&self) -> Result<CoefLayout> {
        let mut tie_of: HashMap<(usize, &str), usize> = HashMap::new();
        for (g, tie) in self.ties.iter().enumerate() {
            if tie.len() < 2 {
                return Err(Error::Config(format!("tie group {g} has fewer than two members")));
            }
            let name = &tie[0].1;
            for (k, r) in tie {
                if r != name {
                    return Err(Error::Config(format!(
                        "tie group {g} mixes regressors '{name}' and '{r}'"
                    )));
                }
                let eq = self.equations.get(*k).ok_or_else(|| {
                    Error::Config(format!("tie group {g} refers to equation {k}, which does not exist"))
                })?;
                if !eq.regressors.contains(r) {
                    return Err(Error::Config(format!(
                        "tie group {g}: equation {k} has no regressor '{r}'"
                    )));
                }
                if tie_of.insert((*k, r.as_str()), g).is_some() {
                    return Err(Error::Config(format!(
                        "regressor '{r}' of equation {k} appears in more than one tie slot"
                    )));
                }
            }
        }
        let mut group_of_tie: HashMap<usize, usize> = HashMap::new();
        let mut slots = Vec::with_capacity(self.equations.len());
        let mut members: Vec<Vec<(usize, usize)>> = Vec::new();
        for (k, eq) in self.equations.iter().enumerate() {
            let mut row = Vec::with_capacity(eq.regressors.len());
            for (m, r) in eq.regressors.iter().enumerate() {
                let g = match tie_of.get(&(k, r.as_str())) {
                    Some(&t) => *group_of_tie.entry(t).or_insert_with(|| {
                        members.push(Vec::new());
                        members.len() - 1
                    }),
                    None => {
                        members.push(Vec::new());
                        members.len() - 1
                    }
                };
                members[g].push((k, m));
                row.push(g);
            }
            slots.push(row);
        }
        Ok(CoefLayout { slots, members })
    }
}

/// Coefficient groups numbered by first occurrence.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefLayout {
    /// `slots[k][m]` is the group of regressor `m` in equation `k`.
    pub slots: Vec<Vec<usize>>,
    /// `members[g]` lists the `(k, m)` slots sharing group `g`.
    pub members: Vec<Vec<(usize, usize)>>,
}

impl CoefLayout {
    pub fn n_groups(&self) -> usize {
        self.members.len()
    }
}

/// A column-oriented numeric table.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Config(format!(
                "{} column names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        if let Some(n) = columns.first().map(Vec::len) {
            if columns.iter().any(|c| c.len() != n) {
                return Err(Error::Config("columns have unequal lengths".into()));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for name in &names {
            if !seen.insert(name) {
                return Err(Error::Config(format!("duplicate column name '{name}'")));
            }
        }
        Ok(Dataset { names, columns })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_obs(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.column_index(name).map(|c| self.columns[c].as_slice())
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// Keeps rows where `keep(i)` is true.
    pub fn filter_rows(&self, keep: impl Fn(usize) -> bool) -> Dataset {
        let idx: Vec<usize> = (0..self.n_obs()).filter(|&i| keep(i)).collect();
        Dataset {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| idx.iter().map(|&i| c[i]).collect()).collect(),
        }
    }

    fn column_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        let c = self.column_index(name)?;
        Some(&mut self.columns[c])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NoEquations,
    NoObservations,
    BadCategoryCount { equation: usize, categories: usize },
    NoRegressors { equation: usize },
    DuplicateRegressor { equation: usize, name: String },
    MissingColumn { name: String },
    NonFinite { column: String, first_row: usize, count: usize },
    NonInteger { column: String, first_row: usize, value: f64, count: usize },
    OutOfRange { equation: usize, first_row: usize, value: f64, categories: usize, count: usize },
    EmptyCategory { equation: usize, category: usize },
    ConstantRegressor { column: String },
    Tie(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoEquations => write!(f, "model has no equations"),
            Violation::NoObservations => write!(f, "dataset has no rows"),
            Violation::BadCategoryCount { equation, categories } => {
                write!(f, "equation {equation}: needs at least 2 categories, got {categories}")
            }
            Violation::NoRegressors { equation } => write!(f, "equation {equation}: no regressors"),
            Violation::DuplicateRegressor { equation, name } => {
                write!(f, "equation {equation}: regressor '{name}' listed twice")
            }
            Violation::MissingColumn { name } => write!(f, "missing column '{name}'"),
            Violation::NonFinite { column, first_row, count } => {
                write!(f, "column '{column}': {count} non-finite value(s), first at row {first_row}")
            }
            Violation::NonInteger { column, first_row, value, count } => write!(
                f,
                "response '{column}': {count} non-integer value(s), first {value} at row {first_row}"
            ),
            Violation::OutOfRange { equation, first_row, value, categories, count } => write!(
                f,
                "equation {equation}: {count} response(s) outside 1..={categories}, first {value} at row {first_row}"
            ),
            Violation::EmptyCategory { equation, category } => {
                write!(f, "equation {equation}: category {category} is never observed")
            }
            Violation::ConstantRegressor { column } => write!(f, "regressor '{column}' is constant"),
            Violation::Tie(msg) => write!(f, "{msg}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Checks a model against a dataset and collects every problem found.
pub fn validate(spec: &ModelSpec, data: &Dataset) -> ValidationReport {
    let mut out = Vec::new();
    if spec.equations.is_empty() {
        out.push(Violation::NoEquations);
    }
    if data.n_obs() == 0 {
        out.push(Violation::NoObservations);
    }
    if let Err(e) = spec.coef_layout() {
        out.push(Violation::Tie(e.to_string().trim_start_matches("invalid configuration: ").to_string()));
    }
    let mut regressors_checked = std::collections::BTreeSet::new();
    for (k, eq) in spec.equations.iter().enumerate() {
        if eq.categories < 2 {
            out.push(Violation::BadCategoryCount { equation: k, categories: eq.categories });
        }
        if eq.regressors.is_empty() {
            out.push(Violation::NoRegressors { equation: k });
        }
        let mut seen = std::collections::HashSet::new();
        for r in &eq.regressors {
            if !seen.insert(r) {
                out.push(Violation::DuplicateRegressor { equation: k, name: r.clone() });
            }
        }
        match data.column(&eq.response) {
            None => out.push(Violation::MissingColumn { name: eq.response.clone() }),
            Some(y) => check_response(k, eq, y, &mut out),
        }
        for r in &eq.regressors {
            if !regressors_checked.insert(r.clone()) {
                continue;
            }
            match data.column(r) {
                None => out.push(Violation::MissingColumn { name: r.clone() }),
                Some(x) => {
                    if let Some(v) = non_finite(r, x) {
                        out.push(v);
                    } else if x.len() > 1 && x.iter().all(|&v| v == x[0]) {
                        out.push(Violation::ConstantRegressor { column: r.clone() });
                    }
                }
            }
        }
    }
    ValidationReport { violations: out }
}

fn non_finite(name: &str, x: &[f64]) -> Option<Violation> {
    let bad: Vec<usize> = x.iter().enumerate().filter(|(_, v)| !v.is_finite()).map(|(i, _)| i).collect();
    bad.first().map(|&first_row| Violation::NonFinite {
        column: name.to_string(),
        first_row,
        count: bad.len(),
    })
}

fn check_response(k: usize, eq: &EquationSpec, y: &[f64], out: &mut Vec<Violation>) {
    if let Some(v) = non_finite(&eq.response, y) {
        out.push(v);
        return;
    }
    let non_int: Vec<usize> = (0..y.len()).filter(|&i| y[i].fract() != 0.0).collect();
    if let Some(&first_row) = non_int.first() {
        out.push(Violation::NonInteger {
            column: eq.response.clone(),
            first_row,
            value: y[first_row],
            count: non_int.len(),
        });
        return;
    }
    let j = eq.categories as f64;
    let bad: Vec<usize> = (0..y.len()).filter(|&i| y[i] < 1.0 || y[i] > j).collect();
    if let Some(&first_row) = bad.first() {
        out.push(Violation::OutOfRange {
            equation: k,
            first_row,
            value: y[first_row],
            categories: eq.categories,
            count: bad.len(),
        });
        return;
    }
    if y.is_empty() {
        return;
    }
    let mut counts = vec![0usize; eq.categories];
    for &v in y {
        counts[v as usize - 1] += 1;
    }
    for (j, &c) in counts.iter().enumerate() {
        if c == 0 {
            out.push(Violation::EmptyCategory { equation: k, category: j + 1 });
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    // one correction pass
    m + x.iter().map(|v| v - m).sum::<f64>() / n
}

/// Subtracts the sample mean from every regressor used by `spec`.
///
/// Returns the centred data and the removed means, in first-use order.
pub fn demean(spec: &ModelSpec, data: &Dataset) -> Result<(Dataset, Vec<(String, f64)>)> {
    let mut out = data.clone();
    let mut means = Vec::new();
    for eq in &spec.equations {
        for r in &eq.regressors {
            if means.iter().any(|(n, _): &(String, f64)| n == r) {
                continue;
            }
            let col = out
                .column_mut(r)
                .ok_or_else(|| Error::Config(format!("missing column '{r}'")))?;
            let m = mean(col);
            for v in col.iter_mut() {
                *v -= m;
            }
            means.push((r.clone(), m));
        }
    }
    Ok((out, means))
}

/// Parameters of the system: coefficient groups, cut-points per equation and
/// the between-equation covariance of the generalized residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub beta: Vec<f64>,
    pub cutpoints: Vec<Vec<f64>>,
    pub between_cov: DMatrix<f64>,
}

impl ParamSet {
    /// Coefficients followed by all cut-points, equation by equation.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.beta.clone();
        for c in &self.cutpoints {
            t.extend_from_slice(c);
        }
        t
    }

    pub fn set_theta(&mut self, theta: &[f64]) {
        let p = self.beta.len();
        self.beta.copy_from_slice(&theta[..p]);
        let mut o = p;
        for c in &mut self.cutpoints {
            let n = c.len();
            c.copy_from_slice(&theta[o..o + n]);
            o += n;
        }
    }

    pub fn check_ordering(&self) -> Result<()> {
        for (k, c) in self.cutpoints.iter().enumerate() {
            if c.windows(2).any(|w| !(w[0] < w[1])) || c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Ordering { equation: k, cutpoints: c.clone() });
            }
        }
        Ok(())
    }
}

/// A validated model bound to its data, ready for estimation.
#[derive(Clone, Debug)]
pub struct Problem {
    spec: ModelSpec,
    layout: CoefLayout,
    n_obs: usize,
    /// Per equation, row-major `N × M_k` regressors.
    x: Vec<Vec<f64>>,
    /// Per equation, responses `1..=J_k`.
    y: Vec<Vec<u32>>,
    pub exec: Execution,
}

impl Problem {
    pub fn new(spec: &ModelSpec, data: &Dataset, exec: Execution) -> Result<Problem> {
        let report = validate(spec, data);
        if !report.is_ok() {
            return Err(Error::Validation(report));
        }
        let layout = spec.coef_layout()?;
        let n = data.n_obs();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for eq in &spec.equations {
            let cols: Vec<&[f64]> = eq.regressors.iter().map(|r| data.column(r).unwrap()).collect();
            let m = cols.len();
            let mut xk = vec![0.0; n * m];
            for i in 0..n {
                for (j, c) in cols.iter().enumerate() {
                    xk[i * m + j] = c[i];
                }
            }
            x.push(xk);
            y.push(data.column(&eq.response).unwrap().iter().map(|&v| v as u32).collect());
        }
        Ok(Problem { spec: spec.clone(), layout, n_obs: n, x, y, exec })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &CoefLayout {
        &self.layout
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_equations(&self) -> usize {
        self.spec.equations.len()
    }

    pub fn n_groups(&self) -> usize {
        self.layout.n_groups()
    }

    pub fn categories(&self, k: usize) -> usize {
        self.spec.equations[k].categories
    }

    pub fn n_cutpoints(&self) -> usize {
        self.spec.equations.iter().map(|e| e.categories - 1).sum()
    }

    pub fn n_params(&self) -> usize {
        self.n_groups() + self.n_cutpoints()
    }

    pub fn x_row(&self, k: usize, i: usize) -> &[f64] {
        let m = self.spec.equations[k].regressors.len();
        &self.x[k][i * m..(i + 1) * m]
    }

    pub fn response(&self, k: usize, i: usize) -> usize {
        self.y[k][i] as usize
    }

    pub fn responses(&self, k: usize) -> &[u32] {
        &self.y[k]
    }

    pub fn category_counts(&self, k: usize) -> Vec<usize> {
        let mut c = vec![0; self.categories(k)];
        for &v in &self.y[k] {
            c[v as usize - 1] += 1;
        }
        c
    }

    /// `x_ik' β_k`.
    pub fn index(&self, beta: &[f64], k: usize, i: usize) -> f64 {
        self.x_row(k, i).iter().zip(&self.layout.slots[k]).map(|(x, &g)| x * beta[g]).sum()
    }

    /// Latent interval of the observed category, `(ν_{j-1}, ν_j]`.
    pub fn observed_interval(&self, cutpoints: &[f64], k: usize, i: usize) -> Result<Interval> {
        category_interval(cutpoints, self.response(k, i))
    }

    /// The individual grid: all category intervals shifted by `-x_ik' β_k`.
    pub fn individual_grid(&self, params: &ParamSet, k: usize, i: usize) -> Result<Vec<Interval>> {
        let t = self.index(&params.beta, k, i);
        (1..=self.categories(k))
            .map(|j| Ok(category_interval(&params.cutpoints[k], j)?.shifted(t)))
            .collect()
    }

    /// A parameter set with zero coefficients, no cut-points yet and identity weights.
    pub fn zero_params(&self) -> ParamSet {
        ParamSet {
            beta: vec![0.0; self.n_groups()],
            cutpoints: (0..self.n_equations()).map(|k| vec![0.0; self.categories(k) - 1]).collect(),
            between_cov: DMatrix::identity(self.n_equations(), self.n_equations()),
        }
    }

    /// Human-readable labels for the coefficient groups followed by cut-points.
    pub fn param_labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_params());
        for members in &self.layout.members {
            let (k, m) = members[0];
            let reg = &self.spec.equations[k].regressors[m];
            if members.len() > 1 {
                out.push(format!("tied: var. {reg}"));
            } else {
                out.push(format!("Eq.{}: var. {reg}", self.spec.equations[k].response));
            }
        }
        for eq in &self.spec.equations {
            for j in 1..eq.categories {
                out.push(format!("Eq.{}: cutp. {j}", eq.response));
            }
        }
        out
    }

    /// Coefficients of equation `k` in regressor order.
    pub fn equation_beta(&self, beta: &[f64], k: usize) -> Vec<f64> {
        self.layout.slots[k].iter().map(|&g| beta[g]).collect()
    }
}

/// `(ν_{j-1}, ν_j]` with `ν_0 = -∞` and `ν_J = ∞`; `j` is 1-based.
pub fn category_interval(cutpoints: &[f64], j: usize) -> Result<Interval> {
    let lo = if j == 1 { f64::NEG_INFINITY } else { cutpoints[j - 2] };
    let hi = if j == cutpoints.len() + 1 { f64::INFINITY } else { cutpoints[j - 1] };
    Interval::new(lo, hi)
}

/// Sample shares per category, keyed by category.
pub fn category_shares(y: &[u32]) -> BTreeMap<u32, f64> {
    let mut m = BTreeMap::new();
    for &v in y {
        *m.entry(v).or_insert(0.0) += 1.0;
    }
    let n = y.len() as f64;
    m.values_mut().for_each(|v| *v /= n);
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eq(resp: &str, regs: &[&str], j: usize) -> EquationSpec {
        EquationSpec {
            response: resp.into(),
            regressors: regs.iter().map(|s| s.to_string()).collect(),
            categories: j,
        }
    }

    fn table() -> Dataset {
        Dataset::new(
            vec!["y1".into(), "y2".into(), "x1".into(), "x2".into()],
            vec![
                vec![1.0, 2.0, 1.0, 2.0],
                vec![1.0, 2.0, 3.0, 3.0],
                vec![0.5, -1.0, 2.0, 0.1],
                vec![1.0, 2.0, 3.0, 4.0],
            ],
        )
        .unwrap()
    }

    #[test]
    fn tied_groups_are_numbered_by_first_occurrence() {
        let spec = ModelSpec {
            equations: vec![eq("y1", &["x1", "x2"], 2), eq("y2", &["x2", "x1"], 3)],
            ties: vec![],
        }
        .tie_common();
        let layout = spec.coef_layout().unwrap();
        assert_eq!(layout.slots, vec![vec![0, 1], vec![1, 0]]);
        assert_eq!(layout.n_groups(), 2);
        let free = ModelSpec { ties: vec![], ..spec };
        assert_eq!(free.coef_layout().unwrap().n_groups(), 4);
    }

    #[test]
    fn bad_ties_are_rejected() {
        let spec = ModelSpec {
            equations: vec![eq("y1", &["x1"], 2), eq("y2", &["x2"], 3)],
            ties: vec![vec![(0, "x1".into()), (1, "x2".into())]],
        };
        assert!(spec.coef_layout().is_err());
        let spec = ModelSpec { ties: vec![vec![(0, "x1".into()), (5, "x1".into())]], ..spec };
        assert!(spec.coef_layout().is_err());
    }

    #[test]
    fn validation_lists_every_violation() {
        let mut data = table();
        data.columns[0][1] = 5.0;
        data.columns[2][0] = f64::NAN;
        let spec = ModelSpec {
            equations: vec![eq("y1", &["x1", "missing"], 4), eq("y2", &["x2"], 3)],
            ties: vec![],
        };
        let r = validate(&spec, &data);
        let text = r.to_string();
        assert!(r.violations.iter().any(|v| matches!(v, Violation::OutOfRange { equation: 0, first_row: 1, .. })), "{text}");
        assert!(r.violations.iter().any(|v| matches!(v, Violation::NonFinite { .. })));
        assert!(r.violations.iter().any(|v| matches!(v, Violation::MissingColumn { .. })));
    }

    #[test]
    fn empty_category_is_flagged() {
        let spec = ModelSpec { equations: vec![eq("y1", &["x1"], 3)], ties: vec![] };
        let r = validate(&spec, &table());
        assert_eq!(r.violations, vec![Violation::EmptyCategory { equation: 0, category: 3 }]);
    }

    #[test]
    fn demeaning_centres_and_is_idempotent() {
        let spec = ModelSpec { equations: vec![eq("y1", &["x1", "x2"], 2)], ties: vec![] };
        let (d1, means) = demean(&spec, &table()).unwrap();
        assert_eq!(means.len(), 2);
        assert!(mean(d1.column("x1").unwrap()).abs() < 1e-15);
        let (d2, _) = demean(&spec, &d1).unwrap();
        for (a, b) in d1.column("x2").unwrap().iter().zip(d2.column("x2").unwrap()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(d1.column("y1"), table().column("y1"));
    }

    #[test]
    fn grids_cover_the_line() {
        let spec = ModelSpec { equations: vec![eq("y2", &["x1"], 3)], ties: vec![] };
        let p = Problem::new(&spec, &table(), Execution::Sequential).unwrap();
        let mut params = p.zero_params();
        params.beta[0] = 2.0;
        params.cutpoints[0] = vec![-0.5, 0.5];
        let grid = p.individual_grid(&params, 0, 1).unwrap();
        assert_eq!(grid.len(), 3);
        assert_eq!(grid[0].lower(), f64::NEG_INFINITY);
        assert_eq!(grid[2].upper(), f64::INFINITY);
        assert!((grid[1].lower() - (-0.5 + 2.0)).abs() < 1e-15);
    }
}
