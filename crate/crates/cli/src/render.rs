//! Plain-text and CSV views of a results document.

use std::fmt::Write;

use coarsemom::io::{ParamRow, ResultsDocument};

fn opt4(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn param_table(out: &mut String, rows: &[ParamRow]) {
    let w = rows.iter().map(|r| r.label.len()).max().unwrap_or(9).max(9);
    let _ = writeln!(out, "{:<w$}  {:>10}  {:>10}  {:>9}", "Parameter", "Coeff.", "Std.err.", "z");
    for r in rows {
        let _ = writeln!(out, "{:<w$}  {:>10.4}  {:>10}  {:>9}", r.label, r.estimate, opt4(r.se), r.z.map_or("-".into(), |z| format!("{z:.2}")));
    }
}

fn matrix(out: &mut String, title: &str, names: &[String], m: &[Vec<Option<f64>>]) {
    let _ = writeln!(out, "\n{title}");
    let _ = write!(out, "{:>8}", "");
    for n in names {
        let _ = write!(out, "  {n:>8}");
    }
    out.push('\n');
    for (n, row) in names.iter().zip(m) {
        let _ = write!(out, "{n:>8}");
        for v in row {
            let _ = write!(out, "  {:>8}", opt4(*v));
        }
        out.push('\n');
    }
}

fn some(m: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
    m.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect()
}

pub fn text(doc: &ResultsDocument) -> String {
    let mut out = String::new();
    let names: Vec<String> = doc.model.equations.iter().map(|e| e.response.clone()).collect();
    let _ = writeln!(
        out,
        "{} equation(s), N = {}, {}",
        names.len(),
        doc.provenance.n_obs,
        if doc.provenance.demeaned { "regressors demeaned" } else { "regressors as given" }
    );
    let _ = writeln!(
        out,
        "{} after {} weight update(s); moment norm {:.3e}\n",
        if doc.fit.converged { "converged" } else { "NOT CONVERGED" },
        doc.fit.iterations,
        doc.fit.moment_norm
    );
    param_table(&mut out, &doc.fit.rows);
    matrix(&mut out, "Between-equation residual covariance", &names, &some(&doc.fit.between_cov));
    if let Some(l) = &doc.latent {
        let title = format!(
            "Latent error correlation (min eigenvalue {}, {})",
            opt4(l.min_eigenvalue),
            if l.positive_definite { "positive definite" } else { "NOT positive definite" }
        );
        matrix(&mut out, &title, &names, &l.matrix);
        for p in &l.pairs {
            if let Some(e) = &p.error {
                let _ = writeln!(out, "  pair ({}, {}) failed: {e}", names[p.first], names[p.second]);
            } else if let Some(r) = &p.result {
                if !r.attainable {
                    let _ = writeln!(out, "  pair ({}, {}): target {:.4} outside attainable range", names[p.first], names[p.second], r.target_between);
                }
            }
        }
    }
    if let Some(p) = &doc.polychoric {
        matrix(&mut out, "Polychoric correlation", &names, &some(&p.corr_yy));
    }
    if let Some(p) = &doc.pearson_coded {
        matrix(&mut out, "Pearson correlation of coded responses (0..J-1)", &names, &some(p));
    }
    let _ = writeln!(out, "\nR² (McKelvey–Zavoina)");
    for (n, r) in names.iter().zip(&doc.r2) {
        let _ = writeln!(out, "{n:>8}  {r:.4}");
    }
    out
}

fn csv_matrix(out: &mut String, section: &str, names: &[String], m: &[Vec<Option<f64>>]) {
    for (a, row) in m.iter().enumerate() {
        for (b, v) in row.iter().enumerate() {
            let _ = writeln!(out, "{section},{}:{},{},,", names[a], names[b], v.map_or(String::new(), |x| x.to_string()));
        }
    }
}

/// One line per value: `section,label,value,se,z`.
pub fn csv(doc: &ResultsDocument) -> String {
    let mut out = String::from("section,label,value,se,z\n");
    let names: Vec<String> = doc.model.equations.iter().map(|e| e.response.clone()).collect();
    let f = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for (section, rows) in [("param", &doc.fit.rows), ("first_stage", &doc.fit.first_stage_rows)] {
        for r in rows.iter() {
            let _ = writeln!(out, "{section},\"{}\",{},{},{}", r.label, r.estimate, f(r.se), f(r.z));
        }
    }
    csv_matrix(&mut out, "between_cov", &names, &some(&doc.fit.between_cov));
    if let Some(l) = &doc.latent {
        csv_matrix(&mut out, "latent_corr", &names, &l.matrix);
    }
    if let Some(p) = &doc.polychoric {
        csv_matrix(&mut out, "polychoric", &names, &some(&p.corr_yy));
    }
    if let Some(p) = &doc.pearson_coded {
        csv_matrix(&mut out, "pearson_coded", &names, &some(p));
    }
    for (n, r) in names.iter().zip(&doc.r2) {
        let _ = writeln!(out, "r2,{n},{r},,");
    }
    out
}
