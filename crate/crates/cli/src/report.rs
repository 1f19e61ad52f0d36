use std::io::Write;
use std::path::Path;

use phidiv::estimation::FitResult;
use phidiv::inference::{
    overdispersion_report, sandwich_covariance, stratum_design_effect, BinderCentering, OverdispersionEstimate,
};
use phidiv::io::LoadedData;
use phidiv::Coefficients;

use crate::{coefficients_for, Failure};

/// Per-stratum correlation estimates, or why the stratum was skipped.
pub struct StratumLine {
    pub label: String,
    pub outcome: Result<StratumEstimates, String>,
}

pub struct StratumEstimates {
    pub binder: OverdispersionEstimate,
    pub moments: OverdispersionEstimate,
    /// `nu^(h)`, the design effect of the stratum with its weights.
    pub weighted: Option<f64>,
}

fn strata_lines(data: &LoadedData, beta: &Coefficients, centering: BinderCentering) -> Result<Vec<StratumLine>, Failure> {
    let rows = overdispersion_report(&data.dataset, beta, centering)?;
    Ok(rows
        .into_iter()
        .map(|r| StratumLine {
            label: r.label,
            outcome: r.outcome.map(|(binder, moments)| StratumEstimates {
                weighted: stratum_design_effect(&data.dataset, r.stratum, beta, centering).ok(),
                binder,
                moments,
            }),
        })
        .collect())
}

pub struct FitReport {
    pub lambda: f64,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub divergence: f64,
    pub design_effect: f64,
    pub iterations: usize,
    pub converged: bool,
    pub score_inf_norm: f64,
    pub strata: Vec<StratumLine>,
}

pub fn coefficient_names(data: &LoadedData) -> Vec<String> {
    let d = data.dataset.num_free();
    data.category_labels[..d]
        .iter()
        .flat_map(|c| data.covariate_labels.iter().map(move |x| format!("{c}:{x}")))
        .collect()
}

impl FitReport {
    pub fn build(data: &LoadedData, fit: &FitResult, centering: BinderCentering) -> Result<Self, Failure> {
        let sandwich = sandwich_covariance(&data.dataset, &fit.beta_hat)?;
        Ok(Self {
            lambda: fit.lambda,
            names: coefficient_names(data),
            estimates: fit.beta_hat.as_slice().to_vec(),
            std_errors: sandwich.standard_errors(),
            divergence: fit.divergence_value,
            design_effect: sandwich.design_effect(),
            iterations: fit.iterations,
            converged: fit.converged,
            score_inf_norm: fit.score_inf_norm,
            strata: strata_lines(data, &fit.beta_hat, centering)?,
        })
    }
}

pub struct DeffReport {
    pub lambda: f64,
    pub design_effect: f64,
    pub strata: Vec<StratumLine>,
}

impl DeffReport {
    pub fn build(data: &LoadedData, lambda: f64, beta: &Coefficients, centering: BinderCentering) -> Result<Self, Failure> {
        Ok(Self {
            lambda,
            design_effect: sandwich_covariance(&data.dataset, beta)?.design_effect(),
            strata: strata_lines(data, beta, centering)?,
        })
    }
}

fn write_strata_human(out: &mut dyn Write, strata: &[StratumLine]) -> std::io::Result<()> {
    writeln!(
        out,
        "  {:<14} {:>5} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "stratum", "m", "nu_binder", "rho2_bind", "nu_mom", "rho2_mom", "nu_h"
    )?;
    for s in strata {
        match &s.outcome {
            Ok(e) => {
                let flag = if e.binder.out_of_range || e.moments.out_of_range { "  (outside [0,1])" } else { "" };
                let weighted = e.weighted.map_or("-".to_string(), |v| format!("{v:.4}"));
                writeln!(
                    out,
                    "  {:<14} {:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9}{flag}",
                    s.label, e.binder.m_h, e.binder.nu_hat, e.binder.rho2_hat, e.moments.nu_hat, e.moments.rho2_hat, weighted
                )?;
            }
            Err(reason) => writeln!(out, "  {:<14} ineligible: {reason}", s.label)?,
        }
    }
    Ok(())
}

fn write_strata_csv(w: &mut csv::Writer<&mut dyn Write>, lambda: &str, strata: &[StratumLine]) -> csv::Result<()> {
    for s in strata {
        match &s.outcome {
            Ok(e) => {
                for (q, v) in [
                    ("cluster_size", e.binder.m_h as f64),
                    ("nu_binder", e.binder.nu_hat),
                    ("rho2_binder", e.binder.rho2_hat),
                    ("nu_moments", e.moments.nu_hat),
                    ("rho2_moments", e.moments.rho2_hat),
                ] {
                    w.write_record([lambda, q, &s.label, &format!("{v:?}")])?;
                }
                if let Some(v) = e.weighted {
                    w.write_record([lambda, "nu_stratum", &s.label, &format!("{v:?}")])?;
                }
            }
            Err(reason) => w.write_record([lambda, "ineligible", &s.label, reason])?,
        }
    }
    Ok(())
}

pub fn write_fit_human(out: &mut dyn Write, data: &LoadedData, reports: &[FitReport]) -> std::io::Result<()> {
    write_mapping_human(out, data)?;
    for r in reports {
        writeln!(out)?;
        writeln!(out, "lambda = {:.4}", r.lambda)?;
        let status = if r.converged { "converged" } else { "NOT converged" };
        writeln!(
            out,
            "  {status} after {} iterations, max |score| = {:.2e}",
            r.iterations, r.score_inf_norm
        )?;
        writeln!(out, "  divergence     {:.4}", r.divergence)?;
        writeln!(out, "  design effect  {:.4}", r.design_effect)?;
        writeln!(out)?;
        writeln!(out, "  {:<16} {:>9} {:>9}", "coefficient", "estimate", "std.error")?;
        for ((n, b), s) in r.names.iter().zip(&r.estimates).zip(&r.std_errors) {
            writeln!(out, "  {n:<16} {b:>9.4} {s:>9.4}")?;
        }
        writeln!(out)?;
        write_strata_human(out, &r.strata)?;
    }
    Ok(())
}

fn write_mapping_human(out: &mut dyn Write, data: &LoadedData) -> std::io::Result<()> {
    let strata: Vec<String> = data
        .dataset
        .strata()
        .iter()
        .enumerate()
        .map(|(h, s)| format!("{}={}", h + 1, s.label()))
        .collect();
    writeln!(out, "strata: {}", strata.join(", "))?;
    writeln!(
        out,
        "categories: {} (reference {})",
        data.category_labels.join(", "),
        data.category_labels.last().map_or("", String::as_str)
    )
}

fn write_mapping_csv(w: &mut csv::Writer<&mut dyn Write>, data: &LoadedData) -> csv::Result<()> {
    for (h, s) in data.dataset.strata().iter().enumerate() {
        w.write_record(["", "stratum", s.label(), &(h + 1).to_string()])?;
        for (i, c) in s.clusters().iter().enumerate() {
            w.write_record(["", "cluster", &format!("{}/{}", s.label(), c.label()), &(i + 1).to_string()])?;
        }
    }
    for (s, c) in data.category_labels.iter().enumerate() {
        w.write_record(["", "category", c, &(s + 1).to_string()])?;
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

pub fn write_fit_csv(out: &mut dyn Write, data: &LoadedData, reports: &[FitReport]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda", "quantity", "name", "value"]).map_err(csv_err)?;
    write_mapping_csv(&mut w, data).map_err(csv_err)?;
    for r in reports {
        let l = format!("{:?}", r.lambda);
        let rows = [
            ("converged", if r.converged { "1".to_string() } else { "0".to_string() }),
            ("iterations", r.iterations.to_string()),
            ("score_inf_norm", format!("{:?}", r.score_inf_norm)),
            ("divergence", format!("{:?}", r.divergence)),
            ("design_effect", format!("{:?}", r.design_effect)),
        ];
        for (q, v) in rows {
            w.write_record([l.as_str(), q, "", &v]).map_err(csv_err)?;
        }
        for (n, b) in r.names.iter().zip(&r.estimates) {
            w.write_record([l.as_str(), "coefficient", n, &format!("{b:?}")]).map_err(csv_err)?;
        }
        for (n, s) in r.names.iter().zip(&r.std_errors) {
            w.write_record([l.as_str(), "std_error", n, &format!("{s:?}")]).map_err(csv_err)?;
        }
        write_strata_csv(&mut w, &l, &r.strata).map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_deff_human(out: &mut dyn Write, reports: &[DeffReport]) -> std::io::Result<()> {
    for (i, r) in reports.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        writeln!(out, "lambda = {:.4}", r.lambda)?;
        writeln!(out, "  design effect  {:.4}", r.design_effect)?;
        write_strata_human(out, &r.strata)?;
    }
    Ok(())
}

pub fn write_deff_csv(out: &mut dyn Write, reports: &[DeffReport]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda", "quantity", "name", "value"]).map_err(csv_err)?;
    for r in reports {
        let l = format!("{:?}", r.lambda);
        w.write_record([l.as_str(), "design_effect", "", &format!("{:?}", r.design_effect)])
            .map_err(csv_err)?;
        write_strata_csv(&mut w, &l, &r.strata).map_err(csv_err)?;
    }
    w.flush()
}

/// Reads the `coefficient` rows for `lambda` from a `fit --format csv` file.
pub fn read_coefficients(path: &Path, lambda: f64, data: &LoadedData) -> Result<Coefficients, Failure> {
    let mut rdr = csv::Reader::from_path(path).map_err(phidiv::Error::from)?;
    let names = coefficient_names(data);
    let mut values = vec![None; names.len()];
    for row in rdr.records() {
        let row = row.map_err(phidiv::Error::from)?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 4 || &row[1] != "coefficient" {
            continue;
        }
        let l: f64 = row[0].parse().map_err(|_| bad_row(line, "lambda"))?;
        if (l - lambda).abs() > 1e-12 * lambda.abs().max(1.0) {
            continue;
        }
        let idx = names
            .iter()
            .position(|n| n == &row[2])
            .ok_or_else(|| bad_row(line, "coefficient name"))?;
        values[idx] = Some(row[3].parse::<f64>().map_err(|_| bad_row(line, "value"))?);
    }
    let values: Option<Vec<f64>> = values.into_iter().collect();
    let values = values.ok_or_else(|| {
        Failure::from(phidiv::Error::InvalidData(format!(
            "{} does not hold every coefficient for lambda {lambda}",
            path.display()
        )))
    })?;
    coefficients_for(data, values)
}

fn bad_row(line: u64, what: &str) -> Failure {
    phidiv::Error::Parse {
        line,
        message: format!("unreadable {what}"),
    }
    .into()
}
