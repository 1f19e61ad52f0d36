//! Monte Carlo harness comparing estimators across overdispersion scenarios.
//!
//! Every replicate draws `n` covariate vectors from a normal law with
//! diagonal covariance, computes the model probabilities under the true
//! coefficients, samples one count vector per cluster from the chosen
//! overdispersed family, then fits every `lambda` and estimates `rho^2` by
//! both methods. A single stratum with unit weights is used throughout.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimation::{fit_path, SolverOptions};
use crate::inference::{rho2_binder, rho2_moments, BinderCentering};
use crate::io::parse_number;
use crate::model::{link_probabilities, ClusterRecord, Coefficients, Stratum, SurveyDataset};
use crate::samplers::{Family, OverdispersionSpec};

pub const DEFAULT_LAMBDAS: [f64; 6] = [0.0, 2.0 / 3.0, 1.0, 1.5, 2.0, 2.5];
pub const DEFAULT_BETA: [f64; 12] = [-0.3, -0.1, 0.1, 0.2, 0.2, -0.2, -0.2, 0.1, -0.1, 0.3, -0.3, 0.1];
pub const DEFAULT_COVARIATE_MEAN: [f64; 4] = [1.0, -2.0, 1.0, 5.0];
pub const DEFAULT_COVARIATE_VAR: [f64; 4] = [0.0, 25.0, 25.0, 25.0];

/// A grid of simulation cells and how to run them.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub families: Vec<Family>,
    pub n_clusters: Vec<usize>,
    pub m: Vec<u64>,
    pub rho2: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub true_beta: Coefficients,
    pub covariate_mean: Vec<f64>,
    pub covariate_var: Vec<f64>,
    pub centering: BinderCentering,
    pub solver: SolverOptions,
}

impl ScenarioConfig {
    /// A single-cell configuration with the default coefficients, covariate
    /// law and index set.
    pub fn single(family: Family, n: usize, m: u64, rho2: f64, replicates: usize, seed: u64) -> Self {
        Self {
            families: vec![family],
            n_clusters: vec![n],
            m: vec![m],
            rho2: vec![rho2],
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            replicates,
            seed,
            true_beta: Coefficients::from_vec(3, 4, DEFAULT_BETA.to_vec()).expect("valid default"),
            covariate_mean: DEFAULT_COVARIATE_MEAN.to_vec(),
            covariate_var: DEFAULT_COVARIATE_VAR.to_vec(),
            centering: BinderCentering::default(),
            solver: SolverOptions::default(),
        }
    }

    /// Parses a `key = value` file; list values are comma-separated and `#`
    /// starts a comment. `family`, `n`, `m` and `rho2` are required.
    pub fn parse(text: &str) -> Result<Self> {
        let mut families = None;
        let mut n = None;
        let mut m = None;
        let mut rho2 = None;
        let mut cfg = Self::single(Family::RandomClumped, 1, 1, 0.0, 500, 1);
        let mut beta = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(&format!("line {}", i + 1), "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "family" => {
                    families = Some(
                        items(value)
                            .map(|v| Family::parse(v).ok_or_else(|| Error::config(key, format!("unknown family `{v}`"))))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "n" => n = Some(int_list(key, value)?.into_iter().map(|v| v as usize).collect::<Vec<_>>()),
                "m" => m = Some(int_list(key, value)?),
                "rho2" => rho2 = Some(real_list(key, value)?),
                "lambda" => cfg.lambdas = real_list(key, value)?,
                "replicates" => cfg.replicates = single_int(key, value)? as usize,
                "seed" => cfg.seed = single_int(key, value)?,
                "beta" => beta = Some(real_list(key, value)?),
                "covariate_mean" => cfg.covariate_mean = real_list(key, value)?,
                "covariate_var" => cfg.covariate_var = real_list(key, value)?,
                "binder_centering" => {
                    cfg.centering = match value {
                        "stratum_mean" => BinderCentering::StratumMean,
                        "none" => BinderCentering::Uncentered,
                        other => return Err(Error::config(key, format!("expected `stratum_mean` or `none`, got `{other}`"))),
                    }
                }
                other => return Err(Error::config(other, "unknown key")),
            }
        }
        cfg.families = families.ok_or_else(|| Error::config("family", "missing"))?;
        cfg.n_clusters = n.ok_or_else(|| Error::config("n", "missing"))?;
        cfg.m = m.ok_or_else(|| Error::config("m", "missing"))?;
        cfg.rho2 = rho2.ok_or_else(|| Error::config("rho2", "missing"))?;
        let k = cfg.covariate_mean.len();
        let beta = beta.unwrap_or_else(|| cfg.true_beta.as_slice().to_vec());
        if k == 0 || beta.len() % k != 0 {
            return Err(Error::config(
                "beta",
                format!("{} coefficients do not split into blocks of {k} covariates", beta.len()),
            ));
        }
        cfg.true_beta = Coefficients::from_vec(beta.len() / k, k, beta).map_err(|e| Error::config("beta", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::config("replicates", "must be >= 1"));
        }
        for (name, empty) in [
            ("family", self.families.is_empty()),
            ("n", self.n_clusters.is_empty()),
            ("m", self.m.is_empty()),
            ("rho2", self.rho2.is_empty()),
            ("lambda", self.lambdas.is_empty()),
        ] {
            if empty {
                return Err(Error::config(name, "empty grid"));
            }
        }
        if self.n_clusters.contains(&0) {
            return Err(Error::config("n", "cluster counts must be >= 1"));
        }
        if self.m.iter().any(|&m| m < 2) {
            return Err(Error::config("m", "cluster sizes must be >= 2"));
        }
        if let Some(r) = self.rho2.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::config("rho2", format!("{r} is outside [0, 1)")));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(l.is_finite() && **l > -1.0)) {
            return Err(Error::config("lambda", format!("{l} is not > -1")));
        }
        let k = self.covariate_mean.len();
        if self.covariate_var.len() != k || self.true_beta.num_covariates() != k {
            return Err(Error::config(
                "covariate_var",
                "covariate mean, variance and coefficient blocks must have one length",
            ));
        }
        if self.covariate_var.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("covariate_var", "variances must be non-negative"));
        }
        Ok(())
    }

    /// Cells in output order: family, then n, then m, then rho2.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &family in &self.families {
            for &n in &self.n_clusters {
                for &m in &self.m {
                    for &rho2 in &self.rho2 {
                        out.push(Cell { family, n, m, rho2 });
                    }
                }
            }
        }
        out
    }
}

fn items(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn real_list(key: &str, value: &str) -> Result<Vec<f64>> {
    items(value)
        .map(|v| parse_number(v).ok_or_else(|| Error::config(key, format!("`{v}` is not a number"))))
        .collect()
}

fn int_list(key: &str, value: &str) -> Result<Vec<u64>> {
    items(value)
        .map(|v| v.parse().map_err(|_| Error::config(key, format!("`{v}` is not a non-negative integer"))))
        .collect()
}

fn single_int(key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("`{value}` is not a non-negative integer")))
}

/// One point of the scenario grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub family: Family,
    pub n: usize,
    pub m: u64,
    pub rho2: f64,
}

/// Accuracy summary for one cell and one `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseRecord {
    pub family: Family,
    pub n: usize,
    pub m: u64,
    pub rho2: f64,
    pub lambda: f64,
    pub rmse_beta: f64,
    pub rmse_rho2_binder: f64,
    pub rmse_rho2_moments: f64,
    pub mean_rho2_binder: f64,
    pub mean_rho2_moments: f64,
    /// Replicates that contributed.
    pub replicates: usize,
    /// Replicates excluded because a fit or an estimator failed.
    pub failures: usize,
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    beta_sq: f64,
    binder: f64,
    moments: f64,
}

/// Generator for replicate `rep` of cell `cell`.
pub fn replicate_rng(seed: u64, cell: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((cell as u64) << 32) | rep as u64);
    rng
}

/// Draws the clustered sample of one replicate.
pub fn simulate_dataset(config: &ScenarioConfig, cell: &Cell, rng: &mut ChaCha8Rng) -> Result<SurveyDataset> {
    let normals: Vec<Normal<f64>> = config
        .covariate_mean
        .iter()
        .zip(&config.covariate_var)
        .map(|(&mu, &var)| Normal::new(mu, var.sqrt()).map_err(|e| Error::config("covariate_var", e.to_string())))
        .collect::<Result<_>>()?;
    let mut clusters = Vec::with_capacity(cell.n);
    for i in 0..cell.n {
        let x: Vec<f64> = normals.iter().map(|d| d.sample(rng)).collect();
        let pi = link_probabilities(&x, &config.true_beta)?.into_vec();
        let spec = OverdispersionSpec::new(pi, cell.rho2, cell.m, cell.family)?;
        let counts = spec.draw(rng);
        clusters.push(ClusterRecord::new(format!("{}", i + 1), 1.0, cell.m, counts, x)?);
    }
    SurveyDataset::new(vec![Stratum::new("1", clusters)])
}

fn run_replicate(config: &ScenarioConfig, cell: &Cell, cell_id: usize, rep: usize) -> Vec<Option<Outcome>> {
    let none = vec![None; config.lambdas.len()];
    let mut rng = replicate_rng(config.seed, cell_id, rep);
    let Ok(data) = simulate_dataset(config, cell, &mut rng) else {
        return none;
    };
    let Ok(fits) = fit_path(&data, &config.lambdas, &config.solver) else {
        return none;
    };
    fits.iter()
        .map(|f| {
            if !f.converged {
                return None;
            }
            let beta_sq = f
                .beta_hat
                .as_slice()
                .iter()
                .zip(config.true_beta.as_slice())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            let binder = rho2_binder(&data, 0, &f.beta_hat, config.centering).ok()?.rho2_hat;
            let moments = rho2_moments(&data, 0, &f.beta_hat).ok()?.rho2_hat;
            Some(Outcome { beta_sq, binder, moments })
        })
        .collect()
}

fn summarize(cell: &Cell, lambda: f64, outcomes: &[Option<Outcome>]) -> RmseRecord {
    let ok: Vec<&Outcome> = outcomes.iter().flatten().collect();
    let used = ok.len();
    let mean = |f: &dyn Fn(&Outcome) -> f64| {
        if used == 0 {
            f64::NAN
        } else {
            ok.iter().map(|o| f(o)).sum::<f64>() / used as f64
        }
    };
    RmseRecord {
        family: cell.family,
        n: cell.n,
        m: cell.m,
        rho2: cell.rho2,
        lambda,
        rmse_beta: mean(&|o| o.beta_sq).sqrt(),
        rmse_rho2_binder: mean(&|o| (o.binder - cell.rho2).powi(2)).sqrt(),
        rmse_rho2_moments: mean(&|o| (o.moments - cell.rho2).powi(2)).sqrt(),
        mean_rho2_binder: mean(&|o| o.binder),
        mean_rho2_moments: mean(&|o| o.moments),
        replicates: used,
        failures: outcomes.len() - used,
    }
}

/// Thread cap from `PHIDIV_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("PHIDIV_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

/// Runs every cell of the grid; records come out in cell order, then
/// `lambda` order, independent of scheduling.
pub fn run_scenario(config: &ScenarioConfig) -> Result<Vec<RmseRecord>> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::config("PHIDIV_THREADS", e.to_string()))?;
    let cells = config.cells();
    let per_cell: Vec<Vec<Vec<Option<Outcome>>>> = pool.install(|| {
        cells
            .iter()
            .enumerate()
            .map(|(id, cell)| {
                (0..config.replicates)
                    .into_par_iter()
                    .map(|rep| run_replicate(config, cell, id, rep))
                    .collect()
            })
            .collect()
    });
    let mut records = Vec::with_capacity(cells.len() * config.lambdas.len());
    for (cell, reps) in cells.iter().zip(per_cell) {
        for (l, &lambda) in config.lambdas.iter().enumerate() {
            let outcomes: Vec<Option<Outcome>> = reps.iter().map(|r| r[l]).collect();
            records.push(summarize(cell, lambda, &outcomes));
        }
    }
    Ok(records)
}

/// `%g`-style formatting with six significant digits.
pub fn format_g6(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub const RESULTS_HEADER: &str = "family,n,m,rho2,lambda,rmse_beta,rmse_rho2_binder,rmse_rho2_moments,replicates,failures";

/// Writes the results table; an empty record list is a precondition error.
pub fn emit_results<W: Write>(records: &[RmseRecord], mut out: W) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Precondition("no simulation records to write".into()));
    }
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.family.name(),
            r.n,
            r.m,
            format_g6(r.rho2),
            format_g6(r.lambda),
            format_g6(r.rmse_beta),
            format_g6(r.rmse_rho2_binder),
            format_g6(r.rmse_rho2_moments),
            r.replicates,
            r.failures
        )?;
    }
    out.flush()?;
    Ok(())
}
