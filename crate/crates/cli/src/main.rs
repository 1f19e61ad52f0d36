use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use phidiv::estimation::{fit_path_labelled, Metric, SolverOptions};
use phidiv::inference::BinderCentering;
use phidiv::io::{parse_number, read_dataset, LoadedData};
use phidiv::{Coefficients, Error, ScenarioConfig};

mod report;

use report::{DeffReport, FitReport};

#[derive(Parser)]
#[command(name = "phidiv", version, about = "Survey-weighted multinomial logit by pseudo minimum phi-divergence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model for one or more Cressie-Read indices.
    Fit(FitArgs),
    /// Run a simulation scenario and write the RMSE table.
    Simulate(SimulateArgs),
    /// Report the design effect and intra-cluster correlations.
    Deff(DeffArgs),
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Human,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Centering {
    StratumMean,
    None,
}

impl From<Centering> for BinderCentering {
    fn from(c: Centering) -> Self {
        match c {
            Centering::StratumMean => BinderCentering::StratumMean,
            Centering::None => BinderCentering::Uncentered,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverMetric {
    /// Information matrix H_n (Gauss-Newton).
    Information,
    /// Exact Hessian when positive definite, else H_n.
    Exact,
}

#[derive(Args)]
struct DataArgs {
    /// Cluster-level or individual-level CSV file.
    #[arg(long)]
    data: PathBuf,
    /// Category labels in order for individual-level files; the last is the reference.
    #[arg(long, value_delimiter = ',')]
    categories: Option<Vec<String>>,
    /// Centring of the Binder residuals.
    #[arg(long, value_enum, default_value = "stratum-mean")]
    binder_centering: Centering,
    #[arg(long, value_enum, default_value = "human")]
    format: Format,
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated indices; ratios such as 2/3 are exact.
    #[arg(long, default_value = "0")]
    lambda: String,
    /// Matrix used for Newton steps.
    #[arg(long, value_enum, default_value = "exact")]
    metric: SolverMetric,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

#[derive(Args)]
struct DeffArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "0")]
    lambda: String,
    /// Take the coefficients from a `fit --format csv` output instead of refitting.
    #[arg(long)]
    beta_from: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the replicate count in the config file.
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { .. } | Error::UnsupportedLambda { .. } => 1,
            Error::Parse { .. }
            | Error::InvalidData(_)
            | Error::Dimension(_)
            | Error::Separation { .. }
            | Error::Io(_)
            | Error::Csv(_) => 2,
            Error::Singular { .. } | Error::Domain(_) | Error::Precondition(_) => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Deff(a) => cmd_deff(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn parse_lambdas(text: &str) -> Result<Vec<f64>, Failure> {
    let out: Vec<f64> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_number(s).ok_or_else(|| Failure::usage(format!("--lambda: `{s}` is not a number"))))
        .collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err(Failure::usage("--lambda: no values given"));
    }
    Ok(out)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn load(args: &DataArgs) -> Result<LoadedData, Failure> {
    Ok(read_dataset(&args.data, args.categories.as_deref())?)
}

fn cmd_fit(args: FitArgs) -> Result<u8, Failure> {
    let lambdas = parse_lambdas(&args.lambda)?;
    let data = load(&args.data)?;
    let options = SolverOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        metric: match args.metric {
            SolverMetric::Information => Metric::Information,
            SolverMetric::Exact => Metric::ExactWhenDefinite,
        },
        ..SolverOptions::default()
    };
    let fits = fit_path_labelled(&data.dataset, &lambdas, &options, Some(&data.category_labels))?;
    let centering = args.data.binder_centering.into();
    let reports = fits
        .iter()
        .map(|f| FitReport::build(&data, f, centering))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = output(args.data.out.as_deref())?;
    match args.data.format {
        Format::Human => report::write_fit_human(&mut out, &data, &reports)?,
        Format::Csv => report::write_fit_csv(&mut out, &data, &reports)?,
    }
    out.flush()?;
    let failed: Vec<String> = fits
        .iter()
        .filter(|f| !f.converged)
        .map(|f| format!("{} ({:?})", f.lambda, f.stop_reason))
        .collect();
    if failed.is_empty() {
        Ok(0)
    } else {
        eprintln!("error: fit did not converge for lambda {}", failed.join(", "));
        Ok(3)
    }
}

fn cmd_deff(args: DeffArgs) -> Result<u8, Failure> {
    let lambdas = parse_lambdas(&args.lambda)?;
    let data = load(&args.data)?;
    let centering = args.data.binder_centering.into();
    let mut reports = Vec::new();
    let mut code = 0;
    match &args.beta_from {
        Some(path) => {
            for &lambda in &lambdas {
                let beta = report::read_coefficients(path, lambda, &data)?;
                reports.push(DeffReport::build(&data, lambda, &beta, centering)?);
            }
        }
        None => {
            let fits = fit_path_labelled(
                &data.dataset,
                &lambdas,
                &SolverOptions::default(),
                Some(&data.category_labels),
            )?;
            for f in &fits {
                if !f.converged {
                    eprintln!("error: fit did not converge for lambda {}", f.lambda);
                    code = 3;
                }
                reports.push(DeffReport::build(&data, f.lambda, &f.beta_hat, centering)?);
            }
        }
    }
    let mut out = output(args.data.out.as_deref())?;
    match args.data.format {
        Format::Human => report::write_deff_human(&mut out, &reports)?,
        Format::Csv => report::write_deff_csv(&mut out, &reports)?,
    }
    out.flush()?;
    Ok(code)
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8, Failure> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut config = ScenarioConfig::parse(&text)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    config.validate()?;
    let records = phidiv::run_scenario(&config)?;
    let out_path = args.out.clone().unwrap_or_else(|| PathBuf::from("results.csv"));
    let file = BufWriter::new(File::create(&out_path)?);
    phidiv::emit_results(&records, file)?;
    let failures: usize = records.iter().map(|r| r.failures).sum();
    let fits: usize = records.iter().map(|r| r.failures + r.replicates).sum();
    println!("wrote {} rows to {}", records.len(), out_path.display());
    println!("seed {} replicates {}", config.seed, config.replicates);
    println!("failed fits {failures} of {fits}");
    Ok(0)
}

/// Coefficients with the stacked layout of `data`.
pub(crate) fn coefficients_for(data: &LoadedData, values: Vec<f64>) -> Result<Coefficients, Failure> {
    Ok(Coefficients::from_vec(
        data.dataset.num_free(),
        data.dataset.num_covariates(),
        values,
    )?)
}
