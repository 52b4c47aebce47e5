use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nearpoints::cli::{
    check_suite, default_workers, exit_code, run, with_workers, CheckLevel, Cutoff, DeltaSpec, ExperimentConfig, GridSpec,
    Mode, ReportFormat,
};
use nearpoints::Result;

#[derive(Parser)]
#[command(name = "nearpoints", version, about = "Counting rational points near homogeneous hypersurfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact (sharp) or smoothed counts on a (delta, Q) grid.
    Count(RunArgs),
    /// Exact counts along a Q grid with a log-log fit.
    Sweep(RunArgs),
    /// Legendre duality residuals on random samples.
    DualCheck(RunArgs),
    /// Stationary and non-stationary phase on the model integral.
    Oscint(RunArgs),
    /// The bootstrapping exponent sequence.
    Bootstrap(RunArgs),
    /// Convergence decisions for the power-law series.
    Series(RunArgs),
    /// Lower-bound lattice audit against exact counts.
    Audit(RunArgs),
    /// Run the invariant check suite.
    Check {
        #[arg(long, value_enum, default_value = "fast")]
        level: CheckLevel,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<f64>,
    /// `0.1`, `0.05,0.1` or `Q^-0.9`.
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<String>,
    /// `64`, `64,128` or `2^6..2^9`.
    #[arg(short = 'Q', long = "Q", alias = "q")]
    q: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_enum)]
    cutoff: Option<Cutoff>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<ReportFormat>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    lambda_ns: Option<String>,
    /// `first` or `second`.
    #[arg(long)]
    series: Option<String>,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    series_eps: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    z: Option<Vec<f64>>,
    #[arg(long)]
    q_max: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    timing: bool,
}

impl RunArgs {
    fn into_config(self, mode: Mode) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        c.mode = mode;
        if let Some(v) = self.n {
            c.surface.n = v;
        }
        if let Some(v) = self.d {
            c.surface.d = v;
        }
        if let Some(v) = &self.delta {
            c.delta = DeltaSpec::parse(v)?;
        }
        if let Some(v) = &self.q {
            c.q = GridSpec::parse(v, "Q")?;
        }
        if let Some(v) = &self.lambda {
            c.lambda = GridSpec::parse(v, "lambda")?;
        }
        if let Some(v) = &self.lambda_ns {
            c.lambda_ns = GridSpec::parse(v, "lambda_ns")?;
        }
        if let Some(v) = &self.series {
            c.series = Some(
                serde_json::from_value(serde_json::Value::String(v.clone()))
                    .map_err(|_| nearpoints::Error::InvalidParameter { name: "series", reason: format!("unknown series `{v}`") })?,
            );
        }
        c.eps = self.eps.unwrap_or(c.eps);
        c.cutoff = self.cutoff.unwrap_or(c.cutoff);
        c.workers = self.workers.or(c.workers);
        c.budget = self.budget.unwrap_or(c.budget);
        c.output = self.output.or(c.output);
        c.seed = self.seed.unwrap_or(c.seed);
        c.format = self.format.unwrap_or(c.format);
        c.t = self.t.unwrap_or(c.t);
        c.s = self.s.unwrap_or(c.s);
        c.series_eps = self.series_eps.unwrap_or(c.series_eps);
        c.z = self.z.unwrap_or(c.z);
        c.q_max = self.q_max.unwrap_or(c.q_max);
        c.samples = self.samples.unwrap_or(c.samples);
        c.timing |= self.timing;
        Ok(c)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, mode) = match cli.command {
        Command::Check { level, workers } => {
            let summary = match with_workers(workers.unwrap_or_else(default_workers), || check_suite(level)) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(exit_code(&e) as u8);
                }
            };
            print!("{}", summary.render());
            if let Some(f) = summary.first_failure() {
                eprintln!("first failing invariant: {}", f.name);
            }
            return ExitCode::from(summary.exit_code() as u8);
        }
        Command::Count(a) => (a, Mode::Count),
        Command::Sweep(a) => (a, Mode::Sweep),
        Command::DualCheck(a) => (a, Mode::DualCheck),
        Command::Oscint(a) => (a, Mode::Oscint),
        Command::Bootstrap(a) => (a, Mode::Bootstrap),
        Command::Series(a) => (a, Mode::Series),
        Command::Audit(a) => (a, Mode::Audit),
    };
    let code = match args.into_config(mode) {
        Ok(c) => run(&c),
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
