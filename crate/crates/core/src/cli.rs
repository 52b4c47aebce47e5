//! Configuration-driven experiment runner behind the `nearpoints` binary: JSON configs, the
//! per-mode drivers, report export and the invariant check suite.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    beta_recursion, k_of_eps, ledger_build, lower_bound_audit, series_threshold, khintchine_series_test, sweep_and_fit,
    Approximation, BetaRegime, DeltaRule, Series, SweepReport, Verdict,
};
use crate::counting::{
    brute_exact, exact_count, knapp_predictor, smoothed_count, CountRequest, CountResult, SmoothSpec, CSV_HEADER,
    DEFAULT_BUDGET,
};
use crate::error::{invalid, Error, Result};
use crate::homfun::{dual_hessian_check, norm, Ball, DualSurface, HomogeneousSurface, Surface};
use crate::oscint::{linear_fit, nonstationary_decay, oscillatory_quadrature, stationary_expansion, OscillatorySpec, PhaseFunction};
use crate::weights::{
    ball_samples, detector, envelope_build, estimate_cm_norm, multi_indices, omega_partition_eval, omega_upper, BallBump,
    BumpMode, EnvelopeSpec, ProductBump, TrigBump, Weight,
};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "NEARPOINTS_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceKindName {
    Radial,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    pub kind: SurfaceKindName,
    pub n: usize,
    pub d: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Count,
    Sweep,
    DualCheck,
    Oscint,
    Bootstrap,
    Series,
    Audit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Cutoff {
    Sharp,
    Smooth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Csv,
    PlotData,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CheckLevel {
    Fast,
    Full,
}

/// A literal `δ`, a list of them, or a rule `"Q^a"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaSpec {
    Value(f64),
    List(Vec<f64>),
    Rule(String),
}

impl DeltaSpec {
    /// Parses `0.1`, `0.05,0.1,0.2` or `Q^-0.9`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('Q') {
            return Ok(DeltaSpec::Rule(s.to_string()));
        }
        let values = parse_list(s, "delta")?;
        Ok(if values.len() == 1 { DeltaSpec::Value(values[0]) } else { DeltaSpec::List(values) })
    }

    pub fn rules(&self) -> Result<Vec<DeltaRule>> {
        match self {
            DeltaSpec::Value(v) => Ok(vec![DeltaRule::Fixed(*v)]),
            DeltaSpec::List(v) if v.is_empty() => Err(invalid("delta", "empty list")),
            DeltaSpec::List(v) => Ok(v.iter().map(|&x| DeltaRule::Fixed(x)).collect()),
            DeltaSpec::Rule(r) => {
                let exp = r
                    .trim()
                    .strip_prefix("Q^")
                    .map(|e| e.trim().trim_start_matches('(').trim_end_matches(')'))
                    .ok_or_else(|| invalid("delta", format!("rule `{r}` is not of the form Q^a")))?;
                let a: f64 = exp.parse().map_err(|_| invalid("delta", format!("bad exponent in `{r}`")))?;
                if a > 0.0 {
                    return Err(invalid("delta", format!("rule `{r}` gives delta > 1")));
                }
                Ok(vec![DeltaRule::Power(a)])
            }
        }
    }
}

/// A single value, a list, or a geometric range `"2^a..2^b"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Value(f64),
    List(Vec<f64>),
    Range(String),
}

impl GridSpec {
    /// Parses `64`, `64,128` or `2^6..2^9`.
    pub fn parse(s: &str, field: &'static str) -> Result<Self> {
        let s = s.trim();
        if s.contains('^') {
            return Ok(GridSpec::Range(s.to_string()));
        }
        let values = parse_list(s, field)?;
        Ok(if values.len() == 1 { GridSpec::Value(values[0]) } else { GridSpec::List(values) })
    }

    pub fn values(&self, field: &'static str) -> Result<Vec<f64>> {
        match self {
            GridSpec::Value(v) => Ok(vec![*v]),
            GridSpec::List(v) if v.is_empty() => Err(invalid(field, "empty list")),
            GridSpec::List(v) => Ok(v.clone()),
            GridSpec::Range(r) => {
                let bad = || invalid(field, format!("`{r}` is not of the form 2^a..2^b"));
                let power = |s: &str| -> Result<i32> { s.trim().strip_prefix("2^").ok_or_else(bad)?.parse().map_err(|_| bad()) };
                let (a, b) = match r.split_once("..") {
                    Some((a, b)) => (power(a)?, power(b)?),
                    None => (power(r)?, power(r)?),
                };
                if a > b {
                    return Err(bad());
                }
                Ok((a..=b).map(|k| 2f64.powi(k)).collect())
            }
        }
    }
}

fn parse_list(s: &str, field: &'static str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| invalid(field, format!("cannot parse `{t}`"))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub surface: SurfaceConfig,
    pub mode: Mode,
    pub delta: DeltaSpec,
    #[serde(rename = "Q", alias = "q")]
    pub q: GridSpec,
    pub eps: f64,
    pub cutoff: Cutoff,
    pub workers: Option<usize>,
    pub budget: u64,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub format: ReportFormat,
    /// Highest stationary-phase order for `oscint`.
    pub t: usize,
    /// `λ` grid for the stationary model in `oscint`.
    pub lambda: GridSpec,
    /// `λ` grid for the non-stationary model in `oscint`.
    pub lambda_ns: GridSpec,
    /// Series for `series`; both when absent.
    pub series: Option<Series>,
    pub s: f64,
    /// `ε` inside the second series.
    pub series_eps: f64,
    /// Exponents `z` of `ψ(q) = q^{-z}`; a 20-point grid around the threshold when empty.
    pub z: Vec<f64>,
    pub q_max: u64,
    /// Sample count for `dual-check`.
    pub samples: usize,
    /// Write measured run times into the CSV instead of zeros.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            surface: SurfaceConfig { kind: SurfaceKindName::Radial, n: 3, d: 2.0 },
            mode: Mode::Count,
            delta: DeltaSpec::Value(0.1),
            q: GridSpec::Value(64.0),
            eps: 0.1,
            cutoff: Cutoff::Sharp,
            workers: None,
            budget: DEFAULT_BUDGET as u64,
            output: None,
            seed: 0,
            format: ReportFormat::Csv,
            t: 2,
            lambda: GridSpec::Range("2^7..2^13".into()),
            lambda_ns: GridSpec::Range("2^2..2^6".into()),
            series: None,
            s: 1.5,
            series_eps: 0.0,
            z: Vec::new(),
            q_max: 1 << 16,
            samples: 1000,
            timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.surface;
        if s.kind == SurfaceKindName::Custom {
            return Err(invalid("surface.kind", "custom surfaces are registered in code via run_with_surface"));
        }
        if s.n < 2 {
            return Err(invalid("surface.n", format!("{} must be at least 2", s.n)));
        }
        if !(s.d.is_finite() && s.d > 1.0) {
            return Err(invalid("surface.d", format!("{} must exceed 1", s.d)));
        }
        for rule in self.delta.rules()? {
            if let DeltaRule::Fixed(v) = rule {
                if !(0.0..=0.5).contains(&v) {
                    return Err(invalid("delta", format!("{v} is outside [0, 1/2]")));
                }
            }
        }
        for q in self.q.values("Q")? {
            if !(q.is_finite() && q >= 1.0) {
                return Err(invalid("Q", format!("{q} must be at least 1")));
            }
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(invalid("eps", format!("{} is outside (0, 1/2)", self.eps)));
        }
        if self.workers == Some(0) {
            return Err(invalid("workers", "must be at least 1"));
        }
        if self.budget == 0 {
            return Err(invalid("budget", "must be positive"));
        }
        if self.t > 2 {
            return Err(invalid("t", format!("{} exceeds the supported order 2", self.t)));
        }
        for (field, grid) in [("lambda", &self.lambda), ("lambda_ns", &self.lambda_ns)] {
            for l in grid.values(field)? {
                if !(l > 0.0) {
                    return Err(invalid(field, format!("{l} must be positive")));
                }
            }
        }
        if self.samples == 0 {
            return Err(invalid("samples", "must be positive"));
        }
        if let Some(parent) = self.output.as_deref().and_then(Path::parent) {
            if !parent.as_os_str().is_empty() && !parent.is_dir() {
                return Err(invalid("output", format!("directory {} does not exist", parent.display())));
            }
        }
        Ok(())
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or_else(default_workers)
    }
}

/// The worker count from [`WORKERS_ENV`], else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), message: e.to_string() }
}

/// 0 on success, 2 for validation errors, 3 when the budget runs out, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::BudgetExceeded { .. } => 3,
        Error::InvalidParameter { .. }
        | Error::BadEpsilon(_)
        | Error::BadHypothesis { .. }
        | Error::BadSlack { .. }
        | Error::Empty(_)
        | Error::NoCrossover { .. }
        | Error::OutsideDomain
        | Error::SingularPoint { .. }
        | Error::Io { .. } => 2,
        _ => 1,
    }
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid("workers", e.to_string()))?;
    Ok(pool.install(f))
}

/// Rendered output of one run: the main text and, for sweeps, the key/value fit report.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub text: String,
    pub fit: Option<String>,
}

pub fn run(config: &ExperimentConfig) -> i32 {
    report_exit(execute(config))
}

/// [`run`] on a programmatically registered surface; `config.surface` is ignored.
pub fn run_with_surface(config: &ExperimentConfig, surface: Arc<dyn Surface>) -> i32 {
    report_exit(execute_on(config, Some(surface)))
}

fn report_exit(r: Result<()>) -> i32 {
    match r {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(config: &ExperimentConfig) -> Result<()> {
    execute_on(config, None)
}

fn execute_on(config: &ExperimentConfig, surface: Option<Arc<dyn Surface>>) -> Result<()> {
    let out = match surface {
        Some(s) => {
            let mut c = config.clone();
            c.surface = SurfaceConfig { kind: SurfaceKindName::Radial, n: s.dim() + 1, d: s.degree() };
            c.validate()?;
            with_workers(c.workers(), || render_on(&c, s))??
        }
        None => render(config)?,
    };
    emit(config.output.as_deref(), &out)
}

/// Validates `config` and computes its output without writing anything.
pub fn render(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let s = &config.surface;
    let surface: Arc<dyn Surface> = Arc::new(HomogeneousSurface::radial(s.n, s.d)?);
    with_workers(config.workers(), || render_on(config, surface))?
}

fn render_on(config: &ExperimentConfig, surface: Arc<dyn Surface>) -> Result<RunOutput> {
    let plain = |text: String| RunOutput { text, fit: None };
    match config.mode {
        Mode::Count => count_mode(config, surface.as_ref()).map(plain),
        Mode::Sweep => {
            let reports = sweep_mode(config, surface.as_ref())?;
            Ok(RunOutput { text: format_report(&reports, config.format)?, fit: Some(fit_text(&reports)) })
        }
        Mode::DualCheck => dual_check_mode(config, surface).map(plain),
        Mode::Oscint => oscint_mode(config).map(plain),
        Mode::Bootstrap => bootstrap_mode(config).map(plain),
        Mode::Series => series_mode(config).map(plain),
        Mode::Audit => audit_mode(config, surface.as_ref()).map(plain),
    }
}

fn emit(path: Option<&Path>, out: &RunOutput) -> Result<()> {
    match path {
        Some(p) => {
            fs::write(p, &out.text).map_err(|e| io_error(p, e))?;
            if let Some(fit) = &out.fit {
                let fp = p.with_extension("fit");
                fs::write(&fp, fit).map_err(|e| io_error(&fp, e))?;
            }
        }
        None => {
            print!("{}", out.text);
            if let Some(fit) = &out.fit {
                for line in fit.lines() {
                    println!("# {line}");
                }
            }
        }
    }
    Ok(())
}

fn grid(config: &ExperimentConfig) -> Result<(Vec<f64>, Vec<DeltaRule>)> {
    Ok((config.q.values("Q")?, config.delta.rules()?))
}

fn count_mode(config: &ExperimentConfig, surface: &dyn Surface) -> Result<String> {
    let (qs, rules) = grid(config)?;
    let mut out = format!("{CSV_HEADER}\n");
    for &q in &qs {
        for rule in &rules {
            let req = CountRequest::new(rule.at(q), q).with_budget(config.budget as f64);
            let res = match config.cutoff {
                Cutoff::Sharp => exact_count(surface, &req)?,
                Cutoff::Smooth => smooth_majorant(surface, &req)?,
            };
            writeln!(out, "{}", res.csv_row(config.timing)).expect("string write");
        }
    }
    Ok(out)
}

/// The level-zero smoothed count with upper cut-offs; it dominates the sharp count.
fn smooth_majorant(surface: &dyn Surface, req: &CountRequest) -> Result<CountResult> {
    let omega = omega_upper();
    let b = detector(BumpMode::Upper);
    let rho = BallBump::new(vec![0.0; surface.dim()], 1.0, 1.1);
    let spec = SmoothSpec { omega: &omega, rho: &rho, b: &b, p: 1.0 };
    smoothed_count(surface, &req.clone().at_level(0), &spec)
}

fn sweep_mode(config: &ExperimentConfig, surface: &dyn Surface) -> Result<Vec<SweepReport>> {
    let (qs, rules) = grid(config)?;
    rules.into_iter().map(|r| sweep_and_fit(surface, r, &qs, config.budget as f64)).collect()
}

fn rule_label(rule: &DeltaRule) -> String {
    match rule {
        DeltaRule::Fixed(v) => format!("{v}"),
        DeltaRule::Power(a) => format!("Q^{a}"),
    }
}

fn fit_text(reports: &[SweepReport]) -> String {
    let mut out = String::new();
    for r in reports {
        writeln!(out, "rule={}", rule_label(&r.rule)).expect("string write");
        out.push_str(&r.fit_report());
    }
    out
}

/// The sweep rows as CSV in the counting schema, or as plot columns
/// `rule,regime,log_q,log_count,log_term_prob,log_term_geom`.
pub fn format_report(reports: &[SweepReport], format: ReportFormat) -> Result<String> {
    if reports.iter().all(|r| r.grid.is_empty()) {
        return Err(invalid("results", "nothing to export"));
    }
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            writeln!(out, "{CSV_HEADER}").expect("string write");
            for g in reports.iter().flat_map(|r| &r.grid) {
                writeln!(out, "{}", g.result.csv_row(false)).expect("string write");
            }
        }
        ReportFormat::PlotData => {
            writeln!(out, "rule,regime,log_q,log_count,log_term_prob,log_term_geom").expect("string write");
            for r in reports {
                for g in &r.grid {
                    let regime = serde_json::to_value(g.regime).expect("regime serializes");
                    writeln!(
                        out,
                        "{},{},{:.12e},{:.12e},{:.12e},{:.12e}",
                        rule_label(&r.rule),
                        regime.as_str().unwrap_or_default(),
                        g.q.ln(),
                        (g.count.max(1) as f64).ln(),
                        g.term_prob.ln(),
                        g.term_geom.ln()
                    )
                    .expect("string write");
                }
            }
        }
    }
    Ok(out)
}

/// Writes `path` and the fit report next to it with extension `fit`; returns both paths.
pub fn export_report(reports: &[SweepReport], format: ReportFormat, path: &Path) -> Result<Vec<PathBuf>> {
    let out = RunOutput { text: format_report(reports, format)?, fit: Some(fit_text(reports)) };
    emit(Some(path), &out)?;
    Ok(vec![path.to_path_buf(), path.with_extension("fit")])
}

/// Uniform point with `1/2 ≤ ‖x‖ ≤ 2` in `R^m`.
fn annulus_point(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = norm(&v);
        if r > 1e-3 && r <= 1.0 {
            let target = rng.gen_range(0.5..2.0);
            return v.iter().map(|x| x * target / r).collect();
        }
    }
}

/// Largest residuals of the duality identities on `samples` random points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DualityResiduals {
    pub round_trip: f64,
    pub involution: f64,
    pub hessian: f64,
    /// `|1/d + 1/d' - 1|`.
    pub degree_identity: f64,
}

pub fn duality_residuals(surface: Arc<dyn Surface>, samples: usize, seed: u64) -> Result<DualityResiduals> {
    let m = surface.dim();
    let dual = DualSurface::new(surface.clone());
    let double = DualSurface::new(Arc::new(dual.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = DualityResiduals {
        round_trip: 0.0,
        involution: 0.0,
        hessian: 0.0,
        degree_identity: (1.0 / surface.degree() + 1.0 / dual.dual_degree() - 1.0).abs(),
    };
    for _ in 0..samples {
        let x = annulus_point(&mut rng, m);
        let back = dual.invert_gradient(&surface.gradient(&x))?;
        let diff: Vec<f64> = back.iter().zip(&x).map(|(a, b)| a - b).collect();
        res.round_trip = res.round_trip.max(norm(&diff) / norm(&x));
        let fx = surface.value(&x);
        res.involution = res.involution.max((double.legendre_value(&x)? - fx).abs() / fx.abs().max(1e-300));
        res.hessian = res.hessian.max(dual_hessian_check(&dual, &x)?);
    }
    Ok(res)
}

fn dual_check_mode(config: &ExperimentConfig, surface: Arc<dyn Surface>) -> Result<String> {
    let d = surface.degree();
    let r = duality_residuals(surface, config.samples, config.seed)?;
    Ok(format!(
        "d={d}\nd_dual={}\nsamples={}\nseed={}\nround_trip={:.6e}\ninvolution={:.6e}\nhessian={:.6e}\ndegree_identity={:.6e}\n",
        d / (d - 1.0),
        config.samples,
        config.seed,
        r.round_trip,
        r.involution,
        r.hessian,
        r.degree_identity
    ))
}

/// The model integral `∫ u(x) e(λ|x|²/2) dx` over `R^m` with a normalized product bump `u`.
pub fn model_spec(m: usize, lambda: f64) -> OscillatorySpec {
    let u: Arc<dyn Weight> = Arc::new(ProductBump::new(vec![0.0; m], vec![1.0; m]).normalized());
    OscillatorySpec::new(lambda, PhaseFunction::quadratic(m), u)
}

/// Non-stationary model: the same bump against the linear phase `⟨(3/2, 0, ...), x⟩`.
pub fn nonstationary_model(m: usize) -> OscillatorySpec {
    let mut v = vec![0.0; m];
    v[0] = 1.5;
    let u: Arc<dyn Weight> = Arc::new(ProductBump::new(vec![0.0; m], vec![1.0; m]).normalized());
    OscillatorySpec::new(1.0, PhaseFunction::linear(v), u)
}

/// `(λ, |quadrature - expansion of order t|)` along `lambdas` for [`model_spec`].
pub fn stationary_errors(m: usize, t: usize, lambdas: &[f64]) -> Result<Vec<(f64, f64)>> {
    lambdas
        .iter()
        .map(|&l| {
            let spec = model_spec(m, l).with_order(t);
            let q = oscillatory_quadrature(&spec)?;
            let s = stationary_expansion(&spec, &vec![0.0; m])?;
            Ok((l, (q - s).norm()))
        })
        .collect()
}

pub fn error_slope(errors: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = errors.iter().map(|e| e.0.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.1.max(1e-300).ln()).collect();
    linear_fit(&xs, &ys).0
}

fn oscint_mode(config: &ExperimentConfig) -> Result<String> {
    let m = config.surface.n - 1;
    let lambdas = config.lambda.values("lambda")?;
    let mut out = String::from("kind,t,lambda,quadrature_re,quadrature_im,expansion_re,expansion_im,abs_error\n");
    let mut slopes = Vec::new();
    for t in 0..=config.t {
        let mut errs = Vec::new();
        for &l in &lambdas {
            let spec = model_spec(m, l).with_order(t);
            let q = oscillatory_quadrature(&spec)?;
            let s = stationary_expansion(&spec, &vec![0.0; m])?;
            let err = (q - s).norm();
            errs.push((l, err));
            writeln!(out, "stationary,{t},{l},{:.12e},{:.12e},{:.12e},{:.12e},{:.6e}", q.re, q.im, s.re, s.im, err)
                .expect("string write");
        }
        if errs.len() >= 2 {
            slopes.push(format!("slope_t{t}={:.6}", error_slope(&errs)));
        }
    }
    let ns = nonstationary_model(m);
    let lambdas = config.lambda_ns.values("lambda_ns")?;
    for &l in &lambdas {
        let q = oscillatory_quadrature(&ns.with_lambda(l))?;
        writeln!(out, "nonstationary,,{l},{:.12e},{:.12e},0,0,{:.6e}", q.re, q.im, q.norm()).expect("string write");
    }
    if lambdas.len() >= 2 {
        slopes.push(format!("slope_nonstationary={:.6}", nonstationary_decay(&ns, &lambdas)?));
    }
    for s in slopes {
        writeln!(out, "# {s}").expect("string write");
    }
    Ok(out)
}

pub fn beta_regime(n: usize, d: f64) -> BetaRegime {
    if d <= 2.0 * (n as f64 - 1.0) {
        BetaRegime::SmallD
    } else {
        BetaRegime::LargeD
    }
}

fn bootstrap_mode(config: &ExperimentConfig) -> Result<String> {
    let SurfaceConfig { n, d, .. } = config.surface;
    let regime = beta_regime(n, d);
    let seq = beta_recursion(n, d, config.eps, regime)?;
    let mut out = String::from("kappa,beta\n");
    for (kappa, beta) in &seq {
        writeln!(out, "{kappa},{beta}").expect("string write");
    }
    let label = serde_json::to_value(regime).expect("regime serializes");
    writeln!(out, "# K={}", k_of_eps(n, config.eps)).expect("string write");
    writeln!(out, "# regime={}", label.as_str().unwrap_or_default()).expect("string write");
    Ok(out)
}

/// Twenty exponents `z* + 0.05(k - 9.5)` straddling the threshold `z*`.
pub fn z_grid(threshold: f64) -> Vec<f64> {
    (0..20).map(|k| threshold + 0.05 * (k as f64 - 9.5)).collect()
}

fn series_mode(config: &ExperimentConfig) -> Result<String> {
    let SurfaceConfig { n, d, .. } = config.surface;
    let kinds = match config.series {
        Some(s) => vec![s],
        None => vec![Series::First, Series::Second],
    };
    let mut out = String::from("series,z,threshold,expected,verdict,partial_sum,tail_exponent\n");
    for kind in kinds {
        let threshold = series_threshold(kind, n, d, config.s, config.series_eps);
        let zs = if config.z.is_empty() { z_grid(threshold) } else { config.z.clone() };
        for z in zs {
            let o = khintchine_series_test(&Approximation::PowerLaw(z), kind, n, d, config.s, config.series_eps, config.q_max)?;
            let expected = if z > threshold { Verdict::Converges } else { Verdict::Diverges };
            writeln!(
                out,
                "{},{z:.6},{threshold:.6},{},{},{:.12e},{:.6}",
                json_label(&kind),
                json_label(&expected),
                json_label(&o.verdict),
                o.partial_sum,
                o.tail_exponent
            )
            .expect("string write");
        }
    }
    Ok(out)
}

fn json_label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn audit_mode(config: &ExperimentConfig, surface: &dyn Surface) -> Result<String> {
    let (qs, rules) = grid(config)?;
    let n = surface.dim() + 1;
    let mut out = String::from("delta,Q,count_lb,knapp,exact,holds,ratio\n");
    for &q in &qs {
        for rule in &rules {
            let delta = rule.at(q);
            let a = lower_bound_audit(&[surface], delta, q, config.budget as f64)?;
            let knapp = knapp_predictor(delta, q, surface.degree(), n);
            writeln!(
                out,
                "{delta},{q},{},{knapp},{},{},{:.9e}",
                a.count_lb,
                a.exact.map_or(String::new(), |v| v.to_string()),
                a.holds.map_or(String::new(), |v| v.to_string()),
                a.ratio
            )
            .expect("string write");
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------------------------
// Check suite

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct CheckSummary {
    pub outcomes: Vec<CheckOutcome>,
}

impl CheckSummary {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn first_failure(&self) -> Option<&CheckOutcome> {
        self.outcomes.iter().find(|o| !o.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for o in &self.outcomes {
            writeln!(out, "{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail).expect("string write");
        }
        out
    }

    /// 0 when every invariant holds, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    fn push(&mut self, name: &'static str, r: Result<(bool, String)>) {
        let (passed, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
        self.outcomes.push(CheckOutcome { name, passed, detail });
    }
}

pub fn check_suite(level: CheckLevel) -> CheckSummary {
    check_suite_with(level, &omega_partition_eval)
}

/// [`check_suite`] with the partition function `ω` supplied by the caller.
pub fn check_suite_with(level: CheckLevel, omega: &(dyn Fn(f64) -> f64 + Sync)) -> CheckSummary {
    let mut s = CheckSummary::default();
    s.push("partition identity", check_partition(omega));
    s.push("legendre duality", check_duality());
    s.push("envelope", check_envelope());
    s.push("dyadic ledger", check_ledger());
    if level == CheckLevel::Full {
        s.push("counting oracle", check_counting_oracle());
        s.push("parallel determinism", check_determinism());
        s.push("stationary decay", check_decay());
    }
    s
}

fn check_partition(omega: &(dyn Fn(f64) -> f64 + Sync)) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x = 2f64.powf(rng.gen_range(-20.0..20.0));
        let sum: f64 = (-24..=24).map(|j| omega(x / 2f64.powi(j))).sum();
        worst = worst.max((sum - 1.0).abs());
    }
    Ok((worst <= 1e-12, format!("max |sum - 1| = {worst:.3e}")))
}

fn check_duality() -> Result<(bool, String)> {
    let mut detail = Vec::new();
    let mut ok = true;
    for d in [2.0, 3.0, 4.0, 8.0] {
        let f: Arc<dyn Surface> = Arc::new(HomogeneousSurface::radial(3, d)?);
        let r = duality_residuals(f, 100, d as u64)?;
        let worst = r.round_trip.max(r.involution).max(r.hessian);
        ok &= worst <= 1e-6 && r.degree_identity <= 1e-15;
        detail.push(format!("d={d}: {worst:.2e}"));
    }
    Ok((ok, detail.join(", ")))
}

/// Random signed test function supported in a ball around the origin region.
pub fn random_trig_bump(rng: &mut ChaCha8Rng) -> TrigBump {
    let center = vec![rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
    let inner = rng.gen_range(0.2..0.4);
    let outer = inner + rng.gen_range(0.1..0.3);
    let modes = (0..3)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    TrigBump { bump: BallBump::new(center, inner, outer), modes }
}

/// Majorization, support and plateau of the envelope of `g` on `samples` points; returns the
/// number of violations of each.
pub fn envelope_violations(g: &dyn Weight, order: usize, samples: usize) -> Result<(usize, usize, usize)> {
    let sb = g.support();
    let eta = 0.3 * sb.radius;
    let height = estimate_cm_norm(g, order, 20_000);
    let env = envelope_build(g, &EnvelopeSpec::new(order, eta, height, 3))?;
    let alphas = multi_indices(g.dim(), order);
    let outer = Ball::new(sb.center.clone(), sb.radius + 2.0 * eta);
    let (mut major, mut support, mut plateau) = (0, 0, 0);
    for x in ball_samples(&outer, samples) {
        let r = sb.distance_from_center(&x);
        let e = env.eval(&x);
        let jet = g.taylor(&x, order);
        if alphas.iter().any(|a| jet.partial(a).abs() > e) {
            major += 1;
        }
        if r >= sb.radius + eta && e != 0.0 {
            support += 1;
        }
        if r <= sb.radius + eta / 3.0 && e != height {
            plateau += 1;
        }
    }
    Ok((major, support, plateau))
}

fn check_envelope() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut total = (0, 0, 0);
    for _ in 0..3 {
        let g = random_trig_bump(&mut rng);
        let (a, b, c) = envelope_violations(&g, 2, 2000)?;
        total = (total.0 + a, total.1 + b, total.2 + c);
    }
    Ok((total == (0, 0, 0), format!("violations majorant/support/plateau = {}/{}/{}", total.0, total.1, total.2)))
}

fn check_ledger() -> Result<(bool, String)> {
    let mut cases = 0;
    for &(delta, q) in &[(0.1, 64.0), (0.01, 1024.0), (0.3, 2f64.powi(20)), (1e-4, 256.0)] {
        for ell in 0..4u32 {
            for &eps in &[0.05, 0.1, 0.3] {
                let l = ledger_build(delta, q, eps, 3.0, 3, ell)?;
                let top = if l.r.fract() == 0.0 { l.r as i64 - 1 } else { l.r.floor() as i64 };
                let mut all: Vec<i64> = l.good.iter().chain(&l.bad).copied().collect();
                all.sort_unstable();
                let expected: Vec<i64> = (0..=top).collect();
                if all != expected || l.frak_l(1.0) > l.l || l.frak_l(1.0) > l.l_p(1.0) {
                    return Ok((false, format!("delta={delta} Q={q} ell={ell} eps={eps}")));
                }
                cases += 1;
            }
        }
    }
    Ok((true, format!("{cases} cases")))
}

fn check_counting_oracle() -> Result<(bool, String)> {
    let mut cases = 0;
    for d in [2.0, 3.0, 4.0] {
        let f = HomogeneousSurface::radial(3, d)?;
        for &delta in &[0.1234, 0.2371] {
            for &q in &[5.0, 9.0, 16.0] {
                let req = CountRequest::new(delta, q);
                let fast = exact_count(&f, &req)?.exact().unwrap_or(u64::MAX);
                let slow = brute_exact(&f, &req)?;
                if fast != slow {
                    return Ok((false, format!("d={d} delta={delta} Q={q}: {fast} vs {slow}")));
                }
                cases += 1;
            }
        }
    }
    Ok((true, format!("{cases} cases")))
}

fn check_determinism() -> Result<(bool, String)> {
    let f = HomogeneousSurface::radial(3, 2.0)?;
    let req = CountRequest::new(0.05, 48.0);
    let run = |w: usize| -> Result<(u64, f64)> {
        with_workers(w, || -> Result<(u64, f64)> {
            let e = exact_count(&f, &req)?.exact().unwrap_or(0);
            let s = smooth_majorant(&f, &req)?.value.as_f64();
            Ok((e, s))
        })?
    };
    let one = run(1)?;
    let ok = [4, 8].iter().map(|&w| run(w)).collect::<Result<Vec<_>>>()?.iter().all(|r| r.0 == one.0 && r.1.to_bits() == one.1.to_bits());
    Ok((ok, format!("exact={} smooth={:.12e}", one.0, one.1)))
}

fn check_decay() -> Result<(bool, String)> {
    let lambdas: Vec<f64> = (7..=11).map(|k| 2f64.powi(k)).collect();
    let slope = error_slope(&stationary_errors(2, 1, &lambdas)?);
    let low: Vec<f64> = (2..=6).map(|k| 2f64.powi(k)).collect();
    let ns = nonstationary_decay(&nonstationary_model(2), &low)?;
    Ok((slope <= -(1.0 + 1.0) + 0.3 && ns <= -6.0, format!("t=1 slope {slope:.3}, non-stationary slope {ns:.3}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_and_grid_parsing() {
        assert_eq!(DeltaSpec::parse("Q^-0.9").unwrap().rules().unwrap(), vec![DeltaRule::Power(-0.9)]);
        assert_eq!(DeltaSpec::parse("0.1, 0.2").unwrap().rules().unwrap().len(), 2);
        assert!(DeltaSpec::Rule("R^2".into()).rules().is_err());
        assert_eq!(GridSpec::parse("2^6..2^9", "Q").unwrap().values("Q").unwrap(), vec![64.0, 128.0, 256.0, 512.0]);
        assert_eq!(GridSpec::parse("100", "Q").unwrap().values("Q").unwrap(), vec![100.0]);
        assert!(GridSpec::Range("2^9..2^6".into()).values("Q").is_err());
    }

    #[test]
    fn config_round_trip_and_field_names() {
        let c = ExperimentConfig::from_json(r#"{"surface":{"kind":"radial","n":3,"d":2},"delta":[0.1,0.2],"Q":"2^3..2^4"}"#).unwrap();
        assert_eq!(c.q.values("Q").unwrap(), vec![8.0, 16.0]);
        let again = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(again, c);
        let err = ExperimentConfig::from_json(r#"{"delta":0.9}"#).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("`delta`"));
        assert_eq!(exit_code(&err), 2);
        assert!(ExperimentConfig::from_json(r#"{"colour":1}"#).unwrap_err().to_string().contains("colour"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::BudgetExceeded { needed: 2.0, budget: 1.0 }), 3);
        assert_eq!(exit_code(&Error::SingularHessian), 1);
    }

    #[test]
    fn z_grid_straddles() {
        let g = z_grid(0.6);
        assert_eq!(g.len(), 20);
        assert_eq!(g.iter().filter(|&&z| z > 0.6).count(), 10);
    }
}
