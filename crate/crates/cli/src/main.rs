//! `coagfrag`: run coagulation-fragmentation and Poisson-Dirichlet experiments.
//!
//! Exit codes: 0 when every verdict passes (or is inconclusive), 1 when any
//! verdict fails, 2 on usage or configuration errors.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coagfrag_core::exec::{stream, with_workers};
use coagfrag_core::harness::{
    self, rates_for_theta, CesaroConfig, Check, ChainFunctional, HittingConfig, IncrementConfig, InvarianceConfig,
    KernelExactnessConfig, MkConfig, MomentConfig, OneStep, PdSampler, ReversibilityConfig, SamplerComparisonConfig,
    SizeBiasedConfig, SupportConfig,
};
use coagfrag_core::pd::{sample_pd_stick, PdParams, PoissonSampler};
use coagfrag_core::{
    classify, enumerate_transitions, Execution, ExperimentReport, Functional, KernelParams, Partition, SigmaSpec,
    Verdict,
};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use config::{flags_object, resolve, sigma_flag};
use output::{stem, Format, Sink};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
    #[error(transparent)]
    Io(#[from] anyhow::Error),
}

const REPLICA_CSV: &str = "CSV columns (replica rows): replica, seed, estimate, steps.";

#[derive(Parser)]
#[command(name = "coagfrag", version, about = "Coagulation-fragmentation chains and Poisson-Dirichlet checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "coagfrag-out")]
    out: PathBuf,
    /// Output formats.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "json,csv")]
    format: Vec<Format>,
    /// Cap on worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw Poisson-Dirichlet partitions, or run a sampler check.
    #[command(after_help = "CSV columns: sample, index, part (one row per part).")]
    SamplePd(SamplePdArgs),
    /// Cesaro averages along chains started from the unit state.
    #[command(after_help = REPLICA_CSV)]
    RunChain(RunChainArgs),
    /// Support and recurrence class of a splitting measure.
    ClassifySigma(ClassifyArgs),
    /// One-step invariance of PD(theta).
    TestInvariance(InvarianceArgs),
    /// Reversibility of the chain under PD(theta).
    TestReversibility(ReversibilityArgs),
    /// Closed-form expected increments against the enumerated one-step law.
    TestIncrements(IncrementArgs),
    /// Return times to the unit state.
    #[command(after_help = "CSV columns: replica, seed, estimate (return time, empty when censored), steps.")]
    EstimateHitting(HittingArgs),
    /// Marginalization and balance identities of the densities m_k.
    CheckMk(MkArgs),
    /// Exact one-step law of a finite state, or a Monte Carlo check of it.
    Enumerate(EnumerateArgs),
}

#[derive(Args, Serialize)]
struct SamplePdArgs {
    #[arg(long)]
    theta: Option<f64>,
    /// Number of partitions.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    #[arg(long)]
    truncation: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run a statistical check instead of printing samples.
    #[arg(long, value_enum)]
    check: Option<SampleCheck>,
    /// Sample size for `--check`.
    #[arg(long)]
    samples: Option<usize>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SamplerArg {
    Stick,
    Poisson,
}

impl From<SamplerArg> for PdSampler {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Stick => PdSampler::Stick,
            SamplerArg::Poisson => PdSampler::Poisson,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SampleCheck {
    /// Two-sample KS between the stick-breaking and Poisson samplers.
    Samplers,
    /// KS of a size-biased part against m_1.
    SizeBiased,
    /// Sample means of Z_2 and Z_3 against quadrature.
    Moments,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplePdConfig {
    #[serde(default = "one")]
    theta: f64,
    #[serde(default = "one_usize")]
    n: usize,
    #[serde(default = "stick")]
    sampler: SamplerArg,
    #[serde(default = "truncation")]
    truncation: f64,
    #[serde(default = "poisson_eps")]
    eps: f64,
    seed: u64,
    #[serde(default)]
    check: Option<SampleCheck>,
    #[serde(default = "ten_thousand")]
    samples: usize,
}

#[derive(Args, Serialize)]
struct RunChainArgs {
    #[arg(long)]
    beta_m: Option<f64>,
    #[arg(long)]
    beta_s: Option<f64>,
    /// Splitting measure as JSON, e.g. '{"type":"uniform"}'.
    #[arg(long)]
    #[serde(skip)]
    sigma: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    burn_in: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Tracked functionals: norm2, part-count, min-part, or z<j> such as z3.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip)]
    functionals: Option<Vec<String>>,
    /// Absolute tolerance for the |p|_2^2 average.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Also report part counts and smallest parts along one long trajectory.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    diagnose: bool,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunChainConfig {
    #[serde(default = "one")]
    beta_m: f64,
    #[serde(default = "one")]
    beta_s: f64,
    #[serde(default = "uniform")]
    sigma: SigmaSpec,
    #[serde(default = "hundred_thousand")]
    steps: u64,
    #[serde(default)]
    burn_in: Option<u64>,
    #[serde(default = "sixteen")]
    replicas: usize,
    seed: u64,
    #[serde(default = "chain_functionals")]
    functionals: Vec<ChainFunctional>,
    #[serde(default = "cesaro_tolerance")]
    tolerance: f64,
    #[serde(default)]
    diagnose: bool,
}

#[derive(Args, Serialize)]
struct ClassifyArgs {
    #[arg(long)]
    #[serde(skip)]
    sigma: Option<String>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifyConfig {
    sigma: SigmaSpec,
}

#[derive(Args, Serialize)]
struct InvarianceArgs {
    #[arg(long)]
    theta: Option<f64>,
    /// Defaults to beta_m = min(1, 1/theta), beta_s = theta beta_m.
    #[arg(long)]
    beta_m: Option<f64>,
    #[arg(long)]
    beta_s: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    sigma: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    /// Exact kernel expectation per sample, or one simulated step.
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    /// Functionals as a JSON array, e.g. '[{"kind":"z","j":2}]'.
    #[arg(long)]
    #[serde(skip)]
    functionals: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EstimatorArg {
    KernelExpectation,
    Simulated,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InvarianceCliConfig {
    #[serde(default = "one")]
    theta: f64,
    #[serde(default)]
    beta_m: Option<f64>,
    #[serde(default)]
    beta_s: Option<f64>,
    #[serde(default = "uniform")]
    sigma: SigmaSpec,
    #[serde(default = "hundred_thousand_usize")]
    samples: usize,
    #[serde(default = "stick")]
    sampler: SamplerArg,
    #[serde(default = "kernel_expectation")]
    estimator: EstimatorArg,
    #[serde(default)]
    functionals: Option<Vec<Functional>>,
    #[serde(default = "truncation")]
    truncation: f64,
    seed: u64,
}

#[derive(Args, Serialize)]
struct ReversibilityArgs {
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    /// (F, G) pairs as JSON, e.g. '[[{"kind":"z","j":2},{"kind":"largest"}]]'.
    #[arg(long)]
    #[serde(skip)]
    pairs: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReversibilityCliConfig {
    #[serde(default = "one")]
    theta: f64,
    #[serde(default = "hundred_thousand_usize")]
    samples: usize,
    #[serde(default = "stick")]
    sampler: SamplerArg,
    #[serde(default)]
    pairs: Option<Vec<(Functional, Functional)>>,
    #[serde(default = "truncation")]
    truncation: f64,
    seed: u64,
}

#[derive(Args, Serialize)]
struct IncrementArgs {
    #[arg(long)]
    beta_m: Option<f64>,
    #[arg(long)]
    beta_s: Option<f64>,
    /// Atomic splitting measure as JSON; defaults to the point mass at 1/2.
    #[arg(long)]
    #[serde(skip)]
    sigma: Option<String>,
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    max_parts: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IncrementCliConfig {
    #[serde(default = "one")]
    beta_m: f64,
    #[serde(default = "one")]
    beta_s: f64,
    #[serde(default = "dirac_half")]
    sigma: SigmaSpec,
    #[serde(default = "hundred")]
    states: usize,
    #[serde(default = "eight")]
    max_parts: usize,
    #[serde(default = "increment_thresholds")]
    thresholds: Vec<f64>,
    #[serde(default = "z_orders")]
    z_orders: Vec<u32>,
    #[serde(default = "n_polynomials")]
    n_polynomials: Vec<Vec<u32>>,
    #[serde(default = "increment_tolerance")]
    tolerance: f64,
    seed: u64,
}

#[derive(Args, Serialize)]
struct HittingArgs {
    #[arg(long)]
    beta_m: Option<f64>,
    #[arg(long)]
    beta_s: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    sigma: Option<String>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    /// Leading fraction of replicas compared with the full set.
    #[arg(long)]
    prefix_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HittingCliConfig {
    #[serde(default = "one")]
    beta_m: f64,
    #[serde(default = "one")]
    beta_s: f64,
    #[serde(default = "dirac_half")]
    sigma: SigmaSpec,
    #[serde(default = "hundred_thousand")]
    max_steps: u64,
    #[serde(default = "ten_thousand")]
    replicas: usize,
    #[serde(default = "prefix_fraction")]
    prefix_fraction: f64,
    seed: u64,
}

#[derive(Args, Serialize)]
struct MkArgs {
    #[arg(long)]
    theta: Option<f64>,
    /// Highest order for the marginalization identity.
    #[arg(long)]
    k: Option<usize>,
    /// Highest order for the balance identity; defaults to min(k, 2).
    #[arg(long)]
    functional_k: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MkCliConfig {
    #[serde(default = "one")]
    theta: f64,
    #[serde(default = "three")]
    k: usize,
    #[serde(default)]
    functional_k: Option<usize>,
    #[serde(default = "twenty")]
    points: usize,
    #[serde(default = "nodes")]
    nodes: usize,
    #[serde(default = "mk_tolerance")]
    tolerance: f64,
    seed: u64,
}

#[derive(Args, Serialize)]
struct EnumerateArgs {
    #[arg(long)]
    beta_m: Option<f64>,
    #[arg(long)]
    beta_s: Option<f64>,
    /// Atomic splitting measure as JSON.
    #[arg(long)]
    #[serde(skip)]
    sigma: Option<String>,
    /// Nonincreasing parts as JSON, e.g. '[0.5,0.3,0.2]'.
    #[arg(long)]
    #[serde(skip)]
    state: Option<String>,
    /// Compare simulated frequencies with the enumeration on random states.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    check: bool,
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    steps_per_state: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnumerateConfig {
    #[serde(default = "one")]
    beta_m: f64,
    #[serde(default = "one")]
    beta_s: f64,
    #[serde(default = "dirac_half")]
    sigma: SigmaSpec,
    #[serde(default)]
    state: Option<Partition>,
    #[serde(default)]
    check: bool,
    #[serde(default = "hundred")]
    states: usize,
    #[serde(default = "hundred_thousand_usize")]
    steps_per_state: usize,
    #[serde(default)]
    seed: Option<u64>,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn three() -> usize {
    3
}
fn eight() -> usize {
    8
}
fn sixteen() -> usize {
    16
}
fn twenty() -> usize {
    20
}
fn hundred() -> usize {
    100
}
fn ten_thousand() -> usize {
    10_000
}
fn hundred_thousand() -> u64 {
    100_000
}
fn hundred_thousand_usize() -> usize {
    100_000
}
fn nodes() -> usize {
    coagfrag_core::quadrature::DEFAULT_NODES
}
fn stick() -> SamplerArg {
    SamplerArg::Stick
}
fn kernel_expectation() -> EstimatorArg {
    EstimatorArg::KernelExpectation
}
fn truncation() -> f64 {
    1e-8
}
fn poisson_eps() -> f64 {
    1e-6
}
fn uniform() -> SigmaSpec {
    SigmaSpec::Uniform
}
fn dirac_half() -> SigmaSpec {
    SigmaSpec::dirac(0.5)
}
fn chain_functionals() -> Vec<ChainFunctional> {
    vec![ChainFunctional::Norm2Sq, ChainFunctional::PartCount]
}
fn cesaro_tolerance() -> f64 {
    0.01
}
fn increment_thresholds() -> Vec<f64> {
    vec![0.0, 0.1, 0.3]
}
fn z_orders() -> Vec<u32> {
    vec![2, 3]
}
fn n_polynomials() -> Vec<Vec<u32>> {
    vec![vec![1, 1], vec![2], vec![0, 1, 1]]
}
fn increment_tolerance() -> f64 {
    1e-10
}
fn prefix_fraction() -> f64 {
    0.1
}
fn mk_tolerance() -> f64 {
    1e-6
}

fn parse_json_flag(name: &str, raw: &str) -> Result<Value, CliError> {
    serde_json::from_str(raw).map_err(|e| CliError::Usage(format!("--{name} is not valid JSON: {e}")))
}

fn insert_sigma(flags: &mut Map<String, Value>, sigma: &Option<String>) -> Result<(), CliError> {
    if let Some(raw) = sigma {
        flags.insert("sigma".into(), sigma_flag(raw)?);
    }
    Ok(())
}

fn parse_chain_functional(name: &str) -> Result<ChainFunctional, CliError> {
    match name {
        "norm2" => Ok(ChainFunctional::Norm2Sq),
        "part-count" => Ok(ChainFunctional::PartCount),
        "min-part" => Ok(ChainFunctional::MinPart),
        z if z.starts_with('z') => match z[1..].parse::<u32>() {
            Ok(j) if j >= 2 => Ok(ChainFunctional::Z { j }),
            _ => Err(CliError::Usage(format!("unknown functional {name:?}; z<j> needs j >= 2"))),
        },
        _ => Err(CliError::Usage(format!("unknown functional {name:?}"))),
    }
}

/// Validates a resolved splitting measure, naming the offending field.
fn checked_sigma(sigma: &SigmaSpec) -> Result<(), CliError> {
    sigma.validate().map_err(|e| CliError::Usage(format!("invalid sigma: {e}")))
}

fn rates(beta_m: f64, beta_s: f64) -> Result<KernelParams, CliError> {
    KernelParams::new(beta_m, beta_s).map_err(|e| CliError::Usage(e.to_string()))
}

fn pd_params(theta: f64, truncation: f64, eps: f64) -> Result<PdParams, CliError> {
    let pd = PdParams { theta, truncation, poisson_eps: eps };
    pd.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(pd)
}

struct Run {
    reports: Vec<ExperimentReport>,
}

impl Run {
    fn verdict(&self) -> Verdict {
        if self.reports.iter().any(|r| r.verdict == Verdict::Fail) {
            Verdict::Fail
        } else {
            Verdict::Pass
        }
    }
}

/// Writes reports with the config echo, prints them to stdout and a summary
/// to stderr.
fn emit<C: Serialize>(sink: &Sink, run: &Run, theta: Option<f64>, tag: &str, config: &C) -> Result<(), CliError> {
    for report in &run.reports {
        let mut paths = sink.report(report, theta, tag)?;
        paths.push(sink.echo(&stem(&report.name, theta, tag, Some(report.seed)), config)?);
        println!("{}", report.to_json());
        eprintln!("{}: {:?} in {:.2}s", report.name, report.verdict, report.wall_clock.as_secs_f64());
        for s in &report.statistics {
            let outcome = match s.check {
                Check::Diagnostic => "Info".to_string(),
                _ => format!("{:?}", s.outcome),
            };
            eprintln!("  {outcome} {} = {:.6e} (SE {:.2e})", s.name, s.estimate, s.std_error);
        }
        for p in paths {
            eprintln!("  wrote {}", p.display());
        }
    }
    Ok(())
}

fn timed<F: FnOnce() -> Result<ExperimentReport, harness::HarnessError>>(f: F) -> Result<ExperimentReport, CliError> {
    let start = Instant::now();
    let mut report = f()?;
    report.wall_clock = start.elapsed();
    Ok(report)
}

fn sink(common: &Common) -> Sink {
    Sink { dir: common.out.clone(), formats: common.format.clone() }
}

#[derive(Serialize)]
struct PartRow {
    sample: usize,
    index: usize,
    part: f64,
}

fn sample_pd(args: &SamplePdArgs) -> Result<ExitCode, CliError> {
    let cfg: SamplePdConfig = resolve(args.common.config.as_deref(), flags_object(args))?;
    if cfg.n == 0 || cfg.samples == 0 {
        return Err(CliError::Usage("n and samples must be positive".into()));
    }
    let pd = pd_params(cfg.theta, cfg.truncation, cfg.eps)?;
    let sink = sink(&args.common);
    let tag = match cfg.sampler {
        SamplerArg::Stick => "stick",
        SamplerArg::Poisson => "poisson",
    };
    let sampler = PdSampler::from(cfg.sampler);

    if let Some(check) = cfg.check {
        let report = match check {
            SampleCheck::Samplers => {
                let c = SamplerComparisonConfig { pd, samples: cfg.samples, seed: cfg.seed, significance: 0.01 };
                timed(|| harness::compare_samplers(&c, Execution::Parallel))?
            }
            SampleCheck::SizeBiased => {
                let c = SizeBiasedConfig { pd, sampler, samples: cfg.samples, seed: cfg.seed, significance: 0.01 };
                timed(|| harness::test_size_biased_uniform(&c, Execution::Parallel))?
            }
            SampleCheck::Moments => {
                let c = MomentConfig { pd, sampler, orders: vec![2, 3], samples: cfg.samples, seed: cfg.seed };
                timed(|| harness::test_moment_identity(&c, Execution::Parallel))?
            }
        };
        let run = Run { reports: vec![report] };
        emit(&sink, &run, Some(cfg.theta), tag, &cfg)?;
        return Ok(exit_for(run.verdict()));
    }

    let poisson = match sampler {
        PdSampler::Poisson => Some(PoissonSampler::new(&pd).map_err(|e| CliError::Usage(e.to_string()))?),
        PdSampler::Stick => None,
    };
    let samples: Vec<Partition> = (0..cfg.n)
        .map(|i| {
            let mut rng = stream(cfg.seed, i as u64);
            match &poisson {
                Some(s) => s.sample(&mut rng),
                None => sample_pd_stick(&pd, &mut rng),
            }
        })
        .collect();
    for p in &samples {
        println!("{}", serde_json::to_string(p).expect("partitions serialize"));
    }
    let rows: Vec<PartRow> = samples
        .iter()
        .enumerate()
        .flat_map(|(sample, p)| p.parts().iter().enumerate().map(move |(index, &part)| PartRow { sample, index, part }))
        .collect();
    let name = stem("sample-pd", Some(cfg.theta), tag, Some(cfg.seed));
    sink.echo(&name, &cfg)?;
    sink.json(&name, &samples)?;
    sink.rows(&name, &rows)?;
    Ok(ExitCode::SUCCESS)
}

fn run_chain(args: &RunChainArgs) -> Result<ExitCode, CliError> {
    let mut flags = flags_object(args);
    insert_sigma(&mut flags, &args.sigma)?;
    if let Some(names) = &args.functionals {
        let fs = names.iter().map(|n| parse_chain_functional(n)).collect::<Result<Vec<_>, _>>()?;
        flags.insert("functionals".into(), serde_json::to_value(fs).expect("functionals serialize"));
    }
    let cfg: RunChainConfig = resolve(args.common.config.as_deref(), flags)?;
    checked_sigma(&cfg.sigma)?;
    let params = rates(cfg.beta_m, cfg.beta_s)?;
    let mut cesaro = CesaroConfig::new(params, cfg.sigma.clone(), cfg.steps, cfg.replicas, cfg.seed);
    if let Some(b) = cfg.burn_in {
        cesaro.burn_in = b;
    }
    cesaro.functionals = cfg.functionals.clone();
    cesaro.tolerance = cfg.tolerance;

    let theta = params.theta();
    let tag = cfg.sigma.tag();
    let sink = sink(&args.common);
    let mut reports = vec![timed(|| harness::run_cesaro(&cesaro, Execution::Parallel))?];
    if cfg.diagnose {
        let support = SupportConfig::new(params, cfg.sigma.clone(), cfg.steps, cfg.seed);
        reports.push(timed(|| harness::diagnose_support(&support))?);
    }
    let run = Run { reports };
    emit(&sink, &run, Some(theta), &tag, &cfg)?;
    Ok(exit_for(run.verdict()))
}

fn classify_sigma(args: &ClassifyArgs) -> Result<ExitCode, CliError> {
    let mut flags = Map::new();
    insert_sigma(&mut flags, &args.sigma)?;
    let cfg: ClassifyConfig = resolve(args.common.config.as_deref(), flags)?;
    checked_sigma(&cfg.sigma)?;
    let class = classify(&cfg.sigma);
    println!("{}", serde_json::to_string(&class).expect("classifications serialize"));
    let sink = sink(&args.common);
    let name = stem("classify-sigma", None, &cfg.sigma.tag(), None);
    sink.echo(&name, &cfg)?;
    sink.json(&name, &class)?;
    Ok(ExitCode::SUCCESS)
}

fn test_invariance(args: &InvarianceArgs) -> Result<ExitCode, CliError> {
    let mut flags = flags_object(args);
    insert_sigma(&mut flags, &args.sigma)?;
    if let Some(raw) = &args.functionals {
        flags.insert("functionals".into(), parse_json_flag("functionals", raw)?);
    }
    let cfg: InvarianceCliConfig = resolve(args.common.config.as_deref(), flags)?;
    checked_sigma(&cfg.sigma)?;
    let mut inv = InvarianceConfig::new(cfg.theta, cfg.sigma.clone(), cfg.samples, cfg.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let defaults = rates_for_theta(cfg.theta).map_err(|e| CliError::Usage(e.to_string()))?;
    inv.params = rates(cfg.beta_m.unwrap_or(defaults.beta_m), cfg.beta_s.unwrap_or(defaults.beta_s))?;
    inv.pd = pd_params(cfg.theta, cfg.truncation, 1e-6)?;
    inv.sampler = cfg.sampler.into();
    inv.estimator = match cfg.estimator {
        EstimatorArg::KernelExpectation => OneStep::KernelExpectation,
        EstimatorArg::Simulated => OneStep::Simulated,
    };
    if let Some(fs) = &cfg.functionals {
        inv.functionals = fs.clone();
    }
    let tag = cfg.sigma.tag();
    let sink = sink(&args.common);
    let run = Run { reports: vec![timed(|| harness::test_invariance_onestep(&inv, Execution::Parallel))?] };
    emit(&sink, &run, Some(cfg.theta), &tag, &cfg)?;
    Ok(exit_for(run.verdict()))
}

fn test_reversibility(args: &ReversibilityArgs) -> Result<ExitCode, CliError> {
    let mut flags = flags_object(args);
    if let Some(raw) = &args.pairs {
        flags.insert("pairs".into(), parse_json_flag("pairs", raw)?);
    }
    let cfg: ReversibilityCliConfig = resolve(args.common.config.as_deref(), flags)?;
    let mut rev =
        ReversibilityConfig::new(cfg.theta, cfg.samples, cfg.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    rev.pd = pd_params(cfg.theta, cfg.truncation, 1e-6)?;
    rev.sampler = cfg.sampler.into();
    if let Some(pairs) = &cfg.pairs {
        rev.pairs = pairs.clone();
    }
    let sink = sink(&args.common);
    let run = Run { reports: vec![timed(|| harness::test_reversibility(&rev, Execution::Parallel))?] };
    emit(&sink, &run, Some(cfg.theta), "uniform", &cfg)?;
    Ok(exit_for(run.verdict()))
}

fn test_increments(args: &IncrementArgs) -> Result<ExitCode, CliError> {
    let mut flags = flags_object(args);
    insert_sigma(&mut flags, &args.sigma)?;
    let cfg: IncrementCliConfig = resolve(args.common.config.as_deref(), flags)?;
    checked_sigma(&cfg.sigma)?;
    if !cfg.sigma.is_atomic() {
        return Err(CliError::Usage("invalid sigma: type must be atomic for enumeration".into()));
    }
    let params = rates(cfg.beta_m, cfg.beta_s)?;
    let mut inc = IncrementConfig::new(params, cfg.sigma.clone(), cfg.states, cfg.seed);
    inc.max_parts = cfg.max_parts;
    inc.thresholds = cfg.thresholds.clone();
    inc.z_orders = cfg.z_orders.clone();
    inc.n_polynomials = cfg.n_polynomials.clone();
    inc.tolerance = cfg.tolerance;
    let tag = cfg.sigma.tag();
    let sink = sink(&args.common);
    let run = Run { reports: vec![timed(|| harness::test_increment_identities(&inc))?] };
    emit(&sink, &run, Some(params.theta()), &tag, &cfg)?;
    Ok(exit_for(run.verdict()))
}

fn estimate_hitting(args: &HittingArgs) -> Result<ExitCode, CliError> {
    let mut flags = flags_object(args);
    insert_sigma(&mut flags, &args.sigma)?;
    let cfg: HittingCliConfig = resolve(args.common.config.as_deref(), flags)?;
    checked_sigma(&cfg.sigma)?;
    if !(cfg.prefix_fraction > 0.0 && cfg.prefix_fraction <= 1.0) {
        return Err(CliError::Usage("prefix_fraction must lie in (0, 1]".into()));
    }
    let params = rates(cfg.beta_m, cfg.beta_s)?;
    let mut hit = HittingConfig::new(params, cfg.sigma.clone(), cfg.max_steps, cfg.replicas, cfg.seed);
    hit.prefix_fraction = cfg.prefix_fraction;
    let tag = cfg.sigma.tag();
    let sink = sink(&args.common);
    let run = Run { reports: vec![timed(|| harness::estimate_hitting_time(&hit, Execution::Parallel))?] };
    emit(&sink, &run, Some(params.theta()), &tag, &cfg)?;
    Ok(exit_for(run.verdict()))
}

fn check_mk(args: &MkArgs) -> Result<ExitCode, CliError> {
    let cfg: MkCliConfig = resolve(args.common.config.as_deref(), flags_object(args))?;
    if !(cfg.theta.is_finite() && cfg.theta > 0.0) {
        return Err(CliError::Usage(format!("theta must be positive and finite, got {}", cfg.theta)));
    }
    let mk = MkConfig {
        theta: cfg.theta,
        k: cfg.k,
        functional_k: cfg.functional_k,
        points: cfg.points,
        seed: cfg.seed,
        quadrature_nodes: cfg.nodes,
        tolerance: cfg.tolerance,
    };
    let sink = sink(&args.common);
    let run = Run { reports: vec![timed(|| harness::check_mk(&mk))?] };
    emit(&sink, &run, Some(cfg.theta), "pd", &cfg)?;
    Ok(exit_for(run.verdict()))
}

fn enumerate(args: &EnumerateArgs) -> Result<ExitCode, CliError> {
    let mut flags = flags_object(args);
    insert_sigma(&mut flags, &args.sigma)?;
    if let Some(raw) = &args.state {
        flags.insert("state".into(), parse_json_flag("state", raw)?);
    }
    let cfg: EnumerateConfig = resolve(args.common.config.as_deref(), flags)?;
    checked_sigma(&cfg.sigma)?;
    if !cfg.sigma.is_atomic() {
        return Err(CliError::Usage("invalid sigma: type must be atomic for enumeration".into()));
    }
    let params = rates(cfg.beta_m, cfg.beta_s)?;
    let tag = cfg.sigma.tag();
    let sink = sink(&args.common);

    if cfg.check {
        let seed = cfg.seed.ok_or_else(|| CliError::Usage("--check needs --seed".into()))?;
        let exact = KernelExactnessConfig::new(params, cfg.states, cfg.steps_per_state, seed);
        let run = Run { reports: vec![timed(|| harness::test_kernel_exactness(&exact, Execution::Parallel))?] };
        emit(&sink, &run, Some(params.theta()), "random-atomic", &cfg)?;
        return Ok(exit_for(run.verdict()));
    }
    let state = cfg.state.clone().unwrap_or_else(Partition::unit);
    let table = enumerate_transitions(&state, &params, &cfg.sigma).map_err(|e| CliError::Usage(e.to_string()))?;
    println!("{}", serde_json::to_string_pretty(&table).expect("tables serialize"));
    let name = stem("enumerate", Some(params.theta()), &tag, None);
    sink.echo(&name, &cfg)?;
    sink.json(&name, &table)?;
    Ok(ExitCode::SUCCESS)
}

fn exit_for(verdict: Verdict) -> ExitCode {
    match verdict {
        Verdict::Fail => ExitCode::from(1),
        Verdict::Pass | Verdict::Inconclusive => ExitCode::SUCCESS,
    }
}

fn workers(command: &Command) -> Option<usize> {
    match command {
        Command::SamplePd(a) => a.common.workers,
        Command::RunChain(a) => a.common.workers,
        Command::ClassifySigma(a) => a.common.workers,
        Command::TestInvariance(a) => a.common.workers,
        Command::TestReversibility(a) => a.common.workers,
        Command::TestIncrements(a) => a.common.workers,
        Command::EstimateHitting(a) => a.common.workers,
        Command::CheckMk(a) => a.common.workers,
        Command::Enumerate(a) => a.common.workers,
    }
}

fn dispatch(command: &Command) -> Result<ExitCode, CliError> {
    match command {
        Command::SamplePd(a) => sample_pd(a),
        Command::RunChain(a) => run_chain(a),
        Command::ClassifySigma(a) => classify_sigma(a),
        Command::TestInvariance(a) => test_invariance(a),
        Command::TestReversibility(a) => test_reversibility(a),
        Command::TestIncrements(a) => test_increments(a),
        Command::EstimateHitting(a) => estimate_hitting(a),
        Command::CheckMk(a) => check_mk(a),
        Command::Enumerate(a) => enumerate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_workers(workers(&cli.command), || dispatch(&cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
