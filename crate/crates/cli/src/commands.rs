//! Subcommand implementations. Each writes its artifacts plus
//! `config.echo.json` into the output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use clap::{Args, ValueEnum};
use serde::Serialize;

use sdelab_core::conditions::{self, ConditionReport, Sampler};
use sdelab_core::control::{ControlKind, LocalityParams};
use sdelab_core::estimators::{self, BoundBranch, MomentConstants, MonteCarlo, TestFunctionKind};
use sdelab_core::euler::{coupled_starts, euler_path};
use sdelab_core::model::{ModelSpec, SdeSystem};
use sdelab_core::noise::BrownianTree;
use sdelab_core::scalar::ScalarFn;
use sdelab_core::SdeError;

use crate::args::{check_dim, parse_control, Common, Grid};
use crate::CliError;

type CliResult = Result<(), CliError>;

fn parse_scalar(s: &str) -> Result<ScalarFn, String> {
    s.parse::<ScalarFn>().map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Echo<'a, A: Serialize> {
    command: &'a str,
    model: Option<&'a ModelSpec>,
    args: &'a A,
}

fn prepare_out(out: &Path) -> CliResult {
    fs::create_dir_all(out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| SdeError::Internal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_echo<A: Serialize>(out: &Path, command: &str, model: Option<&ModelSpec>, args: &A) -> CliResult {
    write_json(&out.join("config.echo.json"), &Echo { command, model, args })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn build(common: &Common) -> Result<(ModelSpec, Box<dyn SdeSystem>), CliError> {
    let spec = common.model_spec()?;
    let system = spec.build()?;
    Ok((spec, system))
}

fn monte_carlo(common: &Common, paths: usize) -> MonteCarlo {
    MonteCarlo {
        paths,
        seed: common.seed,
        workers: common.workers,
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: Grid,
    /// Number of paths; path i uses Brownian stream i.
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    /// Second start: write coupled two-start CSVs instead of single paths.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub y0: Option<Vec<f64>>,
    /// Only write the explosion summary.
    #[arg(long)]
    pub summary_only: bool,
}

pub fn simulate(a: SimulateArgs) -> CliResult {
    let (spec, system) = build(&a.common)?;
    let cfg = a.grid.euler(system.as_ref())?;
    let out = &a.common.out;
    prepare_out(out)?;
    if !a.summary_only {
        for i in 0..a.paths as u64 {
            let tree = BrownianTree::sample(system.noise_dim(), cfg.horizon, cfg.level, a.common.seed, i)?;
            match &a.y0 {
                None => {
                    let rec = euler_path(system.as_ref(), &cfg, &tree)?;
                    let mut w = create(&out.join(format!("path_{i}.csv")))?;
                    rec.write_csv(&mut w)?;
                    w.flush()?;
                }
                Some(y0) => {
                    check_dim(system.as_ref(), y0, "y0")?;
                    let rec = coupled_starts(system.as_ref(), &cfg, &cfg.x0, y0, &tree)?;
                    let mut w = create(&out.join(format!("coupled_{i}.csv")))?;
                    rec.write_csv(&mut w)?;
                    w.flush()?;
                }
            }
        }
    }
    let stats = estimators::explosion_stats(system.as_ref(), &cfg, &monte_carlo(&a.common, a.paths))?;
    write_json(&out.join("explosion.json"), &stats)?;
    write_echo(out, "simulate", Some(&spec), &a)?;
    println!(
        "simulated {} path(s) of {}: explosion frequency {}",
        stats.paths,
        system.label(),
        stats.frequency
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Monotonicity,
    Coercivity,
    Moment,
    Confluence,
    KRatio,
}

#[derive(Debug, Args, Serialize)]
pub struct CheckArgs {
    #[arg(value_enum)]
    pub condition: Condition,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Number of sampled points or pairs (grid size for k-ratio).
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Sampling radius, also the locality radius R of the controls.
    #[arg(long = "R", default_value_t = 10.0)]
    pub radius: f64,
    /// Single-point checks only sample |x| ≥ this.
    #[arg(long, default_value_t = 0.0)]
    pub inner_radius: f64,
    /// Largest pair separation c₀.
    #[arg(long, default_value_t = 0.5)]
    pub c0: f64,
    /// Times are sampled from [0, T].
    #[arg(long = "T", default_value_t = 1.0)]
    pub horizon: f64,
    /// Ratio constant K > 1/2.
    #[arg(long = "K", default_value_t = 1.0)]
    pub k: f64,
    /// η_R for monotonicity: zero, linear[:c] or xlog[:R].
    #[arg(long, default_value = "xlog")]
    pub eta: String,
    /// γ for coercivity.
    #[arg(long, default_value = "linear")]
    pub gamma: String,
    /// γ_R for confluence and k-ratio.
    #[arg(long = "gamma-r", default_value = "xlog")]
    pub gamma_r: String,
    /// g(t) for monotonicity: const:<v>, poly:<c0,c1,..> or table:<csv>.
    #[arg(long, value_parser = parse_scalar, default_value = "const:1")]
    pub g: ScalarFn,
    /// f(t) for coercivity and the moment condition.
    #[arg(long, value_parser = parse_scalar, default_value = "const:1")]
    pub f: ScalarFn,
}

pub fn check(a: CheckArgs) -> CliResult {
    let params = LocalityParams {
        radius: a.radius,
        c0: a.c0,
        eps0: a.c0,
        k: Some(a.k),
    };
    if !(a.k > 0.5) {
        return Err(SdeError::Usage(format!("K must exceed 1/2, got {}", a.k)).into());
    }
    let sampler = Sampler {
        inner_radius: a.inner_radius,
        c0: a.c0,
        horizon: a.horizon,
        ..Sampler::new(a.samples, a.radius, a.common.seed)
    };
    let (spec, report): (Option<ModelSpec>, ConditionReport) = match a.condition {
        Condition::KRatio => {
            let gr = parse_control(&a.gamma_r, ControlKind::GammaR, params)?;
            (None, conditions::check_k_ratio(&gr, a.k, a.c0, a.samples)?)
        }
        cond => {
            let (spec, system) = build(&a.common)?;
            let sys = system.as_ref();
            let report = match cond {
                Condition::Monotonicity => {
                    let eta = parse_control(&a.eta, ControlKind::Eta, params)?;
                    conditions::check_monotonicity(sys, &eta, &a.g, &sampler)?
                }
                Condition::Coercivity => {
                    let gamma = parse_control(&a.gamma, ControlKind::Gamma, params)?;
                    conditions::check_coercivity(sys, &gamma, &a.f, &sampler)?
                }
                Condition::Moment => conditions::check_moment_condition(sys, &a.f, &sampler)?,
                Condition::Confluence => {
                    let gr = parse_control(&a.gamma_r, ControlKind::GammaR, params)?;
                    conditions::check_confluence_condition(sys, &gr, a.k, &sampler)?
                }
                Condition::KRatio => unreachable!("handled above"),
            };
            (Some(spec), report)
        }
    };
    let out = &a.common.out;
    prepare_out(out)?;
    let name = serde_json::to_value(a.condition).map_err(|e| SdeError::Internal(e.to_string()))?;
    let name = name.as_str().unwrap_or("condition").to_string();
    write_json(&out.join(format!("check_{name}.json")), &report)?;
    write_echo(out, "check", spec.as_ref(), &a)?;
    let verdict = serde_json::to_value(report.verdict).map_err(|e| SdeError::Internal(e.to_string()))?;
    println!(
        "{name}: {} (worst margin {:e} over {} samples)",
        verdict.as_str().unwrap_or("?"),
        report.worst_margin,
        report.samples_evaluated
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundChoice {
    I,
    Ii,
    Both,
    None,
}

#[derive(Debug, Args, Serialize)]
pub struct MomentsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: Grid,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    /// Moment order p > 2.
    #[arg(long, default_value_t = 4.0)]
    pub p: f64,
    /// Forcing function of the moment condition; needed for the bounds.
    #[arg(long, value_parser = parse_scalar)]
    pub f: Option<ScalarFn>,
    #[arg(long, value_enum, default_value_t = BoundChoice::Both)]
    pub bound: BoundChoice,
    /// Override C_p.
    #[arg(long)]
    pub c_p: Option<f64>,
    /// Override the Burkholder–Davis–Gundy constant C′_p.
    #[arg(long)]
    pub c_p_prime: Option<f64>,
    /// Override C″_p.
    #[arg(long)]
    pub c_p_dprime: Option<f64>,
}

pub fn moments(a: MomentsArgs) -> CliResult {
    let (spec, system) = build(&a.common)?;
    let cfg = a.grid.euler(system.as_ref())?;
    let defaults = MomentConstants::conservative(a.p);
    let constants = MomentConstants {
        c_p: a.c_p.unwrap_or(defaults.c_p),
        c_p_prime: a.c_p_prime.unwrap_or(defaults.c_p_prime),
        c_p_dprime: a.c_p_dprime.unwrap_or(defaults.c_p_dprime),
    };
    let branches: &[BoundBranch] = match (a.bound, &a.f) {
        (BoundChoice::None, _) | (_, None) => &[],
        (BoundChoice::I, _) => &[BoundBranch::I],
        (BoundChoice::Ii, _) => &[BoundBranch::Ii],
        (BoundChoice::Both, _) => &[BoundBranch::I, BoundBranch::Ii],
    };
    let mut report =
        estimators::estimate_sup_moment(system.as_ref(), &cfg, a.p, constants, &monte_carlo(&a.common, a.paths))?;
    if let Some(f) = &a.f {
        let x0_norm = cfg.x0.iter().map(|v| v * v).sum::<f64>().sqrt();
        report = report.with_bounds(f, x0_norm, branches)?;
    }
    let out = &a.common.out;
    prepare_out(out)?;
    write_json(&out.join("moments.json"), &report)?;
    write_echo(out, "moments", Some(&spec), &a)?;
    println!(
        "E sup|X|^{} ≈ {} ± {} ({} paths, {} exploded); bound_i {:?}, bound_ii {:?}",
        report.p, report.estimate, report.ci_halfwidth, report.paths, report.exploded, report.bound_i, report.bound_ii
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args, Serialize)]
pub struct ConfluenceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: Grid,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    /// Second initial value.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub y0: Vec<f64>,
    /// Distance thresholds ε, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1e-6")]
    pub eps: Vec<f64>,
}

pub fn confluence(a: ConfluenceArgs) -> CliResult {
    let (spec, system) = build(&a.common)?;
    let cfg = a.grid.euler(system.as_ref())?;
    check_dim(system.as_ref(), &a.y0, "y0")?;
    let stats = estimators::confluence_stats(
        system.as_ref(),
        &cfg,
        &cfg.x0,
        &a.y0,
        &a.eps,
        &monte_carlo(&a.common, a.paths),
    )?;
    let out = &a.common.out;
    prepare_out(out)?;
    write_json(&out.join("confluence.json"), &stats)?;
    if a.common.format.csv() {
        let mut w = create(&out.join("min_distance.csv"))?;
        writeln!(w, "path,min_distance")?;
        for (i, d) in stats.min_distances.iter().enumerate() {
            writeln!(w, "{i},{}", sdelab_core::euler::fmt_f64(*d))?;
        }
        w.flush()?;
    }
    write_echo(out, "confluence", Some(&spec), &a)?;
    for e in &stats.per_eps {
        println!(
            "eps {}: frequency {} ({} of {})",
            e.eps, e.frequency, e.hits, stats.paths
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args, Serialize)]
pub struct MonotoneArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: Grid,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    /// Upper initial value y₀ > x₀.
    #[arg(long, allow_hyphen_values = true)]
    pub y0: f64,
}

pub fn monotone(a: MonotoneArgs) -> CliResult {
    let (spec, system) = build(&a.common)?;
    let cfg = a.grid.euler(system.as_ref())?;
    let stats =
        estimators::monotonicity_stats(system.as_ref(), &cfg, cfg.x0[0], a.y0, &monte_carlo(&a.common, a.paths))?;
    let out = &a.common.out;
    prepare_out(out)?;
    write_json(&out.join("monotone.json"), &stats)?;
    write_echo(out, "monotone", Some(&spec), &a)?;
    println!(
        "ordering violated on {} of {} paths ({})",
        stats.violations, stats.paths, stats.fraction
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args, Serialize)]
pub struct ConvergeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: Grid,
    #[arg(long, default_value_t = 500)]
    pub paths: usize,
    /// Coarse levels, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub levels: Vec<u32>,
    #[arg(long, default_value_t = 12)]
    pub ref_level: u32,
}

pub fn converge(a: ConvergeArgs) -> CliResult {
    let (spec, system) = build(&a.common)?;
    let cfg = a.grid.euler(system.as_ref())?;
    let levels = a.levels.clone();
    let report = estimators::convergence_diagnostic(
        system.as_ref(),
        &cfg,
        &levels,
        a.ref_level,
        &monte_carlo(&a.common, a.paths),
    )?;
    let out = &a.common.out;
    prepare_out(out)?;
    if a.common.format.csv() {
        let mut w = create(&out.join("converge.csv"))?;
        estimators::write_level_csv(&report.rows, &mut w)?;
        w.flush()?;
    }
    if a.common.format.json() {
        write_json(&out.join("converge.json"), &report)?;
    }
    write_echo(out, "converge", Some(&spec), &a)?;
    for r in &report.rows {
        println!("level {}: {} ± {}", r.level, r.value, r.ci_halfwidth);
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args, Serialize)]
pub struct StrongErrorArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: Grid,
    #[arg(long, default_value_t = 2000)]
    pub paths: usize,
    #[arg(long, value_delimiter = ',', default_value = "6,7,8,9,10")]
    pub levels: Vec<u32>,
    /// Level of the Brownian grid used by the oracle (default: finest + 6, at most 20).
    #[arg(long)]
    pub oracle_level: Option<u32>,
}

pub fn strong_error(a: StrongErrorArgs) -> CliResult {
    let (spec, system) = build(&a.common)?;
    let cfg = a.grid.euler(system.as_ref())?;
    let levels = a.levels.clone();
    let report = estimators::strong_error_vs_oracle(
        system.as_ref(),
        &cfg,
        &levels,
        a.oracle_level,
        &monte_carlo(&a.common, a.paths),
    )?;
    let out = &a.common.out;
    prepare_out(out)?;
    if a.common.format.csv() {
        let mut w = create(&out.join("strong_error.csv"))?;
        estimators::write_level_csv(&report.rows, &mut w)?;
        w.flush()?;
    }
    if a.common.format.json() {
        write_json(&out.join("strong_error.json"), &report)?;
    }
    write_echo(out, "strong-error", Some(&spec), &a)?;
    for r in &report.rows {
        println!("level {}: {} ± {}", r.level, r.value, r.ci_halfwidth);
    }
    println!("slope {}", report.slope);
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum TestFnChoice {
    #[value(name = "phi_delta")]
    #[serde(rename = "phi_delta")]
    PhiDelta,
    #[value(name = "varphi")]
    #[serde(rename = "varphi")]
    Varphi,
    #[value(name = "Phi_delta")]
    #[serde(rename = "Phi_delta")]
    ExpPhiDelta,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalTestFnArgs {
    #[arg(long, value_enum)]
    pub kind: TestFnChoice,
    /// Control: zero, linear[:c] or xlog[:R].
    #[arg(long)]
    pub control: String,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long)]
    pub x: f64,
    #[arg(long, default_value_t = 0.5)]
    pub c0: f64,
    /// Locality radius used by `xlog` without an explicit scale.
    #[arg(long = "R", default_value_t = 10.0)]
    pub radius: f64,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out: std::path::PathBuf,
}

pub fn eval_test_fn(a: EvalTestFnArgs) -> CliResult {
    let (kind, ctrl_kind) = match a.kind {
        TestFnChoice::PhiDelta => (TestFunctionKind::PhiDelta, ControlKind::Eta),
        TestFnChoice::Varphi => (TestFunctionKind::Varphi, ControlKind::Gamma),
        TestFnChoice::ExpPhiDelta => (TestFunctionKind::ExpPhiDelta, ControlKind::GammaR),
    };
    let params = LocalityParams {
        radius: a.radius,
        c0: a.c0,
        eps0: a.c0,
        k: None,
    };
    let control = parse_control(&a.control, ctrl_kind, params)?;
    let eval = estimators::eval_test_function(kind, &control, a.delta, a.x, a.c0)?;
    prepare_out(&a.out)?;
    write_json(&a.out.join("test_fn.json"), &eval)?;
    write_echo(&a.out, "eval-test-fn", None, &a)?;
    println!("{:.17e}", eval.value);
    Ok(())
}
