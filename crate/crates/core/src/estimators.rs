//! Monte Carlo statistics over Euler paths, the maximum-process moment
//! bounds, and quadrature of the test functions.
//!
//! Every Monte Carlo estimator draws path `i` from the Brownian stream
//! `(seed, i)`, fans the paths out over a rayon pool of `workers` threads and
//! reduces the per-path results in index order. Reports are therefore
//! bit-identical for any worker count.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlFunction;
use crate::error::{Result, SdeError};
use crate::euler::{coupled_resolutions, coupled_starts, euler_path, fmt_f64, EulerConfig, StopReason};
use crate::model::SdeSystem;
use crate::noise::{BrownianTree, MAX_LEVEL};
use crate::quadrature::{self, DEFAULT_REL_TOL};
use crate::scalar::ScalarFn;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub paths: usize,
    pub seed: u64,
    /// Worker threads; `None` uses rayon's default. Never affects results.
    pub workers: Option<usize>,
}

impl MonteCarlo {
    pub fn new(paths: usize, seed: u64) -> Self {
        MonteCarlo {
            paths,
            seed,
            workers: None,
        }
    }

    pub fn with_workers(self, workers: usize) -> Self {
        MonteCarlo {
            workers: Some(workers),
            ..self
        }
    }

    /// Runs `job` for every path index and returns the results in index
    /// order; the first error by index wins.
    fn fan_out<T, F>(&self, job: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Send + Sync,
    {
        if self.paths == 0 {
            return Err(SdeError::usage("need at least one path"));
        }
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.workers {
            if n == 0 {
                return Err(SdeError::usage("workers must be ≥ 1"));
            }
            builder = builder.num_threads(n);
        }
        let pool = builder
            .build()
            .map_err(|e| SdeError::Resource(format!("cannot start worker pool: {e}")))?;
        let results: Vec<Result<T>> = pool.install(|| (0..self.paths as u64).into_par_iter().map(&job).collect());
        results.into_iter().collect()
    }
}

/// Mean and 95% CI half-width, summed in index order.
fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
        return (values[0], 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Z95 * (var / n).sqrt())
}

// ---------------------------------------------------------------------------
// maximum-process moments

/// Constants of the moment bounds.
///
/// `c_p`, `c_p_prime` (Burkholder–Davis–Gundy for exponent `p/2`) and
/// `c_p_dprime` are inputs; the rest are derived by [`moment_bound_terms`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentConstants {
    pub c_p: f64,
    pub c_p_prime: f64,
    pub c_p_dprime: f64,
}

impl MomentConstants {
    /// `C_p = 3^{p/2−1}`, `C″_p = 2^{p/2−1}` (power-mean constants) and the
    /// conservative `C′_p = (2·(p/2))^{p/2}`.
    pub fn conservative(p: f64) -> Self {
        MomentConstants {
            c_p: 3f64.powf(p / 2.0 - 1.0),
            c_p_prime: p.powf(p / 2.0),
            c_p_dprime: 2f64.powf(p / 2.0 - 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundBranch {
    /// `f ∈ L^p_loc`: `A·exp{B∫f^{p/2} + C∫f^p}`.
    I,
    /// `f ∈ L^{2p/(p−2)}_loc`: `A₁·e^{B₁t}`.
    Ii,
}

/// Derived constants and the integrals they use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentBoundTerms {
    pub c_p: f64,
    pub c_p_prime: f64,
    pub c_p_dprime: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub a1: f64,
    pub b1: Option<f64>,
    pub int_f: f64,
    pub int_f2: f64,
    pub int_f_half_p: f64,
    pub int_f_p: f64,
}

/// `∫₀ᵗ f(s)^q ds`, split at the kinks of `f`.
fn power_integral(f: &ScalarFn, q: f64, t: f64) -> Result<f64> {
    let mut knots = vec![0.0];
    knots.extend(f.kinks(0.0, t));
    knots.push(t);
    let mut total = 0.0;
    for w in knots.windows(2) {
        let r = quadrature::integrate(
            |s| {
                let v = f.eval(s);
                if v < 0.0 {
                    f64::NAN
                } else {
                    v.powf(q)
                }
            },
            w[0],
            w[1],
            DEFAULT_REL_TOL,
        )
        .map_err(|e| match e {
            SdeError::Quadrature(msg) => SdeError::Quadrature(format!("∫ f^{q} on [0, {t}]: {msg} (f must be ≥ 0)")),
            other => other,
        })?;
        total += r.value;
    }
    Ok(total)
}

fn check_p(p: f64) -> Result<()> {
    if p > 2.0 && p.is_finite() {
        Ok(())
    } else {
        Err(SdeError::usage(format!("moment order must exceed 2, got {p}")))
    }
}

/// Constants of both bounds for horizon `t` and initial norm `|x₀|`.
///
/// `A` contains `2C_p|x₀|^p`, so it depends on the initial value as well as
/// on `p`, `t` and `f`.
pub fn moment_bound_terms(
    f: &ScalarFn,
    p: f64,
    t: f64,
    x0_norm: f64,
    constants: MomentConstants,
    with_branch_ii: bool,
) -> Result<MomentBoundTerms> {
    check_p(p)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(SdeError::usage(format!("horizon must be finite and ≥ 0, got {t}")));
    }
    let MomentConstants {
        c_p,
        c_p_prime,
        c_p_dprime,
    } = constants;
    let int_f = power_integral(f, 1.0, t)?;
    let int_f2 = power_integral(f, 2.0, t)?;
    let int_f_half_p = power_integral(f, p / 2.0, t)?;
    let int_f_p = power_integral(f, p, t)?;
    let half = p / 2.0;
    let c = c_p * c_p * c_p_prime * c_p_prime * c_p_dprime * c_p_dprime;
    let b = 2.0 * c_p * c_p_dprime;
    let a = 1.0 + 2.0 * c_p * x0_norm.powf(p) + b * int_f.powf(half) + c * int_f2.powf(half);
    let b1 = if with_branch_ii {
        let e = (p - 2.0) / p;
        let i1 = power_integral(f, p / (p - 2.0), t)?;
        let i2 = power_integral(f, 2.0 * p / (p - 2.0), t)?;
        Some(b * i1.powf(e) + c * i2.powf(e))
    } else {
        None
    };
    Ok(MomentBoundTerms {
        c_p,
        c_p_prime,
        c_p_dprime,
        a,
        b,
        c,
        a1: a,
        b1,
        int_f,
        int_f2,
        int_f_half_p,
        int_f_p,
    })
}

impl MomentBoundTerms {
    /// Natural log of the bound at horizon `t`; finite even where the bound
    /// itself overflows `f64` (the default constants reach `e^{10⁴}` quickly).
    pub fn log_bound(&self, branch: BoundBranch, t: f64) -> Option<f64> {
        match branch {
            BoundBranch::I => Some(self.a.ln() + self.b * self.int_f_half_p + self.c * self.int_f_p),
            BoundBranch::Ii => self.b1.map(|b1| self.a1.ln() + b1 * t),
        }
    }
}

/// Upper bound on `E sup_{s≤t} |X_s|^p` under the moment condition with `f`.
pub fn moment_bound(
    f: &ScalarFn,
    p: f64,
    t: f64,
    x0_norm: f64,
    constants: MomentConstants,
    branch: BoundBranch,
) -> Result<f64> {
    let terms = moment_bound_terms(f, p, t, x0_norm, constants, branch == BoundBranch::Ii)?;
    Ok(match branch {
        BoundBranch::I => terms.a * (terms.b * terms.int_f_half_p + terms.c * terms.int_f_p).exp(),
        BoundBranch::Ii => terms.a1 * (terms.b1.expect("computed for branch ii") * t).exp(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub p: f64,
    pub t: f64,
    /// Mean of `(max_k |X_k|)^p` over non-exploded paths.
    pub estimate: f64,
    pub ci_halfwidth: f64,
    /// Paths used in the estimate.
    pub paths: usize,
    pub level: u32,
    /// Paths excluded because they stopped before `t`.
    pub exploded: usize,
    pub explosion_flag: bool,
    pub bound_i: Option<f64>,
    pub bound_ii: Option<f64>,
    /// Natural logs of the bounds, for when they overflow.
    pub log_bound_i: Option<f64>,
    pub log_bound_ii: Option<f64>,
    pub constants: MomentConstants,
    pub bound_terms: Option<MomentBoundTerms>,
    /// Forcing function the bounds were computed for.
    pub f: Option<ScalarFn>,
}

impl MomentReport {
    /// Attaches the requested bounds for forcing function `f`.
    pub fn with_bounds(mut self, f: &ScalarFn, x0_norm: f64, branches: &[BoundBranch]) -> Result<Self> {
        if branches.is_empty() {
            return Ok(self);
        }
        let want_ii = branches.contains(&BoundBranch::Ii);
        let terms = moment_bound_terms(f, self.p, self.t, x0_norm, self.constants, want_ii)?;
        if branches.contains(&BoundBranch::I) {
            self.bound_i = Some(moment_bound(
                f,
                self.p,
                self.t,
                x0_norm,
                self.constants,
                BoundBranch::I,
            )?);
            self.log_bound_i = terms.log_bound(BoundBranch::I, self.t);
        }
        if want_ii {
            self.bound_ii = Some(moment_bound(
                f,
                self.p,
                self.t,
                x0_norm,
                self.constants,
                BoundBranch::Ii,
            )?);
            self.log_bound_ii = terms.log_bound(BoundBranch::Ii, self.t);
        }
        self.bound_terms = Some(terms);
        self.f = Some(f.clone());
        Ok(self)
    }
}

/// Monte Carlo estimate of `E (sup_{s≤t} |X_s|)^p` using the grid maximum
/// at `config.level` on `[0, config.horizon]`.
pub fn estimate_sup_moment(
    system: &dyn SdeSystem,
    config: &EulerConfig,
    p: f64,
    constants: MomentConstants,
    mc: &MonteCarlo,
) -> Result<MomentReport> {
    check_p(p)?;
    config.validate()?;
    let per_path = mc.fan_out(|i| {
        let tree = BrownianTree::sample(system.noise_dim(), config.horizon, config.level, mc.seed, i)?;
        let rec = euler_path(system, config, &tree)?;
        Ok((!rec.exploded()).then(|| rec.sup_norm().powf(p)))
    })?;
    let used: Vec<f64> = per_path.iter().flatten().copied().collect();
    let exploded = per_path.len() - used.len();
    if used.is_empty() {
        return Err(SdeError::Estimation(format!(
            "all {} paths exploded (explosion fraction 1.0)",
            per_path.len()
        )));
    }
    let (estimate, ci_halfwidth) = mean_ci(&used);
    Ok(MomentReport {
        p,
        t: config.horizon,
        estimate,
        ci_halfwidth,
        paths: used.len(),
        level: config.level,
        exploded,
        explosion_flag: exploded > 0,
        bound_i: None,
        bound_ii: None,
        log_bound_i: None,
        log_bound_ii: None,
        constants,
        bound_terms: None,
        f: None,
    })
}

// ---------------------------------------------------------------------------
// explosion and confluence

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplosionStats {
    pub paths: usize,
    pub exploded: usize,
    pub nonfinite: usize,
    pub frequency: f64,
    pub r_stop: f64,
    pub horizon: f64,
    pub level: u32,
    /// Exit times of the exploded paths, in path order.
    pub exit_times: Vec<f64>,
    pub histogram: Vec<HistogramBin>,
}

const HISTOGRAM_BINS: usize = 20;

fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<HistogramBin> {
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: lo + width * b as f64,
            hi: if b + 1 == bins { hi } else { lo + width * (b + 1) as f64 },
            count: 0,
        })
        .collect();
    for v in values {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        out[b].count += 1;
    }
    out
}

/// Frequency of `|X| ≥ R_stop` (or non-finite) before `config.horizon`.
pub fn explosion_stats(system: &dyn SdeSystem, config: &EulerConfig, mc: &MonteCarlo) -> Result<ExplosionStats> {
    config.validate()?;
    let per_path = mc.fan_out(|i| {
        let tree = BrownianTree::sample(system.noise_dim(), config.horizon, config.level, mc.seed, i)?;
        Ok(euler_path(system, config, &tree)?.stopped_at)
    })?;
    let stops: Vec<_> = per_path.iter().flatten().collect();
    let exit_times: Vec<f64> = stops.iter().map(|s| s.time).collect();
    Ok(ExplosionStats {
        paths: per_path.len(),
        exploded: stops.len(),
        nonfinite: stops.iter().filter(|s| s.reason == StopReason::Nonfinite).count(),
        frequency: stops.len() as f64 / per_path.len() as f64,
        r_stop: config.r_stop,
        horizon: config.horizon,
        level: config.level,
        histogram: histogram(&exit_times, 0.0, config.horizon, HISTOGRAM_BINS),
        exit_times,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsFrequency {
    pub eps: f64,
    /// Paths whose grid distance reached `≤ ε` before the horizon.
    pub hits: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantile {
    pub q: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfluenceStats {
    pub paths: usize,
    /// Paths where either run stopped; their distances are taken up to the stop.
    pub stopped: usize,
    pub per_eps: Vec<EpsFrequency>,
    pub min_distance_quantiles: Vec<Quantile>,
    /// Per-path minimum grid distance, in path order.
    pub min_distances: Vec<f64>,
}

const QUANTILES: [f64; 7] = [0.0, 0.01, 0.1, 0.5, 0.9, 0.99, 1.0];

/// Empirical quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Frequency of `τ̂_ε ≤ T` for each `ε`, where `τ̂_ε` is the first grid time
/// with `|X_t(x₀) − X_t(y₀)| ≤ ε`.
pub fn confluence_stats(
    system: &dyn SdeSystem,
    config: &EulerConfig,
    x0: &[f64],
    y0: &[f64],
    eps_list: &[f64],
    mc: &MonteCarlo,
) -> Result<ConfluenceStats> {
    if eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(SdeError::usage("every ε must be > 0"));
    }
    if x0 == y0 {
        return Err(SdeError::usage("confluence needs x0 ≠ y0"));
    }
    let per_path = mc.fan_out(|i| {
        let tree = BrownianTree::sample(system.noise_dim(), config.horizon, config.level, mc.seed, i)?;
        let rec = coupled_starts(system, config, x0, y0, &tree)?;
        Ok((rec.min_distance, rec.either_stopped()))
    })?;
    let min_distances: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let n = per_path.len();
    let per_eps = eps_list
        .iter()
        .map(|&eps| {
            let hits = min_distances.iter().filter(|d| **d <= eps).count();
            EpsFrequency {
                eps,
                hits,
                frequency: hits as f64 / n as f64,
            }
        })
        .collect();
    let mut sorted = min_distances.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(ConfluenceStats {
        paths: n,
        stopped: per_path.iter().filter(|p| p.1).count(),
        per_eps,
        min_distance_quantiles: QUANTILES
            .iter()
            .map(|&q| Quantile {
                q,
                value: quantile(&sorted, q),
            })
            .collect(),
        min_distances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityStats {
    pub paths: usize,
    /// Paths with `X_t(x₀) > X_t(y₀)` at some grid time.
    pub violations: usize,
    pub fraction: f64,
}

/// Order preservation for a one-dimensional model started at `x0 < y0`.
pub fn monotonicity_stats(
    system: &dyn SdeSystem,
    config: &EulerConfig,
    x0: f64,
    y0: f64,
    mc: &MonteCarlo,
) -> Result<MonotonicityStats> {
    if system.dim() != 1 || system.noise_dim() != 1 {
        return Err(SdeError::usage(format!(
            "monotonicity statistics need d = m = 1, model {} has d = {}, m = {}",
            system.label(),
            system.dim(),
            system.noise_dim()
        )));
    }
    if !(x0 < y0) {
        return Err(SdeError::usage(format!("need x0 < y0, got {x0} and {y0}")));
    }
    let per_path = mc.fan_out(|i| {
        let tree = BrownianTree::sample(1, config.horizon, config.level, mc.seed, i)?;
        let rec = coupled_starts(system, config, &[x0], &[y0], &tree)?;
        let n = rec.times.len();
        Ok((0..n).any(|k| rec.first.state(k)[0] > rec.second.state(k)[0]))
    })?;
    let violations = per_path.iter().filter(|v| **v).count();
    Ok(MonotonicityStats {
        paths: per_path.len(),
        violations,
        fraction: violations as f64 / per_path.len() as f64,
    })
}

// ---------------------------------------------------------------------------
// convergence and strong error

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: u32,
    pub value: f64,
    pub ci_halfwidth: f64,
}

/// CSV with header `level,value,ci_halfwidth`.
pub fn write_level_csv<W: Write>(rows: &[LevelRow], mut w: W) -> io::Result<()> {
    writeln!(w, "level,value,ci_halfwidth")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.level, fmt_f64(r.value), fmt_f64(r.ci_halfwidth))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub ref_level: u32,
    pub rows: Vec<LevelRow>,
    pub paths: usize,
    /// Paths dropped because a run stopped at `R_stop`.
    pub excluded: usize,
}

/// `E[max_k |X^{(2^ℓ)}_k − X^{(2^{ℓ_ref})}_k|²]` over the level-`ℓ` grid,
/// both resolutions driven by the same tree.
pub fn convergence_diagnostic(
    system: &dyn SdeSystem,
    config: &EulerConfig,
    levels: &[u32],
    ref_level: u32,
    mc: &MonteCarlo,
) -> Result<ConvergenceReport> {
    if ref_level > MAX_LEVEL {
        return Err(SdeError::Resource(format!(
            "reference level {ref_level} exceeds guard {MAX_LEVEL}"
        )));
    }
    if let Some(l) = levels.iter().find(|l| **l > ref_level) {
        return Err(SdeError::usage(format!(
            "level {l} is finer than the reference level {ref_level}"
        )));
    }
    if levels.is_empty() {
        return Err(SdeError::usage("need at least one level"));
    }
    let per_path = mc.fan_out(|i| {
        let tree = BrownianTree::sample(system.noise_dim(), config.horizon, ref_level, mc.seed, i)?;
        let mut out = Vec::with_capacity(levels.len());
        for &l in levels {
            if l == ref_level {
                out.push(0.0);
                continue;
            }
            let rec = coupled_resolutions(system, l, ref_level, config, &tree)?;
            if rec.either_stopped() {
                return Ok(None);
            }
            out.push(rec.max_xi());
        }
        Ok(Some(out))
    })?;
    let kept: Vec<&Vec<f64>> = per_path.iter().flatten().collect();
    if kept.is_empty() {
        return Err(SdeError::Estimation("every path stopped at R_stop".to_string()));
    }
    let rows = levels
        .iter()
        .enumerate()
        .map(|(j, &level)| {
            let vals: Vec<f64> = kept.iter().map(|v| v[j]).collect();
            let (value, ci_halfwidth) = mean_ci(&vals);
            LevelRow {
                level,
                value,
                ci_halfwidth,
            }
        })
        .collect();
    Ok(ConvergenceReport {
        ref_level,
        rows,
        paths: kept.len(),
        excluded: per_path.len() - kept.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongErrorReport {
    /// RMS endpoint error per level.
    pub rows: Vec<LevelRow>,
    /// Least-squares slope of `log error` against `log h`.
    pub slope: f64,
    pub oracle_level: u32,
    pub paths: usize,
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// RMS endpoint error against the model's closed-form solution, evaluated on
/// a tree at `oracle_level` (default: finest requested level + 6, capped).
pub fn strong_error_vs_oracle(
    system: &dyn SdeSystem,
    config: &EulerConfig,
    levels: &[u32],
    oracle_level: Option<u32>,
    mc: &MonteCarlo,
) -> Result<StrongErrorReport> {
    let finest = *levels
        .iter()
        .max()
        .ok_or_else(|| SdeError::usage("need at least one level"))?;
    let oracle_level = oracle_level.unwrap_or((finest + 6).min(20));
    if oracle_level < finest {
        return Err(SdeError::usage("oracle level must be ≥ every simulated level"));
    }
    if oracle_level > MAX_LEVEL {
        return Err(SdeError::Resource(format!(
            "oracle level {oracle_level} exceeds guard {MAX_LEVEL}"
        )));
    }
    let t = config.horizon;
    let per_path = mc.fan_out(|i| {
        let tree = BrownianTree::sample(system.noise_dim(), t, oracle_level, mc.seed, i)?;
        let exact = system.exact_solution(t, &config.x0, &tree).ok_or_else(|| {
            SdeError::usage(format!(
                "model {} has no closed-form solution at t = {t}",
                system.label()
            ))
        })?;
        levels
            .iter()
            .map(|&level| {
                let rec = euler_path(
                    system,
                    &EulerConfig {
                        level,
                        ..config.clone()
                    },
                    &tree,
                )?;
                if rec.exploded() {
                    return Err(SdeError::Estimation(format!("path {i} stopped at level {level}")));
                }
                Ok(rec
                    .last_state()
                    .iter()
                    .zip(&exact)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>())
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let rows: Vec<LevelRow> = levels
        .iter()
        .enumerate()
        .map(|(j, &level)| {
            let sq: Vec<f64> = per_path.iter().map(|v| v[j]).collect();
            let (mse, ci_mse) = mean_ci(&sq);
            let rms = mse.sqrt();
            LevelRow {
                level,
                value: rms,
                // delta method for sqrt
                ci_halfwidth: if rms > 0.0 { ci_mse / (2.0 * rms) } else { 0.0 },
            }
        })
        .collect();
    let slope = if rows.len() >= 2 {
        let log_h: Vec<f64> = rows.iter().map(|r| (t / (1u64 << r.level) as f64).ln()).collect();
        let log_e: Vec<f64> = rows.iter().map(|r| r.value.ln()).collect();
        fit_slope(&log_h, &log_e)
    } else {
        f64::NAN
    };
    Ok(StrongErrorReport {
        rows,
        slope,
        oracle_level,
        paths: per_path.len(),
    })
}

// ---------------------------------------------------------------------------
// test functions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestFunctionKind {
    /// `φ_δ(x) = ∫₀ˣ ds / (η_R(s) + δ)`.
    #[serde(rename = "phi_delta")]
    PhiDelta,
    /// `φ(x) = ∫₀ˣ ds / (γ(s) + 1)`.
    #[serde(rename = "varphi")]
    Varphi,
    /// `Φ_δ(x) = exp(∫ₓ^{c₀} ds / (γ_R(s) + δ))`.
    #[serde(rename = "Phi_delta")]
    ExpPhiDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionEval {
    pub kind: TestFunctionKind,
    pub control: ControlFunction,
    pub delta: f64,
    pub x: f64,
    pub c0: f64,
    pub value: f64,
    pub error_estimate: f64,
}

/// `∫_a^b ds / (ctrl(s) + shift)` with geometric splitting towards `a = 0`
/// so the peak of the integrand near the origin is resolved.
fn reciprocal_integral(control: &ControlFunction, shift: f64, a: f64, b: f64) -> Result<(f64, f64)> {
    let integrand = |s: f64| 1.0 / (control.value(s) + shift);
    let mut knots = vec![b];
    if a == 0.0 {
        let mut s = b;
        while s > 4.0 * shift.max(1e-300) && knots.len() < 64 {
            s *= 0.5;
            knots.push(s);
        }
    }
    knots.push(a);
    knots.dedup();
    let mut value = 0.0;
    let mut error = 0.0;
    for w in knots.windows(2).rev() {
        let r = quadrature::integrate(integrand, w[1], w[0], DEFAULT_REL_TOL)?;
        value += r.value;
        error += r.error_estimate;
    }
    Ok((value, error))
}

pub fn eval_test_function(
    kind: TestFunctionKind,
    control: &ControlFunction,
    delta: f64,
    x: f64,
    c0: f64,
) -> Result<TestFunctionEval> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(SdeError::usage(format!("x must be finite and ≥ 0, got {x}")));
    }
    let needs_delta = matches!(kind, TestFunctionKind::PhiDelta | TestFunctionKind::ExpPhiDelta);
    if needs_delta {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(SdeError::usage(format!("δ must be finite and > 0, got {delta}")));
        }
        if delta == 0.0 && control.value(0.0) == 0.0 {
            return Err(SdeError::usage(
                "δ = 0 with control(0) = 0 makes the integral diverge at 0",
            ));
        }
    }
    let (value, error_estimate) = match kind {
        TestFunctionKind::PhiDelta => {
            control.eval(x)?;
            reciprocal_integral(control, delta, 0.0, x)?
        }
        TestFunctionKind::Varphi => {
            control.eval(x)?;
            reciprocal_integral(control, 1.0, 0.0, x)?
        }
        TestFunctionKind::ExpPhiDelta => {
            if !(c0 > 0.0 && c0 < 1.0) {
                return Err(SdeError::usage(format!("c0 must lie in (0, 1), got {c0}")));
            }
            if x > c0 {
                return Err(SdeError::usage(format!("Φ_δ needs 0 ≤ x ≤ c0 = {c0}, got {x}")));
            }
            control.eval(c0)?;
            let (v, e) = reciprocal_integral(control, delta, x, c0)?;
            let value = v.exp();
            (value, value * e)
        }
    };
    Ok(TestFunctionEval {
        kind,
        control: *control,
        delta: if kind == TestFunctionKind::Varphi { 1.0 } else { delta },
        x,
        c0,
        value,
        error_estimate,
    })
}
