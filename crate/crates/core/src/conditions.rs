//! Sampled checks of the sufficient conditions on a model.
//!
//! Each check evaluates a left-minus-right margin at many sample points; a
//! positive margin beyond roundoff is a violation. Sampling can only find
//! violations, so a report never says more than `no_violation_found`.
//!
//! | condition | margin |
//! |---|---|
//! | monotonicity | `‖σ(x)−σ(y)‖² + 2⟨x−y, b(x)−b(y)⟩ − g(t) η_R(|x−y|²)` |
//! | coercivity | `‖σ(x)‖² + 2⟨x, b(x)⟩ − f(t)(γ(|x|²) + 1)` |
//! | moment | `(‖σ‖² + 2⟨x, b⟩) ∨ |σᵀx|² − f(t)(|x|² + 1)` |
//! | confluence | `‖σ(x)−σ(y)‖² − (2/(2K−1))⟨x−y, b(x)−b(y)⟩ − γ_R(|x−y|²)` |
//! | k_ratio | `x(γ_R′(x) + 1)/γ_R(x) − K` |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::ControlFunction;
use crate::error::{Result, SdeError};
use crate::model::SdeSystem;
use crate::scalar::ScalarFn;

/// Relative roundoff allowance: violation iff `margin > REL_TOL·(1 + scale)`.
pub const REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionId {
    Monotonicity,
    Coercivity,
    Moment,
    Confluence,
    KRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NoViolationFound,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstPoint {
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
    pub t: f64,
}

/// A sampled pair `(x, y, t)`.
pub type SamplePair = (Vec<f64>, Vec<f64>, f64);

/// How sample points are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampler {
    pub count: usize,
    /// Outer radius `R`: all points satisfy `|x| ≤ R`.
    pub radius: f64,
    /// Inner radius for single-point checks (`|x| ≥ inner_radius`).
    pub inner_radius: f64,
    /// Largest pair separation `c₀`.
    pub c0: f64,
    /// Smallest pair separation.
    pub min_separation: f64,
    /// Times are drawn uniformly from `[0, horizon]`.
    pub horizon: f64,
    pub seed: u64,
}

impl Sampler {
    pub fn new(count: usize, radius: f64, seed: u64) -> Self {
        Sampler {
            count,
            radius,
            inner_radius: 0.0,
            c0: 0.5,
            min_separation: 1e-8,
            horizon: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(SdeError::usage("sampler needs count ≥ 1"));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(SdeError::usage(format!(
                "sampler radius must be > 0, got {}",
                self.radius
            )));
        }
        if !(self.inner_radius >= 0.0 && self.inner_radius <= self.radius) {
            return Err(SdeError::usage("inner radius must lie in [0, radius]"));
        }
        if !(self.min_separation > 0.0 && self.min_separation <= self.c0) {
            return Err(SdeError::usage("need 0 < min_separation ≤ c0"));
        }
        if !(self.horizon >= 0.0) {
            return Err(SdeError::usage("sampler horizon must be ≥ 0"));
        }
        Ok(())
    }

    /// Pairs `(x, y, t)` with `|x| ∨ |y| ≤ R` and `|x − y| ≤ c₀`.
    ///
    /// Strata, by sample index mod 10: 0–5 uniform in the ball with
    /// log-spaced separations, 6–7 axis-aligned, 8 near the origin,
    /// 9 one point at the origin.
    pub fn pairs(&self, d: usize) -> Result<Vec<SamplePair>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let max_sep = self.c0.min(self.radius);
        let (lo, hi) = (self.min_separation.ln(), max_sep.ln());
        let mut out = Vec::with_capacity(self.count);
        for i in 0..self.count {
            let sep = rng.random_range(lo..=hi).exp();
            let dir = unit_vector(&mut rng, d);
            let room = (self.radius - sep).max(0.0);
            let (x, y) = match i % 10 {
                0..=5 => {
                    let x = in_ball(&mut rng, d, room);
                    let y = x.iter().zip(&dir).map(|(a, u)| a + sep * u).collect();
                    (x, y)
                }
                6 | 7 => {
                    let mut x = vec![0.0; d];
                    x[rng.random_range(0..d)] = rng.random_range(-room..=room);
                    let mut y = x.clone();
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    y[rng.random_range(0..d)] += sign * sep;
                    (x, y)
                }
                8 => {
                    let r0 = rng.random_range(-8.0f64..0.0).exp2() * room.min(1.0);
                    let x = in_ball(&mut rng, d, r0);
                    let y = x.iter().zip(&dir).map(|(a, u)| a + sep * u).collect();
                    (x, y)
                }
                _ => {
                    let x: Vec<f64> = dir.iter().map(|u| sep * u).collect();
                    (x, vec![0.0; d])
                }
            };
            let (x, y) = if rng.random::<bool>() { (x, y) } else { (y, x) };
            let t = rng.random_range(0.0..=self.horizon);
            let slack = 1.0 + 1e-12;
            if norm(&x) > self.radius * slack || norm(&y) > self.radius * slack || dist(&x, &y) > self.c0 * slack {
                return Err(SdeError::Internal(format!(
                    "sampler produced an out-of-region pair at index {i}"
                )));
            }
            out.push((x, y, t));
        }
        Ok(out)
    }

    /// Points `(x, t)` with `inner_radius ≤ |x| ≤ R`, norms log-spaced.
    ///
    /// Every tenth point is axis-aligned; when `inner_radius = 0` the first
    /// point is the origin.
    pub fn points(&self, d: usize) -> Result<Vec<(Vec<f64>, f64)>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let lo = self.inner_radius.max(self.min_separation).min(self.radius).ln();
        let hi = self.radius.ln();
        let mut out = Vec::with_capacity(self.count);
        for i in 0..self.count {
            let rho = rng.random_range(lo..=hi).exp();
            let x = if i == 0 && self.inner_radius == 0.0 {
                vec![0.0; d]
            } else if i % 10 == 9 {
                let mut x = vec![0.0; d];
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                x[rng.random_range(0..d)] = sign * rho;
                x
            } else {
                unit_vector(&mut rng, d).into_iter().map(|u| rho * u).collect()
            };
            let t = rng.random_range(0.0..=self.horizon);
            let n = norm(&x);
            if n > self.radius * (1.0 + 1e-12) || (i > 0 && n < self.inner_radius * (1.0 - 1e-12)) {
                return Err(SdeError::Internal(format!(
                    "sampler produced an out-of-region point at index {i}"
                )));
            }
            out.push((x, t));
        }
        Ok(out)
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let n = norm(&v);
        if n > 1e-3 && n <= 1.0 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

fn in_ball(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Vec<f64> {
    let u = unit_vector(rng, d);
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    u.into_iter().map(|c| r * c).collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// A margin with the magnitude of its largest term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margin {
    pub value: f64,
    pub scale: f64,
}

impl Margin {
    fn of(terms: &[f64], value: f64) -> Self {
        Margin {
            value,
            scale: terms.iter().fold(0.0f64, |a, v| a.max(v.abs())),
        }
    }

    pub fn tolerance(&self) -> f64 {
        REL_TOL * (1.0 + self.scale)
    }

    pub fn excess(&self) -> f64 {
        self.value - self.tolerance()
    }
}

struct Diffs {
    hs: f64,
    inner: f64,
    sep_sq: f64,
}

fn pair_diffs(system: &dyn SdeSystem, t: f64, x: &[f64], y: &[f64]) -> Result<Diffs> {
    let (d, m) = (system.dim(), system.noise_dim());
    if x.len() != d || y.len() != d {
        return Err(SdeError::usage(format!("points must have length d = {d}")));
    }
    let mut db = vec![0.0; d];
    let mut ds = vec![0.0; d * m];
    system.drift_diff(t, x, y, &mut db);
    system.diffusion_diff(t, x, y, &mut ds);
    crate::model::first_nonfinite("drift difference", t, &db)?;
    crate::model::first_nonfinite("diffusion difference", t, &ds)?;
    let dx: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(Diffs {
        hs: ds.iter().map(|v| v * v).sum(),
        inner: dot(&dx, &db),
        sep_sq: dot(&dx, &dx),
    })
}

pub fn monotonicity_margin(
    system: &dyn SdeSystem,
    eta: &ControlFunction,
    g: &ScalarFn,
    t: f64,
    x: &[f64],
    y: &[f64],
) -> Result<Margin> {
    let diffs = pair_diffs(system, t, x, y)?;
    let ctrl = g.eval(t) * eta.eval(diffs.sep_sq)?;
    let inner = 2.0 * diffs.inner;
    Ok(Margin::of(&[diffs.hs, inner, ctrl], diffs.hs + inner - ctrl))
}

pub fn confluence_margin(
    system: &dyn SdeSystem,
    gamma_r: &ControlFunction,
    k: f64,
    x: &[f64],
    y: &[f64],
) -> Result<Margin> {
    check_k(k)?;
    let diffs = pair_diffs(system, 0.0, x, y)?;
    let inner = 2.0 / (2.0 * k - 1.0) * diffs.inner;
    let ctrl = gamma_r.eval(diffs.sep_sq)?;
    Ok(Margin::of(&[diffs.hs, inner, ctrl], diffs.hs - inner - ctrl))
}

struct PointTerms {
    hs: f64,
    inner: f64,
    sigma_t_x_sq: f64,
    norm_sq: f64,
}

fn point_terms(system: &dyn SdeSystem, t: f64, x: &[f64]) -> Result<PointTerms> {
    let b = crate::model::drift_eval(system, t, x)?;
    let s = crate::model::diffusion_eval(system, t, x)?;
    let stx = s.transpose_mul(x);
    Ok(PointTerms {
        hs: s.hs_norm_sq(),
        inner: 2.0 * dot(x, &b),
        sigma_t_x_sq: dot(&stx, &stx),
        norm_sq: dot(x, x),
    })
}

pub fn coercivity_margin(
    system: &dyn SdeSystem,
    gamma: &ControlFunction,
    f: &ScalarFn,
    t: f64,
    x: &[f64],
) -> Result<Margin> {
    let p = point_terms(system, t, x)?;
    let rhs = f.eval(t) * (gamma.eval(p.norm_sq)? + 1.0);
    Ok(Margin::of(&[p.hs, p.inner, rhs], p.hs + p.inner - rhs))
}

pub fn moment_margin(system: &dyn SdeSystem, f: &ScalarFn, t: f64, x: &[f64]) -> Result<Margin> {
    let p = point_terms(system, t, x)?;
    let rhs = f.eval(t) * (p.norm_sq + 1.0);
    let lhs = (p.hs + p.inner).max(p.sigma_t_x_sq);
    Ok(Margin::of(&[p.hs, p.inner, p.sigma_t_x_sq, rhs], lhs - rhs))
}

/// `x(γ_R′(x) + 1)/γ_R(x)`.
pub fn k_ratio(gamma_r: &ControlFunction, x: f64) -> Result<f64> {
    let g = gamma_r.eval(x)?;
    let dg = gamma_r.derivative(x)?;
    Ok(x * (dg + 1.0) / g)
}

fn check_k(k: f64) -> Result<()> {
    if k > 0.5 && k.is_finite() {
        Ok(())
    } else {
        Err(SdeError::usage(format!("K must exceed 1/2, got {k}")))
    }
}

/// Spec of the sampling recorded in each report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub count: usize,
    pub radius: f64,
    pub inner_radius: f64,
    pub c0: f64,
    pub min_separation: f64,
    pub horizon: f64,
    pub seed: u64,
    pub method: String,
}

impl SamplingSpec {
    fn from_sampler(s: &Sampler, method: &str) -> Self {
        SamplingSpec {
            count: s.count,
            radius: s.radius,
            inner_radius: s.inner_radius,
            c0: s.c0,
            min_separation: s.min_separation,
            horizon: s.horizon,
            seed: s.seed,
            method: method.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition_id: ConditionId,
    pub samples_evaluated: usize,
    /// Margin at the point exceeding its tolerance by the most.
    pub worst_margin: f64,
    pub worst_point: WorstPoint,
    pub verdict: Verdict,
    /// Tolerance at the worst point; `violated` iff `worst_margin > tolerance`.
    pub tolerance: f64,
    pub sampling_spec: SamplingSpec,
}

struct Worst {
    excess: f64,
    margin: Margin,
    point: WorstPoint,
}

fn reduce<I>(id: ConditionId, items: I, spec: SamplingSpec) -> Result<ConditionReport>
where
    I: IntoIterator<Item = Result<(Margin, WorstPoint)>>,
{
    let mut worst: Option<Worst> = None;
    let mut count = 0;
    for item in items {
        let (margin, point) = item?;
        count += 1;
        let excess = margin.excess();
        // NaN margins count as violations
        let excess = if excess.is_nan() { f64::INFINITY } else { excess };
        if worst.as_ref().is_none_or(|w| excess > w.excess) {
            worst = Some(Worst { excess, margin, point });
        }
    }
    let w = worst.ok_or_else(|| SdeError::usage("no samples evaluated"))?;
    let tolerance = w.margin.tolerance();
    let verdict = if w.margin.value > tolerance || w.margin.value.is_nan() {
        Verdict::Violated
    } else {
        Verdict::NoViolationFound
    };
    Ok(ConditionReport {
        condition_id: id,
        samples_evaluated: count,
        worst_margin: w.margin.value,
        worst_point: w.point,
        verdict,
        tolerance,
        sampling_spec: spec,
    })
}

/// Locally weak monotonicity over pairs with `|x| ∨ |y| ≤ R`, `|x − y| ≤ c₀`.
pub fn check_monotonicity(
    system: &dyn SdeSystem,
    eta: &ControlFunction,
    g: &ScalarFn,
    sampler: &Sampler,
) -> Result<ConditionReport> {
    let pairs = sampler.pairs(system.dim())?;
    reduce(
        ConditionId::Monotonicity,
        pairs.into_iter().map(|(x, y, t)| {
            let m = monotonicity_margin(system, eta, g, t, &x, &y)?;
            Ok((m, WorstPoint { x, y: Some(y), t }))
        }),
        SamplingSpec::from_sampler(sampler, "stratified pairs"),
    )
}

/// Coercivity over points with `|x| ≥ sampler.inner_radius`.
pub fn check_coercivity(
    system: &dyn SdeSystem,
    gamma: &ControlFunction,
    f: &ScalarFn,
    sampler: &Sampler,
) -> Result<ConditionReport> {
    let points = sampler.points(system.dim())?;
    reduce(
        ConditionId::Coercivity,
        points.into_iter().map(|(x, t)| {
            let m = coercivity_margin(system, gamma, f, t, &x)?;
            Ok((m, WorstPoint { x, y: None, t }))
        }),
        SamplingSpec::from_sampler(sampler, "log-radial points"),
    )
}

pub fn check_moment_condition(system: &dyn SdeSystem, f: &ScalarFn, sampler: &Sampler) -> Result<ConditionReport> {
    let points = sampler.points(system.dim())?;
    reduce(
        ConditionId::Moment,
        points.into_iter().map(|(x, t)| {
            let m = moment_margin(system, f, t, &x)?;
            Ok((m, WorstPoint { x, y: None, t }))
        }),
        SamplingSpec::from_sampler(sampler, "log-radial points"),
    )
}

/// Non-confluence condition for a time-homogeneous model.
pub fn check_confluence_condition(
    system: &dyn SdeSystem,
    gamma_r: &ControlFunction,
    k: f64,
    sampler: &Sampler,
) -> Result<ConditionReport> {
    check_k(k)?;
    let pairs = sampler.pairs(system.dim())?;
    reduce(
        ConditionId::Confluence,
        pairs.into_iter().map(|(x, y, _)| {
            let m = confluence_margin(system, gamma_r, k, &x, &y)?;
            Ok((m, WorstPoint { x, y: Some(y), t: 0.0 }))
        }),
        SamplingSpec::from_sampler(sampler, "stratified pairs"),
    )
}

/// Ratio constraint on `γ_R` over `grid` log-spaced points in `[10⁻¹²c₀, c₀]`.
pub fn check_k_ratio(gamma_r: &ControlFunction, k: f64, c0: f64, grid: usize) -> Result<ConditionReport> {
    check_k(k)?;
    if !(c0 > 0.0 && c0 < 1.0) {
        return Err(SdeError::usage(format!("c0 must lie in (0, 1), got {c0}")));
    }
    if grid < 2 {
        return Err(SdeError::usage("k-ratio grid needs at least 2 points"));
    }
    let lo = (c0 * 1e-12).ln();
    let hi = c0.ln();
    let spec = SamplingSpec {
        count: grid,
        radius: c0,
        inner_radius: c0 * 1e-12,
        c0,
        min_separation: c0 * 1e-12,
        horizon: 0.0,
        seed: 0,
        method: "log-spaced grid".to_string(),
    };
    reduce(
        ConditionId::KRatio,
        (0..grid).map(|i| {
            let x = if i + 1 == grid {
                c0
            } else {
                (lo + (hi - lo) * i as f64 / (grid - 1) as f64).exp()
            };
            let ratio = k_ratio(gamma_r, x)?;
            let value = if ratio.is_nan() { f64::INFINITY } else { ratio - k };
            Ok((
                Margin::of(&[ratio, k], value),
                WorstPoint {
                    x: vec![x],
                    y: None,
                    t: 0.0,
                },
            ))
        }),
        spec,
    )
}
