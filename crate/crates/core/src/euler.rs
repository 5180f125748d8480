//! Euler approximation on dyadic grids.
//!
//! With `n = 2^ℓ` steps of size `h = T/n`, the scheme freezes the
//! coefficients at the left endpoint `κ(n, t) = ⌊tn⌋/n` of each cell:
//!
//! ```text
//! X_{k+1} = X_k + b(t_k, X_k) h + σ(t_k, X_k) ΔB_k
//! ```
//!
//! Runs stop at the first state with `|X| ≥ R_stop` (the computable proxy for
//! the lifetime) or with a non-finite coordinate. Coupled runs drive two
//! resolutions, or two starting points, with the same [`BrownianTree`].

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdeError};
use crate::model::{first_nonfinite, SdeSystem};
use crate::noise::{BrownianTree, MAX_LEVEL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerConfig {
    pub level: u32,
    pub horizon: f64,
    pub r_stop: f64,
    pub x0: Vec<f64>,
    /// Threshold for `τ_{n,m}`, the first time `ξ ≥ ε₀`.
    pub eps0: f64,
}

impl EulerConfig {
    pub fn new(level: u32, horizon: f64, r_stop: f64, x0: Vec<f64>) -> Self {
        EulerConfig {
            level,
            horizon,
            r_stop,
            x0,
            eps0: 0.5,
        }
    }

    pub fn step(&self) -> f64 {
        self.horizon / (1u64 << self.level) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.level > MAX_LEVEL {
            return Err(SdeError::Resource(format!(
                "level {} exceeds the guard ℓ ≤ {MAX_LEVEL}",
                self.level
            )));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(SdeError::usage(format!("horizon must be > 0, got {}", self.horizon)));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::usage("initial state must be finite"));
        }
        if !(self.r_stop > norm(&self.x0)) {
            return Err(SdeError::usage(format!(
                "R_stop = {} must exceed |x0| = {}",
                self.r_stop,
                norm(&self.x0)
            )));
        }
        if !(self.eps0 > 0.0) {
            return Err(SdeError::usage(format!("eps0 must be > 0, got {}", self.eps0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Radius,
    Nonfinite,
}

impl StopReason {
    /// Code written to the `stopped` CSV column; running rows carry 0.
    pub fn code(self) -> u8 {
        match self {
            StopReason::Radius => 1,
            StopReason::Nonfinite => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    /// Index into the record of the state that triggered the stop.
    pub index: usize,
    pub time: f64,
    pub reason: StopReason,
}

/// A simulated trajectory. After a stop the record holds no further states.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Row-major states, `times.len() × dim`.
    pub states: Vec<f64>,
    pub stopped_at: Option<Stop>,
    /// Running maximum of `|X_k|` over recorded states.
    pub sup_norm_running: Vec<f64>,
}

impl PathRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn sup_norm(&self) -> f64 {
        *self.sup_norm_running.last().unwrap_or(&0.0)
    }

    pub fn exploded(&self) -> bool {
        self.stopped_at.is_some()
    }

    fn push(&mut self, t: f64, x: &[f64]) {
        let n = norm(x);
        let prev = self.sup_norm_running.last().copied().unwrap_or(0.0);
        self.times.push(t);
        self.states.extend_from_slice(x);
        self.sup_norm_running
            .push(if n > prev || n.is_nan() { n } else { prev });
    }

    /// CSV with header `t,x1..xd,stopped`; `stopped` is 0 for running rows,
    /// 1 for a radius stop and 2 for a non-finite stop.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "t")?;
        for i in 1..=self.dim {
            write!(w, ",x{i}")?;
        }
        writeln!(w, ",stopped")?;
        for k in 0..self.len() {
            write!(w, "{}", fmt_f64(self.times[k]))?;
            for v in self.state(k) {
                write!(w, ",{}", fmt_f64(*v))?;
            }
            writeln!(w, ",{}", self.stop_code(k))?;
        }
        Ok(())
    }

    fn stop_code(&self, k: usize) -> u8 {
        match self.stopped_at {
            Some(s) if s.index == k => s.reason.code(),
            _ => 0,
        }
    }
}

/// 17 significant digits, `.` decimal separator.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Euclidean norm, scaled so that large finite states do not overflow.
pub(crate) fn norm(x: &[f64]) -> f64 {
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * x.iter().map(|v| (v / scale) * (v / scale)).sum::<f64>().sqrt()
}

fn dist_sq(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Reusable buffers for one Euler step.
pub struct Stepper<'a> {
    system: &'a dyn SdeSystem,
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(system: &'a dyn SdeSystem) -> Self {
        Stepper {
            system,
            drift: vec![0.0; system.dim()],
            diffusion: vec![0.0; system.dim() * system.noise_dim()],
        }
    }

    /// Evaluates and checks the coefficients at `(t, x)`.
    fn coefficients(&mut self, t: f64, x: &[f64]) -> Result<()> {
        self.system.drift(t, x, &mut self.drift);
        first_nonfinite("drift", t, &self.drift)?;
        self.system.diffusion(t, x, &mut self.diffusion);
        first_nonfinite("diffusion", t, &self.diffusion)?;
        Ok(())
    }

    /// `x ← x + b(t, x) h + σ(t, x) dB`.
    pub fn step(&mut self, t: f64, x: &mut [f64], h: f64, db: &[f64]) -> Result<()> {
        self.coefficients(t, x)?;
        let m = self.system.noise_dim();
        for (i, xi) in x.iter_mut().enumerate() {
            let row = &self.diffusion[i * m..(i + 1) * m];
            let noise: f64 = row.iter().zip(db).map(|(s, b)| s * b).sum();
            *xi += self.drift[i] * h + noise;
        }
        Ok(())
    }

    /// `|p(t)|` at the sub-grid points of one cell, where
    /// `p(t) = X(κ(t)) − X(t) = −(b·(t − t_k) + σ·(B_t − B_{t_k}))`;
    /// returns the largest. Uses the coefficients from the last `step`.
    fn cell_defect(&self, sub_h: f64, sub_increments: &[f64]) -> f64 {
        let (d, m) = (self.system.dim(), self.system.noise_dim());
        let mut partial = vec![0.0; m];
        let mut worst: f64 = 0.0;
        let subs = sub_increments.len() / m;
        // the last sub-point is the next grid point, where p vanishes
        for j in 0..subs.saturating_sub(1) {
            for (c, p) in partial.iter_mut().enumerate() {
                *p += sub_increments[j * m + c];
            }
            let elapsed = (j + 1) as f64 * sub_h;
            let mut sq = 0.0;
            for i in 0..d {
                let row = &self.diffusion[i * m..(i + 1) * m];
                let noise: f64 = row.iter().zip(&partial).map(|(s, b)| s * b).sum();
                let p = self.drift[i] * elapsed + noise;
                sq += p * p;
            }
            worst = worst.max(sq.sqrt());
        }
        worst
    }
}

struct RunSpec<'a> {
    x0: &'a [f64],
    level: u32,
    horizon: f64,
    r_stop: f64,
    increments: &'a [f64],
    /// Record every `keep_every`-th state.
    keep_every: usize,
    /// Finer increments for the defect diagnostic, `ratio` per cell.
    defect: Option<(&'a [f64], usize)>,
}

fn run(system: &dyn SdeSystem, spec: &RunSpec<'_>) -> Result<(PathRecord, Vec<f64>)> {
    let d = system.dim();
    let m = system.noise_dim();
    let steps = 1usize << spec.level;
    let h = spec.horizon / steps as f64;
    let mut stepper = Stepper::new(system);
    let mut x = spec.x0.to_vec();
    let mut rec = PathRecord {
        dim: d,
        times: Vec::with_capacity(steps / spec.keep_every + 1),
        states: Vec::with_capacity((steps / spec.keep_every + 1) * d),
        stopped_at: None,
        sup_norm_running: Vec::with_capacity(steps / spec.keep_every + 1),
    };
    let mut defect = Vec::new();
    rec.push(0.0, &x);
    if spec.defect.is_some() {
        defect.push(0.0);
    }
    for k in 0..steps {
        let t = k as f64 * h;
        stepper.step(t, &mut x, h, &spec.increments[k * m..(k + 1) * m])?;
        if let Some((sub, ratio)) = spec.defect {
            let cell = &sub[k * ratio * m..(k + 1) * ratio * m];
            defect.push(stepper.cell_defect(h / ratio as f64, cell));
        }
        let t_next = (k + 1) as f64 * h;
        let reason = if x.iter().any(|v| !v.is_finite()) {
            Some(StopReason::Nonfinite)
        } else if norm(&x) >= spec.r_stop {
            Some(StopReason::Radius)
        } else {
            None
        };
        if let Some(reason) = reason {
            rec.push(t_next, &x);
            rec.stopped_at = Some(Stop {
                index: rec.len() - 1,
                time: t_next,
                reason,
            });
            break;
        }
        if (k + 1) % spec.keep_every == 0 {
            rec.push(t_next, &x);
        }
    }
    Ok((rec, defect))
}

fn check_compat(system: &dyn SdeSystem, config: &EulerConfig, tree: &BrownianTree, level: u32) -> Result<()> {
    config.validate()?;
    if config.x0.len() != system.dim() {
        return Err(SdeError::usage(format!(
            "x0 has length {} but model {} has d = {}",
            config.x0.len(),
            system.label(),
            system.dim()
        )));
    }
    if tree.noise_dim() != system.noise_dim() {
        return Err(SdeError::usage(format!(
            "tree has m = {} but model {} has m = {}",
            tree.noise_dim(),
            system.label(),
            system.noise_dim()
        )));
    }
    if tree.horizon() != config.horizon {
        return Err(SdeError::usage(format!(
            "tree horizon {} differs from configured horizon {}",
            tree.horizon(),
            config.horizon
        )));
    }
    if tree.finest_level() < level {
        return Err(SdeError::usage(format!(
            "tree level {} is coarser than requested level {level}",
            tree.finest_level()
        )));
    }
    Ok(())
}

/// Euler path at `config.level` driven by `tree`.
pub fn euler_path(system: &dyn SdeSystem, config: &EulerConfig, tree: &BrownianTree) -> Result<PathRecord> {
    check_compat(system, config, tree, config.level)?;
    let incs = tree.increments_at_level(config.level)?;
    let (rec, _) = run(
        system,
        &RunSpec {
            x0: &config.x0,
            level: config.level,
            horizon: config.horizon,
            r_stop: config.r_stop,
            increments: &incs,
            keep_every: 1,
            defect: None,
        },
    )?;
    Ok(rec)
}

/// Two paths sharing one Brownian tree, with the diagnostics comparing them.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRecord {
    /// Coarse path (resolution coupling) or the path from `x0` (start coupling).
    pub first: PathRecord,
    /// Fine path sampled on the coarse grid, or the path from `y0`.
    pub second: PathRecord,
    /// Common grid times where both paths are defined.
    pub times: Vec<f64>,
    /// `ξ_t = |X − Y|²` on `times`.
    pub xi: Vec<f64>,
    /// First time `ξ ≥ ε₀`.
    pub tau_nm: Option<f64>,
    /// `min √ξ` over `times`.
    pub min_distance: f64,
    /// Largest `|p(t)|` for the first path over the cell ending at each time;
    /// zero at `t = 0` and when no finer increments exist.
    pub defect: Vec<f64>,
}

impl CoupledRecord {
    fn assemble(first: PathRecord, second: PathRecord, defect: Vec<f64>, eps0: f64) -> Self {
        let mut times = Vec::new();
        let mut xi = Vec::new();
        for k in 0..first.len().min(second.len()) {
            if first.times[k] != second.times[k] {
                break;
            }
            let v = dist_sq(first.state(k), second.state(k));
            times.push(first.times[k]);
            xi.push(v);
        }
        let tau_nm = xi.iter().position(|v| *v >= eps0).map(|k| times[k]);
        let min_sq = xi.iter().copied().fold(f64::INFINITY, f64::min);
        let defect = if defect.is_empty() {
            vec![0.0; times.len()]
        } else {
            defect[..times.len()].to_vec()
        };
        CoupledRecord {
            first,
            second,
            times,
            xi,
            tau_nm,
            min_distance: min_sq.sqrt(),
            defect,
        }
    }

    /// First grid time with `√ξ ≤ ε`.
    pub fn first_time_below(&self, eps: f64) -> Option<f64> {
        let e2 = eps * eps;
        self.xi.iter().position(|v| *v <= e2).map(|k| self.times[k])
    }

    pub fn max_xi(&self) -> f64 {
        self.xi.iter().copied().fold(0.0, f64::max)
    }

    pub fn either_stopped(&self) -> bool {
        self.first.exploded() || self.second.exploded()
    }

    /// CSV with header `t,x1..xd,stopped,xi,defect_norm`; the state columns
    /// are the first path.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.first.dim;
        write!(w, "t")?;
        for i in 1..=d {
            write!(w, ",x{i}")?;
        }
        writeln!(w, ",stopped,xi,defect_norm")?;
        for k in 0..self.times.len() {
            write!(w, "{}", fmt_f64(self.times[k]))?;
            for v in self.first.state(k) {
                write!(w, ",{}", fmt_f64(*v))?;
            }
            let stop = self.first.stop_code(k).max(self.second.stop_code(k));
            writeln!(w, ",{},{},{}", stop, fmt_f64(self.xi[k]), fmt_f64(self.defect[k]))?;
        }
        Ok(())
    }
}

/// Runs levels `coarse < fine` on the same tree; `ξ` lives on the coarse grid.
pub fn coupled_resolutions(
    system: &dyn SdeSystem,
    coarse: u32,
    fine: u32,
    config: &EulerConfig,
    tree: &BrownianTree,
) -> Result<CoupledRecord> {
    if coarse >= fine {
        return Err(SdeError::usage(format!(
            "coupled resolutions need coarse < fine, got {coarse} and {fine}"
        )));
    }
    check_compat(system, config, tree, fine)?;
    let fine_incs = tree.increments_at_level(fine)?;
    let coarse_incs = tree.increments_at_level(coarse)?;
    let ratio = 1usize << (fine - coarse);
    let base = RunSpec {
        x0: &config.x0,
        level: coarse,
        horizon: config.horizon,
        r_stop: config.r_stop,
        increments: &coarse_incs,
        keep_every: 1,
        defect: Some((&fine_incs, ratio)),
    };
    let (first, defect) = run(system, &base)?;
    let (second, _) = run(
        system,
        &RunSpec {
            level: fine,
            increments: &fine_incs,
            keep_every: ratio,
            defect: None,
            ..base
        },
    )?;
    Ok(CoupledRecord::assemble(first, second, defect, config.eps0))
}

/// Runs `x0` and `y0` at `config.level` on the same tree. `config.x0` is
/// ignored.
pub fn coupled_starts(
    system: &dyn SdeSystem,
    config: &EulerConfig,
    x0: &[f64],
    y0: &[f64],
    tree: &BrownianTree,
) -> Result<CoupledRecord> {
    if x0 == y0 {
        return Err(SdeError::usage("coupled starts need x0 ≠ y0"));
    }
    let cfg_x = EulerConfig {
        x0: x0.to_vec(),
        ..config.clone()
    };
    let cfg_y = EulerConfig {
        x0: y0.to_vec(),
        ..config.clone()
    };
    check_compat(system, &cfg_x, tree, config.level)?;
    check_compat(system, &cfg_y, tree, config.level)?;
    let incs = tree.increments_at_level(config.level)?;
    let ratio = 1usize << (tree.finest_level() - config.level);
    let spec = RunSpec {
        x0,
        level: config.level,
        horizon: config.horizon,
        r_stop: config.r_stop,
        increments: &incs,
        keep_every: 1,
        defect: (ratio > 1).then_some((tree.finest_increments(), ratio)),
    };
    let (first, defect) = run(system, &spec)?;
    let (second, _) = run(
        system,
        &RunSpec {
            x0: y0,
            defect: None,
            ..spec
        },
    )?;
    Ok(CoupledRecord::assemble(first, second, defect, config.eps0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_cube_root, DeterministicBlowup, FnSystem, OrnsteinUhlenbeck};

    fn decay() -> FnSystem {
        FnSystem::scalar("decay", |x| -x, |_| 0.0)
    }

    #[test]
    fn zero_system_stays_put() {
        let sys = FnSystem::zero(2, 2);
        let tree = BrownianTree::sample(2, 1.0, 6, 1, 0).unwrap();
        let cfg = EulerConfig::new(6, 1.0, 10.0, vec![0.5, -1.0]);
        let rec = euler_path(&sys, &cfg, &tree).unwrap();
        assert_eq!(rec.len(), 65);
        assert!(rec.stopped_at.is_none());
        for k in 0..rec.len() {
            assert_eq!(rec.state(k), &[0.5, -1.0]);
        }
    }

    #[test]
    fn linear_decay_matches_recursion() {
        let tree = BrownianTree::sample(1, 1.0, 8, 1, 0).unwrap();
        let cfg = EulerConfig::new(5, 1.0, 10.0, vec![1.0]);
        let rec = euler_path(&decay(), &cfg, &tree).unwrap();
        let h = cfg.step();
        let mut expect = 1.0f64;
        for k in 0..rec.len() {
            assert_eq!(rec.state(k)[0], expect);
            assert_eq!(rec.times[k], k as f64 * h);
            expect *= 1.0 - h;
        }
    }

    #[test]
    fn blowup_stops_near_half_pi() {
        let tree = BrownianTree::sample(1, 3.0, 10, 1, 0).unwrap();
        let cfg = EulerConfig::new(10, 3.0, 1e6, vec![0.0]);
        let rec = euler_path(&DeterministicBlowup, &cfg, &tree).unwrap();
        let stop = rec.stopped_at.expect("must stop");
        assert_eq!(stop.reason, StopReason::Radius);
        assert!((1.4..=1.7).contains(&stop.time), "{}", stop.time);
        assert_eq!(stop.index, rec.len() - 1);
        for k in 0..rec.len() - 1 {
            assert!(rec.state(k)[0].abs() < 1e6);
        }
    }

    #[test]
    fn nonfinite_stop_is_distinguished() {
        // radius guard disabled; finite drift pushes the state to inf
        let sys = FnSystem::scalar("overflow", |_| 1.7e308, |_| 0.0);
        let tree = BrownianTree::sample(1, 1.0, 0, 1, 0).unwrap();
        let cfg = EulerConfig::new(0, 1.0, f64::INFINITY, vec![1.7e308]);
        let rec = euler_path(&sys, &cfg, &tree).unwrap();
        assert_eq!(rec.stopped_at.unwrap().reason, StopReason::Nonfinite);
    }

    #[test]
    fn nonfinite_coefficient_at_finite_state_errors() {
        let sys = FnSystem::scalar("pole", |x| 1.0 / (x - 1.0), |_| 0.0);
        let tree = BrownianTree::sample(1, 1.0, 2, 1, 0).unwrap();
        let cfg = EulerConfig::new(2, 1.0, 10.0, vec![1.0]);
        assert!(matches!(
            euler_path(&sys, &cfg, &tree),
            Err(SdeError::ModelDomain { what: "drift", .. })
        ));
    }

    #[test]
    fn config_and_tree_mismatches() {
        let tree = BrownianTree::sample(1, 1.0, 4, 1, 0).unwrap();
        let sys = decay();
        assert!(euler_path(&sys, &EulerConfig::new(5, 1.0, 10.0, vec![1.0]), &tree).is_err());
        assert!(euler_path(&sys, &EulerConfig::new(4, 2.0, 10.0, vec![1.0]), &tree).is_err());
        assert!(euler_path(&sys, &EulerConfig::new(4, 1.0, 10.0, vec![1.0, 2.0]), &tree).is_err());
        assert!(euler_path(&sys, &EulerConfig::new(4, 1.0, 0.5, vec![1.0]), &tree).is_err());
        assert!(matches!(
            EulerConfig::new(30, 1.0, 10.0, vec![1.0]).validate(),
            Err(SdeError::Resource(_))
        ));
    }

    #[test]
    fn replay_reproduces_each_step() {
        let sys = make_cube_root(2).unwrap();
        let tree = BrownianTree::sample(2, 1.0, 9, 17, 2).unwrap();
        let cfg = EulerConfig::new(7, 1.0, 1e6, vec![1.0, -0.5]);
        let rec = euler_path(&sys, &cfg, &tree).unwrap();
        let incs = tree.increments_at_level(7).unwrap();
        let mut stepper = Stepper::new(&sys);
        for k in 0..rec.len() - 1 {
            let mut x = rec.state(k).to_vec();
            stepper
                .step(rec.times[k], &mut x, cfg.step(), &incs[2 * k..2 * k + 2])
                .unwrap();
            assert_eq!(x, rec.state(k + 1));
        }
        for w in rec.sup_norm_running.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn coupled_resolutions_rejects_degenerate_levels() {
        let tree = BrownianTree::sample(1, 1.0, 8, 1, 0).unwrap();
        let cfg = EulerConfig::new(4, 1.0, 10.0, vec![1.0]);
        assert!(matches!(
            coupled_resolutions(&decay(), 6, 6, &cfg, &tree),
            Err(SdeError::Usage(_))
        ));
        assert!(coupled_resolutions(&decay(), 6, 9, &cfg, &tree).is_err());
    }

    #[test]
    fn coupled_resolutions_zero_system() {
        let tree = BrownianTree::sample(1, 1.0, 8, 1, 0).unwrap();
        let cfg = EulerConfig::new(4, 1.0, 10.0, vec![1.0]);
        let c = coupled_resolutions(&FnSystem::zero(1, 1), 3, 8, &cfg, &tree).unwrap();
        assert_eq!(c.xi.len(), 9);
        assert!(c.xi.iter().all(|v| *v == 0.0));
        assert!(c.defect.iter().all(|v| *v == 0.0));
        assert_eq!(c.tau_nm, None);
    }

    #[test]
    fn coupled_resolutions_equals_independent_runs() {
        let sys = OrnsteinUhlenbeck { theta: 1.0, vol: 1.0 };
        let tree = BrownianTree::sample(1, 1.0, 10, 5, 1).unwrap();
        let cfg = EulerConfig::new(0, 1.0, 1e6, vec![1.0]);
        let c = coupled_resolutions(&sys, 6, 10, &cfg, &tree).unwrap();
        let coarse = euler_path(
            &sys,
            &EulerConfig {
                level: 6,
                ..cfg.clone()
            },
            &tree,
        )
        .unwrap();
        let fine = euler_path(
            &sys,
            &EulerConfig {
                level: 10,
                ..cfg.clone()
            },
            &tree,
        )
        .unwrap();
        assert_eq!(c.first.states, coarse.states);
        for k in 0..c.second.len() {
            assert_eq!(c.second.state(k), fine.state(16 * k));
            assert_eq!(c.second.times[k], coarse.times[k]);
        }
        for (k, v) in c.xi.iter().enumerate() {
            let diff = coarse.state(k)[0] - fine.state(16 * k)[0];
            assert_eq!(*v, diff * diff);
        }
        assert_eq!(c.xi[0], 0.0);
        assert!(c.defect[1..].iter().any(|v| *v > 0.0));
    }

    #[test]
    fn defect_matches_direct_interpolation() {
        let sys = OrnsteinUhlenbeck { theta: 2.0, vol: 0.5 };
        let tree = BrownianTree::sample(1, 1.0, 6, 8, 0).unwrap();
        let cfg = EulerConfig::new(0, 1.0, 1e6, vec![0.3]);
        let c = coupled_resolutions(&sys, 3, 6, &cfg, &tree).unwrap();
        let fine = tree.increments_at_level(6).unwrap();
        let h_sub = 1.0 / 64.0;
        for k in 0..8 {
            let x = c.first.state(k)[0];
            let mut b_part = 0.0;
            let mut worst: f64 = 0.0;
            for j in 1..8 {
                b_part += fine[8 * k + j - 1];
                let p = -2.0 * x * (j as f64 * h_sub) + 0.5 * b_part;
                worst = worst.max(p.abs());
            }
            assert!((c.defect[k + 1] - worst).abs() < 1e-15);
        }
    }

    #[test]
    fn coupled_starts_examples() {
        let tree = BrownianTree::sample(1, 1.0, 8, 1, 0).unwrap();
        let cfg = EulerConfig::new(8, 1.0, 10.0, vec![0.0]);
        let z = coupled_starts(&FnSystem::zero(1, 1), &cfg, &[0.0], &[1.0], &tree).unwrap();
        assert_eq!(z.min_distance, 1.0);

        let c = coupled_starts(&decay(), &cfg, &[0.0], &[1.0], &tree).unwrap();
        let h = cfg.step();
        let expect = (1.0 - h).powi(256);
        assert!((c.min_distance - expect).abs() < 1e-14);
        assert!((c.min_distance - (-1.0f64).exp()).abs() < 2e-3);

        assert!(matches!(
            coupled_starts(&decay(), &cfg, &[0.5], &[0.5], &tree),
            Err(SdeError::Usage(_))
        ));
    }

    #[test]
    fn first_time_below_threshold() {
        let tree = BrownianTree::sample(1, 1.0, 4, 1, 0).unwrap();
        let cfg = EulerConfig::new(4, 1.0, 10.0, vec![0.0]);
        let c = coupled_starts(&decay(), &cfg, &[0.0], &[1.0], &tree).unwrap();
        let h = cfg.step();
        // distance (1−h)^k drops below 0.5 first at k = ceil(ln 0.5 / ln(1−h))
        let k = (0.5f64.ln() / (1.0 - h).ln()).ceil();
        assert_eq!(c.first_time_below(0.5), Some(k * h));
        assert_eq!(c.first_time_below(1e-3), None);
    }

    #[test]
    fn csv_layout() {
        let tree = BrownianTree::sample(2, 1.0, 2, 1, 0).unwrap();
        let cfg = EulerConfig::new(1, 1.0, 10.0, vec![1.0, 2.0]);
        let rec = euler_path(&FnSystem::zero(2, 2), &cfg, &tree).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "t,x1,x2,stopped");
        assert_eq!(
            lines[1],
            "0.0000000000000000e0,1.0000000000000000e0,2.0000000000000000e0,0"
        );
        assert_eq!(lines.len(), 4);
        assert!(!s.contains('\r'));

        let c = coupled_starts(&FnSystem::zero(2, 2), &cfg, &[0.0, 0.0], &[1.0, 0.0], &tree).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "t,x1,x2,stopped,xi,defect_norm");
    }
}
