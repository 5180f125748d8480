//! SDE models `dX = σ(t, X) dB + b(t, X) dt` with deterministic coefficients.
//!
//! A model is anything implementing [`SdeSystem`]. The built-in examples are
//! the cube-root model (Hölder coefficients that are not Lipschitz at the
//! origin), the planar rotation model with super-linear growth, and a few
//! oracle baselines with closed-form solutions.
//!
//! Fractional powers of negative reals follow the real cube-root
//! convention: `x^{1/3} = sign(x)·|x|^{1/3}` and `x^{2/3} = |x|^{2/3}`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdeError};
use crate::noise::BrownianTree;

/// Dense row-major matrix, used for diffusion coefficients (`d × m`).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Hilbert–Schmidt norm squared, `Σ_ij a_ij²`.
    pub fn hs_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `Aᵀ x` for `x` of length `rows`.
    pub fn transpose_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, xi) in x.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.data[i * self.cols + j] * xi;
            }
        }
        out
    }

    /// `A v` for `v` of length `cols`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

/// An SDE `dX = σ(t, X) dB + b(t, X) dt` with state dimension `d` and
/// noise dimension `m`.
///
/// Implementations write into caller-provided buffers; [`drift_eval`] and
/// [`diffusion_eval`] wrap them with shape and finiteness checks.
pub trait SdeSystem: Send + Sync {
    fn dim(&self) -> usize;

    fn noise_dim(&self) -> usize;

    fn label(&self) -> String;

    /// Writes `b(t, x)` into `out` (length `d`).
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Writes `σ(t, x)` row-major into `out` (length `d·m`).
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Writes `b(t, x) − b(t, y)` into `out`.
    ///
    /// Override when the naive difference loses relative precision for
    /// nearby points.
    fn drift_diff(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        let mut by = vec![0.0; out.len()];
        self.drift(t, x, out);
        self.drift(t, y, &mut by);
        for (o, v) in out.iter_mut().zip(by) {
            *o -= v;
        }
    }

    /// Writes `σ(t, x) − σ(t, y)` into `out`.
    fn diffusion_diff(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        let mut sy = vec![0.0; out.len()];
        self.diffusion(t, x, out);
        self.diffusion(t, y, &mut sy);
        for (o, v) in out.iter_mut().zip(sy) {
            *o -= v;
        }
    }

    /// Closed-form solution at time `t` driven by the Brownian path stored in
    /// `tree`, when one exists.
    fn exact_solution(&self, _t: f64, _x0: &[f64], _tree: &BrownianTree) -> Option<Vec<f64>> {
        None
    }
}

impl fmt::Debug for dyn SdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SdeSystem({}, d={}, m={})",
            self.label(),
            self.dim(),
            self.noise_dim()
        )
    }
}

fn check_input(system: &dyn SdeSystem, t: f64, x: &[f64]) -> Result<()> {
    if x.len() != system.dim() {
        return Err(SdeError::usage(format!(
            "state has length {} but model {} has d = {}",
            x.len(),
            system.label(),
            system.dim()
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(SdeError::usage(format!("time must be finite and ≥ 0, got {t}")));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(SdeError::usage(format!("state coordinate {i} is not finite")));
    }
    Ok(())
}

pub(crate) fn first_nonfinite(what: &'static str, t: f64, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(coordinate) => Err(SdeError::ModelDomain {
            what,
            coordinate,
            t,
            value: v[coordinate],
        }),
        None => Ok(()),
    }
}

/// Checked evaluation of the drift `b(t, x)`.
pub fn drift_eval(system: &dyn SdeSystem, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_input(system, t, x)?;
    let mut out = vec![0.0; system.dim()];
    system.drift(t, x, &mut out);
    first_nonfinite("drift", t, &out)?;
    Ok(out)
}

/// Checked evaluation of the diffusion matrix `σ(t, x)` (`d × m`).
pub fn diffusion_eval(system: &dyn SdeSystem, t: f64, x: &[f64]) -> Result<Matrix> {
    check_input(system, t, x)?;
    let mut m = Matrix::zeros(system.dim(), system.noise_dim());
    system.diffusion(t, x, &mut m.data);
    first_nonfinite("diffusion", t, &m.data)?;
    Ok(m)
}

/// Real cube root `sign(x)·|x|^{1/3}`.
#[inline]
pub fn signed_cbrt(x: f64) -> f64 {
    x.cbrt()
}

/// `|x|^{2/3}`.
#[inline]
pub fn abs_two_thirds(x: f64) -> f64 {
    let u = x.cbrt();
    u * u
}

/// `cbrt(x) − cbrt(y)` without cancellation, via
/// `u − v = (x − y) / (u² + uv + v²)`.
pub fn cbrt_diff(x: f64, y: f64) -> f64 {
    if x == y {
        return 0.0;
    }
    let (u, v) = (x.cbrt(), y.cbrt());
    if u.signum() != v.signum() || u == 0.0 || v == 0.0 {
        // no cancellation when the roots have opposite signs
        return u - v;
    }
    (x - y) / ((u * u + v * v) + u * v)
}

/// `σ_i(x) = x_i^{2/3}` (diagonal), `b_i(x) = −x_i^{1/3}`, with `m = d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubeRoot {
    pub d: usize,
}

impl SdeSystem for CubeRoot {
    fn dim(&self) -> usize {
        self.d
    }
    fn noise_dim(&self) -> usize {
        self.d
    }
    fn label(&self) -> String {
        format!("cube-root(d={})", self.d)
    }
    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -signed_cbrt(*xi);
        }
    }
    fn diffusion(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (i, xi) in x.iter().enumerate() {
            out[i * self.d + i] = abs_two_thirds(*xi);
        }
    }
    fn drift_diff(&self, _t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        for i in 0..self.d {
            out[i] = -cbrt_diff(x[i], y[i]);
        }
    }
    fn diffusion_diff(&self, _t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.d {
            // u² − v² = (u − v)(u + v)
            let (u, v) = (x[i].cbrt(), y[i].cbrt());
            let sum = if u.signum() == v.signum() {
                u + v
            } else {
                cbrt_diff(x[i], -y[i])
            };
            out[i * self.d + i] = cbrt_diff(x[i], y[i]) * sum;
        }
    }
}

/// Planar model with `m = 1`: `σ(x) = |x|^r (−x₂, x₁)ᵀ`, `b(x) = −|x|^{2r} x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    pub r: f64,
}

impl SdeSystem for Rotation {
    fn dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn label(&self) -> String {
        format!("rotation(r={})", self.r)
    }
    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let n2 = x[0] * x[0] + x[1] * x[1];
        let s = n2.powf(self.r);
        out[0] = -s * x[0];
        out[1] = -s * x[1];
    }
    fn diffusion(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let n2 = x[0] * x[0] + x[1] * x[1];
        let s = n2.powf(0.5 * self.r);
        out[0] = -s * x[1];
        out[1] = s * x[0];
    }
}

/// Ornstein–Uhlenbeck, `dX = −θX dt + vol dB`, `d = m = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrnsteinUhlenbeck {
    pub theta: f64,
    pub vol: f64,
}

impl SdeSystem for OrnsteinUhlenbeck {
    fn dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn label(&self) -> String {
        format!("ou(theta={}, vol={})", self.theta, self.vol)
    }
    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = -self.theta * x[0];
    }
    fn diffusion(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = self.vol;
    }
    /// `x₀e^{−θt} + vol·Σ e^{−θ(t−s_k)} ΔB_k` over the finest cells before `t`,
    /// with `s_k` the cell midpoint.
    fn exact_solution(&self, t: f64, x0: &[f64], tree: &BrownianTree) -> Option<Vec<f64>> {
        let h = tree.finest_step();
        let cells = cells_before(t, tree)?;
        let mut stoch = 0.0;
        for k in 0..cells {
            let mid = (k as f64 + 0.5) * h;
            stoch += (-self.theta * (t - mid)).exp() * tree.finest_increment(k)[0];
        }
        Some(vec![x0[0] * (-self.theta * t).exp() + self.vol * stoch])
    }
}

/// Geometric Brownian motion, `dX = μX dt + vol·X dB`, `d = m = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricBrownian {
    pub mu: f64,
    pub vol: f64,
}

impl SdeSystem for GeometricBrownian {
    fn dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn label(&self) -> String {
        format!("gbm(mu={}, vol={})", self.mu, self.vol)
    }
    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = self.mu * x[0];
    }
    fn diffusion(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = self.vol * x[0];
    }
    fn exact_solution(&self, t: f64, x0: &[f64], tree: &BrownianTree) -> Option<Vec<f64>> {
        let cells = cells_before(t, tree)?;
        let b_t: f64 = (0..cells).map(|k| tree.finest_increment(k)[0]).sum();
        let drift = (self.mu - 0.5 * self.vol * self.vol) * t;
        Some(vec![x0[0] * (drift + self.vol * b_t).exp()])
    }
}

/// Noiseless `dX = (1 + X²) dt`; explodes at `π/2 − arctan x₀`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeterministicBlowup;

impl DeterministicBlowup {
    pub fn blowup_time(&self, x0: f64) -> f64 {
        FRAC_PI_2 - x0.atan()
    }
}

impl SdeSystem for DeterministicBlowup {
    fn dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn label(&self) -> String {
        "deterministic-blowup".to_string()
    }
    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0 + x[0] * x[0];
    }
    fn diffusion(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn exact_solution(&self, t: f64, x0: &[f64], _tree: &BrownianTree) -> Option<Vec<f64>> {
        (t < self.blowup_time(x0[0])).then(|| vec![(t + x0[0].atan()).tan()])
    }
}

/// Number of finest cells lying in `[0, t]`; `None` past the horizon.
fn cells_before(t: f64, tree: &BrownianTree) -> Option<usize> {
    if t < 0.0 || t > tree.horizon() * (1.0 + 1e-12) {
        return None;
    }
    let cells = (t / tree.finest_step() + 1e-9).floor() as usize;
    Some(cells.min(tree.finest_cells()))
}

type DriftFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// A model defined by closures, for ad-hoc systems such as `b(x) = −x`.
#[derive(Clone)]
pub struct FnSystem {
    label: String,
    d: usize,
    m: usize,
    drift: Arc<DriftFn>,
    diffusion: Arc<DriftFn>,
}

impl FnSystem {
    pub fn new<B, S>(label: impl Into<String>, d: usize, m: usize, drift: B, diffusion: S) -> Self
    where
        B: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        S: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        FnSystem {
            label: label.into(),
            d,
            m,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
        }
    }

    /// One-dimensional model from scalar `b(x)` and `σ(x)`.
    pub fn scalar<B, S>(label: impl Into<String>, drift: B, diffusion: S) -> Self
    where
        B: Fn(f64) -> f64 + Send + Sync + 'static,
        S: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(
            label,
            1,
            1,
            move |_, x, out| out[0] = drift(x[0]),
            move |_, x, out| out[0] = diffusion(x[0]),
        )
    }

    /// `b ≡ 0`, `σ ≡ 0`.
    pub fn zero(d: usize, m: usize) -> Self {
        Self::new(
            format!("zero(d={d})"),
            d,
            m,
            |_, _, o| o.fill(0.0),
            |_, _, o| o.fill(0.0),
        )
    }
}

impl fmt::Debug for FnSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnSystem")
            .field("label", &self.label)
            .field("d", &self.d)
            .field("m", &self.m)
            .finish()
    }
}

impl SdeSystem for FnSystem {
    fn dim(&self) -> usize {
        self.d
    }
    fn noise_dim(&self) -> usize {
        self.m
    }
    fn label(&self) -> String {
        self.label.clone()
    }
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, out)
    }
}

pub fn make_cube_root(d: usize) -> Result<CubeRoot> {
    if d == 0 {
        return Err(SdeError::usage("cube-root model needs d ≥ 1"));
    }
    Ok(CubeRoot { d })
}

pub fn make_rotation(r: f64) -> Result<Rotation> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(SdeError::usage(format!("rotation exponent must be > 0, got {r}")));
    }
    Ok(Rotation { r })
}

/// Oracle baselines with known solutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "oracle", rename_all = "snake_case")]
pub enum OracleKind {
    Ou { theta: f64, vol: f64 },
    Gbm { mu: f64, vol: f64 },
    DeterministicBlowup,
}

pub fn make_oracle(kind: OracleKind) -> Result<Box<dyn SdeSystem>> {
    match kind {
        OracleKind::Ou { theta, vol } => {
            if !(theta > 0.0) || !theta.is_finite() {
                return Err(SdeError::usage(format!("ou needs theta > 0, got {theta}")));
            }
            if !(vol >= 0.0) || !vol.is_finite() {
                return Err(SdeError::usage(format!("ou needs vol ≥ 0, got {vol}")));
            }
            Ok(Box::new(OrnsteinUhlenbeck { theta, vol }))
        }
        OracleKind::Gbm { mu, vol } => {
            if !mu.is_finite() {
                return Err(SdeError::usage(format!("gbm needs finite mu, got {mu}")));
            }
            if !(vol >= 0.0) || !vol.is_finite() {
                return Err(SdeError::usage(format!("gbm needs vol ≥ 0, got {vol}")));
            }
            Ok(Box::new(GeometricBrownian { mu, vol }))
        }
        OracleKind::DeterministicBlowup => Ok(Box::new(DeterministicBlowup)),
    }
}

/// Declarative model selection, as read from a model config file.
///
/// ```json
/// {"kind": "rotation", "r": 1.0}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    CubeRoot {
        d: usize,
    },
    Rotation {
        r: f64,
    },
    Ou {
        theta: f64,
        vol: f64,
    },
    Gbm {
        mu: f64,
        vol: f64,
    },
    Blowup,
    /// `σ(x) = sin x`, `b(x) = −θ x`.
    Sine {
        theta: f64,
    },
    /// `b(x) = a x`, `σ ≡ vol`.
    Linear {
        a: f64,
        vol: f64,
    },
    Zero {
        d: usize,
    },
}

impl ModelSpec {
    pub const BUILTINS: &'static [&'static str] =
        &["cube-root", "rotation", "ou", "gbm", "blowup", "sine", "linear", "zero"];

    pub fn build(&self) -> Result<Box<dyn SdeSystem>> {
        Ok(match *self {
            ModelSpec::CubeRoot { d } => Box::new(make_cube_root(d)?),
            ModelSpec::Rotation { r } => Box::new(make_rotation(r)?),
            ModelSpec::Ou { theta, vol } => make_oracle(OracleKind::Ou { theta, vol })?,
            ModelSpec::Gbm { mu, vol } => make_oracle(OracleKind::Gbm { mu, vol })?,
            ModelSpec::Blowup => make_oracle(OracleKind::DeterministicBlowup)?,
            ModelSpec::Sine { theta } => {
                if !theta.is_finite() {
                    return Err(SdeError::usage("sine model needs finite theta"));
                }
                Box::new(FnSystem::scalar(
                    format!("sine(theta={theta})"),
                    move |x| -theta * x,
                    f64::sin,
                ))
            }
            ModelSpec::Linear { a, vol } => {
                if !a.is_finite() || !vol.is_finite() {
                    return Err(SdeError::usage("linear model needs finite a and vol"));
                }
                Box::new(FnSystem::scalar(
                    format!("linear(a={a}, vol={vol})"),
                    move |x| a * x,
                    move |_| vol,
                ))
            }
            ModelSpec::Zero { d } => {
                if d == 0 {
                    return Err(SdeError::usage("zero model needs d ≥ 1"));
                }
                Box::new(FnSystem::zero(d, d))
            }
        })
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn cube_root_signed_symmetry(x in -1e6f64..1e6) {
            let m = CubeRoot { d: 1 };
            let (mut bp, mut bn, mut sp, mut sn) = ([0.0], [0.0], [0.0], [0.0]);
            m.drift(0.0, &[x], &mut bp);
            m.drift(0.0, &[-x], &mut bn);
            m.diffusion(0.0, &[x], &mut sp);
            m.diffusion(0.0, &[-x], &mut sn);
            prop_assert_eq!(bn[0], -bp[0]);
            prop_assert_eq!(sn[0], sp[0]);
        }

        #[test]
        fn rotation_diffusion_orthogonal_to_state(x1 in -5.0f64..5.0, x2 in -5.0f64..5.0) {
            let m = Rotation { r: 1.0 };
            let s = diffusion_eval(&m, 0.0, &[x1, x2]).unwrap();
            let dot = s.transpose_mul(&[x1, x2])[0];
            prop_assert!(dot.abs() <= 1e-12);
        }

        #[test]
        fn ou_noiseless_drift_is_linear(x in -1e3f64..1e3, theta in 0.01f64..10.0) {
            let m = make_oracle(OracleKind::Ou { theta, vol: 0.0 }).unwrap();
            prop_assert_eq!(drift_eval(m.as_ref(), 0.0, &[x]).unwrap()[0], -theta * x);
        }
    }
}
