//! Control functions calibrating how far coefficients may stray from
//! Lipschitz continuity (`η_R`), linear growth (`γ`) or the non-confluence
//! regime (`γ_R`).

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdeError};
use crate::quadrature;

/// Which role the control plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    /// `η_R`, the modulus in the monotonicity condition.
    Eta,
    /// `γ`, the growth control in the coercivity condition.
    Gamma,
    /// `γ_R`, the modulus in the non-confluence condition.
    GammaR,
}

/// Functional form of a control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ControlShape {
    Zero,
    /// `slope · x`.
    Linear {
        slope: f64,
    },
    /// `scale · x · ln(1/x)` on `[0, 1/e]`, held at `scale/e` on `(1/e, 1)`.
    ///
    /// The plateau is the concave continuation of `x ln(1/x)` past its
    /// maximum, which keeps the control nondecreasing.
    XLogInv {
        scale: f64,
    },
}

/// Locality constants attached to a control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalityParams {
    /// Locality radius `R`.
    pub radius: f64,
    /// Separation bound `c₀ < 1`.
    pub c0: f64,
    /// Small-interval constant `0 < ε₀ ≤ c₀`.
    pub eps0: f64,
    /// Ratio constant `K > 1/2` (only meaningful for `γ_R`).
    pub k: Option<f64>,
}

impl Default for LocalityParams {
    fn default() -> Self {
        LocalityParams {
            radius: 10.0,
            c0: 0.5,
            eps0: 0.5,
            k: None,
        }
    }
}

impl LocalityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(SdeError::usage(format!("radius must be > 0, got {}", self.radius)));
        }
        if !(self.c0 > 0.0 && self.c0 < 1.0) {
            return Err(SdeError::usage(format!("c0 must lie in (0, 1), got {}", self.c0)));
        }
        if !(self.eps0 > 0.0 && self.eps0 <= self.c0) {
            return Err(SdeError::usage(format!(
                "eps0 must lie in (0, c0], got {} with c0 = {}",
                self.eps0, self.c0
            )));
        }
        if let Some(k) = self.k {
            if !(k > 0.5) {
                return Err(SdeError::usage(format!("K must exceed 1/2, got {k}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlFunction {
    pub kind: ControlKind,
    pub shape: ControlShape,
    pub params: LocalityParams,
}

const INV_E: f64 = 0.367_879_441_171_442_33;

impl ControlFunction {
    pub fn new(kind: ControlKind, shape: ControlShape, params: LocalityParams) -> Result<Self> {
        params.validate()?;
        match shape {
            ControlShape::Linear { slope } if !(slope >= 0.0) || !slope.is_finite() => {
                return Err(SdeError::usage(format!("linear control needs slope ≥ 0, got {slope}")))
            }
            ControlShape::XLogInv { scale } if !(scale >= 0.0) || !scale.is_finite() => {
                return Err(SdeError::usage(format!(
                    "x·log(1/x) control needs scale ≥ 0, got {scale}"
                )))
            }
            _ => {}
        }
        Ok(ControlFunction { kind, shape, params })
    }

    /// Default `η_R(x) = R·x·log(1/x)` with `R` from `params`.
    pub fn eta_default(params: LocalityParams) -> Result<Self> {
        Self::new(ControlKind::Eta, ControlShape::XLogInv { scale: params.radius }, params)
    }

    pub fn zero(kind: ControlKind) -> Self {
        ControlFunction {
            kind,
            shape: ControlShape::Zero,
            params: LocalityParams::default(),
        }
    }

    pub fn linear(kind: ControlKind, slope: f64) -> Result<Self> {
        Self::new(kind, ControlShape::Linear { slope }, LocalityParams::default())
    }

    /// Upper end of the admissible domain (exclusive for `x log(1/x)`).
    pub fn domain_end(&self) -> f64 {
        match self.shape {
            ControlShape::XLogInv { .. } => 1.0,
            _ => f64::INFINITY,
        }
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        let inside = match self.shape {
            ControlShape::XLogInv { .. } => (0.0..1.0).contains(&x),
            _ => x >= 0.0 && x.is_finite(),
        };
        if inside {
            Ok(())
        } else {
            Err(SdeError::usage(format!(
                "control argument {x} outside domain [0, {})",
                self.domain_end()
            )))
        }
    }

    /// Evaluates without the domain check; callers guarantee `x` is admissible.
    pub(crate) fn value(&self, x: f64) -> f64 {
        match self.shape {
            ControlShape::Zero => 0.0,
            ControlShape::Linear { slope } => slope * x,
            ControlShape::XLogInv { scale } => {
                if x <= 0.0 {
                    0.0
                } else if x <= INV_E {
                    -scale * x * x.ln()
                } else {
                    scale * INV_E
                }
            }
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.value(x))
    }

    /// Analytic derivative where the shape has one.
    pub fn derivative(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(match self.shape {
            ControlShape::Zero => 0.0,
            ControlShape::Linear { slope } => slope,
            ControlShape::XLogInv { scale } => {
                if x <= 0.0 {
                    return Err(SdeError::usage("x·log(1/x) has no derivative at 0"));
                } else if x <= INV_E {
                    scale * (-x.ln() - 1.0)
                } else {
                    0.0
                }
            }
        })
    }

    /// `∫_x^{ε₀} ds / ctrl(s)`; diverges as `x ↓ 0` for admissible controls.
    pub fn reciprocal_integral(&self, x: f64) -> Result<f64> {
        let eps0 = self.params.eps0;
        if !(x > 0.0 && x < eps0) {
            return Err(SdeError::usage(format!("need 0 < x < eps0 = {eps0}, got {x}")));
        }
        if matches!(self.shape, ControlShape::Zero) {
            return Ok(f64::INFINITY);
        }
        // substitute s = e^u so the integrand stays well scaled near 0
        let q = quadrature::integrate(
            |u| {
                let s = u.exp();
                s / self.value(s)
            },
            x.ln(),
            eps0.ln(),
            quadrature::DEFAULT_REL_TOL,
        )?;
        Ok(q.value)
    }
}
