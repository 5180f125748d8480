//! Command-line arguments shared by the subcommands.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;

use sdelab_core::control::{ControlFunction, ControlKind, ControlShape, LocalityParams};
use sdelab_core::euler::EulerConfig;
use sdelab_core::model::{ModelSpec, SdeSystem};
use sdelab_core::{Result, SdeError};

fn usage(msg: impl Into<String>) -> SdeError {
    SdeError::Usage(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        self != Format::Json
    }

    pub fn json(self) -> bool {
        self != Format::Csv
    }
}

/// Model selection, output and parallelism options.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Built-in model name (cube-root, rotation, ou, gbm, blowup, sine, linear, zero).
    #[arg(long)]
    #[serde(skip)]
    pub model: Option<String>,
    /// JSON model config, e.g. {"kind": "ou", "theta": 1, "vol": 0.5}.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dimension (cube-root, zero).
    #[arg(long, default_value_t = 1)]
    #[serde(skip)]
    pub d: usize,
    /// Rotation rate.
    #[arg(long, default_value_t = 1.0)]
    #[serde(skip)]
    pub r: f64,
    /// Mean reversion (ou) or drift factor (sine).
    #[arg(long, default_value_t = 1.0)]
    #[serde(skip)]
    pub theta: f64,
    /// Volatility (ou, gbm, linear).
    #[arg(long, default_value_t = 1.0)]
    #[serde(skip)]
    pub vol: f64,
    /// Growth rate (gbm).
    #[arg(long, default_value_t = 0.05)]
    #[serde(skip)]
    pub mu: f64,
    /// Drift factor (linear).
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    #[serde(skip)]
    pub a: f64,
    /// Master seed; `SDELAB_SEED` applies when the flag is absent.
    #[arg(long, env = "SDELAB_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    pub format: Format,
    /// Worker threads (never changes results).
    #[arg(long)]
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl Common {
    pub fn model_spec(&self) -> Result<ModelSpec> {
        match (&self.model, &self.config) {
            (Some(_), Some(_)) => Err(usage("give either --model or --config, not both")),
            (None, None) => Err(usage(format!(
                "no model given; built-ins: {}",
                ModelSpec::BUILTINS.join(", ")
            ))),
            (None, Some(path)) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("bad model config {}: {e}", path.display())))
            }
            (Some(name), None) => Ok(match name.as_str() {
                "cube-root" => ModelSpec::CubeRoot { d: self.d },
                "rotation" => ModelSpec::Rotation { r: self.r },
                "ou" => ModelSpec::Ou {
                    theta: self.theta,
                    vol: self.vol,
                },
                "gbm" => ModelSpec::Gbm {
                    mu: self.mu,
                    vol: self.vol,
                },
                "blowup" | "deterministic-blowup" => ModelSpec::Blowup,
                "sine" => ModelSpec::Sine { theta: self.theta },
                "linear" => ModelSpec::Linear {
                    a: self.a,
                    vol: self.vol,
                },
                "zero" => ModelSpec::Zero { d: self.d },
                other => {
                    return Err(usage(format!(
                        "unknown model `{other}`; built-ins: {}",
                        ModelSpec::BUILTINS.join(", ")
                    )))
                }
            }),
        }
    }
}

/// Euler grid and starting point.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Grid {
    /// Finest level ℓ: the grid has 2^ℓ steps.
    #[arg(long, default_value_t = 10)]
    pub level: u32,
    /// Horizon T.
    #[arg(long = "T", default_value_t = 1.0)]
    pub horizon: f64,
    /// Stop radius R_stop.
    #[arg(long, default_value_t = 1e6)]
    pub r_stop: f64,
    /// Initial value, comma-separated (default: origin).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
}

impl Grid {
    pub fn x0(&self, system: &dyn SdeSystem) -> Result<Vec<f64>> {
        let x0 = self.x0.clone().unwrap_or_else(|| vec![0.0; system.dim()]);
        check_dim(system, &x0, "x0")?;
        Ok(x0)
    }

    pub fn euler(&self, system: &dyn SdeSystem) -> Result<EulerConfig> {
        let cfg = EulerConfig::new(self.level, self.horizon, self.r_stop, self.x0(system)?);
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn check_dim(system: &dyn SdeSystem, v: &[f64], name: &str) -> Result<()> {
    if v.len() != system.dim() {
        return Err(usage(format!(
            "{name} has {} entries but model {} has dimension {}",
            v.len(),
            system.label(),
            system.dim()
        )));
    }
    Ok(())
}

/// Parses `zero`, `linear[:c]` or `xlog[:R]` into a control of `kind`.
pub fn parse_control(spec: &str, kind: ControlKind, params: LocalityParams) -> Result<ControlFunction> {
    let (name, arg) = match spec.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (spec, None),
    };
    let num = |a: Option<&str>, default: f64| -> Result<f64> {
        match a {
            None => Ok(default),
            Some(a) => a
                .trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("control parameter `{a}` is not a number"))),
        }
    };
    let shape = match name {
        "zero" if arg.is_none() => ControlShape::Zero,
        "linear" => ControlShape::Linear { slope: num(arg, 1.0)? },
        "xlog" => ControlShape::XLogInv {
            scale: num(arg, params.radius)?,
        },
        _ => {
            return Err(usage(format!(
                "control must be zero, linear[:c] or xlog[:R], got `{spec}`"
            )))
        }
    };
    ControlFunction::new(kind, shape, params)
}
