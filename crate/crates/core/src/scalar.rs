//! Deterministic scalar functions of time, used for `f` and `g`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdeError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScalarFn {
    Const {
        value: f64,
    },
    /// `Σ c_i t^i`.
    Poly {
        coeffs: Vec<f64>,
    },
    /// Piecewise-linear through `(t_i, v_i)`, constant beyond the ends.
    Table {
        points: Vec<(f64, f64)>,
    },
}

impl ScalarFn {
    pub fn constant(value: f64) -> Self {
        ScalarFn::Const { value }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            ScalarFn::Const { value } => *value,
            ScalarFn::Poly { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c),
            ScalarFn::Table { points } => {
                let first = points[0];
                let last = points[points.len() - 1];
                if t <= first.0 {
                    return first.1;
                }
                if t >= last.0 {
                    return last.1;
                }
                let i = points.partition_point(|p| p.0 <= t);
                let (t0, v0) = points[i - 1];
                let (t1, v1) = points[i];
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }

    /// Breakpoints inside `(a, b)`, where the function may have kinks.
    pub fn kinks(&self, a: f64, b: f64) -> Vec<f64> {
        match self {
            ScalarFn::Table { points } => points.iter().map(|p| p.0).filter(|t| *t > a && *t < b).collect(),
            _ => Vec::new(),
        }
    }

    pub fn from_table_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SdeError::usage(format!("cannot read table {}: {e}", path.display())))?;
        let mut points = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(SdeError::usage(format!("table line {}: expected `t,value`", n + 1)));
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(t), Ok(v)) => points.push((t, v)),
                // a header row is allowed on the first line only
                _ if n == 0 => continue,
                _ => return Err(SdeError::usage(format!("table line {}: not numeric", n + 1))),
            }
        }
        Self::table(points)
    }

    pub fn table(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(SdeError::usage("table needs at least one point"));
        }
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(SdeError::usage("table values must be finite"));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(SdeError::usage("table times must be strictly increasing"));
        }
        Ok(ScalarFn::Table { points })
    }
}

impl FromStr for ScalarFn {
    type Err = SdeError;

    /// `const:<v>`, `poly:<c0,c1,...>` or `table:<csv-path>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| SdeError::usage(format!("expected const:/poly:/table:, got `{s}`")))?;
        let num = |x: &str| {
            x.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| SdeError::usage(format!("`{x}` is not a finite number")))
        };
        match kind {
            "const" => Ok(ScalarFn::Const { value: num(rest)? }),
            "poly" => Ok(ScalarFn::Poly {
                coeffs: rest.split(',').map(num).collect::<Result<_>>()?,
            }),
            "table" => Self::from_table_csv(Path::new(rest)),
            other => Err(SdeError::usage(format!("unknown function kind `{other}`"))),
        }
    }
}

impl fmt::Display for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFn::Const { value } => write!(f, "const:{value}"),
            ScalarFn::Poly { coeffs } => {
                let parts: Vec<String> = coeffs.iter().map(|c| c.to_string()).collect();
                write!(f, "poly:{}", parts.join(","))
            }
            ScalarFn::Table { points } => write!(f, "table[{} points]", points.len()),
        }
    }
}
