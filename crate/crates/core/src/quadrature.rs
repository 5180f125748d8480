//! Adaptive Simpson quadrature with interval bisection.

use crate::error::{Result, SdeError};

pub const DEFAULT_REL_TOL: f64 = 1e-8;
pub const MAX_SUBDIVISIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error_estimate: f64,
    pub subdivisions: usize,
}

#[derive(Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Integrates `f` over `[a, b]` to relative tolerance `rel_tol`.
///
/// The interval is first split into 16 panels so that narrow features are
/// seen. Fails with [`SdeError::Quadrature`] when more than
/// [`MAX_SUBDIVISIONS`] bisections are needed or a non-finite value appears.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<QuadResult> {
    if !a.is_finite() || !b.is_finite() {
        return Err(SdeError::Quadrature(format!("infinite interval [{a}, {b}]")));
    }
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error_estimate: 0.0,
            subdivisions: 0,
        });
    }
    if a > b {
        let r = integrate(f, b, a, rel_tol)?;
        return Ok(QuadResult { value: -r.value, ..r });
    }
    let eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(SdeError::Quadrature(format!("integrand is {v} at {x}")))
        }
    };

    const INITIAL: usize = 16;
    let width = (b - a) / INITIAL as f64;
    let mut stack = Vec::with_capacity(64);
    let mut rough = 0.0;
    let mut left = eval(a)?;
    for i in 0..INITIAL {
        let pa = a + width * i as f64;
        let pb = if i + 1 == INITIAL { b } else { pa + width };
        let fm = eval(0.5 * (pa + pb))?;
        let fb = eval(pb)?;
        let whole = simpson(pa, pb, left, fm, fb);
        rough += whole.abs();
        stack.push(Panel {
            a: pa,
            b: pb,
            fa: left,
            fm,
            fb,
            whole,
            tol: 0.0,
            depth: 0,
        });
        left = fb;
    }
    let initial = stack;
    let mut abs_tol = (rel_tol * rough).max(f64::MIN_POSITIVE);
    // the rough estimate can overshoot near peaks; tighten until the
    // tolerance is relative to the converged value
    for _ in 0..8 {
        let r = refine(&eval, &initial, abs_tol, rel_tol)?;
        let target = (rel_tol * r.value.abs()).max(f64::MIN_POSITIVE);
        if abs_tol <= target {
            return Ok(r);
        }
        abs_tol = 0.5 * target;
    }
    Err(SdeError::Quadrature(format!(
        "tolerance did not settle at relative {rel_tol}"
    )))
}

fn refine<E: Fn(f64) -> Result<f64>>(eval: &E, initial: &[Panel], abs_tol: f64, rel_tol: f64) -> Result<QuadResult> {
    let mut stack: Vec<Panel> = initial
        .iter()
        .map(|p| Panel {
            tol: abs_tol / initial.len() as f64,
            ..*p
        })
        .collect();
    let mut value = 0.0;
    let mut error = 0.0;
    let mut subdivisions = 0usize;
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let flm = eval(lm)?;
        let frm = eval(rm)?;
        let left = simpson(p.a, m, p.fa, flm, p.fm);
        let right = simpson(m, p.b, p.fm, frm, p.fb);
        let delta = left + right - p.whole;
        if delta.abs() <= 15.0 * p.tol || p.depth >= 60 || (m - p.a) <= f64::EPSILON * m.abs() {
            if delta.abs() > 15.0 * p.tol {
                return Err(SdeError::Quadrature(format!(
                    "interval [{}, {}] cannot be refined further",
                    p.a, p.b
                )));
            }
            value += left + right + delta / 15.0;
            error += delta.abs() / 15.0;
            continue;
        }
        subdivisions += 1;
        if subdivisions > MAX_SUBDIVISIONS {
            return Err(SdeError::Quadrature(format!(
                "no convergence to relative tolerance {rel_tol} within {MAX_SUBDIVISIONS} subdivisions"
            )));
        }
        let tol = 0.5 * p.tol;
        stack.push(Panel {
            a: m,
            b: p.b,
            fa: p.fm,
            fm: frm,
            fb: p.fb,
            whole: right,
            tol,
            depth: p.depth + 1,
        });
        stack.push(Panel {
            a: p.a,
            b: m,
            fa: p.fa,
            fm: flm,
            fb: p.fm,
            whole: left,
            tol,
            depth: p.depth + 1,
        });
    }
    Ok(QuadResult {
        value,
        error_estimate: error,
        subdivisions,
    })
}
