//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails.

#[path = "../../core/tests/common/dd.rs"]
mod dd;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use sdelab_core::conditions::{check_coercivity, moment_margin, monotonicity_margin, Sampler, Verdict};
use sdelab_core::control::{ControlFunction, ControlKind};
use sdelab_core::estimators::{
    confluence_stats, convergence_diagnostic, estimate_sup_moment, eval_test_function, explosion_stats,
    monotonicity_stats, strong_error_vs_oracle, BoundBranch, MomentConstants, MonteCarlo, TestFunctionKind,
};
use sdelab_core::euler::EulerConfig;
use sdelab_core::model::{make_cube_root, make_rotation, ModelSpec, OrnsteinUhlenbeck};
use sdelab_core::scalar::ScalarFn;
use sdelab_core::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn c1_monotonicity_identity() -> Result<Outcome> {
    let eta = ControlFunction::zero(ControlKind::Eta);
    let g = ScalarFn::constant(1.0);
    let mut worst_rel: f64 = 0.0;
    let mut max_margin = f64::NEG_INFINITY;
    for d in [1, 3] {
        let sys = make_cube_root(d)?;
        for (x, y, t) in Sampler::new(100_000, 10.0, 1).pairs(d)? {
            let m = monotonicity_margin(&sys, &eta, &g, t, &x, &y)?.value;
            let exact = dd::cube_root_identity(&x, &y);
            let rel = if exact == 0.0 {
                if m == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                ((m - exact) / exact).abs()
            };
            worst_rel = worst_rel.max(rel);
            max_margin = max_margin.max(m);
        }
    }
    outcome(
        worst_rel <= 1e-10 && max_margin <= 1e-9,
        format!("max rel. deviation {worst_rel:.2e} (≤ 1e-10), max margin {max_margin:.2e} (≤ 1e-9)"),
    )
}

fn c2_rotation_moment() -> Result<Outcome> {
    let sys = make_rotation(1.0)?;
    let zero = ScalarFn::constant(0.0);
    let mut worst = f64::NEG_INFINITY;
    for (x, t) in Sampler::new(100_000, 10.0, 2).points(2)? {
        worst = worst.max(moment_margin(&sys, &zero, t, &x)?.value);
    }
    outcome(
        worst <= 1e-10,
        format!("max (‖σ‖²+2⟨x,b⟩)∨|σᵀx|² = {worst:.2e} (≤ 1e-10)"),
    )
}

fn c3_strong_error_slopes() -> Result<Outcome> {
    let levels: Vec<u32> = (6..=10).collect();
    let mc = MonteCarlo::new(2000, 3);
    let ou = ModelSpec::Ou { theta: 1.0, vol: 1.0 }.build()?;
    let gbm = ModelSpec::Gbm { mu: 0.05, vol: 1.0 }.build()?;
    let cfg = EulerConfig::new(0, 1.0, 1e12, vec![1.0]);
    let s_ou = strong_error_vs_oracle(ou.as_ref(), &cfg, &levels, None, &mc)?.slope;
    let s_gbm = strong_error_vs_oracle(gbm.as_ref(), &cfg, &levels, None, &mc)?.slope;
    outcome(
        (0.8..=1.2).contains(&s_ou) && (0.35..=0.65).contains(&s_gbm),
        format!("OU slope {s_ou:.3} ∈ [0.8, 1.2], GBM slope {s_gbm:.3} ∈ [0.35, 0.65]"),
    )
}

fn c4_cauchy_convergence() -> Result<Outcome> {
    let sys = make_cube_root(1)?;
    let cfg = EulerConfig::new(0, 1.0, 1e6, vec![1.0]);
    let r = convergence_diagnostic(&sys, &cfg, &[6, 7, 8, 9], 12, &MonteCarlo::new(500, 4))?;
    let v: Vec<f64> = r.rows.iter().map(|row| row.value).collect();
    let decreasing = v.windows(2).all(|w| w[1] < w[0]);
    outcome(
        decreasing && v[3] <= v[0] / 4.0,
        format!(
            "values [{}]: strictly decreasing = {decreasing}, v(9)/v(6) = {:.3} (≤ 0.25)",
            v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", "),
            v[3] / v[0]
        ),
    )
}

fn c5_non_explosion() -> Result<Outcome> {
    let sys = make_cube_root(2)?;
    let cfg = EulerConfig::new(10, 5.0, 1e3, vec![1.0, 1.0]);
    let cube = explosion_stats(&sys, &cfg, &MonteCarlo::new(10_000, 5))?;

    let blowup = ModelSpec::Blowup.build()?;
    let cfg = EulerConfig::new(10, 3.0, 1e6, vec![0.0]);
    let b = explosion_stats(blowup.as_ref(), &cfg, &MonteCarlo::new(100, 5))?;
    let in_window = b.exit_times.iter().all(|t| (1.4..=1.7).contains(t));
    let (lo, hi) = b
        .exit_times
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), t| (l.min(*t), h.max(*t)));
    let gamma = ControlFunction::linear(ControlKind::Gamma, 1.0)?;
    let coerc = check_coercivity(
        blowup.as_ref(),
        &gamma,
        &ScalarFn::constant(1.0),
        &Sampler::new(10_000, 10.0, 5),
    )?;
    outcome(
        cube.frequency == 0.0 && b.frequency == 1.0 && in_window && coerc.verdict == Verdict::Violated,
        format!(
            "cube-root frequency {} over {} paths; blowup frequency {} with exits in [{lo:.4}, {hi:.4}]; coercivity {:?}",
            cube.frequency, cube.paths, b.frequency, coerc.verdict
        ),
    )
}

fn c6_moment_bound() -> Result<Outcome> {
    let sys = OrnsteinUhlenbeck { theta: 1.0, vol: 1.0 };
    // f = sampled max of the moment-condition left side over (|x|² + 1)
    let zero = ScalarFn::constant(0.0);
    let mut f_max: f64 = 0.0;
    for (x, t) in Sampler::new(100_000, 10.0, 6).points(1)? {
        let lhs = moment_margin(&sys, &zero, t, &x)?.value;
        f_max = f_max.max(lhs / (x[0] * x[0] + 1.0));
    }
    let f = ScalarFn::constant(f_max);
    let p = 4.0;
    let cfg = EulerConfig::new(10, 1.0, 1e12, vec![0.0]);
    let report = estimate_sup_moment(
        &sys,
        &cfg,
        p,
        MomentConstants::conservative(p),
        &MonteCarlo::new(10_000, 6),
    )?
    .with_bounds(&f, 0.0, &[BoundBranch::I, BoundBranch::Ii])?;
    let log_est = report.estimate.ln();
    let (li, lii) = (report.log_bound_i.unwrap(), report.log_bound_ii.unwrap());
    outcome(
        li.is_finite() && lii.is_finite() && log_est <= li && log_est <= lii,
        format!(
            "f = {f_max:.6}; estimate {:.4} ± {:.4}; ln bound_i = {li:.2}, ln bound_ii = {lii:.2} \
             (as f64: {:?}, {:?}; e^{{9000+}} exceeds the f64 range)",
            report.estimate,
            report.ci_halfwidth,
            report.bound_i.unwrap(),
            report.bound_ii.unwrap()
        ),
    )
}

fn c7_non_confluence() -> Result<Outcome> {
    let sys = make_rotation(1.0)?;
    let cfg = EulerConfig::new(12, 1.0, 1e6, vec![1.0, 0.0]);
    let s = confluence_stats(&sys, &cfg, &[1.0, 0.0], &[1.0, 0.1], &[1e-6], &MonteCarlo::new(1000, 7))?;
    let min = s.min_distances.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        s.per_eps[0].frequency == 0.0 && min > 0.0,
        format!(
            "frequency at ε=1e-6: {}; smallest min-distance {min:.4e}",
            s.per_eps[0].frequency
        ),
    )
}

fn c8_stochastic_monotonicity() -> Result<Outcome> {
    let sys = ModelSpec::Sine { theta: 1.0 }.build()?;
    let cfg = EulerConfig::new(14, 1.0, 1e6, vec![0.0]);
    let s = monotonicity_stats(sys.as_ref(), &cfg, 0.0, 0.5, &MonteCarlo::new(1000, 8))?;
    outcome(
        s.fraction <= 0.01,
        format!(
            "violations {} of {} (fraction {} ≤ 0.01)",
            s.violations, s.paths, s.fraction
        ),
    )
}

fn c9_test_functions() -> Result<Outcome> {
    let eta = ControlFunction::linear(ControlKind::Eta, 1.0)?;
    let phi = eval_test_function(TestFunctionKind::PhiDelta, &eta, 1.0, 1.0, 0.5)?.value;
    let gr = ControlFunction::linear(ControlKind::GammaR, 1.0)?;
    let cap = eval_test_function(TestFunctionKind::ExpPhiDelta, &gr, 0.5, 0.0, 0.5)?.value;
    let e1 = (phi / std::f64::consts::LN_2 - 1.0).abs();
    let e2 = (cap / 2.0 - 1.0).abs();
    outcome(
        e1 <= 1e-8 && e2 <= 1e-8,
        format!("φ_δ = {phi:.15} (rel. err {e1:.1e}), Φ_δ = {cap:.15} (rel. err {e2:.1e})"),
    )
}

fn run_cli(args: &[&str], out: &Path, workers: &str) -> std::result::Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_sdelab"))
        .args(args)
        .args(["--out", out.to_str().unwrap(), "--workers", workers])
        .env_remove("SDELAB_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr)))
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn c10_determinism() -> Result<Outcome> {
    let runs: [&[&str]; 6] = [
        &[
            "simulate",
            "--model",
            "cube-root",
            "--d",
            "2",
            "--x0",
            "1,1",
            "--level",
            "8",
            "--paths",
            "4",
            "--seed",
            "7",
        ],
        &[
            "moments", "--model", "ou", "--p", "4", "--paths", "400", "--level", "7", "--f", "const:1", "--seed", "3",
        ],
        &[
            "converge",
            "--model",
            "cube-root",
            "--x0",
            "1",
            "--levels",
            "4,5,6",
            "--ref-level",
            "9",
            "--paths",
            "200",
        ],
        &[
            "confluence",
            "--model",
            "rotation",
            "--x0",
            "1,0",
            "--y0",
            "1,0.1",
            "--eps",
            "1e-6,0.01",
            "--level",
            "8",
            "--paths",
            "200",
        ],
        &[
            "strong-error",
            "--model",
            "gbm",
            "--x0",
            "1",
            "--levels",
            "3,4,5",
            "--paths",
            "200",
        ],
        &[
            "monotone", "--model", "sine", "--y0", "0.5", "--level", "8", "--paths", "200",
        ],
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut compared = 0;
    for (i, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for workers in ["1", "3", "8"] {
            let out = tmp.path().join(format!("run{i}_w{workers}"));
            if let Err(e) = run_cli(args, &out, workers) {
                return outcome(false, e);
            }
            outputs.push(dir_bytes(&out));
        }
        if outputs.iter().any(|o| *o != outputs[0]) {
            return outcome(false, format!("{} output differs across worker counts", args[0]));
        }
        compared += outputs[0].len();
    }
    outcome(
        true,
        format!(
            "{} subcommands × workers 1/3/8: {compared} files byte-identical",
            runs.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("cube-root monotonicity identity", c1_monotonicity_identity),
        ("rotation moment condition", c2_rotation_moment),
        ("oracle strong-error slopes", c3_strong_error_slopes),
        ("Cauchy convergence", c4_cauchy_convergence),
        ("non-explosion", c5_non_explosion),
        ("moment bound", c6_moment_bound),
        ("non-confluence", c7_non_confluence),
        ("stochastic monotonicity", c8_stochastic_monotonicity),
        ("test-function quadrature", c9_test_functions),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run().unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!("error: {e}"),
        });
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} [{}] {name}: {} ({:.1}s)",
            n + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
