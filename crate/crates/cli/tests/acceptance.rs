//! One line per acceptance criterion. All criteria run in sequence inside a
//! single test so every line is printed before the verdict.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use danc_cli::{run_sweep, verify_trace, RunOptions, Verification};
use danc_core::analysis::{
    approximation_comparison, lemma1_random_suite, lemma2_random_suite, trapz,
};
use danc_core::controllers::smooth_robust_term;
use danc_core::error_geometry::check_hurwitz;
use danc_core::scenario::Scenario;
use danc_core::sim::{rk4_step, run_setup, ClosedLoopSetup, SimTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RUNTIME_LIMIT_S: f64 = 1.0;
const RESIDUAL_LIMIT: f64 = 1e-12;
const RK4_RATIO: (f64, f64) = (12.0, 20.0);
const TRAPZ_RATIO: (f64, f64) = (3.9, 4.1);
const SMOOTH_TRIPLES: usize = 100_000;
const LEMMA1_PAIRS: usize = 10;
const LEMMA2_SEQUENCES: usize = 100;
const HURWITZ_POLYS: usize = 100;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn load(name: &str) -> Scenario {
    Scenario::load(&fixture(name)).expect("fixture parses")
}

struct Run {
    setup: ClosedLoopSetup,
    trace: SimTrace,
    verification: Verification,
    seconds: f64,
}

fn run(sc: &Scenario) -> Run {
    let start = Instant::now();
    let setup = ClosedLoopSetup::build(sc).expect("fixture builds");
    let trace = run_setup(&setup).expect("fixture runs");
    let verification = verify_trace(&setup, &trace).expect("report builds");
    Run {
        setup,
        trace,
        verification,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn violations(run: &Run, checks: &[&str]) -> usize {
    run.verification
        .report
        .violations
        .iter()
        .filter(|r| checks.contains(&r.check.as_str()))
        .count()
}

fn worst_margin(run: &Run, check: &str) -> f64 {
    run.verification
        .report
        .worst
        .iter()
        .filter(|r| r.check == check)
        .map(|r| r.margin())
        .fold(f64::INFINITY, f64::min)
}

struct Line {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn c1_initial_identity(runs: &[(&str, &Run)], equilibrium: &Run) -> Line {
    let mut detail = Vec::new();
    let mut pass = true;
    for (name, r) in runs.iter().chain([("equilibrium", equilibrium)].iter()) {
        let v = r.trace.ef_tilde[0];
        pass &= v == 0.0;
        detail.push(format!("{name}: {v:e}"));
    }
    Line {
        id: 1,
        title: "initial error identity e~_f(0) = 0 (exact)",
        pass,
        detail: detail.join(", "),
    }
}

fn uub_line(id: usize, title: &'static str, runs: &[(&str, &Run)]) -> Line {
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, r) in runs {
        let v = violations(r, &["uub_entry", "uub"]);
        let fast = r.seconds <= RUNTIME_LIMIT_S;
        pass &= v == 0 && fast;
        detail.push(format!(
            "{name}: B_ef {:.4e}, worst margin {:.3}, violations {v}, {:.2} s",
            r.verification.report.b_ef,
            worst_margin(r, "uub"),
            r.seconds
        ));
    }
    Line {
        id,
        title,
        pass,
        detail: format!("{} (slack 1.05, limit {RUNTIME_LIMIT_S} s)", detail.join("; ")),
    }
}

fn c4_mean_square(runs: &[(&str, &Run)]) -> Line {
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, r) in runs {
        let v = violations(r, &["mean_square"]);
        pass &= v == 0;
        detail.push(format!("{name}: worst margin {:.2}, violations {v}", worst_margin(r, "mean_square")));
    }
    Line {
        id: 4,
        title: "mean-square inequality for t >= 0.1 s",
        pass,
        detail: detail.join("; "),
    }
}

fn c5_windowed(runs: &[(&str, &Run)]) -> Line {
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, r) in runs {
        let mut checks = vec!["windowed_ef"];
        if *name == "C" {
            checks.extend(["windowed_lf_tilde", "windowed_lg_tilde"]);
        }
        for c in checks {
            let present = r.verification.report.worst.iter().any(|w| w.check == c);
            let v = violations(r, &[c]);
            pass &= present && v == 0;
            detail.push(format!("{name}/{c}: margin {:.2}, violations {v}", worst_margin(r, c)));
        }
    }
    Line {
        id: 5,
        title: "windowed L2 bounds over the final 20% (slack 1.05)",
        pass,
        detail: detail.join("; "),
    }
}

fn c6_smooth_robust() -> Line {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = f64::NEG_INFINITY;
    let mut negative_terms = 0;
    for _ in 0..SMOOTH_TRIPLES {
        let e: f64 = rng.gen_range(-10.0..10.0) * 10f64.powi(rng.gen_range(-5..2));
        let rho: f64 = rng.gen_range(0.0..10.0) * 10f64.powi(rng.gen_range(-5..3));
        let eps: f64 = 10f64.powf(rng.gen_range(-6.0..1.0));
        let term = e * smooth_robust_term(e, rho, eps);
        if term < 0.0 {
            negative_terms += 1;
        }
        worst = worst.max(-term + e.abs() * rho - eps);
    }
    let secs = start.elapsed().as_secs_f64();
    Line {
        id: 6,
        title: "smooth robust inequality on 1e5 random triples",
        pass: worst <= 0.0 && negative_terms == 0 && secs < 1.0,
        detail: format!(
            "max(-e^2 r^2/sqrt(e^2 r^2 + eps^2) + |e| r - eps) = {worst:.3e} (limit 0), negative terms {negative_terms}, {secs:.3} s"
        ),
    }
}

fn c7_lemmas(seed: u64) -> Line {
    let l1 = lemma1_random_suite(LEMMA1_PAIRS, seed).unwrap_or(0);
    let l2 = lemma2_random_suite(LEMMA2_SEQUENCES, seed.wrapping_add(1)).unwrap_or(0);
    Line {
        id: 7,
        title: "lemma oracles on random inputs",
        pass: l1 == LEMMA1_PAIRS && l2 == LEMMA2_SEQUENCES,
        detail: format!("integral positivity {l1}/{LEMMA1_PAIRS}, sequence bound {l2}/{LEMMA2_SEQUENCES}"),
    }
}

fn c8_incremental(runs: &[(&str, &Run)]) -> Line {
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, r) in runs {
        let worst = r.trace.inc_residual.iter().fold(0.0f64, |m, v| m.max(*v));
        pass &= worst <= RESIDUAL_LIMIT && r.trace.inc_residual.len() == r.trace.len();
        detail.push(format!("{name}: max residual {worst:.3e}"));
    }
    Line {
        id: 8,
        title: "incremental law residual at every step",
        pass,
        detail: format!("{} (limit {RESIDUAL_LIMIT:e})", detail.join("; ")),
    }
}

fn rk4_decay_error(h: f64) -> f64 {
    let steps = (1.0 / h).round() as usize;
    let mut x = vec![1.0];
    for k in 0..steps {
        x = rk4_step(|_, s| Ok(vec![-s[0]]), &x, k as f64 * h, h).unwrap();
    }
    (x[0] - (-1.0f64).exp()).abs()
}

fn trapz_sine_error(n: usize) -> f64 {
    let t: Vec<f64> = (0..=n).map(|k| std::f64::consts::PI * k as f64 / n as f64).collect();
    let v: Vec<f64> = t.iter().map(|s| s.sin()).collect();
    (trapz(&t, &v) - 2.0).abs()
}

/// Monic polynomial coefficients `[a_0, .., a_{m-1}]` from real factors.
fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn c9_numerics() -> Line {
    let rk4 = rk4_decay_error(0.05) / rk4_decay_error(0.025);
    let tz = trapz_sine_error(64) / trapz_sine_error(128);

    // Roots are drawn first, so their signs are the oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut agree = 0;
    for _ in 0..HURWITZ_POLYS {
        let degree = rng.gen_range(1..=4usize);
        let mut poly = vec![1.0];
        let mut stable = true;
        let mut placed = 0;
        while placed < degree {
            let mut re: f64 = -rng.gen_range(0.05..3.0);
            if rng.gen_bool(0.25) {
                re = -re;
            }
            stable &= re < 0.0;
            if degree - placed >= 2 && rng.gen_bool(0.5) {
                let im: f64 = rng.gen_range(0.1..3.0);
                poly = poly_mul(&poly, &[re * re + im * im, -2.0 * re, 1.0]);
                placed += 2;
            } else {
                poly = poly_mul(&poly, &[-re, 1.0]);
                placed += 1;
            }
        }
        poly.pop();
        if check_hurwitz(&poly) == stable {
            agree += 1;
        }
    }
    let pass = (RK4_RATIO.0..=RK4_RATIO.1).contains(&rk4)
        && (TRAPZ_RATIO.0..=TRAPZ_RATIO.1).contains(&tz)
        && agree == HURWITZ_POLYS;
    Line {
        id: 9,
        title: "numerical integrity",
        pass,
        detail: format!(
            "RK4 halving ratio {rk4:.2} (band {:?}), trapezoid ratio {tz:.3} (band {:?}), Hurwitz agreement {agree}/{HURWITZ_POLYS}",
            RK4_RATIO, TRAPZ_RATIO
        ),
    }
}

fn c10_da_property(setup: &ClosedLoopSetup) -> Line {
    let radii = [1.0, 2.0, 3.0, 4.0, 5.0];
    let plant = &setup.plant;
    let rows = approximation_comparison(|x: &[f64]| plant.f(x), &setup.traj, &setup.net, &radii, 0.1);
    match rows {
        Ok(rows) => {
            let grows = rows.windows(2).all(|w| w[1].conventional_eps >= w[0].conventional_eps);
            let fixed = rows.windows(2).all(|w| w[1].da_eps.to_bits() == w[0].da_eps.to_bits());
            let conv: Vec<String> = rows.iter().map(|r| format!("{:.3e}", r.conventional_eps)).collect();
            Line {
                id: 10,
                title: "desired-trajectory fit independent of the state box",
                pass: grows && fixed,
                detail: format!(
                    "conventional eps over r = 1..5: [{}] (non-decreasing: {grows}); DA eps {:.3e} bit-identical: {fixed}",
                    conv.join(", "),
                    rows[0].da_eps
                ),
            }
        }
        Err(e) => Line {
            id: 10,
            title: "desired-trajectory fit independent of the state box",
            pass: false,
            detail: format!("comparison failed: {e}"),
        },
    }
}

fn c11_falsification() -> Line {
    let dir = tempfile::tempdir().unwrap();
    let code = |name: &str| {
        let cfg = fixture(name);
        Command::new(env!("CARGO_BIN_EXE_danc"))
            .args(["verify", "--config", cfg.to_str().unwrap(), "--out-dir"])
            .arg(dir.path().join(name))
            .output()
            .expect("binary runs")
            .status
            .code()
    };
    let corrupted = code("p1_falsified_kappa.toml");
    let nominal = code("p1_nominal_b.toml");
    Line {
        id: 11,
        title: "verifier rejects the corrupted-gain fixture",
        pass: corrupted.is_some_and(|c| c != 0) && nominal == Some(0),
        detail: format!("corrupted kappa exit {corrupted:?} (want nonzero), nominal exit {nominal:?} (want 0)"),
    }
}

fn c12_adjustability(base: &Scenario) -> Line {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        out_dir: dir.path().to_path_buf(),
        verbose_trace: false,
        seed: None,
    };
    let kappas = [1.0, 2.0, 4.0, 8.0];
    let eps = [0.001, 0.01, 0.1, 1.0];
    let k_rows = run_sweep(base, "kappa", &kappas, None, &opts);
    let e_rows = run_sweep(base, "eps_rho", &eps, None, &opts);
    match (k_rows, e_rows) {
        (Ok(k_rows), Ok(e_rows)) => {
            let tails: Vec<f64> = k_rows.iter().map(|r| r.tail_max_ef).collect();
            let bounds: Vec<f64> = e_rows.iter().map(|r| r.bound).collect();
            let tail_ok = tails.windows(2).all(|w| w[1] <= w[0]);
            let bound_ok = bounds.windows(2).all(|w| w[1] >= w[0]);
            let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ");
            Line {
                id: 12,
                title: "bound radius follows the design gains",
                pass: tail_ok && bound_ok,
                detail: format!(
                    "tail max |e_f| for kappa {kappas:?}: [{}]; bound for eps_rho {eps:?}: [{}]",
                    fmt(&tails),
                    fmt(&bounds)
                ),
            }
        }
        (k, e) => Line {
            id: 12,
            title: "bound radius follows the design gains",
            pass: false,
            detail: format!("sweep failed: {:?} / {:?}", k.err(), e.err()),
        },
    }
}

#[test]
fn acceptance_criteria() {
    let a = run(&load("p1_nominal_a.toml"));
    let b = run(&load("p1_nominal_b.toml"));
    let c = run(&load("p1_nominal_c.toml"));
    let eq = run(&load("p1_equilibrium.toml"));
    let all = [("A", &a), ("B", &b), ("C", &c)];
    let incremental = [("B", &b), ("C", &c)];

    let lines = vec![
        c1_initial_identity(&all, &eq),
        uub_line(2, "ultimate bound, integral adaptation", &[("A", &a)]),
        uub_line(3, "ultimate bound, incremental adaptation", &incremental),
        c4_mean_square(&all),
        c5_windowed(&all),
        c6_smooth_robust(),
        c7_lemmas(b.setup.scenario.seed),
        c8_incremental(&incremental),
        c9_numerics(),
        c10_da_property(&b.setup),
        c11_falsification(),
        c12_adjustability(&b.setup.scenario),
    ];
    for l in &lines {
        println!(
            "[{}] criterion {:>2}: {}: {}",
            if l.pass { "PASS" } else { "FAIL" },
            l.id,
            l.title,
            l.detail
        );
    }
    let failed: Vec<usize> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    println!("acceptance: {}/{} criteria pass", lines.len() - failed.len(), lines.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
