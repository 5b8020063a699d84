use danc_core::analysis::{cumtrapz, trapz, windowed_integral};
use danc_core::error_geometry::check_hurwitz;
use danc_core::sim::rk4_step;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn decay_error(h: f64) -> f64 {
    let steps = (1.0 / h).round() as usize;
    let mut x = vec![1.0];
    for k in 0..steps {
        x = rk4_step(|_, s| Ok(vec![-s[0]]), &x, k as f64 * h, h).unwrap();
    }
    (x[0] - (-1.0f64).exp()).abs()
}

#[test]
fn rk4_error_ratio_under_halving() {
    for h in [0.1, 0.05, 0.025] {
        let ratio = decay_error(h) / decay_error(h / 2.0);
        assert!((12.0..=20.0).contains(&ratio), "h = {h}: ratio {ratio}");
    }
}

#[test]
fn rk4_on_a_nonautonomous_system() {
    // x' = cos(t) x, x(0) = 1 has x(t) = exp(sin t).
    let run = |h: f64| {
        let steps = (2.0 / h).round() as usize;
        let mut x = vec![1.0];
        for k in 0..steps {
            x = rk4_step(|t, s| Ok(vec![t.cos() * s[0]]), &x, k as f64 * h, h).unwrap();
        }
        (x[0] - 2f64.sin().exp()).abs()
    };
    let ratio = run(0.02) / run(0.01);
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

fn sine_grid(n: usize) -> (Vec<f64>, Vec<f64>) {
    let t: Vec<f64> = (0..=n).map(|k| std::f64::consts::PI * k as f64 / n as f64).collect();
    let v = t.iter().map(|s| s.sin()).collect();
    (t, v)
}

#[test]
fn trapezoid_is_second_order() {
    let err = |n| {
        let (t, v) = sine_grid(n);
        (trapz(&t, &v) - 2.0).abs()
    };
    for n in [16, 32, 64, 128] {
        let ratio = err(n) / err(2 * n);
        assert!((3.9..=4.1).contains(&ratio), "n = {n}: ratio {ratio}");
    }
}

#[test]
fn cumulative_and_windowed_quadratures_are_second_order() {
    // int_0^t sin = 1 - cos t; window [pi/4, 3pi/4] has integral sqrt(2).
    let err = |n: usize| {
        let (t, v) = sine_grid(n);
        let c = cumtrapz(&t, &v);
        let cum_err = t
            .iter()
            .zip(&c)
            .map(|(s, q)| (q - (1.0 - s.cos())).abs())
            .fold(0.0, f64::max);
        let pi = std::f64::consts::PI;
        let win = windowed_integral(&t, &v, pi / 2.0, 0.75 * pi).unwrap();
        (cum_err, (win - 2f64.sqrt()).abs())
    };
    for n in [16, 32, 64] {
        let (c1, w1) = err(n);
        let (c2, w2) = err(2 * n);
        assert!((3.8..=4.2).contains(&(c1 / c2)), "cumulative ratio {}", c1 / c2);
        assert!((3.8..=4.2).contains(&(w1 / w2)), "window ratio {}", w1 / w2);
    }
}

/// Coefficients `[a_0, .., a_{m-1}]` of the monic polynomial with the given roots.
fn monic_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, a) in c.iter().enumerate() {
            next[i + 1] += a;
            next[i] -= a * r;
        }
        c = next;
    }
    c.pop();
    c.iter().map(|z| z.re).collect()
}

/// Durand-Kerner iteration on the monic polynomial.
fn brute_force_roots(lambda: &[f64]) -> Vec<Complex64> {
    let m = lambda.len();
    let eval = |z: Complex64| {
        let mut acc = Complex64::new(1.0, 0.0);
        for a in lambda.iter().rev() {
            acc = acc * z + a;
        }
        acc
    };
    let seed = Complex64::new(0.4, 0.9);
    let mut z: Vec<Complex64> = (0..m).map(|k| seed.powu(k as u32)).collect();
    for _ in 0..2000 {
        for i in 0..m {
            let mut den = Complex64::new(1.0, 0.0);
            for j in 0..m {
                if j != i {
                    den *= z[i] - z[j];
                }
            }
            let step = eval(z[i]) / den;
            z[i] -= step;
        }
    }
    z
}

#[test]
fn hurwitz_agrees_with_root_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut stable = 0;
    for _ in 0..100 {
        let degree = rng.gen_range(1..=4usize);
        let mut roots = Vec::new();
        while roots.len() < degree {
            let mut re: f64 = -rng.gen_range(0.05..3.0);
            if rng.gen_bool(0.3) {
                re = -re;
            }
            if degree - roots.len() >= 2 && rng.gen_bool(0.5) {
                let im = rng.gen_range(0.1..3.0);
                roots.push(Complex64::new(re, im));
                roots.push(Complex64::new(re, -im));
            } else {
                roots.push(Complex64::new(re, 0.0));
            }
        }
        let lambda = monic_from_roots(&roots);
        let by_construction = roots.iter().all(|r| r.re < 0.0);
        let oracle = brute_force_roots(&lambda).iter().all(|r| r.re < -1e-9);
        assert_eq!(oracle, by_construction, "roots {roots:?}");
        assert_eq!(check_hurwitz(&lambda), oracle, "lambda {lambda:?}");
        stable += usize::from(oracle);
    }
    assert!(stable > 20 && stable < 100, "sample should mix both cases: {stable}");
}
