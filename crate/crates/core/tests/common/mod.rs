//! Independent numerical oracles shared by the integration tests. Nothing in
//! here calls into the quadrature or interpolation code under test.
#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

/// Double-exponential (tanh-sinh) quadrature on [a, b], refined by halving the
/// step until two successive levels agree to `rel_tol`.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let c = 0.5 * (a + b);
    let d = 0.5 * (b - a);
    let t_max = 4.0;
    let eval = |t: f64| {
        let u = FRAC_PI_2 * t.sinh();
        let ch = u.cosh();
        // 1 - tanh(u) computed without cancellation.
        let one_minus = 2.0 / ((2.0 * u).exp() + 1.0);
        let w = d * FRAC_PI_2 * t.cosh() / (ch * ch);
        if w == 0.0 {
            return 0.0;
        }
        let right = b - d * one_minus;
        let left = a + d * one_minus;
        let fr = if right > a && right < b { f(right) } else { 0.0 };
        let fl = if left > a && left < b { f(left) } else { 0.0 };
        w * (fr + fl)
    };
    let mut h = 0.5;
    let mut sum = d * FRAC_PI_2 * f(c);
    let mut k = 1;
    while k as f64 * h <= t_max {
        sum += eval(k as f64 * h);
        k += 1;
    }
    let mut estimate = h * sum;
    for _ in 0..12 {
        h *= 0.5;
        let mut k = 1;
        while k as f64 * h <= t_max {
            sum += eval(k as f64 * h);
            k += 2;
        }
        let next = h * sum;
        if (next - estimate).abs() <= rel_tol * next.abs() {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            let dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                x[i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                break;
            }
        }
    }
    (x, w)
}

/// Structured effective density, written out independently.
pub fn structured_density(g: f64, omega0: f64, alpha_cav: f64, alpha_q: f64, w: f64) -> f64 {
    let pi = std::f64::consts::PI;
    2.0 * g * g * omega0 * omega0 * alpha_cav * w
        / ((w * w - omega0 * omega0).powi(2) + (pi * alpha_cav * omega0 * w).powi(2))
        + 0.5 * alpha_q * w
}
