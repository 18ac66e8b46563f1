//! One-dimensional quadrature rules.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss-Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    x.iter().zip(&w).map(|(xi, wi)| (c + h * xi, h * wi)).collect()
}

/// Double-exponential (tanh-sinh) quadrature on [a, b]; tolerates integrable
/// endpoint singularities. Refines the step until successive estimates agree
/// to `tol` relative.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let half = 0.5 * (b - a);
    let tmax = 4.0;
    let eval = |t: f64| -> f64 {
        let s = 0.5 * PI * t.sinh();
        let cs = s.cosh();
        let u = s.tanh();
        let w = 0.5 * PI * t.cosh() / (cs * cs);
        // distance to the nearest endpoint computed without cancellation
        let gap = half / (s.abs().exp() * cs);
        let x = if u < 0.0 { a + gap } else { b - gap };
        if gap <= 0.0 || !(x > a && x < b) {
            return 0.0;
        }
        let v = f(x);
        if v.is_finite() {
            v * w * half
        } else {
            0.0
        }
    };
    let mut step = 0.5;
    let mut sum = eval(0.0);
    let mut k = 1;
    while (k as f64) * step <= tmax {
        sum += eval(k as f64 * step) + eval(-(k as f64) * step);
        k += 1;
    }
    let mut est = sum * step;
    for _ in 0..10 {
        step *= 0.5;
        let mut add = 0.0;
        let mut k = 1;
        while (k as f64) * step <= tmax {
            add += eval(k as f64 * step) + eval(-(k as f64) * step);
            k += 2;
        }
        sum += add;
        let next = sum * step;
        if (next - est).abs() <= tol * next.abs() {
            return next;
        }
        est = next;
    }
    est
}
