//! Independent reference computations used as test oracles. None of these
//! call into the solver paths they are used to check.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Huber-type penalty written out from its definition as the value of the
/// scalar prox problem `min_v (t - v)^2 + lambda |v|`.
pub fn f_ref(t: f64, lambda: f64) -> f64 {
    let v = if t > lambda / 2.0 {
        t - lambda / 2.0
    } else if t < -lambda / 2.0 {
        t + lambda / 2.0
    } else {
        0.0
    };
    (t - v) * (t - v) + lambda * v.abs()
}

/// `f(a) - f(b)` evaluated without forming the two large values. Within
/// one branch the difference carries the factor `a - b`, which is passed in
/// exactly as `dx` rather than recomputed from the rounded residuals.
fn f_diff(a: f64, b: f64, dx: f64, lambda: f64) -> f64 {
    let h = lambda / 2.0;
    let region = |t: f64| {
        if t > h {
            1
        } else if t < -h {
            -1
        } else {
            0
        }
    };
    match (region(a), region(b)) {
        (0, 0) => dx * (a + b),
        (s, t) if s == t => lambda * s as f64 * dx,
        // integrate f' piece by piece over the interval between them
        _ => {
            let (lo, hi, sign) = if a < b { (a, b, -1.0) } else { (b, a, 1.0) };
            let (qlo, qhi) = (lo.max(-h), hi.min(h));
            let quad = if qlo < qhi { (qhi - qlo) * (qhi + qlo) } else { 0.0 };
            let upper = lambda * (hi - lo.max(h)).max(0.0);
            let lower = -lambda * (hi.min(-h) - lo).max(0.0);
            sign * (quad + upper + lower)
        }
    }
}

/// `sum_i f(v_i - x1) - sum_i f(v_i - x2)`.
pub fn objective_diff(values: &[f64], x1: f64, x2: f64, lambda: f64) -> f64 {
    values.iter().map(|&v| f_diff(v - x1, v - x2, x2 - x1, lambda)).sum()
}

pub fn scalar_objective(values: &[f64], x: f64, lambda: f64) -> f64 {
    values.iter().map(|&v| f_ref(v - x, lambda)).sum()
}

/// Golden-section search for the minimizer of the convex scalar objective.
pub fn golden_section(values: &[f64], lambda: f64) -> f64 {
    let lo0 = values.iter().copied().fold(f64::INFINITY, f64::min) - lambda;
    let hi0 = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + lambda;
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (lo0, hi0);
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    for _ in 0..400 {
        if objective_diff(values, c, d, lambda) < 0.0 {
            hi = d;
            d = c;
            c = hi - ratio * (hi - lo);
        } else {
            lo = c;
            c = d;
            d = lo + ratio * (hi - lo);
        }
        if hi - lo <= 1e-15 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Joint minimization over `(x, a, w)` of
/// `sum |w_i|^2 + lambda sum |a_i|_1` subject to `z_i = x + w_i + a_i`,
/// by alternating the exact `a`-step (soft threshold) and `x`-step (mean).
/// Returns `(x, objective)`.
pub fn alternating_minimization(z: &[Vector], lambda: f64) -> (Vector, f64) {
    let m = z.len();
    let n = z[0].len();
    let mut x = z.iter().fold(Vector::zeros(n), |acc, zi| acc + zi) / m as f64;
    let mut a = vec![Vector::zeros(n); m];
    let soft = |t: f64| {
        if t > lambda / 2.0 {
            t - lambda / 2.0
        } else if t < -lambda / 2.0 {
            t + lambda / 2.0
        } else {
            0.0
        }
    };
    for _ in 0..200_000 {
        for (ai, zi) in a.iter_mut().zip(z) {
            *ai = (zi - &x).map(soft);
        }
        let next = z.iter().zip(&a).fold(Vector::zeros(n), |acc, (zi, ai)| acc + zi - ai) / m as f64;
        let step = (&next - &x).amax();
        x = next;
        if step < 1e-15 {
            break;
        }
    }
    for (ai, zi) in a.iter_mut().zip(z) {
        *ai = (zi - &x).map(soft);
    }
    let obj = z
        .iter()
        .zip(&a)
        .map(|(zi, ai)| (zi - &x - ai).norm_squared() + lambda * ai.lp_norm(1))
        .sum();
    (x, obj)
}

/// Time-varying Riccati recursion from `P(0) = p0`: returns the prediction
/// covariance after `steps` steps.
pub fn riccati_recursion(a: &Matrix, h: &Matrix, sigma: &Matrix, q: &Matrix, p0: &Matrix, steps: usize) -> Matrix {
    let n = a.nrows();
    let mut post = p0.clone();
    let mut prior = a * &post * a.transpose() + q;
    for _ in 0..steps {
        let s = h * &prior * h.transpose() + sigma;
        let k = &prior * h.transpose() * s.try_inverse().expect("innovation invertible");
        post = (Matrix::identity(n, n) - &k * h) * &prior;
        prior = a * &post * a.transpose() + q;
        prior = (&prior + prior.transpose()) * 0.5;
    }
    prior
}

/// Order statistic by brute-force enumeration of the counting definition:
/// the values `u[i]` with exactly `count` other entries at or below them.
pub fn kappa_by_counting(u: &[f64], count: usize) -> Vec<f64> {
    (0..u.len())
        .filter(|&i| (0..u.len()).filter(|&j| j != i && u[j] <= u[i]).count() == count)
        .map(|i| u[i])
        .collect()
}
