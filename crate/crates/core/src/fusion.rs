//! The L1-penalized fusion estimator.
//!
//! Eliminating the attack variables from
//! `min sum_i |w_i|^2 + lambda sum_i |a_i|_1  s.t.  z_i = x + w_i + a_i`
//! leaves `x = argmin sum_i F(z_i - x)` with `F(u) = sum_j f(u_j)` and the
//! Huber-type scalar
//!
//! ```text
//! f(t) = t^2                      |t| <= lambda/2
//!        lambda |t| - lambda^2/4  otherwise
//! ```
//!
//! `F` is separable, so the estimate is computed one coordinate at a time
//! with an exact breakpoint sweep.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::linalg::Vector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub lambda: f64,
    pub tol: f64,
}

impl FusionConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        Self::with_tol(lambda, 1e-9)
    }

    pub fn with_tol(lambda: f64, tol: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
        }
        Ok(Self { lambda, tol })
    }
}

/// Scalar Huber-type penalty.
pub fn huber_f(tau: f64, lambda: f64) -> f64 {
    let half = 0.5 * lambda;
    if tau.abs() <= half {
        tau * tau
    } else {
        lambda * tau.abs() - 0.25 * lambda * lambda
    }
}

/// Derivative of [`huber_f`]: `2 tau` inside the quadratic zone, `+-lambda`
/// outside.
pub fn huber_grad(tau: f64, lambda: f64) -> f64 {
    let half = 0.5 * lambda;
    if tau.abs() <= half {
        2.0 * tau
    } else if tau >= 0.0 {
        lambda
    } else {
        -lambda
    }
}

/// Minimizer of `(tau - v)^2 + lambda |v|`.
pub fn soft_threshold(tau: f64, lambda: f64) -> f64 {
    let half = 0.5 * lambda;
    if tau > half {
        tau - half
    } else if tau < -half {
        tau + half
    } else {
        0.0
    }
}

pub fn big_f(u: &Vector, lambda: f64) -> f64 {
    u.iter().map(|&t| huber_f(t, lambda)).sum()
}

/// Gradient of [`big_f`].
pub fn phi(u: &Vector, lambda: f64) -> Vector {
    u.map(|t| huber_grad(t, lambda))
}

/// `sum_i F(z_i - x)`.
pub fn objective(z: &[Vector], x: &Vector, lambda: f64) -> f64 {
    z.iter().map(|zi| big_f(&(zi - x), lambda)).sum()
}

/// Set of minimizers of `sum_i f(values[i] - x)` over scalar `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateMinimum {
    /// Midpoint of `[lo, hi]`.
    pub xstar: f64,
    pub lo: f64,
    pub hi: f64,
    /// Residuals `values[i] - x` inside the quadratic zone on the active piece.
    pub quadratic: usize,
    /// Residuals saturated at `+lambda` (sensor well above the estimate).
    pub saturated_above: usize,
    /// Residuals saturated at `-lambda`.
    pub saturated_below: usize,
}

impl CoordinateMinimum {
    pub fn is_unique(&self) -> bool {
        self.lo == self.hi
    }
}

#[derive(Clone, Copy)]
struct Event {
    at: f64,
    sensor: usize,
    enter: bool,
}

/// Exact minimizer of `sum_i f(values[i] - x)`.
///
/// The derivative `D(x) = -sum_i f'(values[i] - x)` is continuous,
/// nondecreasing and affine between the sorted breakpoints
/// `values[i] +- lambda/2`; it runs from `-m lambda` on the far left to
/// `+m lambda` on the far right. The sweep finds the piece where `D`
/// crosses zero and solves the linear equation there. A piece with no
/// quadratic residual and balanced saturation is flat at zero and is
/// returned whole.
pub fn coordinate_minimize(values: &[f64], lambda: f64) -> CoordinateMinimum {
    let m = values.len();
    assert!(m > 0, "coordinate_minimize needs at least one value");
    let half = 0.5 * lambda;

    // A flat zero piece exists only for even m, between the two middle
    // order statistics when they are more than lambda apart.
    if m.is_multiple_of(2) {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let (lo, hi) = (sorted[m / 2 - 1] + half, sorted[m / 2] - half);
        if lo < hi {
            return CoordinateMinimum {
                xstar: 0.5 * (lo + hi),
                lo,
                hi,
                quadratic: 0,
                saturated_above: m / 2,
                saturated_below: m / 2,
            };
        }
    }

    let mut events: Vec<Event> = values
        .iter()
        .enumerate()
        .flat_map(|(sensor, &v)| {
            [
                Event {
                    at: v - half,
                    sensor,
                    enter: true,
                },
                Event {
                    at: v + half,
                    sensor,
                    enter: false,
                },
            ]
        })
        .collect();
    events.sort_by(|a, b| a.at.partial_cmp(&b.at).unwrap_or(Ordering::Equal));

    // State on the piece to the right of the processed events.
    let mut in_quad = vec![false; m];
    let mut above = m;
    let mut below = 0usize;
    let mut quad = 0usize;
    let mut quad_sum = 0.0;

    let slope_value = |above: usize, below: usize, quad: usize, quad_sum: f64, x: f64| {
        lambda * (below as f64 - above as f64) - 2.0 * quad_sum + 2.0 * quad as f64 * x
    };

    let mut idx = 0;
    while idx < events.len() {
        let left = events[idx].at;
        while idx < events.len() && events[idx].at == left {
            let e = events[idx];
            if e.enter {
                in_quad[e.sensor] = true;
                above -= 1;
                quad += 1;
                quad_sum += values[e.sensor];
            } else {
                in_quad[e.sensor] = false;
                quad -= 1;
                below += 1;
                quad_sum -= values[e.sensor];
            }
            idx += 1;
        }
        let right = events.get(idx).map_or(f64::INFINITY, |e| e.at);

        if quad == 0 {
            if above == below {
                return CoordinateMinimum {
                    xstar: 0.5 * (left + right),
                    lo: left,
                    hi: right,
                    quadratic: 0,
                    saturated_above: above,
                    saturated_below: below,
                };
            }
            continue;
        }

        let at_right = if right.is_finite() {
            slope_value(above, below, quad, quad_sum, right)
        } else {
            f64::INFINITY
        };
        if at_right >= 0.0 {
            // Recompute the quadratic sum on this piece to shed sweep drift.
            let exact_sum: f64 = values.iter().zip(&in_quad).filter_map(|(v, &q)| q.then_some(*v)).sum();
            let root = (2.0 * exact_sum - lambda * (below as f64 - above as f64)) / (2.0 * quad as f64);
            let x = root.clamp(left, right);
            return CoordinateMinimum {
                xstar: x,
                lo: x,
                hi: x,
                quadratic: quad,
                saturated_above: above,
                saturated_below: below,
            };
        }
    }
    unreachable!("derivative reaches +m*lambda after the last breakpoint")
}

/// Robust estimate with per-coordinate minimizer sets.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustEstimate {
    pub xhat: Vector,
    pub per_coordinate: Vec<CoordinateMinimum>,
}

/// `argmin_x sum_i F(z_i - x)`, solved coordinate by coordinate.
pub fn robust_fuse(z: &[Vector], config: &FusionConfig) -> RobustEstimate {
    assert!(!z.is_empty(), "robust_fuse needs at least one local estimate");
    let n = z[0].len();
    let per_coordinate: Vec<CoordinateMinimum> = (0..n)
        .map(|j| {
            let column: Vec<f64> = z.iter().map(|zi| zi[j]).collect();
            coordinate_minimize(&column, config.lambda)
        })
        .collect();
    let xhat = Vector::from_iterator(n, per_coordinate.iter().map(|c| c.xstar));
    debug_assert!(z.iter().all(|zi| {
        let at_input = objective(z, zi, config.lambda);
        objective(z, &xhat, config.lambda) <= at_input + 1e-9 * at_input.abs().max(1.0)
    }));
    RobustEstimate { xhat, per_coordinate }
}

/// Checks `g(z + E u) == u + g(z)` in the max norm. The tolerance
/// `config.tol` is scaled by the magnitude of the inputs, since both sides
/// carry rounding error proportional to it.
pub fn check_translation_invariance(z: &[Vector], u: &Vector, config: &FusionConfig) -> bool {
    let shifted: Vec<Vector> = z.iter().map(|zi| zi + u).collect();
    let lhs = robust_fuse(&shifted, config).xhat;
    let rhs = u + robust_fuse(z, config).xhat;
    let scale = z.iter().map(|zi| zi.amax()).fold(u.amax(), f64::max).max(1.0);
    (lhs - rhs).amax() < config.tol * scale
}
