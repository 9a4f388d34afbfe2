//! Robustness conditions, the order-statistic deviation bound, the region
//! where the robust estimate coincides with the Kalman estimate, and Monte
//! Carlo estimates of how often that happens.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::attack::{apply_attack, drive_attack, CompromisedSet};
use crate::error::{Error, Result};
use crate::fusion::{robust_fuse, FusionConfig};
use crate::linalg::{GaussianSampler, Vector};
use crate::par::{map_indexed, Execution};
use crate::system::{kalman_fuse, CovarianceStructure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    /// `2p < m`: every `(p, m)`-sparse attack causes a bounded deviation.
    RobustSufficient,
    /// `2p > m`: some attack drives the estimate arbitrarily far.
    NotRobust,
    /// `2p == m`: neither condition applies.
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RobustnessVerdict {
    pub verdict: Verdict,
    pub p: usize,
    pub m: usize,
}

pub fn robustness_condition(p: usize, m: usize) -> Result<RobustnessVerdict> {
    if m == 0 || p > m {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= p <= m and m >= 1, got p = {p}, m = {m}"
        )));
    }
    let verdict = match (2 * p).cmp(&m) {
        std::cmp::Ordering::Less => Verdict::RobustSufficient,
        std::cmp::Ordering::Greater => Verdict::NotRobust,
        std::cmp::Ordering::Equal => Verdict::Boundary,
    };
    Ok(RobustnessVerdict { verdict, p, m })
}

/// Rank used by the kappa maps: `floor((m - 2p) / 2) + 2`.
pub fn kappa_rank(p: usize, m: usize) -> Result<usize> {
    let spare = m as i64 - 2 * p as i64;
    let rank = spare.div_euclid(2) + 2;
    if rank < 1 || rank > m as i64 {
        return Err(Error::RankOutOfRange { rank, len: m });
    }
    Ok(rank as usize)
}

fn order_statistic(u: &[f64], m: usize, rank: usize, descending: bool) -> Result<f64> {
    if u.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "vector has length {}, expected {m}",
            u.len()
        )));
    }
    let mut sorted = u.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    if descending {
        sorted.reverse();
    }
    Ok(sorted[rank - 1])
}

/// Lower kappa map: the element with exactly `floor((m-2p)/2) + 1` others
/// at or below it, taken as the `kappa_rank`-th smallest so that ties are
/// resolved deterministically.
pub fn kappa_lo(u: &[f64], p: usize, m: usize) -> Result<f64> {
    order_statistic(u, m, kappa_rank(p, m)?, false)
}

/// Mirror of [`kappa_lo`]: the `kappa_rank`-th largest element.
pub fn kappa_hi(u: &[f64], p: usize, m: usize) -> Result<f64> {
    order_statistic(u, m, kappa_rank(p, m)?, true)
}

/// Per-coordinate deviation bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub theta_lo: Vec<f64>,
    pub theta_hi: Vec<f64>,
    pub beta_plus: Vec<f64>,
    /// `sum_j beta_plus[j]`, a bound on the L1 deviation.
    pub mu: f64,
}

fn assemble_bound(
    locals: &[Vector],
    baseline: &Vector,
    lambda: f64,
    pick: impl Fn(&[f64]) -> Result<(f64, f64)>,
) -> Result<BoundReport> {
    let n = baseline.len();
    let half = 0.5 * lambda;
    let mut theta_lo = Vec::with_capacity(n);
    let mut theta_hi = Vec::with_capacity(n);
    let mut beta_plus = Vec::with_capacity(n);
    for j in 0..n {
        let zeta: Vec<f64> = locals.iter().map(|x| x[j] - baseline[j]).collect();
        let (lo, hi) = pick(&zeta)?;
        theta_lo.push(lo);
        theta_hi.push(hi);
        beta_plus.push((lo - half).abs().max((hi + half).abs()));
    }
    let mu = beta_plus.iter().sum();
    Ok(BoundReport {
        theta_lo,
        theta_hi,
        beta_plus,
        mu,
    })
}

fn require_robust(p: usize, m: usize) -> Result<()> {
    if 2 * p >= m {
        return Err(Error::InvalidArgument(format!(
            "deviation bound needs 2p < m, got p = {p}, m = {m}"
        )));
    }
    Ok(())
}

/// Order-statistic bound `mu = sum_j max(|theta_lo_j - lambda/2|, |theta_hi_j + lambda/2|)`
/// with `theta` the kappa maps of the centred locals `x_i - baseline`.
///
/// `baseline` is the attack-free robust estimate. Empirically this bound
/// holds at large `lambda` but is exceeded when `lambda` is small relative
/// to the spread of the locals; see [`certified_bound`] for a variant that
/// always holds.
pub fn worst_case_bound(locals: &[Vector], baseline: &Vector, p: usize, lambda: f64) -> Result<BoundReport> {
    let m = locals.len();
    require_robust(p, m)?;
    assemble_bound(locals, baseline, lambda, |zeta| {
        Ok((kappa_lo(zeta, p, m)?, kappa_hi(zeta, p, m)?))
    })
}

/// Same shape as [`worst_case_bound`] but with the order statistic at rank
/// `k = ceil((m - 2p) / 2)`.
///
/// If the estimate sat below `theta_lo - lambda/2`, at least `m - k + 1`
/// residuals would be saturated at `+lambda`, at least `m - k + 1 - p` of
/// them benign; the remaining `k - 1` benign and `p` compromised residuals
/// contribute at least `-(k - 1 + p) lambda`, so the gradient sum is at
/// least `(m - 2p - 2k + 2) lambda > 0` and the point cannot be optimal.
pub fn certified_bound(locals: &[Vector], baseline: &Vector, p: usize, lambda: f64) -> Result<BoundReport> {
    let m = locals.len();
    require_robust(p, m)?;
    let rank = (m - 2 * p).div_ceil(2);
    assemble_bound(locals, baseline, lambda, |zeta| {
        Ok((
            order_statistic(zeta, m, rank, false)?,
            order_statistic(zeta, m, rank, true)?,
        ))
    })
}

/// `max_i |x_i - mean(x)|_1`.
pub fn max_l1_spread(locals: &[Vector]) -> f64 {
    let mean = kalman_fuse(locals);
    locals.iter().map(|x| (x - &mean).lp_norm(1)).fold(0.0, f64::max)
}

/// True when every local is within `lambda/2` of the mean in L1; the
/// robust estimate then equals the mean.
pub fn mmse_region_check(locals: &[Vector], lambda: f64) -> bool {
    max_l1_spread(locals) <= 0.5 * lambda
}

/// `C(u) = lambda |u|_1`, the limiting slope of `F` along `u`.
pub fn c_of_u(u: &Vector, lambda: f64) -> f64 {
    lambda * u.lp_norm(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecoveryEstimate {
    pub lambda: f64,
    pub probability: f64,
    pub hits: usize,
    pub samples: usize,
}

/// Samples per Monte Carlo batch; each batch draws from its own stream.
pub const RECOVERY_BATCH: usize = 4096;

/// Probability that the stacked local errors `e ~ N(0, Gamma)` fall in the
/// region where the robust estimate is the Kalman estimate.
pub fn recovery_probability(
    cov: &CovarianceStructure,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<RecoveryEstimate> {
    let mut out = recovery_probabilities(cov, &[lambda], samples, seed, Execution::default())?;
    Ok(out.remove(0))
}

/// Like [`recovery_probability`] for several `lambda` at once, sharing the
/// same draws. Since the regions are nested, the estimates are monotone in
/// `lambda` sample by sample.
pub fn recovery_probabilities(
    cov: &CovarianceStructure,
    lambdas: &[f64],
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<RecoveryEstimate>> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {bad}")));
    }
    let n = cov.pii.nrows();
    let nm = cov.gamma.nrows();
    if n == 0 || !nm.is_multiple_of(n) {
        return Err(Error::DimensionMismatch(format!(
            "Gamma is {nm}x{nm} with blocks of size {n}"
        )));
    }
    let m = nm / n;
    let sampler = GaussianSampler::new(Vector::zeros(nm), &cov.gamma, seed)?;

    let batches = samples.div_ceil(RECOVERY_BATCH);
    let per_batch = map_indexed(exec, batches, |b| {
        let mut s = sampler.with_stream(b as u64);
        let count = RECOVERY_BATCH.min(samples - b * RECOVERY_BATCH);
        let mut hits = vec![0usize; lambdas.len()];
        for _ in 0..count {
            let e = s.draw();
            let locals: Vec<Vector> = (0..m).map(|i| e.rows(i * n, n).into_owned()).collect();
            let spread = max_l1_spread(&locals);
            for (h, lambda) in hits.iter_mut().zip(lambdas) {
                if spread <= 0.5 * lambda {
                    *h += 1;
                }
            }
        }
        hits
    });

    Ok(lambdas
        .iter()
        .enumerate()
        .map(|(k, &lambda)| {
            let hits: usize = per_batch.iter().map(|h| h[k]).sum();
            RecoveryEstimate {
                lambda,
                probability: hits as f64 / samples as f64,
                hits,
                samples,
            }
        })
        .collect())
}

/// `+-e_j` for every axis followed by `random` unit vectors drawn from a
/// seeded ChaCha stream.
pub fn probe_directions(n: usize, random: usize, seed: u64) -> Vec<Vector> {
    let mut dirs = Vec::with_capacity(2 * n + random);
    for j in 0..n {
        for sign in [1.0, -1.0] {
            let mut e = Vector::zeros(n);
            e[j] = sign;
            dirs.push(e);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while dirs.len() < 2 * n + random {
        let v = Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
        let norm = v.norm();
        if norm > 1e-12 {
            dirs.push(v / norm);
        }
    }
    dirs
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCase {
    pub support: usize,
    pub direction: usize,
    pub magnitude: f64,
    /// `|g(x) - g(z)|_1`.
    pub deviation: f64,
}

/// Drive attacks over every support of size `p`, every direction and every
/// magnitude, applied to one set of locals.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub baseline: Vector,
    pub cases: Vec<SweepCase>,
}

impl SweepReport {
    pub fn max_deviation(&self) -> f64 {
        self.cases.iter().map(|c| c.deviation).fold(0.0, f64::max)
    }

    pub fn max_deviation_at(&self, magnitude: f64) -> f64 {
        self.cases
            .iter()
            .filter(|c| c.magnitude == magnitude)
            .map(|c| c.deviation)
            .fold(0.0, f64::max)
    }
}

pub fn drive_sweep(
    locals: &[Vector],
    p: usize,
    config: &FusionConfig,
    directions: &[Vector],
    magnitudes: &[f64],
    exec: Execution,
) -> Result<SweepReport> {
    let m = locals.len();
    let supports = CompromisedSet::all_of_size(p, m);
    let baseline = robust_fuse(locals, config).xhat;
    let per_pair = directions.len() * magnitudes.len();
    let total = supports.len() * per_pair;

    let cases = map_indexed(exec, total, |idx| {
        let support = idx / per_pair;
        let direction = (idx % per_pair) / magnitudes.len();
        let magnitude = magnitudes[idx % magnitudes.len()];
        let attack = drive_attack(&directions[direction], magnitude, locals, &supports[support]);
        let z = apply_attack(locals, &attack)?;
        let deviation = (robust_fuse(&z, config).xhat - &baseline).lp_norm(1);
        Ok(SweepCase {
            support,
            direction,
            magnitude,
            deviation,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { baseline, cases })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_locals(v: &[f64]) -> Vec<Vector> {
        v.iter().map(|&x| Vector::from_element(1, x)).collect()
    }

    #[test]
    fn verdict_table() {
        assert_eq!(robustness_condition(2, 5).unwrap().verdict, Verdict::RobustSufficient);
        assert_eq!(robustness_condition(3, 5).unwrap().verdict, Verdict::NotRobust);
        assert_eq!(robustness_condition(2, 4).unwrap().verdict, Verdict::Boundary);
        assert_eq!(robustness_condition(0, 1).unwrap().verdict, Verdict::RobustSufficient);
        assert!(robustness_condition(6, 5).is_err());
        assert!(robustness_condition(0, 0).is_err());
    }

    #[test]
    fn kappa_examples() {
        let u = [-1.0, -0.5, 0.0, 0.5, 1.0];
        assert_eq!(kappa_lo(&u, 2, 5).unwrap(), -0.5);
        assert_eq!(kappa_hi(&u, 2, 5).unwrap(), 0.5);
        // p = 0: L = 2, fourth smallest
        assert_eq!(kappa_lo(&u, 0, 5).unwrap(), 0.5);
        assert_eq!(kappa_lo(&[3.0; 4], 1, 4).unwrap(), 3.0);
        assert_eq!(kappa_hi(&[3.0; 4], 1, 4).unwrap(), 3.0);
    }

    #[test]
    fn kappa_rank_errors() {
        assert!(matches!(
            kappa_lo(&[1.0], 0, 1),
            Err(Error::RankOutOfRange { rank: 2, len: 1 })
        ));
        assert!(matches!(kappa_hi(&[1.0, 2.0], 0, 2), Err(Error::RankOutOfRange { .. })));
        assert!(kappa_lo(&[1.0, 2.0], 0, 3).is_err());
    }

    #[test]
    fn bound_formula() {
        let locals = scalar_locals(&[-1.0, -0.5, 0.0, 0.5, 1.0]);
        let r = worst_case_bound(&locals, &Vector::zeros(1), 2, 1.0).unwrap();
        assert_eq!(r.theta_lo, vec![-0.5]);
        assert_eq!(r.theta_hi, vec![0.5]);
        assert_eq!(r.beta_plus, vec![1.0]);
        assert_eq!(r.mu, 1.0);

        let same = vec![Vector::from_vec(vec![2.0, -3.0]); 5];
        let r = worst_case_bound(&same, &Vector::from_vec(vec![2.0, -3.0]), 2, 0.8).unwrap();
        assert_abs_diff_eq!(r.mu, 2.0 * 0.4, epsilon = 1e-15);
        assert!(worst_case_bound(&same, &Vector::zeros(2), 3, 1.0).is_err());
    }

    #[test]
    fn bound_is_exceeded_when_lambda_is_small_relative_to_spread() {
        // Two sensors at the centre are driven to -inf; the surviving
        // outlier at -10 pulls the estimate all the way to -10.
        let locals = scalar_locals(&[-10.0, 0.0, 0.0, 0.0, 10.0]);
        let cfg = FusionConfig::new(1.0).unwrap();
        let baseline = robust_fuse(&locals, &cfg).xhat;
        assert_abs_diff_eq!(baseline[0], 0.0, epsilon = 1e-12);
        let support = CompromisedSet::new(vec![1, 2], 5).unwrap();
        let a = drive_attack(&Vector::from_element(1, -1.0), 1e6, &locals, &support);
        let z = apply_attack(&locals, &a).unwrap();
        let deviation = (robust_fuse(&z, &cfg).xhat - &baseline).lp_norm(1);
        assert_abs_diff_eq!(deviation, 10.0, epsilon = 1e-6);

        let order_stat = worst_case_bound(&locals, &baseline, 2, 1.0).unwrap();
        assert_eq!(order_stat.mu, 0.5);
        assert!(deviation > order_stat.mu);
        let certified = certified_bound(&locals, &baseline, 2, 1.0).unwrap();
        assert_eq!(certified.mu, 10.5);
        assert!(deviation <= certified.mu);
    }

    #[test]
    fn region_examples() {
        assert!(mmse_region_check(&vec![Vector::from_element(2, 1.0); 4], 0.01));
        let locals = scalar_locals(&[-0.3, 0.3]);
        assert!(mmse_region_check(&locals, 1.0));
        let fused = robust_fuse(&locals, &FusionConfig::new(1.0).unwrap()).xhat;
        assert_abs_diff_eq!(fused[0], 0.0, epsilon = 1e-15);
        // one local displaced by lambda in L1 from the mean
        let displaced = scalar_locals(&[0.0, 0.0, 0.0, 1.25]);
        assert!(!mmse_region_check(&displaced, 1.0));
    }

    #[test]
    fn c_of_u_values() {
        assert_eq!(c_of_u(&Vector::zeros(3), 2.0), 0.0);
        assert_eq!(c_of_u(&Vector::from_vec(vec![1.0, -2.0]), 2.0), 6.0);
    }

    #[test]
    fn probe_directions_are_unit() {
        let d = probe_directions(2, 48, 1);
        assert_eq!(d.len(), 52);
        assert!(d.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        assert_eq!(d[1], Vector::from_vec(vec![-1.0, 0.0]));
    }
}
