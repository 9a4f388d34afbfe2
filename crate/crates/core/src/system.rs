//! Plant and sensor simulation, the steady-state Kalman filter, and its
//! decomposition into per-sensor local estimators.
//!
//! With `m` identical sensors the stacked observation matrix is
//! `H = [C; C; ...; C]` and the steady gain splits into identical blocks
//! `K = [G, G, ..., G]`. The centralized update
//! `x(k) = (A - KHA) x(k-1) + K y(k)` is then the average of the local
//! recursions `x_i(k) = (A - KHA) x_i(k-1) + m G y_i(k)`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{self, GaussianSampler, Matrix, Vector};

/// Linear time-invariant plant observed by `m` homogeneous sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: Matrix,
    pub c: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    pub sensors: usize,
    pub mu0: Vector,
    pub p0: Matrix,
}

impl SystemModel {
    pub fn new(a: Matrix, c: Matrix, q: Matrix, r: Matrix, sensors: usize, mu0: Vector, p0: Matrix) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::InvalidModel(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let l = c.nrows();
        if l == 0 || c.ncols() != n {
            return Err(Error::InvalidModel(format!(
                "C must be l x {n}, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if q.shape() != (n, n) {
            return Err(Error::InvalidModel(format!("Q must be {n}x{n}")));
        }
        if r.shape() != (l, l) {
            return Err(Error::InvalidModel(format!("R must be {l}x{l}")));
        }
        if p0.shape() != (n, n) {
            return Err(Error::InvalidModel(format!("P0 must be {n}x{n}")));
        }
        if mu0.len() != n {
            return Err(Error::InvalidModel(format!("mu0 must have length {n}")));
        }
        if sensors == 0 {
            return Err(Error::InvalidModel("at least one sensor is required".into()));
        }
        for (name, mat) in [("A", &a), ("C", &c), ("Q", &q), ("R", &r), ("P0", &p0)] {
            if !linalg::all_finite(mat) {
                return Err(Error::InvalidModel(format!("{name} has non-finite entries")));
            }
        }
        for (name, mat) in [("Q", &q), ("R", &r), ("P0", &p0)] {
            if !linalg::is_symmetric_psd(mat, 1e-10) {
                return Err(Error::InvalidModel(format!(
                    "{name} must be symmetric positive semidefinite"
                )));
            }
        }
        Ok(Self {
            a,
            c,
            q,
            r,
            sensors,
            mu0,
            p0,
        })
    }

    /// The two-state example plant: an unstable mode at 1.01, full-state
    /// sensors with correlated noise, five sensors, `mu0 = 0`, `P0 = I`.
    pub fn default_scenario() -> Self {
        Self::new(
            Matrix::from_row_slice(2, 2, &[0.95, 1.0, 0.0, 1.01]),
            Matrix::identity(2, 2),
            Matrix::from_row_slice(2, 2, &[1.5, 1.0, 1.0, 2.0]),
            Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]),
            5,
            Vector::zeros(2),
            Matrix::identity(2, 2),
        )
        .expect("built-in scenario is valid")
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// `H = [C; ...; C]`, `lm x n`.
    pub fn stacked_observation(&self) -> Matrix {
        let (l, n) = self.c.shape();
        let mut h = Matrix::zeros(l * self.sensors, n);
        for i in 0..self.sensors {
            h.view_mut((i * l, 0), (l, n)).copy_from(&self.c);
        }
        h
    }

    /// `Sigma = diag(R, ..., R)`, `lm x lm`.
    pub fn stacked_noise(&self) -> Matrix {
        let l = self.output_dim();
        let mut sigma = Matrix::zeros(l * self.sensors, l * self.sensors);
        for i in 0..self.sensors {
            sigma.view_mut((i * l, i * l), (l, l)).copy_from(&self.r);
        }
        sigma
    }
}

/// Steady-state Kalman quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyKalman {
    /// `K`, `n x lm`.
    pub gain: Matrix,
    /// `G`, the common `n x l` block of `K`.
    pub block: Matrix,
    /// `A - K H A`.
    pub closed_loop: Matrix,
    /// Prediction covariance, the DARE solution.
    pub prior_cov: Matrix,
    /// `(I - K H) P`.
    pub posterior_cov: Matrix,
}

pub fn build_steady_kalman(model: &SystemModel, tol: f64) -> Result<SteadyKalman> {
    let h = model.stacked_observation();
    let sigma = model.stacked_noise();
    let prior_cov = linalg::dare_solve(&model.a, &h, &sigma, &model.q, tol)?;

    let innovation = linalg::symmetrize(&(&h * &prior_cov * h.transpose() + &sigma));
    let chol = innovation.cholesky().ok_or(Error::SingularInnovation)?;
    // K = P H^T S^{-1}  <=>  K^T = S^{-1} H P
    let gain = chol.solve(&(&h * &prior_cov)).transpose();
    let block = check_block_structure(&gain, model.output_dim(), model.sensors)?;

    let n = model.state_dim();
    let kh = &gain * &h;
    let closed_loop = &model.a - &kh * &model.a;
    let posterior_cov = linalg::symmetrize(&((Matrix::identity(n, n) - kh) * &prior_cov));
    Ok(SteadyKalman {
        gain,
        block,
        closed_loop,
        prior_cov,
        posterior_cov,
    })
}

/// Checks that every `n x l` block of `gain` equals the first block to
/// `1e-8` relative tolerance and returns that block.
pub fn check_block_structure(gain: &Matrix, l: usize, m: usize) -> Result<Matrix> {
    let n = gain.nrows();
    if gain.ncols() != l * m {
        return Err(Error::DimensionMismatch(format!(
            "gain has {} columns, expected {}",
            gain.ncols(),
            l * m
        )));
    }
    let first = gain.columns(0, l).into_owned();
    let scale = first.amax().max(1.0);
    for block in 1..m {
        let deviation = (gain.view((0, block * l), (n, l)) - &first).amax();
        if deviation > 1e-8 * scale {
            return Err(Error::BlockStructureViolation { block, deviation });
        }
    }
    Ok(first)
}

/// Process, measurement, and initial-state noise, each on its own ChaCha
/// stream of one seed.
#[derive(Debug, Clone)]
pub struct NoiseSources {
    pub process: GaussianSampler,
    pub measurement: GaussianSampler,
    pub initial: GaussianSampler,
}

impl NoiseSources {
    pub fn new(model: &SystemModel, seed: u64) -> Result<Self> {
        let n = model.state_dim();
        let base = GaussianSampler::new(Vector::zeros(n), &model.q, seed)?;
        let meas = GaussianSampler::new(Vector::zeros(model.output_dim()), &model.r, seed)?;
        let init = GaussianSampler::new(model.mu0.clone(), &model.p0, seed)?;
        Ok(Self {
            process: base.with_stream(0),
            measurement: meas.with_stream(1),
            initial: init.with_stream(2),
        })
    }
}

/// Advances the plant one step and returns the new state together with one
/// measurement per sensor of that state.
pub fn simulate_step(model: &SystemModel, state: &Vector, noise: &mut NoiseSources) -> (Vector, Vec<Vector>) {
    let next = &model.a * state + noise.process.draw();
    let clean = &model.c * &next;
    let measurements = (0..model.sensors).map(|_| &clean + noise.measurement.draw()).collect();
    (next, measurements)
}

/// The `m` local estimates at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorBank {
    pub locals: Vec<Vector>,
    pub step: usize,
}

impl EstimatorBank {
    /// All locals start at `init` (normally `mu0`).
    pub fn new(sensors: usize, init: &Vector) -> Self {
        Self {
            locals: vec![init.clone(); sensors],
            step: 0,
        }
    }

    pub fn sensors(&self) -> usize {
        self.locals.len()
    }

    /// `x_i(k) = (A - KHA) x_i(k-1) + m G y_i(k)` for every sensor, each
    /// using only its own measurement.
    pub fn update(&self, sk: &SteadyKalman, measurements: &[Vector]) -> Result<Self> {
        let m = self.sensors();
        if measurements.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{} measurements for {m} sensors",
                measurements.len()
            )));
        }
        let l = sk.block.ncols();
        if let Some(bad) = measurements.iter().find(|y| y.len() != l) {
            return Err(Error::DimensionMismatch(format!(
                "measurement has length {}, expected {l}",
                bad.len()
            )));
        }
        let scaled_block = &sk.block * m as f64;
        let locals = self
            .locals
            .iter()
            .zip(measurements)
            .map(|(x, y)| &sk.closed_loop * x + &scaled_block * y)
            .collect();
        Ok(Self {
            locals,
            step: self.step + 1,
        })
    }

    pub fn fuse(&self) -> Vector {
        kalman_fuse(&self.locals)
    }
}

/// Arithmetic mean of the local estimates, i.e. the steady-state Kalman
/// estimate.
pub fn kalman_fuse(locals: &[Vector]) -> Vector {
    assert!(!locals.is_empty(), "cannot fuse an empty bank");
    let sum = locals.iter().skip(1).fold(locals[0].clone(), |acc, x| acc + x);
    sum / locals.len() as f64
}

/// Centralized steady-state Kalman filter on the stacked measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedKalman {
    pub estimate: Vector,
}

impl CentralizedKalman {
    pub fn new(init: Vector) -> Self {
        Self { estimate: init }
    }

    pub fn update(&mut self, sk: &SteadyKalman, measurements: &[Vector]) -> &Vector {
        let stacked = DVector::from_iterator(sk.gain.ncols(), measurements.iter().flat_map(|y| y.iter().copied()));
        self.estimate = &sk.closed_loop * &self.estimate + &sk.gain * stacked;
        &self.estimate
    }
}

/// Steady-state error covariances of the local estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceStructure {
    /// `P_ii`, shared by every sensor.
    pub pii: Matrix,
    /// `P_ij` for `i != j`.
    pub pij: Matrix,
    /// `nm x nm` covariance of the stacked errors.
    pub gamma: Matrix,
}

/// Solves the two Lyapunov equations driven by the local error dynamics
/// `e_i(k) = (A - KHA) e_i(k-1) + (mGC - I) w(k) + m G eps_i(k)` and
/// assembles the stacked covariance.
pub fn steady_covariances(model: &SystemModel, sk: &SteadyKalman, tol: f64) -> Result<CovarianceStructure> {
    let n = model.state_dim();
    let m = model.sensors;
    let mf = m as f64;
    let shaping = &sk.block * &model.c * mf - Matrix::identity(n, n);
    let shared = &shaping * &model.q * shaping.transpose();
    let own = &sk.block * &model.r * sk.block.transpose() * (mf * mf);

    let pii = linalg::lyapunov_solve(&sk.closed_loop, &(&shared + own), tol)?;
    let pij = linalg::lyapunov_solve(&sk.closed_loop, &shared, tol)?;

    let mut gamma = Matrix::zeros(n * m, n * m);
    for i in 0..m {
        for j in 0..m {
            let block = if i == j { &pii } else { &pij };
            gamma.view_mut((i * n, j * n), (n, n)).copy_from(block);
        }
    }
    Ok(CovarianceStructure { pii, pij, gamma })
}

/// One simulated time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x_true: Vector,
    pub measurements: Vec<Vector>,
    pub locals: Vec<Vector>,
    pub kf_estimate: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub steps: Vec<StepRecord>,
}

/// Simulates `steps` steps from `x(0) ~ N(mu0, P0)`, running the local bank
/// and the centralized filter side by side, both started at `mu0`.
pub fn simulate_trajectory(
    model: &SystemModel,
    sk: &SteadyKalman,
    steps: usize,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let mut noise = NoiseSources::new(model, seed)?;
    let mut state = noise.initial.draw();
    let mut bank = EstimatorBank::new(model.sensors, &model.mu0);
    let mut central = CentralizedKalman::new(model.mu0.clone());

    let mut records = Vec::with_capacity(steps);
    for k in 1..=steps {
        let (next, measurements) = simulate_step(model, &state, &mut noise);
        bank = bank.update(sk, &measurements)?;
        let kf_estimate = central.update(sk, &measurements).clone();
        records.push(StepRecord {
            k,
            x_true: next.clone(),
            measurements,
            locals: bank.locals.clone(),
            kf_estimate,
        });
        state = next;
    }
    Ok(TrajectoryRecord { steps: records })
}
