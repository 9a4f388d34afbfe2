//! Experiment configuration, scenario runs and their CSV / JSON artifacts.
//!
//! A configuration file is TOML. Every key is optional; missing keys take
//! the values of [`ExperimentConfig::default`], which is the two-state,
//! five-sensor scenario with `p = 2`.
//!
//! ```toml
//! seed = 42
//! steps = 200
//! p = 2
//! lambdas = [0.1, 1.0, 10.0]
//! recovery_samples = 10000
//! output = "run.csv"
//!
//! [model]
//! a = [[0.95, 1.0], [0.0, 1.01]]
//! c = [[1.0, 0.0], [0.0, 1.0]]
//! q = [[1.5, 1.0], [1.0, 2.0]]
//! r = [[2.0, 1.0], [1.0, 1.0]]
//! sensors = 5
//! mu0 = [0.0, 0.0]
//! p0 = [[1.0, 0.0], [0.0, 1.0]]
//!
//! [attack]
//! kind = "drive"          # "none" | "drive" | "random"
//! compromised = [0, 1]    # defaults to the first p sensors
//! direction = [1.0, 1.0]  # drive: normalized before use
//! magnitude = 100.0       # drive
//! scale = 10.0            # random
//! seed = 7                # random; defaults to the top-level seed
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    recovery_probabilities, robustness_condition, worst_case_bound, RecoveryEstimate, RobustnessVerdict, Verdict,
};
use crate::attack::{apply_attack, AttackStrategy, CompromisedSet, DriveAttack, NoAttack, RandomBiasAttack};
use crate::error::{Error, Result};
use crate::fusion::{robust_fuse, FusionConfig};
use crate::linalg::{Matrix, Vector, DEFAULT_TOL};
use crate::par::Execution;
use crate::system::{build_steady_kalman, kalman_fuse, simulate_trajectory, steady_covariances, SystemModel};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_STEPS: usize = 200;
pub const DEFAULT_TABLE_LAMBDAS: [f64; 4] = [1.0, 2.0, 5.0, 10.0];
pub const DEFAULT_TABLE_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub enum AttackKind {
    None,
    Drive { direction: Vector, magnitude: f64 },
    Random { scale: f64, seed: u64 },
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Drive { .. } => "drive",
            AttackKind::Random { .. } => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Defaults to the first `p` sensors.
    pub compromised: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: SystemModel,
    pub p: usize,
    pub lambdas: Vec<f64>,
    pub steps: usize,
    pub seed: u64,
    pub attack: AttackSpec,
    /// Monte Carlo draws for the recovery probabilities in the summary;
    /// zero skips them.
    pub recovery_samples: usize,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: SystemModel::default_scenario(),
            p: 2,
            lambdas: vec![0.1, 1.0, 10.0],
            steps: DEFAULT_STEPS,
            seed: DEFAULT_SEED,
            attack: AttackSpec {
                kind: AttackKind::Drive {
                    direction: Vector::from_vec(vec![1.0, 1.0]),
                    magnitude: 100.0,
                },
                compromised: None,
            },
            recovery_samples: 10_000,
            output: None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    a: Option<Vec<Vec<f64>>>,
    c: Option<Vec<Vec<f64>>>,
    q: Option<Vec<Vec<f64>>>,
    r: Option<Vec<Vec<f64>>>,
    sensors: Option<usize>,
    mu0: Option<Vec<f64>>,
    p0: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttack {
    kind: Option<String>,
    compromised: Option<Vec<usize>>,
    direction: Option<Vec<f64>>,
    magnitude: Option<f64>,
    scale: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    steps: Option<usize>,
    p: Option<usize>,
    lambdas: Option<Vec<f64>>,
    recovery_samples: Option<usize>,
    output: Option<PathBuf>,
    model: Option<RawModel>,
    attack: Option<RawAttack>,
}

fn matrix_from_rows(key: &str, rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::config(key, "matrix must be a nonempty array of rows"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::config(
            key,
            format!("row {i} has {} entries, expected {ncols}", rows[i].len()),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::config(key, "entries must be finite"));
    }
    Ok(Matrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

/// Dotted key of the assignment on the line containing byte `offset`,
/// qualified by the enclosing `[table]` header.
fn key_at(text: &str, offset: usize) -> String {
    let offset = offset.min(text.len());
    let line_start = text[..offset].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    let table = text[..line_start]
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix('[').and_then(|l| l.strip_suffix(']')))
        .map(str::trim);
    match (line.split_once('='), table) {
        (Some((k, _)), Some(t)) => format!("{t}.{}", k.trim()),
        (Some((k, _)), None) => k.trim().to_string(),
        (None, Some(t)) => t.to_string(),
        (None, None) => "<root>".to_string(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .map_or_else(|| "<root>".to_string(), |span| key_at(text, span.start));
            Error::config(key, e.message().trim().to_string())
        })?;
        Self::from_raw(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text)
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let defaults = Self::default();
        let model = match raw.model {
            None => defaults.model.clone(),
            Some(rm) => {
                let base = &defaults.model;
                let mat = |key: &str, v: &Option<Vec<Vec<f64>>>, fallback: &Matrix| -> Result<Matrix> {
                    v.as_ref()
                        .map_or(Ok(fallback.clone()), |rows| matrix_from_rows(key, rows))
                };
                let a = mat("model.a", &rm.a, &base.a)?;
                let n = a.nrows();
                let c = mat("model.c", &rm.c, &base.c)?;
                let q = mat("model.q", &rm.q, &base.q)?;
                let r = mat("model.r", &rm.r, &base.r)?;
                let mu0 = match rm.mu0 {
                    Some(v) => Vector::from_vec(v),
                    None => Vector::zeros(n),
                };
                let p0 = match &rm.p0 {
                    Some(rows) => matrix_from_rows("model.p0", rows)?,
                    None => Matrix::identity(n, n),
                };
                let sensors = rm.sensors.unwrap_or(base.sensors);
                SystemModel::new(a, c, q, r, sensors, mu0, p0).map_err(|e| Error::config("model", e.to_string()))?
            }
        };

        let seed = raw.seed.unwrap_or(defaults.seed);
        let attack = match raw.attack {
            None => defaults.attack.clone(),
            Some(ra) => {
                let kind = match ra.kind.as_deref().unwrap_or("drive") {
                    "none" => AttackKind::None,
                    "drive" => AttackKind::Drive {
                        direction: ra
                            .direction
                            .map(Vector::from_vec)
                            .unwrap_or_else(|| Vector::from_element(model.state_dim(), 1.0)),
                        magnitude: ra.magnitude.unwrap_or(100.0),
                    },
                    "random" => AttackKind::Random {
                        scale: ra.scale.unwrap_or(10.0),
                        seed: ra.seed.unwrap_or(seed),
                    },
                    other => {
                        return Err(Error::config(
                            "attack.kind",
                            format!("unknown attack `{other}`, expected none, drive or random"),
                        ))
                    }
                };
                AttackSpec {
                    kind,
                    compromised: ra.compromised,
                }
            }
        };

        let cfg = Self {
            model,
            p: raw.p.unwrap_or(defaults.p),
            lambdas: raw.lambdas.unwrap_or(defaults.lambdas),
            steps: raw.steps.unwrap_or(defaults.steps),
            seed,
            attack,
            recovery_samples: raw.recovery_samples.unwrap_or(defaults.recovery_samples),
            output: raw.output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if self.lambdas.is_empty() {
            return Err(Error::config("lambdas", "at least one penalty is required"));
        }
        if let Some(bad) = self.lambdas.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return Err(Error::config(
                "lambdas",
                format!("penalties must be positive, got {bad}"),
            ));
        }
        let m = self.model.sensors;
        if self.p > m {
            return Err(Error::config("p", format!("p = {} exceeds the {m} sensors", self.p)));
        }
        let n = self.model.state_dim();
        if let AttackKind::Drive { direction, magnitude } = &self.attack.kind {
            if direction.len() != n {
                return Err(Error::config(
                    "attack.direction",
                    format!("expected length {n}, got {}", direction.len()),
                ));
            }
            DriveAttack::new(direction.clone(), *magnitude)
                .map_err(|e| Error::config("attack.direction", e.to_string()))?;
        }
        if let AttackKind::Random { scale, .. } = &self.attack.kind {
            if !(*scale >= 0.0) {
                return Err(Error::config("attack.scale", "must be >= 0"));
            }
        }
        self.compromised_set()?;
        Ok(())
    }

    pub fn compromised_set(&self) -> Result<CompromisedSet> {
        let m = self.model.sensors;
        let set = match &self.attack.compromised {
            Some(idx) => {
                CompromisedSet::new(idx.clone(), m).map_err(|e| Error::config("attack.compromised", e.to_string()))?
            }
            None => CompromisedSet::first(self.p, m).map_err(|e| Error::config("p", e.to_string()))?,
        };
        set.check_budget(self.p)
            .map_err(|e| Error::config("attack.compromised", e.to_string()))?;
        Ok(set)
    }

    fn strategy(&self) -> Result<Box<dyn AttackStrategy>> {
        Ok(match &self.attack.kind {
            AttackKind::None => Box::new(NoAttack),
            AttackKind::Drive { direction, magnitude } => Box::new(DriveAttack::new(direction.clone(), *magnitude)?),
            AttackKind::Random { scale, seed } => Box::new(RandomBiasAttack {
                scale: *scale,
                seed: *seed,
            }),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaColumns {
    /// Robust estimate from the (possibly attacked) locals.
    pub x_rob: Vector,
    /// `|g(x) - g(z)|_1`.
    pub deviation: f64,
    /// Deviation bound from the attack-free locals; NaN unless `2p < m`.
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub k: usize,
    pub x_true: Vector,
    /// Mean of the (possibly attacked) locals.
    pub x_kf: Vector,
    pub per_lambda: Vec<LambdaColumns>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSummary {
    pub lambda: f64,
    pub max_deviation: f64,
    pub max_mu: f64,
    /// Steps where the deviation exceeded the bound.
    pub bound_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub robustness: RobustnessVerdict,
    pub seed: u64,
    pub steps: usize,
    pub attack: String,
    pub compromised: Vec<usize>,
    pub per_lambda: Vec<LambdaSummary>,
    pub recovery: Vec<RecoveryEstimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub lambdas: Vec<f64>,
    pub rows: Vec<RunRow>,
    pub summary: RunSummary,
}

/// 17 significant digits, enough to round-trip an `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn lambda_label(lambda: f64) -> String {
    format!("{lambda}")
}

pub fn run_scenario(config: &ExperimentConfig) -> Result<RunArtifact> {
    config.validate()?;
    let model = &config.model;
    let robustness = robustness_condition(config.p, model.sensors)?;
    let sk = build_steady_kalman(model, DEFAULT_TOL)?;
    let compromised = config.compromised_set()?;
    let strategy = config.strategy()?;
    let fusion: Vec<FusionConfig> = config
        .lambdas
        .iter()
        .map(|&l| FusionConfig::new(l))
        .collect::<Result<_>>()?;

    let recovery = if config.recovery_samples > 0 {
        let cov = steady_covariances(model, &sk, DEFAULT_TOL)?;
        recovery_probabilities(
            &cov,
            &config.lambdas,
            config.recovery_samples,
            config.seed,
            Execution::default(),
        )?
    } else {
        Vec::new()
    };

    let trajectory = simulate_trajectory(model, &sk, config.steps, config.seed)?;
    let mut rows = Vec::with_capacity(config.steps);
    for step in &trajectory.steps {
        let attack = strategy.generate(step.k, &step.locals, &compromised);
        let z = apply_attack(&step.locals, &attack)?;
        let per_lambda = fusion
            .iter()
            .map(|cfg| {
                let baseline = robust_fuse(&step.locals, cfg).xhat;
                let x_rob = robust_fuse(&z, cfg).xhat;
                let deviation = (&x_rob - &baseline).lp_norm(1);
                let mu = if robustness.verdict == Verdict::RobustSufficient {
                    worst_case_bound(&step.locals, &baseline, config.p, cfg.lambda)?.mu
                } else {
                    f64::NAN
                };
                Ok(LambdaColumns { x_rob, deviation, mu })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(RunRow {
            k: step.k,
            x_true: step.x_true.clone(),
            x_kf: kalman_fuse(&z),
            per_lambda,
        });
    }

    let per_lambda = config
        .lambdas
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let cols = rows.iter().map(|r| &r.per_lambda[i]);
            LambdaSummary {
                lambda,
                max_deviation: cols.clone().map(|c| c.deviation).fold(0.0, f64::max),
                max_mu: cols.clone().map(|c| c.mu).fold(f64::NAN, f64::max),
                bound_violations: cols.filter(|c| c.deviation > c.mu).count(),
            }
        })
        .collect();

    Ok(RunArtifact {
        lambdas: config.lambdas.clone(),
        rows,
        summary: RunSummary {
            robustness,
            seed: config.seed,
            steps: config.steps,
            attack: config.attack.kind.name().to_string(),
            compromised: compromised.indices().to_vec(),
            per_lambda,
            recovery,
        },
    })
}

impl RunArtifact {
    pub fn header(&self) -> Vec<String> {
        let n = self.rows.first().map_or(0, |r| r.x_true.len());
        let mut h = vec!["k".to_string()];
        h.extend((0..n).map(|j| format!("x{j}_true")));
        h.extend((0..n).map(|j| format!("x{j}_kf")));
        for &lambda in &self.lambdas {
            let tag = lambda_label(lambda);
            h.extend((0..n).map(|j| format!("x{j}_rob_{tag}")));
            h.push(format!("dev1_{tag}"));
            h.push(format!("mu_{tag}"));
        }
        h
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header())?;
        for row in &self.rows {
            let mut rec = vec![row.k.to_string()];
            rec.extend(row.x_true.iter().map(|&v| format_float(v)));
            rec.extend(row.x_kf.iter().map(|&v| format_float(v)));
            for col in &row.per_lambda {
                rec.extend(col.x_rob.iter().map(|&v| format_float(v)));
                rec.push(format_float(col.deviation));
                rec.push(format_float(col.mu));
            }
            w.write_record(rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn summary_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.summary).map_err(|e| Error::Io(e.to_string()))
    }

    /// Writes the CSV to `path` and the summary next to it as
    /// `<path>.summary.json`.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        std::fs::write(path, self.to_csv()?)?;
        let sidecar = sidecar_path(path);
        std::fs::write(&sidecar, self.summary_json()? + "\n")?;
        Ok(sidecar)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".summary.json");
    PathBuf::from(s)
}

/// Per-step bound trace with no attack applied.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundTrace {
    pub lambdas: Vec<f64>,
    pub rows: Vec<(usize, Vec<f64>)>,
}

pub fn run_bound(config: &ExperimentConfig) -> Result<BoundTrace> {
    config.validate()?;
    let model = &config.model;
    let m = model.sensors;
    if robustness_condition(config.p, m)?.verdict != Verdict::RobustSufficient {
        return Err(Error::config(
            "p",
            format!("the deviation bound needs 2p < m, got p = {}, m = {m}", config.p),
        ));
    }
    let sk = build_steady_kalman(model, DEFAULT_TOL)?;
    let trajectory = simulate_trajectory(model, &sk, config.steps, config.seed)?;
    let fusion: Vec<FusionConfig> = config
        .lambdas
        .iter()
        .map(|&l| FusionConfig::new(l))
        .collect::<Result<_>>()?;
    let rows = trajectory
        .steps
        .iter()
        .map(|step| {
            let mus = fusion
                .iter()
                .map(|cfg| {
                    let baseline = robust_fuse(&step.locals, cfg).xhat;
                    Ok(worst_case_bound(&step.locals, &baseline, config.p, cfg.lambda)?.mu)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((step.k, mus))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundTrace {
        lambdas: config.lambdas.clone(),
        rows,
    })
}

impl BoundTrace {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["k".to_string()];
        header.extend(self.lambdas.iter().map(|&l| format!("mu_{}", lambda_label(l))));
        w.write_record(header)?;
        for (k, mus) in &self.rows {
            let mut rec = vec![k.to_string()];
            rec.extend(mus.iter().map(|&v| format_float(v)));
            w.write_record(rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Recovery probabilities for each penalty on the model's steady-state
/// error covariance.
pub fn run_table1(
    model: &SystemModel,
    lambdas: &[f64],
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<RecoveryEstimate>> {
    let sk = build_steady_kalman(model, DEFAULT_TOL)?;
    let cov = steady_covariances(model, &sk, DEFAULT_TOL)?;
    recovery_probabilities(&cov, lambdas, samples, seed, exec)
}

pub fn table_to_csv(table: &[RecoveryEstimate]) -> String {
    let mut out = String::from("lambda,probability,hits,samples\n");
    for r in table {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            lambda_label(r.lambda),
            format_float(r.probability),
            r.hits,
            r.samples
        );
    }
    out
}
