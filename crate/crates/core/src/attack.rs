//! Sparse attacks on the local estimates: `z_i = x_i + a_i` with `a_i = 0`
//! outside a fixed compromised set of at most `p` sensors.

use itertools::Itertools;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Sorted, duplicate-free set of compromised sensor indices (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompromisedSet {
    indices: Vec<usize>,
    sensors: usize,
}

impl CompromisedSet {
    pub fn new(mut indices: Vec<usize>, sensors: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= sensors) {
            return Err(Error::InvalidArgument(format!(
                "sensor index {bad} out of range for {sensors} sensors"
            )));
        }
        Ok(Self { indices, sensors })
    }

    /// `{0, ..., p-1}`.
    pub fn first(p: usize, sensors: usize) -> Result<Self> {
        Self::new((0..p).collect(), sensors)
    }

    pub fn empty(sensors: usize) -> Self {
        Self {
            indices: Vec::new(),
            sensors,
        }
    }

    /// Every support of size exactly `p`.
    pub fn all_of_size(p: usize, sensors: usize) -> Vec<Self> {
        (0..sensors)
            .combinations(p)
            .map(|indices| Self { indices, sensors })
            .collect()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Errors unless this set satisfies `|I| <= p`.
    pub fn check_budget(&self, p: usize) -> Result<()> {
        if self.len() > p {
            return Err(Error::InvalidArgument(format!(
                "{} compromised sensors exceed the budget p = {p}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Per-sensor attack blocks `a_i`, tagged with the support they were
/// generated for.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackVector {
    pub support: CompromisedSet,
    pub blocks: Vec<Vector>,
}

impl AttackVector {
    pub fn zero(support: CompromisedSet, n: usize) -> Self {
        let blocks = vec![Vector::zeros(n); support.sensors()];
        Self { support, blocks }
    }

    /// Number of nonzero blocks.
    pub fn nonzero_blocks(&self) -> usize {
        self.blocks.iter().filter(|b| b.iter().any(|&v| v != 0.0)).count()
    }

    /// Ok when every nonzero block belongs to the support.
    pub fn check_sparsity(&self) -> Result<()> {
        match self
            .blocks
            .iter()
            .enumerate()
            .find(|(i, b)| !self.support.contains(*i) && b.iter().any(|&v| v != 0.0))
        {
            Some((index, _)) => Err(Error::SparsityViolation { index }),
            None => Ok(()),
        }
    }
}

/// `z_i = x_i + a_i`.
pub fn apply_attack(locals: &[Vector], attack: &AttackVector) -> Result<Vec<Vector>> {
    if attack.blocks.len() != locals.len() {
        return Err(Error::DimensionMismatch(format!(
            "attack has {} blocks for {} sensors",
            attack.blocks.len(),
            locals.len()
        )));
    }
    attack.check_sparsity()?;
    Ok(locals.iter().zip(&attack.blocks).map(|(x, a)| x + a).collect())
}

/// Places every compromised sensor at `t u`: `a_i = t u - x_i` on the
/// support, zero elsewhere. `u` is expected to have unit norm.
pub fn drive_attack(
    direction: &Vector,
    magnitude: f64,
    locals: &[Vector],
    compromised: &CompromisedSet,
) -> AttackVector {
    let target = direction * magnitude;
    let blocks = locals
        .iter()
        .enumerate()
        .map(|(i, x)| {
            if compromised.contains(i) {
                &target - x
            } else {
                Vector::zeros(x.len())
            }
        })
        .collect();
    AttackVector {
        support: compromised.clone(),
        blocks,
    }
}

/// `a_i ~ scale * N(0, I)` on the support.
pub fn random_bias_attack(compromised: &CompromisedSet, n: usize, scale: f64, rng: &mut ChaCha8Rng) -> AttackVector {
    let blocks = (0..compromised.sensors())
        .map(|i| {
            if compromised.contains(i) && scale != 0.0 {
                Vector::from_iterator(
                    n,
                    (0..n).map(|_| {
                        let xi: f64 = StandardNormal.sample(rng);
                        scale * xi
                    }),
                )
            } else {
                Vector::zeros(n)
            }
        })
        .collect();
    AttackVector {
        support: compromised.clone(),
        blocks,
    }
}

/// An attack policy. Implementations must be deterministic functions of
/// their parameters, the step index and the current local estimates.
pub trait AttackStrategy: Send + Sync {
    fn generate(&self, step: usize, locals: &[Vector], compromised: &CompromisedSet) -> AttackVector;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoAttack;

impl AttackStrategy for NoAttack {
    fn generate(&self, _step: usize, locals: &[Vector], compromised: &CompromisedSet) -> AttackVector {
        let n = locals.first().map_or(0, |x| x.len());
        AttackVector::zero(compromised.clone(), n)
    }
}

#[derive(Debug, Clone)]
pub struct DriveAttack {
    pub direction: Vector,
    pub magnitude: f64,
}

impl DriveAttack {
    /// Normalizes `direction` to unit length.
    pub fn new(direction: Vector, magnitude: f64) -> Result<Self> {
        let norm = direction.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidArgument(
                "drive direction must be a nonzero finite vector".into(),
            ));
        }
        if !(magnitude >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "drive magnitude must be >= 0, got {magnitude}"
            )));
        }
        Ok(Self {
            direction: direction / norm,
            magnitude,
        })
    }
}

impl AttackStrategy for DriveAttack {
    fn generate(&self, _step: usize, locals: &[Vector], compromised: &CompromisedSet) -> AttackVector {
        drive_attack(&self.direction, self.magnitude, locals, compromised)
    }
}

/// Fresh Gaussian bias every step, drawn from ChaCha stream `step` of `seed`.
#[derive(Debug, Clone)]
pub struct RandomBiasAttack {
    pub scale: f64,
    pub seed: u64,
}

impl AttackStrategy for RandomBiasAttack {
    fn generate(&self, step: usize, locals: &[Vector], compromised: &CompromisedSet) -> AttackVector {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step as u64);
        let n = locals.first().map_or(0, |x| x.len());
        random_bias_attack(compromised, n, self.scale, &mut rng)
    }
}
