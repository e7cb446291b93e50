//! Seeded Gaussian benchmark with a controllable spurious feature and a
//! synthetic-only artifact direction.
//!
//! An example of class `y`, bias group `b` and source `g` is
//!
//! ```text
//! x = s_y * mu * u_class + s_b * beta * u_bias + [g = Synthetic] * alpha * u_art + eps
//! ```
//!
//! with `s = -1` for label 0 and `+1` for label 1 and `eps ~ N(0, sigma^2 I)`.
//! The three directions are the first three coordinate axes. Each split is
//! drawn from its own ChaCha stream of the config seed, so splits do not
//! depend on the order in which they are generated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::AugmentationPlan;
use crate::error::{Error, Result};
use crate::table::{Cardinalities, Dataset, LabeledExample, Source};

pub type Rng = ChaCha8Rng;

/// Stream ids under a generator seed.
pub mod streams {
    pub const TRAIN: u64 = 1;
    pub const VALIDATION: u64 = 2;
    pub const TEST: u64 = 3;
    pub const SYNTHETIC_TRAIN: u64 = 4;
    pub const SYNTHETIC_TEST: u64 = 5;
    pub const PROBE: u64 = 6;
}

/// A ChaCha8 generator on stream `stream` of `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const CLASS_AXIS: usize = 0;
const BIAS_AXIS: usize = 1;
const ARTIFACT_AXIS: usize = 2;

/// The paper-grid bias ratios.
pub const PAPER_BIAS_RATIOS: [f64; 5] = [0.90, 0.95, 0.97, 0.99, 0.999];

/// How synthetic subgroup counts are derived from a total when a plan
/// leaves the marginal to the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticMarginal {
    /// Equal count per (y, b).
    BalancedB,
    /// The real training split's skew: majority share `bias_ratio` per class.
    MatchRealBias,
    /// Class-conditioned only; the bias group follows the generator's own
    /// skewed prior `unconditional_bias_share` for group 0, for every class.
    Unconditional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub dim: usize,
    /// Class direction scale mu.
    pub class_scale: f64,
    /// Bias direction scale beta.
    pub bias_scale: f64,
    /// Artifact direction scale alpha, synthetic examples only.
    pub artifact_scale: f64,
    pub noise_sigma: f64,
    /// Majority bias-group share within each class of the real training split.
    pub bias_ratio: f64,
    pub n_per_class: usize,
    pub validation_per_subgroup: usize,
    pub test_per_subgroup: usize,
    pub seed: u64,
    /// 0 (clean) to 5 (most degraded) synthetic quality.
    pub artifact_noise_severity: u8,
    /// Extra synthetic noise standard deviation at severity 5.
    pub artifact_noise_sigma: f64,
    pub synthetic_marginal: SyntheticMarginal,
    /// Share of bias group 0 within each class under
    /// [`SyntheticMarginal::Unconditional`].
    pub unconditional_bias_share: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            class_scale: 1.0,
            bias_scale: 2.0,
            artifact_scale: 1.5,
            noise_sigma: 1.0,
            bias_ratio: 0.99,
            n_per_class: 1000,
            validation_per_subgroup: 25,
            test_per_subgroup: 500,
            seed: 0,
            artifact_noise_severity: 0,
            artifact_noise_sigma: 1.0,
            synthetic_marginal: SyntheticMarginal::BalancedB,
            unconditional_bias_share: 0.7,
        }
    }
}

impl GeneratorConfig {
    pub fn cardinalities(&self) -> Cardinalities {
        Cardinalities::BINARY
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        for (axis, scale, name) in [
            (CLASS_AXIS, self.class_scale, "class_scale"),
            (BIAS_AXIS, self.bias_scale, "bias_scale"),
            (ARTIFACT_AXIS, self.artifact_scale, "artifact_scale"),
        ] {
            if !scale.is_finite() {
                return bad(format!("{name} must be finite"));
            }
            if axis >= self.dim && scale != 0.0 {
                return bad(format!("{name} is non-zero but dim = {} has no axis {axis}", self.dim));
            }
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be > 0, got {}", self.noise_sigma));
        }
        let floor = 1.0 / self.cardinalities().bias_groups as f64;
        if !(self.bias_ratio > floor && self.bias_ratio <= 1.0) {
            return bad(format!("bias_ratio must be in ({floor}, 1], got {}", self.bias_ratio));
        }
        if self.artifact_noise_severity > 5 {
            return bad(format!(
                "artifact_noise_severity must be 0..=5, got {}",
                self.artifact_noise_severity
            ));
        }
        if !(self.artifact_noise_sigma >= 0.0 && self.artifact_noise_sigma.is_finite()) {
            return bad("artifact_noise_sigma must be >= 0".into());
        }
        if self.validation_per_subgroup < 10 {
            return bad(format!(
                "validation_per_subgroup must be at least 10, got {}",
                self.validation_per_subgroup
            ));
        }
        if !(0.0..=1.0).contains(&self.unconditional_bias_share) {
            return bad("unconditional_bias_share must be in [0, 1]".into());
        }
        Ok(())
    }

    /// Unit class, bias and artifact directions. Directions whose axis
    /// does not exist (dim < 3, zero scale) are returned as zero vectors.
    pub fn directions(&self) -> [Vec<f64>; 3] {
        let axis = |i: usize| {
            let mut v = vec![0.0; self.dim];
            if i < self.dim {
                v[i] = 1.0;
            }
            v
        };
        let dirs = [axis(CLASS_AXIS), axis(BIAS_AXIS), axis(ARTIFACT_AXIS)];
        for i in 0..3 {
            for j in (i + 1)..3 {
                let dot: f64 = dirs[i].iter().zip(&dirs[j]).map(|(a, b)| a * b).sum();
                assert_eq!(dot, 0.0, "generator directions must be orthogonal");
            }
        }
        dirs
    }

    /// Expected feature vector of a (y, b, g) example.
    pub fn mean(&self, y: usize, b: usize, g: Source) -> Vec<f64> {
        let [u_class, u_bias, u_art] = self.directions();
        let class_scale = match g {
            Source::Real => self.class_scale,
            Source::Synthetic => self.class_scale * self.synthetic_attenuation(),
        };
        let art = if g == Source::Synthetic {
            self.artifact_scale
        } else {
            0.0
        };
        (0..self.dim)
            .map(|i| {
                sign(y) * class_scale * u_class[i] + sign(b) * self.bias_scale * u_bias[i] + art * u_art[i]
            })
            .collect()
    }

    fn synthetic_attenuation(&self) -> f64 {
        1.0 - f64::from(self.artifact_noise_severity) / 10.0
    }

    fn synthetic_extra_sigma(&self) -> f64 {
        f64::from(self.artifact_noise_severity) / 5.0 * self.artifact_noise_sigma
    }
}

fn sign(label: usize) -> f64 {
    if label == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Draws one example. Synthetic examples at severity `k` get their class
/// term attenuated by `1 - k/10` and extra isotropic noise of standard
/// deviation `(k/5) * artifact_noise_sigma`.
pub fn sample_example(
    config: &GeneratorConfig,
    y: usize,
    b: usize,
    g: Source,
    rng: &mut Rng,
) -> LabeledExample {
    let mut features = config.mean(y, b, g);
    for v in features.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += config.noise_sigma * z;
    }
    let extra = config.synthetic_extra_sigma();
    if g == Source::Synthetic && extra > 0.0 {
        for v in features.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += extra * z;
        }
    }
    LabeledExample {
        features,
        class_y: y,
        bias_b: b,
        source_g: g,
    }
}

/// The bias group over-represented in class `y`.
pub fn majority_bias(card: Cardinalities, y: usize) -> usize {
    y % card.bias_groups
}

/// Majority and minority sizes within a class of `n` examples.
fn split_class(ratio: f64, n: usize) -> (usize, usize) {
    let majority = ((ratio * n as f64).round() as usize).min(n);
    (majority, n - majority)
}

/// Smallest class size whose minority subgroup is non-empty at `ratio`.
pub fn smallest_feasible_n(ratio: f64) -> usize {
    (1..)
        .find(|&n| split_class(ratio, n).1 >= 1)
        .expect("ratio < 1 has a feasible n")
}

/// Row-major (y, b) counts of the real training split.
pub fn train_counts(config: &GeneratorConfig) -> Result<Vec<u64>> {
    config.validate()?;
    let card = config.cardinalities();
    let (majority, minority) = split_class(config.bias_ratio, config.n_per_class);
    if minority == 0 {
        let smallest_feasible = if config.bias_ratio < 1.0 {
            smallest_feasible_n(config.bias_ratio)
        } else {
            0
        };
        return Err(Error::MinorityEmpty {
            ratio: config.bias_ratio,
            n_per_class: config.n_per_class,
            smallest_feasible,
        });
    }
    Ok(card
        .subgroups_iter()
        .map(|(y, b)| {
            if b == majority_bias(card, y) {
                majority as u64
            } else {
                minority as u64
            }
        })
        .collect())
}

/// Synthetic row-major (y, b) counts for `total` examples under the
/// config's [`SyntheticMarginal`]. Remainders of the integer division are
/// dropped.
pub fn marginal_counts(config: &GeneratorConfig, total: u64) -> Vec<u64> {
    let card = config.cardinalities();
    let per_class = total / card.classes as u64;
    card.subgroups_iter()
        .map(|(y, b)| match config.synthetic_marginal {
            SyntheticMarginal::BalancedB => total / card.subgroups() as u64,
            SyntheticMarginal::MatchRealBias => {
                let (maj, min) = split_class(config.bias_ratio, per_class as usize);
                if b == majority_bias(card, y) {
                    maj as u64
                } else {
                    min as u64
                }
            }
            SyntheticMarginal::Unconditional => {
                let (first, rest) = split_class(config.unconditional_bias_share, per_class as usize);
                if b == 0 {
                    first as u64
                } else {
                    rest as u64
                }
            }
        })
        .collect()
}

fn sample_counts(config: &GeneratorConfig, counts: &[u64], g: Source, rng: &mut Rng) -> Result<Dataset> {
    let card = config.cardinalities();
    let mut examples = Vec::with_capacity(counts.iter().sum::<u64>() as usize);
    for (s, &n) in counts.iter().enumerate() {
        let (y, b) = card.subgroup_of(s);
        for _ in 0..n {
            examples.push(sample_example(config, y, b, g, rng));
        }
    }
    Dataset::new(card, config.dim, examples)
}

#[derive(Clone, Debug)]
pub struct SplitBundle {
    /// Real, biased at the configured ratio.
    pub train: Dataset,
    /// Real, balanced.
    pub validation: Dataset,
    /// Real, balanced.
    pub test: Dataset,
}

pub fn make_biased_split(config: &GeneratorConfig) -> Result<SplitBundle> {
    let counts = train_counts(config)?;
    let card = config.cardinalities();
    let balanced = |n: usize| vec![n as u64; card.subgroups()];
    let train = sample_counts(
        config,
        &counts,
        Source::Real,
        &mut rng_stream(config.seed, streams::TRAIN),
    )?;
    let validation = sample_counts(
        config,
        &balanced(config.validation_per_subgroup),
        Source::Real,
        &mut rng_stream(config.seed, streams::VALIDATION),
    )?;
    let test = sample_counts(
        config,
        &balanced(config.test_per_subgroup),
        Source::Real,
        &mut rng_stream(config.seed, streams::TEST),
    )?;
    Ok(SplitBundle {
        train,
        validation,
        test,
    })
}

/// Exactly `plan.per_subgroup` synthetic examples per (y, b).
pub fn sample_synthetic(config: &GeneratorConfig, plan: &AugmentationPlan, rng: &mut Rng) -> Result<Dataset> {
    config.validate()?;
    if plan.cardinalities() != config.cardinalities() {
        return Err(Error::CardinalityMismatch {
            expected: config.cardinalities().to_string(),
            found: plan.cardinalities().to_string(),
        });
    }
    sample_counts(config, plan.per_subgroup(), Source::Synthetic, rng)
}

/// Balanced synthetic evaluation set with `test_per_subgroup` per (y, b).
pub fn make_synthetic_test(config: &GeneratorConfig) -> Result<Dataset> {
    config.validate()?;
    let counts = vec![config.test_per_subgroup as u64; config.cardinalities().subgroups()];
    sample_counts(
        config,
        &counts,
        Source::Synthetic,
        &mut rng_stream(config.seed, streams::SYNTHETIC_TEST),
    )
}
