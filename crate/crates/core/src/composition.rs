//! Bias analysis over subgroup tables and exhaustive verification that no
//! synthetic augmentation of a biased real table removes the bias toward
//! the (bias group, source) pair.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{Cell, Condition, Prob, Source, SubgroupTable};

/// Default cap on the number of augmented tables one verification may visit.
pub const DEFAULT_SAFETY_LIMIT: u128 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasScope {
    /// Only P(Y | B) against P(Y).
    BOnly,
    /// Additionally P(Y | B, G) against P(Y).
    BAndG,
}

/// Majority bias-group share within a class, or `Undefined` when the class
/// has no examples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassBiasRatio {
    Ratio(Prob),
    Undefined,
}

impl ClassBiasRatio {
    pub fn ratio(&self) -> Option<Prob> {
        match self {
            ClassBiasRatio::Ratio(p) => Some(*p),
            ClassBiasRatio::Undefined => None,
        }
    }
}

impl Serialize for ClassBiasRatio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ClassBiasRatio::Ratio(p) => p.serialize(s),
            ClassBiasRatio::Undefined => s.serialize_str("undefined"),
        }
    }
}

/// A cell whose conditional class probability differs from the class
/// marginal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub y: usize,
    pub b: usize,
    /// `None` for a P(Y | B) witness.
    pub g: Option<Source>,
    pub conditional: Prob,
    pub marginal: Prob,
}

impl Witness {
    pub fn cell(&self) -> Option<Cell> {
        self.g.map(|g| Cell {
            y: self.y,
            b: self.b,
            g,
        })
    }
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.g {
            Some(g) => write!(
                f,
                "P(Y={} | B={}, G={}) = {} != P(Y={}) = {}",
                self.y, self.b, g, self.conditional, self.y, self.marginal
            ),
            None => write!(
                f,
                "P(Y={} | B={}) = {} != P(Y={}) = {}",
                self.y, self.b, self.conditional, self.y, self.marginal
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasReport {
    pub scope: BiasScope,
    /// max_b P(B = b | Y = y) per class. Not a quantity the bias predicates
    /// use; it summarizes how skewed each class is.
    pub per_class_bias_ratio: Vec<ClassBiasRatio>,
    pub biased_wrt_b: bool,
    /// Present only for [`BiasScope::BAndG`].
    pub biased_wrt_bg: Option<bool>,
    pub witness_b: Option<Witness>,
    pub witness_bg: Option<Witness>,
}

/// First supported (y, b) with P(Y=y | B=b) != P(Y=y), scanning b then y.
pub fn b_witness(table: &SubgroupTable) -> Result<Option<Witness>> {
    let card = table.cardinalities();
    for b in 0..card.bias_groups {
        let cond = Condition::bias(b);
        if table.support(None, &cond) == 0 {
            continue;
        }
        for y in 0..card.classes {
            let conditional = table.conditional_prob(y, &cond)?;
            let marginal = table.conditional_prob(y, &Condition::none())?;
            if conditional != marginal {
                return Ok(Some(Witness {
                    y,
                    b,
                    g: None,
                    conditional,
                    marginal,
                }));
            }
        }
    }
    Ok(None)
}

/// First supported (y, b, g) with P(Y=y | B=b, G=g) != P(Y=y), scanning b,
/// then g, then y. Zero-support (b, g) conditions are skipped.
pub fn bg_witness(table: &SubgroupTable) -> Result<Option<Witness>> {
    let card = table.cardinalities();
    for b in 0..card.bias_groups {
        for g in Source::ALL {
            let cond = Condition::bias_source(b, g);
            if table.support(None, &cond) == 0 {
                continue;
            }
            for y in 0..card.classes {
                let conditional = table.conditional_prob(y, &cond)?;
                let marginal = table.conditional_prob(y, &Condition::none())?;
                if conditional != marginal {
                    return Ok(Some(Witness {
                        y,
                        b,
                        g: Some(g),
                        conditional,
                        marginal,
                    }));
                }
            }
        }
    }
    Ok(None)
}

pub fn analyze_bias(table: &SubgroupTable, scope: BiasScope) -> Result<BiasReport> {
    if table.total() == 0 {
        return Err(Error::EmptyTable);
    }
    let card = table.cardinalities();
    let per_class_bias_ratio = (0..card.classes)
        .map(|y| {
            if table.class_total(y) == 0 {
                return Ok(ClassBiasRatio::Undefined);
            }
            let mut best = table.bias_given_class(0, y)?;
            for b in 1..card.bias_groups {
                best = best.max(table.bias_given_class(b, y)?);
            }
            Ok(ClassBiasRatio::Ratio(best))
        })
        .collect::<Result<Vec<_>>>()?;
    let witness_b = b_witness(table)?;
    let witness_bg = match scope {
        BiasScope::BOnly => None,
        BiasScope::BAndG => bg_witness(table)?,
    };
    Ok(BiasReport {
        scope,
        per_class_bias_ratio,
        biased_wrt_b: witness_b.is_some(),
        biased_wrt_bg: match scope {
            BiasScope::BOnly => None,
            BiasScope::BAndG => Some(witness_bg.is_some()),
        },
        witness_b,
        witness_bg,
    })
}

/// True iff P(B=b | Y=y) = P(B=b | Y=y') for every b and every pair of
/// classes with non-zero support. Sources are pooled; apply to
/// [`SubgroupTable::fold_source_into_bias`] to reason about (B, G).
pub fn check_lemma1(table: &SubgroupTable) -> bool {
    let card = table.cardinalities();
    let supported: Vec<usize> = (0..card.classes)
        .filter(|&y| table.class_total(y) > 0)
        .collect();
    let Some((&first, rest)) = supported.split_first() else {
        return true;
    };
    (0..card.bias_groups).all(|b| {
        let reference = table.bias_given_class(b, first).expect("supported class");
        rest.iter()
            .all(|&y| table.bias_given_class(b, y).expect("supported class") == reference)
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub per_cell_cap: u64,
    pub safety_limit: u128,
    /// Keep the P(Y | B, G) witness of every augmentation.
    pub record_witnesses: bool,
}

impl VerifyOptions {
    pub fn with_cap(per_cell_cap: u64) -> Self {
        Self {
            per_cell_cap,
            safety_limit: DEFAULT_SAFETY_LIMIT,
            record_witnesses: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AugmentationWitness {
    /// Row-major (y, b) synthetic counts added to the seed.
    pub augmentation: Vec<u64>,
    pub witness: Witness,
}

#[derive(Clone, Debug, Serialize)]
pub struct TheoremVerdict {
    pub seed_table: SubgroupTable,
    pub per_cell_cap: u64,
    pub augmentations_checked: u64,
    /// Augmentations whose table satisfies P(Y | B, G) = P(Y) on every
    /// supported cell. Expected empty.
    pub counterexamples: Vec<Vec<u64>>,
    pub first_witness: Option<AugmentationWitness>,
    pub per_augmentation_witness: Option<Vec<AugmentationWitness>>,
}

impl TheoremVerdict {
    pub fn holds(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// Number of augmentations `(cap + 1)^(|Y| |B|)`, or `None` on overflow.
pub fn enumeration_size(seed: &SubgroupTable, per_cell_cap: u64) -> Option<u128> {
    let base = u128::from(per_cell_cap).checked_add(1)?;
    let exp = u32::try_from(seed.cardinalities().subgroups()).ok()?;
    base.checked_pow(exp)
}

fn decode(mut index: u128, base: u128, cells: usize) -> Vec<u64> {
    let mut digits = vec![0u64; cells];
    for d in digits.iter_mut().rev() {
        *d = (index % base) as u64;
        index /= base;
    }
    digits
}

/// Enumerates every synthetic addition in `{0..=cap}^(|Y| |B|)` to a biased
/// real-only seed and records the augmentations that are free of bias toward
/// (B, G). The search is split across the rayon pool; results are in
/// enumeration order regardless of scheduling.
pub fn verify_theorem1(seed: &SubgroupTable, options: &VerifyOptions) -> Result<TheoremVerdict> {
    if !seed.is_real_only() {
        return Err(Error::NotRealOnly(format!(
            "seed has {} synthetic examples",
            seed.source_total(Source::Synthetic)
        )));
    }
    if b_witness(seed)?.is_none() {
        return Err(Error::UnbiasedSeed);
    }
    let size = enumeration_size(seed, options.per_cell_cap).unwrap_or(u128::MAX);
    if size > options.safety_limit {
        return Err(Error::EnumerationTooLarge {
            size,
            limit: options.safety_limit,
        });
    }
    let base = u128::from(options.per_cell_cap) + 1;
    let cells = seed.cardinalities().subgroups();

    let outcomes: Vec<(Vec<u64>, Option<Witness>)> = (0..size as u64)
        .into_par_iter()
        .map(|k| {
            let aug = decode(u128::from(k), base, cells);
            let table = seed.with_synthetic(&aug)?;
            Ok((aug, bg_witness(&table)?))
        })
        .collect::<Result<_>>()?;

    let mut counterexamples = Vec::new();
    let mut witnesses = Vec::new();
    for (aug, witness) in outcomes {
        match witness {
            None => counterexamples.push(aug),
            Some(witness) => witnesses.push(AugmentationWitness {
                augmentation: aug,
                witness,
            }),
        }
    }
    let first_witness = witnesses.first().cloned();
    Ok(TheoremVerdict {
        seed_table: seed.clone(),
        per_cell_cap: options.per_cell_cap,
        augmentations_checked: size as u64,
        counterexamples,
        first_witness,
        per_augmentation_witness: options.record_witnesses.then_some(witnesses),
    })
}
