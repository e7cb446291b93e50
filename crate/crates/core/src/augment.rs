//! Synthetic sample counts per subgroup for each augmentation regime, and
//! the training corpora they produce.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::datagen::SyntheticMarginal;
use crate::error::{Error, Result};
use crate::table::{Cardinalities, Dataset, Source, SubgroupTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// No synthetic data.
    None,
    /// Uniform synthetic balancing: top every subgroup up to the largest one.
    #[serde(rename = "USB")]
    Usb,
    /// Additive synthetic balancing: a balanced synthetic set added to real.
    #[serde(rename = "ASB")]
    Asb,
    /// Balanced synthetic pretraining corpus, never mixed with real data.
    #[serde(rename = "FFR_Stage1")]
    FfrStage1,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::None => "None",
            Regime::Usb => "USB",
            Regime::Asb => "ASB",
            Regime::FfrStage1 => "FFR_Stage1",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    regime: Regime,
    cardinalities: Cardinalities,
    /// Row-major (y, b) synthetic counts.
    per_subgroup: Vec<u64>,
    budget: u64,
    /// Part of a requested budget that could not be spread uniformly.
    remainder: u64,
    marginal: SyntheticMarginal,
}

impl AugmentationPlan {
    /// A plan with explicit counts. Balanced regimes must be uniform.
    pub fn from_counts(regime: Regime, card: Cardinalities, per_subgroup: Vec<u64>) -> Result<Self> {
        Self::build(regime, card, per_subgroup, 0, SyntheticMarginal::BalancedB)
    }

    fn build(
        regime: Regime,
        card: Cardinalities,
        per_subgroup: Vec<u64>,
        remainder: u64,
        marginal: SyntheticMarginal,
    ) -> Result<Self> {
        if per_subgroup.len() != card.subgroups() {
            return Err(Error::CardinalityMismatch {
                expected: format!("{} subgroup counts", card.subgroups()),
                found: per_subgroup.len().to_string(),
            });
        }
        let uniform = per_subgroup.windows(2).all(|w| w[0] == w[1]);
        let needs_uniform = matches!(regime, Regime::Asb)
            || (regime == Regime::FfrStage1 && marginal == SyntheticMarginal::BalancedB);
        if needs_uniform && !uniform {
            return Err(Error::InvalidConfig(format!(
                "{regime} plan must be uniform across subgroups, got {per_subgroup:?}"
            )));
        }
        if regime == Regime::None && per_subgroup.iter().any(|&c| c > 0) {
            return Err(Error::InvalidConfig("regime None carries no synthetic data".into()));
        }
        Ok(Self {
            regime,
            cardinalities: card,
            budget: per_subgroup.iter().sum(),
            per_subgroup,
            remainder,
            marginal,
        })
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn cardinalities(&self) -> Cardinalities {
        self.cardinalities
    }

    pub fn per_subgroup(&self) -> &[u64] {
        &self.per_subgroup
    }

    pub fn count(&self, y: usize, b: usize) -> u64 {
        self.per_subgroup[self.cardinalities.subgroup_index(y, b)]
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn remainder(&self) -> u64 {
        self.remainder
    }

    pub fn marginal(&self) -> SyntheticMarginal {
        self.marginal
    }

    /// The synthetic part as a table.
    pub fn synthetic_table(&self) -> SubgroupTable {
        SubgroupTable::zeros(self.cardinalities)
            .with_synthetic(&self.per_subgroup)
            .expect("plan length matches cardinalities")
    }
}

fn require_real_only(table: &SubgroupTable) -> Result<()> {
    if table.is_real_only() {
        Ok(())
    } else {
        Err(Error::NotRealOnly(format!(
            "table already holds {} synthetic examples",
            table.source_total(Source::Synthetic)
        )))
    }
}

pub fn plan_none(card: Cardinalities) -> AugmentationPlan {
    AugmentationPlan::from_counts(Regime::None, card, vec![0; card.subgroups()])
        .expect("zero plan is valid")
}

/// Tops up every (y, b) to the largest real subgroup count.
pub fn plan_usb(real_table: &SubgroupTable) -> Result<AugmentationPlan> {
    require_real_only(real_table)?;
    let real = real_table.source_counts(Source::Real);
    let max = real.iter().copied().max().unwrap_or(0);
    let counts = real.iter().map(|&c| max - c).collect();
    AugmentationPlan::from_counts(Regime::Usb, real_table.cardinalities(), counts)
}

fn uniform(regime: Regime, real_table: &SubgroupTable, budget: u64) -> Result<AugmentationPlan> {
    require_real_only(real_table)?;
    let card = real_table.cardinalities();
    let cells = card.subgroups() as u64;
    AugmentationPlan::build(
        regime,
        card,
        vec![budget / cells; card.subgroups()],
        budget % cells,
        SyntheticMarginal::BalancedB,
    )
}

/// Uniform `budget / (|Y| |B|)` per subgroup; the remainder is dropped and
/// reported on the plan.
pub fn plan_asb(real_table: &SubgroupTable, budget: u64) -> Result<AugmentationPlan> {
    uniform(Regime::Asb, real_table, budget)
}

/// Same counts as [`plan_asb`], but the corpus is used alone for pretraining.
pub fn plan_ffr_stage1(real_table: &SubgroupTable, budget: u64) -> Result<AugmentationPlan> {
    uniform(Regime::FfrStage1, real_table, budget)
}

/// A pretraining plan with an arbitrary marginal, for ablating the
/// pretraining distribution.
pub fn plan_ffr_stage1_with_marginal(
    card: Cardinalities,
    counts: Vec<u64>,
    marginal: SyntheticMarginal,
) -> Result<AugmentationPlan> {
    AugmentationPlan::build(Regime::FfrStage1, card, counts, 0, marginal)
}

/// The synthetic budget shared by USB, ASB and FFR: the USB budget.
pub fn shared_budget(real_table: &SubgroupTable) -> Result<u64> {
    Ok(plan_usb(real_table)?.budget())
}

/// Real counts plus the plan's synthetic counts.
pub fn combined_table(real_table: &SubgroupTable, plan: &AugmentationPlan) -> Result<SubgroupTable> {
    if plan.regime() == Regime::FfrStage1 {
        return Err(Error::MixingForbidden(plan.regime().to_string()));
    }
    require_real_only(real_table)?;
    real_table.with_synthetic(plan.per_subgroup())
}

/// The single-stage training corpus of a mixing regime.
pub fn training_corpus(real: &Dataset, synthetic: &Dataset, plan: &AugmentationPlan) -> Result<Dataset> {
    if plan.regime() == Regime::FfrStage1 {
        return Err(Error::MixingForbidden(plan.regime().to_string()));
    }
    require_real_only(real.table())?;
    let got = synthetic.table().source_counts(Source::Synthetic);
    if got != plan.per_subgroup() || synthetic.table().source_total(Source::Real) > 0 {
        return Err(Error::InvalidConfig(format!(
            "synthetic dataset counts {got:?} do not match plan {:?}",
            plan.per_subgroup()
        )));
    }
    if plan.regime() == Regime::None {
        return Ok(real.clone());
    }
    real.concat(synthetic)
}
