//! Staged training: synthetic pretraining and real fine-tuning in any order.

use serde::{Deserialize, Serialize};

use super::{run_stage, Method, StageOptions, TrainConfig, TrainedModel};
use crate::augment::{plan_ffr_stage1, plan_ffr_stage1_with_marginal, shared_budget, AugmentationPlan};
use crate::datagen::{marginal_counts, rng_stream, sample_synthetic, streams, GeneratorConfig, SplitBundle, SyntheticMarginal};
use crate::error::{Error, Result};
use crate::table::{Dataset, Source};

/// Stage 1 trains on synthetic data only, stage 2 on real data only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StageOrder {
    Stage1Only,
    Stage2Only,
    Stage2ThenStage1,
    /// Pretrain on synthetic, fine-tune on real.
    Stage1ThenStage2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PretrainingMarginal {
    BalancedB,
    /// Same per-class bias skew as the real training split.
    MatchRealBias,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage1Budget {
    /// The USB budget of the real split.
    Shared,
    Fixed(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub stage_order: StageOrder,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub pretraining_marginal: PretrainingMarginal,
    pub stage1_budget: Stage1Budget,
}

impl PipelineSpec {
    /// Pretraining with ERM on a balanced synthetic corpus, then `stage2`.
    pub fn ffr(stage1: TrainConfig, stage2: TrainConfig) -> Self {
        Self {
            stage_order: StageOrder::Stage1ThenStage2,
            stage1,
            stage2,
            pretraining_marginal: PretrainingMarginal::BalancedB,
            stage1_budget: Stage1Budget::Shared,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.uses_stage1() && self.stage1.method == Method::Dfr {
            return Err(Error::InvalidConfig("stage 1 cannot use DFR".into()));
        }
        Ok(())
    }

    fn uses_stage1(&self) -> bool {
        self.stage_order != StageOrder::Stage2Only
    }
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub model: TrainedModel,
    pub stage1_plan: Option<AugmentationPlan>,
    pub stage1_corpus: Option<Dataset>,
}

/// The pretraining plan for `spec` over the real split of `bundle`.
pub fn stage1_plan(spec: &PipelineSpec, bundle: &SplitBundle, generator: &GeneratorConfig) -> Result<AugmentationPlan> {
    let real = bundle.train.table();
    let budget = match spec.stage1_budget {
        Stage1Budget::Shared => shared_budget(real)?,
        Stage1Budget::Fixed(n) => n,
    };
    match spec.pretraining_marginal {
        PretrainingMarginal::BalancedB => plan_ffr_stage1(real, budget),
        PretrainingMarginal::MatchRealBias => {
            let cfg = GeneratorConfig {
                synthetic_marginal: SyntheticMarginal::MatchRealBias,
                ..generator.clone()
            };
            plan_ffr_stage1_with_marginal(
                real.cardinalities(),
                marginal_counts(&cfg, budget),
                SyntheticMarginal::MatchRealBias,
            )
        }
    }
}

pub fn run_pipeline(spec: &PipelineSpec, bundle: &SplitBundle, generator: &GeneratorConfig) -> Result<PipelineRun> {
    spec.validate()?;
    let real = &bundle.train;
    if real.table().source_total(Source::Synthetic) > 0 {
        return Err(Error::MixedSourceBatch(real.sources()));
    }
    let (plan, synthetic) = if spec.uses_stage1() {
        let plan = stage1_plan(spec, bundle, generator)?;
        let data = sample_synthetic(generator, &plan, &mut rng_stream(generator.seed, streams::SYNTHETIC_TRAIN))?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        (Some(plan), Some(data))
    } else {
        (None, None)
    };

    let stage1 = |start: Option<TrainedModel>| {
        let data = synthetic.as_ref().expect("stage 1 corpus sampled");
        // Whichever stage runs second is the fine-tuning stage and takes
        // the fine-tuning freeze option.
        let cfg = TrainConfig {
            freeze_features: spec.stage2.freeze_features,
            ..spec.stage1.clone()
        };
        let cfg = if start.is_some() { &cfg } else { &spec.stage1 };
        run_stage(start, data, None, cfg, &options("stage1"))
    };
    let stage2 = |start: Option<TrainedModel>| {
        run_stage(start, real, Some(&bundle.validation), &spec.stage2, &options("stage2"))
    };
    let model = match spec.stage_order {
        StageOrder::Stage1Only => stage1(None)?,
        StageOrder::Stage2Only => stage2(None)?,
        StageOrder::Stage1ThenStage2 => stage2(Some(stage1(None)?))?,
        StageOrder::Stage2ThenStage1 => stage1(Some(stage2(None)?))?,
    };
    audit_sources(&model)?;
    Ok(PipelineRun {
        model,
        stage1_plan: plan,
        stage1_corpus: synthetic,
    })
}

fn options(label: &str) -> StageOptions {
    StageOptions {
        label: label.into(),
        require_pure_batches: true,
    }
}

fn audit_sources(model: &TrainedModel) -> Result<()> {
    for record in &model.history {
        let expected = match record.label.as_str() {
            "stage1" => Source::Synthetic,
            _ => Source::Real,
        };
        if record.sources_seen != [expected] {
            return Err(Error::MixedSourceBatch(record.sources_seen.clone()));
        }
    }
    Ok(())
}
