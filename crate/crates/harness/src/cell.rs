//! One experiment cell: generate data, build the training corpus for an
//! augmentation, train with learning-rate selection and evaluate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use synthbias_core::augment::{plan_asb, plan_none, plan_usb, shared_budget, training_corpus, AugmentationPlan};
use synthbias_core::datagen::{
    make_biased_split, make_synthetic_test, rng_stream, sample_synthetic, streams, GeneratorConfig, SplitBundle,
};
use synthbias_core::metrics::{evaluate, source_probe_with, EvalReport, EvalRow, ProbeConfig, SourceScope};
use synthbias_core::train::{
    run_pipeline, train, Grouping, Method, PipelineSpec, PretrainingMarginal, Stage1Budget, StageOrder, TrainConfig,
    TrainedModel,
};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Augmentation {
    None,
    #[serde(rename = "USB")]
    Usb,
    #[serde(rename = "ASB")]
    Asb,
    #[serde(rename = "FFR")]
    Ffr,
}

impl Augmentation {
    pub const ALL: [Augmentation; 4] = [Augmentation::None, Augmentation::Usb, Augmentation::Asb, Augmentation::Ffr];

    pub fn as_str(self) -> &'static str {
        match self {
            Augmentation::None => "None",
            Augmentation::Usb => "USB",
            Augmentation::Asb => "ASB",
            Augmentation::Ffr => "FFR",
        }
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Augmentation {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Augmentation::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| HarnessError::InvalidGrid(format!("unknown augmentation {s:?}")))
    }
}

/// Training hyperparameters shared by every cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol {
    /// Base config for single-stage training; method, grouping, learning
    /// rate and seed are set per cell.
    pub train: TrainConfig,
    /// Base config for the real-data stage of staged runs.
    pub finetune: TrainConfig,
    /// FFR stage-1 config; the seed is set per cell.
    pub pretrain: TrainConfig,
    /// Candidate learning rates, chosen by validation worst-group accuracy.
    pub lr_grid: Vec<f64>,
    pub probe: ProbeConfig,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            finetune: TrainConfig {
                freeze_features: true,
                ..TrainConfig::default()
            },
            pretrain: TrainConfig {
                learning_rate: 0.1,
                weight_decay: 0.1,
                ..TrainConfig::default()
            },
            lr_grid: vec![0.1, 0.01, 0.001],
            probe: ProbeConfig::default(),
        }
    }
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        if self.lr_grid.is_empty() {
            return Err(HarnessError::InvalidGrid("lr_grid is empty".into()));
        }
        self.train.validate()?;
        self.finetune.validate()?;
        self.pretrain.validate()?;
        Ok(())
    }
}

/// What a cell trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Standard { augmentation: Augmentation, method: Method },
    /// A staged run over the FFR corpora.
    Staged {
        order: StageOrder,
        marginal: PretrainingMarginal,
        method: Method,
    },
}

impl Variant {
    pub fn standard(augmentation: Augmentation, method: Method) -> Self {
        Variant::Standard { augmentation, method }
    }

    pub fn method(&self) -> Method {
        match *self {
            Variant::Standard { method, .. } | Variant::Staged { method, .. } => method,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub selected_lr: f64,
    pub validation_wa: f64,
    pub real: EvalReport,
    pub synthetic: EvalReport,
    pub probe_acc: f64,
    pub model: TrainedModel,
}

impl CellOutcome {
    pub fn rows(&self, method: Method, augmentation: &str, bias_ratio: f64, seed: u64) -> Vec<EvalRow> {
        [&self.real, &self.synthetic]
            .into_iter()
            .map(|r| EvalRow::new(method.as_str(), augmentation, bias_ratio, seed, r, Some(self.probe_acc)))
            .collect()
    }
}

/// Runs one cell. `generator` carries the bias ratio and data seed;
/// `train_seed` seeds initialization and batching.
pub fn run_cell(protocol: &Protocol, generator: &GeneratorConfig, variant: Variant, train_seed: u64) -> Result<CellOutcome> {
    protocol.validate()?;
    let bundle = make_biased_split(generator)?;
    let prepared = Prepared::new(generator, &bundle, variant)?;

    let mut best: Option<(f64, f64, TrainedModel)> = None;
    for &lr in &protocol.lr_grid {
        let model = prepared.fit(protocol, lr, train_seed)?;
        let wa = evaluate(&model.params, &bundle.validation, SourceScope::Real)?.worst_accuracy;
        if best.as_ref().is_none_or(|(w, _, _)| wa > *w) {
            best = Some((wa, lr, model));
        }
    }
    let (validation_wa, selected_lr, model) = best.expect("lr grid is non-empty");

    let synthetic_test = make_synthetic_test(generator)?;
    let real = evaluate(&model.params, &bundle.test, SourceScope::Real)?;
    let synthetic = evaluate(&model.params, &synthetic_test, SourceScope::Synthetic)?;
    let probe_acc = source_probe_with(
        &model.params,
        &bundle.test,
        &synthetic_test,
        &protocol.probe,
        &mut rng_stream(train_seed, streams::PROBE),
    )?;
    Ok(CellOutcome {
        selected_lr,
        validation_wa,
        real,
        synthetic,
        probe_acc,
        model,
    })
}

/// Data that does not depend on the learning rate.
struct Prepared<'a> {
    generator: &'a GeneratorConfig,
    bundle: &'a SplitBundle,
    variant: Variant,
    mixed: Option<synthbias_core::Dataset>,
}

impl<'a> Prepared<'a> {
    fn new(generator: &'a GeneratorConfig, bundle: &'a SplitBundle, variant: Variant) -> Result<Self> {
        let mixed = match variant {
            Variant::Standard {
                augmentation: aug @ (Augmentation::None | Augmentation::Usb | Augmentation::Asb),
                ..
            } => {
                let plan = mixing_plan(aug, bundle)?;
                let synthetic =
                    sample_synthetic(generator, &plan, &mut rng_stream(generator.seed, streams::SYNTHETIC_TRAIN))?;
                Some(training_corpus(&bundle.train, &synthetic, &plan)?)
            }
            _ => None,
        };
        Ok(Self {
            generator,
            bundle,
            variant,
            mixed,
        })
    }

    fn fit(&self, protocol: &Protocol, lr: f64, seed: u64) -> Result<TrainedModel> {
        let method = self.variant.method();
        let (order, marginal) = match self.variant {
            Variant::Standard {
                augmentation: Augmentation::Ffr,
                ..
            } => (StageOrder::Stage1ThenStage2, PretrainingMarginal::BalancedB),
            Variant::Staged { order, marginal, .. } => (order, marginal),
            Variant::Standard { augmentation, .. } => {
                let grouping = match augmentation {
                    Augmentation::None => Grouping::ClassBias,
                    _ => Grouping::ClassBiasSource,
                };
                let cfg = TrainConfig {
                    method,
                    grouping,
                    learning_rate: lr,
                    seed,
                    ..protocol.train.clone()
                };
                let corpus = self.mixed.as_ref().expect("mixing corpus prepared");
                return Ok(train(corpus, Some(&self.bundle.validation), &cfg)?);
            }
        };
        let stage2 = TrainConfig {
            method,
            grouping: Grouping::ClassBias,
            learning_rate: lr,
            seed,
            ..protocol.finetune.clone()
        };
        let stage1 = TrainConfig {
            seed,
            ..protocol.pretrain.clone()
        };
        // A stage-1-only model has no stage 2 to tune, so the grid applies
        // to its single stage.
        let stage1 = if order == StageOrder::Stage1Only {
            TrainConfig {
                learning_rate: lr,
                ..stage1
            }
        } else {
            stage1
        };
        let spec = PipelineSpec {
            stage_order: order,
            stage1,
            stage2,
            pretraining_marginal: marginal,
            stage1_budget: Stage1Budget::Shared,
        };
        Ok(run_pipeline(&spec, self.bundle, self.generator)?.model)
    }
}

fn mixing_plan(aug: Augmentation, bundle: &SplitBundle) -> Result<AugmentationPlan> {
    let real = bundle.train.table();
    Ok(match aug {
        Augmentation::None => plan_none(real.cardinalities()),
        Augmentation::Usb => plan_usb(real)?,
        Augmentation::Asb => plan_asb(real, shared_budget(real)?)?,
        Augmentation::Ffr => unreachable!("FFR never mixes"),
    })
}
