//! Classifier training: ERM, GroupDRO, per-batch group resampling and
//! last-layer retraining on a balanced validation set, plus staged
//! synthetic/real pipelines.

mod batching;
mod groupdro;
mod model;
mod pipeline;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::datagen::{rng_stream, Rng};
use crate::error::{Error, Result};
use crate::table::{Dataset, LabeledExample, Source, SubgroupTable};

pub use batching::{make_batches, BatchRule, GroupIndex, GroupKey, Grouping};
pub use groupdro::{groupdro_update, GroupWeights};
pub use model::{
    cross_entropy, forward, grad_step, loss_and_gradients, objective, softmax, Forward, Gradients, ModelParams,
    StepConfig,
};
pub use pipeline::{run_pipeline, stage1_plan, PipelineRun, PipelineSpec, PretrainingMarginal, Stage1Budget, StageOrder};

const INIT_STREAM: u64 = 100;
const BATCH_STREAM: u64 = 101;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ERM")]
    Erm,
    #[serde(rename = "GroupDRO")]
    GroupDro,
    #[serde(rename = "Resampling")]
    Resampling,
    #[serde(rename = "DFR")]
    Dfr,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Erm, Method::GroupDro, Method::Resampling, Method::Dfr];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Erm => "ERM",
            Method::GroupDro => "GroupDRO",
            Method::Resampling => "Resampling",
            Method::Dfr => "DFR",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Parse(format!("unknown method {s:?}")))
    }
}

/// Full-batch head retraining used by DFR.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DfrConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Stop once the loss changes by less than this between steps.
    pub tolerance: f64,
}

impl Default for DfrConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_steps: 10_000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub groupdro_eta: f64,
    pub freeze_features: bool,
    pub seed: u64,
    /// Width of a freshly initialized network.
    pub hidden_units: usize,
    pub init_scale: f64,
    pub grouping: Grouping,
    pub dfr: DfrConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Erm,
            epochs: 50,
            batch_size: 64,
            learning_rate: 0.01,
            weight_decay: 1e-3,
            groupdro_eta: 0.1,
            freeze_features: false,
            seed: 0,
            hidden_units: 16,
            init_scale: 0.1,
            grouping: Grouping::ClassBias,
            dfr: DfrConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.method == Method::GroupDro && !(self.groupdro_eta > 0.0 && self.groupdro_eta.is_finite()) {
            return bad(format!("groupdro_eta must be > 0, got {}", self.groupdro_eta));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0".into());
        }
        if self.batch_size == 0 || self.hidden_units == 0 {
            return bad("batch_size and hidden_units must be positive".into());
        }
        if self.method == Method::Dfr && !(self.dfr.learning_rate > 0.0) {
            return bad("dfr.learning_rate must be > 0".into());
        }
        Ok(())
    }

    fn step(&self) -> StepConfig {
        StepConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            freeze_features: self.freeze_features,
        }
    }
}

/// What one training stage did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub label: String,
    pub method: Method,
    pub learning_rate: f64,
    pub epochs: usize,
    pub freeze_features: bool,
    pub grouping: Grouping,
    pub corpus: SubgroupTable,
    /// Sources of every example that entered a gradient step.
    pub sources_seen: Vec<Source>,
    pub final_epoch_loss: f64,
    pub dfr_steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub history: Vec<StageRecord>,
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Per-stage switches that are not part of the optimizer config.
#[derive(Clone, Debug, Default)]
pub struct StageOptions {
    pub label: String,
    /// Abort if a batch contains both real and synthetic examples.
    pub require_pure_batches: bool,
}

/// Trains a freshly initialized network.
pub fn train(train_set: &Dataset, validation: Option<&Dataset>, config: &TrainConfig) -> Result<TrainedModel> {
    run_stage(
        None,
        train_set,
        validation,
        config,
        &StageOptions {
            label: "single".into(),
            require_pure_batches: false,
        },
    )
}

/// Runs one stage starting from `start`, or from a fresh network when
/// `start` is `None`, and appends its record to the history.
/// `freeze_features` only takes effect when `start` is given.
pub fn run_stage(
    start: Option<TrainedModel>,
    train_set: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainConfig,
    options: &StageOptions,
) -> Result<TrainedModel> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.method == Method::Dfr {
        check_dfr_validation(validation)?;
    }
    let mut fine_tuning = false;
    let TrainedModel {
        mut params,
        mut history,
    } = match start {
        Some(m) => {
            fine_tuning = true;
            m
        }
        None => TrainedModel {
            params: ModelParams::init(
                train_set.dim(),
                config.hidden_units,
                train_set.cardinalities().classes,
                config.init_scale,
                &mut rng_stream(config.seed, INIT_STREAM),
            ),
            history: Vec::new(),
        },
    };
    if params.input_dim != train_set.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim,
            found: train_set.dim(),
        });
    }

    let index = GroupIndex::build(train_set, config.grouping);
    let rule = match config.method {
        Method::Resampling => BatchRule::Resample,
        _ => BatchRule::Shuffle,
    };
    let mut rng = rng_stream(config.seed, BATCH_STREAM);
    let mut q = GroupWeights::uniform(index.len());
    let mut seen = [false; 2];
    let mut final_epoch_loss = f64::NAN;
    let examples = train_set.examples();
    // A fresh network has no features worth freezing.
    let freeze = config.freeze_features && fine_tuning;
    let step_cfg = StepConfig {
        freeze_features: freeze,
        ..config.step()
    };

    for epoch in 0..config.epochs {
        let batches = make_batches(train_set, &index, rule, config.batch_size, &mut rng)?;
        let mut epoch_loss = 0.0;
        for (step, batch_idx) in batches.iter().enumerate() {
            let batch: Vec<&LabeledExample> = batch_idx.iter().map(|&i| &examples[i]).collect();
            let mut batch_sources = [false; 2];
            for e in &batch {
                batch_sources[e.source_g.index()] = true;
            }
            if options.require_pure_batches && batch_sources.iter().all(|&s| s) {
                return Err(Error::MixedSourceBatch(Source::ALL.to_vec()));
            }
            for g in 0..2 {
                seen[g] |= batch_sources[g];
            }
            let weights = match config.method {
                Method::GroupDro => {
                    let (losses, weights) = group_losses(&params, &batch, batch_idx, &index);
                    q = groupdro_update(&q, &losses, config.groupdro_eta);
                    weights
                        .into_iter()
                        .map(|(g, share)| q.as_slice()[g] * share)
                        .collect()
                }
                _ => vec![1.0 / batch.len() as f64; batch.len()],
            };
            let loss = grad_step(&mut params, &batch, &weights, &step_cfg).map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite { what, epoch, step },
                other => other,
            })?;
            epoch_loss += loss;
        }
        final_epoch_loss = epoch_loss / batches.len().max(1) as f64;
    }

    let mut dfr_steps = None;
    if config.method == Method::Dfr {
        let validation = validation.expect("checked above");
        dfr_steps = Some(retrain_head(&mut params, validation, config.weight_decay, &config.dfr)?);
    }

    history.push(StageRecord {
        label: options.label.clone(),
        method: config.method,
        learning_rate: config.learning_rate,
        epochs: config.epochs,
        freeze_features: freeze,
        grouping: config.grouping,
        corpus: train_set.table().clone(),
        sources_seen: Source::ALL.into_iter().filter(|g| seen[g.index()]).collect(),
        final_epoch_loss,
        dfr_steps,
    });
    Ok(TrainedModel { params, history })
}

/// Mean loss per group over the batch (zero for groups absent from it) and,
/// per example, its group and `1 / (group size in batch)`.
fn group_losses(
    params: &ModelParams,
    batch: &[&LabeledExample],
    batch_idx: &[usize],
    index: &GroupIndex,
) -> (Vec<f64>, Vec<(usize, f64)>) {
    let mut sums = vec![0.0; index.len()];
    let mut counts = vec![0usize; index.len()];
    for (e, &i) in batch.iter().zip(batch_idx) {
        let g = index.group_of(i);
        sums[g] += cross_entropy(&forward(params, &e.features).logits, e.class_y);
        counts[g] += 1;
    }
    let losses = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let per_example = batch_idx
        .iter()
        .map(|&i| {
            let g = index.group_of(i);
            (g, 1.0 / counts[g] as f64)
        })
        .collect();
    (losses, per_example)
}

fn check_dfr_validation(validation: Option<&Dataset>) -> Result<()> {
    let missing = Error::MissingRequirement {
        method: "DFR",
        requirement: "a validation set with every (y, b) subgroup present",
    };
    let Some(v) = validation else {
        return Err(missing);
    };
    if v.is_empty() || v.table().marginal_counts().contains(&0) {
        return Err(missing);
    }
    Ok(())
}

/// Full-batch gradient descent on the head only, from the current head,
/// until the loss changes by less than the tolerance. Returns the number of
/// steps taken.
pub fn retrain_head(params: &mut ModelParams, data: &Dataset, weight_decay: f64, cfg: &DfrConfig) -> Result<usize> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (h, c) = (params.hidden, params.classes);
    let embedded: Vec<(Vec<f64>, usize)> = data
        .examples()
        .iter()
        .map(|e| (params.embed(&e.features), e.class_y))
        .collect();
    let w = 1.0 / embedded.len() as f64;
    let lr = cfg.learning_rate;
    let mut gw = vec![0.0; c * h];
    let mut gb = vec![0.0; c];
    let mut logits = vec![0.0; c];
    let mut prev = f64::INFINITY;
    let mut steps = 0;
    while steps < cfg.max_steps {
        gw.iter_mut().for_each(|v| *v = 0.0);
        gb.iter_mut().for_each(|v| *v = 0.0);
        let mut loss = 0.0;
        for (emb, y) in &embedded {
            for (k, z) in logits.iter_mut().enumerate() {
                *z = params.head_bias[k] + model::dot(&params.head_weights[k * h..(k + 1) * h], emb);
            }
            loss += w * cross_entropy(&logits, *y);
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = logits.iter().map(|z| (z - m).exp()).sum();
            for k in 0..c {
                let p = (logits[k] - m).exp() / total;
                let dz = w * (p - if k == *y { 1.0 } else { 0.0 });
                gb[k] += dz;
                for (g, e) in gw[k * h..(k + 1) * h].iter_mut().zip(emb) {
                    *g += dz * e;
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                epoch: 0,
                step: steps,
            });
        }
        for (p, g) in params.head_weights.iter_mut().zip(&gw) {
            *p -= lr * (g + weight_decay * *p);
        }
        for (p, g) in params.head_bias.iter_mut().zip(&gb) {
            *p -= lr * g;
        }
        if !params.is_finite() {
            return Err(Error::NonFinite {
                what: "parameters",
                epoch: 0,
                step: steps,
            });
        }
        steps += 1;
        if (prev - loss).abs() < cfg.tolerance {
            break;
        }
        prev = loss;
    }
    Ok(steps)
}

/// Fraction of examples the model classifies correctly.
pub fn accuracy(params: &ModelParams, data: &Dataset) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let correct = data
        .examples()
        .iter()
        .filter(|e| params.predict(&e.features) == e.class_y)
        .count();
    correct as f64 / data.len() as f64
}

#[doc(hidden)]
pub fn batch_rng(seed: u64) -> Rng {
    rng_stream(seed, BATCH_STREAM)
}
