//! Worst-group and balanced accuracy, and a linear probe for how well the
//! data source can be read off a model's embeddings.

use std::fmt;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::datagen::Rng;
use crate::error::{Error, Result};
use crate::table::{Cardinalities, Dataset, Source};
use crate::train::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceScope {
    Real,
    Synthetic,
    Both,
}

impl SourceScope {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceScope::Real => "Real",
            SourceScope::Synthetic => "Synthetic",
            SourceScope::Both => "Both",
        }
    }

    pub fn admits(self, g: Source) -> bool {
        match self {
            SourceScope::Real => g == Source::Real,
            SourceScope::Synthetic => g == Source::Synthetic,
            SourceScope::Both => true,
        }
    }
}

impl fmt::Display for SourceScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cardinalities: Cardinalities,
    /// Row-major (y, b); `None` for subgroups without examples.
    pub per_subgroup_accuracy: Vec<Option<f64>>,
    pub worst_accuracy: f64,
    pub balanced_accuracy: f64,
    pub source_scope: SourceScope,
    /// Subgroups left out of WA and BA for lack of examples.
    pub excluded: Vec<(usize, usize)>,
}

impl EvalReport {
    pub fn from_accuracies(card: Cardinalities, accuracies: Vec<Option<f64>>, scope: SourceScope) -> Result<Self> {
        if accuracies.len() != card.subgroups() {
            return Err(Error::CardinalityMismatch {
                expected: format!("{} subgroups", card.subgroups()),
                found: format!("{} accuracies", accuracies.len()),
            });
        }
        let present: Vec<f64> = accuracies.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let worst = present.iter().copied().fold(f64::INFINITY, f64::min);
        let balanced = present.iter().sum::<f64>() / present.len() as f64;
        let excluded = accuracies
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_none())
            .map(|(s, _)| card.subgroup_of(s))
            .collect();
        Ok(Self {
            cardinalities: card,
            per_subgroup_accuracy: accuracies,
            worst_accuracy: worst,
            balanced_accuracy: balanced,
            source_scope: scope,
            excluded,
        })
    }

    pub fn accuracy(&self, y: usize, b: usize) -> Option<f64> {
        self.per_subgroup_accuracy[self.cardinalities.subgroup_index(y, b)]
    }

    pub fn gap(&self) -> f64 {
        self.balanced_accuracy - self.worst_accuracy
    }
}

pub fn evaluate(params: &ModelParams, dataset: &Dataset, scope: SourceScope) -> Result<EvalReport> {
    if params.input_dim != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim,
            found: dataset.dim(),
        });
    }
    let card = dataset.cardinalities();
    let mut correct = vec![0u64; card.subgroups()];
    let mut total = vec![0u64; card.subgroups()];
    for e in dataset.examples().iter().filter(|e| scope.admits(e.source_g)) {
        let s = card.subgroup_index(e.class_y, e.bias_b);
        total[s] += 1;
        if params.predict(&e.features) == e.class_y {
            correct[s] += 1;
        }
    }
    if total.iter().all(|&t| t == 0) {
        return Err(Error::EmptySubgroup(format!("no examples in scope {scope}")));
    }
    let acc = correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
        .collect();
    EvalReport::from_accuracies(card, acc, scope)
}

/// One results row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub augmentation: String,
    pub bias_ratio: f64,
    pub seed: u64,
    pub scope: String,
    #[serde(rename = "WA")]
    pub wa: f64,
    #[serde(rename = "BA")]
    pub ba: f64,
    /// Empty when the row carries no probe result.
    pub probe_acc: Option<f64>,
}

impl EvalRow {
    pub const HEADER: [&'static str; 8] = ["method", "augmentation", "bias_ratio", "seed", "scope", "WA", "BA", "probe_acc"];

    pub fn new(method: &str, augmentation: &str, bias_ratio: f64, seed: u64, report: &EvalReport, probe_acc: Option<f64>) -> Self {
        Self {
            method: method.into(),
            augmentation: augmentation.into(),
            bias_ratio,
            seed,
            scope: report.source_scope.to_string(),
            wa: report.worst_accuracy,
            ba: report.balanced_accuracy,
            probe_acc,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// L2 penalty on the probe weights. Embeddings are not standardized,
    /// so source information carried at a small scale stays undecodable.
    pub weight_decay: f64,
    pub max_steps: usize,
    pub tolerance: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            weight_decay: 1.0,
            max_steps: 5_000,
            tolerance: 1e-10,
        }
    }
}

pub const PROBE_MIN_PER_SOURCE: usize = 20;

/// Held-out accuracy of a linear Real-vs-Synthetic classifier on the
/// model's embeddings.
///
/// Equal numbers of examples are drawn from each argument and each half is
/// split 50/50 into probe-train and probe-test. Swapping the arguments
/// yields exactly the same accuracy.
pub fn source_probe(params: &ModelParams, real: &Dataset, synthetic: &Dataset, rng: &mut Rng) -> Result<f64> {
    source_probe_with(params, real, synthetic, &ProbeConfig::default(), rng)
}

pub fn source_probe_with(
    params: &ModelParams,
    real: &Dataset,
    synthetic: &Dataset,
    cfg: &ProbeConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let n = real.len().min(synthetic.len());
    if n < PROBE_MIN_PER_SOURCE {
        return Err(Error::ProbeTooSmall {
            needed: PROBE_MIN_PER_SOURCE,
            real: real.len(),
            synthetic: synthetic.len(),
        });
    }
    for d in [real, synthetic] {
        if d.dim() != params.input_dim {
            return Err(Error::DimensionMismatch {
                expected: params.input_dim,
                found: d.dim(),
            });
        }
    }
    let pick = |d: &Dataset, mut r: Rng| -> Vec<Vec<f64>> {
        sample(&mut r, d.len(), n)
            .into_iter()
            .map(|i| params.embed(&d.examples()[i].features))
            .collect()
    };
    let a = pick(real, rng.clone());
    let b = pick(synthetic, rng.clone());
    // Advance the caller's generator past the draws.
    let _ = sample(rng, n.max(1), 1);
    let half = n / 2;
    let probe = fit_pair_probe(&a[..half], &b[..half], cfg);
    Ok(probe.accuracy(&a[half..], &b[half..]))
}

/// Two-logit linear classifier, row 0 for the first set and row 1 for the
/// second.
struct PairProbe {
    w: [Vec<f64>; 2],
    c: [f64; 2],
}

impl PairProbe {
    fn logits(&self, e: &[f64]) -> [f64; 2] {
        [dot(&self.w[0], e) + self.c[0], dot(&self.w[1], e) + self.c[1]]
    }

    /// Ties count as half correct.
    fn accuracy(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let score = |e: &[f64], own: usize| {
            let z = self.logits(e);
            let (mine, other) = (z[own], z[1 - own]);
            if mine > other {
                1.0
            } else if mine == other {
                0.5
            } else {
                0.0
            }
        };
        let mut s = 0.0;
        for (x, y) in a.iter().zip(b) {
            s += score(x, 0) + score(y, 1);
        }
        s / (a.len() + b.len()) as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full-batch gradient descent on L2-regularized cross-entropy from zero
/// weights. Examples are visited in (a_i, b_i) pairs so that swapping `a`
/// and `b` swaps the two rows of every iterate exactly.
fn fit_pair_probe(a: &[Vec<f64>], b: &[Vec<f64>], cfg: &ProbeConfig) -> PairProbe {
    let dim = a.first().map_or(0, Vec::len);
    let m = (a.len() + b.len()) as f64;
    let sq = |e: &Vec<f64>| dot(e, e) + 1.0;
    let mut norm = 0.0;
    for (x, y) in a.iter().zip(b) {
        norm += sq(x) + sq(y);
    }
    // Inverse of a bound on the curvature of the objective.
    let lr = 1.0 / (0.5 * norm / m + cfg.weight_decay);
    let mut p = PairProbe {
        w: [vec![0.0; dim], vec![0.0; dim]],
        c: [0.0; 2],
    };
    let mut prev = f64::INFINITY;
    for _ in 0..cfg.max_steps {
        let mut gw = [vec![0.0; dim], vec![0.0; dim]];
        let mut gc = [0.0; 2];
        let mut loss = 0.0;
        for (x, y) in a.iter().zip(b) {
            let (gx, lx) = pair_grad(&p, x, 0);
            let (gy, ly) = pair_grad(&p, y, 1);
            loss += lx + ly;
            for k in 0..2 {
                gc[k] += gx[k] + gy[k];
                for i in 0..dim {
                    gw[k][i] += gx[k] * x[i] + gy[k] * y[i];
                }
            }
        }
        let reg: f64 = p.w.iter().flatten().map(|v| v * v).sum();
        loss = loss / m + 0.5 * cfg.weight_decay * reg;
        for k in 0..2 {
            p.c[k] -= lr * gc[k] / m;
            for i in 0..dim {
                p.w[k][i] -= lr * (gw[k][i] / m + cfg.weight_decay * p.w[k][i]);
            }
        }
        if (prev - loss).abs() < cfg.tolerance {
            break;
        }
        prev = loss;
    }
    p
}

/// Logit gradients `softmax - onehot` and the cross-entropy of one example.
fn pair_grad(p: &PairProbe, e: &[f64], label: usize) -> ([f64; 2], f64) {
    let z = p.logits(e);
    let m = z[0].max(z[1]);
    let ex = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = ex[0] + ex[1];
    let prob = [ex[0] / s, ex[1] / s];
    let loss = -(z[label] - m - s.ln());
    let mut g = prob;
    g[label] -= 1.0;
    (g, loss)
}
