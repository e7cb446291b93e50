//! End-to-end acceptance suite. Every check prints one PASS/FAIL line,
//! written straight to the stderr handle so it shows without
//! `--nocapture`, and then asserts.

use std::collections::HashMap;
use std::io::Write as _;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::Rng as _;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use synthbias_core::augment::plan_usb;
use synthbias_core::composition::{analyze_bias, check_lemma1, verify_theorem1, BiasScope, VerifyOptions};
use synthbias_core::datagen::{rng_stream, GeneratorConfig};
use synthbias_core::train::{
    groupdro_update, loss_and_gradients, make_batches, objective, BatchRule, GroupIndex, GroupWeights, Grouping,
    Method, ModelParams, PretrainingMarginal, StageOrder,
};
use synthbias_core::{Cardinalities, Dataset, LabeledExample, Source, SubgroupTable};
use synthbias_harness::{derive_seed, run_cell, run_grid, Augmentation, ExperimentGrid, Protocol, RunOptions, Variant};

const SEEDS: u64 = 20;
const MASTER_SEED: u64 = 2024;

fn verdict(name: &str, pass: bool, detail: String) {
    let line = format!("{} [{name}] {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(pass, "{name}: {detail}");
}

// ---------------------------------------------------------------------------
// Exact checks over subgroup tables
// ---------------------------------------------------------------------------

/// Row-major counts n(y, b) for y, b in {0, 1}.
type Counts = [u64; 4];

/// P(Y | B) differs from P(Y) somewhere, by cross-multiplication.
fn naive_biased_b(c: &Counts) -> bool {
    let n: u64 = c.iter().sum();
    (0..2).any(|b| {
        let nb = c[b] + c[2 + b];
        nb > 0 && (0..2).any(|y| c[2 * y + b] * n != (c[2 * y] + c[2 * y + 1]) * nb)
    })
}

/// P(Y | B, G) differs from P(Y) on some supported (b, g), written out
/// directly over real and synthetic count arrays.
fn naive_biased_bg(real: &Counts, syn: &Counts) -> bool {
    let n: u64 = real.iter().chain(syn).sum();
    let class = |y: usize| real[2 * y] + real[2 * y + 1] + syn[2 * y] + syn[2 * y + 1];
    [real, syn].iter().any(|t| {
        (0..2).any(|b| {
            let nbg = t[b] + t[2 + b];
            nbg > 0 && (0..2).any(|y| t[2 * y + b] * n != class(y) * nbg)
        })
    })
}

/// Independent enumerator: the number of synthetic additions in
/// {0..cap}^4 that leave no (B, G) bias, and the number checked.
fn naive_counterexamples(seed: &Counts, cap: u64) -> (u64, u64) {
    let mut found = 0;
    let mut checked = 0;
    for a in 0..=cap {
        for b in 0..=cap {
            for c in 0..=cap {
                for d in 0..=cap {
                    checked += 1;
                    if !naive_biased_bg(seed, &[a, b, c, d]) {
                        found += 1;
                    }
                }
            }
        }
    }
    (found, checked)
}

fn random_biased_seeds(n: usize) -> Vec<Counts> {
    let mut rng = rng_stream(MASTER_SEED, 0);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let c: Counts = std::array::from_fn(|_| rng.random_range(0..=12));
        if c[0] + c[1] > 0 && c[2] + c[3] > 0 && naive_biased_b(&c) {
            out.push(c);
        }
    }
    out
}

fn real_table(c: &Counts) -> SubgroupTable {
    SubgroupTable::from_real(Cardinalities::BINARY, c).unwrap()
}

#[test]
fn theorem_holds_exhaustively_on_random_seeds() {
    let t = Instant::now();
    let cap = 5;
    let seeds = random_biased_seeds(200);
    let mut total = 0u64;
    let mut counterexamples = 0usize;
    let mut disagreements = 0usize;
    for s in &seeds {
        let v = verify_theorem1(&real_table(s), &VerifyOptions::with_cap(cap)).unwrap();
        let (naive_found, naive_checked) = naive_counterexamples(s, cap);
        total += v.augmentations_checked;
        counterexamples += v.counterexamples.len();
        if naive_checked != v.augmentations_checked || naive_found != v.counterexamples.len() as u64 {
            disagreements += 1;
        }
    }
    // The naive predicate must also agree with the library on tables that
    // are not biased, or the cross-check could not detect anything.
    let mut rng = rng_stream(MASTER_SEED, 1);
    let mut unbiased_seen = 0;
    for _ in 0..2000 {
        let (r, s): (Counts, Counts) = if rng.random_bool(0.5) {
            let (a, b, c, d) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6));
            let k = rng.random_range(0..3u64);
            ([a * c, a * d, b * c, b * d], [k * a * c, k * a * d, k * b * c, k * b * d])
        } else {
            (std::array::from_fn(|_| rng.random_range(0..6)), std::array::from_fn(|_| rng.random_range(0..6)))
        };
        if r.iter().chain(&s).sum::<u64>() == 0 {
            continue;
        }
        let table = SubgroupTable::from_sources(Cardinalities::BINARY, &r, &s).unwrap();
        let lib = analyze_bias(&table, BiasScope::BAndG).unwrap().biased_wrt_bg.unwrap();
        let naive = naive_biased_bg(&r, &s);
        unbiased_seen += usize::from(!naive);
        if lib != naive {
            disagreements += 1;
        }
    }
    let elapsed = t.elapsed();
    verdict(
        "theorem-exhaustive",
        counterexamples == 0 && disagreements == 0 && total == 200 * 6u64.pow(4) && unbiased_seen > 0 && elapsed < Duration::from_secs(60),
        format!(
            "200 seeds, cap {cap}, {total} augmentations, {counterexamples} counterexamples, {disagreements} naive disagreements, {unbiased_seen} unbiased cross-check tables, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn lemma_holds_on_independent_tables_and_bias_is_flagged() {
    let t = Instant::now();
    let mut rng = rng_stream(MASTER_SEED, 2);
    let mut lemma_failures = 0;
    for _ in 0..500 {
        let r: [u64; 2] = std::array::from_fn(|_| rng.random_range(1..30));
        let s: [u64; 2] = std::array::from_fn(|_| rng.random_range(1..30));
        let counts = [r[0] * s[0], r[0] * s[1], r[1] * s[0], r[1] * s[1]];
        let table = real_table(&counts);
        assert!(!analyze_bias(&table, BiasScope::BOnly).unwrap().biased_wrt_b);
        if !check_lemma1(&table) {
            lemma_failures += 1;
        }
    }
    let mut unflagged = 0;
    for seed in random_biased_seeds(500 + 37).into_iter().skip(37) {
        let syn: Counts = std::array::from_fn(|_| rng.random_range(0..=12));
        let table = SubgroupTable::from_sources(Cardinalities::BINARY, &seed, &syn).unwrap();
        if analyze_bias(&table, BiasScope::BAndG).unwrap().biased_wrt_bg != Some(true) {
            unflagged += 1;
        }
    }
    let elapsed = t.elapsed();
    verdict(
        "lemma-property",
        lemma_failures == 0 && unflagged == 0 && elapsed < Duration::from_secs(10),
        format!(
            "500 independent tables: {lemma_failures} lemma failures; 500 biased tables: {unflagged} not flagged; {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn usb_balances_bias_but_not_source_bias() {
    let t = Instant::now();
    let mut violations = 0;
    for s in random_biased_seeds(200) {
        let table = real_table(&s);
        let plan = plan_usb(&table).unwrap();
        let combined = table.with_synthetic(plan.per_subgroup()).unwrap();
        let r = analyze_bias(&combined, BiasScope::BAndG).unwrap();
        if r.biased_wrt_b || r.biased_wrt_bg != Some(true) {
            violations += 1;
        }
    }
    let elapsed = t.elapsed();
    verdict(
        "usb-paradox",
        violations == 0 && elapsed < Duration::from_secs(5),
        format!("200 seeds, {violations} violations, {:.2}s", elapsed.as_secs_f64()),
    );
}

// ---------------------------------------------------------------------------
// Experiments on the default benchmark
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default)]
struct Metrics {
    wa: f64,
    ba: f64,
    syn_wa: f64,
    syn_ba: f64,
    probe: f64,
}

impl Metrics {
    fn gap(&self) -> f64 {
        self.ba - self.wa
    }

    fn syn_gap(&self) -> f64 {
        self.syn_ba - self.syn_wa
    }
}

fn label(v: &Variant) -> String {
    match v {
        Variant::Standard { augmentation, method } => format!("{augmentation}+{method}"),
        Variant::Staged { order, marginal, method } => format!("{order:?}/{marginal:?}+{method}"),
    }
}

/// Mean metrics over `SEEDS` replicates. Data seeds depend on the ratio and
/// replicate only, so every variant at a ratio sees the same splits.
fn mean_metrics(variant: Variant, ratio: f64) -> Metrics {
    type Slot = Arc<OnceLock<Metrics>>;
    static CACHE: OnceLock<Mutex<HashMap<String, Slot>>> = OnceLock::new();
    let key = format!("{}@{ratio}", label(&variant));
    let slot = CACHE
        .get_or_init(Default::default)
        .lock()
        .unwrap()
        .entry(key.clone())
        .or_default()
        .clone();
    *slot.get_or_init(|| {
        let protocol = Protocol::default();
        let runs: Vec<Metrics> = (0..SEEDS)
            .into_par_iter()
            .map(|r| {
                let generator = GeneratorConfig {
                    bias_ratio: ratio,
                    seed: derive_seed(&[&MASTER_SEED, &ratio.to_bits(), &r]),
                    ..GeneratorConfig::default()
                };
                let train_seed = derive_seed(&[&MASTER_SEED, &ratio.to_bits(), &key, &r]);
                let o = run_cell(&protocol, &generator, variant, train_seed).unwrap();
                Metrics {
                    wa: o.real.worst_accuracy,
                    ba: o.real.balanced_accuracy,
                    syn_wa: o.synthetic.worst_accuracy,
                    syn_ba: o.synthetic.balanced_accuracy,
                    probe: o.probe_acc,
                }
            })
            .collect();
        let n = runs.len() as f64;
        let sum = |f: fn(&Metrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
        Metrics {
            wa: sum(|m| m.wa),
            ba: sum(|m| m.ba),
            syn_wa: sum(|m| m.syn_wa),
            syn_ba: sum(|m| m.syn_ba),
            probe: sum(|m| m.probe),
        }
    })
}

fn std(aug: Augmentation, method: Method) -> Variant {
    Variant::standard(aug, method)
}

fn staged(order: StageOrder, marginal: PretrainingMarginal) -> Variant {
    Variant::Staged {
        order,
        marginal,
        method: Method::Erm,
    }
}

#[test]
fn ffr_beats_mixing_at_high_bias_and_is_stable() {
    let t = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for ratio in [0.99, 0.999] {
        let ffr = mean_metrics(std(Augmentation::Ffr, Method::Erm), ratio).wa;
        let usb = mean_metrics(std(Augmentation::Usb, Method::Erm), ratio).wa;
        let asb = mean_metrics(std(Augmentation::Asb, Method::Erm), ratio).wa;
        let margin = ffr - usb.max(asb);
        pass &= margin >= 0.05;
        detail.push(format!("ratio {ratio}: FFR {ffr:.4} USB {usb:.4} ASB {asb:.4} margin {margin:+.4} (need >= 0.05)"));
    }
    let low = mean_metrics(std(Augmentation::Ffr, Method::Erm), 0.90).wa;
    let high = mean_metrics(std(Augmentation::Ffr, Method::Erm), 0.999).wa;
    pass &= (high - low).abs() <= 0.05;
    let elapsed = t.elapsed();
    pass &= elapsed < Duration::from_secs(600);
    detail.push(format!("FFR 0.90 {low:.4} vs 0.999 {high:.4} (|diff| <= 0.05); {:.0}s", elapsed.as_secs_f64()));
    verdict("ffr-trend", pass, detail.join("; "));
}

#[test]
fn stage_order_ablation() {
    let t = Instant::now();
    let bal = PretrainingMarginal::BalancedB;
    let forward = mean_metrics(staged(StageOrder::Stage1ThenStage2, bal), 0.99).wa;
    let reverse = mean_metrics(staged(StageOrder::Stage2ThenStage1, bal), 0.99).wa;
    let real_only = mean_metrics(staged(StageOrder::Stage2Only, bal), 0.99).wa;
    let elapsed = t.elapsed();
    verdict(
        "stage-ablation",
        forward - reverse >= 0.02 && reverse - real_only >= 0.02 && elapsed < Duration::from_secs(300),
        format!(
            "ratio 0.99: S1->S2 {forward:.4}, S2->S1 {reverse:.4}, S2 only {real_only:.4} (each gap >= 0.02); {:.0}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn balanced_pretraining_beats_biased_pretraining() {
    let balanced = mean_metrics(staged(StageOrder::Stage1ThenStage2, PretrainingMarginal::BalancedB), 0.99).wa;
    let matched = mean_metrics(staged(StageOrder::Stage1ThenStage2, PretrainingMarginal::MatchRealBias), 0.99).wa;
    verdict(
        "pretraining-marginal",
        balanced - matched >= 0.05,
        format!("ratio 0.99: BalancedB {balanced:.4}, MatchRealBias {matched:.4}, diff {:+.4} (need >= 0.05)", balanced - matched),
    );
}

#[test]
fn mixing_leaves_a_real_and_synthetic_gap() {
    let usb = mean_metrics(std(Augmentation::Usb, Method::Erm), 0.999);
    let asb = mean_metrics(std(Augmentation::Asb, Method::Erm), 0.999);
    let ffr = mean_metrics(std(Augmentation::Ffr, Method::Erm), 0.999);
    let checks = [
        ("USB real gap >= 0.10", usb.gap() >= 0.10),
        ("USB synthetic gap >= 0.10", usb.syn_gap() >= 0.10),
        ("ASB real gap >= 0.10", asb.gap() >= 0.10),
        ("ASB synthetic gap >= 0.10", asb.syn_gap() >= 0.10),
        ("FFR real gap <= ASB/2", ffr.gap() <= asb.gap() / 2.0),
        ("FFR synthetic gap <= ASB/2", ffr.syn_gap() <= asb.syn_gap() / 2.0),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    verdict(
        "gap-by-scope",
        failed.is_empty(),
        format!(
            "ratio 0.999 BA-WA real/synthetic: USB {:.4}/{:.4}, ASB {:.4}/{:.4}, FFR {:.4}/{:.4}; failing: {:?}",
            usb.gap(),
            usb.syn_gap(),
            asb.gap(),
            asb.syn_gap(),
            ffr.gap(),
            ffr.syn_gap(),
            failed
        ),
    );
}

#[test]
fn probe_separates_sources_for_asb_not_ffr() {
    let asb = mean_metrics(std(Augmentation::Asb, Method::Erm), 0.99).probe;
    let ffr = mean_metrics(std(Augmentation::Ffr, Method::Erm), 0.99).probe;
    verdict(
        "source-probe",
        asb >= ffr + 0.10,
        format!("ratio 0.99: probe ASB {asb:.4}, FFR {ffr:.4}, diff {:+.4} (need >= 0.10)", asb - ffr),
    );
}

#[test]
fn robust_methods_compose_with_augmentation() {
    let t = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    let erm = |aug| mean_metrics(std(aug, Method::Erm), 0.99).wa;
    let ffr = erm(Augmentation::Ffr);
    for m in [Method::GroupDro, Method::Resampling] {
        let wa = mean_metrics(std(Augmentation::Ffr, m), 0.99).wa;
        pass &= wa >= ffr - 0.02;
        detail.push(format!("FFR+{m} {wa:.4} vs ERM {ffr:.4} (drop <= 0.02)"));
    }
    for aug in [Augmentation::Usb, Augmentation::Asb] {
        let base = erm(aug);
        for m in [Method::GroupDro, Method::Resampling] {
            let wa = mean_metrics(std(aug, m), 0.99).wa;
            pass &= wa > base;
            detail.push(format!("{aug}+{m} {wa:.4} vs ERM {base:.4} (improves)"));
        }
    }
    detail.push(format!("{:.0}s", t.elapsed().as_secs_f64()));
    verdict("method-composition", pass, detail.join("; "));
}

// ---------------------------------------------------------------------------
// Numerical suite
// ---------------------------------------------------------------------------

fn fd_max_rel_error() -> f64 {
    let mut rng = rng_stream(MASTER_SEED, 3);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let params = ModelParams::init(8, 16, 2, 0.7, &mut rng);
        let batch: Vec<LabeledExample> = (0..8)
            .map(|i| LabeledExample {
                features: (0..8).map(|_| rng.random_range(-2.0..2.0)).collect(),
                class_y: i % 2,
                bias_b: 0,
                source_g: Source::Real,
            })
            .collect();
        let refs: Vec<&LabeledExample> = batch.iter().collect();
        let w: Vec<f64> = (0..8).map(|_| rng.random_range(0.05..0.3)).collect();
        let wd = 1e-2;
        let (_, g) = loss_and_gradients(&params, &refs, &w, wd);
        let eps = 1e-5;
        for (blk, grads) in g.blocks().iter().enumerate() {
            for i in 0..grads.len() {
                let mut p = params.clone();
                p.blocks_mut()[blk][i] += eps;
                let mut m = params.clone();
                m.blocks_mut()[blk][i] -= eps;
                let num = (objective(&p, &refs, &w, wd) - objective(&m, &refs, &w, wd)) / (2.0 * eps);
                let rel = (grads[i] - num).abs() / (grads[i].abs() + num.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    worst
}

fn simplex_drift() -> f64 {
    let mut rng = rng_stream(MASTER_SEED, 4);
    let mut q = GroupWeights::uniform(8);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let losses: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..10.0)).collect();
        q = groupdro_update(&q, &losses, rng.random_range(0.001..2.0));
        assert!(q.as_slice().iter().all(|&v| v > 0.0));
        worst = worst.max((q.as_slice().iter().sum::<f64>() - 1.0).abs());
    }
    worst
}

fn resampler_p_value() -> f64 {
    let mut examples = Vec::new();
    for (sub, n) in [200usize, 20, 3, 1].into_iter().enumerate() {
        for _ in 0..n {
            examples.push(LabeledExample {
                features: vec![0.0],
                class_y: sub / 2,
                bias_b: sub % 2,
                source_g: Source::Real,
            });
        }
    }
    let data = Dataset::new(Cardinalities::BINARY, 1, examples).unwrap();
    let index = GroupIndex::build(&data, Grouping::ClassBias);
    let mut rng = rng_stream(MASTER_SEED, 5);
    let mut counts = [0f64; 4];
    let mut batches = 0;
    while batches < 10_000 {
        for b in make_batches(&data, &index, BatchRule::Resample, 16, &mut rng).unwrap() {
            if batches == 10_000 {
                break;
            }
            b.iter().for_each(|&i| counts[index.group_of(i)] += 1.0);
            batches += 1;
        }
    }
    let e = counts.iter().sum::<f64>() / 4.0;
    let stat: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
    1.0 - ChiSquared::new(3.0).unwrap().cdf(stat)
}

fn grid_runs_identical() -> bool {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let grid = ExperimentGrid {
            bias_ratios: vec![0.95],
            augmentations: vec![Augmentation::Usb, Augmentation::Ffr],
            methods: vec![Method::Erm, Method::GroupDro],
            seeds: vec![1, 2],
            generator: GeneratorConfig {
                n_per_class: 200,
                test_per_subgroup: 50,
                ..GeneratorConfig::default()
            },
            output_dir: dir.path().to_path_buf(),
            protocol: Protocol::default(),
            master_seed: 5,
        };
        let s = run_grid(&grid, RunOptions { workers: 2, resume: false }).unwrap();
        let manifest = synthbias_harness::Manifest::load(&s.manifest).unwrap();
        (std::fs::read(s.results).unwrap(), manifest.cells)
    };
    run() == run()
}

#[test]
fn numerical_suite() {
    let fd = fd_max_rel_error();
    let drift = simplex_drift();
    let p = resampler_p_value();
    let same = grid_runs_identical();
    verdict(
        "numerical-suite",
        fd < 1e-5 && drift < 1e-12 && p > 0.001 && same,
        format!("gradient rel. error {fd:.2e}; simplex drift {drift:.2e}; resampler chi-square p {p:.4}; identical grid runs {same}"),
    );
}
