use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use synthbias_core::composition::{analyze_bias, check_lemma1, verify_theorem1, BiasScope, VerifyOptions};
use synthbias_core::datagen::{make_biased_split, make_synthetic_test, GeneratorConfig};
use synthbias_core::train::Method;
use synthbias_core::SubgroupTable;
use synthbias_harness::{report_path, run_cell, run_grid, Augmentation, ExperimentGrid, HarnessError, Protocol, RunOptions, Variant};

#[derive(Parser)]
#[command(name = "synthbias", version, about = "Synthetic augmentation under spurious correlation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the real splits and the synthetic test set to CSV.
    Generate {
        /// GeneratorConfig JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bias analysis of subgroup-count tables (`y,b,g,count` CSV).
    Audit {
        #[arg(required = true)]
        tables: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = ScopeArg::BAndG)]
        scope: ScopeArg,
        /// Also verify the USB paradox over every synthetic addition of at
        /// most this many examples per (y, b).
        #[arg(long)]
        theorem_cap: Option<u64>,
    },
    /// Train and evaluate a single cell.
    Train {
        /// TrainCell JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment grid.
    Grid {
        /// ExperimentGrid JSON.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the grid's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the grid's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Reuse completed cells of an existing output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Aggregate a results CSV.
    Report {
        results: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    #[value(name = "b")]
    BOnly,
    #[value(name = "bg")]
    BAndG,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainCell {
    generator: GeneratorConfig,
    protocol: Protocol,
    augmentation: Augmentation,
    method: Method,
    train_seed: u64,
}

impl Default for TrainCell {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            protocol: Protocol::default(),
            augmentation: Augmentation::Ffr,
            method: Method::Erm,
            train_seed: 0,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<HarnessError>().map_or("cli", HarnessError::kind);
            let body = json!({ "error": kind, "message": format!("{e:#}") });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Generate { config, seed, out } => {
            let mut gen: GeneratorConfig = config.as_deref().map(read_json).transpose()?.unwrap_or_default();
            if let Some(s) = seed {
                gen.seed = s;
            }
            gen.validate().map_err(HarnessError::from)?;
            let bundle = make_biased_split(&gen).map_err(HarnessError::from)?;
            let synthetic = make_synthetic_test(&gen).map_err(HarnessError::from)?;
            fs::create_dir_all(&out)?;
            for (name, data) in [
                ("train", &bundle.train),
                ("validation", &bundle.validation),
                ("test", &bundle.test),
                ("synthetic_test", &synthetic),
            ] {
                data.write_csv(fs::File::create(out.join(format!("{name}.csv")))?)
                    .map_err(HarnessError::from)?;
            }
            bundle
                .train
                .table()
                .write_csv(fs::File::create(out.join("train_table.csv"))?)
                .map_err(HarnessError::from)?;
            fs::write(out.join("generator.json"), serde_json::to_vec_pretty(&gen)?)?;
            print_json(&json!({ "out": out, "train_counts": bundle.train.table().marginal_counts() }))
        }
        Command::Audit {
            tables,
            scope,
            theorem_cap,
        } => {
            let scope = match scope {
                ScopeArg::BOnly => BiasScope::BOnly,
                ScopeArg::BAndG => BiasScope::BAndG,
            };
            let mut results = Vec::new();
            for path in &tables {
                let table = SubgroupTable::read_csv(fs::File::open(path)?, None).map_err(HarnessError::from)?;
                let bias = analyze_bias(&table, scope).map_err(HarnessError::from)?;
                let theorem = match theorem_cap {
                    Some(cap) => {
                        let v = verify_theorem1(&table, &VerifyOptions::with_cap(cap)).map_err(HarnessError::from)?;
                        Some(json!({
                            "per_cell_cap": v.per_cell_cap,
                            "augmentations_checked": v.augmentations_checked,
                            "counterexamples": v.counterexamples.len(),
                            "holds": v.holds(),
                            "first_witness": v.first_witness,
                        }))
                    }
                    None => None,
                };
                results.push(json!({
                    "table": path,
                    "bias_report": bias,
                    "lemma1_holds": check_lemma1(&table),
                    "theorem": theorem,
                }));
            }
            print_json(&results)
        }
        Command::Train { config, seed, out } => {
            let mut cell: TrainCell = config.as_deref().map(read_json).transpose()?.unwrap_or_default();
            if let Some(s) = seed {
                cell.train_seed = s;
            }
            let outcome = run_cell(
                &cell.protocol,
                &cell.generator,
                Variant::standard(cell.augmentation, cell.method),
                cell.train_seed,
            )?;
            let rows = outcome.rows(
                cell.method,
                cell.augmentation.as_str(),
                cell.generator.bias_ratio,
                cell.train_seed,
            );
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                let mut w = csv::Writer::from_path(dir.join("rows.csv"))?;
                for r in &rows {
                    w.serialize(r)?;
                }
                w.flush()?;
                fs::write(dir.join("model.json"), outcome.model.to_json().map_err(HarnessError::from)?)?;
                fs::write(dir.join("cell.json"), serde_json::to_vec_pretty(&cell)?)?;
            }
            print_json(&json!({
                "selected_lr": outcome.selected_lr,
                "validation_wa": outcome.validation_wa,
                "probe_acc": outcome.probe_acc,
                "rows": rows,
            }))
        }
        Command::Grid {
            config,
            seed,
            out,
            workers,
            resume,
        } => {
            let mut grid: ExperimentGrid = read_json(&config)?;
            if let Some(s) = seed {
                grid.master_seed = s;
            }
            if let Some(o) = out {
                grid.output_dir = o;
            }
            let s = run_grid(&grid, RunOptions { workers, resume })?;
            print_json(&json!({
                "cells": s.cells,
                "trained": s.trained,
                "skipped": s.skipped,
                "failed": s.failed,
                "results": s.results,
                "manifest": s.manifest,
            }))
        }
        Command::Report { results, out, json } => {
            let r = report_path(&results)?;
            let text = if json {
                serde_json::to_string_pretty(&r)? + "\n"
            } else {
                r.to_string()
            };
            match out {
                Some(path) => fs::write(path, text)?,
                None => io::stdout().lock().write_all(text.as_bytes())?,
            }
            Ok(())
        }
    }
}
