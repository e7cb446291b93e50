//! The augmentation × method × bias ratio × seed matrix, run concurrently
//! with results persisted incrementally and resumable from disk.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use synthbias_core::datagen::GeneratorConfig;
use synthbias_core::metrics::EvalRow;
use synthbias_core::train::Method;

use crate::cell::{run_cell, Augmentation, Protocol, Variant};
use crate::error::{HarnessError, Result};

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    pub bias_ratios: Vec<f64>,
    pub augmentations: Vec<Augmentation>,
    pub methods: Vec<Method>,
    /// Replicate identifiers.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub generator: GeneratorConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub master_seed: u64,
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::InvalidGrid(m.into()));
        if self.bias_ratios.is_empty() || self.augmentations.is_empty() || self.methods.is_empty() || self.seeds.is_empty() {
            return bad("every axis needs at least one value");
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("duplicate seeds");
        }
        if self.augmentations.iter().collect::<BTreeSet<_>>().len() != self.augmentations.len()
            || self.methods.iter().map(|m| m.as_str()).collect::<BTreeSet<_>>().len() != self.methods.len()
        {
            return bad("duplicate augmentation or method");
        }
        for &r in &self.bias_ratios {
            self.generator_for(r, 0).validate()?;
        }
        self.protocol.validate()
    }

    /// Cells in canonical order.
    pub fn cells(&self) -> Vec<CellConfig> {
        let mut out = Vec::new();
        for &ratio in &self.bias_ratios {
            for &augmentation in &self.augmentations {
                for &method in &self.methods {
                    for &replicate in &self.seeds {
                        let data_seed = derive_seed(&[&self.master_seed, &ratio.to_bits(), &replicate]);
                        let train_seed = derive_seed(&[
                            &self.master_seed,
                            &ratio.to_bits(),
                            &augmentation.as_str(),
                            &method.as_str(),
                            &replicate,
                        ]);
                        out.push(CellConfig {
                            bias_ratio: ratio,
                            augmentation,
                            method,
                            replicate,
                            train_seed,
                            generator: self.generator_for(ratio, data_seed),
                            protocol: self.protocol.clone(),
                        });
                    }
                }
            }
        }
        out
    }

    fn generator_for(&self, ratio: f64, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            bias_ratio: ratio,
            seed,
            ..self.generator.clone()
        }
    }
}

/// Everything needed to rerun one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub bias_ratio: f64,
    pub augmentation: Augmentation,
    pub method: Method,
    pub replicate: u64,
    pub train_seed: u64,
    /// Carries the bias ratio and the data seed, which is shared by every
    /// augmentation and method of a (ratio, replicate) pair.
    pub generator: GeneratorConfig,
    pub protocol: Protocol,
}

impl CellConfig {
    pub fn id(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.bias_ratio, self.augmentation, self.method, self.replicate
        )
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("cell config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn run(&self) -> Result<Vec<ResultRow>> {
        let outcome = run_cell(
            &self.protocol,
            &self.generator,
            Variant::standard(self.augmentation, self.method),
            self.train_seed,
        )?;
        Ok(outcome
            .rows(self.method, self.augmentation.as_str(), self.bias_ratio, self.replicate)
            .into_iter()
            .map(ResultRow::from)
            .collect())
    }

    fn error_row(&self) -> ResultRow {
        ResultRow {
            method: self.method.to_string(),
            augmentation: self.augmentation.to_string(),
            bias_ratio: self.bias_ratio,
            seed: self.replicate,
            scope: ERROR_SCOPE.into(),
            wa: None,
            ba: None,
            probe_acc: None,
        }
    }
}

/// Scope value of the row recorded for a failed cell.
pub const ERROR_SCOPE: &str = "Error";

/// A results-table row; metric columns are empty on error rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub augmentation: String,
    pub bias_ratio: f64,
    pub seed: u64,
    pub scope: String,
    #[serde(rename = "WA")]
    pub wa: Option<f64>,
    #[serde(rename = "BA")]
    pub ba: Option<f64>,
    pub probe_acc: Option<f64>,
}

impl From<EvalRow> for ResultRow {
    fn from(r: EvalRow) -> Self {
        Self {
            method: r.method,
            augmentation: r.augmentation,
            bias_ratio: r.bias_ratio,
            seed: r.seed,
            scope: r.scope,
            wa: Some(r.wa),
            ba: Some(r.ba),
            probe_acc: r.probe_acc,
        }
    }
}

/// Seed from a hash of the given parts.
pub fn derive_seed(parts: &[&dyn std::fmt::Display]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.to_string().as_bytes());
        h.update([0u8]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum CellStatus {
    Done { rows: Vec<ResultRow> },
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub config_hash: String,
    pub config: CellConfig,
    #[serde(flatten)]
    pub status: CellStatus,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub grid: Option<ExperimentGrid>,
    /// Keyed by [`CellConfig::id`].
    pub cells: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Writes through a temporary file so a crash never leaves a torn
    /// manifest.
    pub fn store(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// All rows in canonical cell order.
    pub fn rows(&self, order: &[CellConfig]) -> Vec<ResultRow> {
        let mut out = Vec::new();
        for cell in order {
            if let Some(entry) = self.cells.get(&cell.id()) {
                match &entry.status {
                    CellStatus::Done { rows } => out.extend(rows.iter().cloned()),
                    CellStatus::Failed { .. } => out.push(cell.error_row()),
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub workers: usize,
    /// Keep completed cells of an existing output directory.
    pub resume: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            resume: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSummary {
    pub cells: usize,
    pub trained: usize,
    pub skipped: usize,
    pub failed: usize,
    pub results: PathBuf,
    pub manifest: PathBuf,
}

pub fn run_grid(grid: &ExperimentGrid, options: RunOptions) -> Result<GridSummary> {
    grid.validate()?;
    fs::create_dir_all(&grid.output_dir)?;
    let manifest_path = grid.output_dir.join(MANIFEST_FILE);
    let results_path = grid.output_dir.join(RESULTS_FILE);

    let mut manifest = if manifest_path.exists() {
        if !options.resume {
            return Err(HarnessError::ManifestConflict {
                path: manifest_path.display().to_string(),
                reason: "output already holds results; resume to reuse them".into(),
            });
        }
        Manifest::load(&manifest_path)?
    } else {
        Manifest::default()
    };
    manifest.grid = Some(grid.clone());

    let cells = grid.cells();
    let pending: Vec<&CellConfig> = cells
        .iter()
        .filter(|c| {
            !matches!(
                manifest.cells.get(&c.id()),
                Some(ManifestEntry { config_hash, status: CellStatus::Done { .. }, .. }) if *config_hash == c.hash()
            )
        })
        .collect();
    let skipped = cells.len() - pending.len();

    let mut appender = csv::WriterBuilder::new().has_headers(false).from_writer(
        fs::OpenOptions::new().create(true).append(true).open(&results_path)?,
    );
    if fs::metadata(&results_path)?.len() == 0 {
        appender.write_record(EvalRow::HEADER)?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| HarnessError::InvalidGrid(e.to_string()))?;
    let (tx, rx) = mpsc::channel::<(CellConfig, Result<Vec<ResultRow>>)>();
    let mut failed = 0;
    std::thread::scope(|scope| -> Result<()> {
        let work = &pending;
        scope.spawn(move || {
            pool.install(|| {
                work.par_iter().for_each_with(tx, |tx, cell| {
                    let _ = tx.send(((*cell).clone(), cell.run()));
                });
            });
        });
        for (cell, outcome) in rx {
            let status = match outcome {
                Ok(rows) => {
                    for r in &rows {
                        appender.serialize(r)?;
                    }
                    CellStatus::Done { rows }
                }
                Err(e) => {
                    failed += 1;
                    appender.serialize(cell.error_row())?;
                    CellStatus::Failed { error: e.to_string() }
                }
            };
            appender.flush()?;
            manifest.cells.insert(
                cell.id(),
                ManifestEntry {
                    config_hash: cell.hash(),
                    config: cell,
                    status,
                },
            );
            manifest.store(&manifest_path)?;
        }
        Ok(())
    })?;
    drop(appender);
    manifest.store(&manifest_path)?;
    write_results(&results_path, &manifest.rows(&cells))?;

    Ok(GridSummary {
        cells: cells.len(),
        trained: pending.len(),
        skipped,
        failed,
        results: results_path,
        manifest: manifest_path,
    })
}

/// Rewrites the results table in canonical order, so that the file does
/// not depend on completion order.
fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&tmp)?;
        w.write_record(EvalRow::HEADER)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
