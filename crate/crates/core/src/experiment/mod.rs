//! Declarative experiments: distill (or load) `S` once, extract the feature
//! caches the grid needs, then train and test every grid entry under every
//! seed. Each finished (entry, seed) cell is written to its own file, so a
//! rerun only trains what is missing.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! manifest.json          config echo, version, dataset and S hashes
//! distill/               S, its PNG grid, loss trace and manifest
//! extractors/<key>/      extractor checkpoints
//! caches/<key>-e<E>.elfc feature caches
//! cells/<run>/seed<N>.json per-seed accuracy and loss traces
//! index.jsonl            one line per finished cell, in completion order
//! records.json           aggregated MetricsRecords
//! failures.json          cells that errored, if any
//! ```

mod ablation;
mod gold;
mod report;

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::Instant;

use elf_tensor::PrngState;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use ablation::{ablation_entries, ablation_grid, ablation_table, AblationKind, LOSS_TERM_ROWS};
pub use gold::{
    gold_cross_arch, gold_distance_rows, gold_eval_lr, gold_feature_epoch, gold_loss_term_rows, GoldCell,
    GoldDistanceRow, GoldEntry, GoldLossTermRow, GOLD_EVAL_MODELS,
};
pub use report::{
    cross_arch_csv, cross_arch_matrix, cross_arch_text, emit_report, gold_comparison_text, read_report_json,
    CrossArchRow, ReportFile, ReportFormat, CSV_HEADER, REPORT_SCHEMA_VERSION,
};

use crate::data::{
    generate_toy_split, load_cifar10_binary, LabeledDataset, Provenance, SyntheticDataset, ToyShapesConfig,
};
use crate::distill::{distill, write_distill_artifacts, DistillConfig};
use crate::elf::{
    check_feature_shapes, extract_features, load_cache, save_cache, train_evaluation_model, train_feature_extractor,
    ElfConfig, ElfTraces, ExtractorConfig, FeatureCache,
};
use crate::error::{config_err, Error, IoContext, Result};
use crate::models::{build_model, ModelConfig, ModelState};
use crate::provenance::{config_hash, read_json, sha256_hex, write_json, Manifest};
use crate::train::{evaluate_accuracy, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Toy(ToyShapesConfig),
    /// Directory holding `data_batch_1.bin` … `data_batch_5.bin` and
    /// `test_batch.bin`.
    Cifar10 {
        dir: PathBuf,
        /// Keep only the first `n` training images of each class.
        #[serde(default)]
        train_per_class: Option<usize>,
        /// Keep only the first `n` test images.
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

impl DatasetSpec {
    /// `(C, H, W)` and class count.
    pub fn shape(&self) -> ([usize; 3], usize) {
        match self {
            DatasetSpec::Toy(t) => ([t.channels, t.resolution, t.resolution], t.class_count),
            DatasetSpec::Cifar10 { .. } => ([3, 32, 32], 10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistillSpec {
    Run(DistillConfig),
    /// A synthetic set saved earlier, labels grouped by class.
    Load {
        path: PathBuf,
        /// Recorded as provenance and shown in reports.
        method: String,
        /// Distillation architecture label, for reports.
        #[serde(default)]
        model: Option<String>,
    },
}

impl DistillSpec {
    pub fn model_label(&self) -> String {
        match self {
            DistillSpec::Run(c) => c.model.label(),
            DistillSpec::Load { model, .. } => model.clone().unwrap_or_else(|| "loaded".into()),
        }
    }

    pub fn method(&self) -> String {
        match self {
            DistillSpec::Run(c) => c.method.to_string(),
            DistillSpec::Load { method, .. } => method.clone(),
        }
    }
}

/// Where the features guiding an ELF entry come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// The configured extractor, trained on the real data.
    #[default]
    Extractor,
    /// A copy of the evaluation architecture trained on the real data,
    /// tapped at the entry's split point.
    EvalArch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    /// Row label in reports; derived from the configuration when absent.
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelConfig,
    /// `None` trains the plain baseline.
    #[serde(default)]
    pub elf: Option<ElfConfig>,
    /// Overrides the experiment's evaluation protocol for this entry.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub feature_source: FeatureSource,
}

impl GridEntry {
    pub fn baseline(model: ModelConfig) -> Self {
        Self {
            name: None,
            model,
            elf: None,
            train: None,
            feature_source: FeatureSource::Extractor,
        }
    }

    pub fn with_elf(model: ModelConfig, elf: ElfConfig) -> Self {
        Self {
            elf: Some(elf),
            ..Self::baseline(model)
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn variant(&self) -> &'static str {
        if self.elf.is_some() {
            "elf"
        } else {
            "baseline"
        }
    }

    pub fn run_id(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.elf {
            None => format!("{}/baseline", self.model.label()),
            Some(e) => {
                let mut id = format!(
                    "{}/elf-{}-f{}-r{}-e{}",
                    self.model.label(),
                    e.distance.name(),
                    e.lambda_front,
                    e.lambda_rear,
                    e.feature_epoch
                );
                if !e.use_task {
                    id.push_str("-notask");
                }
                if self.feature_source == FeatureSource::EvalArch {
                    id.push_str("-evalarch");
                }
                id
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub distill: DistillSpec,
    /// Required when any grid entry uses ELF. Checkpoint epochs are taken
    /// from the entries' feature epochs.
    #[serde(default)]
    pub extractor: Option<ExtractorConfig>,
    /// Evaluation protocol shared by all entries unless overridden.
    #[serde(default)]
    pub train: TrainConfig,
    pub grid: Vec<GridEntry>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Cells trained concurrently.
    #[serde(default = "one")]
    pub workers: usize,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(format!("experiment config: {e}")))
    }

    pub fn from_toml_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).at(path)?;
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| config_err(format!("cannot encode config as TOML: {e}")))
    }

    /// Checks everything that can be checked without data: seeds, model
    /// shapes against the dataset, split names and feature channel counts.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_err("the seed list is empty"));
        }
        if self.grid.is_empty() {
            return Err(config_err("the evaluation grid is empty"));
        }
        if self.workers == 0 {
            return Err(config_err("workers must be at least 1"));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(config_err(format!("seed {dup} is listed twice")));
        }
        let (shape, classes) = self.dataset.shape();
        if let DatasetSpec::Toy(t) = &self.dataset {
            t.validate()?;
        }
        if let DistillSpec::Run(d) = &self.distill {
            d.validate()?;
            check_model_fits(&d.model, shape, classes)?;
        }
        self.train.validate()?;
        let mut ids = BTreeSet::new();
        for entry in &self.grid {
            let id = entry.run_id();
            if !ids.insert(id.clone()) {
                return Err(config_err(format!("two grid entries share the run id `{id}`")));
            }
            check_model_fits(&entry.model, shape, classes)?;
            if let Some(t) = &entry.train {
                t.validate()?;
            }
            if let Some(elf) = &entry.elf {
                elf.validate()?;
                let plan = cache_plan(self, entry)?.expect("ELF entries have a plan");
                let eval: ModelState = build_model(&entry.model, PrngState::new(0))?;
                let (front, _) = eval.split(elf.split_point(&entry.model)?)?;
                let ext: ModelState = build_model(&plan.extractor.model, PrngState::new(0))?;
                let tap = plan.extractor.tap_block.unwrap_or(ext.num_blocks() - 1);
                if tap == 0 || tap >= ext.num_blocks() {
                    return Err(config_err(format!("extractor tap block {tap} out of range")));
                }
                check_feature_shapes(
                    &entry.model.label(),
                    &front.output_shape(&eval),
                    &ext.block_output_shape(tap),
                    elf.spatial_adapt,
                )
                .map_err(|e| config_err(format!("grid entry `{id}`: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn entry_train<'a>(&'a self, entry: &'a GridEntry) -> &'a TrainConfig {
        entry.train.as_ref().unwrap_or(&self.train)
    }
}

fn check_model_fits(model: &ModelConfig, shape: [usize; 3], classes: usize) -> Result<()> {
    model.validate()?;
    if model.input_shape != shape || model.num_classes != classes {
        return Err(config_err(format!(
            "{} expects {:?} inputs and {} classes, the dataset has {shape:?} and {classes}",
            model.label(),
            model.input_shape,
            model.num_classes
        )));
    }
    Ok(())
}

/// Outcome of one (entry, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Top-1 test accuracy in `[0, 1]`.
    pub accuracy: f64,
    pub wall_ms: u64,
    pub traces: ElfTraces,
}

/// Last-step loss values averaged over seeds; absent terms are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalLosses {
    pub total: Option<f64>,
    pub task: Option<f64>,
    pub front: Option<f64>,
    pub rear: Option<f64>,
}

/// Accuracy statistics of one grid entry over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub config_hash: String,
    pub method: String,
    pub distill_model: String,
    pub eval_model: String,
    pub variant: String,
    pub entry: GridEntry,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation (zero for a single seed).
    pub std: f64,
    pub wall_time_s: f64,
    pub final_losses: FinalLosses,
    /// Per-seed loss traces, in seed order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traces: Vec<ElfTraces>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricsRecord {
    pub fn from_results(
        entry: &GridEntry,
        config_hash: String,
        method: String,
        distill_model: String,
        results: &[SeedResult],
    ) -> Result<Self> {
        if results.is_empty() {
            return Err(config_err(format!("no seeds finished for `{}`", entry.run_id())));
        }
        if let Some(r) = results.iter().find(|r| !(0.0..=1.0).contains(&r.accuracy)) {
            return Err(Error::Format(format!(
                "accuracy {} of seed {} outside [0, 1]",
                r.accuracy, r.seed
            )));
        }
        let accuracies: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
        let (mean, std) = mean_std(&accuracies);
        let last = |f: fn(&ElfTraces) -> &Vec<f64>| -> Option<f64> {
            let v: Vec<f64> = results.iter().filter_map(|r| f(&r.traces).last().copied()).collect();
            (v.len() == results.len()).then(|| mean_std(&v).0)
        };
        Ok(Self {
            run_id: entry.run_id(),
            config_hash,
            method,
            distill_model,
            eval_model: entry.model.label(),
            variant: entry.variant().into(),
            entry: entry.clone(),
            seeds: results.iter().map(|r| r.seed).collect(),
            accuracies,
            mean,
            std,
            wall_time_s: results.iter().map(|r| r.wall_ms as f64 / 1000.0).sum(),
            final_losses: FinalLosses {
                total: last(|t| &t.total),
                task: last(|t| &t.task),
                front: last(|t| &t.front),
                rear: last(|t| &t.rear),
            },
            traces: results.iter().map(|r| r.traces.clone()).collect(),
        })
    }

    /// Whether `mean` and `std` match a recomputation from `accuracies`.
    pub fn is_consistent(&self, tol: f64) -> bool {
        let (m, s) = mean_std(&self.accuracies);
        (m - self.mean).abs() <= tol && (s - self.std).abs() <= tol
    }
}

/// Training work done by a run; a rerun of a finished experiment does none.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkCounter {
    pub distillations: usize,
    pub extractor_trainings: usize,
    pub cache_extractions: usize,
    pub cells_trained: usize,
    pub cells_reused: usize,
}

impl WorkCounter {
    /// Everything that optimized a network or an image.
    pub fn training_runs(&self) -> usize {
        self.distillations + self.extractor_trainings + self.cells_trained
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub run_id: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    /// One record per entry whose seeds all finished, in grid order.
    pub records: Vec<MetricsRecord>,
    pub work: WorkCounter,
    pub failures: Vec<CellFailure>,
}

impl RunSummary {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Train/test data of the experiment.
pub fn load_dataset(spec: &DatasetSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    match spec {
        DatasetSpec::Toy(t) => generate_toy_split(t),
        DatasetSpec::Cifar10 {
            dir,
            train_per_class,
            test_limit,
        } => {
            let parts = (1..=5)
                .map(|i| load_cifar10_binary(dir.join(format!("data_batch_{i}.bin"))))
                .collect::<Result<Vec<LabeledDataset>>>()?;
            let mut train = LabeledDataset::concat(&parts)?;
            if let Some(n) = train_per_class {
                let mut keep: Vec<usize> = (0..train.class_count)
                    .flat_map(|c| train.class_indices(c).iter().take(*n).copied())
                    .collect();
                keep.sort_unstable();
                train = train.subset(&keep)?;
            }
            let mut test = load_cifar10_binary(dir.join("test_batch.bin"))?;
            if let Some(n) = test_limit {
                let keep: Vec<usize> = (0..test.len().min(*n)).collect();
                test = test.subset(&keep)?;
            }
            Ok((train, test))
        }
    }
}

/// Loads `S` from the run directory when its manifest matches the distill
/// config and the real data; distills and writes it otherwise.
pub fn prepare_synthetic(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    work: &mut WorkCounter,
) -> Result<SyntheticDataset> {
    match &cfg.distill {
        DistillSpec::Run(dc) => {
            let dir = cfg.output_dir.join("distill");
            let hash = config_hash(dc)?;
            let provenance = Provenance {
                method: dc.method.to_string(),
                config_hash: hash.clone(),
            };
            if let Ok(m) = Manifest::load(dir.join("manifest.json")) {
                if m.config_hash == hash && m.hashes.get("real") == Some(&train.content_hash()) {
                    let s = SyntheticDataset::load(dir.join("synthetic.elft"), train.class_count, provenance.clone());
                    if let Ok(s) = s {
                        if m.hashes.get("synthetic") == Some(&s.content_hash()) {
                            return Ok(s);
                        }
                    }
                }
            }
            let outcome = distill(train, dc)?;
            work.distillations += 1;
            write_distill_artifacts(&outcome, dc, &dir)?;
            Ok(outcome.synthetic)
        }
        DistillSpec::Load { path, method, .. } => {
            let bytes = std::fs::read(path).at(path)?;
            let provenance = Provenance {
                method: method.clone(),
                config_hash: sha256_hex(&bytes),
            };
            let s = SyntheticDataset::load(path, train.class_count, provenance)?;
            if s.image_shape() != train.image_shape() {
                return Err(config_err(format!(
                    "{}: synthetic images are {:?}, the dataset's are {:?}",
                    path.display(),
                    s.image_shape(),
                    train.image_shape()
                )));
            }
            Ok(s)
        }
    }
}

/// The extractor run and checkpoint epoch an ELF entry reads features from.
#[derive(Debug, Clone)]
struct CachePlan {
    /// Identifies the extractor run independently of checkpoint epochs.
    group: String,
    extractor: ExtractorConfig,
    epoch: usize,
}

impl CachePlan {
    fn key(&self) -> String {
        format!("{}-e{}", self.group, self.epoch)
    }
}

fn cache_plan(cfg: &ExperimentConfig, entry: &GridEntry) -> Result<Option<CachePlan>> {
    let Some(elf) = &entry.elf else {
        return Ok(None);
    };
    let base = cfg.extractor.as_ref().ok_or_else(|| {
        config_err(format!(
            "grid entry `{}` uses ELF but no extractor is configured",
            entry.run_id()
        ))
    })?;
    let mut extractor = match entry.feature_source {
        FeatureSource::Extractor => base.clone(),
        FeatureSource::EvalArch => ExtractorConfig {
            model: entry.model.clone(),
            tap_block: Some(elf.split_point(&entry.model)?.block_index),
            ..base.clone()
        },
    };
    extractor.checkpoint_epochs.clear();
    let hash = config_hash(&extractor)?;
    let group = format!("{}-{}", extractor.model.label(), &hash[..12]);
    Ok(Some(CachePlan {
        group,
        extractor,
        epoch: elf.feature_epoch,
    }))
}

/// Builds or loads every feature cache the entries need. Each extractor is
/// trained once up to the largest requested epoch, so a cache never
/// depends on which other epochs were asked for.
pub fn prepare_caches(
    cfg: &ExperimentConfig,
    entries: &[&GridEntry],
    train: &LabeledDataset,
    synthetic: &SyntheticDataset,
    work: &mut WorkCounter,
) -> Result<HashMap<String, FeatureCache>> {
    let mut groups: IndexMap<String, (ExtractorConfig, BTreeSet<usize>)> = IndexMap::new();
    for entry in entries {
        if let Some(plan) = cache_plan(cfg, entry)? {
            groups
                .entry(plan.group.clone())
                .or_insert_with(|| (plan.extractor.clone(), BTreeSet::new()))
                .1
                .insert(plan.epoch);
        }
    }
    let cache_dir = cfg.output_dir.join("caches");
    let mut caches = HashMap::new();
    for (group, (extractor, epochs)) in groups {
        let path_of = |e: usize| cache_dir.join(format!("{group}-e{e}.elfc"));
        let mut missing = Vec::new();
        for &e in &epochs {
            match load_cache(path_of(e), Some(synthetic)) {
                Ok(c) if c.meta.extractor == extractor.model && c.meta.extractor_epoch == e => {
                    caches.insert(format!("{group}-e{e}"), c);
                }
                _ => missing.push(e),
            }
        }
        if missing.is_empty() {
            continue;
        }
        std::fs::create_dir_all(&cache_dir).at(&cache_dir)?;
        let run = ExtractorConfig {
            checkpoint_epochs: epochs.iter().copied().collect(),
            ..extractor.clone()
        };
        let checkpoints =
            train_feature_extractor(&run, train, None, Some(&cfg.output_dir.join("extractors").join(&group)))?;
        work.extractor_trainings += 1;
        for ck in checkpoints.iter().filter(|c| missing.contains(&c.epoch)) {
            let cache = extract_features(&ck.model, ck.epoch, synthetic, run.tap_block)?;
            save_cache(&cache, path_of(ck.epoch))?;
            work.cache_extractions += 1;
            caches.insert(format!("{group}-e{}", ck.epoch), cache);
        }
    }
    Ok(caches)
}

/// Data shared by every cell of a run.
pub struct Context {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub synthetic: SyntheticDataset,
    caches: HashMap<String, FeatureCache>,
}

impl Context {
    /// Loads data, `S` and the caches `entries` need.
    pub fn prepare(cfg: &ExperimentConfig, entries: &[&GridEntry], work: &mut WorkCounter) -> Result<Self> {
        let (train, test) = load_dataset(&cfg.dataset)?;
        let synthetic = prepare_synthetic(cfg, &train, work)?;
        let caches = prepare_caches(cfg, entries, &train, &synthetic, work)?;
        Ok(Self {
            train,
            test,
            synthetic,
            caches,
        })
    }

    fn cache_for(&self, cfg: &ExperimentConfig, entry: &GridEntry) -> Result<Option<(&FeatureCache, String)>> {
        match cache_plan(cfg, entry)? {
            None => Ok(None),
            Some(plan) => {
                let key = plan.key();
                let cache = self
                    .caches
                    .get(&key)
                    .ok_or_else(|| config_err(format!("feature cache `{key}` was not prepared")))?;
                Ok(Some((cache, key)))
            }
        }
    }
}

#[derive(Serialize)]
struct CellKey<'a> {
    entry: &'a GridEntry,
    train: &'a TrainConfig,
    synthetic: String,
    test: String,
    cache: Option<String>,
}

/// Hash identifying everything a cell's result depends on except the seed.
pub fn cell_hash(cfg: &ExperimentConfig, ctx: &Context, entry: &GridEntry) -> Result<String> {
    let cache = ctx.cache_for(cfg, entry)?.map(|(_, k)| k);
    config_hash(&CellKey {
        entry,
        train: cfg.entry_train(entry),
        synthetic: ctx.synthetic.content_hash(),
        test: ctx.test.content_hash(),
        cache,
    })
}

/// Trains and tests one entry under one seed. The seed alone fixes model
/// initialization and batch order, so entries sharing a seed start from
/// the same network.
pub fn run_cell(cfg: &ExperimentConfig, ctx: &Context, entry: &GridEntry, seed: u64) -> Result<SeedResult> {
    let cache = ctx.cache_for(cfg, entry)?.map(|(c, _)| c);
    let elf = entry.elf.clone().unwrap_or_default();
    let start = Instant::now();
    let out = train_evaluation_model(
        &entry.model,
        &ctx.synthetic,
        cache,
        &elf,
        cfg.entry_train(entry),
        PrngState::new(seed),
    )?;
    let accuracy = evaluate_accuracy(&out.model, &ctx.test)?;
    Ok(SeedResult {
        seed,
        accuracy,
        wall_ms: start.elapsed().as_millis() as u64,
        traces: out.traces,
    })
}

fn cell_dir(cfg: &ExperimentConfig, entry: &GridEntry, hash: &str) -> PathBuf {
    let slug: String = entry
        .run_id()
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    cfg.output_dir.join("cells").join(format!("{slug}-{}", &hash[..12]))
}

#[derive(Serialize)]
struct IndexLine<'a> {
    run_id: &'a str,
    seed: u64,
    accuracy: f64,
    file: String,
}

/// Runs the whole grid. Cells already on disk are reused; a failing cell
/// is recorded and its siblings still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).at(&cfg.output_dir)?;
    let mut work = WorkCounter::default();
    let entries: Vec<&GridEntry> = cfg.grid.iter().collect();
    let ctx = Context::prepare(cfg, &entries, &mut work)?;

    let mut manifest = Manifest::new("experiment", cfg)?;
    manifest.hashes.insert("train".into(), ctx.train.content_hash());
    manifest.hashes.insert("test".into(), ctx.test.content_hash());
    manifest.hashes.insert("synthetic".into(), ctx.synthetic.content_hash());
    manifest.files = vec!["records.json".into(), "index.jsonl".into()];
    manifest.save(cfg.output_dir.join("manifest.json"))?;

    let mut hashes = Vec::with_capacity(entries.len());
    let mut results: Vec<IndexMap<u64, SeedResult>> = vec![IndexMap::new(); entries.len()];
    let mut pending = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        let hash = cell_hash(cfg, &ctx, entry)?;
        let dir = cell_dir(cfg, entry, &hash);
        for &seed in &cfg.seeds {
            let path = dir.join(format!("seed{seed}.json"));
            match read_json::<SeedResult>(&path) {
                Ok(r) if r.seed == seed => {
                    results[i].insert(seed, r);
                    work.cells_reused += 1;
                }
                _ => pending.push((i, seed, path)),
            }
        }
        hashes.push(hash);
    }

    let index_path = cfg.output_dir.join("index.jsonl");
    let mut index = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&index_path)
        .at(&index_path)?;
    let mut failures = Vec::new();
    let queue = Mutex::new(pending.into_iter());
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..cfg.workers {
            let (tx, queue, ctx, entries) = (tx.clone(), &queue, &ctx, &entries);
            scope.spawn(move || loop {
                let next = queue.lock().expect("queue lock").next();
                let Some((i, seed, path)) = next else { break };
                let out = run_cell(cfg, ctx, entries[i], seed);
                if tx.send((i, seed, path, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // the only writer of cell files and the index
        for (i, seed, path, out) in rx {
            let run_id = entries[i].run_id();
            match out {
                Ok(r) => {
                    if let Some(dir) = path.parent() {
                        std::fs::create_dir_all(dir).at(dir)?;
                    }
                    write_json(&path, &r)?;
                    let line = IndexLine {
                        run_id: &run_id,
                        seed,
                        accuracy: r.accuracy,
                        file: path
                            .strip_prefix(&cfg.output_dir)
                            .unwrap_or(&path)
                            .display()
                            .to_string(),
                    };
                    writeln!(index, "{}", serde_json::to_string(&line)?).at(&index_path)?;
                    work.cells_trained += 1;
                    results[i].insert(seed, r);
                }
                Err(e) => failures.push(CellFailure {
                    run_id,
                    seed,
                    error: e.to_string(),
                }),
            }
        }
        Ok(())
    })?;

    let method = cfg.distill.method();
    let distill_model = cfg.distill.model_label();
    let mut records = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        if results[i].len() != cfg.seeds.len() {
            continue;
        }
        let ordered: Vec<SeedResult> = cfg.seeds.iter().map(|s| results[i][s].clone()).collect();
        records.push(MetricsRecord::from_results(
            entry,
            hashes[i].clone(),
            method.clone(),
            distill_model.clone(),
            &ordered,
        )?);
    }
    emit_report(&records, ReportFormat::Json, &cfg.output_dir)?;
    let failures_path = cfg.output_dir.join("failures.json");
    if failures.is_empty() {
        if failures_path.exists() {
            std::fs::remove_file(&failures_path).at(&failures_path)?;
        }
    } else {
        write_json(&failures_path, &failures)?;
    }
    Ok(RunSummary {
        records,
        work,
        failures,
    })
}
