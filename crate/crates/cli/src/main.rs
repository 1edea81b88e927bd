//! `elf` command-line driver. Every subcommand reads an experiment TOML
//! file; the ELF flags override the matching field of every ELF grid entry.
//!
//! Exit codes: 0 success, 1 runtime error, 2 configuration error,
//! 3 grid finished with failed or missing cells.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use elf::elf::{Distance, SpatialAdapt};
use elf::experiment::{
    ablation_grid, ablation_table, cross_arch_matrix, cross_arch_text, emit_report, gold_comparison_text, load_dataset,
    mean_std, prepare_synthetic, read_report_json, run_cell, run_experiment, AblationKind, Context, DistillSpec,
    ExperimentConfig, GridEntry, ReportFormat, RunSummary, WorkCounter,
};
use elf::Error;

#[derive(Parser)]
#[command(
    name = "elf",
    version,
    about = "Distill synthetic sets and evaluate them across architectures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distill (or reuse) the synthetic set of an experiment.
    Distill(Common),
    /// Train the feature extractors and cache features of the synthetic set.
    Extract(Common),
    /// Train and test one grid entry under every seed, without writing records.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Run id or zero-based index of the entry; the first entry by default.
        #[arg(long)]
        entry: Option<String>,
    },
    /// Run the whole grid and print the cross-architecture table.
    Grid(Common),
    /// Replace the grid by an ablation over one evaluation architecture.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// loss-terms, lambda, distance, feature-epoch[:e1,e2,...] or feature-source.
        #[arg(long)]
        kind: String,
        /// Entry whose model and ELF settings anchor the ablation; the first
        /// ELF entry by default.
        #[arg(long)]
        entry: Option<String>,
    },
    /// Re-emit the records of a finished run.
    Report {
        /// Output directory of the run.
        dir: PathBuf,
        #[arg(long, default_value = "json")]
        format: String,
        /// Where to write; the run directory by default.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print published reference numbers, as DATASET/METHOD (e.g. CIFAR-10/MTT).
        #[arg(long)]
        gold: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    Mae,
    Mse,
    Cos,
    Ce,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdaptArg {
    Off,
    AvgPool,
}

#[derive(Args)]
struct Common {
    /// Experiment TOML file.
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the configured output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    lambda_front: Option<f64>,
    #[arg(long)]
    lambda_rear: Option<f64>,
    #[arg(long, value_enum)]
    distance: Option<DistanceArg>,
    #[arg(long)]
    feature_epoch: Option<usize>,
    /// Split layer name, e.g. conv5_2 or layer5.
    #[arg(long)]
    split: Option<String>,
    #[arg(long, value_enum)]
    spatial_adapt: Option<AdaptArg>,
}

impl Common {
    fn load(&self) -> elf::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_toml_path(&self.config)?;
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        for elf in cfg.grid.iter_mut().filter_map(|e| e.elf.as_mut()) {
            if let Some(v) = self.lambda_front {
                elf.lambda_front = v;
            }
            if let Some(v) = self.lambda_rear {
                elf.lambda_rear = v;
            }
            if let Some(d) = self.distance {
                elf.distance = match d {
                    DistanceArg::Mae => Distance::Mae,
                    DistanceArg::Mse => Distance::Mse,
                    DistanceArg::Cos => Distance::Cos,
                    DistanceArg::Ce => Distance::Ce,
                };
            }
            if let Some(e) = self.feature_epoch {
                elf.feature_epoch = e;
            }
            if let Some(s) = &self.split {
                elf.split = Some(s.clone());
            }
            if let Some(a) = self.spatial_adapt {
                elf.spatial_adapt = match a {
                    AdaptArg::Off => SpatialAdapt::Off,
                    AdaptArg::AvgPool => SpatialAdapt::AvgPoolToMatch,
                };
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Failure {
    Error(Error),
    Incomplete(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn pick<'a>(cfg: &'a ExperimentConfig, key: Option<&str>, elf_only: bool) -> elf::Result<&'a GridEntry> {
    let found = match key {
        Some(k) => k
            .parse::<usize>()
            .ok()
            .and_then(|i| cfg.grid.get(i))
            .or_else(|| cfg.grid.iter().find(|e| e.run_id() == k)),
        None => cfg.grid.iter().find(|e| !elf_only || e.elf.is_some()),
    };
    found.ok_or_else(|| {
        Error::Config(format!(
            "no matching grid entry for `{}`",
            key.unwrap_or("<first ELF entry>")
        ))
    })
}

fn print_work(work: &WorkCounter) {
    eprintln!(
        "work: {} distillation(s), {} extractor run(s), {} cache(s), {} cell(s) trained, {} reused",
        work.distillations, work.extractor_trainings, work.cache_extractions, work.cells_trained, work.cells_reused
    );
}

fn finish(summary: &RunSummary) -> Result<(), Failure> {
    print_work(&summary.work);
    if summary.is_complete() {
        return Ok(());
    }
    for f in &summary.failures {
        eprintln!("failed: {} seed {}: {}", f.run_id, f.seed, f.error);
    }
    Err(Failure::Incomplete(format!(
        "{} cell(s) failed",
        summary.failures.len()
    )))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Distill(common) => {
            let cfg = common.load()?;
            let mut work = WorkCounter::default();
            let (train, _) = load_dataset(&cfg.dataset)?;
            let s = prepare_synthetic(&cfg, &train, &mut work)?;
            println!("synthetic set: {} images, hash {}", s.len(), s.content_hash());
            print_work(&work);
        }
        Command::Extract(common) => {
            let cfg = common.load()?;
            let mut work = WorkCounter::default();
            let entries: Vec<&GridEntry> = cfg.grid.iter().collect();
            Context::prepare(&cfg, &entries, &mut work)?;
            println!("feature caches under {}", cfg.output_dir.join("caches").display());
            print_work(&work);
        }
        Command::Eval { common, entry } => {
            let cfg = common.load()?;
            let entry = pick(&cfg, entry.as_deref(), false)?;
            let mut work = WorkCounter::default();
            let ctx = Context::prepare(&cfg, &[entry], &mut work)?;
            let mut accs = Vec::new();
            for &seed in &cfg.seeds {
                let r = run_cell(&cfg, &ctx, entry, seed)?;
                println!("{} seed {seed}: {:.2}%", entry.run_id(), 100.0 * r.accuracy);
                accs.push(r.accuracy);
            }
            let (m, s) = mean_std(&accs);
            println!("{}: {:.2}±{:.2}%", entry.run_id(), 100.0 * m, 100.0 * s);
        }
        Command::Grid(common) => {
            let cfg = common.load()?;
            let summary = run_experiment(&cfg)?;
            match cross_arch_matrix(&summary.records) {
                Ok(rows) => print!("{}", cross_arch_text(&rows)),
                Err(e) => eprintln!("{e}"),
            }
            finish(&summary)?;
        }
        Command::Ablate { common, kind, entry } => {
            let cfg = common.load()?;
            let kind: AblationKind = kind.parse()?;
            let anchor = pick(&cfg, entry.as_deref(), true)?;
            let base = anchor.elf.clone().unwrap_or_default();
            let mut ablation = ablation_grid(&cfg, &kind, &anchor.model, &base);
            // own directory so the grid's records survive; S is shared when it exists
            let name = format!("{kind:?}").to_lowercase();
            let name: String = name.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
            ablation.output_dir = cfg.output_dir.join(format!("ablation-{name}"));
            let parent_s = cfg.output_dir.join("distill").join("synthetic.elft");
            if parent_s.exists() {
                ablation.distill = DistillSpec::Load {
                    path: parent_s,
                    method: cfg.distill.method(),
                    model: Some(cfg.distill.model_label()),
                };
            }
            let summary = run_experiment(&ablation)?;
            print!("{}", ablation_table(&summary.records));
            finish(&summary)?;
        }
        Command::Report { dir, format, out, gold } => {
            let format: ReportFormat = format.parse()?;
            let records = read_report_json(dir.join("records.json"))?;
            for p in emit_report(&records, format, out.as_ref().unwrap_or(&dir))? {
                eprintln!("wrote {}", p.display());
            }
            let rows = cross_arch_matrix(&records).map_err(|e| Failure::Incomplete(e.to_string()))?;
            match gold.as_deref().map(|g| g.split_once('/')) {
                Some(Some((dataset, method))) => print!("{}", gold_comparison_text(&rows, dataset, method)),
                Some(None) => return Err(Error::Config("--gold expects DATASET/METHOD".into()).into()),
                None => print!("{}", cross_arch_text(&rows)),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Incomplete(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Shape(_) | Error::SplitInsideBlock { .. } | Error::CacheMismatch { .. } => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}
