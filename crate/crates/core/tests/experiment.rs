use std::path::Path;

use elf::data::ToyShapesConfig;
use elf::distill::DistillConfig;
use elf::elf::{ElfConfig, ExtractorConfig};
use elf::experiment::{
    cross_arch_matrix, read_report_json, run_experiment, DatasetSpec, DistillSpec, ExperimentConfig, GridEntry,
};
use elf::models::{ModelConfig, NormKind};
use elf::train::TrainConfig;
use elf::Error;

const SHAPE: [usize; 3] = [3, 16, 16];

fn config(dir: &Path, workers: usize) -> ExperimentConfig {
    let vgg = ModelConfig::mini_vgg(2, NormKind::Batch, 4, SHAPE);
    ExperimentConfig {
        name: "tiny".into(),
        dataset: DatasetSpec::Toy(ToyShapesConfig {
            samples_per_class: 12,
            test_samples_per_class: 10,
            ..Default::default()
        }),
        distill: DistillSpec::Run(DistillConfig::dm(
            ModelConfig::convnet(8, 3, NormKind::Instance, 4, SHAPE),
            2,
            3,
            0,
        )),
        extractor: Some(ExtractorConfig {
            model: ModelConfig::convnet(16, 3, NormKind::Instance, 4, SHAPE),
            train: TrainConfig {
                batch_size: Some(16),
                ..Default::default()
            },
            checkpoint_epochs: vec![],
            tap_block: None,
            seed: 0,
        }),
        train: TrainConfig {
            epochs: 4,
            batch_size: Some(4),
            ..Default::default()
        },
        grid: vec![
            GridEntry::baseline(vgg.clone()),
            GridEntry::with_elf(
                vgg,
                ElfConfig {
                    feature_epoch: 2,
                    ..Default::default()
                },
            ),
        ],
        seeds: vec![0, 1],
        output_dir: dir.to_path_buf(),
        workers,
    }
}

fn accuracies(cfg: &ExperimentConfig) -> Vec<Vec<f64>> {
    read_report_json(cfg.output_dir.join("records.json"))
        .unwrap()
        .into_iter()
        .map(|r| r.accuracies)
        .collect()
}

#[test]
fn rerun_reuses_every_cell_and_resume_trains_only_the_missing_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1);
    let first = run_experiment(&cfg).unwrap();
    assert!(first.is_complete());
    assert_eq!(first.records.len(), 2);
    assert_eq!(
        (
            first.work.distillations,
            first.work.extractor_trainings,
            first.work.cells_trained
        ),
        (1, 1, 4)
    );
    for r in &first.records {
        assert!(r.is_consistent(1e-12));
        assert!(r.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
    }
    assert!(first.records[1].final_losses.front.is_some());
    assert!(dir.path().join("distill/synthetic.png").exists());
    assert_eq!(
        std::fs::read_to_string(dir.path().join("index.jsonl"))
            .unwrap()
            .lines()
            .count(),
        4
    );

    let again = run_experiment(&cfg).unwrap();
    assert_eq!(again.work.training_runs(), 0);
    assert_eq!(again.work.cells_reused, 4);
    assert_eq!(again.records, first.records);

    let cell = walk(&dir.path().join("cells"))
        .into_iter()
        .find(|p| p.ends_with("seed1.json"))
        .unwrap();
    std::fs::remove_file(&cell).unwrap();
    let resumed = run_experiment(&cfg).unwrap();
    assert_eq!(resumed.work.cells_trained, 1);
    assert_eq!(resumed.work.training_runs(), 1);
    assert_eq!(
        accuracies(&cfg),
        first.records.iter().map(|r| r.accuracies.clone()).collect::<Vec<_>>()
    );
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn worker_count_does_not_change_results() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let one = run_experiment(&config(a.path(), 1)).unwrap();
    let two = run_experiment(&config(b.path(), 2)).unwrap();
    for (x, y) in one.records.iter().zip(&two.records) {
        assert_eq!(x.accuracies, y.accuracies);
        assert_eq!(x.traces, y.traces);
        assert_eq!(x.config_hash, y.config_hash);
    }
}

#[test]
fn a_failing_cell_leaves_the_rest_of_the_grid_intact() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 1);
    cfg.grid[1].train = Some(TrainConfig {
        lr: 1e30,
        ..cfg.train.clone()
    });
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.failures.len(), 2, "{:?}", out.failures);
    assert!(out.failures.iter().all(|f| f.error.contains("non-finite")));
    assert_eq!(out.records.len(), 1);
    assert!(dir.path().join("failures.json").exists());
    match cross_arch_matrix(&out.records) {
        Err(Error::IncompleteGrid { missing }) => assert_eq!(missing, vec!["MiniVGG-BN-w2/elf".to_string()]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn invalid_configs_are_rejected_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 1);
    cfg.extractor = None;
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    let mut cfg = config(dir.path(), 1);
    cfg.grid[0].model.num_classes = 10;
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    assert!(!dir.path().join("distill").exists());
}
