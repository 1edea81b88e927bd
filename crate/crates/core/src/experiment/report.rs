//! Report emitters and the cross-architecture summary table.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::gold::gold_cross_arch;
use super::MetricsRecord;
use crate::error::{config_err, Error, IoContext, Result};
use crate::provenance::{tool_version, write_json};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 18] = [
    "run_id",
    "method",
    "distill_model",
    "eval_model",
    "variant",
    "distance",
    "lambda_front",
    "lambda_rear",
    "feature_epoch",
    "seeds",
    "mean",
    "std",
    "wall_time_s",
    "final_total",
    "final_task",
    "final_front",
    "final_rear",
    "config_hash",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// `metrics.csv`, one row per record.
    Csv,
    /// `records.json` with a schema version.
    Json,
    /// `plot/<run>.tsv` loss curves, one line per step and seed.
    Plotdata,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "plotdata" | "plot" => Ok(Self::Plotdata),
            _ => Err(config_err(format!("unknown report format `{s}` (csv, json, plotdata)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub version: String,
    pub records: Vec<MetricsRecord>,
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `records` to `dir` in `format` and returns the written paths.
pub fn emit_report(records: &[MetricsRecord], format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).at(dir)?;
    match format {
        ReportFormat::Json => {
            let path = dir.join("records.json");
            write_json(
                &path,
                &ReportFile {
                    schema_version: REPORT_SCHEMA_VERSION,
                    version: tool_version(),
                    records: records.to_vec(),
                },
            )?;
            Ok(vec![path])
        }
        ReportFormat::Csv => {
            let path = dir.join("metrics.csv");
            let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
            let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
            w.write_record(CSV_HEADER).map_err(csv_err)?;
            for r in records {
                let elf = r.entry.elf.as_ref();
                let f = &r.final_losses;
                w.write_record([
                    r.run_id.clone(),
                    r.method.clone(),
                    r.distill_model.clone(),
                    r.eval_model.clone(),
                    r.variant.clone(),
                    elf.map(|e| e.distance.name().to_string()).unwrap_or_default(),
                    elf.map(|e| e.lambda_front.to_string()).unwrap_or_default(),
                    elf.map(|e| e.lambda_rear.to_string()).unwrap_or_default(),
                    elf.map(|e| e.feature_epoch.to_string()).unwrap_or_default(),
                    r.seeds.len().to_string(),
                    r.mean.to_string(),
                    r.std.to_string(),
                    r.wall_time_s.to_string(),
                    opt(f.total),
                    opt(f.task),
                    opt(f.front),
                    opt(f.rear),
                    r.config_hash.clone(),
                ])
                .map_err(csv_err)?;
            }
            w.flush().at(&path)?;
            Ok(vec![path])
        }
        ReportFormat::Plotdata => {
            let plot = dir.join("plot");
            std::fs::create_dir_all(&plot).at(&plot)?;
            let mut paths = Vec::new();
            for r in records {
                let path = plot.join(format!("{}.tsv", slug(&r.run_id)));
                let mut text = String::from("seed\tstep\tepoch\ttotal\ttask\tfront\trear\n");
                for (seed, t) in r.seeds.iter().zip(&r.traces) {
                    let cell = |v: &Vec<f64>, i: usize| v.get(i).map(|x| x.to_string()).unwrap_or_default();
                    for (i, epoch) in t.epoch.iter().enumerate() {
                        text.push_str(&format!(
                            "{seed}\t{i}\t{epoch}\t{}\t{}\t{}\t{}\n",
                            cell(&t.total, i),
                            cell(&t.task, i),
                            cell(&t.front, i),
                            cell(&t.rear, i)
                        ));
                    }
                }
                std::fs::write(&path, text).at(&path)?;
                paths.push(path);
            }
            Ok(paths)
        }
    }
}

/// Reads a `records.json` written by [`emit_report`].
pub fn read_report_json(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let file: ReportFile = serde_json::from_slice(&std::fs::read(path).at(path)?)?;
    if file.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "{}: report schema {} is not supported (expected {REPORT_SCHEMA_VERSION})",
            path.display(),
            file.schema_version
        )));
    }
    Ok(file.records)
}

/// Baseline and ELF accuracy of one evaluation architecture, as fractions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossArchRow {
    pub eval_model: String,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub elf_mean: f64,
    pub elf_std: f64,
}

impl CrossArchRow {
    pub fn gain(&self) -> f64 {
        self.elf_mean - self.baseline_mean
    }
}

/// One row per evaluation architecture in first-seen order. Every
/// architecture needs a baseline and an ELF record; when several ELF
/// records exist the first is used. Missing cells are listed in the error.
pub fn cross_arch_matrix(records: &[MetricsRecord]) -> Result<Vec<CrossArchRow>> {
    let mut by_model: IndexMap<&str, (Option<&MetricsRecord>, Option<&MetricsRecord>)> = IndexMap::new();
    for r in records {
        let slot = by_model.entry(&r.eval_model).or_default();
        match r.variant.as_str() {
            "baseline" => {
                slot.0.get_or_insert(r);
            }
            _ => {
                slot.1.get_or_insert(r);
            }
        }
    }
    if by_model.is_empty() {
        return Err(Error::IncompleteGrid {
            missing: vec!["no records at all".into()],
        });
    }
    let mut missing = Vec::new();
    let mut rows = Vec::new();
    for (model, (base, elf)) in &by_model {
        match (base, elf) {
            (Some(b), Some(e)) => rows.push(CrossArchRow {
                eval_model: model.to_string(),
                baseline_mean: b.mean,
                baseline_std: b.std,
                elf_mean: e.mean,
                elf_std: e.std,
            }),
            _ => {
                if base.is_none() {
                    missing.push(format!("{model}/baseline"));
                }
                if elf.is_none() {
                    missing.push(format!("{model}/elf"));
                }
            }
        }
    }
    if missing.is_empty() {
        Ok(rows)
    } else {
        Err(Error::IncompleteGrid { missing })
    }
}

pub fn cross_arch_csv(rows: &[CrossArchRow]) -> String {
    let mut out = String::from("eval_model,baseline_mean,baseline_std,elf_mean,elf_std,gain\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.eval_model,
            r.baseline_mean,
            r.baseline_std,
            r.elf_mean,
            r.elf_std,
            r.gain()
        ));
    }
    out
}

fn pct(mean: f64, std: f64) -> String {
    format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * std)
}

/// Aligned text table with accuracies in percent.
pub fn cross_arch_text(rows: &[CrossArchRow]) -> String {
    let width = rows.iter().map(|r| r.eval_model.len()).max().unwrap_or(0).max(10);
    let mut out = format!(
        "{:<width$}  {:>12}  {:>12}  {:>7}\n",
        "eval model", "baseline", "ELF", "gain"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>12}  {:>12}  {:>+7.2}\n",
            r.eval_model,
            pct(r.baseline_mean, r.baseline_std),
            pct(r.elf_mean, r.elf_std),
            100.0 * r.gain()
        ));
    }
    out
}

/// Desk rows next to the published rows of `dataset` and `method`. The
/// desk rows are labeled as not comparable: different data, resolution
/// and network sizes.
pub fn gold_comparison_text(desk: &[CrossArchRow], dataset: &str, method: &str) -> String {
    let mut out = String::from("desk scale (NOT COMPARABLE with the published numbers)\n");
    out.push_str(&cross_arch_text(desk));
    let gold: Vec<_> = gold_cross_arch()
        .into_iter()
        .filter(|g| g.dataset == dataset && g.method == method)
        .collect();
    if gold.is_empty() {
        out.push_str(&format!("\nno published reference for {dataset} / {method}\n"));
        return out;
    }
    out.push_str(&format!("\npublished reference, {dataset}, {method}, 10 IPC\n"));
    let fmt = |c: super::GoldCell| format!("{:.2}±{:.2}", c.mean, c.std);
    out.push_str(&format!(
        "{:<12}  {:>12}  {:>12}  {:>7}\n",
        "eval model", "baseline", "ELF", "gain"
    ));
    for g in gold {
        out.push_str(&format!(
            "{:<12}  {:>12}  {:>12}  {:>+7.2}\n",
            g.eval_model,
            fmt(g.baseline),
            fmt(g.elf),
            g.gain()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elf::{ElfConfig, ElfTraces};
    use crate::experiment::{GridEntry, SeedResult};
    use crate::models::{ModelConfig, NormKind};

    fn record(model: ModelConfig, elf: bool, accs: &[f64]) -> MetricsRecord {
        let entry = if elf {
            GridEntry::with_elf(model, ElfConfig::default())
        } else {
            GridEntry::baseline(model)
        };
        let results: Vec<SeedResult> = accs
            .iter()
            .enumerate()
            .map(|(i, &a)| SeedResult {
                seed: i as u64,
                accuracy: a,
                wall_ms: 5,
                traces: ElfTraces {
                    epoch: vec![0, 1],
                    total: vec![3.0, 2.0],
                    task: vec![1.0, 0.5],
                    front: vec![1.5, 1.0],
                    rear: vec![0.5, 0.5],
                },
            })
            .collect();
        MetricsRecord::from_results(&entry, "abc".into(), "DM".into(), "ConvNet-IN-w8-d3".into(), &results).unwrap()
    }

    fn vgg() -> ModelConfig {
        ModelConfig::mini_vgg(8, NormKind::Batch, 4, [3, 16, 16])
    }

    fn resnet() -> ModelConfig {
        ModelConfig::mini_resnet(8, NormKind::Batch, 4, [3, 16, 16])
    }

    #[test]
    fn matrix_and_missing_cells() {
        let full = vec![
            record(vgg(), false, &[0.4, 0.5]),
            record(vgg(), true, &[0.5, 0.6]),
            record(resnet(), false, &[0.3]),
            record(resnet(), true, &[0.35]),
        ];
        let rows = cross_arch_matrix(&full).unwrap();
        assert_eq!(rows.len(), 2);
        assert!((rows[0].gain() - 0.1).abs() < 1e-12);
        let text = cross_arch_text(&rows);
        assert!(text.contains("45.00±5.00") && text.contains("+10.00"), "{text}");
        assert_eq!(cross_arch_csv(&rows).lines().count(), 3);

        let err = cross_arch_matrix(&full[..3]).unwrap_err();
        match err {
            Error::IncompleteGrid { missing } => assert_eq!(missing, vec!["MiniResNet-BN-w8/elf".to_string()]),
            e => panic!("{e}"),
        }
        assert!(cross_arch_matrix(&[]).is_err());
        let gold = gold_comparison_text(&rows, "CIFAR-10", "MTT");
        assert!(gold.contains("NOT COMPARABLE") && gold.contains("61.23±0.69"), "{gold}");
    }

    #[test]
    fn emitters_write_every_format() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![record(vgg(), false, &[0.4, 0.5]), record(vgg(), true, &[0.5, 0.6])];
        let json = emit_report(&records, ReportFormat::Json, dir.path()).unwrap();
        assert_eq!(read_report_json(&json[0]).unwrap(), records);

        let csv = emit_report(&records, ReportFormat::Csv, dir.path()).unwrap();
        let mut reader = csv::Reader::from_path(&csv[0]).unwrap();
        assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER);
        let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(&rows[1][5], "ce");
        assert_eq!(rows[1][10].parse::<f64>().unwrap(), records[1].mean);

        let plots = emit_report(&records, ReportFormat::Plotdata, dir.path()).unwrap();
        let text = std::fs::read_to_string(&plots[1]).unwrap();
        // header plus two steps for each of two seeds
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(1).unwrap().starts_with("0\t0\t0\t3\t1\t1.5\t0.5"));

        assert!("xml".parse::<ReportFormat>().is_err());
        let mut file: serde_json::Value = serde_json::from_slice(&std::fs::read(&json[0]).unwrap()).unwrap();
        file["schema_version"] = 9.into();
        std::fs::write(&json[0], file.to_string()).unwrap();
        assert!(read_report_json(&json[0]).is_err());
    }
}
