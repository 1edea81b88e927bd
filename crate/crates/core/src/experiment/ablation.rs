//! Ablation grids over one evaluation architecture. Every grid starts with
//! the plain baseline so each row can be read as a change against it.

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, FeatureSource, GridEntry, MetricsRecord};
use crate::elf::{Distance, ElfConfig};
use crate::error::{config_err, Error, Result};
use crate::models::ModelConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    /// Which of the task, front and rear terms are in the objective.
    LossTerms,
    /// λ_front × λ_rear over {0.5, 1, 2}.
    Lambda,
    /// Front distance: MAE, MSE, cosine, cross-entropy.
    Distance,
    /// Extractor checkpoint epochs.
    FeatureEpoch(Vec<usize>),
    /// Configured extractor against the evaluation architecture itself.
    FeatureSource,
}

impl std::str::FromStr for AblationKind {
    type Err = Error;

    /// `loss-terms`, `lambda`, `distance`, `feature-source`, or
    /// `feature-epoch` with an optional `:e1,e2,...` list.
    fn from_str(s: &str) -> Result<Self> {
        let (head, tail) = s.split_once(':').unwrap_or((s, ""));
        match head.replace('_', "-").as_str() {
            "loss-terms" => Ok(Self::LossTerms),
            "lambda" => Ok(Self::Lambda),
            "distance" => Ok(Self::Distance),
            "feature-source" => Ok(Self::FeatureSource),
            "feature-epoch" => {
                let epochs = if tail.is_empty() {
                    vec![0, 10, 30]
                } else {
                    tail.split(',')
                        .map(|e| {
                            e.trim()
                                .parse()
                                .map_err(|_| config_err(format!("bad feature epoch `{e}`")))
                        })
                        .collect::<Result<_>>()?
                };
                Ok(Self::FeatureEpoch(epochs))
            }
            _ => Err(config_err(format!(
                "unknown ablation `{s}` (loss-terms, lambda, distance, feature-epoch[:list], feature-source)"
            ))),
        }
    }
}

/// `(label, task, front, rear)` in table order.
pub const LOSS_TERM_ROWS: [(&str, bool, bool, bool); 5] = [
    ("baseline", true, false, false),
    ("task+rear", true, false, true),
    ("task+front", true, true, false),
    ("front+rear", false, true, true),
    ("elf", true, true, true),
];

const LAMBDAS: [f64; 3] = [0.5, 1.0, 2.0];

/// Named entries for `kind` on `model`; `base` supplies every ELF setting
/// the ablation does not vary.
pub fn ablation_entries(kind: &AblationKind, model: &ModelConfig, base: &ElfConfig) -> Vec<GridEntry> {
    let label = model.label();
    let named = |e: GridEntry, row: &str| e.named(format!("{label}/{row}"));
    let elf = |cfg: ElfConfig, row: &str| named(GridEntry::with_elf(model.clone(), cfg), row);
    let mut out = vec![named(GridEntry::baseline(model.clone()), "baseline")];
    match kind {
        AblationKind::LossTerms => {
            for (row, task, front, rear) in &LOSS_TERM_ROWS[1..] {
                out.push(elf(
                    ElfConfig {
                        use_task: *task,
                        lambda_front: if *front { base.lambda_front } else { 0.0 },
                        lambda_rear: if *rear { base.lambda_rear } else { 0.0 },
                        ..base.clone()
                    },
                    row,
                ));
            }
        }
        AblationKind::Lambda => {
            for f in LAMBDAS {
                for r in LAMBDAS {
                    out.push(elf(
                        ElfConfig {
                            lambda_front: f,
                            lambda_rear: r,
                            ..base.clone()
                        },
                        &format!("front{f}-rear{r}"),
                    ));
                }
            }
        }
        AblationKind::Distance => {
            for d in Distance::ALL {
                out.push(elf(
                    ElfConfig {
                        distance: d,
                        ..base.clone()
                    },
                    d.name(),
                ));
            }
        }
        AblationKind::FeatureEpoch(epochs) => {
            for &e in epochs {
                out.push(elf(
                    ElfConfig {
                        feature_epoch: e,
                        ..base.clone()
                    },
                    &format!("epoch{e}"),
                ));
            }
        }
        AblationKind::FeatureSource => {
            out.push(elf(base.clone(), "extractor"));
            let mut own = elf(base.clone(), "eval-arch");
            own.feature_source = FeatureSource::EvalArch;
            out.push(own);
        }
    }
    out
}

/// `template` with its grid replaced by the ablation of `model`.
pub fn ablation_grid(
    template: &ExperimentConfig,
    kind: &AblationKind,
    model: &ModelConfig,
    base: &ElfConfig,
) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("{}-ablation", template.name),
        grid: ablation_entries(kind, model, base),
        ..template.clone()
    }
}

/// Text table of an ablation run: accuracy in percent and the change
/// against the baseline row.
pub fn ablation_table(records: &[MetricsRecord]) -> String {
    let baseline = records.iter().find(|r| r.variant == "baseline").map(|r| r.mean);
    let width = records.iter().map(|r| r.run_id.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  {:>12}  {:>7}\n", "row", "accuracy", "delta");
    for r in records {
        let delta = baseline
            .map(|b| format!("{:+.2}", 100.0 * (r.mean - b)))
            .unwrap_or_default();
        out.push_str(&format!(
            "{:<width$}  {:>12}  {:>7}\n",
            r.run_id,
            format!("{:.2}±{:.2}", 100.0 * r.mean, 100.0 * r.std),
            delta
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::NormKind;

    fn model() -> ModelConfig {
        ModelConfig::mini_vgg(8, NormKind::Batch, 4, [3, 16, 16])
    }

    #[test]
    fn grids_have_the_documented_rows() {
        let base = ElfConfig::default();
        let terms = ablation_entries(&AblationKind::LossTerms, &model(), &base);
        assert_eq!(terms.len(), 5);
        let no_task = terms[3].elf.as_ref().unwrap();
        assert!(!no_task.use_task && no_task.lambda_front == 1.0 && no_task.lambda_rear == 1.0);
        let rear_only = terms[1].elf.as_ref().unwrap();
        assert!(rear_only.use_task && rear_only.lambda_front == 0.0);
        assert!(terms
            .iter()
            .all(|e| e.elf.as_ref().map_or(true, |c| c.validate().is_ok())));

        assert_eq!(ablation_entries(&AblationKind::Lambda, &model(), &base).len(), 10);
        let dist = ablation_entries(&AblationKind::Distance, &model(), &base);
        let names: Vec<_> = dist.iter().map(|e| e.run_id()).collect();
        assert_eq!(
            names[1..],
            [
                "MiniVGG-BN-w8/mae",
                "MiniVGG-BN-w8/mse",
                "MiniVGG-BN-w8/cos",
                "MiniVGG-BN-w8/ce"
            ]
        );
        let src = ablation_entries(&AblationKind::FeatureSource, &model(), &base);
        assert_eq!(src[2].feature_source, FeatureSource::EvalArch);
    }

    #[test]
    fn parses_names() {
        assert_eq!("loss-terms".parse::<AblationKind>().unwrap(), AblationKind::LossTerms);
        assert_eq!(
            "feature_epoch:0, 5".parse::<AblationKind>().unwrap(),
            AblationKind::FeatureEpoch(vec![0, 5])
        );
        assert!("depth".parse::<AblationKind>().is_err());
        assert!("feature-epoch:x".parse::<AblationKind>().is_err());
    }
}
