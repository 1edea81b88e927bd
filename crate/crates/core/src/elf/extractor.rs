use std::path::{Path, PathBuf};

use elf_tensor::{Element, PrngState};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{config_err, shape_err, Error, Result};
use crate::models::{build_model, save_model, ModelConfig, ModelState};
use crate::provenance::{write_json, Manifest};
use crate::train::{evaluate_accuracy, train_classifier, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub model: ModelConfig,
    /// Optimizer settings; the number of epochs is the largest checkpoint epoch.
    pub train: TrainConfig,
    #[serde(default)]
    pub checkpoint_epochs: Vec<usize>,
    /// Block whose output provides the features; `None` means the last
    /// block before the head.
    #[serde(default)]
    pub tap_block: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ExtractorCheckpoint<T: Element = f32> {
    pub epoch: usize,
    pub model: ModelState<T>,
    /// Accuracy on the training data at this epoch.
    pub train_accuracy: f64,
    pub path: Option<PathBuf>,
}

#[derive(Serialize)]
struct CheckpointSummary {
    epoch: usize,
    train_accuracy: f64,
    file: Option<String>,
}

/// Trains the extractor on the real data and keeps a copy at every epoch in
/// `checkpoint_epochs` (epoch 0 is the initialization). With
/// `target_channels`, a feature map with a different channel count is
/// rejected before any training. Checkpoints are written to `out_dir` as
/// `extractor_e{epoch}.elft` with a manifest when it is given.
pub fn train_feature_extractor<T: Element>(
    config: &ExtractorConfig,
    real: &LabeledDataset<T>,
    target_channels: Option<usize>,
    out_dir: Option<&Path>,
) -> Result<Vec<ExtractorCheckpoint<T>>> {
    if config.checkpoint_epochs.is_empty() {
        return Err(config_err("no checkpoint epochs requested"));
    }
    let root = PrngState::new(config.seed);
    let mut model: ModelState<T> = build_model(&config.model, root.split(0))?;
    let tap = config.tap_block.unwrap_or(model.num_blocks() - 1);
    if tap == 0 || tap >= model.num_blocks() {
        return Err(config_err(format!("extractor tap block {tap} out of range")));
    }
    let feat = model.block_output_shape(tap);
    if let Some(c) = target_channels {
        if feat[0] != c {
            return Err(shape_err(format!(
                "extractor {} yields {}-channel features {feat:?}, the evaluation split expects {c} channels",
                config.model.label(),
                feat[0]
            )));
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let mut wanted = config.checkpoint_epochs.clone();
    wanted.sort_unstable();
    wanted.dedup();
    let epochs = *wanted.last().expect("nonempty");
    let train = TrainConfig {
        epochs,
        ..config.train.clone()
    };

    let mut out = Vec::with_capacity(wanted.len());
    let mut keep = |epoch: usize, m: &ModelState<T>| -> Result<()> {
        if !wanted.contains(&epoch) {
            return Ok(());
        }
        let path = match out_dir {
            Some(dir) => {
                let p = dir.join(format!("extractor_e{epoch}.elft"));
                let mut meta = serde_json::Map::new();
                meta.insert("epoch".into(), epoch.into());
                meta.insert("tap_block".into(), tap.into());
                save_model(m, &p, meta)?;
                Some(p)
            }
            None => None,
        };
        out.push(ExtractorCheckpoint {
            epoch,
            model: m.clone(),
            train_accuracy: evaluate_accuracy(m, real)?,
            path,
        });
        Ok(())
    };
    keep(0, &model)?;
    train_classifier(&mut model, real, &train, root.split(1), &mut keep)?;

    if let Some(dir) = out_dir {
        let summary: Vec<CheckpointSummary> = out
            .iter()
            .map(|c| CheckpointSummary {
                epoch: c.epoch,
                train_accuracy: c.train_accuracy,
                file: c
                    .path
                    .as_ref()
                    .and_then(|p| p.file_name())
                    .map(|f| f.to_string_lossy().into_owned()),
            })
            .collect();
        write_json(dir.join("checkpoints.json"), &summary)?;
        let mut manifest = Manifest::new("extractor", config)?;
        manifest.hashes.insert("real".into(), real.content_hash());
        manifest.files = summary.iter().filter_map(|s| s.file.clone()).collect();
        manifest.files.push("checkpoints.json".into());
        manifest.save(dir.join("manifest.json"))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_toy_shapes, ToyShapesConfig};
    use crate::models::NormKind;

    fn config(epochs: Vec<usize>) -> ExtractorConfig {
        ExtractorConfig {
            model: ModelConfig::convnet(8, 3, NormKind::Instance, 4, [3, 16, 16]),
            train: TrainConfig {
                batch_size: Some(16),
                ..TrainConfig::default()
            },
            checkpoint_epochs: epochs,
            tap_block: None,
            seed: 3,
        }
    }

    #[test]
    fn checkpoints_at_requested_epochs() {
        let toy = ToyShapesConfig {
            samples_per_class: 8,
            ..Default::default()
        };
        let real = generate_toy_shapes::<f32>(&toy, 0).unwrap();
        let init = train_feature_extractor(&config(vec![0]), &real, None, None).unwrap();
        assert_eq!(init.len(), 1);
        let fresh: ModelState = build_model(&config(vec![0]).model, PrngState::new(3).split(0)).unwrap();
        for (a, b) in init[0].model.params().values().zip(fresh.params().values()) {
            assert!(a.bit_eq(b));
        }

        let dir = std::env::temp_dir().join(format!("elf-extractor-{}", std::process::id()));
        let cks = train_feature_extractor(&config(vec![2, 1]), &real, Some(8), Some(&dir)).unwrap();
        assert_eq!(cks.iter().map(|c| c.epoch).collect::<Vec<_>>(), vec![1, 2]);
        let (loaded, side) = crate::models::load_model::<f32>(cks[1].path.as_ref().unwrap()).unwrap();
        assert_eq!(side.meta["epoch"], 2);
        assert!(loaded.params()["fc.bias"].bit_eq(&cks[1].model.params()["fc.bias"]));
        std::fs::remove_dir_all(&dir).unwrap();

        let err = train_feature_extractor(&config(vec![1]), &real, Some(16), None).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }
}
