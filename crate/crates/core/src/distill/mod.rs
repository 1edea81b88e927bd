//! Synthesizing `S` from a real dataset: distribution matching (mean
//! embeddings of random networks) and single-step gradient matching.

mod dm;
mod gm;

use std::path::Path;

use elf_tensor::ops::{cosine_distance, flatten, mean_axes, square, sub, sum_all};
use elf_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

pub use dm::distill_dm;
pub use gm::{distill_gm, grad_match_loss};

use crate::data::{save_png_grid, AugConfig, AugParams, InitMode, LabeledDataset, PngGridLayout, SyntheticDataset};
use crate::error::{config_err, shape_err, Error, Result};
use crate::models::{ModelConfig, ModelState};
use crate::provenance::{write_json, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(alias = "DM")]
    Dm,
    #[serde(alias = "gm", alias = "GradMatch")]
    GradMatch,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Dm => "DM",
            Method::GradMatch => "GradMatch",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub method: Method,
    /// The distillation architecture.
    pub model: ModelConfig,
    pub ipc: usize,
    #[serde(default = "default_init")]
    pub init: InitMode,
    /// Outer iterations, each ending in one update of the synthetic pixels.
    pub iterations: usize,
    pub lr_images: f64,
    #[serde(default = "default_image_momentum")]
    pub momentum_images: f64,
    /// Real images drawn per class for each matching step.
    #[serde(default = "default_real_batch")]
    pub real_batch: usize,
    /// DM: freshly initialized networks averaged per iteration.
    #[serde(default = "one")]
    pub models_per_iteration: usize,
    /// GradMatch: network updates on `S` after each class sweep.
    #[serde(default = "default_inner_steps")]
    pub inner_steps: usize,
    #[serde(default = "default_inner_lr")]
    pub inner_lr: f64,
    /// GradMatch: iterations between network re-initializations.
    #[serde(default = "default_reinit")]
    pub reinit_every: usize,
    /// Siamese augmentation of both branches; `None` disables it.
    #[serde(default)]
    pub augment: Option<AugConfig>,
    pub seed: u64,
}

fn default_init() -> InitMode {
    InitMode::RealSample
}
fn default_image_momentum() -> f64 {
    0.5
}
fn default_real_batch() -> usize {
    64
}
fn one() -> usize {
    1
}
fn default_inner_steps() -> usize {
    10
}
fn default_inner_lr() -> f64 {
    0.01
}
fn default_reinit() -> usize {
    10
}

impl DistillConfig {
    /// Distribution-matching defaults for `model`.
    pub fn dm(model: ModelConfig, ipc: usize, iterations: usize, seed: u64) -> Self {
        Self {
            method: Method::Dm,
            model,
            ipc,
            init: default_init(),
            iterations,
            lr_images: 1.0,
            momentum_images: default_image_momentum(),
            real_batch: default_real_batch(),
            models_per_iteration: 1,
            inner_steps: default_inner_steps(),
            inner_lr: default_inner_lr(),
            reinit_every: default_reinit(),
            augment: None,
            seed,
        }
    }

    /// Gradient-matching defaults for `model`.
    pub fn grad_match(model: ModelConfig, ipc: usize, iterations: usize, seed: u64) -> Self {
        Self {
            method: Method::GradMatch,
            lr_images: 0.1,
            ..Self::dm(model, ipc, iterations, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.ipc == 0 || self.real_batch == 0 {
            return Err(config_err("ipc and real_batch must be positive"));
        }
        if !(self.lr_images > 0.0) || !(0.0..1.0).contains(&self.momentum_images) {
            return Err(config_err(format!(
                "image optimizer needs lr > 0 and momentum in [0, 1), got {} and {}",
                self.lr_images, self.momentum_images
            )));
        }
        match self.method {
            Method::Dm if self.models_per_iteration == 0 => {
                return Err(config_err("DM needs at least one model per iteration"));
            }
            Method::GradMatch if self.reinit_every == 0 || !(self.inner_lr >= 0.0) => {
                return Err(config_err("GradMatch needs reinit_every > 0 and inner_lr >= 0"));
            }
            _ => {}
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub loss: f64,
    /// Milliseconds since the run started.
    pub wall_ms: f64,
}

/// Augmentation parameters each branch received in one matching step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiameseLogEntry {
    pub iteration: usize,
    pub class: usize,
    pub real: AugParams,
    pub synthetic: AugParams,
}

#[derive(Debug, Clone)]
pub struct DistillOutcome<T: Element = f32> {
    pub synthetic: SyntheticDataset<T>,
    pub trace: Vec<TraceEntry>,
    pub siamese_log: Vec<SiameseLogEntry>,
    pub real_hash: String,
    /// Label hash of `S` before the first and after the last iteration.
    pub labels_hash: (String, String),
}

/// Distills with the configured method.
pub fn distill<T: Element>(real: &LabeledDataset<T>, config: &DistillConfig) -> Result<DistillOutcome<T>> {
    match config.method {
        Method::Dm => distill_dm(real, config),
        Method::GradMatch => distill_gm(real, config),
    }
}

/// Embedding used by distribution matching: the flattened output of the
/// last block before the head.
fn embed<T: Element>(model: &ModelState<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let h = model.forward_range_eval(x, 0..model.num_blocks() - 1)?;
    Ok(flatten(&h)?)
}

/// `Σ_c ‖mean embed(real_c) − mean embed(syn_c)‖²` with Eval-mode
/// embeddings. Entry `c` of each slice holds the batch of class `c`.
pub fn dm_loss<T: Element>(model: &ModelState<T>, real: &[Tensor<T>], synthetic: &[Tensor<T>]) -> Result<Tensor<T>> {
    if real.len() != synthetic.len() {
        return Err(config_err(format!(
            "{} real class batches vs {} synthetic ones",
            real.len(),
            synthetic.len()
        )));
    }
    if real.is_empty() {
        return Err(config_err("distribution matching needs at least one class"));
    }
    let mut total: Option<Tensor<T>> = None;
    for (c, (r, s)) in real.iter().zip(synthetic).enumerate() {
        if r.shape().first() == Some(&0) || s.shape().first() == Some(&0) {
            return Err(config_err(format!("class {c} has an empty batch on one side")));
        }
        let mr = mean_axes(&embed(model, r)?, &[0], false)?;
        let ms = mean_axes(&embed(model, s)?, &[0], false)?;
        let d = sum_all(&square(&sub(&mr, &ms)?));
        total = Some(match total {
            Some(t) => t.add(&d)?,
            None => d,
        });
    }
    Ok(total.expect("at least one class"))
}

/// `Σ_layers (1 − cos(vec a, vec b))` over named gradient tensors; a layer
/// whose gradient is zero on either side contributes exactly 1.
pub fn layerwise_cosine_distance<T: Element>(
    a: &[(String, Tensor<T>)],
    b: &[(String, Tensor<T>)],
) -> Result<Tensor<T>> {
    if a.len() != b.len() {
        return Err(config_err(format!("{} gradient layers vs {}", a.len(), b.len())));
    }
    let mut total: Option<Tensor<T>> = None;
    for (name, ga) in a {
        let gb = b
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| g)
            .ok_or_else(|| config_err(format!("gradient layer `{name}` missing on one side")))?;
        if ga.shape() != gb.shape() {
            return Err(shape_err(format!(
                "gradient `{name}`: {:?} vs {:?}",
                ga.shape(),
                gb.shape()
            )));
        }
        let d = cosine_distance(ga, gb)?;
        total = Some(match total {
            Some(t) => t.add(&d)?,
            None => d,
        });
    }
    total.ok_or_else(|| config_err("no gradient layers to compare"))
}

/// Clamps `S` to `[0, 1]` in place (still a leaf).
fn clamp_images<T: Element>(s: &mut SyntheticDataset<T>) -> Result<()> {
    let v = s
        .images
        .data()
        .iter()
        .map(|&x| x.max(T::zero()).min(T::one()))
        .collect();
    s.set_images(Tensor::from_vec(s.images.shape(), v)?)
}

fn check_finite<T: Element>(t: &Tensor<T>, stage: &str, iteration: usize) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            stage: stage.to_string(),
            detail: format!("iteration {iteration}"),
        })
    }
}

/// Writes `synthetic.elft`, `synthetic.png`, `trace.json` (plus
/// `siamese_log.json` when augmentation ran) and `manifest.json` to `dir`.
pub fn write_distill_artifacts<T: Element>(
    outcome: &DistillOutcome<T>,
    config: &DistillConfig,
    dir: impl AsRef<Path>,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let s = &outcome.synthetic;
    s.save(dir.join("synthetic.elft"))?;
    save_png_grid(
        &s.images,
        PngGridLayout::per_class(s.class_count, s.ipc),
        dir.join("synthetic.png"),
    )?;
    write_json(dir.join("trace.json"), &outcome.trace)?;
    let mut manifest = Manifest::new("distill", config)?;
    manifest.files = vec!["synthetic.elft".into(), "synthetic.png".into(), "trace.json".into()];
    if !outcome.siamese_log.is_empty() {
        write_json(dir.join("siamese_log.json"), &outcome.siamese_log)?;
        manifest.files.push("siamese_log.json".into());
    }
    manifest.hashes.insert("real".into(), outcome.real_hash.clone());
    manifest.hashes.insert("synthetic".into(), s.content_hash());
    manifest
        .hashes
        .insert("labels_before".into(), outcome.labels_hash.0.clone());
    manifest
        .hashes
        .insert("labels_after".into(), outcome.labels_hash.1.clone());
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, NormKind};
    use elf_tensor::PrngState;

    fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = PrngState::new(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| r.next_uniform()).collect()).unwrap()
    }

    fn small_model() -> ModelState<f64> {
        let cfg = ModelConfig::convnet(4, 2, NormKind::Instance, 2, [3, 8, 8]);
        let mut m: ModelState<f64> = build_model(&cfg, PrngState::new(1)).unwrap();
        m.set_requires_grad(false);
        m
    }

    #[test]
    fn dm_loss_oracle() {
        let m = small_model();
        let real = vec![rand(&[2, 3, 8, 8], 1), rand(&[2, 3, 8, 8], 2)];
        let syn = vec![rand(&[2, 3, 8, 8], 3), rand(&[2, 3, 8, 8], 4)];
        assert_eq!(dm_loss(&m, &real, &real).unwrap().item(), 0.0);

        // recompute means and distances sample by sample
        let mut expect = 0.0;
        for c in 0..2 {
            let mean = |x: &Tensor<f64>| {
                let rows: Vec<Vec<f64>> = (0..2)
                    .map(|i| {
                        let xi = Tensor::from_vec(&[1, 3, 8, 8], x.data()[i * 192..(i + 1) * 192].to_vec()).unwrap();
                        embed(&m, &xi).unwrap().to_vec()
                    })
                    .collect();
                (0..rows[0].len())
                    .map(|j| (rows[0][j] + rows[1][j]) / 2.0)
                    .collect::<Vec<_>>()
            };
            let (a, b) = (mean(&real[c]), mean(&syn[c]));
            expect += a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        }
        let got = dm_loss(&m, &real, &syn).unwrap().item();
        assert!((got - expect).abs() < 1e-5 * expect.max(1.0), "{got} vs {expect}");
        let swapped = dm_loss(&m, &syn, &real).unwrap().item();
        assert!((swapped - got).abs() < 1e-12);
        assert!(dm_loss(&m, &real[..1], &syn).is_err());
    }

    #[test]
    fn dm_loss_single_sample_is_squared_distance() {
        let m = small_model();
        let (r, s) = (rand(&[1, 3, 8, 8], 5), rand(&[1, 3, 8, 8], 6));
        let (fr, fs) = (embed(&m, &r).unwrap().to_vec(), embed(&m, &s).unwrap().to_vec());
        let expect: f64 = fr.iter().zip(&fs).map(|(a, b)| (a - b).powi(2)).sum();
        let got = dm_loss(&m, &[r], &[s]).unwrap().item();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn layerwise_cosine_cases() {
        let g = |seed| {
            vec![
                ("a".to_string(), rand(&[3, 4], seed)),
                ("b".to_string(), rand(&[5], seed + 10)),
                ("c".to_string(), rand(&[2, 2, 2], seed + 20)),
            ]
        };
        let (ga, gb) = (g(1), g(2));
        assert!(layerwise_cosine_distance(&ga, &ga).unwrap().item().abs() < 1e-12);
        let neg: Vec<_> = ga.iter().map(|(n, t)| (n.clone(), t.scale(-1.0))).collect();
        assert!((layerwise_cosine_distance(&ga, &neg).unwrap().item() - 6.0).abs() < 1e-12);

        let mut expect = 0.0;
        for ((_, a), (_, b)) in ga.iter().zip(&gb) {
            let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
            let na = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            expect += 1.0 - dot / (na * nb);
        }
        assert!((layerwise_cosine_distance(&ga, &gb).unwrap().item() - expect).abs() < 1e-6);

        let mut zero = gb.clone();
        zero[1].1 = Tensor::zeros(&[5]);
        let with_zero = layerwise_cosine_distance(&ga, &zero).unwrap().item();
        let others: f64 = [0, 2]
            .iter()
            .map(|&i| layerwise_cosine_distance(&ga[i..=i], &gb[i..=i]).unwrap().item())
            .sum();
        assert!((with_zero - (others + 1.0)).abs() < 1e-12);

        let mut renamed = gb.clone();
        renamed[0].0 = "z".into();
        assert!(layerwise_cosine_distance(&ga, &renamed).is_err());
        assert!(layerwise_cosine_distance(&ga, &gb[..2]).is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = ModelConfig::convnet(8, 2, NormKind::Instance, 4, [3, 16, 16]);
        let ok = DistillConfig::dm(cfg.clone(), 1, 0, 0);
        assert!(ok.validate().is_ok());
        let json = serde_json::to_string(&ok).unwrap();
        assert_eq!(serde_json::from_str::<DistillConfig>(&json).unwrap(), ok);
        assert!(DistillConfig { ipc: 0, ..ok.clone() }.validate().is_err());
        assert!(DistillConfig {
            models_per_iteration: 0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(DistillConfig {
            reinit_every: 0,
            ..DistillConfig::grad_match(cfg, 1, 0, 0)
        }
        .validate()
        .is_err());
    }
}
