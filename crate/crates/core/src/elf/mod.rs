//! Feature-guided evaluation training.
//!
//! An extractor network trained on the real data supplies features of the
//! synthetic images. The evaluation model is cut into a front and a rear
//! section at a block boundary; the front learns to reproduce the features,
//! the rear learns to classify from them, and the whole model keeps its
//! ordinary classification loss:
//!
//! `L = L_task + λ_front · L_front + λ_rear · L_rear`.

mod cache;
mod extractor;
mod trainer;

use elf_tensor::ops::{
    abs, avg_pool2d, cosine_distance, index_select0, mean_all, reshape, soft_cross_entropy, softmax_cross_entropy,
    softmax_detached, square, sub,
};
use elf_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

pub use cache::{extract_features, load_cache, save_cache, CacheMeta, FeatureCache, CACHE_MAGIC, CACHE_VERSION};
pub use extractor::{train_feature_extractor, ExtractorCheckpoint, ExtractorConfig};
pub(crate) use trainer::check_feature_shapes;
pub use trainer::{train_evaluation_model, ElfTraces, EvalOutcome};

use crate::error::{config_err, shape_err, Result};
use crate::models::{FrontSection, Mode, ModelConfig, ModelState, RearSection, SplitPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Mae,
    Mse,
    Cos,
    Ce,
}

impl Distance {
    /// Column order of the distance comparison table.
    pub const ALL: [Distance; 4] = [Distance::Mae, Distance::Mse, Distance::Cos, Distance::Ce];

    pub fn name(self) -> &'static str {
        match self {
            Distance::Mae => "mae",
            Distance::Mse => "mse",
            Distance::Cos => "cos",
            Distance::Ce => "ce",
        }
    }
}

impl std::str::FromStr for Distance {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Distance::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| config_err(format!("unknown distance `{s}` (mae, mse, cos, ce)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialAdapt {
    #[default]
    Off,
    /// Average-pool the larger map down to the smaller one's H×W.
    AvgPoolToMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElfConfig {
    pub lambda_front: f64,
    pub lambda_rear: f64,
    /// Whether the classification loss of the full model is part of the
    /// objective; only the loss-term ablation turns it off.
    pub use_task: bool,
    pub distance: Distance,
    /// Named split of the evaluation model; `None` picks the family default.
    pub split: Option<String>,
    pub spatial_adapt: SpatialAdapt,
    /// Extractor epoch whose features are used.
    pub feature_epoch: usize,
}

impl Default for ElfConfig {
    fn default() -> Self {
        Self {
            lambda_front: 1.0,
            lambda_rear: 1.0,
            use_task: true,
            distance: Distance::Ce,
            split: None,
            spatial_adapt: SpatialAdapt::Off,
            feature_epoch: 30,
        }
    }
}

impl ElfConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, l) in [("lambda_front", self.lambda_front), ("lambda_rear", self.lambda_rear)] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(config_err(format!(
                    "{name} must be a finite non-negative weight, got {l}"
                )));
            }
        }
        if !self.use_task && self.lambda_front == 0.0 && self.lambda_rear == 0.0 {
            return Err(config_err("every loss term is disabled"));
        }
        Ok(())
    }

    pub fn split_point(&self, eval: &ModelConfig) -> Result<SplitPoint> {
        match &self.split {
            Some(name) => SplitPoint::named(eval, name),
            None => SplitPoint::default_for(eval),
        }
    }
}

/// Reshapes `[B, ...]` to `[B, D]`.
fn rows<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let b = *x
        .shape()
        .first()
        .ok_or_else(|| shape_err("feature distance on a rank-0 tensor"))?;
    let d = if b == 0 { 0 } else { x.numel() / b };
    Ok(reshape(x, &[b, d])?)
}

/// Mean over the batch (first axis) of the per-sample distance between
/// flattened student and teacher features. The teacher side is constant.
///
/// * MAE: mean |a − b|; MSE: mean (a − b)²
/// * Cos: 1 − cos(a, b), exactly 1 when either vector is zero
/// * CE: cross-entropy of softmax(student) against softmax(teacher), both
///   over the flattened feature vector at temperature 1
pub fn feature_distance<T: Element>(kind: Distance, student: &Tensor<T>, teacher: &Tensor<T>) -> Result<Tensor<T>> {
    if student.shape() != teacher.shape() {
        return Err(shape_err(format!(
            "student features {:?} vs teacher features {:?}",
            student.shape(),
            teacher.shape()
        )));
    }
    let teacher = teacher.detach();
    Ok(match kind {
        Distance::Mae => mean_all(&abs(&sub(student, &teacher)?)),
        Distance::Mse => mean_all(&square(&sub(student, &teacher)?)),
        Distance::Cos => {
            let (s, t) = (rows(student)?, rows(&teacher)?);
            let b = s.shape()[0];
            let mut total: Option<Tensor<T>> = None;
            for i in 0..b {
                let d = cosine_distance(&index_select0(&s, &[i])?, &index_select0(&t, &[i])?)?;
                total = Some(match total {
                    Some(acc) => acc.add(&d)?,
                    None => d,
                });
            }
            total
                .ok_or_else(|| shape_err("feature distance of an empty batch"))?
                .scale(T::of(1.0 / b as f64))
        }
        Distance::Ce => soft_cross_entropy(&rows(student)?, &softmax_detached(&rows(&teacher)?)?)?,
    })
}

/// Brings student and teacher maps to a common H×W by average-pooling the
/// larger one. Channels must already agree; they are never adapted.
pub fn spatial_adapt<T: Element>(
    mode: SpatialAdapt,
    student: Tensor<T>,
    teacher: Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (s, t) = (student.shape().to_vec(), teacher.shape().to_vec());
    if s.len() != 4 || t.len() != 4 || s[1] != t[1] {
        return Err(shape_err(format!(
            "channel mismatch between student features {s:?} and teacher features {t:?}; channels are never adapted"
        )));
    }
    if s[2..] == t[2..] || mode == SpatialAdapt::Off {
        return Ok((student, teacher));
    }
    let pool_to = |x: Tensor<T>, from: &[usize], to: &[usize]| -> Result<Tensor<T>> {
        let (kh, kw) = (from[2] / to[2].max(1), from[3] / to[3].max(1));
        if kh != kw || kh == 0 || from[2] != kh * to[2] || from[3] != kw * to[3] {
            return Err(shape_err(format!(
                "cannot average-pool {from:?} to the spatial size of {to:?}"
            )));
        }
        Ok(avg_pool2d(&x, kh, kh)?)
    };
    if s[2] >= t[2] && s[3] >= t[3] {
        Ok((pool_to(student, &s, &t)?, teacher))
    } else if t[2] >= s[2] && t[3] >= s[3] {
        Ok((student, pool_to(teacher, &t, &s)?))
    } else {
        Err(shape_err(format!(
            "student {s:?} and teacher {t:?} are not nested in size"
        )))
    }
}

/// Distance between the front section's output on `x` and the cached
/// features of the same images (`ids` index the synthetic set).
pub fn front_loss<T: Element>(
    model: &mut ModelState<T>,
    front: &FrontSection,
    cache: &FeatureCache<T>,
    x: &Tensor<T>,
    ids: &[usize],
    config: &ElfConfig,
) -> Result<Tensor<T>> {
    let student = front.forward(model, x, Mode::Train)?;
    front_distance(&student, cache, ids, config)
}

/// [`front_loss`] from an already computed front output.
pub(crate) fn front_distance<T: Element>(
    student: &Tensor<T>,
    cache: &FeatureCache<T>,
    ids: &[usize],
    config: &ElfConfig,
) -> Result<Tensor<T>> {
    let teacher = cache.batch(ids)?;
    let (s, t) = spatial_adapt(config.spatial_adapt, student.clone(), teacher)?;
    if s.shape() != t.shape() {
        return Err(shape_err(format!(
            "front output {:?} does not match cached features {:?}",
            s.shape(),
            t.shape()
        )));
    }
    feature_distance(config.distance, &s, &t)
}

/// Cross-entropy of the rear section applied to the cached features.
/// Normalization uses batch moments without updating running statistics,
/// so the rear's statistics keep describing the image pathway.
pub fn rear_loss<T: Element>(
    model: &ModelState<T>,
    rear: &RearSection,
    cache: &FeatureCache<T>,
    ids: &[usize],
    labels: &[usize],
    config: &ElfConfig,
) -> Result<Tensor<T>> {
    let feats = cache.batch(ids)?;
    let expected = rear.input_shape(model);
    let feats = if feats.shape()[1..] != expected[..] && config.spatial_adapt == SpatialAdapt::AvgPoolToMatch {
        let target = Tensor::<T>::zeros(&[1, expected[0], expected[1], expected[2]]);
        spatial_adapt(SpatialAdapt::AvgPoolToMatch, target, feats)?.1
    } else {
        feats
    };
    if feats.shape()[1..] != expected[..] {
        return Err(shape_err(format!(
            "cached features {:?} do not fit the rear section input {expected:?}",
            &feats.shape()[1..]
        )));
    }
    let logits = rear.forward_batch_stats(model, &feats)?;
    Ok(softmax_cross_entropy(&logits, labels)?)
}

/// Classification loss of the full model on the synthetic batch.
pub fn task_loss<T: Element>(model: &mut ModelState<T>, x: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    Ok(softmax_cross_entropy(&model.forward(x, Mode::Train)?, labels)?)
}

/// `task + λ_front·front + λ_rear·rear`; absent terms and zero weights are
/// skipped entirely.
pub fn elf_total_loss<T: Element>(
    task: Option<&Tensor<T>>,
    front: Option<&Tensor<T>>,
    rear: Option<&Tensor<T>>,
    lambda_front: f64,
    lambda_rear: f64,
) -> Result<Tensor<T>> {
    let mut total: Option<Tensor<T>> = task.cloned();
    for (term, l) in [(front, lambda_front), (rear, lambda_rear)] {
        if let Some(t) = term.filter(|_| l != 0.0) {
            let w = t.scale(T::of(l));
            total = Some(match total {
                Some(acc) => acc.add(&w)?,
                None => w,
            });
        }
    }
    total.ok_or_else(|| config_err("the objective has no active terms"))
}
