//! Feature cache file: `ELFC` magic, a little-endian `u32` version, a `u64`
//! length followed by the JSON metadata, then an ELFT tensor block with one
//! `C×H×W` entry per synthetic image, named by its index in `S`.

use std::path::Path;

use elf_tensor::ops::index_select0;
use elf_tensor::{checkpoint, Element, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::SyntheticDataset;
use crate::error::{shape_err, Error, IoContext, Result};
use crate::models::{ModelConfig, ModelState};
use crate::provenance::unix_time;

pub const CACHE_MAGIC: &[u8; 4] = b"ELFC";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub extractor: ModelConfig,
    pub extractor_epoch: usize,
    /// Block after which features were tapped.
    pub tap_block: usize,
    pub synthetic_hash: String,
    pub created_unix: u64,
    pub dtype: String,
}

/// Features of every synthetic image, stacked as `N×C×H×W` constants.
#[derive(Debug, Clone)]
pub struct FeatureCache<T: Element = f32> {
    pub meta: CacheMeta,
    features: Tensor<T>,
}

impl<T: Element> FeatureCache<T> {
    pub fn new(meta: CacheMeta, features: Tensor<T>) -> Result<Self> {
        if features.ndim() != 4 {
            return Err(shape_err(format!(
                "cached features must be N×C×H×W, got {:?}",
                features.shape()
            )));
        }
        Ok(Self {
            meta,
            features: features.detach(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[C, H, W]` of every entry.
    pub fn feature_shape(&self) -> [usize; 3] {
        let s = self.features.shape();
        [s[1], s[2], s[3]]
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    /// Entry of synthetic image `id`.
    pub fn get(&self, id: usize) -> Result<Tensor<T>> {
        let t = self.batch(&[id])?;
        let [c, h, w] = self.feature_shape();
        Ok(t.reshape(&[c, h, w])?)
    }

    /// Entries of `ids` stacked along a new first axis; never differentiable.
    pub fn batch(&self, ids: &[usize]) -> Result<Tensor<T>> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Config(format!(
                "synthetic image {bad} has no cached feature ({} entries)",
                self.len()
            )));
        }
        Ok(index_select0(&self.features, ids)?.detach())
    }

    /// Rejects use with a synthetic set other than the one extracted from.
    pub fn verify(&self, synthetic: &SyntheticDataset<T>) -> Result<()> {
        let current = synthetic.content_hash();
        if current != self.meta.synthetic_hash {
            return Err(Error::CacheMismatch {
                cached: self.meta.synthetic_hash.clone(),
                current,
            });
        }
        if synthetic.len() != self.len() {
            return Err(shape_err(format!(
                "{} cached entries for {} synthetic images",
                self.len(),
                synthetic.len()
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let [c, h, w] = self.feature_shape();
        let per = c * h * w;
        let entries: Vec<(String, Tensor<T>)> = (0..self.len())
            .map(|i| {
                let v = self.features.data()[i * per..(i + 1) * per].to_vec();
                Ok((i.to_string(), Tensor::from_vec(&[c, h, w], v)?))
            })
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(16 + meta.len() + per * self.len() * T::DTYPE.size_of() + 64 * self.len());
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&checkpoint::encode(&entries));
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(format!("feature cache: {m}"));
        if bytes.len() < 16 || &bytes[..4] != CACHE_MAGIC {
            return Err(fmt("missing ELFC magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CACHE_VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let meta_end = usize::try_from(meta_len)
            .ok()
            .and_then(|l| l.checked_add(16))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fmt("metadata length runs past the end of the file"))?;
        let meta: CacheMeta = serde_json::from_slice(&bytes[16..meta_end])?;
        let entries = checkpoint::decode::<T>(&bytes[meta_end..])?;
        let shape = entries
            .first()
            .map(|(_, t)| t.shape().to_vec())
            .unwrap_or_else(|| vec![0, 0, 0]);
        if shape.len() != 3 {
            return Err(fmt(&format!("entries must be C×H×W, got {shape:?}")));
        }
        let mut data = Vec::with_capacity(entries.len() * shape.iter().product::<usize>());
        for (i, (name, t)) in entries.iter().enumerate() {
            if *name != i.to_string() {
                return Err(fmt(&format!("entry {i} is named `{name}`")));
            }
            if t.shape() != shape {
                return Err(fmt(&format!("entry {i} has shape {:?}, expected {shape:?}", t.shape())));
            }
            data.extend_from_slice(t.data());
        }
        let features = Tensor::from_vec(&[entries.len(), shape[0], shape[1], shape[2]], data)?;
        Self::new(meta, features)
    }
}

pub fn save_cache<T: Element>(cache: &FeatureCache<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, cache.encode()?).at(path)
}

/// Loads a cache and, when `synthetic` is given, checks it belongs to that set.
pub fn load_cache<T: Element>(
    path: impl AsRef<Path>,
    synthetic: Option<&SyntheticDataset<T>>,
) -> Result<FeatureCache<T>> {
    let path = path.as_ref();
    let cache = FeatureCache::decode(&std::fs::read(path).at(path)?)?;
    if let Some(s) = synthetic {
        cache.verify(s)?;
    }
    Ok(cache)
}

/// Eval-mode features of every synthetic image after block `tap_block` of
/// the extractor (the last block before the head when `None`), without
/// augmentation and detached from any graph.
pub fn extract_features<T: Element>(
    extractor: &ModelState<T>,
    extractor_epoch: usize,
    synthetic: &SyntheticDataset<T>,
    tap_block: Option<usize>,
) -> Result<FeatureCache<T>> {
    if synthetic.is_empty() {
        return Err(Error::Config(
            "cannot extract features of an empty synthetic set".into(),
        ));
    }
    let tap = tap_block.unwrap_or(extractor.num_blocks() - 1);
    let out_shape = extractor.block_output_shape(tap);
    if out_shape.len() != 3 {
        return Err(shape_err(format!(
            "tap after block {tap} yields {out_shape:?}, not a feature map"
        )));
    }
    let features = extractor.feature_tap(&synthetic.images.detach(), tap)?;
    FeatureCache::new(
        CacheMeta {
            extractor: extractor.config().clone(),
            extractor_epoch,
            tap_block: tap,
            synthetic_hash: synthetic.content_hash(),
            created_unix: unix_time(),
            dtype: T::DTYPE.to_string(),
        },
        features,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_toy_shapes, init_synthetic, InitMode, ToyShapesConfig};
    use crate::models::{build_model, NormKind};
    use elf_tensor::PrngState;

    fn setup() -> (ModelState, SyntheticDataset) {
        let toy = ToyShapesConfig {
            samples_per_class: 3,
            ..Default::default()
        };
        let real = generate_toy_shapes(&toy, 0).unwrap();
        let s = init_synthetic(&real, 2, InitMode::RealSample, PrngState::new(1)).unwrap();
        let cfg = ModelConfig::convnet(8, 3, NormKind::Instance, 4, [3, 16, 16]);
        (build_model(&cfg, PrngState::new(2)).unwrap(), s)
    }

    #[test]
    fn extraction_matches_feature_tap() {
        let (m, s) = setup();
        let cache = extract_features(&m, 0, &s, None).unwrap();
        assert_eq!(cache.len(), 8);
        assert_eq!(cache.feature_shape(), [8, 2, 2]);
        let tap = m.feature_tap(&s.images.detach(), 3).unwrap();
        assert!(cache.features().max_abs_diff(&tap) <= 1e-6);
        let again = extract_features(&m, 0, &s, None).unwrap();
        assert!(again.features().bit_eq(cache.features()));
        assert!(!cache.features().requires_grad_flag());
    }

    #[test]
    fn file_round_trip_and_rejections() {
        let (m, s) = setup();
        let cache = extract_features(&m, 7, &s, None).unwrap();
        let bytes = cache.encode().unwrap();
        let back = FeatureCache::<f32>::decode(&bytes).unwrap();
        assert_eq!(back.meta, cache.meta);
        assert!(back.features().bit_eq(cache.features()));
        assert_eq!(back.encode().unwrap(), bytes);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(FeatureCache::<f32>::decode(&bad), Err(Error::Format(_))));
        assert!(FeatureCache::<f32>::decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(FeatureCache::<f32>::decode(&bytes[..10]).is_err());

        let mut changed = s.clone();
        let mut v = s.images.to_vec();
        v[0] = if v[0] > 0.5 { v[0] - 0.01 } else { v[0] + 0.01 };
        changed
            .set_images(Tensor::from_vec(s.images.shape(), v).unwrap())
            .unwrap();
        assert!(cache.verify(&s).is_ok());
        assert!(matches!(cache.verify(&changed), Err(Error::CacheMismatch { .. })));
        assert!(cache.batch(&[8]).is_err());
    }
}
