//! Datasets: real data (CIFAR-10 binary or the procedural toy shapes), the
//! learnable synthetic set, batching and differentiable augmentation.

mod augment;
mod cifar;
mod grid;
mod toy;

use std::path::Path;

use elf_tensor::ops::index_select0;
use elf_tensor::{checkpoint, Element, PrngState, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use augment::{
    apply_augment, augment, augment_per_sample, sample_aug_params, AugConfig, AugKind, AugParams, AugTransform,
    MAX_SHIFT_FRACTION, SCALE_RANGE,
};
pub use cifar::{encode_cifar10, load_cifar10_binary, parse_cifar10, CIFAR10_RECORD};
pub use grid::{save_png_grid, PngGridLayout};
pub use toy::{generate_toy_shapes, generate_toy_split, render_shape, ShapeFamily, ShapeParams, ToyShapesConfig};

use crate::error::{config_err, shape_err, Error, IoContext, Result};

/// Images in `[0, 1]` with integer labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset<T: Element = f32> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    class_indices: Vec<Vec<usize>>,
}

impl<T: Element> LabeledDataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.ndim() != 4 || images.shape()[0] != labels.len() {
            return Err(shape_err(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        let mut class_indices = vec![Vec::new(); class_count];
        for (i, &l) in labels.iter().enumerate() {
            if l >= class_count {
                return Err(Error::Format(format!(
                    "label {l} at index {i} outside {class_count} classes"
                )));
            }
            class_indices[l].push(i);
        }
        Ok(Self {
            images,
            labels,
            class_count,
            class_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Stacks datasets with the same image shape and class count.
    pub fn concat(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| config_err("nothing to concatenate"))?;
        let shape = first.image_shape();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.image_shape() != shape || p.class_count != first.class_count {
                return Err(shape_err(format!(
                    "cannot stack {:?} images of {} classes onto {shape:?} images of {}",
                    p.image_shape(),
                    p.class_count,
                    first.class_count
                )));
            }
            data.extend_from_slice(p.images.data());
            labels.extend_from_slice(&p.labels);
        }
        let images = Tensor::from_vec(&[labels.len(), shape[0], shape[1], shape[2]], data)?;
        Self::new(images, labels, first.class_count)
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn class_indices(&self, class: usize) -> &[usize] {
        &self.class_indices[class]
    }

    /// Images and labels at `indices`, as a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let images = index_select0(&self.images.detach(), indices)?;
        Self::new(
            images,
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.class_count,
        )
    }

    pub fn cast<U: Element>(&self) -> LabeledDataset<U> {
        LabeledDataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
            class_count: self.class_count,
            class_indices: self.class_indices.clone(),
        }
    }

    /// SHA-256 over the image bytes and labels.
    pub fn content_hash(&self) -> String {
        content_hash(&self.images, &self.labels)
    }

    /// Writes `images` and `labels` (as floats) in the ELFT checkpoint format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let labels = Tensor::<T>::from_vec(&[self.len()], self.labels.iter().map(|&l| T::of(l as f64)).collect())?;
        let bytes = checkpoint::encode(&[
            ("images".to_string(), self.images.detach()),
            ("labels".to_string(), labels),
        ]);
        std::fs::write(path, bytes).at(path)
    }

    pub fn load(path: impl AsRef<Path>, class_count: usize) -> Result<Self> {
        let path = path.as_ref();
        let (images, labels) = read_images_labels::<T>(path)?;
        Self::new(images, labels, class_count)
    }
}

fn read_images_labels<T: Element>(path: &Path) -> Result<(Tensor<T>, Vec<usize>)> {
    let tensors = checkpoint::decode::<T>(&std::fs::read(path).at(path)?)?;
    let get = |name: &str| {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::Format(format!("{}: missing `{name}` tensor", path.display())))
    };
    let images = get("images")?;
    let labels = get("labels")?
        .data()
        .iter()
        .map(|v| {
            let f = v.as_f64();
            if f < 0.0 || f.fract() != 0.0 {
                Err(Error::Format(format!(
                    "{}: label {f} is not a class index",
                    path.display()
                )))
            } else {
                Ok(f as usize)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((images, labels))
}

pub fn content_hash<T: Element>(images: &Tensor<T>, labels: &[usize]) -> String {
    let mut h = Sha256::new();
    let mut buf = Vec::with_capacity(images.numel() * T::DTYPE.size_of());
    for d in images.shape() {
        buf.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in images.data() {
        v.extend_le_bytes(&mut buf);
    }
    h.update(&buf);
    for &l in labels {
        h.update((l as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Copies of randomly chosen real images of the right class.
    RealSample,
    /// Uniform noise in `[0, 1]`.
    Noise,
}

/// Where a synthetic set came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub config_hash: String,
}

/// The learnable set: images are optimization leaves, labels never change.
/// Image `i` has label `i / ipc`.
#[derive(Debug, Clone)]
pub struct SyntheticDataset<T: Element = f32> {
    pub images: Tensor<T>,
    labels: Vec<usize>,
    pub ipc: usize,
    pub class_count: usize,
    pub provenance: Provenance,
}

impl<T: Element> SyntheticDataset<T> {
    pub fn new(images: Tensor<T>, ipc: usize, class_count: usize, provenance: Provenance) -> Result<Self> {
        if images.ndim() != 4 || images.shape()[0] != ipc * class_count {
            return Err(shape_err(format!(
                "synthetic images {:?} do not hold {ipc} images for each of {class_count} classes",
                images.shape()
            )));
        }
        let labels = (0..class_count).flat_map(|c| std::iter::repeat_n(c, ipc)).collect();
        Ok(Self {
            images: images.detach().requires_grad(),
            labels,
            ipc,
            class_count,
            provenance,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Indices of the images of `class`.
    pub fn class_range(&self, class: usize) -> std::ops::Range<usize> {
        class * self.ipc..(class + 1) * self.ipc
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Replaces the image values (kept as a gradient leaf).
    pub fn set_images(&mut self, images: Tensor<T>) -> Result<()> {
        if images.shape() != self.images.shape() {
            return Err(shape_err(format!(
                "synthetic images {:?} cannot become {:?}",
                self.images.shape(),
                images.shape()
            )));
        }
        self.images = images.detach().requires_grad();
        Ok(())
    }

    pub fn content_hash(&self) -> String {
        content_hash(&self.images, &self.labels)
    }

    pub fn labels_hash(&self) -> String {
        let mut h = Sha256::new();
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// A frozen copy usable as an ordinary training set.
    pub fn to_labeled(&self) -> Result<LabeledDataset<T>> {
        LabeledDataset::new(self.images.detach(), self.labels.clone(), self.class_count)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_labeled()?.save(path)
    }

    /// Reads a set written by [`save`](Self::save); labels must follow the
    /// `i / ipc` layout.
    pub fn load(path: impl AsRef<Path>, class_count: usize, provenance: Provenance) -> Result<Self> {
        let path = path.as_ref();
        let (images, labels) = read_images_labels::<T>(path)?;
        if class_count == 0 || labels.len() % class_count != 0 {
            return Err(Error::Format(format!(
                "{}: {} images cannot split into {class_count} classes",
                path.display(),
                labels.len()
            )));
        }
        let s = Self::new(images, labels.len() / class_count, class_count, provenance)?;
        if s.labels != labels {
            return Err(Error::Format(format!(
                "{}: labels are not grouped by class",
                path.display()
            )));
        }
        Ok(s)
    }
}

/// Builds `S` with `ipc` images per class from `real`.
pub fn init_synthetic<T: Element>(
    real: &LabeledDataset<T>,
    ipc: usize,
    mode: InitMode,
    seed: PrngState,
) -> Result<SyntheticDataset<T>> {
    if ipc == 0 {
        return Err(config_err("ipc must be positive"));
    }
    let k = real.class_count;
    let [c, h, w] = real.image_shape();
    let mut rng = seed;
    let images = match mode {
        InitMode::RealSample => {
            let mut picks = Vec::with_capacity(k * ipc);
            for class in 0..k {
                let pool = real.class_indices(class);
                if pool.len() < ipc {
                    return Err(config_err(format!(
                        "class {class} has {} real images, {ipc} needed",
                        pool.len()
                    )));
                }
                let mut pool = pool.to_vec();
                rng.shuffle(&mut pool);
                picks.extend_from_slice(&pool[..ipc]);
            }
            index_select0(&real.images.detach(), &picks)?
        }
        InitMode::Noise => {
            let n = k * ipc * c * h * w;
            Tensor::from_vec(&[k * ipc, c, h, w], (0..n).map(|_| T::of(rng.next_uniform())).collect())?
        }
    };
    SyntheticDataset::new(
        images,
        ipc,
        k,
        Provenance {
            method: format!("init:{}", serde_json::to_value(mode)?.as_str().unwrap_or_default()),
            config_hash: String::new(),
        },
    )
}

/// Draws a batch of indices. Stratified batches hold `size / K` images of
/// every class, grouped by class in ascending order; otherwise indices are
/// drawn without replacement from a uniform permutation. Returns the
/// indices and the advanced state.
pub fn sample_indices(
    labels: &[usize],
    class_count: usize,
    size: usize,
    state: PrngState,
    stratified: bool,
) -> Result<(Vec<usize>, PrngState)> {
    let mut rng = state;
    if stratified {
        if class_count == 0 || size % class_count != 0 {
            return Err(config_err(format!(
                "stratified batch size {size} is not divisible by {class_count} classes"
            )));
        }
        let per = size / class_count;
        let mut out = Vec::with_capacity(size);
        for class in 0..class_count {
            let mut pool: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            if pool.len() < per {
                return Err(config_err(format!(
                    "class {class} has {} samples, {per} needed per batch",
                    pool.len()
                )));
            }
            partial_shuffle(&mut rng, &mut pool, per);
            out.extend_from_slice(&pool[..per]);
        }
        Ok((out, rng))
    } else {
        if size > labels.len() {
            return Err(config_err(format!("batch of {size} from {} samples", labels.len())));
        }
        let mut all: Vec<usize> = (0..labels.len()).collect();
        partial_shuffle(&mut rng, &mut all, size);
        all.truncate(size);
        Ok((all, rng))
    }
}

/// Moves a uniform random `k`-subset, in random order, to the front.
fn partial_shuffle(rng: &mut PrngState, items: &mut [usize], k: usize) {
    for i in 0..k.min(items.len()) {
        let j = i + rng.next_below(items.len() - i);
        items.swap(i, j);
    }
}

/// Samples a batch of images and labels; see [`sample_indices`].
pub fn sample_batch<T: Element>(
    dataset: &LabeledDataset<T>,
    size: usize,
    state: PrngState,
    stratified: bool,
) -> Result<(Tensor<T>, Vec<usize>, PrngState)> {
    let (idx, next) = sample_indices(&dataset.labels, dataset.class_count, size, state, stratified)?;
    let images = index_select0(&dataset.images.detach(), &idx)?;
    Ok((images, idx.iter().map(|&i| dataset.labels[i]).collect(), next))
}

/// Per-class real batch: `n` random images of `class`.
pub fn sample_class<T: Element>(
    dataset: &LabeledDataset<T>,
    class: usize,
    n: usize,
    rng: &mut PrngState,
) -> Result<Tensor<T>> {
    let mut pool = dataset.class_indices(class).to_vec();
    if pool.is_empty() {
        return Err(config_err(format!("class {class} has no real images")));
    }
    let n = n.min(pool.len());
    partial_shuffle(rng, &mut pool, n);
    Ok(index_select0(&dataset.images.detach(), &pool[..n])?)
}

/// Epoch-wise minibatches: each epoch is a fresh permutation cut into
/// batches of `batch_size` (the last one may be smaller).
pub fn epoch_batches(len: usize, batch_size: usize, rng: &mut PrngState) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LabeledDataset {
        let cfg = ToyShapesConfig {
            class_count: 4,
            samples_per_class: 12,
            ..ToyShapesConfig::default()
        };
        generate_toy_shapes(&cfg, 1).unwrap()
    }

    #[test]
    fn init_bookkeeping() {
        let real = toy();
        let s = init_synthetic(&real, 1, InitMode::RealSample, PrngState::new(0)).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.labels(), &[0, 1, 2, 3]);
        assert!(s.images.is_leaf() && s.images.requires_grad_flag());

        let s = init_synthetic(&real, 3, InitMode::RealSample, PrngState::new(1)).unwrap();
        let per = 3 * 16 * 16;
        for i in 0..s.len() {
            let img = &s.images.data()[i * per..(i + 1) * per];
            let class = s.labels()[i];
            let found = real
                .class_indices(class)
                .iter()
                .any(|&j| &real.images.data()[j * per..(j + 1) * per] == img);
            assert!(found, "synthetic image {i} is not a real image of class {class}");
        }
        assert!(init_synthetic(&real, 13, InitMode::RealSample, PrngState::new(1)).is_err());
    }

    #[test]
    fn noise_init_is_uniform() {
        let real = toy();
        // 4 classes × 4 ipc × 768 pixels ≈ 1.2·10⁴ draws
        let s = init_synthetic(&real, 4, InitMode::Noise, PrngState::new(3)).unwrap();
        let mut v: Vec<f64> = s.images.data().iter().map(|&x| x as f64).collect();
        assert!(v.len() >= 10_000);
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let ks = v
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n - x).abs().max((x - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn batching() {
        let real = toy();
        let (idx, _) = sample_indices(&real.labels, 4, real.len(), PrngState::new(4), false).unwrap();
        let mut sorted = idx.clone();
        sorted.sort();
        assert_eq!(sorted, (0..real.len()).collect::<Vec<_>>());

        let (imgs, labels, next) = sample_batch(&real, 8, PrngState::new(5), true).unwrap();
        assert_eq!(imgs.shape()[0], 8);
        for c in 0..4 {
            assert_eq!(labels.iter().filter(|&&l| l == c).count(), 2);
        }
        assert_ne!(next, PrngState::new(5));
        let (again, labels2, _) = sample_batch(&real, 8, PrngState::new(5), true).unwrap();
        assert!(imgs.bit_eq(&again));
        assert_eq!(labels, labels2);
        assert!(sample_batch(&real, 6, PrngState::new(5), true).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = std::env::temp_dir().join(format!("elf-data-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let real = toy();
        real.save(dir.join("toy.elft")).unwrap();
        let back = LabeledDataset::<f32>::load(dir.join("toy.elft"), 4).unwrap();
        assert!(back.images.bit_eq(&real.images));
        assert_eq!(back.labels, real.labels);

        let s = init_synthetic(&real, 2, InitMode::Noise, PrngState::new(0)).unwrap();
        s.save(dir.join("s.elft")).unwrap();
        let sb = SyntheticDataset::<f32>::load(dir.join("s.elft"), 4, Provenance::default()).unwrap();
        assert_eq!(sb.content_hash(), s.content_hash());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn hash_tracks_single_pixel() {
        let real = toy();
        let s = init_synthetic(&real, 2, InitMode::Noise, PrngState::new(0)).unwrap();
        let mut v = s.images.to_vec();
        v[100] += 1e-3;
        let mut t = s.clone();
        t.set_images(Tensor::from_vec(s.images.shape(), v).unwrap()).unwrap();
        assert_ne!(s.content_hash(), t.content_hash());
        assert_eq!(s.labels_hash(), t.labels_hash());
    }
}
