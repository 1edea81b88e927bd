//! Model zoo: ConvNet, MiniResNet (ResNet-18 topology) and MiniVGG (VGG-11
//! topology), each with instance or batch normalization.
//!
//! Parameter counts for common settings (conv layers carry no bias because a
//! normalization layer follows each of them):
//!
//! | config                                   | parameters |
//! |------------------------------------------|-----------:|
//! | ConvNet w128 d3, 3×32×32, 10 classes     |    319,626 |
//! | ConvNet w32 d3, 3×16×16, 4 classes       |     20,004 |
//! | MiniResNet w8, 3×16×16, 4 classes        |    176,012 |
//! | MiniVGG w8, 3×16×16, 4 classes           |    145,164 |
//!
//! The table is checked by the unit tests below.

mod arch;
mod config;
mod io;
mod norm;

use std::ops::Range;

use elf_tensor::ops::{add, avg_pool2d, conv2d, div, flatten, global_avg_pool, linear, max_pool2d, relu, reshape, sub};
use elf_tensor::{Element, PrngState, SgdMomentum, Tensor};
use indexmap::IndexMap;

pub use config::{
    Family, ModelConfig, NormKind, BN_MOMENTUM, CIFAR10_MEAN, CIFAR10_STD, GENERIC_MEAN, GENERIC_STD, NORM_EPS,
};
pub use io::{load_model, save_model, sidecar_path, ModelSidecar};
pub use norm::{batch_norm, batch_norm_eval, batch_norm_train, instance_norm, RunningStats};

use crate::error::{config_err, shape_err, Error, Result};
use arch::{BlockKind, BlockSpec, ConvSpec, Init, Pool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

/// Boundary after which the rear section begins: the front holds blocks
/// `0..block_index`, the rear the rest (head included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct SplitPoint {
    pub block_index: usize,
}

impl SplitPoint {
    pub fn new(block_index: usize) -> Self {
        Self { block_index }
    }

    /// Resolves a named boundary:
    ///
    /// - ConvNet: `block{k}` (after the k-th conv block).
    /// - MiniVGG: `layer{k}` (after the k-th conv layer and its pool, if any).
    /// - MiniResNet: a conv layer in `conv{stage}_{j}` notation (`conv1` is the
    ///   stem, each stage has four 3×3 convs), or a block name such as
    ///   `layer4.0`. `conv5_2` ends the first block of the last stage. Naming
    ///   the first conv of a residual block is rejected because the split
    ///   would cut the block in half.
    pub fn named(config: &ModelConfig, name: &str) -> Result<Self> {
        let blocks = arch::build_blocks(config)?;
        let total = blocks.len();
        let unknown = || config_err(format!("unknown split `{name}` for {}", config.family));
        let index = match config.family {
            Family::ConvNet => name
                .strip_prefix("block")
                .or_else(|| name.strip_prefix("layer"))
                .and_then(|k| k.parse::<usize>().ok())
                .ok_or_else(unknown)?,
            Family::MiniVgg => name
                .strip_prefix("layer")
                .and_then(|k| k.parse::<usize>().ok())
                .ok_or_else(unknown)?,
            Family::MiniResNet => {
                if name == "conv1" {
                    1
                } else if let Some(pos) = blocks.iter().position(|b| b.name == name) {
                    pos + 1
                } else {
                    let rest = name.strip_prefix("conv").ok_or_else(unknown)?;
                    let (s, j) = rest.split_once('_').ok_or_else(unknown)?;
                    let (s, j): (usize, usize) = (s.parse().map_err(|_| unknown())?, j.parse().map_err(|_| unknown())?);
                    if !(2..=5).contains(&s) || !(1..=4).contains(&j) {
                        return Err(unknown());
                    }
                    let block = format!("layer{}.{}", s - 1, (j - 1) / 2);
                    if j % 2 == 1 {
                        return Err(Error::SplitInsideBlock {
                            layer: name.to_string(),
                            block,
                        });
                    }
                    blocks.iter().position(|b| b.name == block).ok_or_else(unknown)? + 1
                }
            }
        };
        if index == 0 || index >= total {
            return Err(config_err(format!(
                "split `{name}` resolves to block {index}, valid range is 1..{}",
                total - 1
            )));
        }
        Ok(Self::new(index))
    }

    /// The documented default boundary of each family: ConvNet before its
    /// last conv block, MiniResNet at `conv5_2`, MiniVGG at `layer5`.
    pub fn default_for(config: &ModelConfig) -> Result<Self> {
        match config.family {
            Family::ConvNet => Ok(Self::new(config.depth.saturating_sub(1).max(1))),
            Family::MiniResNet => Self::named(config, "conv5_2"),
            Family::MiniVgg => Self::named(config, "layer5"),
        }
    }
}

/// A contiguous run of blocks. Sections do not own parameters; they run
/// against the [`ModelState`] they were split from, so training through a
/// section trains the original model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    blocks: Range<usize>,
}

pub type FrontSection = Section;
pub type RearSection = Section;

impl Section {
    pub fn blocks(&self) -> Range<usize> {
        self.blocks.clone()
    }

    pub fn forward<T: Element>(&self, model: &mut ModelState<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        model.forward_range(x, self.blocks.clone(), mode)
    }

    pub fn forward_eval<T: Element>(&self, model: &ModelState<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        model.forward_range_eval(x, self.blocks.clone())
    }

    /// See [`ModelState::forward_range_batch_stats`].
    pub fn forward_batch_stats<T: Element>(&self, model: &ModelState<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        model.forward_range_batch_stats(x, self.blocks.clone())
    }

    pub fn param_names<T: Element>(&self, model: &ModelState<T>) -> Vec<String> {
        model.param_names_in(self.blocks.clone())
    }

    /// Per-sample shape this section consumes.
    pub fn input_shape<T: Element>(&self, model: &ModelState<T>) -> Vec<usize> {
        model.block_output_shape(self.blocks.start)
    }

    /// Per-sample shape this section produces.
    pub fn output_shape<T: Element>(&self, model: &ModelState<T>) -> Vec<usize> {
        model.block_output_shape(self.blocks.end)
    }
}

/// Batch-norm moments observed during a Train-mode pass, applied afterwards.
type StatUpdates<T> = Vec<(String, Vec<T>, Vec<T>)>;

#[derive(Debug, Clone)]
pub struct ModelState<T: Element = f32> {
    config: ModelConfig,
    blocks: Vec<BlockSpec>,
    params: IndexMap<String, Tensor<T>>,
    bn_stats: IndexMap<String, RunningStats<T>>,
    bn_momentum: f64,
    input_mean: Tensor<T>,
    input_std: Tensor<T>,
}

/// Builds a model with fan-in scaled uniform weights, unit norm scales and
/// zero norm shifts; deterministic in `seed`.
pub fn build_model<T: Element>(config: &ModelConfig, seed: PrngState) -> Result<ModelState<T>> {
    ModelState::new(config, seed)
}

/// Parameter count as a pure function of the configuration.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    Ok(arch::build_blocks(config)?
        .iter()
        .flat_map(|b| b.params())
        .map(|p| p.shape.iter().product::<usize>())
        .sum())
}

impl<T: Element> ModelState<T> {
    pub fn new(config: &ModelConfig, seed: PrngState) -> Result<Self> {
        let blocks = arch::build_blocks(config)?;
        let mut rng = seed;
        let mut params = IndexMap::new();
        let mut bn_stats = IndexMap::new();
        for b in &blocks {
            for p in b.params() {
                let n: usize = p.shape.iter().product();
                let data: Vec<T> = match p.init {
                    Init::FanIn(fan_in) => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        (0..n)
                            .map(|_| T::of((2.0 * rng.next_uniform() - 1.0) * bound))
                            .collect()
                    }
                    Init::Ones => vec![T::one(); n],
                    Init::Zeros => vec![T::zero(); n],
                };
                params.insert(p.name, Tensor::from_vec(&p.shape, data)?.requires_grad());
            }
            if config.norm == NormKind::Batch {
                for (name, ch) in b.norms() {
                    bn_stats.insert(name, RunningStats::new(ch));
                }
            }
        }
        let (mean, std) = config.standardization();
        let c = config.input_shape[0];
        Ok(Self {
            config: config.clone(),
            blocks,
            params,
            bn_stats,
            bn_momentum: BN_MOMENTUM,
            input_mean: Tensor::from_f64s(&[1, c, 1, 1], &mean)?,
            input_std: Tensor::from_f64s(&[1, c, 1, 1], &std)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_names(&self) -> Vec<&str> {
        self.blocks.iter().map(|b| b.name.as_str()).collect()
    }

    /// Per-sample shape after the first `b` blocks (`b = 0` is the input).
    pub fn block_output_shape(&self, b: usize) -> Vec<usize> {
        if b == 0 {
            self.config.input_shape.to_vec()
        } else {
            self.blocks[b - 1].out_shape.clone()
        }
    }

    pub fn params(&self) -> &IndexMap<String, Tensor<T>> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| config_err(format!("no parameter named `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(shape_err(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    /// Marks every parameter as a gradient leaf (or as a constant).
    pub fn set_requires_grad(&mut self, on: bool) {
        for p in self.params.values_mut() {
            *p = if on { p.detach().requires_grad() } else { p.detach() };
        }
    }

    pub fn bn_stats(&self) -> &IndexMap<String, RunningStats<T>> {
        &self.bn_stats
    }

    pub fn bn_momentum(&self) -> f64 {
        self.bn_momentum
    }

    pub fn set_bn_momentum(&mut self, m: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&m) {
            return Err(config_err(format!("batch-norm momentum {m} outside [0, 1]")));
        }
        self.bn_momentum = m;
        Ok(())
    }

    pub(crate) fn set_bn_stats(&mut self, name: &str, stats: RunningStats<T>) -> Result<()> {
        let slot = self
            .bn_stats
            .get_mut(name)
            .ok_or_else(|| config_err(format!("no batch-norm layer named `{name}`")))?;
        if slot.mean.shape() != stats.mean.shape() || slot.var.shape() != stats.var.shape() {
            return Err(shape_err(format!("running stats for `{name}` change shape")));
        }
        if stats.var.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::Format(format!("negative running variance in `{name}`")));
        }
        *slot = stats;
        Ok(())
    }

    /// Parameter names owned by the blocks in `range`, in model order.
    pub fn param_names_in(&self, range: Range<usize>) -> Vec<String> {
        self.blocks[range]
            .iter()
            .flat_map(|b| b.params())
            .map(|p| p.name)
            .collect()
    }

    /// Same numeric type, parameters converted element-wise.
    pub fn cast<U: Element>(&self) -> ModelState<U> {
        ModelState {
            config: self.config.clone(),
            blocks: self.blocks.clone(),
            params: self
                .params
                .iter()
                .map(|(k, v)| {
                    let c = v.cast::<U>();
                    (k.clone(), if v.requires_grad_flag() { c.requires_grad() } else { c })
                })
                .collect(),
            bn_stats: self
                .bn_stats
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        RunningStats {
                            mean: s.mean.cast(),
                            var: s.var.cast(),
                        },
                    )
                })
                .collect(),
            bn_momentum: self.bn_momentum,
            input_mean: self.input_mean.cast(),
            input_std: self.input_std.cast(),
        }
    }

    pub fn split(&self, sp: SplitPoint) -> Result<(FrontSection, RearSection)> {
        let total = self.blocks.len();
        if sp.block_index == 0 || sp.block_index >= total {
            return Err(config_err(format!(
                "split index {} outside 1..{} for {}",
                sp.block_index,
                total - 1,
                self.config.label()
            )));
        }
        Ok((
            Section {
                blocks: 0..sp.block_index,
            },
            Section {
                blocks: sp.block_index..total,
            },
        ))
    }

    /// Full forward pass. Train mode normalizes with batch moments and
    /// updates the running statistics; Eval mode leaves the model untouched.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.forward_range(x, 0..self.blocks.len(), mode)
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_range_eval(x, 0..self.blocks.len())
    }

    pub fn forward_range(&mut self, x: &Tensor<T>, range: Range<usize>, mode: Mode) -> Result<Tensor<T>> {
        let mut updates = Vec::new();
        let y = self.run(x, range, mode, &mut updates)?;
        let m = self.bn_momentum;
        for (name, mean, var) in updates {
            self.bn_stats[&name].update(&mean, &var, m)?;
        }
        Ok(y)
    }

    pub fn forward_range_eval(&self, x: &Tensor<T>, range: Range<usize>) -> Result<Tensor<T>> {
        self.run(x, range, Mode::Eval, &mut Vec::new())
    }

    /// Train-mode normalization (batch moments) without touching the running
    /// statistics; used for inputs that do not come from the image pathway.
    pub fn forward_range_batch_stats(&self, x: &Tensor<T>, range: Range<usize>) -> Result<Tensor<T>> {
        self.run(x, range, Mode::Train, &mut Vec::new())
    }

    /// Eval-mode activation after block `block_index` (1-based, head excluded).
    pub fn feature_tap(&self, x: &Tensor<T>, block_index: usize) -> Result<Tensor<T>> {
        if block_index == 0 || block_index >= self.blocks.len() {
            return Err(config_err(format!(
                "feature tap {block_index} outside 1..{}",
                self.blocks.len() - 1
            )));
        }
        self.forward_range_eval(x, 0..block_index)
    }

    /// One SGD-with-momentum step over the named gradients.
    pub fn apply_gradients(&mut self, opt: &mut SgdMomentum<T>, grads: &[(String, Tensor<T>)]) -> Result<()> {
        for (name, g) in grads {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| config_err(format!("no parameter named `{name}`")))?;
            opt.step(name, p, g)?;
        }
        Ok(())
    }

    fn p(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| config_err(format!("missing parameter `{name}`")))
    }

    fn run(&self, x: &Tensor<T>, range: Range<usize>, mode: Mode, updates: &mut StatUpdates<T>) -> Result<Tensor<T>> {
        if range.start >= range.end || range.end > self.blocks.len() {
            return Err(config_err(format!("block range {range:?} invalid")));
        }
        let expected = self.block_output_shape(range.start);
        if x.ndim() != expected.len() + 1 || x.shape()[1..] != expected[..] {
            return Err(shape_err(format!(
                "{} blocks {range:?} expect per-sample shape {expected:?}, got batch {:?}",
                self.config.label(),
                x.shape()
            )));
        }
        let mut h = if range.start == 0 {
            div(&sub(x, &self.input_mean)?, &self.input_std)?
        } else {
            x.clone()
        };
        for b in &self.blocks[range] {
            h = self.run_block(b, &h, mode, updates)?;
            if !h.is_finite() {
                return Err(Error::NonFinite {
                    stage: format!("{} block `{}`", self.config.label(), b.name),
                    detail: format!("output shape {:?}", h.shape()),
                });
            }
        }
        Ok(h)
    }

    fn conv(&self, spec: &ConvSpec, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = self.p(&format!("{}.weight", spec.name))?;
        Ok(conv2d(x, w, None, spec.stride, spec.pad)?)
    }

    fn norm(&self, name: &str, x: &Tensor<T>, mode: Mode, updates: &mut StatUpdates<T>) -> Result<Tensor<T>> {
        let g = self.p(&format!("{name}.weight"))?;
        let b = self.p(&format!("{name}.bias"))?;
        match (self.config.norm, mode) {
            (NormKind::Instance, _) => instance_norm(x, g, b, NORM_EPS),
            (NormKind::Batch, Mode::Train) => {
                let (y, m, v) = batch_norm_train(x, g, b, NORM_EPS)?;
                updates.push((name.to_string(), m, v));
                Ok(y)
            }
            (NormKind::Batch, Mode::Eval) => batch_norm_eval(x, g, b, &self.bn_stats[name], NORM_EPS),
        }
    }

    fn run_block(&self, b: &BlockSpec, x: &Tensor<T>, mode: Mode, updates: &mut StatUpdates<T>) -> Result<Tensor<T>> {
        match &b.kind {
            BlockKind::Conv { conv, norm, pool } => {
                let h = relu(&self.norm(norm, &self.conv(conv, x)?, mode, updates)?);
                Ok(match pool {
                    Some(Pool::Avg2) => avg_pool2d(&h, 2, 2)?,
                    Some(Pool::Max2) => max_pool2d(&h, 2, 2)?,
                    None => h,
                })
            }
            BlockKind::Residual {
                conv1,
                norm1,
                conv2,
                norm2,
                shortcut,
            } => {
                let h = relu(&self.norm(norm1, &self.conv(conv1, x)?, mode, updates)?);
                let h = self.norm(norm2, &self.conv(conv2, &h)?, mode, updates)?;
                let s = match shortcut {
                    Some((c, n)) => self.norm(n, &self.conv(c, x)?, mode, updates)?,
                    None => x.clone(),
                };
                Ok(relu(&add(&h, &s)?))
            }
            BlockKind::Head {
                name,
                in_features,
                global_pool,
            } => {
                let h = if *global_pool { global_avg_pool(x)? } else { flatten(x)? };
                let h = reshape(&h, &[x.shape()[0], *in_features])?;
                Ok(linear(
                    &h,
                    self.p(&format!("{name}.weight"))?,
                    self.p(&format!("{name}.bias"))?,
                )?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use elf_tensor::ops::softmax_cross_entropy;
    use elf_tensor::{backward, PrngState};

    fn batch<T: Element>(n: usize, shape: [usize; 3], seed: u64) -> Tensor<T> {
        let mut rng = PrngState::new(seed);
        let len = n * shape.iter().product::<usize>();
        let v: Vec<f64> = (0..len).map(|_| rng.next_uniform()).collect();
        Tensor::from_f64s(&[n, shape[0], shape[1], shape[2]], &v).unwrap()
    }

    fn toy(family: Family, norm: NormKind) -> ModelConfig {
        match family {
            Family::ConvNet => ModelConfig::convnet(16, 3, norm, 4, [3, 16, 16]),
            Family::MiniResNet => ModelConfig::mini_resnet(4, norm, 4, [3, 16, 16]),
            Family::MiniVgg => ModelConfig::mini_vgg(4, norm, 4, [3, 16, 16]),
        }
    }

    #[test]
    fn parameter_count_table() {
        // Hand-derived: conv weights + 2·C norm affine per conv + linear head.
        let c = ModelConfig::convnet(128, 3, NormKind::Instance, 10, [3, 32, 32]);
        let expected = 128 * 3 * 9 + 2 * 128 * 128 * 9 + 3 * 256 + 128 * 16 * 10 + 10;
        assert_eq!(expected, 319_626);
        assert_eq!(param_count(&c).unwrap(), expected);

        let c = ModelConfig::convnet(32, 3, NormKind::Instance, 4, [3, 16, 16]);
        let expected = 32 * 27 + 2 * 32 * 32 * 9 + 3 * 64 + 32 * 4 * 4 + 4;
        assert_eq!(expected, 20_004);
        assert_eq!(param_count(&c).unwrap(), expected);

        let b = 8;
        let block = |cin: usize, cout: usize, down: bool| {
            cin * cout * 9 + cout * cout * 9 + 4 * cout + if down { cin * cout + 2 * cout } else { 0 }
        };
        let resnet = b * 27
            + 2 * b
            + 2 * block(b, b, false)
            + block(b, 2 * b, true)
            + block(2 * b, 2 * b, false)
            + block(2 * b, 4 * b, true)
            + block(4 * b, 4 * b, false)
            + block(4 * b, 8 * b, true)
            + block(8 * b, 8 * b, false)
            + 8 * b * 4
            + 4;
        assert_eq!(resnet, 176_012);
        assert_eq!(
            param_count(&ModelConfig::mini_resnet(8, NormKind::Batch, 4, [3, 16, 16])).unwrap(),
            resnet
        );

        let widths = [b, 2 * b, 4 * b, 4 * b, 8 * b, 8 * b, 8 * b, 8 * b];
        let mut vgg = 8 * b * 4 + 4;
        let mut cin = 3;
        for &w in &widths {
            vgg += cin * w * 9 + 2 * w;
            cin = w;
        }
        assert_eq!(vgg, 145_164);
        assert_eq!(
            param_count(&ModelConfig::mini_vgg(8, NormKind::Batch, 4, [3, 16, 16])).unwrap(),
            vgg
        );

        let m: ModelState = build_model(
            &ModelConfig::mini_vgg(8, NormKind::Batch, 4, [3, 16, 16]),
            PrngState::new(0),
        )
        .unwrap();
        assert_eq!(m.num_params(), vgg);
    }

    #[test]
    fn build_examples() {
        let cfg = ModelConfig::convnet(128, 3, NormKind::Instance, 10, [3, 32, 32]);
        let m: ModelState = build_model(&cfg, PrngState::new(3)).unwrap();
        assert_eq!(m.num_blocks(), 4);
        assert_eq!(m.block_output_shape(3), vec![128, 4, 4]);
        let x = batch::<f32>(2, [3, 32, 32], 1);
        assert_eq!(m.feature_tap(&x, 3).unwrap().shape(), &[2, 128, 4, 4]);

        let again: ModelState = build_model(&cfg, PrngState::new(3)).unwrap();
        for (a, b) in m.params().values().zip(again.params().values()) {
            assert!(a.bit_eq(b));
        }

        let mut r: ModelState = build_model(&toy(Family::MiniResNet, NormKind::Batch), PrngState::new(1)).unwrap();
        let y = r.forward(&batch(5, [3, 16, 16], 2), Mode::Train).unwrap();
        assert_eq!(y.shape(), &[5, 4]);
        assert!(y.is_finite());
    }

    #[test]
    fn unsupported_configs_are_rejected() {
        let mut c = ModelConfig::mini_resnet(8, NormKind::Batch, 4, [3, 16, 16]);
        c.depth = 34;
        assert!(build_model::<f32>(&c, PrngState::new(0)).is_err());
        let c = ModelConfig::convnet(8, 5, NormKind::Batch, 4, [3, 16, 16]);
        assert!(build_model::<f32>(&c, PrngState::new(0)).is_err());
        let c = ModelConfig::convnet(0, 3, NormKind::Batch, 4, [3, 16, 16]);
        assert!(build_model::<f32>(&c, PrngState::new(0)).is_err());
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let mut m: ModelState = build_model(&toy(Family::ConvNet, NormKind::Instance), PrngState::new(0)).unwrap();
        let w = m.param("fc.weight").unwrap().shape().to_vec();
        m.set_param("fc.weight", Tensor::zeros(&w)).unwrap();
        m.set_param("fc.bias", Tensor::zeros(&[4])).unwrap();
        let y = m.forward_eval(&batch(3, [3, 16, 16], 9)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_is_pure_and_train_updates_running_mean() {
        let cfg = ModelConfig::convnet(4, 1, NormKind::Batch, 2, [3, 4, 4]);
        let mut m: ModelState<f64> = build_model(&cfg, PrngState::new(5)).unwrap();
        let x = batch::<f64>(3, [3, 4, 4], 6);
        let a = m.forward(&x, Mode::Eval).unwrap();
        let b = m.forward(&x, Mode::Eval).unwrap();
        assert!(a.bit_eq(&b));
        assert_eq!(m.bn_stats()["block1.norm"].mean.to_vec(), vec![0.0; 4]);

        // independent batch mean of the first conv output
        let xs = div(&sub(&x, &m.input_mean).unwrap(), &m.input_std).unwrap();
        let conv = conv2d(&xs, m.param("block1.conv.weight").unwrap(), None, 1, 1).unwrap();
        let hw = 16;
        let mut expected = vec![0.0; 4];
        for n in 0..3 {
            for c in 0..4 {
                let plane = &conv.data()[(n * 4 + c) * hw..(n * 4 + c + 1) * hw];
                expected[c] += plane.iter().sum::<f64>() / (3 * hw) as f64;
            }
        }
        m.forward(&x, Mode::Train).unwrap();
        let got = m.bn_stats()["block1.norm"].mean.to_vec();
        for c in 0..4 {
            let want = 0.9 * 0.0 + 0.1 * expected[c];
            assert!((got[c] - want).abs() < 1e-12, "{} vs {want}", got[c]);
        }
    }

    #[test]
    fn instance_norm_models_ignore_mode() {
        let mut m: ModelState = build_model(&toy(Family::MiniVgg, NormKind::Instance), PrngState::new(2)).unwrap();
        let x = batch(4, [3, 16, 16], 3);
        let a = m.forward(&x, Mode::Train).unwrap();
        let b = m.forward(&x, Mode::Eval).unwrap();
        assert!(a.bit_eq(&b));
        assert!(m.bn_stats().is_empty());
    }

    #[test]
    fn train_forward_does_not_touch_parameters() {
        let mut m: ModelState = build_model(&toy(Family::MiniResNet, NormKind::Batch), PrngState::new(2)).unwrap();
        let before: Vec<_> = m.params().values().map(|t| t.to_vec()).collect();
        m.forward(&batch(4, [3, 16, 16], 3), Mode::Train).unwrap();
        for (a, b) in before.iter().zip(m.params().values()) {
            assert_eq!(a, &b.to_vec());
        }
        assert!(m.bn_stats().values().any(|s| s.mean.data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn split_composes_to_full_forward() {
        for family in [Family::ConvNet, Family::MiniResNet, Family::MiniVgg] {
            let mut m: ModelState = build_model(&toy(family, NormKind::Batch), PrngState::new(4)).unwrap();
            // give the running stats non-trivial values
            m.forward(&batch(6, [3, 16, 16], 1), Mode::Train).unwrap();
            let x = batch(3, [3, 16, 16], 8);
            let full = m.forward_eval(&x).unwrap();
            for sp in 1..m.num_blocks() {
                let (front, rear) = m.split(SplitPoint::new(sp)).unwrap();
                let h = front.forward_eval(&m, &x).unwrap();
                assert_eq!(h.shape()[1..], front.output_shape(&m)[..]);
                assert_eq!(rear.input_shape(&m), front.output_shape(&m));
                let y = rear.forward_eval(&m, &h).unwrap();
                assert!(full.max_abs_diff(&y) <= 1e-6);
                let mut names = front.param_names(&m);
                names.extend(rear.param_names(&m));
                assert_eq!(names, m.param_names());
            }
            assert!(m.split(SplitPoint::new(0)).is_err());
            assert!(m.split(SplitPoint::new(m.num_blocks())).is_err());
        }
    }

    #[test]
    fn named_splits() {
        let r = ModelConfig::mini_resnet(8, NormKind::Batch, 4, [3, 32, 32]);
        let sp = SplitPoint::named(&r, "conv5_2").unwrap();
        assert_eq!(sp, SplitPoint::default_for(&r).unwrap());
        let m: ModelState = build_model(&r, PrngState::new(0)).unwrap();
        assert_eq!(m.block_names()[sp.block_index - 1], "layer4.0");
        let (front, _) = m.split(sp).unwrap();
        // 512 channels at base width 64, scaled to base 8
        assert_eq!(front.output_shape(&m), vec![512 * 8 / 64, 4, 4]);
        assert_eq!(SplitPoint::named(&r, "layer4.0").unwrap(), sp);
        assert_eq!(SplitPoint::named(&r, "conv4_4").unwrap().block_index, 7);
        assert!(matches!(
            SplitPoint::named(&r, "conv5_1"),
            Err(Error::SplitInsideBlock { ref block, .. }) if block == "layer4.0"
        ));
        assert!(SplitPoint::named(&r, "conv6_2").is_err());

        let v = ModelConfig::mini_vgg(8, NormKind::Batch, 4, [3, 16, 16]);
        let m: ModelState = build_model(&v, PrngState::new(0)).unwrap();
        let l5 = SplitPoint::named(&v, "layer5").unwrap();
        let l6 = SplitPoint::named(&v, "layer6").unwrap();
        assert_eq!((l5.block_index, l6.block_index), (5, 6));
        assert_eq!(m.block_output_shape(5), vec![64, 2, 2]);
        assert_eq!(m.block_output_shape(6), vec![64, 1, 1]);
        // the last pool is skipped on a 1×1 map
        assert_eq!(m.block_output_shape(8), vec![64, 1, 1]);
        assert!(SplitPoint::named(&v, "layer9").is_err());

        let c = ModelConfig::convnet(16, 3, NormKind::Instance, 4, [3, 16, 16]);
        assert_eq!(SplitPoint::named(&c, "block2").unwrap().block_index, 2);
        assert!(SplitPoint::named(&c, "block4").is_err());
    }

    #[test]
    fn feature_tap_matches_front_and_head_input() {
        let m: ModelState = build_model(&toy(Family::ConvNet, NormKind::Instance), PrngState::new(1)).unwrap();
        let x = batch(2, [3, 16, 16], 2);
        let (front, rear) = m.split(SplitPoint::new(2)).unwrap();
        assert!(m
            .feature_tap(&x, 2)
            .unwrap()
            .bit_eq(&front.forward_eval(&m, &x).unwrap()));
        let last = m.feature_tap(&x, 3).unwrap();
        let head = Section { blocks: 3..4 };
        assert!(head
            .forward_eval(&m, &last)
            .unwrap()
            .bit_eq(&m.forward_eval(&x).unwrap()));
        assert!(m.feature_tap(&x, 4).is_err());
        let _ = rear;
    }

    #[test]
    fn gradients_reach_every_parameter() {
        let mut m: ModelState = build_model(&toy(Family::MiniResNet, NormKind::Batch), PrngState::new(1)).unwrap();
        let y = m.forward(&batch(4, [3, 16, 16], 2), Mode::Train).unwrap();
        let loss = softmax_cross_entropy(&y, &[0, 1, 2, 3]).unwrap();
        let g = backward(&loss).unwrap();
        for (name, p) in m.params() {
            assert_eq!(g.get(p).map(|t| t.shape().to_vec()), Some(p.shape().to_vec()), "{name}");
        }
    }

    #[test]
    fn wrong_input_shape_is_an_error() {
        let m: ModelState = build_model(&toy(Family::ConvNet, NormKind::Instance), PrngState::new(1)).unwrap();
        assert!(matches!(m.forward_eval(&batch(1, [3, 8, 8], 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_input_is_diagnosed() {
        let m: ModelState = build_model(&toy(Family::ConvNet, NormKind::Instance), PrngState::new(1)).unwrap();
        let mut v = batch::<f32>(1, [3, 16, 16], 0).to_vec();
        v[7] = f32::NAN;
        let x = Tensor::from_vec(&[1, 3, 16, 16], v).unwrap();
        assert!(matches!(m.forward_eval(&x), Err(Error::NonFinite { .. })));
    }
}
