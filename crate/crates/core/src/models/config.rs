use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[serde(alias = "conv")]
    ConvNet,
    #[serde(alias = "resnet", alias = "resnet18")]
    MiniResNet,
    #[serde(alias = "vgg", alias = "vgg11")]
    MiniVgg,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::ConvNet => "ConvNet",
            Family::MiniResNet => "MiniResNet",
            Family::MiniVgg => "MiniVGG",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[serde(alias = "in", alias = "instancenorm")]
    Instance,
    #[serde(alias = "bn", alias = "batchnorm")]
    Batch,
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::Instance => "IN",
            NormKind::Batch => "BN",
        })
    }
}

/// Per-channel standardization applied at the model input. Pixels live in
/// `[0, 1]`; these constants map them to roughly zero mean and unit scale.
pub const CIFAR10_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR10_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];
/// Used for inputs that do not have three channels.
pub const GENERIC_MEAN: f64 = 0.5;
pub const GENERIC_STD: f64 = 0.25;

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Architecture description. `depth` is the block count for ConvNet, and
/// must be 18 for MiniResNet and 11 for MiniVGG. `width` is the channel count
/// of a ConvNet block, or the base (first stage) width of the other families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub depth: usize,
    pub width: usize,
    pub norm: NormKind,
    pub num_classes: usize,
    /// `(C, H, W)`.
    pub input_shape: [usize; 3],
    /// Empty means the documented defaults for the channel count.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_std: Vec<f64>,
}

impl ModelConfig {
    pub fn convnet(width: usize, depth: usize, norm: NormKind, num_classes: usize, input_shape: [usize; 3]) -> Self {
        Self::new(Family::ConvNet, depth, width, norm, num_classes, input_shape)
    }

    pub fn mini_resnet(base_width: usize, norm: NormKind, num_classes: usize, input_shape: [usize; 3]) -> Self {
        Self::new(Family::MiniResNet, 18, base_width, norm, num_classes, input_shape)
    }

    pub fn mini_vgg(base_width: usize, norm: NormKind, num_classes: usize, input_shape: [usize; 3]) -> Self {
        Self::new(Family::MiniVgg, 11, base_width, norm, num_classes, input_shape)
    }

    fn new(
        family: Family,
        depth: usize,
        width: usize,
        norm: NormKind,
        num_classes: usize,
        input_shape: [usize; 3],
    ) -> Self {
        Self {
            family,
            depth,
            width,
            norm,
            num_classes,
            input_shape,
            input_mean: Vec::new(),
            input_std: Vec::new(),
        }
    }

    /// Short label such as `ConvNet-IN-w32-d3` or `MiniResNet-BN-w8`.
    pub fn label(&self) -> String {
        match self.family {
            Family::ConvNet => format!("{}-{}-w{}-d{}", self.family, self.norm, self.width, self.depth),
            _ => format!("{}-{}-w{}", self.family, self.norm, self.width),
        }
    }

    pub fn standardization(&self) -> (Vec<f64>, Vec<f64>) {
        let c = self.input_shape[0];
        let mean = if !self.input_mean.is_empty() {
            self.input_mean.clone()
        } else if c == 3 {
            CIFAR10_MEAN.to_vec()
        } else {
            vec![GENERIC_MEAN; c]
        };
        let std = if !self.input_std.is_empty() {
            self.input_std.clone()
        } else if c == 3 {
            CIFAR10_STD.to_vec()
        } else {
            vec![GENERIC_STD; c]
        };
        (mean, std)
    }

    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input_shape;
        if self.width == 0 {
            return Err(config_err("width must be positive"));
        }
        if self.num_classes == 0 {
            return Err(config_err("num_classes must be positive"));
        }
        if c == 0 || h == 0 || w == 0 {
            return Err(config_err(format!(
                "input shape {:?} has a zero dimension",
                self.input_shape
            )));
        }
        let (mean, std) = self.standardization();
        if mean.len() != c || std.len() != c {
            return Err(config_err(format!(
                "standardization constants have {} / {} entries for {c} channels",
                mean.len(),
                std.len()
            )));
        }
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(config_err("input_std entries must be positive"));
        }
        match self.family {
            Family::ConvNet => {
                if self.depth == 0 || h >> self.depth == 0 || w >> self.depth == 0 {
                    return Err(config_err(format!(
                        "ConvNet depth {} does not fit {h}x{w} inputs (each block halves the side)",
                        self.depth
                    )));
                }
            }
            Family::MiniResNet if self.depth != 18 => {
                return Err(config_err(format!(
                    "MiniResNet supports depth 18 only, got {}",
                    self.depth
                )));
            }
            Family::MiniVgg if self.depth != 11 => {
                return Err(config_err(format!(
                    "MiniVGG supports depth 11 only, got {}",
                    self.depth
                )));
            }
            Family::MiniResNet if h < 8 || w < 8 => {
                return Err(config_err("MiniResNet needs inputs of at least 8x8"));
            }
            _ => {}
        }
        Ok(())
    }
}
