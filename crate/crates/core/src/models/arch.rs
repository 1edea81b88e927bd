//! Block layouts of the three model families.
//!
//! A model is a flat sequence of blocks ending with the classifier head, so a
//! split point is simply an index into that sequence.

use super::config::{Family, ModelConfig};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvSpec {
    /// Parameter prefix, e.g. `block1.conv`.
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Pool {
    Avg2,
    Max2,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum BlockKind {
    /// conv → norm → ReLU → optional pool.
    Conv {
        conv: ConvSpec,
        norm: String,
        pool: Option<Pool>,
    },
    /// Basic residual block: two 3×3 convs plus an identity or 1×1 shortcut.
    Residual {
        conv1: ConvSpec,
        norm1: String,
        conv2: ConvSpec,
        norm2: String,
        shortcut: Option<(ConvSpec, String)>,
    },
    /// Optional global average pool, flatten, linear.
    Head {
        name: String,
        in_features: usize,
        global_pool: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockSpec {
    pub name: String,
    pub kind: BlockKind,
    /// Per-sample output shape: `[C, H, W]`, or `[K]` for the head.
    pub out_shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    /// `U(−1/√fan_in, 1/√fan_in)`.
    FanIn(usize),
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn conv(name: String, in_c: usize, out_c: usize, k: usize, stride: usize) -> ConvSpec {
    ConvSpec {
        name,
        in_c,
        out_c,
        k,
        stride,
        pad: k / 2,
    }
}

fn conv_out(side: usize, c: &ConvSpec) -> usize {
    (side + 2 * c.pad - c.k) / c.stride + 1
}

pub(crate) fn build_blocks(cfg: &ModelConfig) -> Result<Vec<BlockSpec>> {
    cfg.validate()?;
    let [c0, h0, w0] = cfg.input_shape;
    let mut blocks = Vec::new();
    let (mut c, mut h, mut w) = (c0, h0, w0);
    match cfg.family {
        Family::ConvNet => {
            for i in 1..=cfg.depth {
                let name = format!("block{i}");
                let cv = conv(format!("{name}.conv"), c, cfg.width, 3, 1);
                c = cfg.width;
                h /= 2;
                w /= 2;
                blocks.push(BlockSpec {
                    kind: BlockKind::Conv {
                        conv: cv,
                        norm: format!("{name}.norm"),
                        pool: Some(Pool::Avg2),
                    },
                    name,
                    out_shape: vec![c, h, w],
                });
            }
            blocks.push(head(c * h * w, false, cfg.num_classes));
        }
        Family::MiniVgg => {
            // VGG-11 layout: widths in units of the base width, `true` = pool after.
            const LAYOUT: [(usize, bool); 8] = [
                (1, true),
                (2, true),
                (4, false),
                (4, true),
                (8, false),
                (8, true),
                (8, false),
                (8, true),
            ];
            for (i, &(mult, pool)) in LAYOUT.iter().enumerate() {
                let name = format!("layer{}", i + 1);
                let out_c = mult * cfg.width;
                let cv = conv(format!("{name}.conv"), c, out_c, 3, 1);
                c = out_c;
                // pools that would empty the map are skipped on small inputs
                let pool = (pool && h >= 2 && w >= 2).then_some(Pool::Max2);
                if pool.is_some() {
                    h /= 2;
                    w /= 2;
                }
                blocks.push(BlockSpec {
                    kind: BlockKind::Conv {
                        conv: cv,
                        norm: format!("{name}.norm"),
                        pool,
                    },
                    name,
                    out_shape: vec![c, h, w],
                });
            }
            blocks.push(head(c, true, cfg.num_classes));
        }
        Family::MiniResNet => {
            let stem = conv("stem.conv".into(), c, cfg.width, 3, 1);
            c = cfg.width;
            blocks.push(BlockSpec {
                name: "stem".into(),
                kind: BlockKind::Conv {
                    conv: stem,
                    norm: "stem.norm".into(),
                    pool: None,
                },
                out_shape: vec![c, h, w],
            });
            for stage in 1..=4 {
                let out_c = cfg.width << (stage - 1);
                for j in 0..2 {
                    let name = format!("layer{stage}.{j}");
                    let stride = if stage > 1 && j == 0 { 2 } else { 1 };
                    let conv1 = conv(format!("{name}.conv1"), c, out_c, 3, stride);
                    let conv2 = conv(format!("{name}.conv2"), out_c, out_c, 3, 1);
                    let shortcut = (stride != 1 || c != out_c).then(|| {
                        (
                            conv(format!("{name}.down"), c, out_c, 1, stride),
                            format!("{name}.down_norm"),
                        )
                    });
                    h = conv_out(h, &conv1);
                    w = conv_out(w, &conv1);
                    c = out_c;
                    blocks.push(BlockSpec {
                        kind: BlockKind::Residual {
                            conv1,
                            norm1: format!("{name}.norm1"),
                            conv2,
                            norm2: format!("{name}.norm2"),
                            shortcut,
                        },
                        name,
                        out_shape: vec![c, h, w],
                    });
                }
            }
            blocks.push(head(c, true, cfg.num_classes));
        }
    }
    Ok(blocks)
}

fn head(in_features: usize, global_pool: bool, classes: usize) -> BlockSpec {
    BlockSpec {
        name: "fc".into(),
        kind: BlockKind::Head {
            name: "fc".into(),
            in_features,
            global_pool,
        },
        out_shape: vec![classes],
    }
}

impl BlockSpec {
    /// Learnable parameters of this block, in a fixed order.
    pub fn params(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        let conv_param = |out: &mut Vec<ParamSpec>, c: &ConvSpec| {
            out.push(ParamSpec {
                name: format!("{}.weight", c.name),
                shape: vec![c.out_c, c.in_c, c.k, c.k],
                init: Init::FanIn(c.in_c * c.k * c.k),
            });
        };
        let norm_param = |out: &mut Vec<ParamSpec>, n: &str, ch: usize| {
            out.push(ParamSpec {
                name: format!("{n}.weight"),
                shape: vec![ch],
                init: Init::Ones,
            });
            out.push(ParamSpec {
                name: format!("{n}.bias"),
                shape: vec![ch],
                init: Init::Zeros,
            });
        };
        match &self.kind {
            BlockKind::Conv { conv, norm, .. } => {
                conv_param(&mut out, conv);
                norm_param(&mut out, norm, conv.out_c);
            }
            BlockKind::Residual {
                conv1,
                norm1,
                conv2,
                norm2,
                shortcut,
            } => {
                conv_param(&mut out, conv1);
                norm_param(&mut out, norm1, conv1.out_c);
                conv_param(&mut out, conv2);
                norm_param(&mut out, norm2, conv2.out_c);
                if let Some((c, n)) = shortcut {
                    conv_param(&mut out, c);
                    norm_param(&mut out, n, c.out_c);
                }
            }
            BlockKind::Head { name, in_features, .. } => {
                let k = self.out_shape[0];
                out.push(ParamSpec {
                    name: format!("{name}.weight"),
                    shape: vec![*in_features, k],
                    init: Init::FanIn(*in_features),
                });
                out.push(ParamSpec {
                    name: format!("{name}.bias"),
                    shape: vec![k],
                    init: Init::FanIn(*in_features),
                });
            }
        }
        out
    }

    /// Normalization layers of this block with their channel counts.
    pub fn norms(&self) -> Vec<(String, usize)> {
        match &self.kind {
            BlockKind::Conv { conv, norm, .. } => vec![(norm.clone(), conv.out_c)],
            BlockKind::Residual {
                conv1,
                norm1,
                conv2,
                norm2,
                shortcut,
            } => {
                let mut v = vec![(norm1.clone(), conv1.out_c), (norm2.clone(), conv2.out_c)];
                if let Some((c, n)) = shortcut {
                    v.push((n.clone(), c.out_c));
                }
                v
            }
            BlockKind::Head { .. } => Vec::new(),
        }
    }
}
