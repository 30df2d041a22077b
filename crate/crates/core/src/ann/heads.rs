use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{AnnNetSpec, AnnOutput};
use crate::error::{Error, Result};
use crate::tensornet::{
    leaky_relu, sigmoid, BatchNorm, Conv2d, ConvLayerSpec, Shape, Tensor, WeightContainer,
    DEFAULT_BN_EPS, LEAKY_SLOPE,
};

/// State-initialization block layouts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadVariant {
    /// Conv + BN + LeakyReLU + Conv + BN
    #[default]
    ConvBnLreluConvBn,
    ConvBnLreluConvBnLrelu,
    ConvBnLreluConvBnSigmoid,
    ConvBnLreluConv,
    ConvBnLrelu,
}

impl HeadVariant {
    pub const ALL: [HeadVariant; 5] = [
        HeadVariant::ConvBnLreluConvBn,
        HeadVariant::ConvBnLreluConvBnLrelu,
        HeadVariant::ConvBnLreluConvBnSigmoid,
        HeadVariant::ConvBnLreluConv,
        HeadVariant::ConvBnLrelu,
    ];

    fn has_second_conv(self) -> bool {
        self != HeadVariant::ConvBnLrelu
    }

    fn has_second_bn(self) -> bool {
        matches!(
            self,
            HeadVariant::ConvBnLreluConvBn
                | HeadVariant::ConvBnLreluConvBnLrelu
                | HeadVariant::ConvBnLreluConvBnSigmoid
        )
    }
}

/// One head: which ANN activation it reads and which SNN layer it fills.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitHeadSpec {
    /// 1-based spiking layer whose membrane state this head predicts.
    pub target_layer: usize,
    /// 1-based ANN layer whose activation is the head input.
    pub tap: usize,
    pub in_channels: usize,
    pub out_shape: Shape,
    #[serde(default)]
    pub variant: HeadVariant,
    pub kernel: usize,
}

impl InitHeadSpec {
    fn conv_specs(&self) -> (ConvLayerSpec, Option<ConvLayerSpec>) {
        let c = self.out_shape.c;
        let first = ConvLayerSpec::new(self.kernel, 1, self.in_channels, c);
        let second = self.variant.has_second_conv().then(|| {
            ConvLayerSpec::new(self.kernel, 1, c, c).with_bias(!self.variant.has_second_bn())
        });
        (first, second)
    }

    /// MACs per inference (convolutions only).
    pub fn macs(&self) -> u64 {
        let (a, b) = self.conv_specs();
        let (h, w) = (self.out_shape.h, self.out_shape.w);
        crate::tensornet::count_macs(&a, h, w)
            + b.map_or(0, |b| crate::tensornet::count_macs(&b, h, w))
    }
}

/// For every spiking layer, tap the ANN decoder activation at the same
/// resolution (falling back to an encoder activation when no decoder matches).
pub fn default_head_specs(
    ann: &AnnNetSpec,
    snn_layer_shapes: &[Shape],
    variant: HeadVariant,
) -> Result<Vec<InitHeadSpec>> {
    let ann_shapes = ann.layer_shapes();
    let n_feat = ann.encoders.len() + ann.decoders.len();
    snn_layer_shapes
        .iter()
        .enumerate()
        .map(|(k, target)| {
            let same_res = |i: &usize| ann_shapes[*i].h == target.h && ann_shapes[*i].w == target.w;
            let tap = (ann.encoders.len()..n_feat)
                .find(same_res)
                .or_else(|| (0..ann.encoders.len()).find(same_res))
                .ok_or_else(|| {
                    Error::config(format!(
                        "no ANN activation at {}x{} for SNN layer {}",
                        target.h,
                        target.w,
                        k + 1
                    ))
                })?;
            Ok(InitHeadSpec {
                target_layer: k + 1,
                tap: tap + 1,
                in_channels: ann_shapes[tap].c,
                out_shape: *target,
                variant,
                kernel: 1,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitHead {
    pub spec: InitHeadSpec,
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Option<Conv2d>,
    bn2: Option<BatchNorm>,
}

fn bn_names(prefix: &str) -> [String; 4] {
    ["gamma", "beta", "mean", "var"].map(|p| format!("{prefix}_{p}"))
}

fn read_bn(weights: &WeightContainer, base: &str, prefix: &str, c: usize) -> Result<BatchNorm> {
    let [g, b, m, v] = bn_names(prefix).map(|n| format!("{base}.{n}"));
    Ok(BatchNorm {
        gamma: weights.require(&g, &[c])?.to_vec(),
        beta: weights.require(&b, &[c])?.to_vec(),
        mean: weights.require(&m, &[c])?.to_vec(),
        var: weights.require(&v, &[c])?.to_vec(),
        eps: DEFAULT_BN_EPS,
    })
}

pub fn write_bn(
    weights: &mut WeightContainer,
    base: &str,
    prefix: &str,
    bn: &BatchNorm,
) -> Result<()> {
    let c = bn.channels();
    let names = bn_names(prefix);
    for (name, data) in names.iter().zip([&bn.gamma, &bn.beta, &bn.mean, &bn.var]) {
        weights.insert(&format!("{base}.{name}"), &[c], data.clone())?;
    }
    Ok(())
}

fn random_conv(spec: ConvLayerSpec, rng: &mut impl Rng, gain: f32) -> Conv2d {
    let a = gain / ((spec.in_channels * spec.kernel * spec.kernel) as f32).sqrt();
    Conv2d {
        spec,
        weight: (0..spec.weight_len())
            .map(|_| rng.random_range(-a..=a))
            .collect(),
        bias: spec.bias.then(|| vec![0.0; spec.out_channels]),
    }
}

impl InitHead {
    fn check(spec: &InitHeadSpec) -> Result<()> {
        if spec.kernel.is_multiple_of(2) {
            return Err(Error::config("init head kernel must be odd"));
        }
        Ok(())
    }

    pub fn zeros(spec: InitHeadSpec) -> Result<Self> {
        Self::check(&spec)?;
        let (a, b) = spec.conv_specs();
        let c = spec.out_shape.c;
        Ok(Self {
            conv1: Conv2d::zeros(a),
            bn1: BatchNorm::identity(c),
            conv2: b.map(Conv2d::zeros),
            bn2: spec.variant.has_second_bn().then(|| BatchNorm::identity(c)),
            spec,
        })
    }

    pub fn random(spec: InitHeadSpec, rng: &mut impl Rng, gain: f32) -> Result<Self> {
        Self::check(&spec)?;
        let (a, b) = spec.conv_specs();
        let c = spec.out_shape.c;
        Ok(Self {
            conv1: random_conv(a, rng, gain),
            bn1: BatchNorm::identity(c),
            conv2: b.map(|b| random_conv(b, rng, gain)),
            bn2: spec.variant.has_second_bn().then(|| BatchNorm::identity(c)),
            spec,
        })
    }

    pub fn from_container(spec: InitHeadSpec, weights: &WeightContainer) -> Result<Self> {
        Self::check(&spec)?;
        let base = format!("init.{}", spec.target_layer);
        let (a, b) = spec.conv_specs();
        let c = spec.out_shape.c;
        let conv1 = Conv2d::new(
            a,
            weights
                .require(&format!("{base}.conv1_w"), &a.weight_shape())?
                .to_vec(),
            None,
        )?;
        let bn1 = read_bn(weights, &base, "bn1", c)?;
        let conv2 = match b {
            Some(b) => {
                let w = weights.require(&format!("{base}.conv2_w"), &b.weight_shape())?;
                let bias = if b.bias {
                    Some(weights.require(&format!("{base}.conv2_b"), &[c])?.to_vec())
                } else {
                    None
                };
                Some(Conv2d::new(b, w.to_vec(), bias)?)
            }
            None => None,
        };
        let bn2 = if spec.variant.has_second_bn() {
            Some(read_bn(weights, &base, "bn2", c)?)
        } else {
            None
        };
        Ok(Self {
            spec,
            conv1,
            bn1,
            conv2,
            bn2,
        })
    }

    pub fn write_to(&self, weights: &mut WeightContainer) -> Result<()> {
        let base = format!("init.{}", self.spec.target_layer);
        weights.insert(
            &format!("{base}.conv1_w"),
            &self.conv1.spec.weight_shape(),
            self.conv1.weight.clone(),
        )?;
        write_bn(weights, &base, "bn1", &self.bn1)?;
        if let Some(c2) = &self.conv2 {
            weights.insert(
                &format!("{base}.conv2_w"),
                &c2.spec.weight_shape(),
                c2.weight.clone(),
            )?;
            if let Some(b) = &c2.bias {
                weights.insert(&format!("{base}.conv2_b"), &[b.len()], b.clone())?;
            }
        }
        if let Some(bn2) = &self.bn2 {
            write_bn(weights, &base, "bn2", bn2)?;
        }
        Ok(())
    }

    pub fn bn1_mut(&mut self) -> &mut BatchNorm {
        &mut self.bn1
    }

    /// The last BatchNorm in the stack (the one that sets the output offset).
    pub fn final_bn_mut(&mut self) -> &mut BatchNorm {
        match &mut self.bn2 {
            Some(bn) => bn,
            None => &mut self.bn1,
        }
    }

    pub fn forward(&self, feature: &Tensor) -> Result<Tensor> {
        let s = feature.shape();
        if s.c != self.spec.in_channels
            || s.h != self.spec.out_shape.h
            || s.w != self.spec.out_shape.w
        {
            return Err(Error::contract(format!(
                "init head for layer {} expects {}x{}x{} input, got {s}",
                self.spec.target_layer,
                self.spec.in_channels,
                self.spec.out_shape.h,
                self.spec.out_shape.w
            )));
        }
        let mut x = self.bn1.forward(&self.conv1.forward(feature)?)?;
        x = leaky_relu(&x, LEAKY_SLOPE);
        if let Some(c2) = &self.conv2 {
            x = c2.forward(&x)?;
        }
        if let Some(bn2) = &self.bn2 {
            x = bn2.forward(&x)?;
        }
        Ok(match self.spec.variant {
            HeadVariant::ConvBnLreluConvBnLrelu => leaky_relu(&x, LEAKY_SLOPE),
            HeadVariant::ConvBnLreluConvBnSigmoid => sigmoid(&x),
            _ => x,
        })
    }
}

/// Runs every head on its tapped ANN activation. Keys are SNN layer indices.
pub fn init_heads_forward(
    features: &AnnOutput,
    heads: &[InitHead],
) -> Result<BTreeMap<usize, Tensor>> {
    heads
        .iter()
        .map(|head| {
            let feature = features.feature(head.spec.tap).ok_or_else(|| {
                Error::contract(format!(
                    "ANN produced no activation for layer {} (needed by head {})",
                    head.spec.tap, head.spec.target_layer
                ))
            })?;
            Ok((head.spec.target_layer, head.forward(feature)?))
        })
        .collect()
}
