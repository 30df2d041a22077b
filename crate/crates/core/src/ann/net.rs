use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensornet::{
    avg_pool2, concat_channels, count_macs, leaky_relu, upsample_bilinear2, Conv2d, ConvLayerSpec,
    Shape, Tensor, WeightContainer, LEAKY_SLOPE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub kernel: usize,
    pub channels: usize,
    /// 2x2 average pooling before the two convolutions.
    pub pool: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSpec {
    pub kernel: usize,
    pub channels: usize,
}

/// Encoder/decoder stack. Layers are numbered from 1: encoders first, then
/// decoders, then the prediction conv.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnNetSpec {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub encoders: Vec<EncoderSpec>,
    pub decoders: Vec<DecoderSpec>,
    pub head_kernel: usize,
    pub joints: usize,
}

impl AnnNetSpec {
    /// The 12-group network at `height x width` (256x256 for DHP19,
    /// 256x320 for Event-Human3.6M). `in_channels` is 20 for stacked
    /// histograms and 3 for RGB.
    pub fn reference(in_channels: usize, height: usize, width: usize) -> Self {
        let enc = |kernel, channels, pool| EncoderSpec {
            kernel,
            channels,
            pool,
        };
        let dec = |channels| DecoderSpec {
            kernel: 3,
            channels,
        };
        Self {
            in_channels,
            height,
            width,
            encoders: vec![
                enc(7, 32, false),
                enc(5, 64, true),
                enc(3, 128, true),
                enc(3, 256, true),
                enc(3, 512, true),
                enc(3, 512, true),
            ],
            decoders: vec![dec(512), dec(256), dec(128), dec(64), dec(32)],
            head_kernel: 3,
            joints: 13,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.encoders.len() + self.decoders.len() + 1
    }

    pub fn prediction_layer(&self) -> usize {
        self.num_layers()
    }

    /// 0-based encoder index whose output is concatenated into decoder `j`.
    pub fn skip_for_decoder(&self, j: usize) -> usize {
        self.encoders.len() - 2 - j
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoders.is_empty() {
            return Err(Error::config("ANN needs at least one encoder"));
        }
        if self.decoders.len() + 1 > self.encoders.len() {
            return Err(Error::config("ANN has more decoders than skip connections"));
        }
        let pools = self.encoders.iter().filter(|e| e.pool).count();
        if pools != self.decoders.len() {
            return Err(Error::config(format!(
                "ANN pools {pools} times but upsamples {} times",
                self.decoders.len()
            )));
        }
        let div = 1usize << pools;
        if !self.height.is_multiple_of(div) || !self.width.is_multiple_of(div) {
            return Err(Error::config(format!(
                "ANN input {}x{} is not divisible by {div}",
                self.height, self.width
            )));
        }
        let shapes = self.layer_shapes();
        let ne = self.encoders.len();
        for j in 0..self.decoders.len() {
            let (dec, skip) = (shapes[ne + j], shapes[self.skip_for_decoder(j)]);
            if (dec.h, dec.w) != (skip.h, skip.w) {
                return Err(Error::config(format!(
                    "decoder {} at {}x{} has no encoder skip at the same resolution",
                    ne + j + 1,
                    dec.h,
                    dec.w
                )));
            }
        }
        Ok(())
    }

    /// Output shape of every layer, 1-based layer `i` at index `i - 1`.
    pub fn layer_shapes(&self) -> Vec<Shape> {
        let (mut h, mut w) = (self.height, self.width);
        let mut shapes = Vec::with_capacity(self.num_layers());
        for e in &self.encoders {
            if e.pool {
                h /= 2;
                w /= 2;
            }
            shapes.push(Shape::new(e.channels, h, w));
        }
        for d in &self.decoders {
            h *= 2;
            w *= 2;
            shapes.push(Shape::new(d.channels, h, w));
        }
        shapes.push(Shape::new(self.joints, h, w));
        shapes
    }

    /// Conv specs per layer, with the spatial size each one runs at.
    pub fn conv_plan(&self) -> Vec<(usize, &'static str, ConvLayerSpec, usize, usize)> {
        let shapes = self.layer_shapes();
        let mut plan = Vec::new();
        let mut c_in = self.in_channels;
        for (i, e) in self.encoders.iter().enumerate() {
            let s = shapes[i];
            plan.push((
                i + 1,
                "conv1",
                ConvLayerSpec::new(e.kernel, 1, c_in, e.channels).with_bias(true),
                s.h,
                s.w,
            ));
            plan.push((
                i + 1,
                "conv2",
                ConvLayerSpec::new(e.kernel, 1, e.channels, e.channels).with_bias(true),
                s.h,
                s.w,
            ));
            c_in = e.channels;
        }
        let ne = self.encoders.len();
        for (j, d) in self.decoders.iter().enumerate() {
            let s = shapes[ne + j];
            let skip_c = self.encoders[self.skip_for_decoder(j)].channels;
            plan.push((
                ne + j + 1,
                "conv1",
                ConvLayerSpec::new(d.kernel, 1, c_in, d.channels).with_bias(true),
                s.h,
                s.w,
            ));
            plan.push((
                ne + j + 1,
                "conv2",
                ConvLayerSpec::new(d.kernel, 1, d.channels + skip_c, d.channels).with_bias(true),
                s.h,
                s.w,
            ));
            c_in = d.channels;
        }
        plan.push((
            self.num_layers(),
            "conv",
            ConvLayerSpec::new(self.head_kernel, 1, c_in, self.joints).with_bias(true),
            self.height,
            self.width,
        ));
        plan
    }

    /// Static MACs per inference, summed over every conv.
    pub fn total_macs(&self) -> u64 {
        self.conv_plan()
            .iter()
            .map(|(_, _, spec, h, w)| count_macs(spec, *h, *w))
            .sum()
    }
}

/// Result of one ANN inference: every layer's activation plus the heatmaps.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnOutput {
    /// Activations of layers `1..=encoders+decoders`, 0-based.
    pub features: Vec<Tensor>,
    pub o_init: Tensor,
    /// MACs actually executed by this forward pass.
    pub executed_macs: u64,
}

impl AnnOutput {
    /// Activation of 1-based layer `layer`.
    pub fn feature(&self, layer: usize) -> Option<&Tensor> {
        layer.checked_sub(1).and_then(|i| self.features.get(i))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnNetwork {
    pub spec: AnnNetSpec,
    /// Two convs per encoder/decoder group, in layer order.
    groups: Vec<(Conv2d, Conv2d)>,
    prediction: Conv2d,
}

impl AnnNetwork {
    fn build(
        spec: AnnNetSpec,
        mut make: impl FnMut(usize, &str, ConvLayerSpec) -> Result<Conv2d>,
    ) -> Result<Self> {
        spec.validate()?;
        let plan = spec.conv_plan();
        let mut groups = Vec::new();
        let mut iter = plan.into_iter();
        for _ in 0..spec.encoders.len() + spec.decoders.len() {
            let (l1, n1, s1, _, _) = iter.next().unwrap();
            let (l2, n2, s2, _, _) = iter.next().unwrap();
            groups.push((make(l1, n1, s1)?, make(l2, n2, s2)?));
        }
        let (lp, np, sp, _, _) = iter.next().unwrap();
        let prediction = make(lp, np, sp)?;
        Ok(Self {
            spec,
            groups,
            prediction,
        })
    }

    pub fn zeros(spec: AnnNetSpec) -> Result<Self> {
        Self::build(spec, |_, _, s| Ok(Conv2d::zeros(s)))
    }

    /// Uniform `[-gain/sqrt(fan_in), gain/sqrt(fan_in)]` weights, zero biases.
    pub fn random(spec: AnnNetSpec, rng: &mut impl Rng, gain: f32) -> Result<Self> {
        Self::build(spec, |_, _, s| {
            let fan_in = (s.in_channels * s.kernel * s.kernel) as f32;
            let a = gain / fan_in.sqrt();
            let w = (0..s.weight_len())
                .map(|_| rng.random_range(-a..=a))
                .collect();
            Conv2d::new(s, w, Some(vec![0.0; s.out_channels]))
        })
    }

    pub fn from_container(spec: AnnNetSpec, weights: &WeightContainer) -> Result<Self> {
        Self::build(spec, |layer, name, s| {
            let w = weights.require(&format!("ann.{layer}.{name}_w"), &s.weight_shape())?;
            let b = weights.require(&format!("ann.{layer}.{name}_b"), &[s.out_channels])?;
            Conv2d::new(s, w.to_vec(), Some(b.to_vec()))
        })
    }

    pub fn write_to(&self, weights: &mut WeightContainer) -> Result<()> {
        let plan = self.spec.conv_plan();
        let convs = self
            .groups
            .iter()
            .flat_map(|(a, b)| [a, b])
            .chain(std::iter::once(&self.prediction));
        for ((layer, name, _, _, _), conv) in plan.into_iter().zip(convs) {
            weights.insert(
                &format!("ann.{layer}.{name}_w"),
                &conv.spec.weight_shape(),
                conv.weight.clone(),
            )?;
            weights.insert(
                &format!("ann.{layer}.{name}_b"),
                &[conv.spec.out_channels],
                conv.bias
                    .clone()
                    .unwrap_or_else(|| vec![0.0; conv.spec.out_channels]),
            )?;
        }
        Ok(())
    }

    pub fn prediction_mut(&mut self) -> &mut Conv2d {
        &mut self.prediction
    }

    /// Runs the U-Net. Every conv is followed by LeakyReLU(0.1) except the
    /// prediction layer.
    pub fn forward(&self, input: &Tensor) -> Result<AnnOutput> {
        let spec = &self.spec;
        let expected = Shape::new(spec.in_channels, spec.height, spec.width);
        if input.shape() != expected {
            return Err(Error::contract(format!(
                "ANN expects input {expected}, got {}",
                input.shape()
            )));
        }
        let mut macs = 0u64;
        let mut run = |conv: &Conv2d, x: &Tensor, act: bool| -> Result<Tensor> {
            macs += conv.macs(x.shape());
            let y = conv.forward(x)?;
            Ok(if act { leaky_relu(&y, LEAKY_SLOPE) } else { y })
        };

        let ne = spec.encoders.len();
        let mut features: Vec<Tensor> = Vec::with_capacity(self.groups.len());
        let mut x = input.clone();
        for (e, (c1, c2)) in spec.encoders.iter().zip(&self.groups) {
            if e.pool {
                x = avg_pool2(&x)?;
            }
            x = run(c1, &x, true)?;
            x = run(c2, &x, true)?;
            features.push(x.clone());
        }
        for (j, (c1, c2)) in self.groups[ne..].iter().enumerate() {
            x = upsample_bilinear2(&x);
            x = run(c1, &x, true)?;
            x = concat_channels(&x, &features[spec.skip_for_decoder(j)])?;
            x = run(c2, &x, true)?;
            features.push(x.clone());
        }
        let o_init = run(&self.prediction, &x, false)?;
        Ok(AnnOutput {
            features,
            o_init,
            executed_macs: macs,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn small() -> AnnNetSpec {
        AnnNetSpec {
            in_channels: 4,
            height: 16,
            width: 8,
            encoders: vec![
                EncoderSpec {
                    kernel: 3,
                    channels: 4,
                    pool: false,
                },
                EncoderSpec {
                    kernel: 3,
                    channels: 6,
                    pool: true,
                },
                EncoderSpec {
                    kernel: 3,
                    channels: 8,
                    pool: true,
                },
            ],
            decoders: vec![
                DecoderSpec {
                    kernel: 3,
                    channels: 6,
                },
                DecoderSpec {
                    kernel: 3,
                    channels: 4,
                },
            ],
            head_kernel: 3,
            joints: 2,
        }
    }

    #[test]
    fn reference_layer_trace() {
        let spec = AnnNetSpec::reference(20, 256, 256);
        spec.validate().unwrap();
        let res: Vec<usize> = spec.layer_shapes().iter().map(|s| s.h).collect();
        assert_eq!(
            res,
            vec![256, 128, 64, 32, 16, 8, 16, 32, 64, 128, 256, 256]
        );
        let ch: Vec<usize> = spec.layer_shapes().iter().map(|s| s.c).collect();
        assert_eq!(
            ch,
            vec![32, 64, 128, 256, 512, 512, 512, 256, 128, 64, 32, 13]
        );
        // 2 convs per group plus the prediction conv: 23 conv layers.
        assert_eq!(spec.conv_plan().len(), 23);
    }

    #[test]
    fn zero_net_gives_zero_heatmaps() {
        let net = AnnNetwork::zeros(small()).unwrap();
        let out = net.forward(&Tensor::zeros(Shape::new(4, 16, 8))).unwrap();
        assert_eq!(out.o_init.shape(), Shape::new(2, 16, 8));
        assert!(out.o_init.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.features.len(), 5);
    }

    #[test]
    fn forward_is_deterministic_and_counts_macs() {
        let spec = small();
        let net = AnnNetwork::random(spec.clone(), &mut ChaCha8Rng::seed_from_u64(3), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = Tensor::from_vec(
            Shape::new(4, 16, 8),
            (0..512).map(|_| rng.random_range(0.0..3.0)).collect(),
        )
        .unwrap();
        let a = net.forward(&input).unwrap();
        let b = net.forward(&input).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.executed_macs, spec.total_macs());
        for (f, s) in a.features.iter().zip(spec.layer_shapes()) {
            assert_eq!(f.shape(), s);
        }
    }

    #[test]
    fn container_round_trip_and_channel_mismatch() {
        let spec = small();
        let net = AnnNetwork::random(spec.clone(), &mut ChaCha8Rng::seed_from_u64(9), 1.0).unwrap();
        let mut c = WeightContainer::new();
        net.write_to(&mut c).unwrap();
        assert_eq!(AnnNetwork::from_container(spec.clone(), &c).unwrap(), net);
        let mut wrong = spec;
        wrong.in_channels = 3;
        assert!(AnnNetwork::from_container(wrong, &c).is_err());
        assert!(net.forward(&Tensor::zeros(Shape::new(3, 16, 8))).is_err());
    }
}
