use serde::{Deserialize, Serialize};

use crate::ann::StateGroup;
use crate::error::{Error, Result};
use crate::tensornet::{count_macs, ConvLayerSpec, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnnLayerKind {
    /// Stride-1 conv on the raw event counts.
    SpikeEncoder,
    /// Strided conv, halves the resolution.
    Encoder,
    /// Stride-1 conv whose drive is added to the previous layer's drive.
    Residual,
    /// Concatenates a skip layer's spikes, upsamples x2, then convolves.
    Decoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnnLayerSpec {
    pub kind: SnnLayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
    /// 1-based layer whose spikes are concatenated into a decoder's input.
    #[serde(default)]
    pub skip: Option<usize>,
}

/// One convolution in the spiking network together with what it reads.
#[derive(Clone, Debug, PartialEq)]
pub struct SnnConvPlan {
    /// 1-based; the prediction conv is `num_layers() + 1`.
    pub layer: usize,
    pub conv: ConvLayerSpec,
    pub out_h: usize,
    pub out_w: usize,
    /// Spike sources consumed by this conv: 0 is the event input, k ≥ 1 a
    /// spiking layer.
    pub sources: Vec<usize>,
    /// Neurons across all sources, before any upsampling.
    pub input_neurons: u64,
}

impl SnnConvPlan {
    pub fn dense_macs(&self) -> u64 {
        count_macs(&self.conv, self.out_h, self.out_w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnnNetSpec {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub layers: Vec<SnnLayerSpec>,
    pub prediction_kernel: usize,
    pub joints: usize,
}

impl SnnNetSpec {
    /// Spike encoder, three strided encoders, two residual blocks and three
    /// decoders, followed by a 1x1 prediction conv.
    pub fn reference(height: usize, width: usize) -> Self {
        Self::u_net(height, width, [32, 64, 128, 256, 256, 128, 64, 32], 13)
    }

    /// Reference topology with custom widths
    /// `[enc1, enc2, enc3, enc4, residual, dec7, dec8, dec9]`.
    /// The residual width must equal `enc4`.
    pub fn u_net(height: usize, width: usize, ch: [usize; 8], joints: usize) -> Self {
        let [e1, e2, e3, e4, r, d7, d8, d9] = ch;
        let layer = |kind, kernel, stride, channels, skip| SnnLayerSpec {
            kind,
            kernel,
            stride,
            channels,
            skip,
        };
        use SnnLayerKind::*;
        Self {
            in_channels: 2,
            height,
            width,
            layers: vec![
                layer(SpikeEncoder, 5, 1, e1, None),
                layer(Encoder, 5, 2, e2, None),
                layer(Encoder, 5, 2, e3, None),
                layer(Encoder, 5, 2, e4, None),
                layer(Residual, 3, 1, r, None),
                layer(Residual, 3, 1, r, None),
                layer(Decoder, 5, 1, d7, Some(4)),
                layer(Decoder, 5, 1, d8, Some(3)),
                layer(Decoder, 5, 1, d9, Some(2)),
            ],
            prediction_kernel: 1,
            joints,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn prediction_layer(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(self.in_channels, self.height, self.width)
    }

    pub fn output_shape(&self) -> Shape {
        let last = self
            .layer_shapes()
            .last()
            .copied()
            .unwrap_or(self.input_shape());
        Shape::new(self.joints, last.h, last.w)
    }

    /// Neuron tensor shape of every spiking layer.
    pub fn layer_shapes(&self) -> Vec<Shape> {
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.layers.len());
        let (mut h, mut w) = (self.height, self.width);
        for l in &self.layers {
            match l.kind {
                SnnLayerKind::Decoder => {
                    h *= 2;
                    w *= 2;
                }
                _ => {
                    h = h.div_ceil(l.stride);
                    w = w.div_ceil(l.stride);
                }
            }
            shapes.push(Shape::new(l.channels, h, w));
        }
        shapes
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("SNN needs at least one spiking layer"));
        }
        if self.in_channels == 0 || self.joints == 0 {
            return Err(Error::config(
                "SNN input channels and joints must be positive",
            ));
        }
        if self.prediction_kernel.is_multiple_of(2) {
            return Err(Error::config("SNN prediction kernel must be odd"));
        }
        let shapes = self.layer_shapes();
        for (i, l) in self.layers.iter().enumerate() {
            let k = i + 1;
            if l.kernel % 2 == 0 || l.stride == 0 || l.channels == 0 {
                return Err(Error::config(format!(
                    "SNN layer {k}: bad kernel/stride/channels"
                )));
            }
            match l.kind {
                SnnLayerKind::Encoder => {
                    let prev = if i == 0 {
                        self.input_shape()
                    } else {
                        shapes[i - 1]
                    };
                    if prev.h % l.stride != 0 || prev.w % l.stride != 0 {
                        return Err(Error::config(format!(
                            "SNN layer {k}: {}x{} not divisible by stride {}",
                            prev.h, prev.w, l.stride
                        )));
                    }
                }
                SnnLayerKind::Residual => {
                    if i == 0 || shapes[i - 1] != shapes[i] || l.stride != 1 {
                        return Err(Error::config(format!(
                            "SNN layer {k}: residual block must preserve its input shape"
                        )));
                    }
                }
                SnnLayerKind::Decoder => {
                    let skip = l.skip.ok_or_else(|| {
                        Error::config(format!("SNN layer {k}: decoder needs a skip layer"))
                    })?;
                    if i == 0 || skip == 0 || skip >= k {
                        return Err(Error::config(format!(
                            "SNN layer {k}: skip layer {skip} must precede it"
                        )));
                    }
                    let (prev, sk) = (shapes[i - 1], shapes[skip - 1]);
                    if prev.h != sk.h || prev.w != sk.w || l.stride != 1 {
                        return Err(Error::config(format!(
                            "SNN layer {k}: skip layer {skip} is {sk}, previous layer is {prev}"
                        )));
                    }
                }
                SnnLayerKind::SpikeEncoder => {
                    if i != 0 {
                        return Err(Error::config("spike encoder must be the first layer"));
                    }
                }
            }
            if l.kind != SnnLayerKind::Decoder && l.skip.is_some() {
                return Err(Error::config(format!(
                    "SNN layer {k}: only decoders take a skip"
                )));
            }
        }
        Ok(())
    }

    fn source_shapes(&self, shapes: &[Shape], i: usize) -> Vec<(usize, Shape)> {
        let prev = if i == 0 {
            (0, self.input_shape())
        } else {
            (i, shapes[i - 1])
        };
        let mut sources = vec![prev];
        if let Some(skip) = self.layers[i].skip {
            sources.push((skip, shapes[skip - 1]));
        }
        sources
    }

    /// Every convolution, spiking layers first, prediction conv last. All
    /// spiking convs are bias-free because a batch norm follows them.
    pub fn conv_plan(&self) -> Vec<SnnConvPlan> {
        let shapes = self.layer_shapes();
        let mut plan: Vec<SnnConvPlan> = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let sources = self.source_shapes(&shapes, i);
                let in_c: usize = sources.iter().map(|(_, s)| s.c).sum();
                SnnConvPlan {
                    layer: i + 1,
                    conv: ConvLayerSpec::new(l.kernel, l.stride, in_c, l.channels),
                    out_h: shapes[i].h,
                    out_w: shapes[i].w,
                    input_neurons: sources.iter().map(|(_, s)| s.len() as u64).sum(),
                    sources: sources.into_iter().map(|(k, _)| k).collect(),
                }
            })
            .collect();
        let last = *shapes.last().unwrap_or(&self.input_shape());
        plan.push(SnnConvPlan {
            layer: self.prediction_layer(),
            conv: ConvLayerSpec::new(self.prediction_kernel, 1, last.c, self.joints),
            out_h: last.h,
            out_w: last.w,
            sources: vec![self.layers.len()],
            input_neurons: last.len() as u64,
        });
        plan
    }

    pub fn total_dense_macs(&self) -> u64 {
        self.conv_plan().iter().map(SnnConvPlan::dense_macs).sum()
    }

    /// Spiking neurons across all layers (excluding the event input).
    pub fn neuron_count(&self) -> u64 {
        self.layer_shapes().iter().map(|s| s.len() as u64).sum()
    }

    /// Group used when summarizing initialized membrane potentials.
    pub fn group_of(&self, layer: usize) -> StateGroup {
        if layer == self.layers.len() {
            return StateGroup::Last;
        }
        match self.layers.get(layer.wrapping_sub(1)).map(|l| l.kind) {
            Some(SnnLayerKind::Residual) => StateGroup::Residual,
            Some(SnnLayerKind::Decoder) => StateGroup::Decoder,
            _ => StateGroup::Encoder,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_spatial_trace() {
        let spec = SnnNetSpec::reference(256, 256);
        spec.validate().unwrap();
        let res: Vec<usize> = spec.layer_shapes().iter().map(|s| s.h).collect();
        assert_eq!(res, [256, 128, 64, 32, 32, 32, 64, 128, 256]);
        assert_eq!(spec.output_shape(), Shape::new(13, 256, 256));
        assert_eq!(spec.conv_plan().len(), 10);
    }

    #[test]
    fn decoder_inputs_include_skip_channels() {
        let plan = SnnNetSpec::reference(256, 256).conv_plan();
        assert_eq!(plan[6].conv.in_channels, 256 + 256);
        assert_eq!(plan[6].sources, vec![6, 4]);
        assert_eq!(plan[8].conv.in_channels, 64 + 64);
        assert_eq!(plan[8].input_neurons, 2 * 64 * 128 * 128);
        assert_eq!(plan[0].sources, vec![0]);
        assert_eq!(plan[9].conv.kernel, 1);
        assert_eq!(plan[9].dense_macs(), 32 * 13 * 256 * 256);
    }

    #[test]
    fn groups() {
        let spec = SnnNetSpec::reference(64, 64);
        let g: Vec<StateGroup> = (1..=9).map(|k| spec.group_of(k)).collect();
        use StateGroup::*;
        assert_eq!(
            g,
            [Encoder, Encoder, Encoder, Encoder, Residual, Residual, Decoder, Decoder, Last]
        );
    }

    #[test]
    fn rejects_bad_topologies() {
        let mut spec = SnnNetSpec::reference(64, 64);
        spec.layers[6].skip = Some(3);
        assert!(spec.validate().is_err());
        let mut spec = SnnNetSpec::reference(60, 60);
        spec.height = 62;
        assert!(spec.validate().is_err());
        let mut spec = SnnNetSpec::reference(64, 64);
        spec.layers[4].channels = 128;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let spec = SnnNetSpec::reference(32, 48);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<SnnNetSpec>(&text).unwrap(), spec);
    }
}
