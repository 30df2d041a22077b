use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::HybridMode;
use crate::ann::{
    default_head_specs, init_heads_forward, AnnNetSpec, AnnNetwork, AnnOutput, HeadVariant,
    InitHead, InitHeadSpec,
};
use crate::error::{Error, Result};
use crate::snn::{SnnNetSpec, SnnNetwork};
use crate::tensornet::{Tensor, WeightContainer};

/// Architecture of all three parts, stored as JSON next to the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub ann: AnnNetSpec,
    pub snn: SnnNetSpec,
    pub heads: Vec<InitHeadSpec>,
}

impl ModelSpec {
    pub fn new(ann: AnnNetSpec, snn: SnnNetSpec, variant: HeadVariant) -> Result<Self> {
        let heads = default_head_specs(&ann, &snn.layer_shapes(), variant)?;
        let spec = Self { ann, snn, heads };
        spec.validate()?;
        Ok(spec)
    }

    /// Reference U-Nets at the given sensor geometry with default heads.
    pub fn reference(ann_in_channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(
            AnnNetSpec::reference(ann_in_channels, height, width),
            SnnNetSpec::reference(height, width),
            HeadVariant::default(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.ann.validate()?;
        self.snn.validate()?;
        if (self.ann.height, self.ann.width) != (self.snn.height, self.snn.width) {
            return Err(Error::config(format!(
                "ANN input {}x{} differs from SNN input {}x{}",
                self.ann.height, self.ann.width, self.snn.height, self.snn.width
            )));
        }
        if self.ann.joints != self.snn.joints {
            return Err(Error::config("ANN and SNN predict different joint counts"));
        }
        let ann_shapes = self.ann.layer_shapes();
        let snn_shapes = self.snn.layer_shapes();
        let mut seen = vec![false; snn_shapes.len()];
        for h in &self.heads {
            let k = h.target_layer;
            let target = k
                .checked_sub(1)
                .and_then(|i| snn_shapes.get(i))
                .ok_or_else(|| Error::config(format!("init head targets unknown SNN layer {k}")))?;
            if std::mem::replace(&mut seen[k - 1], true) {
                return Err(Error::config(format!(
                    "two init heads target SNN layer {k}"
                )));
            }
            if h.out_shape != *target {
                return Err(Error::config(format!(
                    "init head {k} emits {}, SNN layer is {target}",
                    h.out_shape
                )));
            }
            let tap = h
                .tap
                .checked_sub(1)
                .and_then(|i| ann_shapes.get(i))
                .ok_or_else(|| {
                    Error::config(format!("init head {k} taps unknown ANN layer {}", h.tap))
                })?;
            if tap.c != h.in_channels || tap.h != target.h || tap.w != target.w {
                return Err(Error::config(format!(
                    "init head {k} reads ANN layer {} ({tap}) but expects {} channels at {}x{}",
                    h.tap, h.in_channels, target.h, target.w
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            source_name: path.display().to_string(),
            location: format!("line {}", e.line()),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }
}

/// The three networks with their weights bound.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridModel {
    pub spec: ModelSpec,
    pub ann: Option<AnnNetwork>,
    pub heads: Vec<InitHead>,
    pub snn: SnnNetwork,
}

impl HybridModel {
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            ann: Some(AnnNetwork::zeros(spec.ann.clone())?),
            heads: spec
                .heads
                .iter()
                .cloned()
                .map(InitHead::zeros)
                .collect::<Result<_>>()?,
            snn: SnnNetwork::zeros(spec.snn.clone())?,
            spec,
        })
    }

    pub fn random(spec: ModelSpec, rng: &mut impl Rng, gain: f32) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            ann: Some(AnnNetwork::random(spec.ann.clone(), rng, gain)?),
            heads: spec
                .heads
                .iter()
                .cloned()
                .map(|h| InitHead::random(h, rng, gain))
                .collect::<Result<_>>()?,
            snn: SnnNetwork::random(spec.snn.clone(), rng, gain)?,
            spec,
        })
    }

    /// Loads the parts `mode` needs: the SNN always, the ANN for B/C/D, the
    /// init heads for B/D. Missing tensors are a configuration error.
    pub fn from_container(
        spec: ModelSpec,
        weights: &WeightContainer,
        mode: HybridMode,
    ) -> Result<Self> {
        spec.validate()?;
        let incomplete =
            |e: Error| Error::Config(format!("weights incomplete for mode {mode}: {e}"));
        let snn = SnnNetwork::from_container(spec.snn.clone(), weights).map_err(incomplete)?;
        let ann = if mode.needs_ann() {
            Some(AnnNetwork::from_container(spec.ann.clone(), weights).map_err(incomplete)?)
        } else {
            None
        };
        let heads = if mode.injects_states() {
            spec.heads
                .iter()
                .cloned()
                .map(|h| InitHead::from_container(h, weights))
                .collect::<Result<_>>()
                .map_err(incomplete)?
        } else {
            Vec::new()
        };
        Ok(Self {
            spec,
            ann,
            heads,
            snn,
        })
    }

    pub fn write_to(&self, weights: &mut WeightContainer) -> Result<()> {
        if let Some(ann) = &self.ann {
            ann.write_to(weights)?;
        }
        for h in &self.heads {
            h.write_to(weights)?;
        }
        self.snn.write_to(weights)
    }

    pub fn ann(&self) -> Result<&AnnNetwork> {
        self.ann
            .as_ref()
            .ok_or_else(|| Error::config("model was loaded without ANN weights"))
    }

    pub fn head(&self, layer: usize) -> Option<&InitHead> {
        self.heads.iter().find(|h| h.spec.target_layer == layer)
    }

    pub fn head_mut(&mut self, layer: usize) -> Option<&mut InitHead> {
        self.heads.iter_mut().find(|h| h.spec.target_layer == layer)
    }

    /// Membrane-state predictions for every layer that has a head.
    pub fn state_maps(&self, ann_out: &AnnOutput) -> Result<BTreeMap<usize, Tensor>> {
        init_heads_forward(ann_out, &self.heads)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ann::{DecoderSpec, EncoderSpec};
    use crate::tensornet::Shape;

    pub(crate) fn small_spec() -> ModelSpec {
        let enc = |kernel, channels, pool| EncoderSpec {
            kernel,
            channels,
            pool,
        };
        let ann = AnnNetSpec {
            in_channels: 4,
            height: 16,
            width: 16,
            encoders: vec![
                enc(3, 4, false),
                enc(3, 4, true),
                enc(3, 4, true),
                enc(3, 4, true),
            ],
            decoders: vec![
                DecoderSpec {
                    kernel: 3,
                    channels: 4,
                },
                DecoderSpec {
                    kernel: 3,
                    channels: 4,
                },
                DecoderSpec {
                    kernel: 3,
                    channels: 4,
                },
            ],
            head_kernel: 3,
            joints: 2,
        };
        let snn = SnnNetSpec::u_net(16, 16, [3, 3, 3, 3, 3, 3, 3, 3], 2);
        ModelSpec::new(ann, snn, HeadVariant::default()).unwrap()
    }

    #[test]
    fn reference_spec_is_consistent() {
        let spec = ModelSpec::reference(20, 256, 256).unwrap();
        assert_eq!(spec.heads.len(), 9);
        let taps: Vec<usize> = spec.heads.iter().map(|h| h.tap).collect();
        assert_eq!(taps, [11, 10, 9, 8, 8, 8, 9, 10, 11]);
        assert_eq!(spec.heads[3].out_shape, Shape::new(256, 32, 32));
    }

    #[test]
    fn head_shape_contract_checked() {
        let mut spec = small_spec();
        spec.heads[2].out_shape = Shape::new(5, 4, 4);
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        let mut spec = small_spec();
        spec.heads[1].target_layer = 1;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn partial_weights_per_mode() {
        let spec = small_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = HybridModel::random(spec.clone(), &mut rng, 1.0).unwrap();
        let mut only_snn = WeightContainer::new();
        model.snn.write_to(&mut only_snn).unwrap();
        assert!(HybridModel::from_container(spec.clone(), &only_snn, HybridMode::A).is_ok());
        for mode in [HybridMode::B, HybridMode::C, HybridMode::D] {
            let err = HybridModel::from_container(spec.clone(), &only_snn, mode).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{err}");
        }
        let mut all = WeightContainer::new();
        model.write_to(&mut all).unwrap();
        let back = HybridModel::from_container(spec, &all, HybridMode::D).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = small_spec();
        assert_eq!(
            serde_json::from_str::<ModelSpec>(&spec.to_json()).unwrap(),
            spec
        );
    }
}
