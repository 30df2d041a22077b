use rand::Rng;

use crate::ann::write_bn;
use crate::error::{Error, Result};
use crate::events::{slice_spike_tensor, EventStream};
use crate::lif::{lif_step, LifParams};
use crate::tensornet::{
    add, concat_channels, upsample_nearest2, BatchNorm, Conv2d, Tensor, WeightContainer,
    DEFAULT_BN_EPS,
};

use super::activity::SpikeActivityRecord;
use super::spec::{SnnLayerKind, SnnNetSpec};
use super::state::SnnState;

/// Conv followed by inference-mode batch norm; feeds a LIF layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikingConv {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnnNetwork {
    pub spec: SnnNetSpec,
    pub layers: Vec<SpikingConv>,
    pub prediction: Conv2d,
}

impl SnnNetwork {
    fn build(
        spec: SnnNetSpec,
        mut make: impl FnMut(&crate::tensornet::ConvLayerSpec) -> Vec<f32>,
    ) -> Result<Self> {
        spec.validate()?;
        let plan = spec.conv_plan();
        let (pred, spiking) = plan
            .split_last()
            .expect("plan includes the prediction conv");
        let layers = spiking
            .iter()
            .map(|p| {
                Ok(SpikingConv {
                    conv: Conv2d::new(p.conv, make(&p.conv), None)?,
                    bn: BatchNorm::identity(p.conv.out_channels),
                })
            })
            .collect::<Result<_>>()?;
        let prediction = Conv2d::new(pred.conv, make(&pred.conv), None)?;
        Ok(Self {
            spec,
            layers,
            prediction,
        })
    }

    pub fn zeros(spec: SnnNetSpec) -> Result<Self> {
        Self::build(spec, |c| vec![0.0; c.weight_len()])
    }

    /// Uniform weights in `±gain / sqrt(fan_in)`, identity batch norms.
    pub fn random(spec: SnnNetSpec, rng: &mut impl Rng, gain: f32) -> Result<Self> {
        Self::build(spec, |c| {
            let a = gain / ((c.in_channels * c.kernel * c.kernel) as f32).sqrt();
            (0..c.weight_len())
                .map(|_| rng.random_range(-a..=a))
                .collect()
        })
    }

    pub fn from_container(spec: SnnNetSpec, weights: &WeightContainer) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let base = format!("snn.{}", i + 1);
            let shape = layer.conv.spec.weight_shape();
            layer.conv.weight = weights.require(&format!("{base}.conv_w"), &shape)?.to_vec();
            let c = layer.conv.spec.out_channels;
            let get = |p: &str| -> Result<Vec<f32>> {
                Ok(weights.require(&format!("{base}.bn_{p}"), &[c])?.to_vec())
            };
            layer.bn = BatchNorm {
                gamma: get("gamma")?,
                beta: get("beta")?,
                mean: get("mean")?,
                var: get("var")?,
                eps: DEFAULT_BN_EPS,
            };
        }
        let name = format!("out.{}.conv_w", net.spec.prediction_layer());
        let shape = net.prediction.spec.weight_shape();
        net.prediction.weight = weights.require(&name, &shape)?.to_vec();
        Ok(net)
    }

    pub fn write_to(&self, weights: &mut WeightContainer) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            let base = format!("snn.{}", i + 1);
            weights.insert(
                &format!("{base}.conv_w"),
                &layer.conv.spec.weight_shape(),
                layer.conv.weight.clone(),
            )?;
            write_bn(weights, &base, "bn", &layer.bn)?;
        }
        weights.insert(
            &format!("out.{}.conv_w", self.spec.prediction_layer()),
            &self.prediction.spec.weight_shape(),
            self.prediction.weight.clone(),
        )
    }

    /// One synchronous pass over all layers. `input` holds per-pixel event
    /// counts (2×H×W). Returns spike counts per layer, index 0 being the
    /// input events; the heatmaps are left in `state.integrator.o`.
    pub fn step(
        &self,
        state: &mut SnnState,
        input: &Tensor,
        params: &LifParams,
    ) -> Result<Vec<u64>> {
        input.expect_shape(self.spec.input_shape(), "SNN input")?;
        if state.num_layers() != self.layers.len() {
            return Err(Error::contract("SNN state does not match the network"));
        }
        if let Some(k) = (1..=self.layers.len()).find(|&k| !state.is_initialized(k)) {
            return Err(Error::contract(format!(
                "SNN layer {k} stepped before initialization"
            )));
        }
        let mut counts = Vec::with_capacity(self.layers.len() + 1);
        counts.push(input.data().iter().map(|&v| v as u64).sum());
        let mut spikes: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        let mut prev_drive: Option<Tensor> = None;
        for (i, (layer, ls)) in self.layers.iter().zip(&self.spec.layers).enumerate() {
            let prev = if i == 0 { input } else { &spikes[i - 1] };
            let conv_out = match (ls.kind, ls.skip) {
                (SnnLayerKind::Decoder, Some(skip)) => {
                    let cat = concat_channels(prev, &spikes[skip - 1])?;
                    layer.conv.forward(&upsample_nearest2(&cat))?
                }
                _ => layer.conv.forward(prev)?,
            };
            let mut drive = layer.bn.forward(&conv_out)?;
            if ls.kind == SnnLayerKind::Residual {
                let d = prev_drive
                    .as_ref()
                    .expect("validated: residual is never first");
                drive = add(&drive, d)?;
            }
            let out = lif_step(state.layer_mut(i + 1), &drive, params)?;
            counts.push(out.count());
            spikes.push(out.s);
            prev_drive = Some(drive);
        }
        let last = spikes.last().expect("validated: at least one layer");
        let delta = self.prediction.forward(last)?;
        state.integrator.update(&delta)?;
        Ok(counts)
    }
}

/// Slices `n` consecutive windows of length `dt_us` from `t0`, steps the
/// network once per window and returns the heatmaps after each step.
#[allow(clippy::too_many_arguments)]
pub fn run_sequence(
    net: &SnnNetwork,
    state: &mut SnnState,
    stream: &EventStream,
    t0: u64,
    n: usize,
    dt_us: u64,
    params: &LifParams,
    mut recorder: Option<&mut SpikeActivityRecord>,
) -> Result<Vec<Tensor>> {
    if n == 0 || dt_us == 0 {
        return Err(Error::contract("run_sequence needs n >= 1 and dt > 0"));
    }
    let mut out = Vec::with_capacity(n);
    for j in 0..n as u64 {
        let t = t0 + j * dt_us;
        let window = slice_spike_tensor(stream, t, t + dt_us)?;
        let counts = net.step(state, &window.tensor, params)?;
        if let Some(rec) = recorder.as_deref_mut() {
            rec.record_step(&counts)?;
        }
        out.push(state.integrator.o.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::events::{Event, Polarity};
    use crate::tensornet::Shape;

    fn tiny() -> SnnNetSpec {
        SnnNetSpec::u_net(16, 16, [3, 4, 4, 5, 5, 4, 3, 3], 2)
    }

    #[test]
    fn zero_everything_decays_integrator() {
        let spec = tiny();
        let net = SnnNetwork::zeros(spec.clone()).unwrap();
        let mut state = SnnState::zeros(&spec, 0.8).unwrap();
        let o_i = Tensor::filled(spec.output_shape(), 1.0);
        state.integrator.reset_to(&o_i).unwrap();
        let input = Tensor::zeros(spec.input_shape());
        let params = LifParams::hybrid();
        let mut expected = 1.0f32;
        for _ in 0..6 {
            let counts = net.step(&mut state, &input, &params).unwrap();
            assert!(counts.iter().all(|&c| c == 0));
            expected *= 0.8;
            assert!(state.integrator.o.data().iter().all(|&v| v == expected));
        }
    }

    #[test]
    fn threshold_injection_examples() {
        let spec = tiny();
        let net = SnnNetwork::zeros(spec.clone()).unwrap();
        let params = LifParams::hybrid();
        let input = Tensor::zeros(spec.input_shape());
        let shape = spec.layer_shapes()[0];

        let mut state = SnnState::zeros(&spec, 0.8).unwrap();
        state
            .inject(1, &Tensor::filled(shape, params.v_th))
            .unwrap();
        assert_eq!(net.step(&mut state, &input, &params).unwrap()[1], 0);

        let mut state = SnnState::zeros(&spec, 0.8).unwrap();
        state
            .inject(1, &Tensor::filled(shape, 1.5 * params.v_th))
            .unwrap();
        assert_eq!(
            net.step(&mut state, &input, &params).unwrap()[1],
            shape.len() as u64
        );
    }

    #[test]
    fn uninitialized_state_is_rejected() {
        let spec = tiny();
        let net = SnnNetwork::zeros(spec.clone()).unwrap();
        let mut state = SnnState::uninitialized(&spec, 0.8).unwrap();
        let input = Tensor::zeros(spec.input_shape());
        assert!(net.step(&mut state, &input, &LifParams::hybrid()).is_err());
        assert!(net
            .step(
                &mut SnnState::zeros(&spec, 0.8).unwrap(),
                &Tensor::zeros(Shape::new(2, 8, 8)),
                &LifParams::hybrid()
            )
            .is_err());
    }

    #[test]
    fn run_sequence_is_deterministic_and_records() {
        let spec = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = SnnNetwork::random(spec.clone(), &mut rng, 3.0).unwrap();
        let events: Vec<Event> = (0..400)
            .map(|i| {
                Event::new(
                    i * 250,
                    (i % 16) as u16,
                    ((i * 7) % 16) as u16,
                    Polarity::from_bit((i % 2) as u8).unwrap(),
                )
            })
            .collect();
        let stream = EventStream::new(16, 16, events).unwrap();
        let run = || {
            let mut state = SnnState::zeros(&spec, 0.8).unwrap();
            let mut rec = SpikeActivityRecord::for_spec(&spec);
            let maps = run_sequence(
                &net,
                &mut state,
                &stream,
                0,
                10,
                10_000,
                &LifParams::hybrid(),
                Some(&mut rec),
            )
            .unwrap();
            (maps, rec)
        };
        let (a, rec) = run();
        let (b, _) = run();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert_eq!(rec.timesteps, 10);
        assert_eq!(rec.layers[0].spikes, 400);
        assert!(rec.total_spikes() > 0);
        let per_step: u64 = rec
            .log
            .iter()
            .filter(|r| r.layer > 0)
            .map(|r| r.count)
            .sum();
        assert_eq!(per_step, rec.total_spikes());
    }

    #[test]
    fn container_round_trip() {
        let spec = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = SnnNetwork::random(spec.clone(), &mut rng, 1.0).unwrap();
        net.layers[2].bn.beta[1] = 0.25;
        let mut c = WeightContainer::new();
        net.write_to(&mut c).unwrap();
        assert_eq!(SnnNetwork::from_container(spec, &c).unwrap(), net);
    }
}
