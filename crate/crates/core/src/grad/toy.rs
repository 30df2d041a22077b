use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::net::{Episode, SpikeFn, ToyConv, ToyNet, ToyNetSpec};
use super::target::make_heatmap_target;
use crate::error::{Error, Result};
use crate::events::{slice_spike_tensor, Event, EventStream, Polarity};
use crate::hybrid::HybridMode;
use crate::metrics::decode_heatmaps;
use crate::tensornet::{Shape, Tensor};

/// A Gaussian spot of light drifting across a small sensor. A pixel fires
/// one event each time its intensity moves a contrast step away from its
/// last reference level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobTaskConfig {
    pub side: usize,
    /// Spot width in pixels.
    pub sigma: f64,
    /// Contrast step in units of peak intensity.
    pub contrast: f64,
    /// Speed range in pixels per SNN step.
    pub speed_min: f64,
    pub speed_max: f64,
    pub steps_per_period: usize,
    pub dt_us: u64,
    /// Rendering sub-steps per SNN step.
    pub substeps: u32,
    /// SNN steps of motion before the ANN tick.
    pub history_steps: usize,
}

impl Default for BlobTaskConfig {
    fn default() -> Self {
        Self {
            side: 16,
            sigma: 2.0,
            contrast: 0.1,
            speed_min: 0.5,
            speed_max: 1.0,
            steps_per_period: 10,
            dt_us: 10_000,
            substeps: 10,
            history_steps: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlobSequence {
    pub stream: EventStream,
    /// ANN tick time.
    pub t0: u64,
    /// Blob centre at `t0 + j·dt`, `j = 0..steps_per_period`.
    pub centers: Vec<[f64; 2]>,
}

/// Folds `x` into `[lo, hi]` by reflection.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    let m = (x - lo).rem_euclid(2.0 * span);
    lo + if m > span { 2.0 * span - m } else { m }
}

pub fn sample_blob_sequence(cfg: &BlobTaskConfig, rng: &mut impl Rng) -> Result<BlobSequence> {
    let side = cfg.side as f64;
    let margin = 1.5 * cfg.sigma;
    let (lo, hi) = (margin, side - 1.0 - margin);
    if !(hi > lo)
        || cfg.steps_per_period < 2
        || cfg.substeps == 0
        || cfg.dt_us == 0
        || !(cfg.contrast > 0.0)
    {
        return Err(Error::config(
            "blob task: sensor too small for spot or empty schedule",
        ));
    }
    let start = [rng.random_range(lo..hi), rng.random_range(lo..hi)];
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let speed = rng.random_range(cfg.speed_min..=cfg.speed_max);
    let vel = [speed * angle.cos(), speed * angle.sin()];
    let at = |steps: f64| {
        [
            reflect(start[0] + vel[0] * steps, lo, hi),
            reflect(start[1] + vel[1] * steps, lo, hi),
        ]
    };
    let intensity = |c: [f64; 2]| -> Vec<f64> {
        (0..cfg.side * cfg.side)
            .map(|i| {
                let (x, y) = ((i % cfg.side) as f64, (i / cfg.side) as f64);
                (-((x - c[0]).powi(2) + (y - c[1]).powi(2)) / (2.0 * cfg.sigma * cfg.sigma)).exp()
            })
            .collect()
    };
    let total = (cfg.history_steps + cfg.steps_per_period) as u32 * cfg.substeps;
    let sub_us = cfg.dt_us / cfg.substeps as u64;
    let mut reference = intensity(at(0.0));
    let mut events = Vec::new();
    for s in 1..=total {
        let now = intensity(at(s as f64 / cfg.substeps as f64));
        let t = s as u64 * sub_us - 1;
        for (i, (r, &b)) in reference.iter_mut().zip(&now).enumerate() {
            while (b - *r).abs() >= cfg.contrast {
                let p = if b > *r { Polarity::On } else { Polarity::Off };
                *r += if b > *r { cfg.contrast } else { -cfg.contrast };
                events.push(Event::new(
                    t,
                    (i % cfg.side) as u16,
                    (i / cfg.side) as u16,
                    p,
                ));
            }
        }
    }
    let t0 = cfg.history_steps as u64 * cfg.dt_us;
    let centers = (0..cfg.steps_per_period)
        .map(|j| at((cfg.history_steps + j) as f64))
        .collect();
    Ok(BlobSequence {
        stream: EventStream::new(cfg.side as u16, cfg.side as u16, events)?,
        t0,
        centers,
    })
}

/// Frozen stand-in for the dense network: estimates the blob centre from
/// the last window of events before the tick.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyAnnOutput {
    pub estimate: [f64; 2],
    /// `joints × H × W` heatmap, the output initialization.
    pub o_init: Vec<f64>,
    /// `FEATURES × H × W`: normalized heatmap, ON counts, OFF counts.
    pub features: Vec<f64>,
}

pub const TOY_FEATURES: usize = 3;

pub fn toy_ann(seq: &BlobSequence, cfg: &BlobTaskConfig) -> Result<ToyAnnOutput> {
    let t_from = seq.t0.saturating_sub(cfg.dt_us);
    let window = seq.stream.window(t_from, seq.t0);
    let estimate = if window.is_empty() {
        [cfg.side as f64 / 2.0; 2]
    } else {
        let n = window.len() as f64;
        [
            window.iter().map(|e| e.x as f64).sum::<f64>() / n,
            window.iter().map(|e| e.y as f64).sum::<f64>() / n,
        ]
    };
    let heat = make_heatmap_target(estimate[0], estimate[1], cfg.side, cfg.side).data;
    let peak = heat.iter().cloned().fold(0.0, f64::max);
    let counts = slice_spike_tensor(&seq.stream, t_from, seq.t0)?;
    let mut features: Vec<f64> = heat
        .iter()
        .map(|&v| if peak > 0.0 { v / peak } else { 0.0 })
        .collect();
    features.extend(counts.tensor.data().iter().map(|&v| v as f64));
    Ok(ToyAnnOutput {
        estimate,
        o_init: heat,
        features,
    })
}

/// Toy SNN plus trainable 1×1 affine heads mapping ANN features to the
/// initial membrane potentials of each spiking layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyHybrid {
    pub net: ToyNet,
    /// Per spiking layer: `C_l × FEATURES` weights then `C_l` biases.
    pub heads: Vec<f64>,
    pub mode: HybridMode,
}

impl ToyHybrid {
    fn head_layout(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.net
            .spec
            .layers
            .iter()
            .map(|l| {
                let start = off;
                off += l.out_channels * (TOY_FEATURES + 1);
                (start, l.out_channels)
            })
            .collect()
    }

    pub fn head_param_count(spec: &ToyNetSpec) -> usize {
        spec.layers
            .iter()
            .map(|l| l.out_channels * (TOY_FEATURES + 1))
            .sum()
    }

    fn init_states(&self, features: &[f64]) -> Vec<Vec<f64>> {
        let plane = self.net.spec.height * self.net.spec.width;
        self.head_layout()
            .into_iter()
            .map(|(off, c)| {
                if !self.mode.injects_states() {
                    return vec![0.0; c * plane];
                }
                let mut s = vec![0.0; c * plane];
                for o in 0..c {
                    let bias = self.heads[off + c * TOY_FEATURES + o];
                    for p in 0..plane {
                        let mut v = bias;
                        for f in 0..TOY_FEATURES {
                            v += self.heads[off + o * TOY_FEATURES + f] * features[f * plane + p];
                        }
                        s[o * plane + p] = v;
                    }
                }
                s
            })
            .collect()
    }

    /// Episode over the SNN steps after the tick (`steps_per_period - 1`).
    pub fn episode(
        &self,
        seq: &BlobSequence,
        cfg: &BlobTaskConfig,
    ) -> Result<(Episode, ToyAnnOutput)> {
        let ann = toy_ann(seq, cfg)?;
        let plane = cfg.side * cfg.side;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut visible = Vec::new();
        for j in 1..cfg.steps_per_period {
            let t = seq.t0 + j as u64 * cfg.dt_us;
            let st = slice_spike_tensor(&seq.stream, t - cfg.dt_us, t)?;
            inputs.push(st.tensor.data().iter().map(|&v| v as f64).collect());
            let [u, v] = seq.centers[j];
            let tgt = make_heatmap_target(u, v, cfg.side, cfg.side);
            visible.push(vec![tgt.visible]);
            targets.push(tgt.data);
        }
        let ep = Episode {
            inputs,
            targets,
            visible,
            init_states: self.init_states(&ann.features),
            o_init: if self.mode.inits_output() {
                ann.o_init.clone()
            } else {
                vec![0.0; plane]
            },
        };
        Ok((ep, ann))
    }

    /// Loss and gradient with respect to `[net params, head params]`.
    fn loss_and_grad(&self, seq: &BlobSequence, cfg: &BlobTaskConfig) -> Result<(f64, Vec<f64>)> {
        let (ep, ann) = self.episode(seq, cfg)?;
        let g = self.net.bptt_grad(&ep)?;
        let plane = cfg.side * cfg.side;
        let mut grad = g.params;
        let mut gh = vec![0.0; self.heads.len()];
        if self.mode.injects_states() {
            for ((off, c), gs) in self.head_layout().into_iter().zip(&g.init_states) {
                for o in 0..c {
                    let go = &gs[o * plane..(o + 1) * plane];
                    gh[off + c * TOY_FEATURES + o] += go.iter().sum::<f64>();
                    for f in 0..TOY_FEATURES {
                        let feat = &ann.features[f * plane..(f + 1) * plane];
                        gh[off + o * TOY_FEATURES + f] +=
                            go.iter().zip(feat).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
        grad.extend(gh);
        Ok((g.loss, grad))
    }

    pub fn loss(&self, seq: &BlobSequence, cfg: &BlobTaskConfig) -> Result<f64> {
        self.net.loss(&self.episode(seq, cfg)?.0)
    }

    /// Pixel error of the decoded heatmap at every trace step of the period,
    /// step 0 being the tick itself.
    pub fn step_errors(&self, seq: &BlobSequence, cfg: &BlobTaskConfig) -> Result<Vec<f64>> {
        let (ep, _) = self.episode(seq, cfg)?;
        let outputs = self.net.outputs(&ep)?;
        let shape = Shape::new(1, cfg.side, cfg.side);
        std::iter::once(&ep.o_init)
            .chain(outputs.iter())
            .zip(&seq.centers)
            .map(|(o, c)| {
                let t = Tensor::from_vec(shape, o.iter().map(|&v| v as f32).collect())?;
                let p = decode_heatmaps(&t);
                let [u, v] = p.coords[0];
                Ok(((u - c[0]).powi(2) + (v - c[1]).powi(2)).sqrt())
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub mode: HybridMode,
    pub tau: f64,
    pub v_th: f64,
    pub decay: f64,
    pub channels: usize,
    pub kernel: usize,
    pub spiking_layers: usize,
    pub init_gain: f64,
    /// Init scale of the readout conv, which must match the small heatmap
    /// amplitudes.
    pub readout_gain: f64,
    pub eval_episodes: usize,
    pub task: BlobTaskConfig,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 2,
            lr: 5e-5,
            seed: 0,
            mode: HybridMode::D,
            tau: 3.0,
            v_th: 1.0,
            decay: 0.8,
            channels: 4,
            kernel: 5,
            spiking_layers: 2,
            init_gain: 4.0,
            readout_gain: 0.05,
            eval_episodes: 16,
            task: BlobTaskConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyTrainResult {
    /// Mean batch loss before each update.
    pub loss_curve: Vec<f64>,
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
    /// Some batch loss exceeded ten times the first one.
    pub diverged: bool,
    pub model: ToyHybrid,
}

impl ToyTrainResult {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.loss_curve.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }
}

pub fn toy_model(cfg: &ToyTrainConfig, rng: &mut impl Rng) -> Result<ToyHybrid> {
    let spec = ToyNetSpec {
        height: cfg.task.side,
        width: cfg.task.side,
        in_channels: 2,
        layers: vec![
            ToyConv {
                kernel: cfg.kernel,
                out_channels: cfg.channels,
            };
            cfg.spiking_layers
        ],
        readout_kernel: cfg.kernel,
        joints: 1,
        tau: cfg.tau,
        v_th: cfg.v_th,
        v_rest: 0.0,
        decay: cfg.decay,
        spike_fn: SpikeFn::Heaviside,
        detach_reset: false,
    };
    let mut net = ToyNet::random(spec, rng, cfg.init_gain)?;
    let readout = cfg.channels * cfg.kernel * cfg.kernel + 1;
    let n = net.params.len();
    for p in &mut net.params[n - readout..] {
        *p *= cfg.readout_gain / cfg.init_gain;
    }
    let n = ToyHybrid::head_param_count(&net.spec);
    let a = cfg.init_gain / (TOY_FEATURES as f64).sqrt();
    let heads = (0..n).map(|_| rng.random_range(-a..=a)).collect();
    Ok(ToyHybrid {
        net,
        heads,
        mode: cfg.mode,
    })
}

/// Fixed held-out sequences for a config.
pub fn eval_sequences(cfg: &ToyTrainConfig) -> Result<Vec<BlobSequence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_e7a1);
    (0..cfg.eval_episodes)
        .map(|_| sample_blob_sequence(&cfg.task, &mut rng))
        .collect()
}

pub fn mean_loss(model: &ToyHybrid, seqs: &[BlobSequence], task: &BlobTaskConfig) -> Result<f64> {
    let mut sum = 0.0;
    for s in seqs {
        sum += model.loss(s, task)?;
    }
    Ok(sum / seqs.len().max(1) as f64)
}

/// Mean decoded-pixel error per step since the tick.
pub fn toy_error_over_time(
    model: &ToyHybrid,
    seqs: &[BlobSequence],
    task: &BlobTaskConfig,
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; task.steps_per_period];
    for s in seqs {
        for (a, e) in acc.iter_mut().zip(model.step_errors(s, task)?) {
            *a += e;
        }
    }
    Ok(acc
        .into_iter()
        .map(|v| v / seqs.len().max(1) as f64)
        .collect())
}

/// Trains SNN and heads jointly with Adam on freshly sampled batches.
pub fn train_toy(cfg: &ToyTrainConfig) -> Result<ToyTrainResult> {
    if cfg.batch == 0 || cfg.eval_episodes == 0 {
        return Err(Error::config("batch and eval_episodes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = toy_model(cfg, &mut rng)?;
    let eval = eval_sequences(cfg)?;
    let initial_eval_loss = mean_loss(&model, &eval, &cfg.task)?;
    let n_net = model.net.params.len();
    let mut params: Vec<f64> = model
        .net
        .params
        .iter()
        .chain(&model.heads)
        .copied()
        .collect();
    let mut opt = Adam::new(params.len(), cfg.lr);
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut diverged = false;
    for _ in 0..cfg.steps {
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        for _ in 0..cfg.batch {
            let seq = sample_blob_sequence(&cfg.task, &mut rng)?;
            let (l, g) = model.loss_and_grad(&seq, &cfg.task)?;
            loss += l / cfg.batch as f64;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b / cfg.batch as f64;
            }
        }
        if !(loss.is_finite())
            || curve
                .first()
                .is_some_and(|&first: &f64| loss > 10.0 * first)
        {
            diverged = true;
        }
        curve.push(loss);
        opt.step(&mut params, &grad);
        model.net.params.copy_from_slice(&params[..n_net]);
        model.heads.copy_from_slice(&params[n_net..]);
    }
    if diverged {
        log::warn!("toy training diverged (loss exceeded 10x its initial value)");
    }
    Ok(ToyTrainResult {
        loss_curve: curve,
        initial_eval_loss,
        final_eval_loss: mean_loss(&model, &eval, &cfg.task)?,
        diverged,
        model,
    })
}
