use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `1 / (1 + (πx)^2)`, the stand-in for the Heaviside derivative.
pub fn surrogate_grad(x: f64) -> f64 {
    1.0 / (1.0 + (PI * x) * (PI * x))
}

/// `1/2 + atan(πx)/π`; its derivative is exactly [`surrogate_grad`].
pub fn smooth_heaviside(x: f64) -> f64 {
    0.5 + (PI * x).atan() / PI
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeFn {
    /// Binary spikes forward, surrogate derivative backward.
    #[default]
    Heaviside,
    /// Smooth companion both ways, so finite differences are meaningful.
    Smooth,
}

impl SpikeFn {
    fn forward(self, x: f64) -> f64 {
        match self {
            SpikeFn::Heaviside => crate::lif::heaviside(x),
            SpikeFn::Smooth => smooth_heaviside(x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConv {
    pub kernel: usize,
    pub out_channels: usize,
}

/// A chain of `conv + bias -> LIF` layers, then a `conv + bias` readout into
/// a leaky integrator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyNetSpec {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub layers: Vec<ToyConv>,
    pub readout_kernel: usize,
    pub joints: usize,
    pub tau: f64,
    pub v_th: f64,
    pub v_rest: f64,
    pub decay: f64,
    pub spike_fn: SpikeFn,
    /// Stop the gradient through the soft-reset subtraction.
    pub detach_reset: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ConvShape {
    k: usize,
    ci: usize,
    co: usize,
    w_off: usize,
    b_off: usize,
}

impl ConvShape {
    fn w_len(&self) -> usize {
        self.co * self.ci * self.k * self.k
    }
}

impl ToyNetSpec {
    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn convs(&self) -> Vec<ConvShape> {
        let mut out = Vec::new();
        let mut off = 0;
        let mut ci = self.in_channels;
        let all = self
            .layers
            .iter()
            .map(|l| (l.kernel, l.out_channels))
            .chain(std::iter::once((self.readout_kernel, self.joints)));
        for (k, co) in all {
            let w_len = co * ci * k * k;
            out.push(ConvShape {
                k,
                ci,
                co,
                w_off: off,
                b_off: off + w_len,
            });
            off += w_len + co;
            ci = co;
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.convs().iter().map(|c| c.w_len() + c.co).sum()
    }

    /// Neurons per spiking layer.
    pub fn state_lens(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| l.out_channels * self.plane())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.in_channels == 0 || self.joints == 0 {
            return Err(Error::config("toy net dimensions must be positive"));
        }
        if self
            .layers
            .iter()
            .any(|l| l.kernel % 2 == 0 || l.out_channels == 0)
            || self.readout_kernel.is_multiple_of(2)
        {
            return Err(Error::config(
                "toy net kernels must be odd, channels positive",
            ));
        }
        if !(self.tau >= 1.0 && self.v_th > self.v_rest && (0.0..=1.0).contains(&self.decay)) {
            return Err(Error::config(
                "toy net needs tau >= 1, v_th > v_rest, decay in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Spec plus a flat parameter vector: per conv, weights `[co, ci, k, k]`
/// then bias `[co]`, readout last.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyNet {
    pub spec: ToyNetSpec,
    pub params: Vec<f64>,
}

/// One training sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// `T` frames of `in_channels × H × W`.
    pub inputs: Vec<Vec<f64>>,
    /// `T` frames of `joints × H × W`.
    pub targets: Vec<Vec<f64>>,
    /// `T × joints`; invisible joints are left out of the loss.
    pub visible: Vec<Vec<bool>>,
    /// Initial membrane potentials per spiking layer.
    pub init_states: Vec<Vec<f64>>,
    /// Initial integrator value (`joints × H × W`).
    pub o_init: Vec<f64>,
}

impl Episode {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }
}

/// Reverse-mode gradients of the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub params: Vec<f64>,
    pub init_states: Vec<Vec<f64>>,
    pub o_init: Vec<f64>,
}

struct Cache {
    /// `[t][layer]` input to each conv, layer 0 = episode input.
    acts: Vec<Vec<Vec<f64>>>,
    /// `[t][layer]` pre-reset potentials.
    v_pre: Vec<Vec<Vec<f64>>>,
    outputs: Vec<Vec<f64>>,
}

fn conv_forward(x: &[f64], c: &ConvShape, params: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (k, pad) = (c.k, c.k / 2);
    let wts = &params[c.w_off..c.w_off + c.w_len()];
    let mut y = vec![0.0; c.co * h * w];
    for o in 0..c.co {
        let yo = &mut y[o * h * w..(o + 1) * h * w];
        yo.fill(params[c.b_off + o]);
        for i in 0..c.ci {
            let xi = &x[i * h * w..(i + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wts[((o * c.ci + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..h {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let row = &xi[(iy - pad) * w..(iy - pad + 1) * w];
                        for ox in 0..w {
                            let ix = ox + kx;
                            if ix >= pad && ix - pad < w {
                                yo[oy * w + ox] += wv * row[ix - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `want_dx`.
fn conv_backward(
    x: &[f64],
    gy: &[f64],
    c: &ConvShape,
    params: &[f64],
    grads: &mut [f64],
    h: usize,
    w: usize,
    want_dx: bool,
) -> Option<Vec<f64>> {
    let (k, pad) = (c.k, c.k / 2);
    let mut dx = want_dx.then(|| vec![0.0; c.ci * h * w]);
    for o in 0..c.co {
        let go = &gy[o * h * w..(o + 1) * h * w];
        grads[c.b_off + o] += go.iter().sum::<f64>();
        for i in 0..c.ci {
            let xi = &x[i * h * w..(i + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((o * c.ci + i) * k + ky) * k + kx;
                    let wv = params[c.w_off + widx];
                    let mut acc = 0.0;
                    for oy in 0..h {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let iy = iy - pad;
                        for ox in 0..w {
                            let ix = ox + kx;
                            if ix < pad || ix - pad >= w {
                                continue;
                            }
                            let g = go[oy * w + ox];
                            acc += g * xi[iy * w + ix - pad];
                            if let Some(dx) = dx.as_mut() {
                                dx[i * h * w + iy * w + ix - pad] += g * wv;
                            }
                        }
                    }
                    grads[c.w_off + widx] += acc;
                }
            }
        }
    }
    dx
}

impl ToyNet {
    pub fn zeros(spec: ToyNetSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            params: vec![0.0; spec.param_count()],
            spec,
        })
    }

    /// Weights uniform in `±gain / sqrt(fan_in)`, biases zero.
    pub fn random(spec: ToyNetSpec, rng: &mut impl Rng, gain: f64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        for c in net.spec.convs() {
            let a = gain / ((c.ci * c.k * c.k) as f64).sqrt();
            for p in &mut net.params[c.w_off..c.w_off + c.w_len()] {
                *p = rng.random_range(-a..=a);
            }
        }
        Ok(net)
    }

    fn check_episode(&self, ep: &Episode) -> Result<()> {
        let s = &self.spec;
        let plane = s.plane();
        let t = ep.steps();
        let ok = t > 0
            && ep.targets.len() == t
            && ep.visible.len() == t
            && ep.inputs.iter().all(|x| x.len() == s.in_channels * plane)
            && ep.targets.iter().all(|y| y.len() == s.joints * plane)
            && ep.visible.iter().all(|v| v.len() == s.joints)
            && ep.o_init.len() == s.joints * plane
            && ep.init_states.len() == s.layers.len()
            && ep
                .init_states
                .iter()
                .zip(s.state_lens())
                .all(|(v, n)| v.len() == n);
        if ok {
            Ok(())
        } else {
            Err(Error::contract("episode shapes do not match the toy net"))
        }
    }

    fn run(&self, ep: &Episode) -> Result<(f64, Cache)> {
        self.check_episode(ep)?;
        let s = &self.spec;
        let (h, w) = (s.height, s.width);
        let convs = s.convs();
        let (readout, spiking) = convs.split_last().expect("readout conv always present");
        let mut v: Vec<Vec<f64>> = ep.init_states.clone();
        let mut o = ep.o_init.clone();
        let mut cache = Cache {
            acts: Vec::with_capacity(ep.steps()),
            v_pre: Vec::with_capacity(ep.steps()),
            outputs: Vec::with_capacity(ep.steps()),
        };
        let mut loss_sum = 0.0;
        let mut n_vis = 0usize;
        for t in 0..ep.steps() {
            let mut acts = vec![ep.inputs[t].clone()];
            let mut pres = Vec::with_capacity(spiking.len());
            for (l, c) in spiking.iter().enumerate() {
                let drive = conv_forward(acts.last().expect("non-empty"), c, &self.params, h, w);
                let mut pre = vec![0.0; drive.len()];
                let mut spikes = vec![0.0; drive.len()];
                for (((vv, &x), p), sp) in
                    v[l].iter_mut().zip(&drive).zip(&mut pre).zip(&mut spikes)
                {
                    *p = crate::lif::membrane_update(*vv, x, s.v_rest, s.tau, 1.0);
                    *sp = s.spike_fn.forward(*p - s.v_th);
                    *vv = *p - s.v_th * *sp;
                }
                pres.push(pre);
                acts.push(spikes);
            }
            let delta = conv_forward(acts.last().expect("non-empty"), readout, &self.params, h, w);
            for (ov, d) in o.iter_mut().zip(&delta) {
                *ov = s.decay * *ov + d;
            }
            let plane = h * w;
            for j in 0..s.joints {
                if ep.visible[t][j] {
                    let range = j * plane..(j + 1) * plane;
                    let se: f64 = o[range.clone()]
                        .iter()
                        .zip(&ep.targets[t][range])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    loss_sum += se / plane as f64;
                    n_vis += 1;
                }
            }
            cache.acts.push(acts);
            cache.v_pre.push(pres);
            cache.outputs.push(o.clone());
        }
        let loss = if n_vis == 0 {
            0.0
        } else {
            loss_sum / n_vis as f64
        };
        Ok((loss, cache))
    }

    /// Mean over (step, visible joint) of the per-pixel squared error.
    pub fn loss(&self, ep: &Episode) -> Result<f64> {
        Ok(self.run(ep)?.0)
    }

    /// Integrator value after every step.
    pub fn outputs(&self, ep: &Episode) -> Result<Vec<Vec<f64>>> {
        Ok(self.run(ep)?.1.outputs)
    }

    /// Exact reverse-mode gradient through the unrolled dynamics.
    pub fn bptt_grad(&self, ep: &Episode) -> Result<Gradients> {
        let (loss, cache) = self.run(ep)?;
        let s = &self.spec;
        let (h, w) = (s.height, s.width);
        let plane = h * w;
        let convs = s.convs();
        let (readout, spiking) = convs.split_last().expect("readout conv always present");
        let n_vis: usize = ep
            .visible
            .iter()
            .map(|v| v.iter().filter(|&&b| b).count())
            .sum();
        let mut grads = vec![0.0; self.params.len()];
        let mut carry: Vec<Vec<f64>> = s.state_lens().into_iter().map(|n| vec![0.0; n]).collect();
        let mut g_o = vec![0.0; s.joints * plane];
        let leak = 1.0 - 1.0 / s.tau;
        for t in (0..ep.steps()).rev() {
            // dL/do_t = direct term + decay * dL/do_{t+1}
            for v in g_o.iter_mut() {
                *v *= s.decay;
            }
            if n_vis > 0 {
                let scale = 2.0 / (n_vis as f64 * plane as f64);
                for j in (0..s.joints).filter(|&j| ep.visible[t][j]) {
                    for p in j * plane..(j + 1) * plane {
                        g_o[p] += scale * (cache.outputs[t][p] - ep.targets[t][p]);
                    }
                }
            }
            let acts = &cache.acts[t];
            let mut g_in = conv_backward(
                acts.last().expect("non-empty"),
                &g_o,
                readout,
                &self.params,
                &mut grads,
                h,
                w,
                !spiking.is_empty(),
            );
            for (l, c) in spiking.iter().enumerate().rev() {
                let g_spike = g_in.take().expect("requested for every spiking layer");
                let pre = &cache.v_pre[t][l];
                let mut g_drive = vec![0.0; pre.len()];
                for (((gd, cv), &gs), &p) in g_drive
                    .iter_mut()
                    .zip(carry[l].iter_mut())
                    .zip(&g_spike)
                    .zip(pre)
                {
                    let hp = surrogate_grad(p - s.v_th);
                    let through_reset = if s.detach_reset {
                        1.0
                    } else {
                        1.0 - s.v_th * hp
                    };
                    let g_pre = *cv * through_reset + gs * hp;
                    *gd = g_pre / s.tau;
                    *cv = g_pre * leak;
                }
                g_in = conv_backward(&acts[l], &g_drive, c, &self.params, &mut grads, h, w, l > 0);
            }
        }
        let g_o_init: Vec<f64> = g_o.iter().map(|g| g * s.decay).collect();
        Ok(Gradients {
            loss,
            params: grads,
            init_states: carry,
            o_init: g_o_init,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_spec(spike_fn: SpikeFn) -> ToyNetSpec {
        ToyNetSpec {
            height: 1,
            width: 1,
            in_channels: 1,
            layers: vec![ToyConv {
                kernel: 1,
                out_channels: 1,
            }],
            readout_kernel: 1,
            joints: 1,
            tau: 3.0,
            v_th: 1.0,
            v_rest: 0.0,
            decay: 0.8,
            spike_fn,
            detach_reset: false,
        }
    }

    fn scalar_episode(x: f64, y: f64, s: f64, o0: f64) -> Episode {
        Episode {
            inputs: vec![vec![x]],
            targets: vec![vec![y]],
            visible: vec![vec![true]],
            init_states: vec![vec![s]],
            o_init: vec![o0],
        }
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(surrogate_grad(0.0), 1.0);
        assert!((surrogate_grad(1.0 / PI) - 0.5).abs() < 1e-15);
        assert!(surrogate_grad(1e6) < 1e-12);
        assert!(surrogate_grad(-1e6) < 1e-12);
        assert_eq!(smooth_heaviside(0.0), 0.5);
        assert!(smooth_heaviside(-1e9) < 1e-9);
        assert!(smooth_heaviside(1e9) > 1.0 - 1e-9);
    }

    #[test]
    fn zero_net_zero_target() {
        let mut spec = scalar_spec(SpikeFn::Heaviside);
        spec.height = 3;
        spec.width = 3;
        let net = ToyNet::zeros(spec).unwrap();
        let ep = Episode {
            inputs: vec![vec![0.0; 9]; 4],
            targets: vec![vec![0.0; 9]; 4],
            visible: vec![vec![true]; 4],
            init_states: vec![vec![0.0; 9]],
            o_init: vec![0.0; 9],
        };
        let g = net.bptt_grad(&ep).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.params.iter().all(|&v| v == 0.0));
        assert!(g.init_states[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_neuron_hand_derivative() {
        let net = ToyNet {
            spec: scalar_spec(SpikeFn::Heaviside),
            // [w, b, w_r, b_r]
            params: vec![1.3, 0.2, 0.7, -0.1],
        };
        let (x, y, s, o0) = (1.1, 0.4, 0.9, 0.25);
        let [w, b, wr, br] = [1.3, 0.2, 0.7, -0.1];
        let (tau, vth, lam) = (3.0, 1.0, 0.8);
        let v_pre = s + (w * x + b - s) / tau;
        let spike = if v_pre >= vth { 1.0 } else { 0.0 };
        let o = lam * o0 + wr * spike + br;
        let dl_do = 2.0 * (o - y);
        let hp = 1.0 / (1.0 + (PI * (v_pre - vth)).powi(2));
        let g = net.bptt_grad(&scalar_episode(x, y, s, o0)).unwrap();
        assert!((g.loss - (o - y) * (o - y)).abs() < 1e-15);
        let expect = [
            dl_do * wr * hp * x / tau,
            dl_do * wr * hp / tau,
            dl_do * spike,
            dl_do,
        ];
        for (a, e) in g.params.iter().zip(expect) {
            assert!((a - e).abs() <= 1e-15 * e.abs().max(1.0), "{a} vs {e}");
        }
        let ds = dl_do * wr * hp * (1.0 - 1.0 / tau);
        assert!((g.init_states[0][0] - ds).abs() < 1e-15);
        assert!((g.o_init[0] - dl_do * lam).abs() < 1e-15);
    }

    #[test]
    fn state_gradient_near_threshold() {
        let net = ToyNet {
            spec: scalar_spec(SpikeFn::Heaviside),
            params: vec![0.0, 0.0, 1.0, 0.0],
        };
        // s = 1.49 gives v_pre just below threshold.
        let g = net.bptt_grad(&scalar_episode(0.0, 1.0, 1.49, 0.0)).unwrap();
        assert!(g.init_states[0][0].abs() > 0.1);
    }
}
