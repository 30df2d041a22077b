use super::net::{Episode, ToyNet};
use crate::error::Result;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |g_bptt - g_fd| / max(|g_fd|, 1e-8)` over every checked value.
    pub max_rel_deviation: f64,
    pub max_abs_deviation: f64,
    pub checked: usize,
}

/// Perturbs every parameter and every injected state by `±eps` and compares
/// the central difference of the loss with [`ToyNet::bptt_grad`]. Meant for
/// nets using the smooth spike function.
pub fn finite_diff_check(net: &ToyNet, ep: &Episode, eps: f64) -> Result<GradCheck> {
    let g = net.bptt_grad(ep)?;
    let mut res = GradCheck {
        max_rel_deviation: 0.0,
        max_abs_deviation: 0.0,
        checked: 0,
    };
    let mut record = |analytic: f64, fd: f64| {
        let abs = (analytic - fd).abs();
        res.max_abs_deviation = res.max_abs_deviation.max(abs);
        res.max_rel_deviation = res.max_rel_deviation.max(abs / fd.abs().max(1e-8));
        res.checked += 1;
    };
    let mut probe = net.clone();
    for i in 0..net.params.len() {
        let p0 = net.params[i];
        probe.params[i] = p0 + eps;
        let up = probe.loss(ep)?;
        probe.params[i] = p0 - eps;
        let down = probe.loss(ep)?;
        probe.params[i] = p0;
        record(g.params[i], (up - down) / (2.0 * eps));
    }
    let mut e = ep.clone();
    for l in 0..ep.init_states.len() {
        for i in 0..ep.init_states[l].len() {
            let s0 = ep.init_states[l][i];
            e.init_states[l][i] = s0 + eps;
            let up = net.loss(&e)?;
            e.init_states[l][i] = s0 - eps;
            let down = net.loss(&e)?;
            e.init_states[l][i] = s0;
            record(g.init_states[l][i], (up - down) / (2.0 * eps));
        }
    }
    Ok(res)
}

/// Size knob for [`random_case`]: spatial side and steps grow with it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CaseSize {
    pub side: usize,
    pub channels: usize,
    pub spiking_layers: usize,
    pub steps: usize,
}

impl Default for CaseSize {
    fn default() -> Self {
        Self {
            side: 6,
            channels: 3,
            spiking_layers: 2,
            steps: 5,
        }
    }
}

/// A seeded smooth-spike net and episode: inputs are sparse event counts,
/// injected states straddle the threshold.
pub fn random_case(seed: u64, size: CaseSize) -> Result<(ToyNet, Episode)> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::net::{SpikeFn, ToyConv, ToyNetSpec};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = size.side;
    let plane = side * side;
    let spec = ToyNetSpec {
        height: side,
        width: side,
        in_channels: 2,
        layers: vec![
            ToyConv {
                kernel: 3,
                out_channels: size.channels,
            };
            size.spiking_layers
        ],
        readout_kernel: 1,
        joints: 2,
        tau: 3.0,
        v_th: 1.0,
        v_rest: 0.0,
        decay: 0.8,
        spike_fn: SpikeFn::Smooth,
        detach_reset: false,
    };
    let net = ToyNet::random(spec.clone(), &mut rng, 2.0)?;
    let mut net = net;
    for p in net.params.iter_mut() {
        if *p == 0.0 {
            *p = rng.random_range(-0.2..0.2);
        }
    }
    let t = size.steps;
    let ep = Episode {
        inputs: (0..t)
            .map(|_| {
                (0..2 * plane)
                    .map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect(),
        targets: (0..t)
            .map(|_| (0..2 * plane).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect(),
        visible: (0..t).map(|_| vec![true, rng.random_bool(0.8)]).collect(),
        init_states: spec
            .state_lens()
            .into_iter()
            .map(|n| (0..n).map(|_| rng.random_range(-0.5..1.5)).collect())
            .collect(),
        o_init: (0..2 * plane).map(|_| rng.random_range(0.0..0.5)).collect(),
    };
    Ok((net, ep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::net::{SpikeFn, ToyNetSpec};

    #[test]
    fn random_spiking_nets_match_fd() {
        for seed in 0..5 {
            let (net, ep) = random_case(seed, CaseSize::default()).unwrap();
            assert!(net.spec.param_count() <= 10_000);
            let r = finite_diff_check(&net, &ep, 1e-4).unwrap();
            assert!(r.max_rel_deviation <= 1e-3, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn linear_path_is_near_exact() {
        let size = CaseSize {
            spiking_layers: 0,
            ..Default::default()
        };
        let (net, ep) = random_case(3, size).unwrap();
        let r = finite_diff_check(&net, &ep, 1e-4).unwrap();
        assert!(r.max_rel_deviation <= 1e-6, "{r:?}");
    }

    #[test]
    fn richardson_second_order() {
        let (net, ep) = random_case(7, CaseSize::default()).unwrap();
        let a = finite_diff_check(&net, &ep, 2e-2).unwrap();
        let b = finite_diff_check(&net, &ep, 1e-2).unwrap();
        let ratio = a.max_abs_deviation / b.max_abs_deviation;
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn detach_flag_changes_gradient() {
        let (mut net, ep) = random_case(1, CaseSize::default()).unwrap();
        net.spec.spike_fn = SpikeFn::Heaviside;
        let a = net.bptt_grad(&ep).unwrap();
        net.spec = ToyNetSpec {
            detach_reset: true,
            ..net.spec.clone()
        };
        let b = net.bptt_grad(&ep).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_ne!(a.params, b.params);
    }
}
