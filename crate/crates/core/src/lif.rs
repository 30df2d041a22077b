//! Leaky integrate-and-fire dynamics.
//!
//! The discrete update is forward Euler on `tau dV/dt = -(V - V_rest) + X`:
//!
//! ```text
//! V_t = V_{t-1} + (X_t - (V_{t-1} - V_rest)) / tau
//! S_t = H(V_t - V_th)          with H(0) = 1
//! V_t <- V_t - V_th * S_t      (soft reset)
//! ```
//!
//! Membrane potentials are never clamped: an injected state may sit above
//! threshold or far below rest.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensornet::{Shape, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    /// Subtract the threshold on a spike, keeping the residual.
    #[default]
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifParams {
    /// Membrane time constant in steps.
    pub tau: f32,
    pub v_th: f32,
    #[serde(default)]
    pub v_rest: f32,
    #[serde(default)]
    pub reset: ResetMode,
}

impl LifParams {
    pub fn new(tau: f32, v_th: f32, v_rest: f32) -> Result<Self> {
        let p = Self {
            tau,
            v_th,
            v_rest,
            reset: ResetMode::Soft,
        };
        p.validate()?;
        Ok(p)
    }

    /// tau = 3, v_th = 1, v_rest = 0: the hybrid training setting.
    pub fn hybrid() -> Self {
        Self {
            tau: 3.0,
            v_th: 1.0,
            v_rest: 0.0,
            reset: ResetMode::Soft,
        }
    }

    /// tau = 2, v_th = 1, v_rest = 0: the setting used for pure-SNN training.
    pub fn pure_snn() -> Self {
        Self {
            tau: 2.0,
            ..Self::hybrid()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 1.0) || !self.tau.is_finite() {
            return Err(Error::config(format!("tau must be >= 1, got {}", self.tau)));
        }
        if !(self.v_th > self.v_rest) || !self.v_th.is_finite() {
            return Err(Error::config(format!(
                "v_th ({}) must exceed v_rest ({})",
                self.v_th, self.v_rest
            )));
        }
        Ok(())
    }
}

/// Forward-Euler sub-threshold update with step `dt` (1 for the network).
#[inline]
pub fn membrane_update<F: Float>(v: F, x: F, v_rest: F, tau: F, dt: F) -> F {
    v + (x - (v - v_rest)) * dt / tau
}

/// Heaviside step with `H(0) = 1`.
#[inline]
pub fn heaviside<F: Float>(x: F) -> F {
    if x >= F::zero() {
        F::one()
    } else {
        F::zero()
    }
}

/// One scalar step: returns `(v_after_reset, spike)`.
#[inline]
pub fn step_scalar(v: f32, x: f32, params: &LifParams) -> (f32, f32) {
    let v = membrane_update(v, x, params.v_rest, params.tau, 1.0);
    let s = heaviside(v - params.v_th);
    (v - params.v_th * s, s)
}

/// Closed-form solution of the sub-threshold ODE for constant input `x_const`:
/// `V(t) = V_rest + X + (v0 - V_rest - X) exp(-t / tau)`. Only valid while the
/// neuron does not spike.
pub fn analytic_subthreshold(v0: f64, x_const: f64, params: &LifParams, t: f64) -> f64 {
    let v_rest = params.v_rest as f64;
    let tau = params.tau as f64;
    v_rest + x_const + (v0 - v_rest - x_const) * (-t / tau).exp()
}

/// Membrane potentials of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LifState {
    pub v: Tensor,
}

impl LifState {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            v: Tensor::zeros(shape),
        }
    }

    pub fn shape(&self) -> Shape {
        self.v.shape()
    }
}

/// Binary spike map emitted by one step.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeOutput {
    pub s: Tensor,
}

impl SpikeOutput {
    pub fn count(&self) -> u64 {
        self.s.data().iter().filter(|&&v| v != 0.0).count() as u64
    }
}

/// Advances `state` by one step under drive `input_current` and returns the
/// spikes, which are decided before the soft reset is applied.
pub fn lif_step(
    state: &mut LifState,
    input_current: &Tensor,
    params: &LifParams,
) -> Result<SpikeOutput> {
    input_current.expect_shape(state.shape(), "lif_step input")?;
    let mut s = Tensor::zeros(state.shape());
    for ((v, &x), out) in state
        .v
        .data_mut()
        .iter_mut()
        .zip(input_current.data())
        .zip(s.data_mut())
    {
        let (nv, spike) = step_scalar(*v, x, params);
        *v = nv;
        *out = spike;
    }
    Ok(SpikeOutput { s })
}

/// Overwrites the membrane potentials with `s_init`, unclamped.
pub fn set_boundary_condition(state: &mut LifState, s_init: &Tensor) -> Result<()> {
    s_init.expect_shape(state.shape(), "boundary condition")?;
    state.v = s_init.clone();
    Ok(())
}
