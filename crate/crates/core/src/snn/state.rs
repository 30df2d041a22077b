use crate::error::{Error, Result};
use crate::lif::{set_boundary_condition, LifState};
use crate::tensornet::{Shape, Tensor};

use super::spec::SnnNetSpec;

/// Default integrator decay.
pub const DEFAULT_OUTPUT_DECAY: f32 = 0.8;

/// Leaky accumulator `o <- decay * o + delta` producing analog heatmaps.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputIntegrator {
    pub o: Tensor,
    pub decay: f32,
}

impl OutputIntegrator {
    pub fn zeros(shape: Shape, decay: f32) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::config(format!(
                "output decay {decay} outside [0, 1]"
            )));
        }
        Ok(Self {
            o: Tensor::zeros(shape),
            decay,
        })
    }

    pub fn reset_to(&mut self, o_init: &Tensor) -> Result<()> {
        o_init.expect_shape(self.o.shape(), "output initialization")?;
        self.o.data_mut().copy_from_slice(o_init.data());
        Ok(())
    }

    pub fn reset_zero(&mut self) {
        self.o.data_mut().fill(0.0);
    }

    /// Decay first, then add.
    pub fn update(&mut self, delta: &Tensor) -> Result<()> {
        delta.expect_shape(self.o.shape(), "integrator delta")?;
        for (o, &d) in self.o.data_mut().iter_mut().zip(delta.data()) {
            *o = self.decay * *o + d;
        }
        Ok(())
    }
}

/// Mutable per-sequence state: every spiking layer's membrane potentials
/// and the output integrator.
#[derive(Clone, Debug, PartialEq)]
pub struct SnnState {
    layers: Vec<LifState>,
    initialized: Vec<bool>,
    pub integrator: OutputIntegrator,
}

impl SnnState {
    /// All layers allocated but flagged uninitialized; stepping fails until
    /// each one is injected or zeroed.
    pub fn uninitialized(spec: &SnnNetSpec, decay: f32) -> Result<Self> {
        let shapes = spec.layer_shapes();
        Ok(Self {
            initialized: vec![false; shapes.len()],
            layers: shapes.into_iter().map(LifState::zeros).collect(),
            integrator: OutputIntegrator::zeros(spec.output_shape(), decay)?,
        })
    }

    pub fn zeros(spec: &SnnNetSpec, decay: f32) -> Result<Self> {
        let mut state = Self::uninitialized(spec, decay)?;
        state.initialized.fill(true);
        Ok(state)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn slot(&self, layer: usize) -> Result<usize> {
        if layer == 0 || layer > self.layers.len() {
            return Err(Error::contract(format!(
                "SNN layer {layer} out of range 1..={}",
                self.layers.len()
            )));
        }
        Ok(layer - 1)
    }

    /// Membrane potentials of 1-based `layer`.
    pub fn layer(&self, layer: usize) -> Result<&LifState> {
        Ok(&self.layers[self.slot(layer)?])
    }

    pub(crate) fn layer_mut(&mut self, layer: usize) -> &mut LifState {
        &mut self.layers[layer - 1]
    }

    pub fn is_initialized(&self, layer: usize) -> bool {
        layer >= 1 && self.initialized.get(layer - 1).copied().unwrap_or(false)
    }

    pub fn all_initialized(&self) -> bool {
        self.initialized.iter().all(|&b| b)
    }

    /// Boundary-condition injection: `V_0 = s_init` for this layer.
    pub fn inject(&mut self, layer: usize, s_init: &Tensor) -> Result<()> {
        let i = self.slot(layer)?;
        set_boundary_condition(&mut self.layers[i], s_init)?;
        self.initialized[i] = true;
        Ok(())
    }

    pub fn reset_layer_zero(&mut self, layer: usize) -> Result<()> {
        let i = self.slot(layer)?;
        self.layers[i].v.data_mut().fill(0.0);
        self.initialized[i] = true;
        Ok(())
    }

    pub fn reset_all_zero(&mut self) {
        for l in &mut self.layers {
            l.v.data_mut().fill(0.0);
        }
        self.initialized.fill(true);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrator_reset_is_exact() {
        let mut integ = OutputIntegrator::zeros(Shape::new(1, 2, 2), 0.8).unwrap();
        let o_i = Tensor::from_vec(Shape::new(1, 2, 2), vec![0.1, -3.0, 7.5, 1e-7]).unwrap();
        integ.reset_to(&o_i).unwrap();
        assert_eq!(integ.o, o_i);
    }

    #[test]
    fn decay_then_add() {
        let mut integ = OutputIntegrator::zeros(Shape::new(1, 1, 1), 0.5).unwrap();
        integ
            .reset_to(&Tensor::filled(Shape::new(1, 1, 1), 4.0))
            .unwrap();
        integ
            .update(&Tensor::filled(Shape::new(1, 1, 1), 1.0))
            .unwrap();
        assert_eq!(integ.o.data(), &[3.0]);
    }

    #[test]
    fn decay_out_of_range() {
        assert!(OutputIntegrator::zeros(Shape::new(1, 1, 1), 1.5).is_err());
    }

    #[test]
    fn initialization_flags() {
        let spec = SnnNetSpec::u_net(16, 16, [2, 2, 2, 2, 2, 2, 2, 2], 3);
        let mut state = SnnState::uninitialized(&spec, 0.8).unwrap();
        assert!(!state.all_initialized());
        for k in 1..=9 {
            state.reset_layer_zero(k).unwrap();
        }
        assert!(state.all_initialized());
        let shape = state.layer(3).unwrap().shape();
        assert!(state
            .inject(3, &Tensor::zeros(Shape::new(1, 1, 1)))
            .is_err());
        state.inject(3, &Tensor::filled(shape, 2.0)).unwrap();
        assert!(state.inject(10, &Tensor::filled(shape, 2.0)).is_err());
        assert!(state.layer(0).is_err());
    }
}
