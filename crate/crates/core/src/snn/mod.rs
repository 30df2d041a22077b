//! Spiking U-Net stepped at the high rate, with a leaky output integrator
//! and per-layer spike accounting.

mod activity;
mod network;
mod spec;
mod state;

pub use activity::{
    parse_dump, spike_activity, ActivitySummary, DumpRow, LayerActivity, SpikeActivityRecord,
};
pub use network::{run_sequence, SnnNetwork, SpikingConv};
pub use spec::{SnnConvPlan, SnnLayerKind, SnnLayerSpec, SnnNetSpec};
pub use state::{OutputIntegrator, SnnState, DEFAULT_OUTPUT_DECAY};
