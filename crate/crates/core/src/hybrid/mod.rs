//! Slow–fast scheduler: the ANN initializes the SNN at a low rate, the SNN
//! tracks from events in between.

mod config;
mod model;
mod run;

pub use config::{
    last_layer_only_init, DenseInput, HybridConfig, HybridMode, InitLayers, Schedule,
};
pub use model::{HybridModel, ModelSpec};
pub use run::{
    curve_to_csv, error_over_time, parse_trace_csv, run_hybrid, run_hybrid_with_frames, CurvePoint,
    FrameSource, PredictionTrace, Provenance, StepPrediction, TraceEntry, TraceRow,
};
