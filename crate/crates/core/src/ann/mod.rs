//! Dense U-Net that runs at the low rate, plus the heads that turn its
//! features into SNN membrane potentials.

mod heads;
mod net;
mod report;

pub use heads::{
    default_head_specs, init_heads_forward, write_bn, HeadVariant, InitHead, InitHeadSpec,
};
pub use net::{AnnNetSpec, AnnNetwork, AnnOutput, DecoderSpec, EncoderSpec};
pub use report::{state_distribution_report, GroupSummary, StateGroup};
