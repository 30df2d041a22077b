use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{DEFAULT_HISTOGRAM_BINS, DEFAULT_HISTOGRAM_EVENTS};
use crate::lif::LifParams;
use crate::snn::DEFAULT_OUTPUT_DECAY;

/// Ablation modes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HybridMode {
    /// Pure SNN: zero states, zero integrator.
    A,
    /// Membrane states from the ANN, zero integrator.
    B,
    /// Zero states, integrator reset to the ANN heatmaps.
    C,
    /// Both.
    #[default]
    D,
}

impl HybridMode {
    pub const ALL: [HybridMode; 4] = [HybridMode::A, HybridMode::B, HybridMode::C, HybridMode::D];

    pub fn injects_states(self) -> bool {
        matches!(self, HybridMode::B | HybridMode::D)
    }

    pub fn inits_output(self) -> bool {
        matches!(self, HybridMode::C | HybridMode::D)
    }

    pub fn needs_ann(self) -> bool {
        self != HybridMode::A
    }
}

impl fmt::Display for HybridMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for HybridMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(HybridMode::A),
            "B" => Ok(HybridMode::B),
            "C" => Ok(HybridMode::C),
            "D" => Ok(HybridMode::D),
            other => Err(Error::config(format!(
                "unknown mode {other:?}, expected A, B, C or D"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenseInput {
    #[default]
    EventHistogram,
    Rgb,
}

/// Which spiking layers receive ANN states in modes B and D. The others
/// start from zero.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitLayers {
    #[default]
    All,
    LastOnly,
}

impl InitLayers {
    pub fn includes(&self, layer: usize, num_layers: usize) -> bool {
        match self {
            InitLayers::All => true,
            InitLayers::LastOnly => layer == num_layers,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridConfig {
    pub ann_rate_hz: f64,
    pub snn_dt_ms: f64,
    pub mode: HybridMode,
    pub dense_input: DenseInput,
    pub histogram_events: usize,
    pub histogram_bins: usize,
    pub init_layers: InitLayers,
    pub output_decay: f32,
    pub lif: LifParams,
    /// Keep every heatmap tensor in the trace (memory grows with span).
    pub keep_heatmaps: bool,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            ann_rate_hz: 10.0,
            snn_dt_ms: 10.0,
            mode: HybridMode::D,
            dense_input: DenseInput::EventHistogram,
            histogram_events: DEFAULT_HISTOGRAM_EVENTS,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            init_layers: InitLayers::All,
            output_decay: DEFAULT_OUTPUT_DECAY,
            lif: LifParams::hybrid(),
            keep_heatmaps: true,
        }
    }
}

/// Integer schedule derived from a config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub period_us: u64,
    pub dt_us: u64,
    /// Trace entries per ANN period: the tick entry plus the SNN steps.
    pub steps_per_period: usize,
}

fn whole_us(value: f64, what: &str) -> Result<u64> {
    let r = value.round();
    if !value.is_finite() || r < 1.0 || (value - r).abs() > 1e-6 * r.max(1.0) {
        return Err(Error::config(format!(
            "{what} = {value} us is not a positive whole number of microseconds"
        )));
    }
    Ok(r as u64)
}

impl HybridConfig {
    pub fn schedule(&self) -> Result<Schedule> {
        if !(self.ann_rate_hz > 0.0) {
            return Err(Error::config("ann_rate_hz must be positive"));
        }
        let period_us = whole_us(1e6 / self.ann_rate_hz, "ANN period")?;
        let dt_us = whole_us(self.snn_dt_ms * 1e3, "snn_dt")?;
        if period_us % dt_us != 0 {
            return Err(Error::config(format!(
                "ANN period {period_us} us is not a multiple of snn_dt {dt_us} us"
            )));
        }
        Ok(Schedule {
            period_us,
            dt_us,
            steps_per_period: (period_us / dt_us) as usize,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        self.lif.validate()?;
        if !(0.0..=1.0).contains(&self.output_decay) {
            return Err(Error::config(format!(
                "output_decay {} outside [0, 1]",
                self.output_decay
            )));
        }
        if self.histogram_events == 0 || self.histogram_bins == 0 {
            return Err(Error::config(
                "histogram_events and histogram_bins must be positive",
            ));
        }
        Ok(())
    }
}

/// Variant of `config` that injects only the last spiking layer's state
/// (A becomes B, C becomes D).
pub fn last_layer_only_init(config: &HybridConfig) -> HybridConfig {
    let mode = match config.mode {
        HybridMode::A | HybridMode::B => HybridMode::B,
        HybridMode::C | HybridMode::D => HybridMode::D,
    };
    HybridConfig {
        mode,
        init_layers: InitLayers::LastOnly,
        ..config.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let s = HybridConfig::default().schedule().unwrap();
        assert_eq!(
            s,
            Schedule {
                period_us: 100_000,
                dt_us: 10_000,
                steps_per_period: 10
            }
        );
        let c = HybridConfig {
            ann_rate_hz: 5.0,
            snn_dt_ms: 5.0,
            ..Default::default()
        };
        assert_eq!(c.schedule().unwrap().steps_per_period, 40);
    }

    #[test]
    fn non_integer_ratios_rejected() {
        let c = HybridConfig {
            snn_dt_ms: 30.0,
            ..Default::default()
        };
        assert!(c.schedule().is_err());
        let c = HybridConfig {
            ann_rate_hz: 3.0,
            ..Default::default()
        };
        assert!(c.schedule().is_err());
        let c = HybridConfig {
            snn_dt_ms: 0.0,
            ..Default::default()
        };
        assert!(c.schedule().is_err());
    }

    #[test]
    fn last_layer_only() {
        for mode in HybridMode::ALL {
            let c = last_layer_only_init(&HybridConfig {
                mode,
                ..Default::default()
            });
            assert!(c.mode.injects_states());
            assert_eq!(c.mode.inits_output(), mode.inits_output());
            let injected = (1..=9).filter(|&k| c.init_layers.includes(k, 9)).count();
            assert_eq!(injected, 1);
            assert!(c.init_layers.includes(9, 9));
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("c".parse::<HybridMode>().unwrap(), HybridMode::C);
        assert!("E".parse::<HybridMode>().is_err());
    }
}
