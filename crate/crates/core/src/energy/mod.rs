//! Operation counting and energy/power estimates.
//!
//! Dense convolutions cost one MAC per multiply. Convolutions that consume
//! binary spikes cost one AC per (weight, active input) pair, estimated as
//! the dense count scaled by the activity of the consumed spikes.

use serde::{Deserialize, Serialize};

use crate::ann::{AnnNetSpec, InitHeadSpec};
use crate::error::{Error, Result};
use crate::snn::{SnnNetSpec, SpikeActivityRecord};
use crate::tensornet::count_macs;

/// Energy per operation in picojoules (32-bit, 7 nm CMOS defaults).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConstants {
    pub e_mac_pj: f64,
    pub e_ac_pj: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        Self {
            e_mac_pj: 1.69,
            e_ac_pj: 0.38,
        }
    }
}

impl EnergyConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_mac_pj > 0.0 && self.e_ac_pj > 0.0) {
            return Err(Error::config("energy constants must be positive"));
        }
        if self.e_ac_pj >= self.e_mac_pj {
            return Err(Error::config("an AC must cost less than a MAC"));
        }
        Ok(())
    }

    pub fn energy_pj(&self, macs: f64, acs: f64) -> f64 {
        macs * self.e_mac_pj + acs * self.e_ac_pj
    }
}

/// Watts drawn by the given operation rates.
pub fn power(macs_per_s: f64, acs_per_s: f64, constants: &EnergyConstants) -> f64 {
    constants.energy_pj(macs_per_s, acs_per_s) * 1e-12
}

/// Static op count of one convolution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerMacs {
    pub name: String,
    pub macs: u64,
}

pub fn count_ann_macs(spec: &AnnNetSpec) -> Vec<LayerMacs> {
    spec.conv_plan()
        .into_iter()
        .map(|(layer, conv, c, h, w)| LayerMacs {
            name: format!("ann.{layer}.{conv}"),
            macs: count_macs(&c, h, w),
        })
        .collect()
}

/// Dense (all inputs active) counts of every SNN convolution.
pub fn count_snn_macs(spec: &SnnNetSpec) -> Vec<LayerMacs> {
    spec.conv_plan()
        .into_iter()
        .map(|p| LayerMacs {
            name: conv_name(spec, p.layer),
            macs: p.dense_macs(),
        })
        .collect()
}

pub fn count_head_macs(heads: &[InitHeadSpec]) -> Vec<LayerMacs> {
    heads
        .iter()
        .map(|h| LayerMacs {
            name: format!("init.{}", h.target_layer),
            macs: h.macs(),
        })
        .collect()
}

fn conv_name(spec: &SnnNetSpec, layer: usize) -> String {
    if layer == spec.prediction_layer() {
        format!("out.{layer}.conv")
    } else {
        format!("snn.{layer}.conv")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatePoint {
    pub rate_hz: f64,
    pub power_w: f64,
    pub snn_share: f64,
}

/// Hybrid power as the SNN rate varies with the ANN rate held fixed.
pub fn hybrid_power_vs_rate(
    ann_macs_per_inference: f64,
    snn_macs_per_step: f64,
    snn_acs_per_step: f64,
    ann_rate_hz: f64,
    snn_rates_hz: &[f64],
    constants: &EnergyConstants,
) -> Result<Vec<RatePoint>> {
    if ann_rate_hz < 0.0 || snn_rates_hz.iter().any(|&r| !(r >= 0.0)) {
        return Err(Error::config("rates must be non-negative"));
    }
    let ann_w = power(ann_macs_per_inference * ann_rate_hz, 0.0, constants);
    Ok(snn_rates_hz
        .iter()
        .map(|&r| {
            let snn_w = power(snn_macs_per_step * r, snn_acs_per_step * r, constants);
            let total = ann_w + snn_w;
            RatePoint {
                rate_hz: r,
                power_w: total,
                snn_share: if total > 0.0 { snn_w / total } else { 0.0 },
            }
        })
        .collect())
}

/// Dense-network power at each prediction rate.
pub fn ann_power_vs_rate(
    macs_per_inference: f64,
    rates_hz: &[f64],
    constants: &EnergyConstants,
) -> Vec<RatePoint> {
    rates_hz
        .iter()
        .map(|&r| RatePoint {
            rate_hz: r,
            power_w: power(macs_per_inference * r, 0.0, constants),
            snn_share: 0.0,
        })
        .collect()
}

pub fn rate_curve_csv(points: &[RatePoint]) -> String {
    let mut out = String::from("rate_hz,power_w,snn_share\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.rate_hz, p.power_w, p.snn_share));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Ann,
    Init,
    Snn,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub layer: String,
    pub part: Part,
    pub macs: u64,
    pub acs: u64,
    /// Activity of the spikes this layer consumes (SNN convs only).
    pub zeta: Option<f64>,
    pub energy_pj: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyTotals {
    pub macs: u64,
    pub acs: u64,
    pub energy_pj: f64,
    pub duration_s: f64,
    pub power_w: f64,
    pub snn_energy_pj: f64,
    pub snn_share: f64,
    pub snn_steps: u64,
    pub ann_inferences: u64,
    pub network_zeta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    pub rows: Vec<ReportRow>,
    pub totals: EnergyTotals,
}

/// What ran during a measured span.
pub struct RunSummary<'a> {
    pub ann: Option<&'a AnnNetSpec>,
    /// Heads that ran at every ANN inference (empty when states were not
    /// injected).
    pub heads: &'a [InitHeadSpec],
    pub snn: &'a SnnNetSpec,
    pub activity: &'a SpikeActivityRecord,
    pub ann_inferences: u64,
    pub duration_s: f64,
}

/// `round(dense · spikes / neurons)` in exact integer arithmetic.
pub fn activity_scaled_acs(dense_per_step: u64, spikes: u64, input_neurons: u64) -> u64 {
    if input_neurons == 0 {
        return 0;
    }
    let num = dense_per_step as u128 * spikes as u128;
    let den = input_neurons as u128;
    ((num + den / 2) / den) as u64
}

/// Builds the per-layer report from measured activity. SNN batch norms and
/// the integrator decay are counted as MACs, one per element per step.
pub fn measure_and_report(
    run: &RunSummary<'_>,
    constants: &EnergyConstants,
) -> Result<EnergyReport> {
    constants.validate()?;
    let act = run.activity;
    let snn = run.snn;
    if act.layers.len() != snn.num_layers() + 1 {
        return Err(Error::contract(format!(
            "activity covers {} layers, SNN has {} plus the input",
            act.layers.len().saturating_sub(1),
            snn.num_layers()
        )));
    }
    for (k, (rec, shape)) in act
        .layers
        .iter()
        .skip(1)
        .zip(snn.layer_shapes())
        .enumerate()
    {
        if rec.neurons != shape.len() as u64 {
            return Err(Error::contract(format!(
                "activity for SNN layer {} has {} neurons, expected {}",
                k + 1,
                rec.neurons,
                shape.len()
            )));
        }
    }
    let steps = act.timesteps;
    let inf = run.ann_inferences;
    let mut rows = Vec::new();
    let mac_row = |layer: String, part, macs: u64| ReportRow {
        layer,
        part,
        macs,
        acs: 0,
        zeta: None,
        energy_pj: constants.energy_pj(macs as f64, 0.0),
    };
    if let Some(ann) = run.ann {
        for l in count_ann_macs(ann) {
            rows.push(mac_row(l.name, Part::Ann, l.macs * inf));
        }
    }
    for l in count_head_macs(run.heads) {
        rows.push(mac_row(l.name, Part::Init, l.macs * inf));
    }
    for p in snn.conv_plan() {
        let spikes: u64 = p.sources.iter().map(|&s| act.layers[s].spikes).sum();
        let acs = activity_scaled_acs(p.dense_macs(), spikes, p.input_neurons);
        let zeta = (steps > 0 && p.input_neurons > 0)
            .then(|| spikes as f64 / (p.input_neurons as f64 * steps as f64));
        rows.push(ReportRow {
            layer: conv_name(snn, p.layer),
            part: Part::Snn,
            macs: 0,
            acs,
            zeta,
            energy_pj: constants.energy_pj(0.0, acs as f64),
        });
        if p.layer <= snn.num_layers() {
            let neurons = act.layers[p.layer].neurons;
            rows.push(mac_row(
                format!("snn.{}.bn", p.layer),
                Part::Snn,
                neurons * steps,
            ));
        }
    }
    let out = snn.output_shape();
    rows.push(mac_row(
        "out.integrator".into(),
        Part::Snn,
        out.len() as u64 * steps,
    ));

    let macs = rows.iter().map(|r| r.macs).sum();
    let acs = rows.iter().map(|r| r.acs).sum();
    let energy_pj: f64 = rows.iter().map(|r| r.energy_pj).sum();
    let snn_energy_pj: f64 = rows
        .iter()
        .filter(|r| r.part == Part::Snn)
        .map(|r| r.energy_pj)
        .sum();
    let neurons: u64 = act.layers.iter().skip(1).map(|l| l.neurons).sum();
    let totals = EnergyTotals {
        macs,
        acs,
        energy_pj,
        duration_s: run.duration_s,
        power_w: if run.duration_s > 0.0 {
            energy_pj * 1e-12 / run.duration_s
        } else {
            0.0
        },
        snn_energy_pj,
        snn_share: if energy_pj > 0.0 {
            snn_energy_pj / energy_pj
        } else {
            0.0
        },
        snn_steps: steps,
        ann_inferences: inf,
        network_zeta: (steps > 0 && neurons > 0)
            .then(|| act.total_spikes() as f64 / (neurons as f64 * steps as f64)),
    };
    Ok(EnergyReport { rows, totals })
}

impl EnergyReport {
    /// Per-layer rows, a `total` row, then a `metric,value` block.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,macs,acs,zeta,energy_pj\n");
        for r in &self.rows {
            let z = r.zeta.map(|z| z.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.layer, r.macs, r.acs, z, r.energy_pj
            ));
        }
        let t = &self.totals;
        let nz = t.network_zeta.map(|z| z.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "total,{},{},{},{}\n",
            t.macs, t.acs, nz, t.energy_pj
        ));
        out.push_str("\nmetric,value\n");
        for (k, v) in [
            ("duration_s", t.duration_s.to_string()),
            ("power_w", t.power_w.to_string()),
            ("snn_energy_pj", t.snn_energy_pj.to_string()),
            ("snn_share", t.snn_share.to_string()),
            ("snn_steps", t.snn_steps.to_string()),
            ("ann_inferences", t.ann_inferences.to_string()),
        ] {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }
}
