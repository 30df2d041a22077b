use serde::Serialize;

use crate::error::{Error, Result};

use super::spec::SnnNetSpec;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerActivity {
    pub name: String,
    pub neurons: u64,
    pub spikes: u64,
}

/// One line of the spike dump.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DumpRow {
    pub step: u64,
    pub layer: usize,
    pub count: u64,
}

/// Spike counts per layer accumulated over a run. Index 0 is the event
/// input (its "spikes" are events); indices 1.. are the spiking layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SpikeActivityRecord {
    pub layers: Vec<LayerActivity>,
    pub timesteps: u64,
    #[serde(skip)]
    pub log: Vec<DumpRow>,
}

impl SpikeActivityRecord {
    pub fn for_spec(spec: &SnnNetSpec) -> Self {
        let mut layers = vec![LayerActivity {
            name: "input".into(),
            neurons: spec.input_shape().len() as u64,
            spikes: 0,
        }];
        layers.extend(
            spec.layer_shapes()
                .iter()
                .enumerate()
                .map(|(i, s)| LayerActivity {
                    name: format!("snn.{}", i + 1),
                    neurons: s.len() as u64,
                    spikes: 0,
                }),
        );
        Self {
            layers,
            timesteps: 0,
            log: Vec::new(),
        }
    }

    /// Adds one step's counts (`counts[0]` = input events).
    pub fn record_step(&mut self, counts: &[u64]) -> Result<()> {
        if counts.len() != self.layers.len() {
            return Err(Error::contract(format!(
                "activity step has {} counts for {} layers",
                counts.len(),
                self.layers.len()
            )));
        }
        let step = self.timesteps;
        for (layer, (acc, &c)) in self.layers.iter_mut().zip(counts).enumerate() {
            acc.spikes += c;
            self.log.push(DumpRow {
                step,
                layer,
                count: c,
            });
        }
        self.timesteps += 1;
        Ok(())
    }

    pub fn total_spikes(&self) -> u64 {
        self.layers.iter().skip(1).map(|l| l.spikes).sum()
    }

    /// Spike dump: `step,layer,count`.
    pub fn to_dump_csv(&self) -> String {
        let mut out = String::from("step,layer,count\n");
        for r in &self.log {
            out.push_str(&format!("{},{},{}\n", r.step, r.layer, r.count));
        }
        out
    }

    /// Rebuilds totals from dump rows, keeping this record's layer layout.
    pub fn recount(&self, rows: &[DumpRow]) -> Result<Self> {
        let mut out = Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerActivity {
                    spikes: 0,
                    ..l.clone()
                })
                .collect(),
            timesteps: 0,
            log: rows.to_vec(),
        };
        for r in rows {
            let layer = out.layers.get_mut(r.layer).ok_or_else(|| {
                Error::contract(format!("dump references unknown layer {}", r.layer))
            })?;
            layer.spikes += r.count;
            out.timesteps = out.timesteps.max(r.step + 1);
        }
        Ok(out)
    }
}

pub fn parse_dump(text: &str, source_name: &str) -> Result<Vec<DumpRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("step")) {
            continue;
        }
        let bad = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            location: format!("line {}", i + 1),
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", fields.len())));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("{s:?}: {e}")));
        rows.push(DumpRow {
            step: num(fields[0])?,
            layer: num(fields[1])? as usize,
            count: num(fields[2])?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActivitySummary {
    /// zeta per layer, same indexing as the record (0 = event input).
    pub zeta: Vec<f64>,
    /// Spikes over neuron-steps across all spiking layers.
    pub network_average: f64,
}

pub fn spike_activity(record: &SpikeActivityRecord) -> Result<ActivitySummary> {
    if record.timesteps == 0 {
        return Err(Error::contract("spike activity over zero timesteps"));
    }
    let t = record.timesteps as f64;
    let zeta = record
        .layers
        .iter()
        .map(|l| {
            if l.neurons == 0 {
                0.0
            } else {
                l.spikes as f64 / (l.neurons as f64 * t)
            }
        })
        .collect();
    let neurons: u64 = record.layers.iter().skip(1).map(|l| l.neurons).sum();
    let network_average = if neurons == 0 {
        0.0
    } else {
        record.total_spikes() as f64 / (neurons as f64 * t)
    };
    Ok(ActivitySummary {
        zeta,
        network_average,
    })
}
