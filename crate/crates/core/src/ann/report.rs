use std::collections::BTreeMap;

use serde::Serialize;

use crate::tensornet::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum StateGroup {
    Encoder,
    Residual,
    Decoder,
    Last,
}

impl StateGroup {
    pub fn name(self) -> &'static str {
        match self {
            StateGroup::Encoder => "encoder",
            StateGroup::Residual => "residual",
            StateGroup::Decoder => "decoder",
            StateGroup::Last => "last",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupSummary {
    pub group: StateGroup,
    pub count: usize,
    pub mean: f64,
    /// Minimum, lower quartile, median, upper quartile, maximum.
    pub quantiles: [f64; 5],
    pub firing_fraction: f64,
    pub negative_fraction: f64,
}

pub const QUANTILE_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Linear interpolation between order statistics. `sorted` must be ascending.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Summarizes initialized membrane potentials per layer group.
/// Groups without any layer are omitted.
pub fn state_distribution_report(
    s_maps: &BTreeMap<usize, Tensor>,
    v_th: f32,
    group_of: impl Fn(usize) -> StateGroup,
) -> Vec<GroupSummary> {
    let mut grouped: BTreeMap<StateGroup, Vec<f64>> = BTreeMap::new();
    for (&layer, map) in s_maps {
        grouped
            .entry(group_of(layer))
            .or_default()
            .extend(map.data().iter().map(|&v| v as f64));
    }
    grouped
        .into_iter()
        .map(|(group, mut values)| {
            let n = values.len();
            let firing = values.iter().filter(|&&v| v >= v_th as f64).count();
            let negative = values.iter().filter(|&&v| v < 0.0).count();
            let mean = if n == 0 {
                0.0
            } else {
                values.iter().sum::<f64>() / n as f64
            };
            values.sort_by(f64::total_cmp);
            let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
            GroupSummary {
                group,
                count: n,
                mean,
                quantiles: QUANTILE_LEVELS.map(|q| quantile(&values, q)),
                firing_fraction: frac(firing),
                negative_fraction: frac(negative),
            }
        })
        .collect()
}
