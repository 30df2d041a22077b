use serde::Serialize;

use super::config::{DenseInput, HybridConfig, Schedule};
use super::model::HybridModel;
use crate::error::{Error, Result};
use crate::events::{build_dense_histogram, slice_spike_tensor, DenseRepresentation, EventStream};
use crate::metrics::{decode_heatmaps, mpjpe, opt_f64, Pose2D, TimedPose};
use crate::snn::{SnnState, SpikeActivityRecord};
use crate::tensornet::{Tensor, WeightContainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Ann,
    Snn,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Ann => "ann",
            Provenance::Snn => "snn",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub t_us: u64,
    pub source: Provenance,
    /// Index of the ANN period this entry belongs to.
    pub period: usize,
    /// Steps since the last initialization; 0 for the tick entry itself.
    pub step: usize,
    pub heatmaps: Option<Tensor>,
    pub pose: Pose2D,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionTrace {
    pub entries: Vec<TraceEntry>,
    pub schedule: Schedule,
    pub ann_inferences: usize,
    pub activity: SpikeActivityRecord,
}

/// Supplies RGB frames when the ANN runs on images instead of events.
pub trait FrameSource {
    /// A 3×H×W frame representing the scene just before `t_us`.
    fn frame_before(&self, t_us: u64) -> Result<Tensor>;
}

pub fn run_hybrid(
    stream: &EventStream,
    t_start: u64,
    t_end: u64,
    config: &HybridConfig,
    model: &HybridModel,
) -> Result<PredictionTrace> {
    run_hybrid_with_frames(stream, t_start, t_end, config, model, None)
}

fn dense_input(
    stream: &EventStream,
    t: u64,
    config: &HybridConfig,
    frames: Option<&dyn FrameSource>,
) -> Result<DenseRepresentation> {
    match config.dense_input {
        DenseInput::EventHistogram => {
            let rep =
                build_dense_histogram(stream, t, config.histogram_events, config.histogram_bins)?;
            if rep.short {
                log::debug!("ANN tick at {t} us saw only {} events", rep.events_used);
            }
            Ok(rep)
        }
        DenseInput::Rgb => {
            let frames =
                frames.ok_or_else(|| Error::config("dense_input = rgb needs a frame source"))?;
            DenseRepresentation::from_rgb(frames.frame_before(t)?, t)
        }
    }
}

/// Resets the SNN for the period starting at tick `t` according to the mode.
/// Returns whether the ANN ran.
fn initialize(
    state: &mut SnnState,
    stream: &EventStream,
    t: u64,
    config: &HybridConfig,
    model: &HybridModel,
    frames: Option<&dyn FrameSource>,
) -> Result<bool> {
    let mode = config.mode;
    state.reset_all_zero();
    state.integrator.reset_zero();
    if !mode.needs_ann() {
        return Ok(false);
    }
    let input = dense_input(stream, t, config, frames)?;
    let out = model.ann()?.forward(&input.tensor)?;
    if mode.injects_states() {
        let n = model.spec.snn.num_layers();
        for k in (1..=n).filter(|&k| config.init_layers.includes(k, n)) {
            let head = model
                .head(k)
                .ok_or_else(|| Error::config(format!("no init head for SNN layer {k}")))?;
            let feature = out.feature(head.spec.tap).ok_or_else(|| {
                Error::contract(format!(
                    "ANN produced no layer {} for head {k}",
                    head.spec.tap
                ))
            })?;
            state.inject(k, &head.forward(feature)?)?;
        }
    }
    if mode.inits_output() {
        state.integrator.reset_to(&out.o_init)?;
    }
    Ok(true)
}

/// Runs the ANN at every tick `t_start + i·period` and steps the SNN on the
/// events after each tick. Each period yields the tick entry followed by one
/// entry per SNN step, on a uniform grid of spacing `dt`.
pub fn run_hybrid_with_frames(
    stream: &EventStream,
    t_start: u64,
    t_end: u64,
    config: &HybridConfig,
    model: &HybridModel,
    frames: Option<&dyn FrameSource>,
) -> Result<PredictionTrace> {
    config.validate()?;
    if t_end <= t_start {
        return Err(Error::contract(format!("empty span [{t_start}, {t_end})")));
    }
    if config.mode.needs_ann() && model.ann.is_none() {
        return Err(Error::config(format!(
            "mode {} needs ANN weights",
            config.mode
        )));
    }
    if config.dense_input == DenseInput::EventHistogram {
        if let Some(ann) = &model.ann {
            if ann.spec.in_channels != 2 * config.histogram_bins {
                return Err(Error::config(format!(
                    "ANN takes {} channels, histogram has {}",
                    ann.spec.in_channels,
                    2 * config.histogram_bins
                )));
            }
        }
    }
    let schedule = config.schedule()?;
    let snn_spec = &model.spec.snn;
    if (stream.height() as usize, stream.width() as usize) != (snn_spec.height, snn_spec.width) {
        return Err(Error::contract(format!(
            "stream geometry {}x{} differs from network input {}x{}",
            stream.width(),
            stream.height(),
            snn_spec.width,
            snn_spec.height
        )));
    }
    let mut state = SnnState::uninitialized(snn_spec, config.output_decay)?;
    let mut activity = SpikeActivityRecord::for_spec(snn_spec);
    let mut entries = Vec::new();
    let mut ann_inferences = 0;
    let emit = |entries: &mut Vec<TraceEntry>, t_us, source, period, step, o: &Tensor| {
        entries.push(TraceEntry {
            t_us,
            source,
            period,
            step,
            heatmaps: config.keep_heatmaps.then(|| o.clone()),
            pose: decode_heatmaps(o),
        });
    };
    let mut tick = t_start;
    let mut period = 0usize;
    while tick < t_end {
        if initialize(&mut state, stream, tick, config, model, frames)? {
            ann_inferences += 1;
        }
        emit(
            &mut entries,
            tick,
            Provenance::Ann,
            period,
            0,
            &state.integrator.o,
        );
        for j in 1..schedule.steps_per_period {
            let t = tick + j as u64 * schedule.dt_us;
            if t >= t_end {
                break;
            }
            let window = slice_spike_tensor(stream, t - schedule.dt_us, t)?;
            let counts = model.snn.step(&mut state, &window.tensor, &config.lif)?;
            activity.record_step(&counts)?;
            emit(
                &mut entries,
                t,
                Provenance::Snn,
                period,
                j,
                &state.integrator.o,
            );
        }
        tick += schedule.period_us;
        period += 1;
    }
    Ok(PredictionTrace {
        entries,
        schedule,
        ann_inferences,
        activity,
    })
}

impl PredictionTrace {
    /// `t_us,source,joint_id,u,v`; invisible joints leave `u,v` empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_us,source,joint_id,u,v\n");
        for e in &self.entries {
            for (j, (c, &vis)) in e.pose.coords.iter().zip(&e.pose.visible).enumerate() {
                if vis {
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        e.t_us,
                        e.source.as_str(),
                        j,
                        c[0],
                        c[1]
                    ));
                } else {
                    out.push_str(&format!("{},{},{},,\n", e.t_us, e.source.as_str(), j));
                }
            }
        }
        out
    }

    /// Heatmaps of every kept entry, named `out.<entry>.heatmap`.
    pub fn heatmap_container(&self) -> Result<WeightContainer> {
        let mut c = WeightContainer::new();
        for (i, e) in self.entries.iter().enumerate() {
            if let Some(h) = &e.heatmaps {
                let s = h.shape();
                c.insert(
                    &format!("out.{i}.heatmap"),
                    &[s.c, s.h, s.w],
                    h.data().to_vec(),
                )?;
            }
        }
        Ok(c)
    }

    pub fn poses(&self) -> Vec<TimedPose> {
        self.entries
            .iter()
            .map(|e| TimedPose {
                t_us: e.t_us,
                pose2d: e.pose.clone(),
                pose3d: None,
            })
            .collect()
    }
}

/// Row of a parsed trace file.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t_us: u64,
    pub source: Provenance,
    pub pose: Pose2D,
}

/// Reads a trace written by [`PredictionTrace::to_csv`].
pub fn parse_trace_csv(text: &str, joints: usize, source_name: &str) -> Result<Vec<TraceRow>> {
    let mut rows: Vec<TraceRow> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("t_us")) {
            continue;
        }
        let bad = |m: String| Error::Parse {
            source_name: source_name.to_string(),
            location: format!("line {}", i + 1),
            message: m,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields, got {}", f.len())));
        }
        let t_us: u64 = f[0].trim().parse().map_err(|e| bad(format!("t_us: {e}")))?;
        let source = match f[1].trim() {
            "ann" => Provenance::Ann,
            "snn" => Provenance::Snn,
            other => return Err(bad(format!("unknown source {other:?}"))),
        };
        let j: usize = f[2]
            .trim()
            .parse()
            .map_err(|e| bad(format!("joint_id: {e}")))?;
        if j >= joints {
            return Err(bad(format!("joint_id {j} >= {joints}")));
        }
        if rows.last().is_none_or(|r| r.t_us != t_us) {
            if rows.last().is_some_and(|r| r.t_us > t_us) {
                return Err(bad("timestamps must not decrease".into()));
            }
            rows.push(TraceRow {
                t_us,
                source,
                pose: Pose2D::invisible(joints),
            });
        }
        let row = rows.last_mut().expect("pushed above");
        if let (Some(u), Some(v)) = (opt_f64(f[3]).map_err(bad)?, opt_f64(f[4]).map_err(bad)?) {
            row.pose.coords[j] = [u, v];
            row.pose.visible[j] = true;
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: usize,
    /// Mean MPJPE over all periods with a matched label at this step.
    pub mpjpe: Option<f64>,
    pub samples: usize,
}

/// A prediction at time `t_us` with its offset since the last initialization.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPrediction {
    pub t_us: u64,
    pub step: usize,
    pub pose: Pose2D,
}

impl From<&TraceEntry> for StepPrediction {
    fn from(e: &TraceEntry) -> Self {
        Self {
            t_us: e.t_us,
            step: e.step,
            pose: e.pose.clone(),
        }
    }
}

/// MPJPE against the nearest label within half a step, averaged per step
/// index since initialization. Empty (with a warning) if nothing overlaps.
pub fn error_over_time(
    predictions: &[StepPrediction],
    labels: &[TimedPose],
    schedule: &Schedule,
) -> Result<Vec<CurvePoint>> {
    let mut sums = vec![(0.0f64, 0usize); schedule.steps_per_period];
    let mut sorted: Vec<&TimedPose> = labels.iter().collect();
    sorted.sort_by_key(|l| l.t_us);
    let half = schedule.dt_us / 2;
    let mut matched = 0usize;
    for p in predictions {
        let i = sorted.partition_point(|l| l.t_us < p.t_us);
        let nearest = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|k| sorted.get(k))
            .min_by_key(|l| l.t_us.abs_diff(p.t_us));
        let Some(label) = nearest.filter(|l| l.t_us.abs_diff(p.t_us) <= half) else {
            continue;
        };
        matched += 1;
        if let (Some(e), Some(slot)) = (mpjpe(&p.pose, &label.pose2d)?, sums.get_mut(p.step)) {
            slot.0 += e;
            slot.1 += 1;
        }
    }
    if matched == 0 {
        log::warn!("no label lies within half a step of any prediction");
        return Ok(Vec::new());
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(step, (sum, n))| CurvePoint {
            step,
            mpjpe: (n > 0).then(|| sum / n as f64),
            samples: n,
        })
        .collect())
}

pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("step,mpjpe,samples\n");
    for p in curve {
        let v = p.mpjpe.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", p.step, v, p.samples));
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::super::config::{last_layer_only_init, HybridMode};
    use super::super::model::tests::small_spec;
    use super::*;
    use crate::events::{Event, Polarity};

    fn stream() -> EventStream {
        let events = (0..3000u64)
            .map(|i| {
                let x = ((i / 7) % 16) as u16;
                let y = ((i * 5) % 16) as u16;
                Event::new(i * 300, x, y, Polarity::from_bit((i % 2) as u8).unwrap())
            })
            .collect();
        EventStream::new(16, 16, events).unwrap()
    }

    fn config(mode: HybridMode) -> HybridConfig {
        HybridConfig {
            mode,
            histogram_bins: 2,
            histogram_events: 500,
            ..Default::default()
        }
    }

    fn model(seed: u64) -> HybridModel {
        HybridModel::random(small_spec(), &mut ChaCha8Rng::seed_from_u64(seed), 2.0).unwrap()
    }

    #[test]
    fn one_second_at_ten_and_hundred_hertz() {
        let trace = run_hybrid(&stream(), 0, 1_000_000, &config(HybridMode::D), &model(1)).unwrap();
        assert_eq!(trace.ann_inferences, 10);
        assert_eq!(trace.entries.len(), 100);
        assert_eq!(
            trace
                .entries
                .iter()
                .filter(|e| e.source == Provenance::Ann)
                .count(),
            10
        );
        assert!(trace.entries.windows(2).all(|w| w[0].t_us < w[1].t_us));
        assert_eq!(trace.activity.timesteps, 90);
    }

    #[test]
    fn tick_entries_equal_ann_output() {
        let m = model(2);
        let s = stream();
        for mode in [HybridMode::C, HybridMode::D] {
            let c = config(mode);
            let trace = run_hybrid(&s, 0, 400_000, &c, &m).unwrap();
            for e in trace.entries.iter().filter(|e| e.source == Provenance::Ann) {
                let rep = build_dense_histogram(&s, e.t_us, c.histogram_events, c.histogram_bins)
                    .unwrap();
                let out = m.ann().unwrap().forward(&rep.tensor).unwrap();
                assert_eq!(e.heatmaps.as_ref().unwrap(), &out.o_init);
                assert_eq!(e.pose, decode_heatmaps(&out.o_init));
            }
        }
    }

    #[test]
    fn mode_a_empty_stream_is_all_zero() {
        let s = EventStream::empty(16, 16);
        let trace = run_hybrid(&s, 0, 300_000, &config(HybridMode::A), &model(3)).unwrap();
        assert_eq!(trace.ann_inferences, 0);
        for e in &trace.entries {
            assert!(e
                .heatmaps
                .as_ref()
                .unwrap()
                .data()
                .iter()
                .all(|&v| v == 0.0));
            assert_eq!(e.pose.visible_count(), 0);
        }
    }

    #[test]
    fn halving_dt_doubles_density() {
        let m = model(4);
        let s = stream();
        let coarse = run_hybrid(&s, 0, 500_000, &config(HybridMode::D), &m).unwrap();
        let fine_cfg = HybridConfig {
            snn_dt_ms: 5.0,
            ..config(HybridMode::D)
        };
        let fine = run_hybrid(&s, 0, 500_000, &fine_cfg, &m).unwrap();
        assert_eq!(fine.entries.len(), 2 * coarse.entries.len());
        let ticks = |t: &PredictionTrace| -> Vec<TraceEntry> {
            t.entries
                .iter()
                .filter(|e| e.source == Provenance::Ann)
                .cloned()
                .collect()
        };
        assert_eq!(ticks(&coarse), ticks(&fine));
    }

    #[test]
    fn deterministic() {
        let m = model(5);
        let a = run_hybrid(&stream(), 0, 300_000, &config(HybridMode::B), &m).unwrap();
        let b = run_hybrid(&stream(), 0, 300_000, &config(HybridMode::B), &m).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn last_layer_only_differs_from_full_init() {
        let m = model(6);
        let full = run_hybrid(&stream(), 0, 200_000, &config(HybridMode::B), &m).unwrap();
        let last = run_hybrid(
            &stream(),
            0,
            200_000,
            &last_layer_only_init(&config(HybridMode::B)),
            &m,
        )
        .unwrap();
        assert_ne!(full.activity, last.activity);
    }

    #[test]
    fn missing_ann_is_config_error() {
        let mut m = model(7);
        m.ann = None;
        let err = run_hybrid(&stream(), 0, 100_000, &config(HybridMode::C), &m).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn trace_csv_round_trip() {
        let trace = run_hybrid(&stream(), 0, 200_000, &config(HybridMode::D), &model(9)).unwrap();
        let rows = parse_trace_csv(&trace.to_csv(), 2, "trace").unwrap();
        assert_eq!(rows.len(), trace.entries.len());
        for (r, e) in rows.iter().zip(&trace.entries) {
            assert_eq!((r.t_us, r.source, &r.pose), (e.t_us, e.source, &e.pose));
        }
    }

    fn schedule() -> Schedule {
        Schedule {
            period_us: 100_000,
            dt_us: 10_000,
            steps_per_period: 10,
        }
    }

    fn grid_predictions(offset_joint0: f64) -> (Vec<StepPrediction>, Vec<TimedPose>) {
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30u64 {
            let gt = Pose2D::new(vec![[5.0, 5.0], [8.0, 9.0]]);
            let mut p = gt.clone();
            p.coords[0][0] += offset_joint0;
            preds.push(StepPrediction {
                t_us: i * 10_000,
                step: (i % 10) as usize,
                pose: p,
            });
            labels.push(TimedPose {
                t_us: i * 10_000 + 3_000,
                pose2d: gt,
                pose3d: None,
            });
        }
        (preds, labels)
    }

    #[test]
    fn error_curve_examples() {
        let (preds, labels) = grid_predictions(0.0);
        let curve = error_over_time(&preds, &labels, &schedule()).unwrap();
        assert_eq!(curve.len(), 10);
        assert!(curve.iter().all(|p| p.mpjpe == Some(0.0) && p.samples == 3));

        let (preds, labels) = grid_predictions(5.0);
        let curve = error_over_time(&preds, &labels, &schedule()).unwrap();
        assert!(curve.iter().all(|p| p.mpjpe == Some(5.0 / 2.0)));

        let far: Vec<TimedPose> = labels
            .iter()
            .map(|l| TimedPose {
                t_us: l.t_us + 10_000_000,
                ..l.clone()
            })
            .collect();
        assert!(error_over_time(&preds, &far, &schedule())
            .unwrap()
            .is_empty());
    }
}
