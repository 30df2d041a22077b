use super::EventStream;
use crate::error::{Error, Result};
use crate::tensornet::{Shape, Tensor};

pub const DEFAULT_HISTOGRAM_EVENTS: usize = 7_500;
pub const DEFAULT_HISTOGRAM_BINS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenseSource {
    EventHistogram,
    Rgb,
}

/// Dense ANN input summarizing everything before `t_ref`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseRepresentation {
    pub tensor: Tensor,
    pub t_ref: u64,
    pub source: DenseSource,
    /// Events actually binned.
    pub events_used: usize,
    /// Fewer than the requested number of events were available.
    pub short: bool,
    /// No event preceded `t_ref`; the tensor is all zeros.
    pub empty: bool,
}

impl DenseRepresentation {
    pub fn from_rgb(tensor: Tensor, t_ref: u64) -> Result<Self> {
        if tensor.shape().c != 3 {
            return Err(Error::contract(format!(
                "RGB input needs 3 channels, got {}",
                tensor.shape().c
            )));
        }
        Ok(Self {
            tensor,
            t_ref,
            source: DenseSource::Rgb,
            events_used: 0,
            short: false,
            empty: false,
        })
    }
}

/// Stacks `bins` two-channel polarity histograms over the last `count` events
/// before `t_end`. The span `[t_first, t_end)` is cut into equal-duration,
/// left-closed bins; channel `2 * bin + polarity`, oldest bin first.
pub fn build_dense_histogram(
    stream: &EventStream,
    t_end: u64,
    count: usize,
    bins: usize,
) -> Result<DenseRepresentation> {
    if count == 0 || bins == 0 {
        return Err(Error::contract("histogram needs count >= 1 and bins >= 1"));
    }
    let (w, h) = (stream.width() as usize, stream.height() as usize);
    let mut tensor = Tensor::zeros(Shape::new(2 * bins, h, w));
    let before = stream.before(t_end);
    let selected = &before[before.len().saturating_sub(count)..];
    let Some(first) = selected.first() else {
        return Ok(DenseRepresentation {
            tensor,
            t_ref: t_end,
            source: DenseSource::EventHistogram,
            events_used: 0,
            short: true,
            empty: true,
        });
    };
    let t_first = first.t;
    let span = (t_end - t_first) as u128;
    for e in selected {
        let bin = ((e.t - t_first) as u128 * bins as u128 / span) as usize;
        let c = 2 * bin + e.polarity.channel();
        let i = tensor.index(c, e.y as usize, e.x as usize);
        tensor.data_mut()[i] += 1.0;
    }
    Ok(DenseRepresentation {
        tensor,
        t_ref: t_end,
        source: DenseSource::EventHistogram,
        events_used: selected.len(),
        short: selected.len() < count,
        empty: false,
    })
}

/// Per-pixel, per-polarity event counts in `[t_start, t_end)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTensor {
    pub tensor: Tensor,
    pub t_start: u64,
    pub t_end: u64,
}

impl SpikeTensor {
    pub fn zeros(height: usize, width: usize, t_start: u64, t_end: u64) -> Self {
        Self {
            tensor: Tensor::zeros(Shape::new(2, height, width)),
            t_start,
            t_end,
        }
    }

    pub fn event_count(&self) -> u64 {
        self.tensor.data().iter().map(|&v| v as u64).sum()
    }
}

pub fn slice_spike_tensor(stream: &EventStream, t_start: u64, t_end: u64) -> Result<SpikeTensor> {
    if t_start >= t_end {
        return Err(Error::contract(format!(
            "spike window [{t_start}, {t_end}) is empty or reversed"
        )));
    }
    let mut st = SpikeTensor::zeros(
        stream.height() as usize,
        stream.width() as usize,
        t_start,
        t_end,
    );
    for e in stream.window(t_start, t_end) {
        let i = st
            .tensor
            .index(e.polarity.channel(), e.y as usize, e.x as usize);
        st.tensor.data_mut()[i] += 1.0;
    }
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::super::{Event, Polarity};
    use super::*;

    fn stream(events: Vec<Event>) -> EventStream {
        EventStream::new(4, 3, events).unwrap()
    }

    #[test]
    fn single_event_lands_in_bin_zero_on_channel() {
        let s = stream(vec![Event::new(0, 2, 1, Polarity::On)]);
        let d = build_dense_histogram(&s, 10_000, 7_500, 10).unwrap();
        assert_eq!(d.tensor.shape(), Shape::new(20, 3, 4));
        assert_eq!(d.tensor.count_nonzero(), 1);
        assert_eq!(d.tensor.get(1, 1, 2), 1.0);
        assert!(d.short && !d.empty);
    }

    #[test]
    fn four_events_two_bins_left_closed() {
        let evs = (0..4)
            .map(|i| Event::new(i * 1000, i as u16, 0, Polarity::Off))
            .collect();
        let d = build_dense_histogram(&stream(evs), 4000, 4, 2).unwrap();
        // bin 0 OFF is channel 0, bin 1 OFF is channel 2
        assert_eq!(d.tensor.get(0, 0, 0), 1.0);
        assert_eq!(d.tensor.get(0, 0, 1), 1.0);
        assert_eq!(d.tensor.get(2, 0, 2), 1.0);
        assert_eq!(d.tensor.get(2, 0, 3), 1.0);
        assert_eq!(d.tensor.sum(), 4.0);
        assert!(!d.short);
    }

    #[test]
    fn takes_only_the_most_recent_events() {
        let evs = (0..10)
            .map(|i| Event::new(i * 10, 0, 0, Polarity::On))
            .collect();
        let d = build_dense_histogram(&stream(evs), 95, 3, 1).unwrap();
        assert_eq!(d.events_used, 3);
        assert_eq!(d.tensor.sum(), 3.0);
    }

    #[test]
    fn t_end_before_first_event_is_empty() {
        let s = stream(vec![Event::new(50, 0, 0, Polarity::On)]);
        let d = build_dense_histogram(&s, 50, 10, 2).unwrap();
        assert!(d.empty);
        assert_eq!(d.tensor.sum(), 0.0);
    }

    #[test]
    fn spike_tensor_examples() {
        let s = stream(vec![
            Event::new(5, 1, 1, Polarity::On),
            Event::new(6, 1, 1, Polarity::On),
            Event::new(7, 0, 2, Polarity::Off),
            Event::new(20, 3, 0, Polarity::On),
        ]);
        let empty = slice_spike_tensor(&s, 8, 20).unwrap();
        assert_eq!(empty.tensor.sum(), 0.0);
        let st = slice_spike_tensor(&s, 0, 20).unwrap();
        assert_eq!(st.tensor.get(1, 1, 1), 2.0);
        assert_eq!(st.tensor.get(0, 2, 0), 1.0);
        assert_eq!(st.tensor.get(1, 0, 3), 0.0, "event at t_end is excluded");
        assert_eq!(st.event_count(), 3);
        assert!(slice_spike_tensor(&s, 20, 20).is_err());
    }
}
