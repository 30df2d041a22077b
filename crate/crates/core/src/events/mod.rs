//! Event-camera ingestion and the two input encodings: stacked polarity
//! histograms for the ANN and per-window two-channel spike tensors for the SNN.

mod format;
mod repr;

pub use format::{
    load_events, parse_binary, parse_csv, EventFormat, BINARY_HEADER_LEN, BINARY_MAGIC,
    BINARY_RECORD_LEN,
};
pub use repr::{
    build_dense_histogram, slice_spike_tensor, DenseRepresentation, DenseSource, SpikeTensor,
    DEFAULT_HISTOGRAM_BINS, DEFAULT_HISTOGRAM_EVENTS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Off = 0,
    On = 1,
}

impl Polarity {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Polarity::Off),
            1 => Some(Polarity::On),
            _ => None,
        }
    }

    /// Channel index in the two-channel encodings (OFF = 0, ON = 1).
    pub fn channel(self) -> usize {
        self as usize
    }
}

/// A single brightness-change event. `t` is in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Self { t, x, y, polarity }
    }
}

/// Time-sorted events for one sensor. Equal timestamps keep their input order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<Event>,
    width: u16,
    height: u16,
    resorted: bool,
}

impl EventStream {
    pub fn empty(width: u16, height: u16) -> Self {
        Self {
            events: Vec::new(),
            width,
            height,
            resorted: false,
        }
    }

    /// Validates geometry and stably sorts by timestamp. A stream that needed
    /// sorting is flagged (see [`EventStream::was_resorted`]).
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self> {
        let mut stream = Self::empty(width, height);
        stream.extend(events)?;
        Ok(stream)
    }

    /// Appends a chunk of events, as streaming ingestion would.
    pub fn extend(&mut self, chunk: impl IntoIterator<Item = Event>) -> Result<()> {
        let start = self.events.len();
        for e in chunk {
            if e.x >= self.width || e.y >= self.height {
                self.events.truncate(start);
                return Err(Error::Geometry {
                    x: e.x as u32,
                    y: e.y as u32,
                    width: self.width as u32,
                    height: self.height as u32,
                });
            }
            self.events.push(e);
        }
        let sorted = self.events[start.saturating_sub(1)..]
            .windows(2)
            .all(|w| w[0].t <= w[1].t);
        if !sorted {
            log::warn!("event timestamps were not monotonic; stream re-sorted");
            self.events.sort_by_key(|e| e.t);
            self.resorted = true;
        }
        Ok(())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    /// True when the input order was not monotonic in time.
    pub fn was_resorted(&self) -> bool {
        self.resorted
    }

    /// Events with `t_start <= t < t_end`.
    pub fn window(&self, t_start: u64, t_end: u64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t < t_start);
        let hi = self.events.partition_point(|e| e.t < t_end).max(lo);
        &self.events[lo..hi]
    }

    /// Events strictly before `t_end`.
    pub fn before(&self, t_end: u64) -> &[Event] {
        &self.events[..self.events.partition_point(|e| e.t < t_end)]
    }

    pub fn time_span(&self) -> Option<(u64, u64)> {
        Some((self.events.first()?.t, self.events.last()?.t))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 16);
        for e in &self.events {
            out.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.polarity as u8));
        }
        out
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(BINARY_HEADER_LEN + self.events.len() * BINARY_RECORD_LEN);
        out.extend_from_slice(&BINARY_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&(self.events.len() as u64).to_le_bytes());
        for e in &self.events {
            out.extend_from_slice(&e.t.to_le_bytes());
            out.extend_from_slice(&e.x.to_le_bytes());
            out.extend_from_slice(&e.y.to_le_bytes());
            out.push(e.polarity as u8);
        }
        out
    }
}
