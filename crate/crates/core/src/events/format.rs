use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Event, EventStream, Polarity};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: [u8; 4] = *b"EVT0";
pub const BINARY_HEADER_LEN: usize = 16;
/// u64 t, u16 x, u16 y, u8 p, densely packed.
pub const BINARY_RECORD_LEN: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventFormat {
    Csv,
    Binary,
}

impl FromStr for EventFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(EventFormat::Csv),
            "binary" | "bin" => Ok(EventFormat::Binary),
            other => Err(Error::config(format!("unknown event format {other:?}"))),
        }
    }
}

/// Reads an event file. CSV carries no geometry, so `geometry` (width, height)
/// is required for it; binary files declare their own and `geometry`, when
/// given, must agree.
pub fn load_events(
    path: &Path,
    format: EventFormat,
    geometry: Option<(u16, u16)>,
) -> Result<EventStream> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    match format {
        EventFormat::Csv => {
            let (w, h) = geometry.ok_or_else(|| {
                Error::config("CSV event files need an explicit sensor width and height")
            })?;
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
                source_name: name.clone(),
                location: format!("offset {}", e.valid_up_to()),
                message: "file is not UTF-8".into(),
            })?;
            parse_csv(text, w, h, &name)
        }
        EventFormat::Binary => {
            let stream = parse_binary(&bytes, &name)?;
            if let Some((w, h)) = geometry {
                if (w, h) != (stream.width(), stream.height()) {
                    return Err(Error::config(format!(
                        "binary file declares {}x{}, configuration says {w}x{h}",
                        stream.width(),
                        stream.height()
                    )));
                }
            }
            Ok(stream)
        }
    }
}

/// `t_us,x,y,p` per line. A first line starting with a non-digit is a header.
pub fn parse_csv(text: &str, width: u16, height: u16, source_name: &str) -> Result<EventStream> {
    let mut events = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if idx == 0 && !line.starts_with(|c: char| c.is_ascii_digit()) {
            continue;
        }
        let err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            location: format!("line {}", idx + 1),
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let t: u64 = fields[0]
            .parse()
            .map_err(|_| err(format!("bad timestamp {:?}", fields[0])))?;
        let x: u32 = fields[1]
            .parse()
            .map_err(|_| err(format!("bad x {:?}", fields[1])))?;
        let y: u32 = fields[2]
            .parse()
            .map_err(|_| err(format!("bad y {:?}", fields[2])))?;
        let p = fields[3]
            .parse::<u8>()
            .ok()
            .and_then(Polarity::from_bit)
            .ok_or_else(|| err(format!("polarity must be 0 or 1, got {:?}", fields[3])))?;
        if x >= width as u32 || y >= height as u32 {
            return Err(Error::Geometry {
                x,
                y,
                width: width as u32,
                height: height as u32,
            });
        }
        events.push(Event::new(t, x as u16, y as u16, p));
    }
    EventStream::new(width, height, events)
}

pub fn parse_binary(bytes: &[u8], source_name: &str) -> Result<EventStream> {
    let err = |offset: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        location: format!("offset {offset}"),
        message,
    };
    if bytes.len() < BINARY_HEADER_LEN {
        return Err(err(0, "file shorter than the 16-byte header".into()));
    }
    if bytes[..4] != BINARY_MAGIC {
        return Err(err(0, "missing EVT0 magic".into()));
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[BINARY_HEADER_LEN..];
    let expected = (count as u128) * BINARY_RECORD_LEN as u128;
    if body.len() as u128 != expected {
        return Err(err(
            BINARY_HEADER_LEN,
            format!(
                "header declares {count} records ({expected} bytes), body has {} bytes",
                body.len()
            ),
        ));
    }
    let mut events = Vec::with_capacity(count as usize);
    for (i, rec) in body.chunks_exact(BINARY_RECORD_LEN).enumerate() {
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let p = Polarity::from_bit(rec[12]).ok_or_else(|| {
            err(
                BINARY_HEADER_LEN + i * BINARY_RECORD_LEN + 12,
                format!("polarity byte {} is not 0 or 1", rec[12]),
            )
        })?;
        events.push(Event::new(t, x, y, p));
    }
    EventStream::new(width, height, events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_two_events() {
        let s = parse_csv("100,3,4,1\n200,5,6,0", 8, 8, "mem").unwrap();
        assert_eq!(
            s.events(),
            &[
                Event::new(100, 3, 4, Polarity::On),
                Event::new(200, 5, 6, Polarity::Off)
            ]
        );
        assert!(!s.was_resorted());
    }

    #[test]
    fn csv_empty_and_header() {
        assert!(parse_csv("", 8, 8, "mem").unwrap().is_empty());
        let s = parse_csv("t,x,y,p\n1,0,0,1\n", 8, 8, "mem").unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let err = parse_csv("1,0,0,1\n2,0,0\n", 8, 8, "ev.csv").unwrap_err();
        match err {
            Error::Parse { location, .. } => assert_eq!(location, "line 2"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_csv("1,0,0,2\n", 8, 8, "m").unwrap_err(),
            Error::Parse { .. }
        ));
        assert!(matches!(
            parse_csv("1,8,0,1\n", 8, 8, "m").unwrap_err(),
            Error::Geometry { .. }
        ));
    }

    #[test]
    fn binary_shuffled_records_are_sorted_and_flagged() {
        let records = [(300u64, 1u16, 1u16, 1u8), (100, 2, 0, 0), (200, 0, 3, 1)];
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"EVT0");
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        for (t, x, y, p) in records {
            bytes.extend_from_slice(&t.to_le_bytes());
            bytes.extend_from_slice(&x.to_le_bytes());
            bytes.extend_from_slice(&y.to_le_bytes());
            bytes.push(p);
        }
        let s = parse_binary(&bytes, "mem").unwrap();
        assert!(s.was_resorted());
        let mut reference = records.to_vec();
        reference.sort_by_key(|r| r.0);
        let got: Vec<_> = s
            .events()
            .iter()
            .map(|e| (e.t, e.x, e.y, e.polarity as u8))
            .collect();
        assert_eq!(got, reference);
        assert_eq!(
            parse_binary(&s.to_binary(), "mem").unwrap().events(),
            s.events()
        );
    }

    #[test]
    fn binary_length_mismatch() {
        let s = EventStream::new(2, 2, vec![Event::new(1, 0, 0, Polarity::On)]).unwrap();
        let bytes = s.to_binary();
        let err = parse_binary(&bytes[..bytes.len() - 1], "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
