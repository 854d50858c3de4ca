//! Event files.
//!
//! Binary (`.evs`), all little-endian:
//!
//! ```text
//! "EVS1"  u16 width  u16 height  u64 count
//! count × { u64 t  u16 x  u16 y  i8 p }
//! ```
//!
//! CSV (`.csv`): a first line `width,height`, then one `t,x,y,p` line per
//! event with `p` either `1` or `-1`.

use std::path::Path;

use estf_core::events::{check_event, Event, EventStream, Polarity};

use crate::error::{self, Error, Result};

pub const MAGIC: &[u8; 4] = b"EVS1";
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Bin,
}

impl EventFormat {
    /// `.csv` is text, anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::Bin,
        }
    }
}

fn record(index: usize, reason: impl Into<String>) -> Error {
    Error::Record { index, reason: reason.into() }
}

fn validated(width: u16, height: u16, index: usize, prev_t: u64, e: &Event) -> Result<()> {
    check_event(width, height, prev_t, index, e).map_err(|err| match err {
        estf_core::Error::Event { index, reason } => Error::Record { index, reason },
        other => other.into(),
    })
}

fn sensor(width: u16, height: u16) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("sensor size {width}x{height} must be positive")));
    }
    Ok(())
}

pub fn parse_events(bytes: &[u8], format: EventFormat) -> Result<EventStream> {
    match format {
        EventFormat::Bin => parse_bin(bytes),
        EventFormat::Csv => parse_csv(bytes),
    }
}

pub fn write_events(stream: &EventStream, format: EventFormat) -> Vec<u8> {
    match format {
        EventFormat::Bin => write_bin(stream),
        EventFormat::Csv => write_csv(stream),
    }
}

fn parse_bin(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{} bytes is shorter than the {HEADER_LEN}-byte header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    sensor(width, height)?;
    let body = &bytes[HEADER_LEN..];
    let available = body.len() / RECORD_LEN;
    if (available as u64) < count {
        return Err(record(available, format!("truncated: header promises {count} records")));
    }
    if body.len() as u64 != count * RECORD_LEN as u64 {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} records",
            body.len() - count as usize * RECORD_LEN
        )));
    }
    let mut events = Vec::with_capacity(count as usize);
    let mut prev_t = 0;
    for (index, r) in body.chunks_exact(RECORD_LEN).enumerate() {
        let t = u64::from_le_bytes(r[..8].try_into().unwrap());
        let x = u16::from_le_bytes([r[8], r[9]]);
        let y = u16::from_le_bytes([r[10], r[11]]);
        let p = Polarity::from_i8(r[12] as i8)
            .ok_or_else(|| record(index, format!("polarity {} is not ±1", r[12] as i8)))?;
        let e = Event { t, x, y, p };
        validated(width, height, index, prev_t, &e)?;
        prev_t = t;
        events.push(e);
    }
    Ok(EventStream::new(width, height, events)?)
}

fn write_bin(s: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + s.len() * RECORD_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&s.width().to_le_bytes());
    out.extend_from_slice(&s.height().to_le_bytes());
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    for e in s.events() {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p.as_i8() as u8);
    }
    out
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, index: usize) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| record(index, format!("missing field {name}")))?;
    raw.trim().parse().map_err(|_| record(index, format!("{name} = {raw:?} is not a valid number")))
}

fn parse_csv(bytes: &[u8]) -> Result<EventStream> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(bytes);
    let mut rows = reader.records();
    let header = rows
        .next()
        .ok_or_else(|| Error::Format("missing width,height header line".into()))?
        .map_err(|e| Error::Format(e.to_string()))?;
    if header.len() != 2 {
        return Err(Error::Format(format!("header has {} fields, expected width,height", header.len())));
    }
    let width: u16 = header[0].trim().parse().map_err(|_| Error::Format(format!("bad width {:?}", &header[0])))?;
    let height: u16 = header[1].trim().parse().map_err(|_| Error::Format(format!("bad height {:?}", &header[1])))?;
    sensor(width, height)?;
    let mut events = Vec::new();
    let mut prev_t = 0;
    for (index, rec) in rows.enumerate() {
        let rec = rec.map_err(|e| record(index, e.to_string()))?;
        if rec.len() != 4 {
            return Err(record(index, format!("{} fields, expected t,x,y,p", rec.len())));
        }
        let t: u64 = field(&rec, 0, "t", index)?;
        let x: u16 = field(&rec, 1, "x", index)?;
        let y: u16 = field(&rec, 2, "y", index)?;
        let p: i8 = field(&rec, 3, "p", index)?;
        let p = Polarity::from_i8(p).ok_or_else(|| record(index, format!("polarity {p} is not ±1")))?;
        let e = Event { t, x, y, p };
        validated(width, height, index, prev_t, &e)?;
        prev_t = t;
        events.push(e);
    }
    Ok(EventStream::new(width, height, events)?)
}

fn write_csv(s: &EventStream) -> Vec<u8> {
    use std::fmt::Write;
    let mut out = String::with_capacity(16 + s.len() * 24);
    let _ = writeln!(out, "{},{}", s.width(), s.height());
    for e in s.events() {
        let _ = writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.p.as_i8());
    }
    out.into_bytes()
}

/// Reads an event file, choosing the format from its extension.
pub fn read_event_file(path: &Path) -> Result<EventStream> {
    let bytes = error::read(path)?;
    parse_events(&bytes, EventFormat::from_path(path)).map_err(|e| e.in_file(path))
}

pub fn write_event_file(path: &Path, stream: &EventStream) -> Result<()> {
    error::write(path, &write_events(stream, EventFormat::from_path(path)))
}
