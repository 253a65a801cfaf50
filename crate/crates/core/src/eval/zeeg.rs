//! ZEEG interchange files: 8-byte magic, `u32` little-endian header length,
//! UTF-8 JSON header, then channel-major little-endian `f32` samples.
//! Physical value = stored × scale.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ChannelGeometry, Recording};

pub const ZEEG_MAGIC: &[u8; 8] = b"ZEEG0001";
pub const ZEEG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ChannelEntry {
    label: String,
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    sfreq: f64,
    channels: Vec<ChannelEntry>,
    n_samples: usize,
    scale: f64,
}

/// Serializes `rec`, storing `value / scale` in single precision.
pub fn encode_zeeg(rec: &Recording, scale: f64) -> Result<Vec<u8>> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid("ZEEG scale must be positive and finite"));
    }
    let header = Header {
        version: ZEEG_VERSION,
        sfreq: rec.sfreq,
        channels: rec
            .geometry
            .labels()
            .iter()
            .zip(rec.geometry.positions())
            .map(|(l, p)| ChannelEntry { label: l.clone(), x: p[0], y: p[1], z: p[2] })
            .collect(),
        n_samples: rec.n_samples(),
        scale,
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("header too large".into()))?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * rec.n_channels() * rec.n_samples());
    out.extend_from_slice(ZEEG_MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for row in &rec.samples {
        for v in row {
            out.extend_from_slice(&((v / scale) as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_zeeg(bytes: &[u8]) -> Result<Recording> {
    if bytes.len() < 12 || &bytes[..8] != ZEEG_MAGIC {
        return Err(Error::Format("unknown magic, not a ZEEG file".into()));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = 12 + len;
    if bytes.len() < body {
        return Err(Error::Format("header truncated".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..body])
        .map_err(|e| Error::Format(format!("invalid header: {e}")))?;
    if header.version != ZEEG_VERSION {
        return Err(Error::Format(format!("unsupported ZEEG version {}", header.version)));
    }
    let (c, n) = (header.channels.len(), header.n_samples);
    let expected = c.checked_mul(n).and_then(|v| v.checked_mul(4)).ok_or_else(|| Error::Format("size overflow".into()))?;
    if bytes.len() - body != expected {
        return Err(Error::Format(format!("expected {expected} sample bytes, found {}", bytes.len() - body)));
    }
    let samples = bytes[body..]
        .chunks_exact(4 * n.max(1))
        .take(c)
        .map(|chunk| {
            chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64 * header.scale)
                .collect()
        })
        .collect::<Vec<Vec<f64>>>();
    let samples = if n == 0 { vec![Vec::new(); c] } else { samples };
    let labels = header.channels.iter().map(|ch| ch.label.clone()).collect();
    let positions = header.channels.iter().map(|ch| [ch.x, ch.y, ch.z]).collect();
    Recording::new(samples, header.sfreq, ChannelGeometry::new(labels, positions)?)
}

pub fn write_zeeg(path: &Path, rec: &Recording, scale: f64) -> Result<()> {
    fs::write(path, encode_zeeg(rec, scale)?).map_err(|e| Error::io(path, e))
}

pub fn read_zeeg(path: &Path) -> Result<Recording> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_zeeg(&bytes)
}
