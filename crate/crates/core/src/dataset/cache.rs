//! Binary cache of a prepared series.
//!
//! ```text
//! "USTS" | version u32 | T u64 | N u64 | C u64 | start_step u64 | step_ms u64
//! medians f32 × N·C | values f32 × T·N·C
//! observed bitmap | interp bitmap       (⌈T·N·C / 8⌉ bytes each, LSB first)
//! ```
//!
//! Integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::NodeSeries;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"USTS";
pub const VERSION: u32 = 1;

fn pack_bits(bits: &[bool], out: &mut Vec<u8>) {
    for chunk in bits.chunks(8) {
        out.push(
            chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i)),
        );
    }
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

pub fn encode(s: &NodeSeries) -> Vec<u8> {
    let n = s.values.len();
    let mut out = Vec::with_capacity(44 + 4 * (s.medians.len() + n) + 2 * n.div_ceil(8));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [s.len, s.nodes, s.channels] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&s.start_step.to_le_bytes());
    out.extend_from_slice(&s.step_ms.to_le_bytes());
    for &v in s.medians.iter().chain(&s.values) {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    pack_bits(&s.observed, &mut out);
    pack_bits(&s.interp, &mut out);
    out
}

fn truncated(offset: usize, what: &str) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: format!("dataset cache truncated in {what}"),
    }
}

pub fn decode(buf: &[u8]) -> Result<NodeSeries> {
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        let s = buf.get(pos..pos + n).ok_or_else(|| truncated(pos, what))?;
        pos += n;
        Ok(s)
    };
    if take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "not a dataset cache (bad magic)".into(),
        });
    }
    let version = u32::from_le_bytes(take(4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported dataset cache version {version}"),
        });
    }
    let mut header = [0u64; 5];
    for h in &mut header {
        *h = u64::from_le_bytes(take(8, "header")?.try_into().expect("8 bytes"));
    }
    let [len, nodes, channels, start_step, step_ms] = header;
    let (len, nodes, channels) = (len as usize, nodes as usize, channels as usize);
    let n = len
        .checked_mul(nodes)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::Format {
            offset: 8,
            msg: "shape overflows".into(),
        })?;
    let floats = |bytes: &[u8]| -> Vec<f64> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect()
    };
    let medians = floats(take(4 * nodes * channels, "medians")?);
    let values = floats(take(4 * n, "values")?);
    let observed = unpack_bits(take(n.div_ceil(8), "observed bitmap")?, n);
    let interp = unpack_bits(take(n.div_ceil(8), "interp bitmap")?, n);
    if pos != buf.len() {
        return Err(Error::Format {
            offset: pos as u64,
            msg: "trailing bytes in dataset cache".into(),
        });
    }
    Ok(NodeSeries {
        len,
        nodes,
        channels,
        values,
        observed,
        interp,
        medians,
        start_step,
        step_ms,
    })
}

pub fn save(path: &Path, s: &NodeSeries) -> Result<()> {
    fs::write(path, encode(s)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<NodeSeries> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NodeSeries {
        let mut s = NodeSeries::from_values(3, 2, 2, (0..12).map(|i| i as f64 * 0.5).collect(), 7, 600_000).unwrap();
        s.interp[5] = true;
        s.observed[5] = false;
        s.medians = vec![1.0, 2.0, 0.5, 4.0];
        s
    }

    #[test]
    fn round_trip() {
        let s = sample();
        assert_eq!(decode(&encode(&s)).unwrap(), s);
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = encode(&sample());
        let err = decode(&bytes[..bytes.len() - 1]).unwrap_err();
        assert_eq!(err.code(), "E_FORMAT");
        assert!(err.to_string().contains("interp bitmap"));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).unwrap_err().to_string().contains("bad magic"));
    }
}
