//! Named-tensor checkpoint container.
//!
//! ```text
//! "USTSCKPT" | version u32 | count u32
//! count × { name_len u32 | name utf-8 | dtype u8 | rank u32 | dims u64… | payload LE }
//! crc32 u32   (over every tensor record)
//! ```
//!
//! All integers are little-endian.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use log::info;

use crate::error::{Error, Result};
use crate::numerics::{Array, DType, ParamStore, Real};

pub const MAGIC: &[u8; 8] = b"USTSCKPT";
pub const VERSION: u32 = 1;
const HEADER: usize = 16;

/// One decoded tensor, kept in f64 until it is matched to a parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn encode<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut body = Vec::new();
    for (_, p) in store.iter() {
        body.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        body.extend_from_slice(p.name.as_bytes());
        body.push(T::DTYPE as u8);
        body.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            body.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut body);
        }
    }
    let mut out = Vec::with_capacity(HEADER + body.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<Record>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 8,
            msg: format!("unsupported version {version}"),
        });
    }
    let count = r.u32("tensor count")?;
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format {
                offset: at as u64,
                msg: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let at = r.pos;
        let tag = r.take(1, "dtype")?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format {
            offset: at as u64,
            msg: format!("unknown dtype tag {tag}"),
        })?;
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u64("dim").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let payload = r.take(numel * dtype.size(), &format!("payload of {name}"))?;
        let data = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        records.push(Record {
            name,
            dtype,
            shape,
            data,
        });
    }
    let body_end = r.pos;
    let stored = r.u32("checksum")?;
    let actual = crc32fast::hash(&buf[HEADER..body_end]);
    if stored != actual {
        return Err(Error::Format {
            offset: body_end as u64,
            msg: format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}"),
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            msg: "trailing bytes after checksum".into(),
        });
    }
    Ok(records)
}

pub fn save<T: Real>(path: &Path, store: &ParamStore<T>) -> Result<()> {
    fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

/// Copies every record into the parameter of the same name. Unknown
/// tensors are rejected; a parameter absent from the file is an error
/// unless `may_be_missing` accepts its name, in which case it keeps its
/// current (freshly initialised) value.
pub fn load_into<T: Real>(
    records: &[Record],
    store: &mut ParamStore<T>,
    may_be_missing: impl Fn(&str) -> bool,
) -> Result<()> {
    let unknown: Vec<&str> = records
        .iter()
        .filter(|r| store.lookup(&r.name).is_none())
        .map(|r| r.name.as_str())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Contract(format!(
            "unknown tensors in checkpoint: {}",
            unknown.join(", ")
        )));
    }
    let present: HashSet<&str> = records.iter().map(|r| r.name.as_str()).collect();
    let missing: Vec<String> = store
        .iter()
        .map(|(_, p)| p.name.clone())
        .filter(|n| !present.contains(n.as_str()))
        .collect();
    let (tolerated, fatal): (Vec<String>, Vec<String>) = missing.into_iter().partition(|n| may_be_missing(n));
    if !fatal.is_empty() {
        return Err(Error::Contract(format!(
            "checkpoint lacks tensors: {}",
            fatal.join(", ")
        )));
    }
    if !tolerated.is_empty() {
        info!(
            "{} tensors absent from checkpoint keep their initial values",
            tolerated.len()
        );
    }
    for r in records {
        let id = store.lookup(&r.name).expect("checked above");
        let expect = store.value(id).shape().to_vec();
        if expect != r.shape {
            return Err(Error::Shape {
                op: format!("checkpoint tensor {}", r.name),
                lhs: r.shape.clone(),
                rhs: expect,
            });
        }
        store.assign(id, Array::new(&r.shape, r.data.iter().map(|&v| T::lit(v)).collect())?)?;
    }
    Ok(())
}

pub fn load<T: Real>(path: &Path, store: &mut ParamStore<T>, may_be_missing: impl Fn(&str) -> bool) -> Result<()> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    load_into(&decode(&buf)?, store, may_be_missing)
}
