//! Binary container formats.
//!
//! `PFT1` holds one tensor:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `PFT1` |
//! | 1 | dtype: 0 = f32, 1 = f64 |
//! | 1 | ndim |
//! | 4 * ndim | little-endian u32 extents |
//! | rest | row-major little-endian payload |
//!
//! `PWA1` holds a sorted list of named f32 tensors:
//! magic `PWA1`, u32 entry count, then per entry a u16 name length, the
//! UTF-8 name, u8 ndim, ndim u32 extents and the f32 payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::polar::CameraIntrinsics;

pub const PFT_MAGIC: &[u8; 4] = b"PFT1";
pub const PWA_MAGIC: &[u8; 4] = b"PWA1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.format,
                field,
                format!("truncated: need {n} bytes at offset {}, have {}", self.pos, self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn dims(&mut self, ndim: usize) -> Result<Vec<usize>> {
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(self.u32("dims")? as usize);
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(self.format, "dims", "element count overflows"))?;
        Ok(dims)
    }

    fn payload(&mut self, count: usize, dtype: DType) -> Result<Vec<f64>> {
        let bytes = count
            .checked_mul(dtype.width())
            .ok_or_else(|| Error::format(self.format, "payload", "size overflows"))?;
        let raw = self.take(bytes, "payload")?;
        Ok(match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        })
    }
}

fn put_dims(out: &mut Vec<u8>, dims: &[usize]) -> Result<()> {
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Domain(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(())
}

pub fn encode_pft(tensor: &Tensor, dtype: DType) -> Result<Vec<u8>> {
    let ndim = u8::try_from(tensor.rank()).map_err(|_| Error::Domain("rank exceeds 255".into()))?;
    let mut out = Vec::with_capacity(6 + 4 * tensor.rank() + tensor.len() * dtype.width());
    out.extend_from_slice(PFT_MAGIC);
    out.push(dtype as u8);
    out.push(ndim);
    put_dims(&mut out, tensor.dims())?;
    for &v in tensor.data() {
        match dtype {
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(out)
}

pub fn decode_pft(bytes: &[u8]) -> Result<(Tensor, DType)> {
    let mut cur = Cursor {
        buf: bytes,
        pos: 0,
        format: "PFT1",
    };
    if cur.take(4, "magic")? != PFT_MAGIC {
        return Err(Error::format("PFT1", "magic", "expected `PFT1`"));
    }
    let dtype = match cur.u8("dtype")? {
        0 => DType::F32,
        1 => DType::F64,
        other => return Err(Error::format("PFT1", "dtype", format!("unknown code {other}"))),
    };
    let ndim = cur.u8("ndim")? as usize;
    let dims = cur.dims(ndim)?;
    let data = cur.payload(dims.iter().product(), dtype)?;
    if cur.pos != bytes.len() {
        return Err(Error::format(
            "PFT1",
            "payload",
            format!("{} trailing bytes", bytes.len() - cur.pos),
        ));
    }
    Ok((Tensor::from_vec(&dims, data)?, dtype))
}

pub fn write_pft(path: impl AsRef<Path>, tensor: &Tensor, dtype: DType) -> Result<()> {
    let bytes = encode_pft(tensor, dtype)?;
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn read_pft(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(decode_pft(&bytes)?.0)
}

/// Named-tensor archive for pretrained weights and checkpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightArchive {
    entries: Vec<(String, Tensor)>,
}

impl WeightArchive {
    /// Builds an archive from `(name, tensor)` pairs. Values are rounded to
    /// f32, the archive's storage precision.
    pub fn from_entries(mut entries: Vec<(String, Tensor)>) -> Result<Self> {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Duplicate(pair[0].0.clone()));
            }
        }
        for (name, t) in &mut entries {
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("archive entry `{name}`")));
            }
            *t = t.map(|v| v as f32 as f64);
        }
        Ok(WeightArchive { entries })
    }

    pub fn from_params(params: &ParamStore) -> Result<Self> {
        Self::from_entries(
            params
                .iter()
                .map(|(n, p)| (n.to_string(), p.tensor.clone()))
                .collect(),
        )
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .binary_search_by(|(n, _)| n.as_str().cmp(name))
            .ok()
            .map(|i| &self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(PWA_MAGIC);
        let count = u32::try_from(self.entries.len()).map_err(|_| Error::Domain("too many entries".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.entries {
            let len = u16::try_from(name.len()).map_err(|_| Error::Domain(format!("name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(u8::try_from(t.rank()).map_err(|_| Error::Domain("rank exceeds 255".into()))?);
            put_dims(&mut out, t.dims())?;
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor {
            buf: bytes,
            pos: 0,
            format: "PWA1",
        };
        if cur.take(4, "magic")? != PWA_MAGIC {
            return Err(Error::format("PWA1", "magic", "expected `PWA1`"));
        }
        let count = cur.u32("entry count")? as usize;
        let mut entries: Vec<(String, Tensor)> = Vec::new();
        for _ in 0..count {
            let len = cur.u16("name length")? as usize;
            let name = std::str::from_utf8(cur.take(len, "name")?)
                .map_err(|e| Error::format("PWA1", "name", e))?
                .to_string();
            if let Some((prev, _)) = entries.last() {
                if *prev == name {
                    return Err(Error::Duplicate(name));
                }
                if *prev > name {
                    return Err(Error::format("PWA1", "name", format!("`{name}` out of sorted order")));
                }
            }
            let ndim = cur.u8("ndim")? as usize;
            let dims = cur.dims(ndim)?;
            let data = cur.payload(dims.iter().product(), DType::F32)?;
            let t = Tensor::from_vec(&dims, data)?;
            if !t.is_finite() {
                return Err(Error::format("PWA1", "payload", format!("non-finite value in `{name}`")));
            }
            entries.push((name, t));
        }
        if cur.pos != bytes.len() {
            return Err(Error::format("PWA1", "payload", "trailing bytes"));
        }
        Ok(WeightArchive { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Parses flat `key = value` text. Blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key=value, got `{line}`", no + 1)));
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", no + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", no + 1)));
        }
    }
    Ok(out)
}

/// Intrinsics as `fx`, `fy`, `cx`, `cy` key=value lines.
pub fn intrinsics_to_text(k: &CameraIntrinsics) -> String {
    format!("fx={}\nfy={}\ncx={}\ncy={}\n", k.fx, k.fy, k.cx, k.cy)
}

pub fn intrinsics_from_text(text: &str) -> Result<CameraIntrinsics> {
    let kv = parse_key_values(text)?;
    let get = |name: &'static str| -> Result<f64> {
        let raw = kv
            .get(name)
            .ok_or_else(|| Error::format("intrinsics", name, "missing"))?;
        raw.parse()
            .map_err(|_| Error::format("intrinsics", name, format!("not a number: `{raw}`")))
    };
    CameraIntrinsics::new(get("fx")?, get("fy")?, get("cx")?, get("cy")?)
}

pub fn write_intrinsics(path: impl AsRef<Path>, k: &CameraIntrinsics) -> Result<()> {
    fs::write(path, intrinsics_to_text(k))?;
    Ok(())
}

pub fn read_intrinsics(path: impl AsRef<Path>) -> Result<CameraIntrinsics> {
    intrinsics_from_text(&fs::read_to_string(path)?)
}
