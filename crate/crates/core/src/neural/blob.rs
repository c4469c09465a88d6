//! Versioned flat parameter blob:
//!
//! ```text
//! "QDPB" | u32 version | u32 n_tensors
//! per tensor: u32 name_len | name bytes | u32 rank | rank × u64 dims
//! u64 n_values | n_values × f64 (little endian)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamLayout, TensorInfo};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"QDPB";
const VERSION: u32 = 1;

/// JSON companion describing a blob's tensor table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobManifest {
    pub format: String,
    pub version: u32,
    pub n_values: usize,
    pub tensors: Vec<TensorInfo>,
}

impl BlobManifest {
    pub fn of(layout: &ParamLayout) -> BlobManifest {
        BlobManifest {
            format: String::from_utf8_lossy(MAGIC).into_owned(),
            version: VERSION,
            n_values: layout.len,
            tensors: layout.tensors.clone(),
        }
    }
}

pub fn write_blob<W: Write>(mut w: W, layout: &ParamLayout, data: &[f64]) -> Result<()> {
    layout.check(data)?;
    let mut buf = Vec::with_capacity(64 + data.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(layout.tensors.len() as u32).to_le_bytes());
    for t in &layout.tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
    }
    buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io("<blob>", e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated parameter blob".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_blob<R: Read>(mut r: R) -> Result<(ParamLayout, Vec<f64>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<blob>", e))?;
    let mut c = Cursor { buf: &bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("bad blob magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported blob version {version}")));
    }
    let n = c.u32()? as usize;
    let mut layout = ParamLayout::new();
    for _ in 0..n {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Format("tensor name is not utf-8".into()))?
            .to_string();
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        layout.push(name, &shape);
    }
    let count = c.u64()? as usize;
    if count != layout.len {
        return Err(Error::Format(format!(
            "blob holds {count} values but its table describes {}",
            layout.len
        )));
    }
    let data = (0..count)
        .map(|_| c.u64().map(f64::from_bits))
        .collect::<Result<Vec<_>>>()?;
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after parameter data".into()));
    }
    Ok((layout, data))
}

/// Write `<path>` (blob) and `<path>.json` (manifest).
pub fn write_params(path: &Path, layout: &ParamLayout, data: &[f64]) -> Result<()> {
    let mut buf = Vec::new();
    write_blob(&mut buf, layout, data)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    let manifest = serde_json::to_string_pretty(&BlobManifest::of(layout))?;
    let mpath = manifest_path(path);
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(mpath, e))
}

pub fn read_params(path: &Path) -> Result<(ParamLayout, Vec<f64>)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_blob(std::io::BufReader::new(f))
}

fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (ParamLayout, Vec<f64>) {
        let mut l = ParamLayout::new();
        l.push("a.weight", &[2, 3]);
        l.push("a.bias", &[2]);
        let data = vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300, -7.25, 0.1, 3.0, -2.0];
        (l, data)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (l, d) = sample();
        let mut buf = Vec::new();
        write_blob(&mut buf, &l, &d).unwrap();
        let (l2, d2) = read_blob(&buf[..]).unwrap();
        assert_eq!(l, l2);
        assert_eq!(
            d.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            d2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rejects_corruption() {
        let (l, d) = sample();
        let mut buf = Vec::new();
        write_blob(&mut buf, &l, &d).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_blob(&bad[..]).is_err());
        assert!(read_blob(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn files_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let (l, d) = sample();
        let p = dir.path().join("p.bin");
        write_params(&p, &l, &d).unwrap();
        let (_, back) = read_params(&p).unwrap();
        assert_eq!(back, d);
        let m: BlobManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("p.bin.json")).unwrap()).unwrap();
        assert_eq!(m.n_values, 8);
    }
}
