//! Ordered named tensors and their little-endian binary encoding.
//!
//! Each record is `u32 name length`, UTF-8 name, `u32 rank`, `rank × u64`
//! dims, then the row-major values as `f64`. Matrices are stored with rank 2.

use std::io::{self, Read, Write};

use ndarray::Array2;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedTensors {
    entries: Vec<(String, Array2<f64>)>,
}

impl NamedTensors {
    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.entries.push((name.into(), value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    /// Keeps entries whose name starts with `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> NamedTensors {
        let entries = self
            .entries
            .iter()
            .filter_map(|(n, v)| n.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect();
        NamedTensors { entries }
    }

    pub fn extend_prefixed(&mut self, prefix: &str, other: &NamedTensors) {
        for (n, v) in other.iter() {
            self.push(format!("{prefix}{n}"), v.clone());
        }
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> io::Result<()> {
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (name, v) in &self.entries {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&2u32.to_le_bytes())?;
            out.write_all(&(v.nrows() as u64).to_le_bytes())?;
            out.write_all(&(v.ncols() as u64).to_le_bytes())?;
            for x in v.iter() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> io::Result<Self> {
        let count = read_u64(input)?;
        let mut t = NamedTensors::default();
        for _ in 0..count {
            let len = read_u32(input)? as usize;
            if len > 1 << 16 {
                return Err(invalid("tensor name too long"));
            }
            let mut name = vec![0u8; len];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| invalid("tensor name is not UTF-8"))?;
            let rank = read_u32(input)?;
            let dims: Vec<usize> = (0..rank)
                .map(|_| read_u64(input).map(|d| d as usize))
                .collect::<io::Result<_>>()?;
            let (r, c) = match dims.as_slice() {
                [] => (1, 1),
                [n] => (*n, 1),
                [r, c] => (*r, *c),
                _ => return Err(invalid("tensor rank above 2")),
            };
            let n = r
                .checked_mul(c)
                .filter(|&n| n <= 1 << 32)
                .ok_or_else(|| invalid("tensor too large"))?;
            let data = read_f64s(input, n)?;
            t.push(name, Array2::from_shape_vec((r, c), data).expect("sized"));
        }
        Ok(t)
    }
}

pub(crate) fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Writes `bytes` to a sibling temp file, syncs it, then renames over `path`.
pub fn atomic_write(path: &std::path::Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(std::path::Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| invalid("output path has no file name"))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}
