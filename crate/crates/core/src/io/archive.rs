//! XVEC embedding archives.
//!
//! Binary layout, all little-endian:
//! header `"XVEC"`, version `u16`, dim `u32`, count `u64`; then per record
//! a `u16`-length-prefixed UTF-8 id, start `f64`, end `f64`, `dim × f32`.
//!
//! Files ending in `.xvec.txt` use a text form with the same content:
//! a `XVEC <version> <dim> <count>` line, then `id start end v1 .. vdim`.

use std::fmt::Write as _;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::embedding::Embedding;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"XVEC";
pub const VERSION: u16 = 1;
const TEXT_SUFFIX: &str = ".xvec.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub start: f64,
    pub end: f64,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, start: f64, end: f64, embedding: &Embedding) -> Self {
        EmbeddingRecord {
            id: id.into(),
            start,
            end,
            vector: embedding.as_slice().iter().map(|&x| x as f32).collect(),
        }
    }

    /// Widened to `f64` for computation.
    pub fn embedding(&self) -> Result<Embedding> {
        Embedding::new(self.vector.iter().map(|&x| f64::from(x)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingArchive {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingArchive {
    pub fn new(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("archive dimension must be positive"));
        }
        for r in &records {
            Error::check_dim(dim, r.vector.len())?;
            if r.id.len() > usize::from(u16::MAX) {
                return Err(Error::invalid("record id longer than 65535 bytes"));
            }
        }
        Ok(EmbeddingArchive { dim, records })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + self.records.len() * (20 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.write_u16::<LittleEndian>(VERSION).unwrap();
        out.write_u32::<LittleEndian>(self.dim as u32).unwrap();
        out.write_u64::<LittleEndian>(self.records.len() as u64)
            .unwrap();
        for r in &self.records {
            out.write_u16::<LittleEndian>(r.id.len() as u16).unwrap();
            out.extend_from_slice(r.id.as_bytes());
            out.write_f64::<LittleEndian>(r.start).unwrap();
            out.write_f64::<LittleEndian>(r.end).unwrap();
            for &v in &r.vector {
                out.write_f32::<LittleEndian>(v).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = |_| Error::Format("truncated archive".into());
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad archive magic {magic:?}")));
        }
        let version = cur.read_u16::<LittleEndian>().map_err(truncated)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported archive version {version}"
            )));
        }
        let dim = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let count = cur.read_u64::<LittleEndian>().map_err(truncated)?;
        if dim == 0 {
            return Err(Error::Format("archive dimension is zero".into()));
        }
        let min_record = 2 + 16 + 4 * dim as u64;
        let remaining = (bytes.len() as u64).saturating_sub(cur.position());
        if count.saturating_mul(min_record) > remaining {
            return Err(Error::Format(format!(
                "archive declares {count} records but holds at most {}",
                remaining / min_record
            )));
        }
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = cur.read_u16::<LittleEndian>().map_err(truncated)? as usize;
            let mut id = vec![0u8; len];
            cur.read_exact(&mut id).map_err(truncated)?;
            let id = String::from_utf8(id)
                .map_err(|_| Error::Format("record id is not UTF-8".into()))?;
            let start = cur.read_f64::<LittleEndian>().map_err(truncated)?;
            let end = cur.read_f64::<LittleEndian>().map_err(truncated)?;
            let mut vector = vec![0f32; dim];
            cur.read_f32_into::<LittleEndian>(&mut vector)
                .map_err(truncated)?;
            records.push(EmbeddingRecord {
                id,
                start,
                end,
                vector,
            });
        }
        if cur.position() != bytes.len() as u64 {
            return Err(Error::Format("trailing bytes after the last record".into()));
        }
        Ok(EmbeddingArchive { dim, records })
    }

    pub fn to_text(&self) -> Result<String> {
        let mut s = String::new();
        let _ = writeln!(s, "XVEC {VERSION} {} {}", self.dim, self.records.len());
        for r in &self.records {
            if r.id.is_empty() || r.id.contains(char::is_whitespace) {
                return Err(Error::invalid(format!(
                    "id '{}' cannot be stored as text",
                    r.id
                )));
            }
            let _ = write!(s, "{} {:?} {:?}", r.id, r.start, r.end);
            for v in &r.vector {
                let _ = write!(s, " {v:?}");
            }
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty archive".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 || h[0] != "XVEC" {
            return Err(err(1, "bad archive header".into()));
        }
        if h[1].parse::<u16>().ok() != Some(VERSION) {
            return Err(err(1, format!("unsupported archive version {}", h[1])));
        }
        let dim: usize = h[2].parse().map_err(|_| err(1, "bad dimension".into()))?;
        let count: usize = h[3].parse().map_err(|_| err(1, "bad count".into()))?;
        if dim == 0 {
            return Err(err(1, "archive dimension is zero".into()));
        }
        let mut records = Vec::new();
        for (n, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 + dim {
                return Err(err(
                    n + 1,
                    format!("expected {} fields, found {}", 3 + dim, f.len()),
                ));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| err(n + 1, format!("bad number '{s}'")))
            };
            let vector = f[3..]
                .iter()
                .map(|s| {
                    s.parse::<f32>()
                        .map_err(|_| err(n + 1, format!("bad number '{s}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            records.push(EmbeddingRecord {
                id: f[0].to_string(),
                start: num(f[1])?,
                end: num(f[2])?,
                vector,
            });
        }
        if records.len() != count {
            return Err(Error::Format(format!(
                "{}: header declares {count} records, found {}",
                path.display(),
                records.len()
            )));
        }
        Ok(EmbeddingArchive { dim, records })
    }
}

fn is_text(path: &Path) -> bool {
    path.to_str().is_some_and(|p| p.ends_with(TEXT_SUFFIX))
}

/// Writes binary or text form depending on the file name.
pub fn write_archive(archive: &EmbeddingArchive, path: &Path) -> Result<()> {
    if is_text(path) {
        fs::write(path, archive.to_text()?).map_err(Error::file(path))?;
    } else {
        fs::write(path, archive.to_bytes()).map_err(Error::file(path))?;
    }
    Ok(())
}

/// Reads the whole file and validates it before returning anything.
pub fn read_archive(path: &Path) -> Result<EmbeddingArchive> {
    if is_text(path) {
        EmbeddingArchive::from_text(&fs::read_to_string(path).map_err(Error::file(path))?, path)
    } else {
        EmbeddingArchive::from_bytes(&fs::read(path).map_err(Error::file(path))?)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingArchive {
        let records = vec![
            EmbeddingRecord {
                id: "m1".into(),
                start: 0.0,
                end: 1.5,
                vector: vec![0.1, -0.2, 0.3],
            },
            EmbeddingRecord {
                id: "spk\u{e9}".into(),
                start: 0.75,
                end: 2.25,
                vector: vec![1.0, f32::MIN_POSITIVE, -7.5e-9],
            },
        ];
        EmbeddingArchive::new(3, records).unwrap()
    }

    #[test]
    fn header_layout() {
        let b = sample().to_bytes();
        assert_eq!(&b[..4], b"XVEC");
        assert_eq!(&b[4..6], &1u16.to_le_bytes());
        assert_eq!(&b[6..10], &3u32.to_le_bytes());
        assert_eq!(&b[10..18], &2u64.to_le_bytes());
        assert_eq!(&b[18..20], &2u16.to_le_bytes());
        assert_eq!(&b[20..22], b"m1");
        assert_eq!(b.len(), 18 + (2 + 2 + 16 + 12) + (2 + 5 + 16 + 12));
    }

    #[test]
    fn binary_and_text_round_trip() {
        let a = sample();
        assert_eq!(EmbeddingArchive::from_bytes(&a.to_bytes()).unwrap(), a);
        let text = a.to_text().unwrap();
        assert_eq!(
            EmbeddingArchive::from_text(&text, Path::new("a.xvec.txt")).unwrap(),
            a
        );
    }

    #[test]
    fn rejects_bad_headers_and_truncation() {
        let mut b = sample().to_bytes();
        let good = b.clone();
        b[0] = b'Y';
        assert!(EmbeddingArchive::from_bytes(&b).is_err());
        let mut b = good.clone();
        b[4] = 2;
        assert!(EmbeddingArchive::from_bytes(&b).is_err());
        for cut in [3, 17, 30, good.len() - 1] {
            assert!(EmbeddingArchive::from_bytes(&good[..cut]).is_err());
        }
        let mut b = good.clone();
        b.push(0);
        assert!(EmbeddingArchive::from_bytes(&b).is_err());
        let mut b = good;
        b[10..18].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(EmbeddingArchive::from_bytes(&b).is_err());
    }

    #[test]
    fn text_count_mismatch_is_an_error() {
        let text = "XVEC 1 2 3\na 0 1 0.5 0.5\n";
        assert!(EmbeddingArchive::from_text(text, Path::new("x.xvec.txt")).is_err());
    }
}
