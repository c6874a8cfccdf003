//! Binary model checkpoints.
//!
//! Layout, little-endian: `"RMCK"`, version `u16`, seed `u64`,
//! `u32`-length JSON model config, `u32`-length JSON training config
//! (`null` when absent), tensor count `u32`, then per tensor a
//! `u16`-length name, rows `u32`, cols `u32` and `rows × cols` `f64` values
//! in row-major order. Values are stored exactly.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::rmc::{Parameters, RmcConfig, RmcModel};
use crate::trainer::TrainingConfig;

pub const MAGIC: &[u8; 4] = b"RMCK";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: RmcModel,
    pub training: Option<TrainingConfig>,
    pub seed: u64,
}

fn write_blob(out: &mut Vec<u8>, blob: &[u8]) {
    out.write_u32::<LittleEndian>(blob.len() as u32).unwrap();
    out.extend_from_slice(blob);
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = |e: serde_json::Error| Error::Format(e.to_string());
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u16::<LittleEndian>(VERSION).unwrap();
        out.write_u64::<LittleEndian>(self.seed).unwrap();
        write_blob(
            &mut out,
            &serde_json::to_vec(self.model.config()).map_err(json)?,
        );
        write_blob(&mut out, &serde_json::to_vec(&self.training).map_err(json)?);
        let params = self.model.params();
        out.write_u32::<LittleEndian>(params.len() as u32).unwrap();
        for (name, t) in params.iter() {
            out.write_u16::<LittleEndian>(name.len() as u16).unwrap();
            out.extend_from_slice(name.as_bytes());
            out.write_u32::<LittleEndian>(t.nrows() as u32).unwrap();
            out.write_u32::<LittleEndian>(t.ncols() as u32).unwrap();
            for &v in t.iter() {
                out.write_f64::<LittleEndian>(v).unwrap();
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = |_| Error::Format("truncated checkpoint".into());
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = cur.read_u16::<LittleEndian>().map_err(truncated)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let seed = cur.read_u64::<LittleEndian>().map_err(truncated)?;
        let blob = |cur: &mut Cursor<&[u8]>| -> Result<Vec<u8>> {
            let len = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            if len > bytes.len() {
                return Err(Error::Format("truncated checkpoint".into()));
            }
            let mut b = vec![0u8; len];
            cur.read_exact(&mut b).map_err(truncated)?;
            Ok(b)
        };
        let json = |e: serde_json::Error| Error::Format(format!("checkpoint metadata: {e}"));
        let config: RmcConfig = serde_json::from_slice(&blob(&mut cur)?).map_err(json)?;
        let training: Option<TrainingConfig> =
            serde_json::from_slice(&blob(&mut cur)?).map_err(json)?;
        let count = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = cur.read_u16::<LittleEndian>().map_err(truncated)? as usize;
            let mut name = vec![0u8; len];
            cur.read_exact(&mut name).map_err(truncated)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rows = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            let cols = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.saturating_mul(8) <= bytes.len())
                .ok_or_else(|| Error::Format(format!("tensor {name} is larger than the file")))?;
            let mut data = vec![0f64; n];
            cur.read_f64_into::<LittleEndian>(&mut data)
                .map_err(truncated)?;
            names.push(name);
            tensors.push(Array2::from_shape_vec((rows, cols), data).expect("shape matches length"));
        }
        if cur.position() != bytes.len() as u64 {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        let model = RmcModel::from_parameters(config, Parameters::from_parts(names, tensors))?;
        Ok(Checkpoint {
            model,
            training,
            seed,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()?).map_err(Error::file(path))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path).map_err(Error::file(path))?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
