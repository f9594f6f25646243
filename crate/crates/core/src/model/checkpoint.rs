//! Binary checkpoint: `OMNP`, u16 version, u8 stage, u32-prefixed config
//! text (`key=value` lines), u32 tensor count, then per tensor a u16-prefixed
//! name, u32 rows, u32 cols and `rows * cols` little-endian f32 values.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::config::ModelConfig;
use super::params::{ParamIndex, Parameters};
use super::transformer::Model;
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::grid::read_exact;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"OMNP";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// 0 for an untrained model.
    pub stage: u8,
    pub config: ModelConfig,
    pub params: Parameters,
}

impl Checkpoint {
    pub fn from_model(model: &Model, stage: u8) -> Self {
        Self {
            stage,
            config: model.config().clone(),
            params: model.params().clone(),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        Model::with_params(self.config, self.params)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let text = self.config.to_kv().to_text();
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.stage])?;
        w.write_all(&(text.len() as u32).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        let index = self.params.index();
        w.write_all(&(index.tensors.len() as u32).to_le_bytes())?;
        for t in &index.tensors {
            w.write_all(&(t.name.len() as u16).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&(t.rows as u32).to_le_bytes())?;
            w.write_all(&(t.cols as u32).to_le_bytes())?;
            let mut buf = Vec::with_capacity(t.len() * 4);
            for &v in self.params.get(index.find(&t.name).expect("own tensor")) {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::UnknownMagic(magic));
        }
        let mut b2 = [0u8; 2];
        let mut b4 = [0u8; 4];
        read_exact(&mut r, &mut b2, "version")?;
        let version = u16::from_le_bytes(b2);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut stage = [0u8; 1];
        read_exact(&mut r, &mut stage, "stage")?;
        read_exact(&mut r, &mut b4, "config length")?;
        let len = u32::from_le_bytes(b4) as usize;
        if len > 1 << 20 {
            return Err(Error::Format(format!("config section of {len} bytes is implausible")));
        }
        let mut text = vec![0u8; len];
        read_exact(&mut r, &mut text, "config")?;
        let text = String::from_utf8(text).map_err(|_| Error::Format("config is not UTF-8".into()))?;
        let config = ModelConfig::from_kv(&KvConfig::parse(&text)?)?;
        let index = Arc::new(ParamIndex::new(&config));

        read_exact(&mut r, &mut b4, "tensor count")?;
        let count = u32::from_le_bytes(b4) as usize;
        if count != index.tensors.len() {
            return Err(Error::Format(format!(
                "{count} tensors, config implies {}",
                index.tensors.len()
            )));
        }
        let mut values = vec![0.0; index.total];
        for t in &index.tensors {
            read_exact(&mut r, &mut b2, "tensor name length")?;
            let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
            read_exact(&mut r, &mut name, "tensor name")?;
            read_exact(&mut r, &mut b4, "tensor rows")?;
            let rows = u32::from_le_bytes(b4) as usize;
            read_exact(&mut r, &mut b4, "tensor cols")?;
            let cols = u32::from_le_bytes(b4) as usize;
            if name != t.name.as_bytes() || rows != t.rows || cols != t.cols {
                return Err(Error::Format(format!(
                    "tensor {:?} {rows}x{cols} where {} {}x{} was expected",
                    String::from_utf8_lossy(&name),
                    t.name,
                    t.rows,
                    t.cols
                )));
            }
            for v in &mut values[t.range()] {
                read_exact(&mut r, &mut b4, "tensor data")?;
                *v = f32::from_le_bytes(b4) as f64;
            }
        }
        Ok(Self {
            stage: stage[0],
            config,
            params: Parameters::from_values(index, values),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Model {
        Model::new(ModelConfig {
            d_model: 16,
            n_trunk_blocks: 1,
            n_extension_blocks: 1,
            n_heads: 2,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let ck = Checkpoint::from_model(&small(), 2);
        let back = Checkpoint::read_from(ck.to_bytes().as_slice()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = Checkpoint::from_model(&small(), 0).to_bytes();
        for cut in [0, 3, 7, 40, bytes.len() - 1] {
            let err = Checkpoint::read_from(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("truncated"), "{cut}: {err}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read_from(bad.as_slice()), Err(Error::UnknownMagic(m)) if &m == b"XMNP"));
    }
}
