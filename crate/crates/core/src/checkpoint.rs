//! Binary checkpoint: `"CWCK"`, u32 version, u32 tensor count, then per
//! tensor a u16 name length, UTF-8 name, u8 rank, u32 dims and f32 payload.
//! A u32-length-prefixed JSON metadata block follows the tensors, and a
//! CRC32 of every preceding byte closes the file. All integers and floats are
//! little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CwccConfig, CwccModel};
use crate::uncertainty::{UncertaintyBranch, BRANCH_PREFIX};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CWCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const KIND: &str = "checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub variant: String,
    pub config: CwccConfig,
    /// Training seed.
    pub seed: u64,
    /// Epoch the stored weights come from.
    pub epoch: usize,
}

pub type NamedTensor = (String, Vec<usize>, Vec<f32>);

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
    pub meta: CheckpointMeta,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Truncated {
            kind: KIND,
            detail: format!("{what} needs {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()),
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

fn malformed(detail: impl Into<String>) -> Error {
    Error::Malformed {
        kind: KIND,
        detail: detail.into(),
    }
}

impl Checkpoint {
    /// Captures the model and, if given, the uncertainty branch.
    pub fn from_model(model: &CwccModel, branch: Option<&UncertaintyBranch>, seed: u64, epoch: usize) -> Self {
        let mut tensors = model.parameter_snapshot();
        if let Some(b) = branch {
            tensors.extend(b.parameter_snapshot());
        }
        Self {
            tensors,
            meta: CheckpointMeta {
                variant: model.variant().as_str().to_string(),
                config: model.config().clone(),
                seed,
                epoch,
            },
        }
    }

    /// Rebuilds the model (and branch, when stored), re-validating the config
    /// and every tensor shape against it.
    pub fn to_model(&self) -> Result<(CwccModel, Option<UncertaintyBranch>)> {
        if self.meta.variant != self.meta.config.variant.as_str() {
            return Err(malformed(format!(
                "metadata variant {:?} disagrees with config variant {:?}",
                self.meta.variant,
                self.meta.config.variant.as_str()
            )));
        }
        let mut model = CwccModel::new(self.meta.config.clone(), 0)?;
        let (branch, backbone): (Vec<NamedTensor>, Vec<NamedTensor>) =
            self.tensors.iter().cloned().partition(|(n, _, _)| n.starts_with(BRANCH_PREFIX));
        model.set_parameters(&backbone).map_err(|e| malformed(format!("shape mismatch vs declared config: {e}")))?;
        let branch = if branch.is_empty() {
            None
        } else {
            let b = UncertaintyBranch::from_named(&branch)?;
            if b.inputs() != self.meta.config.hidden_units {
                return Err(malformed(format!(
                    "uncertainty branch takes {} inputs but the model has {} hidden units",
                    b.inputs(),
                    self.meta.config.hidden_units
                )));
            }
            Some(b)
        };
        Ok((model, branch))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let count = u32::try_from(self.tensors.len()).map_err(|_| Error::invalid("too many tensors"))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, shape, data) in &self.tensors {
            let len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("tensor name too long: {name}")))?;
            let rank = u8::try_from(shape.len()).map_err(|_| Error::invalid(format!("rank too high: {name}")))?;
            if shape.iter().product::<usize>() != data.len() {
                return Err(Error::invalid(format!("tensor {name}: shape {shape:?} vs {} values", data.len())));
            }
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in shape {
                let d = u32::try_from(d).map_err(|_| Error::invalid(format!("dimension too large: {name}")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta = serde_json::to_vec(&self.meta)?;
        let meta_len = u32::try_from(meta.len()).map_err(|_| Error::invalid("metadata too large"))?;
        out.extend_from_slice(&meta_len.to_le_bytes());
        out.extend_from_slice(&meta);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                kind: KIND,
                found: magic.to_vec(),
            });
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion { kind: KIND, version });
        }
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for i in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|_| malformed(format!("tensor {i} name is not UTF-8")))?
                .to_string();
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dimension")? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| malformed(format!("tensor {name} dimensions overflow")))?;
            let payload = r.take(numel, "tensor payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, shape, data));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta_bytes = r.take(meta_len, "metadata")?;
        let body_end = r.pos;
        let stored = r.u32("checksum")?;
        if r.pos != bytes.len() {
            return Err(malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(Error::BadCrc {
                kind: KIND,
                stored,
                computed,
            });
        }
        let meta = serde_json::from_slice(meta_bytes).map_err(|e| malformed(format!("metadata: {e}")))?;
        Ok(Self { tensors, meta })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// CRC32 of the whole checkpoint file, as reported by the CLI.
pub fn checkpoint_crc(path: impl AsRef<Path>) -> Result<u32> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(crc32fast::hash(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LinearImage;
    use crate::model::Variant;

    fn model(variant: Variant) -> CwccModel {
        CwccModel::new(
            CwccConfig {
                input_size: 32,
                variant,
                ..CwccConfig::default()
            },
            13,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for variant in [Variant::Shared, Variant::PerChannel] {
            let m = model(variant);
            let b = UncertaintyBranch::new(40, 3);
            let ck = Checkpoint::from_model(&m, Some(&b), 42, 7);
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            assert_eq!(back, ck);
            let (m2, b2) = back.to_model().unwrap();
            assert_eq!(m2.count_parameters(), m.count_parameters());
            assert_eq!(m2.parameter_digest(), m.parameter_digest());
            assert_eq!(b2.unwrap().parameter_snapshot(), b.parameter_snapshot());
            let img = LinearImage::filled(32, 32, [0.3, 0.5, 0.2]).unwrap();
            assert_eq!(m.forward(&img).unwrap(), m2.forward(&img).unwrap());
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = Checkpoint::from_model(&model(Variant::Shared), None, 0, 0).to_bytes().unwrap();
        for cut in [0, 3, 11, 100, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Truncated { .. }), "cut {cut}: {err}");
            assert!(err.to_string().contains("truncated"));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::UnsupportedVersion { .. })));
        let mut bad = bytes.clone();
        let mid = bytes.len() / 2;
        bad[mid] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadCrc { .. })));
    }

    #[test]
    fn rejects_shape_mismatch_against_config() {
        let mut ck = Checkpoint::from_model(&model(Variant::Shared), None, 0, 0);
        ck.meta.config.hidden_units = 32;
        let bytes = ck.to_bytes().unwrap();
        let err = Checkpoint::from_bytes(&bytes).unwrap().to_model().unwrap_err();
        assert!(err.to_string().contains("shape mismatch"), "{err}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cwck");
        let ck = Checkpoint::from_model(&model(Variant::Shared), None, 1, 2);
        save_checkpoint(&ck, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
        assert_eq!(checkpoint_crc(&path).unwrap(), crc32fast::hash(&fs::read(&path).unwrap()));
    }
}
