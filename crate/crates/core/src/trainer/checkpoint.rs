//! Checkpoint file: magic `MSCK`, u32 version, u32-length-prefixed TOML
//! config document, u32 blob count, blobs, then a u8 optimizer presence flag
//! optionally followed by u64 step, u32 blob count and the moment blobs.
//!
//! A blob is a u32-length-prefixed UTF-8 name, u32 rank, one u64 per
//! dimension and the little-endian f32 payload. All integers are
//! little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::trainer::adam::OptimizerState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ConfigDoc {
    seed: u64,
    epoch: usize,
    model: ModelConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
    pub seed: u64,
    pub epoch: usize,
}

struct Blob {
    name: String,
    dims: Vec<u64>,
    data: Vec<f32>,
}

fn param_blobs(model: &Model<f32>) -> Vec<Blob> {
    let mut out = Vec::new();
    for (name, conv) in model.named_convs() {
        out.push(Blob {
            name: format!("{name}.weight"),
            dims: vec![conv.kernel as u64, conv.in_channels as u64, conv.out_channels as u64],
            data: conv.weights.clone(),
        });
        out.push(Blob {
            name: format!("{name}.bias"),
            dims: vec![conv.out_channels as u64],
            data: conv.bias.clone(),
        });
    }
    out
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_blob(out: &mut Vec<u8>, blob: &Blob) {
    put_u32(out, blob.name.len() as u32);
    out.extend_from_slice(blob.name.as_bytes());
    put_u32(out, blob.dims.len() as u32);
    for d in &blob.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &blob.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let doc = ConfigDoc {
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        model: ckpt.model.config.clone(),
    };
    let text = toml::to_string(&doc).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let blobs = param_blobs(&ckpt.model);
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, text.len() as u32);
    out.extend_from_slice(text.as_bytes());
    put_u32(&mut out, blobs.len() as u32);
    for b in &blobs {
        put_blob(&mut out, b);
    }
    match &ckpt.optimizer {
        None => out.push(0),
        Some(state) => {
            out.push(1);
            out.extend_from_slice(&state.step.to_le_bytes());
            if state.m.len() != blobs.len() {
                return Err(Error::dim("checkpoint optimizer", blobs.len(), state.m.len()));
            }
            put_u32(&mut out, 2 * blobs.len() as u32);
            for (prefix, moments) in [("adam.m", &state.m), ("adam.v", &state.v)] {
                for (b, data) in blobs.iter().zip(moments) {
                    put_blob(
                        &mut out,
                        &Blob {
                            name: format!("{prefix}.{}", b.name),
                            dims: b.dims.clone(),
                            data: data.clone(),
                        },
                    );
                }
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                path: self.path.to_path_buf(),
                detail: format!("reading {what} at byte {}", self.pos),
            }),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn blob(&mut self) -> Result<Blob> {
        let len = self.u32("blob name length")? as usize;
        let name = String::from_utf8(self.take(len, "blob name")?.to_vec()).map_err(|_| self.format("blob name is not UTF-8"))?;
        let rank = self.u32("blob rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(self.u64("blob dims")?);
        }
        let count = dims
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .and_then(|n| usize::try_from(n).ok())
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| self.format(&format!("blob `{name}` has implausible dims {dims:?}")))?;
        let data = self
            .take(count, &format!("payload of `{name}`"))?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Blob { name, dims, data })
    }

    fn format(&self, detail: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            detail: detail.to_string(),
        }
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "MSCK",
        });
    }
    let mut r = Reader { bytes, pos: 4, path };
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = r.u32("config length")? as usize;
    let text = std::str::from_utf8(r.take(len, "config document")?).map_err(|_| r.format("config is not UTF-8"))?;
    let doc: ConfigDoc = toml::from_str(text).map_err(|e| r.format(&format!("config: {e}")))?;
    let mut model = Model::<f32>::zeros(&doc.model)?;
    let expected = param_blobs(&model);

    let count = r.u32("blob count")? as usize;
    if count != expected.len() {
        return Err(r.format(&format!(
            "shape mismatch vs embedded config: {count} blobs, config implies {}",
            expected.len()
        )));
    }
    let mut blobs = Vec::with_capacity(count);
    for want in &expected {
        let b = r.blob()?;
        if b.name != want.name || b.dims != want.dims {
            return Err(r.format(&format!(
                "shape mismatch vs embedded config: blob `{}` {:?}, expected `{}` {:?}",
                b.name, b.dims, want.name, want.dims
            )));
        }
        blobs.push(b.data);
    }
    let mut it = blobs.into_iter();
    for conv in model.convs_mut() {
        conv.weights = it.next().expect("counted");
        conv.bias = it.next().expect("counted");
    }

    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let step = r.u64("optimizer step")?;
            let n = r.u32("optimizer blob count")? as usize;
            if n != 2 * expected.len() {
                return Err(r.format("optimizer section does not match the model"));
            }
            let mut m = Vec::with_capacity(expected.len());
            let mut v = Vec::with_capacity(expected.len());
            for i in 0..n {
                let want = &expected[i % expected.len()];
                let b = r.blob()?;
                if b.dims != want.dims {
                    return Err(r.format(&format!("optimizer blob `{}` has wrong shape", b.name)));
                }
                if i < expected.len() {
                    m.push(b.data);
                } else {
                    v.push(b.data);
                }
            }
            Some(OptimizerState { step, m, v })
        }
        other => return Err(r.format(&format!("bad optimizer flag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(r.format(&format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        model,
        optimizer,
        seed: doc.seed,
        epoch: doc.epoch,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
