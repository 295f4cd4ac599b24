//! Versioned binary model container.
//!
//! Layout (little endian): `b"GNETCKPT"`, `u32` version, `u32` length and
//! bytes of the JSON-encoded [`GnetConfig`], `u32` blob count, then per blob
//! `u32` name length, UTF-8 name, `u32` rank, `u64` per dimension and the
//! values as `f64`. Optimizer moments, when present, follow the model
//! parameters as `adam/m/<name>`, `adam/v/<name>`, `adam/step` and
//! `adam/hyper` (β1, β2, ε).

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::{AdamState, Tensor};
use crate::error::{Error, Result};
use crate::gnet::config::GnetConfig;
use crate::gnet::model::GnetModel;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"GNETCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: GnetModel<T>,
    pub adam: Option<AdamState<T>>,
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_blob<T: Scalar>(w: &mut impl Write, name: &str, shape: &[usize], values: &[T]) -> std::io::Result<()> {
    put_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    put_u32(w, shape.len() as u32)?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in values {
        w.write_all(&v.to_f64_lossless().to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<T: Scalar>(model: &GnetModel<T>, adam: Option<&AdamState<T>>, mut w: impl Write) -> Result<()> {
    let config = serde_json::to_vec(model.config())?;
    let io = |e| Error::io("<checkpoint>", e);
    let mut blobs = model.params().len();
    if adam.is_some() {
        blobs += 2 * model.params().len() + 2;
    }
    (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        put_u32(&mut w, VERSION)?;
        put_u32(&mut w, config.len() as u32)?;
        w.write_all(&config)?;
        put_u32(&mut w, blobs as u32)?;
        for (name, t) in model.named_params() {
            put_blob(&mut w, name, t.shape(), t.values())?;
        }
        if let Some(a) = adam {
            for (k, (name, t)) in model.named_params().enumerate() {
                put_blob(&mut w, &format!("adam/m/{name}"), t.shape(), &a.first_moment[k])?;
                put_blob(&mut w, &format!("adam/v/{name}"), t.shape(), &a.second_moment[k])?;
            }
            put_blob(&mut w, "adam/step", &[1], &[a.step as f64])?;
            put_blob(&mut w, "adam/hyper", &[3], &[a.beta1, a.beta2, a.eps])?;
        }
        w.flush()
    })()
    .map_err(io)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated container: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn blob<T: Scalar>(&mut self) -> Result<(String, Tensor<T>)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.bytes(len)?)
            .map_err(|_| Error::Checkpoint("blob name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = self.bytes(count * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        Ok((name, Tensor::new(shape, values)?))
    }
}

pub fn read_checkpoint<T: Scalar>(r: impl Read) -> Result<Checkpoint<T>> {
    let mut r = Reader { inner: r };
    if r.bytes(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let config: GnetConfig = serde_json::from_slice(&r.bytes(len)?)?;
    let count = r.u32()? as usize;
    let mut blobs = (0..count).map(|_| r.blob::<T>()).collect::<Result<Vec<_>>>()?;
    let adam_blobs = blobs
        .iter()
        .position(|(n, _)| n.starts_with("adam/"))
        .map(|k| blobs.split_off(k));
    let model = GnetModel::from_parts(config, blobs)?;
    let adam = match adam_blobs {
        None => None,
        Some(rest) => Some(adam_from_blobs(&model, rest)?),
    };
    Ok(Checkpoint { model, adam })
}

fn adam_from_blobs<T: Scalar>(model: &GnetModel<T>, blobs: Vec<(String, Tensor<T>)>) -> Result<AdamState<T>> {
    let mut state = AdamState::new(model.params());
    let find = |name: &str| {
        blobs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("missing {name}")))
    };
    for (k, (name, p)) in model.named_params().enumerate() {
        let m = find(&format!("adam/m/{name}"))?;
        let v = find(&format!("adam/v/{name}"))?;
        if m.shape() != p.shape() || v.shape() != p.shape() {
            return Err(Error::Checkpoint(format!("moment shape mismatch for {name}")));
        }
        state.first_moment[k] = m.values().to_vec();
        state.second_moment[k] = v.values().to_vec();
    }
    state.step = find("adam/step")?.values()[0].to_f64_lossless() as u64;
    let hyper = find("adam/hyper")?.values();
    if hyper.len() != 3 {
        return Err(Error::Checkpoint("adam/hyper must hold three values".into()));
    }
    (state.beta1, state.beta2, state.eps) = (hyper[0], hyper[1], hyper[2]);
    Ok(state)
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, model: &GnetModel<T>, adam: Option<&AdamState<T>>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(model, adam, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(bytes.as_slice())
}

/// Loads and additionally requires the stored configuration to equal
/// `expected`.
pub fn load_expecting<T: Scalar>(path: impl AsRef<Path>, expected: &GnetConfig) -> Result<Checkpoint<T>> {
    let ckpt = load(path)?;
    if ckpt.model.config() != expected {
        return Err(Error::Checkpoint(format!(
            "configuration mismatch: stored {:?}, expected {expected:?}",
            ckpt.model.config()
        )));
    }
    Ok(ckpt)
}
