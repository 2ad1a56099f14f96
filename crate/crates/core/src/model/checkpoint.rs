//! Checkpoint file.
//!
//! Layout (little endian): magic, version u32; header of ten u32 fields
//! (d, patch, heads, n_intra, n_inter, k_win, channels, latent_h, latent_w,
//! n_views); the full model config as a length-prefixed TOML string; tensor
//! count u32; then per tensor: name (u32 length + UTF-8), rank u32, dims
//! u32 each, and f32 data in row-major order.

use std::path::Path;

use super::{Model, ModelConfig};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HGSCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn header(c: &ModelConfig) -> [usize; 10] {
    [
        c.d,
        c.patch,
        c.heads,
        c.n_intra,
        c.n_inter,
        c.k_win,
        c.channels,
        c.latent_h,
        c.latent_w,
        c.n_views,
    ]
}

const HEADER_NAMES: [&str; 10] = [
    "d", "patch", "heads", "n_intra", "n_inter", "k_win", "channels", "latent_h", "latent_w", "n_views",
];

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut w = Writer::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    for v in header(&model.config) {
        w.u32(v as u32);
    }
    let toml = toml::to_string(&model.config).map_err(|e| Error::config(format!("serialize config: {e}")))?;
    w.str(&toml);
    w.u32(model.params.tensors.len() as u32);
    for t in &model.params.tensors {
        w.str(&t.name);
        w.u32(t.shape.len() as u32);
        for d in &t.shape {
            w.u32(*d as u32);
        }
        for x in &t.data {
            w.f32(*x as f32);
        }
    }
    std::fs::write(path, w.buf)?;
    Ok(())
}

/// Load a checkpoint, rebuilding the parameter layout from its config and
/// checking every tensor's name and shape against it.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let data = std::fs::read(path)?;
    let mut r = Reader::new(&data, "checkpoint");
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::schema("checkpoint: bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::schema(format!("checkpoint: unsupported version {version}")));
    }
    let mut hdr = [0usize; 10];
    for h in hdr.iter_mut() {
        *h = r.u32()? as usize;
    }
    let text = r.str()?;
    let config: ModelConfig =
        toml::from_str(&text).map_err(|e| Error::schema(format!("checkpoint: config block: {e}")))?;
    for ((name, a), b) in HEADER_NAMES.iter().zip(hdr).zip(header(&config)) {
        if a != b {
            return Err(Error::schema(format!(
                "checkpoint: header {name} = {a} disagrees with config block ({b})"
            )));
        }
    }
    let mut model = Model::new(config, 0).map_err(|e| Error::schema(format!("checkpoint: {e}")))?;
    let n = r.u32()? as usize;
    if n != model.params.tensors.len() {
        return Err(Error::schema(format!(
            "checkpoint: {n} tensors, config implies {}",
            model.params.tensors.len()
        )));
    }
    for t in model.params.tensors.iter_mut() {
        let name = r.str()?;
        if name != t.name {
            return Err(Error::schema(format!("checkpoint: expected tensor {}, found {name}", t.name)));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        if shape != t.shape {
            return Err(Error::schema(format!(
                "checkpoint: tensor {name} has shape {shape:?}, expected {:?}",
                t.shape
            )));
        }
        t.data = r.f32_vec(t.data.len())?.into_iter().map(f64::from).collect();
    }
    r.expect_end()?;
    if !model.params.is_finite() {
        return Err(Error::schema("checkpoint: non-finite parameter values"));
    }
    Ok(model)
}
