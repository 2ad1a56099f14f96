//! Binary body-model file.
//!
//! Layout (little endian): magic, version u32, V u32, F u32, J u32, then
//! template `V×3` f32, shape dirs `V×3×10` f32, weights `V×J` f32, regressor
//! `J×V` f32, parents `J` i32, faces `F×3` i32, labels `V` u8, and a part
//! table: count u32 followed by `(id u8, name, vertex count u32)` entries
//! where names are u32-length-prefixed UTF-8.

use std::path::Path;

use super::{BodyModel, PartInfo, NUM_BETAS};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

pub const BODY_MAGIC: &[u8; 8] = b"HGSBODY\0";
pub const BODY_VERSION: u32 = 1;

pub fn save_body_model(model: &BodyModel, path: &Path) -> Result<()> {
    model.validate()?;
    std::fs::write(path, encode(model))?;
    Ok(())
}

fn encode(model: &BodyModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(BODY_MAGIC);
    w.u32(BODY_VERSION);
    w.u32(model.num_vertices() as u32);
    w.u32(model.faces.len() as u32);
    w.u32(model.num_joints() as u32);
    for p in &model.template {
        for x in p {
            w.f32(*x as f32);
        }
    }
    for x in model.shape_dirs.iter().chain(&model.weights).chain(&model.regressor) {
        w.f32(*x as f32);
    }
    for p in &model.parents {
        w.i32(*p);
    }
    for f in &model.faces {
        for i in f {
            w.i32(*i as i32);
        }
    }
    for l in &model.labels {
        w.u8(*l);
    }
    w.u32(model.parts.len() as u32);
    for p in &model.parts {
        w.u8(p.id);
        w.str(&p.name);
        w.u32(p.vertex_count);
    }
    w.buf
}

pub fn load_body_model(path: &Path) -> Result<BodyModel> {
    let data = std::fs::read(path)?;
    let mut r = Reader::new(&data, "body model");
    if r.take(8)? != BODY_MAGIC {
        return Err(Error::schema("body model: bad magic"));
    }
    let version = r.u32()?;
    if version != BODY_VERSION {
        return Err(Error::schema(format!("body model: unsupported version {version}")));
    }
    let nv = r.u32()? as usize;
    let nf = r.u32()? as usize;
    let nj = r.u32()? as usize;
    let expected = nv * 3 * 4 + nv * 3 * NUM_BETAS * 4 + 2 * nv * nj * 4 + nj * 4 + nf * 12 + nv;
    if r.remaining() < expected {
        return Err(Error::schema(format!(
            "body model: truncated ({} bytes after header, need at least {expected})",
            r.remaining()
        )));
    }
    let template = r
        .f32_vec(nv * 3)?
        .chunks_exact(3)
        .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
        .collect();
    let to64 = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<_>>();
    let shape_dirs = to64(r.f32_vec(nv * 3 * NUM_BETAS)?);
    let weights = to64(r.f32_vec(nv * nj)?);
    let regressor = to64(r.f32_vec(nj * nv)?);
    let parents = (0..nj).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
    let mut faces = Vec::with_capacity(nf);
    for fi in 0..nf {
        let mut f = [0u32; 3];
        for slot in f.iter_mut() {
            let i = r.i32()?;
            if i < 0 || i as usize >= nv {
                return Err(Error::invariant("faces", format!("face {fi} has index {i} outside [0, {nv})")));
            }
            *slot = i as u32;
        }
        faces.push(f);
    }
    let labels = r.take(nv)?.to_vec();
    let nparts = r.u32()? as usize;
    let mut parts = Vec::with_capacity(nparts.min(256));
    for _ in 0..nparts {
        let id = r.u8()?;
        let name = r.str()?;
        let vertex_count = r.u32()?;
        parts.push(PartInfo { id, name, vertex_count });
    }
    r.expect_end()?;
    let model = BodyModel {
        template,
        faces,
        shape_dirs,
        weights,
        regressor,
        parents,
        labels,
        parts,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::toy_capsule_human;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.body");
        let m = toy_capsule_human();
        save_body_model(&m, &path).unwrap();
        let back = load_body_model(&path).unwrap();
        assert_eq!(back, m);
    }

    fn corrupt(edit: impl FnOnce(&mut BodyModel)) -> Error {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.body");
        let mut m = toy_capsule_human();
        edit(&mut m);
        std::fs::write(&path, encode(&m)).unwrap();
        load_body_model(&path).unwrap_err()
    }

    #[test]
    fn weight_row_sum_violation_names_row() {
        let e = corrupt(|m| m.weights[7 * 24] += 0.5);
        let msg = e.to_string();
        assert!(msg.contains("weights") && msg.contains("row 7"), "{msg}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn face_index_out_of_range_rejected() {
        let e = corrupt(|m| m.faces[3][1] = 100_000);
        assert!(e.to_string().contains("face 3"), "{e}");
    }

    #[test]
    fn cyclic_parents_rejected() {
        let e = corrupt(|m| m.parents[4] = 7);
        assert!(e.to_string().contains("joint 4"), "{e}");
    }

    #[test]
    fn truncated_and_bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.body");
        save_body_model(&toy_capsule_human(), &path).unwrap();
        let data = std::fs::read(&path).unwrap();
        std::fs::write(&path, &data[..data.len() / 2]).unwrap();
        assert!(matches!(load_body_model(&path), Err(Error::Schema(_))));
        let mut bad = data.clone();
        bad[0] = b'X';
        std::fs::write(&path, bad).unwrap();
        assert!(matches!(load_body_model(&path), Err(Error::Schema(_))));
    }
}
