//! Checkpoint container: a serialized model spec header followed by every
//! parameter's planes, each batch-norm layer's running statistics, and the
//! Adam moment buffers, all as little-endian 32-bit floats with declared
//! shapes. Reloading reconstructs a model whose forward outputs are
//! bit-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, FormatError, Result};
use crate::layers::Cov2x2;
use crate::models::{Model, ModelSpec};
use crate::optim::AdamState;
use crate::scalar::Scalar;
use crate::tensor::{ComplexTensor, RealTensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CVCK";
pub const CHECKPOINT_VERSION: u16 = 1;

const KIND_COMPLEX: u8 = 0;
const KIND_REAL: u8 = 1;

struct Blob {
    name: String,
    kind: u8,
    shape: Vec<usize>,
    planes: Vec<Vec<f32>>,
}

fn write_blob<W: Write>(w: &mut W, blob: &Blob) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(blob.name.len() as u32)?;
    w.write_all(blob.name.as_bytes())?;
    w.write_u8(blob.kind)?;
    w.write_u32::<LittleEndian>(blob.shape.len() as u32)?;
    for &d in &blob.shape {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    for plane in &blob.planes {
        for &v in plane {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

fn read_blob<R: Read>(r: &mut R) -> std::io::Result<Blob> {
    let name_len = r.read_u32::<LittleEndian>()? as usize;
    let mut name_bytes = vec![0u8; name_len];
    r.read_exact(&mut name_bytes)?;
    let name = String::from_utf8_lossy(&name_bytes).into_owned();
    let kind = r.read_u8()?;
    let ndim = r.read_u32::<LittleEndian>()? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let count: usize = shape.iter().product();
    let plane_count = if kind == KIND_COMPLEX { 2 } else { 1 };
    let mut planes = Vec::with_capacity(plane_count);
    for _ in 0..plane_count {
        let mut plane = Vec::with_capacity(count);
        for _ in 0..count {
            plane.push(r.read_f32::<LittleEndian>()?);
        }
        planes.push(plane);
    }
    Ok(Blob {
        name,
        kind,
        shape,
        planes,
    })
}

fn to_f32<P: Scalar>(xs: &[P]) -> Vec<f32> {
    xs.iter().map(|v| v.to_f32()).collect()
}

fn collect_blobs<P: Scalar>(model: &Model<P>, adam: &AdamState<P>) -> Vec<Blob> {
    let params = model.parameters();
    let mut blobs = Vec::new();
    for p in &params {
        let kind = match p.kind() {
            crate::graph::ParamKind::Complex => KIND_COMPLEX,
            crate::graph::ParamKind::Real => KIND_REAL,
        };
        blobs.push(Blob {
            name: p.name().to_string(),
            kind,
            shape: p.shape().to_vec(),
            planes: (0..p.num_planes())
                .map(|pl| to_f32(&p.plane_tensor(pl).to_vec()))
                .collect(),
        });
    }
    for (name, bn) in model.bn_layers() {
        let (mean, cov) = bn.running_state();
        blobs.push(Blob {
            name: format!("{name}.running_mean"),
            kind: KIND_COMPLEX,
            shape: mean.shape().to_vec(),
            planes: vec![to_f32(mean.re().data()), to_f32(mean.im().data())],
        });
        for (suffix, plane) in [("vrr", &cov.rr), ("vri", &cov.ri), ("vii", &cov.ii)] {
            blobs.push(Blob {
                name: format!("{name}.running_{suffix}"),
                kind: KIND_REAL,
                shape: plane.shape().to_vec(),
                planes: vec![to_f32(plane.data())],
            });
        }
    }
    for (i, p) in params.iter().enumerate() {
        let kind = match p.kind() {
            crate::graph::ParamKind::Complex => KIND_COMPLEX,
            crate::graph::ParamKind::Real => KIND_REAL,
        };
        for (suffix, which) in [("adam_m", 0usize), ("adam_v", 1usize)] {
            let planes = (0..p.num_planes())
                .map(|pl| {
                    let (m, v) = adam.moments(i, pl);
                    to_f32(if which == 0 { m } else { v })
                })
                .collect();
            blobs.push(Blob {
                name: format!("{}.{suffix}", p.name()),
                kind,
                shape: p.shape().to_vec(),
                planes,
            });
        }
    }
    blobs
}

pub fn save_checkpoint<P: Scalar>(
    path: &Path,
    model: &Model<P>,
    adam: &AdamState<P>,
) -> Result<()> {
    let io = |e| Error::io(path, e);
    let spec_json = serde_json::to_vec(&model.spec)
        .map_err(|e| Error::invalid("save_checkpoint", e.to_string()))?;
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_u16::<LittleEndian>(CHECKPOINT_VERSION).map_err(io)?;
    w.write_u32::<LittleEndian>(spec_json.len() as u32).map_err(io)?;
    w.write_all(&spec_json).map_err(io)?;
    w.write_u64::<LittleEndian>(adam.step_count()).map_err(io)?;
    let blobs = collect_blobs(model, adam);
    w.write_u32::<LittleEndian>(blobs.len() as u32).map_err(io)?;
    for blob in &blobs {
        write_blob(&mut w, blob).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_header<R: Read>(path: &Path, r: &mut R) -> Result<(ModelSpec, u64, u32)> {
    let io = |e: std::io::Error| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::format(path, FormatError::Truncated)
        } else {
            Error::io(path, e)
        }
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format(path, FormatError::BadMagic));
    }
    let version = r.read_u16::<LittleEndian>().map_err(io)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, FormatError::UnsupportedVersion(version)));
    }
    let spec_len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let mut spec_bytes = vec![0u8; spec_len];
    r.read_exact(&mut spec_bytes).map_err(io)?;
    let spec: ModelSpec = serde_json::from_slice(&spec_bytes)
        .map_err(|e| Error::format(path, FormatError::Corrupt(format!("spec header: {e}"))))?;
    let step = r.read_u64::<LittleEndian>().map_err(io)?;
    let count = r.read_u32::<LittleEndian>().map_err(io)?;
    Ok((spec, step, count))
}

/// Rebuild the model and optimizer state stored at `path`.
pub fn load_checkpoint<P: Scalar>(path: &Path) -> Result<(Model<P>, AdamState<P>)> {
    let io = |e: std::io::Error| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::format(path, FormatError::Truncated)
        } else {
            Error::io(path, e)
        }
    };
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let (spec, step, count) = read_header(path, &mut r)?;
    let mut blobs = Vec::with_capacity(count as usize);
    for _ in 0..count {
        blobs.push(read_blob(&mut r).map_err(io)?);
    }

    let model: Model<P> = Model::build(spec, 0)?;
    let params = model.parameters();
    let mut adam = AdamState::new(&params);
    adam.set_step_count(step);

    let lookup = |name: &str| -> Result<&Blob> {
        blobs
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::format(path, FormatError::Corrupt(format!("missing '{name}'"))))
    };
    let check = |blob: &Blob, kind: u8, shape: &[usize]| -> Result<()> {
        if blob.kind != kind || blob.shape != shape {
            return Err(Error::format(
                path,
                FormatError::Corrupt(format!("tensor '{}' has unexpected layout", blob.name)),
            ));
        }
        Ok(())
    };
    let from_f32 = |xs: &[f32]| xs.iter().map(|&v| P::from_f32(v)).collect::<Vec<P>>();

    for p in &params {
        let kind = match p.kind() {
            crate::graph::ParamKind::Complex => KIND_COMPLEX,
            crate::graph::ParamKind::Real => KIND_REAL,
        };
        let blob = lookup(p.name())?;
        check(blob, kind, p.shape())?;
        for (pl, plane) in blob.planes.iter().enumerate() {
            p.set_plane(pl, &from_f32(plane));
        }
    }
    for (name, bn) in model.bn_layers() {
        let mean_blob = lookup(&format!("{name}.running_mean"))?;
        check(mean_blob, KIND_COMPLEX, &[bn.channels()])?;
        let mean = ComplexTensor::from_planes(
            mean_blob.shape.clone(),
            from_f32(&mean_blob.planes[0]),
            from_f32(&mean_blob.planes[1]),
        )?;
        let mut cov_planes = Vec::new();
        for suffix in ["vrr", "vri", "vii"] {
            let blob = lookup(&format!("{name}.running_{suffix}"))?;
            check(blob, KIND_REAL, &[bn.channels()])?;
            cov_planes.push(RealTensor::new(blob.shape.clone(), from_f32(&blob.planes[0]))?);
        }
        let cov = Cov2x2 {
            rr: cov_planes[0].clone(),
            ri: cov_planes[1].clone(),
            ii: cov_planes[2].clone(),
        };
        bn.set_running_state(mean, cov);
    }
    for (i, p) in params.iter().enumerate() {
        let m_blob = lookup(&format!("{}.adam_m", p.name()))?;
        let v_blob = lookup(&format!("{}.adam_v", p.name()))?;
        for pl in 0..p.num_planes() {
            adam.set_moments(i, pl, &from_f32(&m_blob.planes[pl]), &from_f32(&v_blob.planes[pl]));
        }
    }
    Ok((model, adam))
}

/// Load a checkpoint whose stored spec must match `expected`.
pub fn load_checkpoint_expecting<P: Scalar>(
    path: &Path,
    expected: &ModelSpec,
) -> Result<(Model<P>, AdamState<P>)> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let (spec, _, _) = read_header(path, &mut r)?;
    if &spec != expected {
        return Err(Error::format(
            path,
            FormatError::SpecMismatch(format!(
                "stored '{}' ({} classes) vs expected '{}' ({} classes)",
                spec.name, spec.num_classes, expected.name, expected.num_classes
            )),
        ));
    }
    drop(r);
    load_checkpoint(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::layers::{ActivationKind, ForwardMode, PoolVariant};
    use crate::models::cvnet5_spec;
    use rand::{Rng, SeedableRng};

    fn micro_model() -> Model<f32> {
        Model::build(
            cvnet5_spec(3, ActivationKind::CRelu, PoolVariant::Area, 1.0 / 16.0, 32),
            123,
        )
        .unwrap()
    }

    fn probe_batch(seed: u64) -> ComplexTensor<f32> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let count = 2 * 32 * 32;
        let re: Vec<f32> = (0..count).map(|_| rng.random::<f32>() - 0.5).collect();
        let im: Vec<f32> = (0..count).map(|_| rng.random::<f32>() - 0.5).collect();
        ComplexTensor::from_planes(vec![2, 1, 32, 32], re, im).unwrap()
    }

    fn logits_bits(model: &Model<f32>, batch: &ComplexTensor<f32>) -> Vec<u32> {
        let mut g = Graph::new();
        let out = model.forward(&mut g, batch, ForwardMode::Eval).unwrap();
        g.value(out).data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn round_trip_reproduces_logits_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cvck");
        let model = micro_model();
        let adam = AdamState::new(&model.parameters());
        save_checkpoint(&path, &model, &adam).unwrap();
        let (back, adam_back) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(adam_back.step_count(), 0);
        let batch = probe_batch(5);
        assert_eq!(logits_bits(&model, &batch), logits_bits(&back, &batch));
    }

    #[test]
    fn wrong_num_classes_is_a_spec_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cvck");
        let model = micro_model();
        let adam = AdamState::new(&model.parameters());
        save_checkpoint(&path, &model, &adam).unwrap();
        let wrong = cvnet5_spec(5, ActivationKind::CRelu, PoolVariant::Area, 1.0 / 16.0, 32);
        match load_checkpoint_expecting::<f32>(&path, &wrong) {
            Err(Error::Format {
                kind: FormatError::SpecMismatch(_),
                ..
            }) => {}
            Ok(_) => panic!("expected spec mismatch, got success"),
            Err(other) => panic!("expected spec mismatch, got {other:?}"),
        }
    }

    #[test]
    fn truncated_checkpoint_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cvck");
        let model = micro_model();
        let adam = AdamState::new(&model.parameters());
        save_checkpoint(&path, &model, &adam).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match load_checkpoint::<f32>(&path) {
            Err(Error::Format { kind: FormatError::Truncated, .. }) => {}
            Ok(_) => panic!("expected truncation, got success"),
            Err(other) => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_size_matches_field_width_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cvck");
        let model = micro_model();
        let adam = AdamState::new(&model.parameters());
        save_checkpoint(&path, &model, &adam).unwrap();

        let spec_len = serde_json::to_vec(&model.spec).unwrap().len();
        let mut expected = 4 + 2 + 4 + spec_len + 8 + 4;
        let mut tensor = |name: usize, ndim: usize, planes: usize, count: usize| {
            expected += 4 + name + 1 + 4 + 4 * ndim + 4 * planes * count;
        };
        for p in model.parameters() {
            // value + adam_m + adam_v
            tensor(p.name().len(), p.shape().len(), p.num_planes(), p.plane_len());
            for suffix in ["adam_m", "adam_v"] {
                tensor(
                    p.name().len() + 1 + suffix.len(),
                    p.shape().len(),
                    p.num_planes(),
                    p.plane_len(),
                );
            }
        }
        for (name, bn) in model.bn_layers() {
            tensor(name.len() + ".running_mean".len(), 1, 2, bn.channels());
            for suffix in ["vrr", "vri", "vii"] {
                tensor(name.len() + ".running_".len() + suffix.len(), 1, 1, bn.channels());
            }
        }
        assert_eq!(std::fs::metadata(&path).unwrap().len(), expected as u64);
    }
}
