//! CVSL: the complex-slice binary format.
//!
//! Little-endian layout: magic `CVSL` (4 bytes), version u16 = 1, label u16,
//! height u32, width u32, then `H*W` pairs of 32-bit floats `(re, im)` in
//! row-major order. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, FormatError, Result};
use crate::scalar::Scalar;
use crate::tensor::ComplexTensor;

pub const CVSL_MAGIC: &[u8; 4] = b"CVSL";
pub const CVSL_VERSION: u16 = 1;

/// One complex image sample: `[1, H, W]` tensor, class label, source id.
#[derive(Clone, Debug)]
pub struct SliceRecord<P: Scalar> {
    pub image: ComplexTensor<P>,
    pub label: usize,
    pub id: String,
}

pub fn write_cvsl<P: Scalar>(path: &Path, record: &SliceRecord<P>) -> Result<()> {
    let shape = record.image.shape();
    if shape.len() != 3 || shape[0] != 1 || shape[1] == 0 || shape[2] == 0 {
        return Err(Error::invalid(
            "write_cvsl",
            format!("image must be [1, H, W] with H, W >= 1, got {shape:?}"),
        ));
    }
    if record.label > u16::MAX as usize {
        return Err(Error::invalid(
            "write_cvsl",
            format!("label {} exceeds u16", record.label),
        ));
    }
    if !record.image.all_finite() {
        return Err(Error::invalid("write_cvsl", "image has non-finite values"));
    }
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(CVSL_MAGIC).map_err(io)?;
    w.write_u16::<LittleEndian>(CVSL_VERSION).map_err(io)?;
    w.write_u16::<LittleEndian>(record.label as u16).map_err(io)?;
    w.write_u32::<LittleEndian>(shape[1] as u32).map_err(io)?;
    w.write_u32::<LittleEndian>(shape[2] as u32).map_err(io)?;
    let re = record.image.re().data();
    let im = record.image.im().data();
    for i in 0..re.len() {
        w.write_f32::<LittleEndian>(re[i].to_f32()).map_err(io)?;
        w.write_f32::<LittleEndian>(im[i].to_f32()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_cvsl<P: Scalar>(path: &Path) -> Result<SliceRecord<P>> {
    let io = |e: std::io::Error| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::format(path, FormatError::Truncated)
        } else {
            Error::io(path, e)
        }
    };
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != CVSL_MAGIC {
        return Err(Error::format(path, FormatError::BadMagic));
    }
    let version = r.read_u16::<LittleEndian>().map_err(io)?;
    if version != CVSL_VERSION {
        return Err(Error::format(path, FormatError::UnsupportedVersion(version)));
    }
    let label = r.read_u16::<LittleEndian>().map_err(io)? as usize;
    let h = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let w = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    if h == 0 || w == 0 {
        return Err(Error::format(
            path,
            FormatError::Corrupt(format!("degenerate extent {h}x{w}")),
        ));
    }
    let count = h * w;
    let mut re = Vec::with_capacity(count);
    let mut im = Vec::with_capacity(count);
    for _ in 0..count {
        re.push(P::from_f32(r.read_f32::<LittleEndian>().map_err(io)?));
        im.push(P::from_f32(r.read_f32::<LittleEndian>().map_err(io)?));
    }
    // Anything left over means the header lied about the payload size.
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::format(
                path,
                FormatError::Corrupt("trailing bytes after payload".to_string()),
            ))
        }
        Err(e) => return Err(Error::io(path, e)),
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(SliceRecord {
        image: ComplexTensor::from_planes(vec![1, h, w], re, im)?,
        label,
        id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_record(h: usize, w: usize, label: usize, seed: u64) -> SliceRecord<f32> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let count = h * w;
        let re: Vec<f32> = (0..count).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect();
        let im: Vec<f32> = (0..count).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect();
        SliceRecord {
            image: ComplexTensor::from_planes(vec![1, h, w], re, im).unwrap(),
            label,
            id: String::new(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slice.cvsl");
        let rec = random_record(5, 7, 2, 31);
        write_cvsl(&path, &rec).unwrap();
        let back: SliceRecord<f32> = read_cvsl(&path).unwrap();
        assert_eq!(back.label, 2);
        assert_eq!(back.image.shape(), &[1, 5, 7]);
        let bits = |xs: &[f32]| xs.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.image.re().data()), bits(rec.image.re().data()));
        assert_eq!(bits(back.image.im().data()), bits(rec.image.im().data()));
        assert_eq!(back.id, "slice");
    }

    #[test]
    fn one_pixel_file_is_24_bytes() {
        // 4 magic + 2 version + 2 label + 4 height + 4 width + 8 payload.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.cvsl");
        let rec = random_record(1, 1, 3, 5);
        write_cvsl(&path, &rec).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 24);
    }

    #[test]
    fn bad_magic_is_distinct_from_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.cvsl");
        std::fs::write(&bad, b"XXXX\x01\x00\x00\x00").unwrap();
        match read_cvsl::<f32>(&bad) {
            Err(Error::Format { kind, .. }) => assert_eq!(kind, FormatError::BadMagic),
            other => panic!("expected bad magic, got {other:?}"),
        }

        let cut = dir.path().join("cut.cvsl");
        let rec = random_record(2, 2, 0, 9);
        write_cvsl(&cut, &rec).unwrap();
        let bytes = std::fs::read(&cut).unwrap();
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        match read_cvsl::<f32>(&cut) {
            Err(Error::Format { kind, .. }) => assert_eq!(kind, FormatError::Truncated),
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v9.cvsl");
        let rec = random_record(1, 1, 0, 2);
        write_cvsl(&path, &rec).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        match read_cvsl::<f32>(&path) {
            Err(Error::Format { kind, .. }) => {
                assert_eq!(kind, FormatError::UnsupportedVersion(9))
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
