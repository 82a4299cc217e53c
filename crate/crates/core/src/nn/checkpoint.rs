//! Binary checkpoint format for named parameter sets.
//!
//! Layout: magic `MMCK`, u32 LE version, then per parameter: u16 LE name
//! length, UTF-8 name, u8 rank, u32 LE dims, f32 LE payload. Parameters are
//! written in collection order and loaded by name into an existing model.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::NamedParams;
use crate::error::{MmcError, Result};
use crate::tensor::Elem;

const MAGIC: &[u8; 4] = b"MMCK";
const VERSION: u32 = 1;

pub fn save_params<E: Elem>(path: &Path, params: &NamedParams<E>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, t) in params {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(MmcError::Format(format!("parameter name too long: {name}")));
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        let shape = t.shape();
        if shape.len() > u8::MAX as usize {
            return Err(MmcError::Format(format!("rank too large for {name}")));
        }
        w.write_all(&[shape.len() as u8])?;
        for &d in &shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data().iter() {
            w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint into `params` in place. Every stored parameter must
/// match an entry by name and shape; counts must agree.
pub fn load_params<E: Elem>(path: &Path, params: &NamedParams<E>) -> Result<()> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(MmcError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(MmcError::Format(format!("unsupported version {version}")));
    }
    let mut loaded = 0usize;
    loop {
        let mut len_buf = [0u8; 2];
        match r.read(&mut len_buf[..1])? {
            0 => break, // clean end of file
            _ => read_exact(&mut r, &mut len_buf[1..], "name length")?,
        }
        let name_len = u16::from_le_bytes(len_buf) as usize;
        let mut name_buf = vec![0u8; name_len];
        read_exact(&mut r, &mut name_buf, "name")?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| MmcError::Format("parameter name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank, "rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut b = [0u8; 4];
            read_exact(&mut r, &mut b, "payload")?;
            data.push(E::from_f64(f32::from_le_bytes(b) as f64));
        }
        let target = params
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| MmcError::Format(format!("checkpoint names unknown parameter {name}")))?;
        if target.1.shape() != shape {
            return Err(MmcError::Format(format!(
                "shape of {name} is {:?} in checkpoint but {:?} in model",
                shape,
                target.1.shape()
            )));
        }
        target.1.set_data(&data)?;
        loaded += 1;
    }
    if loaded != params.len() {
        return Err(MmcError::Format(format!(
            "checkpoint holds {loaded} parameters, model has {}",
            params.len()
        )));
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| MmcError::Format(format!("truncated while reading {what}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, "u32 field")?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn sample_params() -> NamedParams<f32> {
        vec![
            (
                "enc.patch.w".into(),
                Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.25, -0.5])
                    .unwrap()
                    .with_grad(),
            ),
            (
                "head.b".into(),
                Tensor::from_vec(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap().with_grad(),
            ),
        ]
    }

    #[test]
    fn save_load_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.mmck");
        let src = sample_params();
        save_params(&path, &src).unwrap();

        let dst = sample_params();
        for (_, t) in &dst {
            t.set_data(&vec![9.0; t.numel()]).unwrap();
        }
        load_params(&path, &dst).unwrap();
        for ((_, a), (_, b)) in src.iter().zip(&dst) {
            assert_eq!(a.to_vec(), b.to_vec());
        }
    }

    #[test]
    fn header_starts_with_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mmck");
        save_params(&path, &sample_params()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"MMCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mmck");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        let err = load_params(&path, &sample_params()).unwrap_err();
        assert!(matches!(err, MmcError::Format(_)), "{err}");
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.mmck");
        save_params(&path, &sample_params()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_params(&path, &sample_params()).unwrap_err();
        assert!(matches!(err, MmcError::Format(_)), "{err}");
    }

    #[test]
    fn name_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mmck");
        save_params(&path, &sample_params()).unwrap();
        let other: NamedParams<f32> = vec![(
            "enc.patch.w".into(),
            Tensor::zeros(&[2, 3]).with_grad(),
        )];
        // first record loads, second names a parameter `other` lacks
        let err = load_params(&path, &other).unwrap_err();
        assert!(matches!(err, MmcError::Format(_)), "{err}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mmck");
        save_params(&path, &sample_params()).unwrap();
        let other: NamedParams<f32> = vec![
            ("enc.patch.w".into(), Tensor::zeros(&[3, 2]).with_grad()),
            ("head.b".into(), Tensor::zeros(&[4]).with_grad()),
        ];
        let err = load_params(&path, &other).unwrap_err();
        assert!(matches!(err, MmcError::Format(_)), "{err}");
    }
}
