//! Flat binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic   4 bytes  "MMBC"
//! version u32      currently 1
//! count   u64      number of entries
//! entry   repeated count times:
//!   name_len u32
//!   name     name_len bytes, UTF-8
//!   rows     u64
//!   cols     u64
//!   values   rows*cols f64, row-major
//! ```
//!
//! Only parameter values are stored; gradients and optimizer state are not
//! part of a checkpoint. Entry order is the registration order, which makes
//! the bytes deterministic for a given model.

use std::io::{Read, Write};
use std::path::Path;

use crate::diffcore::{Matrix, ParamStore};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MMBC";
const VERSION: u32 = 1;

pub fn write_params<W: Write>(store: &ParamStore, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(store.len() as u64).to_le_bytes())?;
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&(p.value.rows() as u64).to_le_bytes())?;
        out.write_all(&(p.value.cols() as u64).to_le_bytes())?;
        for v in p.value.values() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_params(store: &ParamStore, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_params(store, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn read_params<R: Read>(mut input: R) -> Result<ParamStore> {
    let bad = |msg: String| Error::Parse { line: 0, msg };
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|_| bad("truncated checkpoint magic".to_string()))?;
    if &magic != MAGIC {
        return Err(bad(format!("bad checkpoint magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let mut u64buf = [0u8; 8];
    input.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf);

    let mut store = ParamStore::new();
    for _ in 0..count {
        input.read_exact(&mut u32buf)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("non-UTF8 entry name".to_string()))?;
        input.read_exact(&mut u64buf)?;
        let rows = u64::from_le_bytes(u64buf) as usize;
        input.read_exact(&mut u64buf)?;
        let cols = u64::from_le_bytes(u64buf) as usize;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            input.read_exact(&mut u64buf)?;
            values.push(f64::from_le_bytes(u64buf));
        }
        let matrix = Matrix::from_vec(rows, cols, values)
            .map_err(|e| bad(format!("entry {name}: {e}")))?;
        store.register(name, matrix)?;
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after last entry".to_string()));
    }
    Ok(store)
}

pub fn load_params(path: &Path) -> Result<ParamStore> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_params(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderSpec, MultimodalModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_model() -> MultimodalModel {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = MultimodalModel::new(
            &[
                ("audio".to_string(), EncoderSpec::mlp(4, &[6], 3)),
                ("video".to_string(), EncoderSpec::identity(3)),
            ],
            4,
            8,
            &mut rng,
        )
        .unwrap();
        model.add_classifier(1, &mut rng, None).unwrap();
        model
    }

    #[test]
    fn round_trip_preserves_names_shapes_values() {
        let model = sample_model();
        let mut buf = Vec::new();
        write_params(model.store(), &mut buf).unwrap();
        let loaded = read_params(buf.as_slice()).unwrap();
        assert_eq!(loaded.len(), model.store().len());
        for ((_, a), (_, b)) in model.store().iter().zip(loaded.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
            assert!(b.grad.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn round_trip_bytes_are_deterministic() {
        let model = sample_model();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_params(model.store(), &mut a).unwrap();
        write_params(model.store(), &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        assert!(read_params(&b"XXXX"[..]).is_err());
        let mut buf = Vec::new();
        buf.extend_from_slice(b"MMBC");
        buf.extend_from_slice(&9u32.to_le_bytes());
        buf.extend_from_slice(&0u64.to_le_bytes());
        let err = read_params(buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn model_reconstruction_from_checkpoint() {
        let model = sample_model();
        let mut buf = Vec::new();
        write_params(model.store(), &mut buf).unwrap();
        let loaded = read_params(buf.as_slice()).unwrap();
        let rebuilt = MultimodalModel::from_store(loaded).unwrap();
        assert_eq!(rebuilt.num_classes(), 4);
        assert_eq!(rebuilt.classifier_hidden(), 8);
        assert_eq!(rebuilt.num_modalities(), 2);
        assert_eq!(rebuilt.modality(0).name(), "audio");
        assert_eq!(rebuilt.modality(0).num_classifiers(), 1);
        assert_eq!(rebuilt.modality(1).num_classifiers(), 2);
        assert_eq!(rebuilt.modality(1).encoder_spec(), &EncoderSpec::identity(3));

        // identical predictions on a fixed batch
        let x = crate::diffcore::Matrix::from_fn(2, 4, |i, j| (i + j) as f64 * 0.1);
        let mut t1 = crate::diffcore::Tape::new();
        let mut t2 = crate::diffcore::Tape::new();
        let f1 = model.forward_modality(&mut t1, 0, x.clone()).unwrap();
        let f2 = rebuilt.forward_modality(&mut t2, 0, x).unwrap();
        assert_eq!(t1.value(f1.stack[0]), t2.value(f2.stack[0]));
    }
}
