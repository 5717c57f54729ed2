//! Parameter checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "MPARSECK"
//! version u32      currently 1
//! count   u32      number of records
//! record* name_len u32, name UTF-8, rank u32, dims u64 × rank, values f64 × Π dims
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tensor};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"MPARSECK";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_checkpoint<S: Scalar, W: Write>(store: &ParamStore<S>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format {
        path: "<checkpoint>".into(),
        message: msg.into(),
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<S: Scalar, R: Read>(mut r: R) -> Result<ParamStore<S>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a parameter checkpoint"));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("parameter name is not UTF-8"))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| read_u64(&mut r).map(|bits| S::lit(f64::from_bits(bits))))
            .collect::<Result<Vec<_>>>()?;
        store.add(name, Tensor::new(shape, data)?)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after last record"));
    }
    Ok(store)
}

pub fn save_checkpoint<S: Scalar>(store: &ParamStore<S>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(store, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<ParamStore<S>> {
    let bytes = fs::read(path)?;
    read_checkpoint(bytes.as_slice()).map_err(|e| match e {
        Error::Format { message, .. } => Error::Format {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Copies values from `loaded` into `target`, requiring identical names and shapes.
pub fn restore_into<S: Scalar>(target: &mut ParamStore<S>, loaded: &ParamStore<S>) -> Result<()> {
    if target.len() != loaded.len() {
        return Err(bad(format!(
            "checkpoint holds {} parameters, model expects {}",
            loaded.len(),
            target.len()
        )));
    }
    for (t, l) in target.iter_mut().zip(loaded.iter()) {
        if t.name != l.name || t.value.shape() != l.value.shape() {
            return Err(bad(format!(
                "parameter `{}` {:?} does not match `{}` {:?}",
                l.name,
                l.value.shape(),
                t.name,
                t.value.shape()
            )));
        }
        t.value = l.value.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn byte_identical_round_trip(
            shapes in proptest::collection::vec(proptest::collection::vec(1usize..4, 1..3), 1..5),
            seed in any::<u64>(),
        ) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::<f64>::new();
            for (i, s) in shapes.iter().enumerate() {
                store.add(format!("p{i}.w"), Tensor::uniform(s, -3.0, 3.0, &mut rng)).unwrap();
            }
            let mut a = Vec::new();
            write_checkpoint(&store, &mut a).unwrap();
            let back: ParamStore<f64> = read_checkpoint(a.as_slice()).unwrap();
            prop_assert_eq!(&back, &store);
            let mut b = Vec::new();
            write_checkpoint(&back, &mut b).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_checkpoint::<f64, _>(&b"nope"[..]).is_err());
        let mut buf = Vec::new();
        write_checkpoint(&ParamStore::<f64>::new(), &mut buf).unwrap();
        buf.push(0);
        assert!(read_checkpoint::<f64, _>(buf.as_slice()).is_err());
    }
}
