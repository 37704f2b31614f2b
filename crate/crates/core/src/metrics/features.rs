//! TAGF feature-file format: magic "TAGF", u32 version = 1, u32 N, u32 D,
//! then N·D little-endian f32 values (row-major).

use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const TAGF_MAGIC: &[u8; 4] = b"TAGF";
pub const TAGF_VERSION: u32 = 1;

pub fn write_tagf<T: Scalar>(path: &Path, features: &Matrix<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + features.data().len() * 4);
    buf.extend_from_slice(TAGF_MAGIC);
    buf.extend_from_slice(&TAGF_VERSION.to_le_bytes());
    buf.extend_from_slice(&(features.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(features.cols() as u32).to_le_bytes());
    for v in features.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| CoreError::io(path, e))
}

pub fn read_tagf<T: Scalar>(path: &Path) -> Result<Matrix<T>> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    if bytes.len() < 16 || &bytes[0..4] != TAGF_MAGIC {
        return Err(CoreError::Format(format!(
            "{}: missing TAGF magic",
            path.display()
        )));
    }
    let word = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = word(4);
    if version != TAGF_VERSION {
        return Err(CoreError::Format(format!(
            "{}: unsupported TAGF version {version}",
            path.display()
        )));
    }
    let n = word(8) as usize;
    let d = word(12) as usize;
    let expected = 16 + n * d * 4;
    if bytes.len() != expected {
        return Err(CoreError::Format(format!(
            "{}: expected {expected} bytes for {n}×{d} features, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n * d {
        let off = 16 + i * 4;
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        data.push(T::from_f64(f64::from(v)));
    }
    Ok(Matrix::from_vec(n, d, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("topostain_tagf");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let path = tmp("bad.tagf");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(
            read_tagf::<f64>(&path),
            Err(CoreError::Format(_))
        ));

        let good = tmp("trunc.tagf");
        write_tagf(&good, &Matrix::from_rows(&[vec![1.0f64, 2.0]])).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.pop();
        std::fs::write(&good, bytes).unwrap();
        assert!(read_tagf::<f64>(&good).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_preserves_f32_values(
            rows in 1usize..6,
            cols in 1usize..5,
            seed in 0u64..1000,
        ) {
            let mut rng = crate::rng::Rng::new(seed);
            let m = Matrix::from_fn(rows, cols, |_, _| rng.normal() as f32 as f64);
            let path = tmp(&format!("rt_{seed}_{rows}_{cols}.tagf"));
            write_tagf(&path, &m).unwrap();
            let back: Matrix<f64> = read_tagf(&path).unwrap();
            prop_assert_eq!(back.shape(), m.shape());
            for (a, b) in back.data().iter().zip(m.data()) {
                prop_assert_eq!(a, b);
            }
        }
    }
}
