//! Dense binary container for dictionaries, candidate sets and signal batches.
//!
//! Layout: the five magic bytes `SPDK1`, the row count d and the column count
//! as 64-bit little-endian unsigned integers, then the entries column-major as
//! 64-bit little-endian floats.
//!
//! The optional ground-truth sidecar of a synthetic batch starts with `SPDT1`
//! and the signal count (u64 LE); every signal then stores its support size
//! (u32 LE), an outlier flag (u8), the support indices (u32 LE each) and the
//! signs (i8 each).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::signal::SignalTruth;

pub const MATRIX_MAGIC: &[u8; 5] = b"SPDK1";
pub const TRUTH_MAGIC: &[u8; 5] = b"SPDT1";

pub fn write_matrix<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let rows = read_u64(&mut r)? as usize;
    let cols = read_u64(&mut r)? as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
    let mut data = Vec::with_capacity(len);
    let mut b = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Ok(DMatrix::from_vec(rows, cols, data))
}

pub fn save_dictionary(path: impl AsRef<Path>, dico: &Dictionary) -> Result<()> {
    write_matrix(BufWriter::new(File::create(path)?), dico.matrix())
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Dictionary> {
    let m = read_matrix(BufReader::new(File::open(path)?))?;
    Dictionary::new(m)
}

pub fn save_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    write_matrix(BufWriter::new(File::create(path)?), m)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    read_matrix(BufReader::new(File::open(path)?))
}

pub fn write_truth<W: Write>(mut w: W, truth: &[SignalTruth]) -> Result<()> {
    w.write_all(TRUTH_MAGIC)?;
    w.write_all(&(truth.len() as u64).to_le_bytes())?;
    for t in truth {
        w.write_all(&(t.support.len() as u32).to_le_bytes())?;
        w.write_all(&[u8::from(t.is_outlier)])?;
        for &i in &t.support {
            w.write_all(&(i as u32).to_le_bytes())?;
        }
        for &s in &t.signs {
            w.write_all(&[s as u8])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a truth sidecar. Coefficient magnitudes and noise energies are not
/// stored and come back empty/zero.
pub fn read_truth<R: Read>(mut r: R) -> Result<Vec<SignalTruth>> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != TRUTH_MAGIC {
        return Err(Error::Format(format!("bad truth magic {magic:?}")));
    }
    let n = read_u64(&mut r)? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let s = read_u32(&mut r)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let mut support = Vec::with_capacity(s);
        for _ in 0..s {
            support.push(read_u32(&mut r)? as usize);
        }
        let mut raw = vec![0u8; s];
        r.read_exact(&mut raw)?;
        let signs = raw.into_iter().map(|b| b as i8).collect();
        out.push(SignalTruth {
            support,
            signs,
            coefficients: Vec::new(),
            is_outlier: flag[0] != 0,
            noise_norm_sq: 0.0,
        });
    }
    Ok(out)
}
