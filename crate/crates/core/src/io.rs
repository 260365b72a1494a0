//! "UFD1" binary sequence format.
//!
//! Layout: 4 magic bytes `55 46 44 31`, three little-endian u32 dims
//! (N_z, N_x, N_t), then N_z*N_x*N_t complex samples as interleaved
//! little-endian f32 pairs (re, im) in z-fastest, x, t order. That sample
//! order equals the Casorati buffer order, so payloads stream straight
//! through. Values are stored as f32 on disk and widened to f64 in memory.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::seq::{CasoratiMatrix, SequenceDims};

pub const MAGIC: [u8; 4] = *b"UFD1";

pub fn save_sequence<P: AsRef<Path>>(path: P, m: &CasoratiMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_sequence(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_sequence<P: AsRef<Path>>(path: P) -> Result<CasoratiMatrix> {
    let mut r = BufReader::new(File::open(path)?);
    read_sequence(&mut r)
}

pub fn write_sequence<W: Write>(w: &mut W, m: &CasoratiMatrix) -> Result<()> {
    let dims = m.dims();
    w.write_all(&MAGIC)?;
    for d in [dims.n_z(), dims.n_x(), dims.n_t()] {
        let d = u32::try_from(d).map_err(|_| Error::DimOverflow)?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in m.data().as_slice() {
        w.write_all(&(v.re as f32).to_le_bytes())?;
        w.write_all(&(v.im as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_sequence<R: Read>(r: &mut R) -> Result<CasoratiMatrix> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Truncated { expected: 0, found: 0 })?;
    if magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut dim = [0u8; 4];
    let mut dims = [0u32; 3];
    for d in dims.iter_mut() {
        r.read_exact(&mut dim)
            .map_err(|_| Error::Truncated { expected: 0, found: 0 })?;
        *d = u32::from_le_bytes(dim);
    }
    let [n_z, n_x, n_t] = dims;
    let total = (n_z as u64)
        .checked_mul(n_x as u64)
        .and_then(|p| p.checked_mul(n_t as u64))
        .ok_or(Error::DimOverflow)?;
    if total > (isize::MAX as u64) / 16 {
        return Err(Error::DimOverflow);
    }
    let dims = SequenceDims::new(n_z as usize, n_x as usize, n_t as usize)?;

    let mut payload = vec![0u8; total as usize * 8];
    let mut filled = 0usize;
    while filled < payload.len() {
        let n = r.read(&mut payload[filled..])?;
        if n == 0 {
            return Err(Error::Truncated {
                expected: total,
                found: (filled / 8) as u64,
            });
        }
        filled += n;
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::TrailingData);
    }

    let mut data = Vec::with_capacity(total as usize);
    for chunk in payload.chunks_exact(8) {
        let re = f32::from_le_bytes(chunk[0..4].try_into().unwrap());
        let im = f32::from_le_bytes(chunk[4..8].try_into().unwrap());
        data.push(Complex64::new(re as f64, im as f64));
    }
    CasoratiMatrix::new(DMatrix::from_vec(dims.n_pixels(), dims.n_t(), data), dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::CasoratiMatrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_f32_sequence(seed: u64, n_z: usize, n_x: usize, n_t: usize) -> CasoratiMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = SequenceDims::new(n_z, n_x, n_t).unwrap();
        CasoratiMatrix::from_fn(dims, |_, _, _| {
            // draw values already representable in f32 so the round trip is exact
            Complex64::new(
                rng.random::<f32>() as f64 - 0.5,
                rng.random::<f32>() as f64 - 0.5,
            )
        })
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = random_f32_sequence(5, 4, 3, 2);
        let mut buf = Vec::new();
        write_sequence(&mut buf, &m).unwrap();
        let back = read_sequence(&mut buf.as_slice()).unwrap();
        assert_eq!(back.dims(), m.dims());
        for (a, b) in back.data().iter().zip(m.data().iter()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn negative_zero_survives_round_trip() {
        let dims = SequenceDims::new(1, 1, 2).unwrap();
        let m = CasoratiMatrix::new(
            DMatrix::from_column_slice(
                1,
                2,
                &[Complex64::new(-0.0, 0.0), Complex64::new(0.0, -0.0)],
            ),
            dims,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_sequence(&mut buf, &m).unwrap();
        let back = read_sequence(&mut buf.as_slice()).unwrap();
        assert_eq!(back.data()[(0, 0)].re.to_bits(), (-0.0f64).to_bits());
        assert_eq!(back.data()[(0, 1)].im.to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let m = random_f32_sequence(1, 2, 2, 1);
        let mut buf = Vec::new();
        write_sequence(&mut buf, &m).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            read_sequence(&mut buf.as_slice()),
            Err(Error::BadMagic)
        ));
    }

    #[test]
    fn truncated_payload_is_reported_with_counts() {
        let m = random_f32_sequence(2, 2, 2, 2);
        let mut buf = Vec::new();
        write_sequence(&mut buf, &m).unwrap();
        buf.truncate(16 + 7 * 8); // 7 of the declared 8 complex values
        match read_sequence(&mut buf.as_slice()) {
            Err(Error::Truncated { expected, found }) => {
                assert_eq!(expected, 8);
                assert_eq!(found, 7);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let m = random_f32_sequence(3, 2, 2, 1);
        let mut buf = Vec::new();
        write_sequence(&mut buf, &m).unwrap();
        buf.push(0);
        assert!(matches!(
            read_sequence(&mut buf.as_slice()),
            Err(Error::TrailingData)
        ));
    }

    #[test]
    fn dim_overflow_is_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        for d in [u32::MAX, u32::MAX, u32::MAX] {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        assert!(matches!(
            read_sequence(&mut buf.as_slice()),
            Err(Error::DimOverflow)
        ));
    }

    #[test]
    fn files_round_trip_via_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.ufd");
        let m = random_f32_sequence(9, 4, 3, 2);
        save_sequence(&path, &m).unwrap();
        let back = load_sequence(&path).unwrap();
        assert_eq!(back, m);
    }
}
