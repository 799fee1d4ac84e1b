//! `SBRD`: a flat little-endian container for spectral BRDF tables.
//!
//! ```text
//! "SBRD" | u32 version = 1 | u32 M | u32 n_theta_h | u32 n_theta_d | u32 n_phi_d
//!        | f32 lambda_min | f32 lambda_max | u32 name_len | name (UTF-8)
//!        | M * n_theta_h * n_theta_d * n_phi_d x f32
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};

use super::SpectralBrdfTable;
use crate::coords::WavelengthAxis;
use crate::error::{Error, Result};

pub const SBRD_MAGIC: [u8; 4] = *b"SBRD";
pub const SBRD_VERSION: u32 = 1;

pub fn write_sbrd_to(t: &SpectralBrdfTable, mut w: impl Write) -> Result<()> {
    if t.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("table {:?}", t.name)));
    }
    w.write_all(&SBRD_MAGIC)?;
    w.write_u32::<LittleEndian>(SBRD_VERSION)?;
    w.write_u32::<LittleEndian>(t.axis().count as u32)?;
    for d in t.dims() {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    w.write_f32::<LittleEndian>(t.axis().lambda_min as f32)?;
    w.write_f32::<LittleEndian>(t.axis().lambda_max as f32)?;
    w.write_u32::<LittleEndian>(t.name.len() as u32)?;
    w.write_all(t.name.as_bytes())?;
    let mut buf = vec![0u8; 4 * t.len()];
    LittleEndian::write_f32_into(t.data(), &mut buf);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn write_sbrd(t: &SpectralBrdfTable, path: impl AsRef<Path>) -> Result<()> {
    write_sbrd_to(t, BufWriter::new(File::create(path)?))
}

pub fn read_sbrd_from(mut r: impl Read) -> Result<SpectralBrdfTable> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != SBRD_MAGIC {
        return Err(Error::Magic { expected: SBRD_MAGIC, found: magic });
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != SBRD_VERSION {
        return Err(Error::Version(version));
    }
    let m = r.read_u32::<LittleEndian>()? as usize;
    let dims = [
        r.read_u32::<LittleEndian>()? as usize,
        r.read_u32::<LittleEndian>()? as usize,
        r.read_u32::<LittleEndian>()? as usize,
    ];
    let lambda_min = r.read_f32::<LittleEndian>()? as f64;
    let lambda_max = r.read_f32::<LittleEndian>()? as f64;
    let name_len = r.read_u32::<LittleEndian>()? as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|e| Error::Format(format!("table name: {e}")))?;
    let axis = WavelengthAxis::new(lambda_min, lambda_max, m)?;
    let n = m
        .checked_mul(dims.iter().product())
        .ok_or_else(|| Error::Format(format!("implausible dims {dims:?} x {m}")))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != 4 * n {
        return Err(Error::Length { expected: 4 * n, found: payload.len() });
    }
    let mut data = vec![0f32; n];
    LittleEndian::read_f32_into(&payload, &mut data);
    SpectralBrdfTable::new(name, axis, dims, data)
}

pub fn read_sbrd(path: impl AsRef<Path>) -> Result<SpectralBrdfTable> {
    read_sbrd_from(std::io::BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str) -> SpectralBrdfTable {
        let axis = WavelengthAxis::new(400.0, 1000.0, 3).unwrap();
        let data = (0..3 * 2 * 3 * 4).map(|i| i as f32 * 0.37).collect();
        SpectralBrdfTable::new(name, axis, [2, 3, 4], data).unwrap()
    }

    fn encode(t: &SpectralBrdfTable) -> Vec<u8> {
        let mut buf = Vec::new();
        write_sbrd_to(t, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_exact() {
        let t = small("felt");
        assert_eq!(read_sbrd_from(encode(&t).as_slice()).unwrap(), t);
    }

    #[test]
    fn name_lengths() {
        let bytes = encode(&small(""));
        assert_eq!(&bytes[32..36], &0u32.to_le_bytes());
        let bytes = encode(&small("a"));
        assert_eq!(&bytes[32..36], &1u32.to_le_bytes());
        assert_eq!(bytes[36], b'a');
        assert_eq!(read_sbrd_from(bytes.as_slice()).unwrap().name, "a");
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&small("x"));
        assert_eq!(&bytes[0..4], b"SBRD");
        assert_eq!(LittleEndian::read_u32(&bytes[4..8]), 1);
        assert_eq!(LittleEndian::read_u32(&bytes[8..12]), 3);
        assert_eq!(LittleEndian::read_u32(&bytes[12..16]), 2);
        assert_eq!(LittleEndian::read_f32(&bytes[24..28]), 400.0);
        assert_eq!(LittleEndian::read_f32(&bytes[28..32]), 1000.0);
        assert_eq!(bytes.len(), 37 + 4 * 72);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&small("x"));
        bytes[0] = b'X';
        assert!(matches!(read_sbrd_from(bytes.as_slice()), Err(Error::Magic { .. })));
        let mut bytes = encode(&small("x"));
        bytes[4] = 2;
        assert!(matches!(read_sbrd_from(bytes.as_slice()), Err(Error::Version(2))));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode(&small("x"));
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_sbrd_from(bytes.as_slice()), Err(Error::Length { .. })));
    }
}
