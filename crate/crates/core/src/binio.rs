//! Little-endian primitives shared by the binary file formats.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub(crate) fn expect_version<R: Read>(r: &mut R, version: u32) -> Result<()> {
    let found = read_u32(r)?;
    if found != version {
        return Err(Error::format(format!("unsupported version {found}, expected {version}")));
    }
    Ok(())
}

/// Fails with a format error if any bytes remain.
pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::format("trailing bytes after payload")),
    }
}

macro_rules! rw_prim {
    ($read:ident, $write:ident, $t:ty) => {
        pub(crate) fn $read<R: Read>(r: &mut R) -> io::Result<$t> {
            let mut buf = [0u8; std::mem::size_of::<$t>()];
            r.read_exact(&mut buf)?;
            Ok(<$t>::from_le_bytes(buf))
        }

        pub(crate) fn $write<W: Write>(w: &mut W, v: $t) -> io::Result<()> {
            w.write_all(&v.to_le_bytes())
        }
    };
}

rw_prim!(read_u32, write_u32, u32);
rw_prim!(read_u64, write_u64, u64);
rw_prim!(read_i32, write_i32, i32);
rw_prim!(read_i64, write_i64, i64);
rw_prim!(read_f32, write_f32, f32);
rw_prim!(read_f64, write_f64, f64);

pub(crate) fn read_f32_vec<R: Read>(r: &mut R, len: usize) -> io::Result<Vec<f32>> {
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn write_f32_slice<W: Write>(w: &mut W, values: impl IntoIterator<Item = f32>) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Converts a header count to `usize`, rejecting values that cannot be
/// allocated on this platform.
pub(crate) fn to_usize(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::format(format!("{what} {v} does not fit in memory")))
}
