//! Length-prefixed big-endian array files shared with the caller.
//!
//! Layout: u32 element count, then the elements (u32 for table ids, i32 for
//! symbol indices).  Trailing bytes beyond the declared count are rejected.

use std::io;
use std::path::Path;

fn read_prefixed(path: &Path, width: usize) -> io::Result<Vec<[u8; 4]>> {
    let data = std::fs::read(path)?;
    if data.len() < 4 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{}: missing length prefix", path.display()),
        ));
    }
    let n = u32::from_be_bytes(data[..4].try_into().unwrap()) as usize;
    if data.len() != 4 + width * n {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!(
                "{}: declared {} values, file holds {} bytes of payload",
                path.display(),
                n,
                data.len() - 4
            ),
        ));
    }
    Ok(data[4..]
        .chunks_exact(width)
        .map(|c| c.try_into().unwrap())
        .collect())
}

pub fn read_u32_array(path: &Path) -> io::Result<Vec<u32>> {
    Ok(read_prefixed(path, 4)?
        .into_iter()
        .map(u32::from_be_bytes)
        .collect())
}

pub fn read_i32_array(path: &Path) -> io::Result<Vec<i32>> {
    Ok(read_prefixed(path, 4)?
        .into_iter()
        .map(i32::from_be_bytes)
        .collect())
}

pub fn write_i32_array(path: &Path, values: &[i32]) -> io::Result<()> {
    let mut out = Vec::with_capacity(4 + 4 * values.len());
    out.extend((values.len() as u32).to_be_bytes());
    for v in values {
        out.extend(v.to_be_bytes());
    }
    std::fs::write(path, out)
}
