//! Tensor wire format used by checkpoints: rank and extents as little-endian
//! u64, followed by the element buffer as little-endian f32.

use std::io::{self, Read, Write};

const MAX_RANK: u64 = 16;

pub fn write_tensor(w: &mut impl Write, shape: &[usize], data: &[f32]) -> io::Result<()> {
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("shape {shape:?} does not match {} elements", data.len()),
        ));
    }
    w.write_all(&(shape.len() as u64).to_le_bytes())?;
    for &e in shape {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(data.len() * 4);
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_tensor(r: &mut impl Read) -> io::Result<(Vec<usize>, Vec<f32>)> {
    let rank = read_u64(r)?;
    if rank > MAX_RANK {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("rank {rank} exceeds limit {MAX_RANK}"),
        ));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut numel = 1u64;
    for _ in 0..rank {
        let e = read_u64(r)?;
        numel = numel.saturating_mul(e.max(1));
        if numel > (1 << 33) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "tensor too large",
            ));
        }
        shape.push(e as usize);
    }
    let count: usize = shape.iter().product();
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((shape, data))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
