use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

/// Writes `count u32`, then per tensor: name length u32, UTF-8 name, rank u32,
/// dims u64 each, values f64. All little-endian.
pub fn write_named_tensors<W: Write>(out: &mut W, tensors: &[(String, &Tensor)]) -> Result<()> {
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Parse(format!("truncated checkpoint while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(input: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(input: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(input, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

const MAX_ELEMENTS: u64 = 1 << 28;

pub fn read_named_tensors<R: Read>(input: &mut R) -> Result<Vec<(String, Tensor)>> {
    let count = read_u32(input, "tensor count")?;
    let mut out = Vec::with_capacity(count.min(1024) as usize);
    for _ in 0..count {
        let len = read_u32(input, "name length")? as usize;
        if len > 4096 {
            return Err(Error::Parse(format!("tensor name length {len} is implausible")));
        }
        let mut name = vec![0u8; len];
        read_exact(input, &mut name, "tensor name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Parse("tensor name is not UTF-8".into()))?;
        let rank = read_u32(input, "rank")?;
        if rank == 0 || rank > 8 {
            return Err(Error::Parse(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut total: u64 = 1;
        for _ in 0..rank {
            let d = read_u64(input, "dimension")?;
            total = total.saturating_mul(d);
            shape.push(d as usize);
        }
        if total == 0 || total > MAX_ELEMENTS {
            return Err(Error::Parse(format!("tensor {name} has {total} elements")));
        }
        let mut data = vec![0.0; total as usize];
        let mut b = [0u8; 8];
        for v in data.iter_mut() {
            read_exact(input, &mut b, "tensor data")?;
            *v = f64::from_le_bytes(b);
        }
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let a = Tensor::from_vec(&[2, 3], (0..6).map(|i| i as f64 * 0.5).collect()).unwrap();
        let b = Tensor::from_vec(&[4], vec![-1.0, f64::MIN_POSITIVE, 3.25, 1e300]).unwrap();
        let mut buf = Vec::new();
        write_named_tensors(&mut buf, &[("a".into(), &a), ("fc.bias".into(), &b)]).unwrap();
        let back = read_named_tensors(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "a");
        assert_eq!(back[0].1, a);
        assert_eq!(back[1].0, "fc.bias");
        assert_eq!(back[1].1, b);
        for cut in [1, 5, 20, buf.len() - 1] {
            assert!(matches!(read_named_tensors(&mut &buf[..cut]), Err(Error::Parse(_))));
        }
    }
}
