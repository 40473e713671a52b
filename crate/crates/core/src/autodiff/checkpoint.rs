//! Binary tensor checkpoints.
//!
//! Layout: the ASCII header `iatensor v1\n`, then one record per tensor until
//! end of file. A record is the name length (`u32`), the UTF-8 name, the rank
//! (`u32`), one `u64` per dimension and the values as `f64`; all integers and
//! floats little-endian.

use std::io::{Read, Write};

use super::{Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8] = b"iatensor v1\n";

pub fn write_tensors<'a>(
    out: &mut impl Write,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<(), TensorError> {
    out.write_all(CHECKPOINT_MAGIC)?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors(input: &mut impl Read) -> Result<Vec<(String, Tensor)>, TensorError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(TensorError::CorruptCheckpoint("bad header".into()));
    }
    let mut out = Vec::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| TensorError::CorruptCheckpoint("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = cur.u32()? as usize;
        if rank > 8 {
            return Err(TensorError::CorruptCheckpoint(format!("rank {rank} for {name}")));
        }
        let shape = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= (bytes.len() - cur.pos) / 8)
            .ok_or_else(|| TensorError::CorruptCheckpoint(format!("payload of {name} truncated")))?;
        let data = cur
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TensorError::CorruptCheckpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, TensorError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
