//! Flat binary tensor format: `u32` rank, `u32` extents, then little-endian `f32` data.

use std::io::{Read, Write};

use super::dense::DenseTensor;
use crate::error::{Error, Result};

impl DenseTensor {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let rank = u32::try_from(self.shape().len()).map_err(|_| Error::Io("rank exceeds u32".into()))?;
        w.write_all(&rank.to_le_bytes())?;
        for &e in self.shape() {
            let e = u32::try_from(e).map_err(|_| Error::Io(format!("extent {e} exceeds u32")))?;
            w.write_all(&e.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.len() * 4);
        for v in self.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let rank = u32::from_le_bytes(word) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut word)?;
            shape.push(u32::from_le_bytes(word) as usize);
        }
        let len = super::dense::check_shape(&shape)?;
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        DenseTensor::new(shape, data)
    }
}
