//! Flat binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "GBCK" | version u32 | parameter count u32
//! repeated: name length u16 | name bytes (UTF-8) | rank u8 | extents u32 × rank | values f32 × product(extents)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamSet;

pub const MAGIC: &[u8; 4] = b"GBCK";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &ParamSet<f32>, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let count = u32::try_from(params.len())
        .map_err(|_| Error::Checkpoint("too many parameters".into()))?;
    out.write_all(&count.to_le_bytes())?;
    for p in params.iter() {
        let name = p.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("parameter name too long: {}", p.name)))?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(name)?;
        let rank = u8::try_from(p.shape.len())
            .map_err(|_| Error::Checkpoint(format!("rank too large for {}", p.name)))?;
        out.write_all(&[rank])?;
        for &e in &p.shape {
            let e = u32::try_from(e)
                .map_err(|_| Error::Checkpoint(format!("extent too large in {}", p.name)))?;
            out.write_all(&e.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.value.len() * 4);
        for v in &p.value {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(input: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input
        .read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated while reading {what}: {e}")))?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParamSet<f32>> {
    let magic: [u8; 4] = read_exact(&mut input, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(read_exact(&mut input, "version")?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_exact(&mut input, "parameter count")?);
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(read_exact(&mut input, "name length")?) as usize;
        let mut name = vec![0u8; len];
        input
            .read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let [rank] = read_exact::<_, 1>(&mut input, "rank")?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(read_exact(&mut input, "extent")?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        input
            .read_exact(&mut raw)
            .map_err(|e| Error::Checkpoint(format!("truncated values of `{name}`: {e}")))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.add(&name, shape, values)?;
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamSet<f32>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let mut ps = ParamSet::<f32>::new();
        ps.add("b", vec![2], vec![1.0, -0.5]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&ps, &mut buf).unwrap();
        let mut want = Vec::new();
        want.extend_from_slice(b"GBCK");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1u16.to_le_bytes());
        want.push(b'b');
        want.push(1);
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-0.5f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        assert!(read_checkpoint(&b"GBCX\x01\0\0\0\0\0\0\0"[..]).is_err());
        assert!(read_checkpoint(&b"GBCK\x02\0\0\0\0\0\0\0"[..]).is_err());
        assert!(read_checkpoint(&b"GBCK\x01\0\0\0\x01\0\0\0\x03\0ab"[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            entries in prop::collection::vec(
                (prop::collection::vec(1usize..4, 0..4), any::<u32>()),
                0..5,
            )
        ) {
            let mut ps = ParamSet::<f32>::new();
            for (i, (shape, seed)) in entries.iter().enumerate() {
                let n: usize = shape.iter().product();
                let values = (0..n)
                    .map(|k| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(k as u32)))
                    .collect();
                ps.add(&format!("p{i}.weight"), shape.clone(), values).unwrap();
            }
            let mut buf = Vec::new();
            write_checkpoint(&ps, &mut buf).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), ps.len());
            for (a, b) in ps.iter().zip(back.iter()) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(&a.shape, &b.shape);
                let abits: Vec<u32> = a.value.iter().map(|v| v.to_bits()).collect();
                let bbits: Vec<u32> = b.value.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(abits, bbits);
            }
            let mut again = Vec::new();
            write_checkpoint(&back, &mut again).unwrap();
            prop_assert_eq!(buf, again);
        }
    }
}
