//! `TNSR` v1 tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TNSR" | u32 version = 1 | u32 count
//! count x ( u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | f32 payload[prod(dims)] )
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u32 = 1;

/// Encodes named tensors; values are narrowed to `f32`.
pub fn write<T: Real, W: Write>(mut w: W, tensors: &[(String, Tensor<T>)]) -> Result<()> {
    let io = |e| Error::io("<tnsr stream>", e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    let count = u32::try_from(tensors.len()).map_err(|_| Error::Format("too many tensors".into()))?;
    w.write_all(&count.to_le_bytes()).map_err(io)?;
    for (name, t) in tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("tensor name `{name}` too long")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Format(format!("rank of `{name}` too large")))?;
        w.write_all(&len.to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&[rank]).map_err(io)?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension of `{name}` too large")))?;
            w.write_all(&d.to_le_bytes()).map_err(io)?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 4);
        for v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated TNSR stream while reading {what}")))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Decodes every tensor in file order.
pub fn read<T: Real, R: Read>(mut r: R) -> Result<Vec<(String, Tensor<T>)>> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format("not a TNSR file (bad magic)".into()));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let count = read_u32(&mut r, "count")?;
    let mut out = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let mut len = [0u8; 2];
        read_exact(&mut r, &mut len, "name length")?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact(&mut r, &mut name, "name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank, "rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r, "dims")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("`{name}` is too large")))?;
        let mut payload = vec![0u8; numel * 4];
        read_exact(&mut r, &mut payload, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| super::r::<T>(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Writes to a sibling temporary file and renames it over `path`, so a failed
/// write leaves any previous file intact.
pub fn save<T: Real>(path: impl AsRef<Path>, tensors: &[(String, Tensor<T>)]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(f);
    write(&mut w, tensors)?;
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<T>)>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(vec![1, 2], vec![1.0f32, -2.5]).unwrap();
        let mut buf = Vec::new();
        write(&mut buf, &[("ab".to_string(), t)]).unwrap();
        let mut expect = b"TNSR".to_vec();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u16.to_le_bytes());
        expect.extend_from_slice(b"ab");
        expect.push(2);
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(buf, expect);
    }

    #[test]
    fn version_and_magic_checked() {
        let mut buf = b"TNSR".to_vec();
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(read::<f32, _>(&buf[..]), Err(Error::Version { found: 2, .. })));
        assert!(matches!(read::<f32, _>(&b"NOPE\0\0\0\0"[..]), Err(Error::Format(_))));
        assert!(matches!(read::<f32, _>(&b"TNSR\x01\0\0\0\x01\0\0\0"[..]), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn roundtrip(dims in prop::collection::vec(1usize..5, 0..4), seed in any::<u32>(), name in "[a-z.]{0,12}") {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed) as f32) * 1e-6).collect();
            let t = Tensor::new(dims, data).unwrap();
            let mut buf = Vec::new();
            write(&mut buf, &[(name.clone(), t.clone())]).unwrap();
            let back = read::<f32, _>(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0].0, &name);
            prop_assert_eq!(&back[0].1, &t);
        }
    }
}
