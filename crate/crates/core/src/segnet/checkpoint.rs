use std::io::{Read, Write};

use super::ParameterSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGNT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialises `params` in name order. Values are stored as little-endian
/// `f64`, so a round trip is bit-exact.
pub fn write_checkpoint<W: Write>(params: &ParameterSet, mut out: W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let count = u32::try_from(params.len()).map_err(|_| Error::invalid("too many parameters"))?;
    out.write_all(&count.to_le_bytes())?;
    for (name, t) in params.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::invalid(format!("parameter name `{name}` too long")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::invalid("tensor rank above 255"))?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&[rank])?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::invalid("dimension above u32::MAX"))?;
            out.write_all(&d.to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(self.pos, format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParameterSet> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, not a checkpoint"));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = c.u32("entry count")?;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let at = c.pos;
        let len = u16::from_le_bytes(c.take(2, "name length")?.try_into().unwrap());
        let name = std::str::from_utf8(c.take(len as usize, "name")?)
            .map_err(|_| Error::format(at + 2, "name is not UTF-8"))?
            .to_owned();
        let rank = c.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dimension")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| Error::format(c.pos, "tensor larger than the file"))?;
        let raw = c.take(numel * 8, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if params.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::format(at, format!("duplicate parameter `{name}`")));
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::format(c.pos, "trailing bytes after last entry"));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segnet::{init_params, NetConfig};
    use proptest::prelude::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = init_params(&NetConfig::default()).unwrap();
        p.insert("odd", Tensor::new(vec![3], vec![-0.0, f64::MIN_POSITIVE, 1e300]).unwrap());
        p.insert("scalar", Tensor::scalar(std::f64::consts::PI));
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let q = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(p.len(), q.len());
        for ((na, a), (nb, b)) in p.iter().zip(q.iter()) {
            assert_eq!(na, nb);
            assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn header_layout() {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"SGNT");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..14], &1u16.to_le_bytes());
        assert_eq!(buf[14], b'w');
        assert_eq!(buf[15], 1);
        assert_eq!(&buf[16..20], &2u32.to_le_bytes());
        assert_eq!(buf.len(), 20 + 16);
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();

        let err = read_checkpoint(&buf[..buf.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 20, .. }), "{err}");
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Format { offset: 0, .. })));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Format { offset: 4, .. })));
        let mut long = buf.clone();
        long.push(0);
        assert!(read_checkpoint(long.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = read_checkpoint(bytes.as_slice());
        }

        #[test]
        fn arbitrary_sets_round_trip(vals in prop::collection::vec(any::<f64>(), 1..20)) {
            let mut p = ParameterSet::new();
            p.insert("a.b", Tensor::from_vec(vals.clone()));
            let mut buf = Vec::new();
            write_checkpoint(&p, &mut buf).unwrap();
            let q = read_checkpoint(buf.as_slice()).unwrap();
            let got: Vec<u64> = q.get("a.b").unwrap().data().iter().map(|v| v.to_bits()).collect();
            let want: Vec<u64> = vals.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, want);
        }
    }
}
