use std::path::Path;

use super::{push_f32s, push_u32, read_file, write_file, ByteReader};
use crate::error::Result;
use crate::tensor::Tensor;

pub const MEL_MAGIC: &[u8; 4] = b"MELF";

/// `MELF`, u32 F, u32 T, then F·T little-endian floats, mel-bin major.
pub fn encode_mel(values: &Tensor) -> Result<Vec<u8>> {
    let (f, t) = values.dims2()?;
    let mut out = Vec::with_capacity(12 + 4 * values.len());
    out.extend_from_slice(MEL_MAGIC);
    push_u32(&mut out, f)?;
    push_u32(&mut out, t)?;
    push_f32s(&mut out, values.data());
    Ok(out)
}

pub fn decode_mel(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut r = ByteReader::new(bytes, path);
    r.expect_magic(MEL_MAGIC)?;
    let f = r.u32("mel bin count")? as usize;
    let t = r.u32("frame count")? as usize;
    if f == 0 || t == 0 {
        return Err(r.error_at(4, format!("empty mel matrix {f}×{t}")));
    }
    let expected = (f as u64) * (t as u64) * 4;
    if r.remaining() as u64 != expected {
        return Err(r.error_at(
            r.offset(),
            format!(
                "declared {f}×{t} floats ({expected} bytes) but payload holds {} bytes",
                r.remaining()
            ),
        ));
    }
    let data = r.f32s(f * t, "mel payload")?;
    Tensor::new(&[f, t], data)
}

pub fn write_mel(path: &Path, values: &Tensor) -> Result<()> {
    write_file(path, &encode_mel(values)?)
}

pub fn read_mel(path: &Path) -> Result<Tensor> {
    decode_mel(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn round_trip_is_bitwise() {
        let m = Tensor::from_fn(&[3, 4], |i| (i as f32).sin() * 1e-3 - 11.5);
        let bytes = encode_mel(&m).unwrap();
        assert_eq!(&bytes[..4], b"MELF");
        assert_eq!(bytes.len(), 12 + 48);
        let back = decode_mel(&bytes, Path::new("m")).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_mel(&back).unwrap(), bytes);
    }

    #[test]
    fn bad_files_report_offsets() {
        let m = Tensor::full(&[2, 2], 1.0);
        let mut bytes = encode_mel(&m).unwrap();
        bytes.pop();
        match decode_mel(&bytes, Path::new("m")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("{other:?}"),
        }
        let mut wrong = encode_mel(&m).unwrap();
        wrong[0] = b'X';
        assert!(matches!(
            decode_mel(&wrong, Path::new("m")),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(matches!(
            decode_mel(b"MELF\x01", Path::new("m")),
            Err(Error::Format { offset: 4, .. })
        ));
    }
}
