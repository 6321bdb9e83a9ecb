//! The IDX container used by the MNIST files.
//!
//! Layout: two zero bytes, a type byte, a dimension-count byte, one
//! big-endian u32 per dimension, then the raw body. Only the unsigned-byte
//! type (0x08) is supported, with one to three dimensions.

use thiserror::Error;

pub const TYPE_UNSIGNED_BYTE: u8 = 0x08;
pub const MAX_DIMS: u8 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdxError {
    #[error("file shorter than the 4-byte magic number")]
    MissingMagic,
    #[error("magic number {0:#010x} does not start with two zero bytes")]
    BadMagicPrefix(u32),
    #[error("unsupported type byte {0:#04x}")]
    UnsupportedType(u8),
    #[error("unsupported dimension count {0}")]
    UnsupportedDims(u8),
    #[error("header truncated: {dims} dimensions declared, {available} header bytes present")]
    TruncatedHeader { dims: usize, available: usize },
    #[error("dimension product overflows")]
    DimOverflow,
    #[error("body has {found} bytes, dimensions require {expected}")]
    BodyLength { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, IdxError> {
    if bytes.len() < 4 {
        return Err(IdxError::MissingMagic);
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(IdxError::BadMagicPrefix(magic));
    }
    if bytes[2] != TYPE_UNSIGNED_BYTE {
        return Err(IdxError::UnsupportedType(bytes[2]));
    }
    let ndims = bytes[3];
    if ndims == 0 || ndims > MAX_DIMS {
        return Err(IdxError::UnsupportedDims(ndims));
    }
    let ndims = usize::from(ndims);
    let header_end = 4 + 4 * ndims;
    if bytes.len() < header_end {
        return Err(IdxError::TruncatedHeader {
            dims: ndims,
            available: bytes.len() - 4,
        });
    }
    let dims: Vec<usize> = bytes[4..header_end]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(IdxError::DimOverflow)?;
    let body = &bytes[header_end..];
    if body.len() != expected {
        return Err(IdxError::BodyLength {
            expected,
            found: body.len(),
        });
    }
    Ok(IdxTensor {
        dims,
        data: body.to_vec(),
    })
}

/// Inverse of [`parse_idx`]; used to build fixtures.
pub fn encode_idx(tensor: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * tensor.dims.len() + tensor.data.len());
    out.extend_from_slice(&[0, 0, TYPE_UNSIGNED_BYTE, tensor.dims.len() as u8]);
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&tensor.data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_image_file() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0x7F];
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.dims, vec![1, 1, 1]);
        assert_eq!(t.data, vec![127]);
    }

    #[test]
    fn labels_file() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 7, 2, 1];
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.dims, vec![3]);
        assert_eq!(t.data, vec![7, 2, 1]);
    }

    #[test]
    fn corrupted_headers() {
        // 0x00000899: valid ubyte type, 153 dimensions.
        let mut bytes = vec![0, 0, 0x08, 0x99];
        bytes.extend_from_slice(&[0, 0, 0, 1, 0x7F]);
        assert_eq!(parse_idx(&bytes).unwrap_err(), IdxError::UnsupportedDims(0x99));
        assert_eq!(
            parse_idx(&[0, 0, 0x09, 1, 0, 0, 0, 1, 5]).unwrap_err(),
            IdxError::UnsupportedType(0x09)
        );
        assert!(matches!(
            parse_idx(&[1, 0, 8, 1, 0, 0, 0, 1, 5]).unwrap_err(),
            IdxError::BadMagicPrefix(_)
        ));
        assert_eq!(parse_idx(&[0, 0]).unwrap_err(), IdxError::MissingMagic);
        assert!(matches!(
            parse_idx(&[0, 0, 8, 3, 0, 0, 0, 1]).unwrap_err(),
            IdxError::TruncatedHeader { .. }
        ));
        assert_eq!(
            parse_idx(&[0, 0, 8, 1, 0, 0, 0, 2, 5]).unwrap_err(),
            IdxError::BodyLength {
                expected: 2,
                found: 1
            }
        );
        assert_eq!(
            parse_idx(&[0, 0, 8, 3, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF])
                .map_err(|e| matches!(e, IdxError::DimOverflow | IdxError::BodyLength { .. })),
            Err(true)
        );
    }

    proptest! {
        #[test]
        fn round_trip(dims in prop::collection::vec(1usize..5, 1..=3), fill in any::<u8>()) {
            let n: usize = dims.iter().product();
            let data: Vec<u8> = (0..n).map(|i| fill.wrapping_add(i as u8)).collect();
            let t = IdxTensor { dims, data };
            let bytes = encode_idx(&t);
            let parsed = parse_idx(&bytes).unwrap();
            prop_assert_eq!(&parsed, &t);
            prop_assert_eq!(encode_idx(&parsed), bytes);
        }
    }
}
