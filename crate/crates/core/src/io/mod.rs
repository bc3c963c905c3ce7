//! On-disk formats: model checkpoints, optimiser state, numeric arrays, WAV
//! audio, and checksummed manifests.

mod array;
mod checkpoint;
mod manifest;
mod wav;

pub use array::{read_array, write_array, ArrayData, ArrayFile};
pub use checkpoint::{
    decode_checkpoint, decode_train_state, encode_checkpoint, encode_train_state, read_checkpoint,
    read_train_state, write_checkpoint, write_train_state,
};
pub use manifest::{sha256_hex, Manifest, ManifestEntry};
pub use wav::{read_wav, write_wav};

use std::collections::BTreeMap;

use crate::error::{invalid, Result};

/// Parses `key=value` pairs separated by single spaces.
pub(crate) fn parse_header(line: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for tok in line.split(' ').filter(|t| !t.is_empty()) {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| invalid!("malformed header field {tok:?}"))?;
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(invalid!("duplicate header field {k:?}"));
        }
    }
    Ok(out)
}

pub(crate) fn header_field<'a>(h: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    h.get(key)
        .map(String::as_str)
        .ok_or_else(|| invalid!("header lacks {key:?}"))
}

pub(crate) fn header_usize(h: &BTreeMap<String, String>, key: &str) -> Result<usize> {
    header_field(h, key)?
        .parse()
        .map_err(|e| invalid!("header field {key:?}: {e}"))
}

/// Splits `bytes` after the magic line and one header line.
pub(crate) fn split_framed<'a>(bytes: &'a [u8], magic: &[u8]) -> Result<(&'a str, &'a [u8])> {
    let rest = bytes.strip_prefix(magic).ok_or_else(|| {
        invalid!(
            "bad magic: expected {:?}",
            String::from_utf8_lossy(magic).trim_end()
        )
    })?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| invalid!("header line is not terminated"))?;
    let header = std::str::from_utf8(&rest[..nl]).map_err(|_| invalid!("header is not UTF-8"))?;
    Ok((header, &rest[nl + 1..]))
}

pub(crate) fn f64s_from_le(bytes: &[u8], count: usize) -> Result<Vec<f64>> {
    if bytes.len() != count * 8 {
        return Err(invalid!(
            "payload has {} bytes, expected {} values ({} bytes)",
            bytes.len(),
            count,
            count * 8
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub(crate) fn push_f64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
