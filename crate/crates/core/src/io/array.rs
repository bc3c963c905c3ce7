use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;

use super::{f64s_from_le, header_field, header_usize, parse_header, push_f64s, split_framed};
use crate::error::{ensure, invalid, Result};

const MAGIC: &[u8] = b"MVARR1\n";

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    Real(Array2<f64>),
    Complex(Array2<Complex64>),
}

/// A 2-D array plus free-form `key=value` metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrayFile {
    pub meta: BTreeMap<String, String>,
    pub data: ArrayData,
}

impl ArrayFile {
    pub fn real(data: Array2<f64>) -> Self {
        Self {
            meta: BTreeMap::new(),
            data: ArrayData::Real(data),
        }
    }

    pub fn complex(data: Array2<Complex64>) -> Self {
        Self {
            meta: BTreeMap::new(),
            data: ArrayData::Complex(data),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        header_usize(&self.meta, key)
    }

    pub fn into_real(self) -> Result<Array2<f64>> {
        match self.data {
            ArrayData::Real(a) => Ok(a),
            ArrayData::Complex(_) => Err(invalid!("expected a real array, found complex")),
        }
    }

    pub fn into_complex(self) -> Result<Array2<Complex64>> {
        match self.data {
            ArrayData::Complex(a) => Ok(a),
            ArrayData::Real(_) => Err(invalid!("expected a complex array, found real")),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let (kind, (rows, cols)) = match &self.data {
            ArrayData::Real(a) => ("real", a.dim()),
            ArrayData::Complex(a) => ("complex", a.dim()),
        };
        for (k, v) in &self.meta {
            ensure!(
                !matches!(k.as_str(), "kind" | "rows" | "cols"),
                "metadata key {k:?} is reserved"
            );
            ensure!(
                !k.is_empty() && !k.contains([' ', '=', '\n']) && !v.contains([' ', '\n']),
                "metadata {k:?}={v:?} cannot be stored"
            );
        }
        let mut header = format!("kind={kind} rows={rows} cols={cols}");
        for (k, v) in &self.meta {
            header.push_str(&format!(" {k}={v}"));
        }
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(header.as_bytes());
        out.push(b'\n');
        match &self.data {
            ArrayData::Real(a) => push_f64s(&mut out, a.iter().copied()),
            ArrayData::Complex(a) => push_f64s(&mut out, a.iter().flat_map(|c| [c.re, c.im])),
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = split_framed(bytes, MAGIC)?;
        let mut meta = parse_header(header)?;
        let rows = header_usize(&meta, "rows")?;
        let cols = header_usize(&meta, "cols")?;
        let data = match header_field(&meta, "kind")? {
            "real" => ArrayData::Real(
                Array2::from_shape_vec((rows, cols), f64s_from_le(payload, rows * cols)?)
                    .expect("length checked"),
            ),
            "complex" => {
                let v = f64s_from_le(payload, 2 * rows * cols)?;
                let c: Vec<Complex64> = v
                    .chunks_exact(2)
                    .map(|p| Complex64::new(p[0], p[1]))
                    .collect();
                ArrayData::Complex(Array2::from_shape_vec((rows, cols), c).expect("length checked"))
            }
            k => return Err(invalid!("unknown array kind {k:?}")),
        };
        for k in ["kind", "rows", "cols"] {
            meta.remove(k);
        }
        Ok(Self { meta, data })
    }
}

pub fn write_array(path: &Path, file: &ArrayFile) -> Result<()> {
    fs::write(path, file.encode()?)?;
    Ok(())
}

pub fn read_array(path: &Path) -> Result<ArrayFile> {
    ArrayFile::decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrips() {
        let a = ArrayFile::real(Array2::from_shape_fn((3, 2), |(i, j)| {
            i as f64 - 0.1 * j as f64
        }))
        .with_meta("hop", 63);
        let b = ArrayFile::decode(&a.encode().unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.meta_usize("hop").unwrap(), 63);
        let c = ArrayFile::complex(Array2::from_shape_fn((2, 2), |(i, j)| {
            Complex64::new(i as f64, -(j as f64))
        }));
        assert_eq!(ArrayFile::decode(&c.encode().unwrap()).unwrap(), c);
    }

    #[test]
    fn rejects_truncation_and_reserved_keys() {
        let a = ArrayFile::real(Array2::zeros((2, 2)));
        let bytes = a.encode().unwrap();
        assert!(ArrayFile::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(a.with_meta("rows", 1).encode().is_err());
    }
}
