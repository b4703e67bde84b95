//! EMB1 binary matrix format, with a CSV fallback for small files.
//!
//! Layout: ASCII magic `EMB1`, `u32` LE row count, `u32` LE column count, then
//! `rows * cols` IEEE-754 `f32` LE values in row-major order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::FeatureMatrix;
use crate::error::{Error, Result};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";

pub fn encode_emb(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::Dimension("too many rows".into()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::Dimension("too many columns".into()))?;
    let mut buf = Vec::with_capacity(12 + 4 * m.as_slice().len());
    buf.extend_from_slice(EMB_MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for &v in m.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_emb(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < 12 || &bytes[..4] != EMB_MAGIC {
        return Err(Error::Dimension("missing EMB1 header".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Dimension("EMB1 size overflow".into()))?;
    if body.len() != expected {
        return Err(Error::Dimension(format!(
            "EMB1 body has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureMatrix::from_vec(rows, cols, values)
}

pub fn write_emb(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let bytes = encode_emb(m)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads an EMB1 file, or a CSV matrix with a `dim0,dim1,...` header.
pub fn read_matrix(path: &Path) -> Result<FeatureMatrix> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(EMB_MAGIC) {
        return decode_emb(&bytes);
    }
    parse_csv_matrix(path, &bytes)
}

fn parse_csv_matrix(path: &Path, bytes: &[u8]) -> Result<FeatureMatrix> {
    let reader = BufReader::new(bytes);
    let mut lines = reader.lines().enumerate();
    let cols = match lines.next() {
        Some((_, Ok(header))) => {
            let names: Vec<&str> = header.trim().split(',').collect();
            for (j, name) in names.iter().enumerate() {
                if name.trim() != format!("dim{j}") {
                    return Err(Error::Parse {
                        path: path.into(),
                        line: 1,
                        msg: format!("expected header column dim{j}, found {name:?}"),
                    });
                }
            }
            names.len()
        }
        Some((_, Err(e))) => return Err(Error::io(path, e)),
        None => return Err(Error::Empty(format!("{}", path.display()))),
    };
    let mut values = Vec::new();
    let mut rows = 0;
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for field in line.trim().split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: n + 1,
                msg: format!("not a number: {field:?}"),
            })?;
            values.push(v);
        }
        if values.len() - before != cols {
            return Err(Error::Parse {
                path: path.into(),
                line: n + 1,
                msg: format!("expected {cols} fields, found {}", values.len() - before),
            });
        }
        rows += 1;
    }
    FeatureMatrix::from_vec(rows, cols, values)
}

pub fn write_csv_matrix(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..m.cols()).map(|j| format!("dim{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in m.iter_rows() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_little_endian() {
        let m = FeatureMatrix::from_vec(2, 1, vec![1.0, -2.0]).unwrap();
        let b = encode_emb(&m).unwrap();
        assert_eq!(&b[..4], b"EMB1");
        assert_eq!(&b[4..8], &[2, 0, 0, 0]);
        assert_eq!(&b[8..12], &[1, 0, 0, 0]);
        assert_eq!(&b[12..16], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 20);
    }

    #[test]
    fn truncated_body_is_rejected() {
        let m = FeatureMatrix::from_vec(2, 2, vec![1.0; 4]).unwrap();
        let b = encode_emb(&m).unwrap();
        assert!(decode_emb(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn csv_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "dim0,dim1\n1,2\n3.5,-4\n").unwrap();
        let m = read_matrix(&p).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 2));
        assert_eq!(m.row(1), &[3.5, -4.0]);

        fs::write(&p, "dim0,dim1\n1,2,3\n").unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::Parse { line: 2, .. })));
    }
}
