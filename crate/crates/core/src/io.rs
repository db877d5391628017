//! Path and matrix serialization.
//!
//! Binary path layout, all little-endian: the magic bytes `OSLP`, a `u16`
//! format version, the dimension `d` as `u32`, the number of samples `n` as
//! `u64`, then `n` rows of `d + 1` `f64` values `(t, x_1, ..., x_d)`.
//! An optional trailer follows: the bytes `PROV`, a `u32` length and that
//! many bytes of UTF-8 JSON describing where the path came from.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::linops::Matrix;
use crate::points::PointSet;
use crate::process::Path;

pub const PATH_MAGIC: &[u8; 4] = b"OSLP";
pub const PATH_VERSION: u16 = 1;
pub const TRAILER_MAGIC: &[u8; 4] = b"PROV";

/// Contents of a binary path file.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFile {
    pub times: Vec<f64>,
    pub values: PointSet,
    pub provenance: Option<String>,
}

/// `# key=value` lines followed by a `t,x1,...,xd` table.
pub fn write_path_csv<W: Write>(path: &Path, comments: &[String], mut w: W) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=path.dim()).map(|k| format!("x{k}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (t, x) in path.times.iter().zip(path.values.iter()) {
        let mut line = format!("{t:e}");
        for v in x {
            line.push(',');
            line.push_str(&format!("{v:e}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn write_path_binary<W: Write>(path: &Path, provenance: Option<&str>, mut w: W) -> Result<()> {
    let d = u32::try_from(path.dim()).map_err(|_| Error::Shape("dimension too large".into()))?;
    w.write_all(PATH_MAGIC)?;
    w.write_all(&PATH_VERSION.to_le_bytes())?;
    w.write_all(&d.to_le_bytes())?;
    w.write_all(&(path.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(path.len() * (path.dim() + 1) * 8);
    for (t, x) in path.times.iter().zip(path.values.iter()) {
        buf.extend_from_slice(&t.to_le_bytes());
        for v in x {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(text) = provenance {
        let len = u32::try_from(text.len()).map_err(|_| Error::Shape("provenance too long".into()))?;
        buf.extend_from_slice(TRAILER_MAGIC);
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(text.as_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_path_binary<R: Read>(mut r: R) -> Result<PathFile> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != PATH_MAGIC {
        return Err(Error::Parse("not an OSLP path file".into()));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != PATH_VERSION {
        return Err(Error::Parse(format!("unsupported path format version {version}")));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    if d == 0 {
        return Err(Error::Parse("zero dimension".into()));
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let payload = n
        .checked_mul(d + 1)
        .and_then(|k| k.checked_mul(8))
        .filter(|&k| k <= data.len())
        .ok_or_else(|| Error::Parse(format!("truncated payload of {} bytes", data.len())))?;
    let provenance = read_trailer(&data[payload..])?;
    let data = &data[..payload];
    let mut times = Vec::with_capacity(n);
    let mut coords = Vec::with_capacity(n * d);
    for (k, chunk) in data.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        if k % (d + 1) == 0 {
            times.push(v);
        } else {
            coords.push(v);
        }
    }
    Ok(PathFile {
        times,
        values: PointSet::new(d, coords)?,
        provenance,
    })
}

fn read_trailer(rest: &[u8]) -> Result<Option<String>> {
    if rest.is_empty() {
        return Ok(None);
    }
    if rest.len() < 8 || &rest[..4] != TRAILER_MAGIC {
        return Err(Error::Parse(format!("{} unexpected bytes after the payload", rest.len())));
    }
    let len = u32::from_le_bytes(rest[4..8].try_into().expect("4 bytes")) as usize;
    if rest.len() != 8 + len {
        return Err(Error::Parse("provenance trailer length mismatch".into()));
    }
    String::from_utf8(rest[8..].to_vec())
        .map(Some)
        .map_err(|_| Error::Parse("provenance trailer is not UTF-8".into()))
}

pub fn matrix_to_json(m: &Matrix) -> serde_json::Value {
    serde_json::json!(crate::linops::matrix_to_rows(m))
}

pub fn matrix_from_json(text: &str) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    crate::linops::matrix_from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{simulate_path, uniform_grid, ProcessSpec};

    fn sample_path() -> Path {
        let grid = uniform_grid(1.0, 0.125).unwrap();
        simulate_path(&ProcessSpec::brownian(2), &grid, 4).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let p = sample_path();
        let mut buf = Vec::new();
        write_path_binary(&p, None, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"OSLP");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        assert_eq!(buf.len(), 4 + 2 + 4 + 8 + 9 * 3 * 8);
        let f = read_path_binary(buf.as_slice()).unwrap();
        assert_eq!(f.times, p.times);
        assert_eq!(f.values, p.values);
        assert_eq!(f.provenance, None);
    }

    #[test]
    fn binary_trailer_round_trip() {
        let p = sample_path();
        let prov = r#"{"seed":4}"#;
        let mut buf = Vec::new();
        write_path_binary(&p, Some(prov), &mut buf).unwrap();
        assert_eq!(buf.len(), 18 + 9 * 3 * 8 + 8 + prov.len());
        let f = read_path_binary(buf.as_slice()).unwrap();
        assert_eq!(f.provenance.as_deref(), Some(prov));
        assert_eq!(f.values, p.values);
        buf.push(b'x');
        assert!(read_path_binary(buf.as_slice()).is_err());
    }

    #[test]
    fn binary_rejects_garbage() {
        assert!(matches!(read_path_binary(&b"NOPE\x01\x00"[..]), Err(Error::Parse(_))));
        let mut buf = Vec::new();
        write_path_binary(&sample_path(), None, &mut buf).unwrap();
        buf.pop();
        assert!(matches!(read_path_binary(buf.as_slice()), Err(Error::Parse(_))));
    }

    #[test]
    fn csv_layout() {
        let p = sample_path();
        let mut buf = Vec::new();
        write_path_csv(&p, &["seed=4".into()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# seed=4");
        assert_eq!(lines[1], "t,x1,x2");
        assert_eq!(lines.len(), 2 + 9);
        let last: Vec<f64> = lines[10].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(last[0], 1.0);
        assert_eq!(&last[1..], p.values.point(8));
    }

    #[test]
    fn matrix_json_round_trip() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.5, -0.25, 2.0]);
        let text = matrix_to_json(&m).to_string();
        assert_eq!(matrix_from_json(&text).unwrap(), m);
        assert!(matrix_from_json("[[1, 2], [3]]").is_err());
    }
}
