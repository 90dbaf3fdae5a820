//! File formats.
//!
//! * Matrices in JSON are objects `{"rows": r, "cols": c, "data": [...]}` with
//!   `data` in row-major order. `serde_json` writes the shortest decimal that
//!   round-trips, so values are preserved exactly.
//! * Large matrices go to binary sidecars: a 16-byte header (8-byte magic
//!   `RHFEMAT\0`, `u32` rows, `u32` cols, little endian) followed by
//!   `rows * cols` little-endian `f64` in row-major order.
//! * CSV doubles are written with 17 significant digits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub const SIDECAR_MAGIC: &[u8; 8] = b"RHFEMAT\0";

/// Row-major JSON representation of a dense matrix.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MatJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Mat> for MatJson {
    fn from(m: &Mat) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend(m.row(r).iter().copied());
        }
        MatJson { rows, cols, data }
    }
}

impl TryFrom<MatJson> for Mat {
    type Error = Error;

    fn try_from(j: MatJson) -> Result<Mat> {
        if j.data.len() != j.rows * j.cols {
            return Err(Error::Format(format!(
                "matrix declares {}x{} but carries {} entries",
                j.rows,
                j.cols,
                j.data.len()
            )));
        }
        Ok(Mat::from_row_slice(j.rows, j.cols, &j.data))
    }
}

/// `#[serde(with = "crate::io::mat_json")]` adapter for `Mat` fields.
pub mod mat_json {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatJson::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Mat, D::Error> {
        let j = MatJson::deserialize(d)?;
        Mat::try_from(j).map_err(serde::de::Error::custom)
    }
}

/// Same as [`mat_json`] for `Vec<Mat>`.
pub mod mat_json_vec {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ms: &[Mat], s: S) -> std::result::Result<S::Ok, S::Error> {
        let js: Vec<MatJson> = ms.iter().map(MatJson::from).collect();
        js.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Mat>, D::Error> {
        let js = Vec::<MatJson>::deserialize(d)?;
        js.into_iter()
            .map(|j| Mat::try_from(j).map_err(serde::de::Error::custom))
            .collect()
    }
}

pub fn write_sidecar(path: &Path, m: &Mat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let rows = u32::try_from(m.nrows()).map_err(|_| Error::Format("matrix too large".into()))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| Error::Format("matrix too large".into()))?;
    w.write_all(SIDECAR_MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            w.write_all(&m[(r, c)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `File::open` with the path in the error message.
pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

pub fn read_sidecar(path: &Path) -> Result<Mat> {
    let mut rd = BufReader::new(open(path)?);
    let mut header = [0u8; 16];
    rd.read_exact(&mut header)?;
    if &header[..8] != SIDECAR_MAGIC {
        return Err(Error::Format(format!("{} is not a matrix sidecar", path.display())));
    }
    let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut bytes = Vec::new();
    rd.read_to_end(&mut bytes)?;
    if bytes.len() != rows * cols * 8 {
        return Err(Error::Format(format!(
            "{}: expected {} bytes of payload, found {}",
            path.display(),
            rows * cols * 8,
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Mat::from_row_slice(rows, cols, &data))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let rd = BufReader::new(open(path)?);
    serde_json::from_reader(rd).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Sidecar path next to a JSON artifact: `design.json` + `ty` -> `design.ty.bin`.
pub fn sidecar_path(json_path: &Path, tag: &str) -> std::path::PathBuf {
    let stem = json_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".into());
    json_path.with_file_name(format!("{stem}.{tag}.bin"))
}
