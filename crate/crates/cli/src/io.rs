//! Matrix file formats.
//!
//! The binary container (`.mbin`) is bit-exact and self-describing:
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"PLDSMTRX"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      4     dtype, u32 little-endian (1 = f64 little-endian)
//! 16      8     rows, u64 little-endian
//! 24      8     cols, u64 little-endian
//! 32      ...   rows*cols f64 values, little-endian, row-major
//! ```
//!
//! Files ending in `.csv` are read and written as headerless comma-separated
//! rows instead; values are written in scientific notation with 17
//! significant digits, which round-trips f64 exactly.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::CliError;

const MAGIC: &[u8; 8] = b"PLDSMTRX";
const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u32 = 1;

fn is_csv(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("csv")
}

/// Writes a matrix, choosing the format from the file extension.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), CliError> {
    if is_csv(path) {
        write_matrix_csv(path, m)
    } else {
        write_matrix_bin(path, m)
    }
}

/// Reads a matrix, choosing the format from the file extension.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    if is_csv(path) {
        read_matrix_csv(path)
    } else {
        read_matrix_bin(path)
    }
}

fn write_matrix_bin(path: &Path, m: &DMatrix<f64>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(DTYPE_F64)?;
    w.write_u64::<LittleEndian>(m.nrows() as u64)?;
    w.write_u64::<LittleEndian>(m.ncols() as u64)?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_f64::<LittleEndian>(m[(i, j)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_matrix_bin(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CliError::Data(format!(
            "{} is not a matrix container (bad magic)",
            path.display()
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(CliError::Data(format!(
            "unsupported container version {version}"
        )));
    }
    let dtype = r.read_u32::<LittleEndian>()?;
    if dtype != DTYPE_F64 {
        return Err(CliError::Data(format!("unsupported dtype {dtype}")));
    }
    let rows = r.read_u64::<LittleEndian>()? as usize;
    let cols = r.read_u64::<LittleEndian>()? as usize;
    if rows == 0 || cols == 0 || rows.saturating_mul(cols) > (1 << 34) {
        return Err(CliError::Data(format!(
            "implausible matrix shape {rows}x{cols}"
        )));
    }
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = r.read_f64::<LittleEndian>()?;
        }
    }
    Ok(m)
}

fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{:.16e}", m[(i, j)])?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let r = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| {
            CliError::Data(format!(
                "{}:{}: cannot parse value: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(CliError::Data(format!(
                    "{}:{}: ragged row ({} vs {} columns)",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Data(format!("{} is empty", path.display())));
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}
