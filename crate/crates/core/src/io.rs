//! JSONL and binary float-table helpers shared by the dataset formats.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Error, Result};

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |error| Error::File { path: path.to_path_buf(), error }
}

/// Creates `path` for writing, making missing parent directories.
fn create(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(file_error(parent))?;
    }
    File::create(path).map_err(file_error(path))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(file_error(path))
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = BufWriter::new(create(path)?);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(open(path)?);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = open(path)?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes a little-endian f32 table: 8-byte magic, u32 record count, u32
/// dimension, then the data row-major.
pub fn write_f32_table(path: &Path, magic: &[u8; 8], count: usize, dim: usize, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + data.len() * 4);
    bytes.extend_from_slice(magic);
    bytes.extend_from_slice(&(count as u32).to_le_bytes());
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    for x in data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    create(path)?.write_all(&bytes).map_err(file_error(path))?;
    Ok(())
}

/// Reads a table written by [`write_f32_table`]; each record holds
/// `rows_per_record * dim` floats.
pub fn read_f32_table(path: &Path, magic: &[u8; 8], rows_per_record: usize) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(file_error(path))?;
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(Error::Format(format!("{}: bad header", path.display())));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != count * rows_per_record * dim * 4 {
        return Err(Error::Format(format!("{}: truncated data", path.display())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((count, dim, data))
}
