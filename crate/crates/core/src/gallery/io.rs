//! Text and binary embedding file formats.
//!
//! Text: a `dim=<D>` header, then one record per line,
//! `subject_id<TAB>exam_id<TAB>YYYY-MM-DD<TAB>v1,v2,...,vD`.
//!
//! Binary: magic `EMB1`, little-endian `u32` D, `u64` count, then `count`
//! fixed-size records of `subject_id` and `exam_id` (each [`ID_FIELD_BYTES`]
//! bytes, UTF-8, NUL padded), `i32` days since 0001-01-01 (CE day 1), and D
//! little-endian `f32` values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};

use super::EmbeddingRecord;
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"EMB1";
pub const ID_FIELD_BYTES: usize = 64;

const DATE_FMT: &str = "%Y-%m-%d";

pub fn write_text(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let dim = records.first().map(|r| r.dim()).unwrap_or(0);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = String::new();
    body.push_str(&format!("dim={dim}\n"));
    for r in records {
        body.push_str(&r.subject_id);
        body.push('\t');
        body.push_str(&r.exam_id);
        body.push('\t');
        body.push_str(&r.timestamp.format(DATE_FMT).to_string());
        body.push('\t');
        for (i, x) in r.vector().iter().enumerate() {
            if i > 0 {
                body.push(',');
            }
            body.push_str(&x.to_string());
        }
        body.push('\n');
        if body.len() > 1 << 16 {
            w.write_all(body.as_bytes())
                .map_err(|e| Error::io(path, e))?;
            body.clear();
        }
    }
    w.write_all(body.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "missing `dim=<D>` header")),
    };
    let dim: usize = header
        .trim()
        .strip_prefix("dim=")
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| Error::parse(path, 1, format!("bad header `{header}`")))?;
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(subject), Some(exam), Some(date), Some(values), None) = (
            cols.next(),
            cols.next(),
            cols.next(),
            cols.next(),
            cols.next(),
        ) else {
            return Err(Error::parse(
                path,
                lineno,
                "expected 4 tab-separated columns",
            ));
        };
        let timestamp = NaiveDate::parse_from_str(date, DATE_FMT)
            .map_err(|e| Error::parse(path, lineno, format!("bad date `{date}`: {e}")))?;
        let vector = values
            .split(',')
            .map(|v| v.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| Error::parse(path, lineno, format!("bad vector value: {e}")))?;
        if vector.len() != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {dim} values, found {}", vector.len()),
            ));
        }
        let rec = EmbeddingRecord::from_f32(subject, exam, timestamp, vector)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

fn put_id(buf: &mut Vec<u8>, id: &str, path: &Path) -> Result<()> {
    let bytes = id.as_bytes();
    if bytes.len() > ID_FIELD_BYTES || bytes.contains(&0) {
        return Err(Error::Config(format!(
            "{}: identifier `{id}` does not fit a {ID_FIELD_BYTES}-byte field",
            path.display()
        )));
    }
    buf.extend_from_slice(bytes);
    buf.resize(buf.len() + ID_FIELD_BYTES - bytes.len(), 0);
    Ok(())
}

fn get_id(field: &[u8], path: &Path, n: usize) -> Result<String> {
    let end = field.iter().position(|&b| b == 0).unwrap_or(field.len());
    String::from_utf8(field[..end].to_vec())
        .map_err(|_| Error::parse(path, n + 1, "identifier is not UTF-8"))
}

pub fn write_binary(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let dim = records.first().map(|r| r.dim()).unwrap_or(0);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(16);
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    for r in records {
        if r.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: r.dim(),
            });
        }
        buf.clear();
        put_id(&mut buf, &r.subject_id, path)?;
        put_id(&mut buf, &r.exam_id, path)?;
        buf.extend_from_slice(&r.timestamp.num_days_from_ce().to_le_bytes());
        for x in r.vector() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_binary(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
    if &head[..4] != BINARY_MAGIC {
        return Err(Error::parse(path, 0, "missing EMB1 magic"));
    }
    let dim = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let rec_len = 2 * ID_FIELD_BYTES + 4 + 4 * dim;
    let mut buf = vec![0u8; rec_len];
    let mut out = Vec::with_capacity(count);
    for n in 0..count {
        r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        let subject = get_id(&buf[..ID_FIELD_BYTES], path, n)?;
        let exam = get_id(&buf[ID_FIELD_BYTES..2 * ID_FIELD_BYTES], path, n)?;
        let off = 2 * ID_FIELD_BYTES;
        let days = i32::from_le_bytes(buf[off..off + 4].try_into().unwrap());
        let timestamp = NaiveDate::from_num_days_from_ce_opt(days)
            .ok_or_else(|| Error::parse(path, n + 1, format!("bad day number {days}")))?;
        let vector = buf[off + 4..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let rec = EmbeddingRecord::from_f32(subject, exam, timestamp, vector)
            .map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        out.push(rec);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::parse(
            path,
            count + 1,
            "trailing bytes after last record",
        ));
    }
    Ok(out)
}

/// Loads either format, dispatching on the leading magic bytes.
pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let mut magic = [0u8; 4];
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let n = f.read(&mut magic).map_err(|e| Error::io(path, e))?;
    if n == 4 && &magic == BINARY_MAGIC {
        read_binary(path)
    } else {
        read_text(path)
    }
}
