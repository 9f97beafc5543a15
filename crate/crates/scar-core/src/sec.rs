//! SCAR Embedding Container (SEC) files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..8   magic "SCAREMB1"
//! u32          header length
//! header       UTF-8 JSON {n, d, has_labels, has_split, k, modality, id_width: 64}
//! n   x u64    sample ids
//! n*d x f32    vectors, row-major
//! n   x i32    labels          (if has_labels)
//! n   x u8     split tags      (if has_split; 0 = train, 1 = test)
//! ```
//!
//! Vectors round-trip bit-exactly: they are written as raw 32-bit patterns.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScarError};
use crate::store::{EmbeddingTable, SplitTag};

const MAGIC: &[u8; 8] = b"SCAREMB1";

#[derive(Serialize, Deserialize)]
struct Header {
    n: u64,
    d: u32,
    has_labels: bool,
    has_split: bool,
    k: u32,
    modality: String,
    id_width: u32,
}

/// Load and fully validate a table from a SEC file.
pub fn load_table(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let mut reader = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 8];
    read_exact_or(&mut reader, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(ScarError::MalformedHeader("bad magic".into()));
    }
    let mut len_bytes = [0u8; 4];
    read_exact_or(&mut reader, &mut len_bytes, "header length")?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    read_exact_or(&mut reader, &mut header_bytes, "header body")?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| ScarError::MalformedHeader(e.to_string()))?;
    if header.id_width != 64 {
        return Err(ScarError::MalformedHeader(format!(
            "unsupported id width {}",
            header.id_width
        )));
    }
    let n = header.n as usize;
    let d = header.d as usize;
    if d == 0 {
        return Err(ScarError::MalformedHeader("d = 0".into()));
    }

    let mut ids = Vec::with_capacity(n);
    let mut buf8 = [0u8; 8];
    for _ in 0..n {
        read_exact_or(&mut reader, &mut buf8, "ids")?;
        ids.push(u64::from_le_bytes(buf8));
    }

    let mut vectors = Vec::with_capacity(n * d);
    let mut float_bytes = vec![0u8; d * 4];
    for row in 0..n {
        reader.read_exact(&mut float_bytes).map_err(|_| {
            // Truncated vector section: name the row where the data ran out.
            ScarError::DimensionMismatch {
                row,
                expected: d,
                got: 0,
            }
        })?;
        for c in float_bytes.chunks_exact(4) {
            vectors.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        }
    }

    let labels = if header.has_labels {
        let mut values = Vec::with_capacity(n);
        let mut buf4 = [0u8; 4];
        for row in 0..n {
            read_exact_or(&mut reader, &mut buf4, "labels")?;
            let v = i32::from_le_bytes(buf4);
            if v < 0 {
                return Err(ScarError::InvalidLabels(format!(
                    "negative label {v} at row {row}"
                )));
            }
            values.push(v as u32);
        }
        Some((values, header.k as usize))
    } else {
        None
    };

    let split = if header.has_split {
        let mut tags = vec![0u8; n];
        read_exact_or(&mut reader, &mut tags, "split tags")?;
        let mut out = Vec::with_capacity(n);
        for (row, t) in tags.iter().enumerate() {
            out.push(match t {
                0 => SplitTag::Train,
                1 => SplitTag::Test,
                other => {
                    return Err(ScarError::MalformedHeader(format!(
                        "bad split tag {other} at row {row}"
                    )))
                }
            });
        }
        Some(out)
    } else {
        None
    };

    EmbeddingTable::new(ids, vectors, d, labels, split, header.modality)
}

/// Write a table as a SEC file. `load_table` reproduces it bit-exactly.
pub fn write_table(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    let header = Header {
        n: table.len() as u64,
        d: table.dim() as u32,
        has_labels: table.labels().is_some(),
        has_split: table.split_tags().is_some(),
        k: table.num_classes().unwrap_or(0) as u32,
        modality: table.modality().to_string(),
        id_width: 64,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| ScarError::MalformedHeader(e.to_string()))?;
    writer.write_all(MAGIC)?;
    writer.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    writer.write_all(&header_bytes)?;
    for id in table.ids() {
        writer.write_all(&id.to_le_bytes())?;
    }
    for v in table.vectors() {
        writer.write_all(&v.to_le_bytes())?;
    }
    if let Some(labels) = table.labels() {
        for &c in labels {
            writer.write_all(&(c as i32).to_le_bytes())?;
        }
    }
    if let Some(tags) = table.split_tags() {
        for t in tags {
            writer.write_all(&[match t {
                SplitTag::Train => 0u8,
                SplitTag::Test => 1u8,
            }])?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn read_exact_or(reader: &mut impl Read, buf: &mut [u8], section: &str) -> Result<()> {
    reader
        .read_exact(buf)
        .map_err(|_| ScarError::MalformedHeader(format!("truncated {section}")))
}
