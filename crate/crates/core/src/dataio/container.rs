//! Shared on-disk container for datasets and checkpoints.
//!
//! ```text
//! <MAGIC> <version>\n
//! <manifest: one line of JSON>\n
//! <payload: little-endian f64 values>
//! ```
//!
//! The manifest carries a `sections` list of `{name, shape, offset}` records;
//! `offset` is the byte offset of the section inside the payload and the
//! section holds `shape.iter().product()` values in row-major order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{LrnrError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionHeader {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Decoded container: manifest fields other than `sections`, plus payload.
#[derive(Clone, Debug, Default)]
pub struct Container {
    pub meta: serde_json::Map<String, Value>,
    pub sections: BTreeMap<String, Section>,
    order: Vec<String>,
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn set_meta<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        let v = serde_json::to_value(value).map_err(|e| LrnrError::Format(e.to_string()))?;
        self.meta.insert(key.to_string(), v);
        Ok(())
    }

    pub fn meta<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| LrnrError::Format(format!("manifest field {key:?} missing")))?;
        serde_json::from_value(v.clone()).map_err(|e| LrnrError::Format(format!("manifest field {key:?}: {e}")))
    }

    pub fn has_meta(&self, key: &str) -> bool {
        self.meta.get(key).is_some_and(|v| !v.is_null())
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(LrnrError::ShapeMismatch(format!(
                "section {name}: shape {shape:?} with {} values",
                data.len()
            )));
        }
        if self.sections.insert(name.clone(), Section { shape, data }).is_some() {
            return Err(LrnrError::invalid(format!("duplicate section {name}")));
        }
        self.order.push(name);
        Ok(())
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .get(name)
            .ok_or_else(|| LrnrError::Format(format!("section {name:?} missing")))
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.contains_key(name)
    }

    /// Section data after checking its shape.
    pub fn take(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let s = self.section(name)?;
        if s.shape != shape {
            return Err(LrnrError::ShapeMismatch(format!(
                "section {name}: stored shape {:?}, expected {shape:?}",
                s.shape
            )));
        }
        Ok(&s.data)
    }

    pub fn encode(&self, magic: &str, version: u32) -> Result<Vec<u8>> {
        let mut headers = Vec::with_capacity(self.order.len());
        let mut offset = 0;
        for name in &self.order {
            let s = &self.sections[name];
            headers.push(SectionHeader {
                name: name.clone(),
                shape: s.shape.clone(),
                offset,
            });
            offset += 8 * s.data.len();
        }
        let mut manifest = self.meta.clone();
        manifest.insert(
            "sections".into(),
            serde_json::to_value(&headers).map_err(|e| LrnrError::Format(e.to_string()))?,
        );
        manifest.insert("payload_bytes".into(), Value::from(offset));
        let line = serde_json::to_string(&manifest).map_err(|e| LrnrError::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(line.len() + offset + 32);
        writeln!(out, "{magic} {version}")?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
        for name in &self.order {
            for v in &self.sections[name].data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], magic: &str, version: u32) -> Result<Container> {
        let (first, rest) = split_line(bytes).ok_or_else(|| LrnrError::Format("missing header line".into()))?;
        let header = std::str::from_utf8(first).map_err(|_| LrnrError::Format("bad magic".into()))?;
        let mut parts = header.split(' ');
        if parts.next() != Some(magic) {
            return Err(LrnrError::Format(format!("bad magic, expected {magic:?}")));
        }
        let found: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| LrnrError::Format("unreadable version".into()))?;
        if found != version {
            return Err(LrnrError::VersionMismatch {
                found,
                expected: version,
            });
        }
        let (line, payload) = split_line(rest).ok_or_else(|| LrnrError::Format("missing manifest".into()))?;
        let mut meta: serde_json::Map<String, Value> =
            serde_json::from_slice(line).map_err(|e| LrnrError::Format(format!("manifest: {e}")))?;
        let headers: Vec<SectionHeader> = serde_json::from_value(meta.remove("sections").unwrap_or(Value::Null))
            .map_err(|e| LrnrError::Format(format!("section table: {e}")))?;
        let declared: usize = serde_json::from_value(meta.remove("payload_bytes").unwrap_or(Value::Null))
            .map_err(|e| LrnrError::Format(format!("payload size: {e}")))?;
        if payload.len() < declared {
            return Err(LrnrError::Truncated {
                expected: declared,
                found: payload.len(),
            });
        }
        if payload.len() > declared {
            return Err(LrnrError::Format(format!(
                "{} trailing bytes after payload",
                payload.len() - declared
            )));
        }
        let mut c = Container {
            meta,
            ..Container::default()
        };
        let mut expected_offset = 0;
        for h in headers {
            let count: usize = h.shape.iter().product();
            if h.offset != expected_offset || h.offset + 8 * count > declared {
                return Err(LrnrError::ShapeMismatch(format!(
                    "section {} at offset {} with {count} values does not fit the payload",
                    h.name, h.offset
                )));
            }
            let data = payload[h.offset..h.offset + 8 * count]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            expected_offset += 8 * count;
            c.push(h.name, h.shape, data)?;
        }
        if expected_offset != declared {
            return Err(LrnrError::ShapeMismatch("section sizes do not add up to the payload".into()));
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path, magic: &str, version: u32) -> Result<()> {
        write_atomic(path, &self.encode(magic, version)?)
    }

    pub fn read(path: &Path, magic: &str, version: u32) -> Result<Container> {
        Container::decode(&fs::read(path)?, magic, version)
    }
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let pos = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..pos], &bytes[pos + 1..]))
}

/// Write to a sibling temporary file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| LrnrError::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// CSV with a header row taken from the field names of `T`, written atomically.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| LrnrError::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Numeric CSV with an explicit header, written atomically.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(LrnrError::ShapeMismatch(format!(
                "table row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| LrnrError::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}
