//! Scenario files: compact JSON with every float written at 17 significant digits.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::Formatter;

use crate::scene::Scenario;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

/// Compact JSON formatter printing floats as `d.dddddddddddddddde±x` (17 significant digits).
#[derive(Debug, Default, Clone, Copy)]
pub struct SigDigitsFormatter;

impl Formatter for SigDigitsFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serialize any value with [`SigDigitsFormatter`], newline terminated.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, IoError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigitsFormatter);
    value.serialize(&mut ser).map_err(|source| IoError::Json {
        path: String::new(),
        source,
    })?;
    buf.push(b'\n');
    Ok(buf)
}

pub fn from_json_bytes<T: DeserializeOwned>(bytes: &[u8], path: &str) -> Result<T, IoError> {
    serde_json::from_slice(bytes).map_err(|source| IoError::Json {
        path: path.to_string(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let bytes = to_json_bytes(value)?;
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let bytes = fs::read(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_json_bytes(&bytes, &path.display().to_string())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|source| IoError::Io {
                path: dir.display().to_string(),
                source,
            })?;
        }
    }
    fs::write(path, bytes).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_scenario(path: &Path, sc: &Scenario) -> Result<(), IoError> {
    write_json(path, sc)
}

pub fn read_scenario(path: &Path) -> Result<Scenario, IoError> {
    read_json(path)
}
