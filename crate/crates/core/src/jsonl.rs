//! Line-delimited JSON helpers shared by every artifact format.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl JsonlError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        JsonlError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Reads every non-blank line of `path` as one `T`. Line numbers are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let file = File::open(path).map_err(|e| JsonlError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| JsonlError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| JsonlError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Reads an append-structured file that may have been interrupted mid-write.
///
/// A malformed *final* line is treated as a torn write: it is dropped and the
/// file is truncated back to the last complete record. Malformed lines
/// anywhere else are errors. A missing file yields an empty vector.
pub fn read_jsonl_resumable<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| JsonlError::io(path, e))?;
    let mut out = Vec::new();
    let mut good_bytes = 0usize;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (idx, raw) in lines.iter().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            good_bytes += raw.len();
            continue;
        }
        let complete = raw.ends_with('\n');
        match serde_json::from_str(line) {
            Ok(v) if complete => {
                out.push(v);
                good_bytes += raw.len();
            }
            Ok(_) | Err(_) if idx + 1 == lines.len() => {
                tracing::warn!(path = %path.display(), line = idx + 1, "dropping torn trailing record");
                let file = OpenOptions::new()
                    .write(true)
                    .open(path)
                    .map_err(|e| JsonlError::io(path, e))?;
                file.set_len(good_bytes as u64).map_err(|e| JsonlError::io(path, e))?;
                break;
            }
            Ok(_) => unreachable!("only the final line can lack a newline"),
            Err(e) => {
                return Err(JsonlError::Malformed {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Writes `items` to `path` atomically (temp file in the same directory, then rename).
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), JsonlError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| JsonlError::io(dir, e))?;
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| JsonlError::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        for item in items {
            let line = serde_json::to_string(item).expect("artifact records serialize");
            w.write_all(line.as_bytes())
                .and_then(|_| w.write_all(b"\n"))
                .map_err(|e| JsonlError::io(path, e))?;
        }
        w.flush().map_err(|e| JsonlError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| JsonlError::io(path, e.error))?;
    Ok(())
}

/// Appends records to `path`, creating it if needed, and flushes before returning.
pub fn append_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), JsonlError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| JsonlError::io(dir, e))?;
    }
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| JsonlError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("artifact records serialize");
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| JsonlError::io(path, e))?;
    }
    w.flush().map_err(|e| JsonlError::io(path, e))
}

/// Writes a single pretty JSON document atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), JsonlError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| JsonlError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| JsonlError::io(dir, e))?;
    let text = serde_json::to_string_pretty(value).expect("artifact documents serialize");
    tmp.write_all(text.as_bytes())
        .and_then(|_| tmp.write_all(b"\n"))
        .map_err(|e| JsonlError::io(path, e))?;
    tmp.persist(path).map_err(|e| JsonlError::io(path, e.error))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, JsonlError> {
    let text = fs::read_to_string(path).map_err(|e| JsonlError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| JsonlError::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}
