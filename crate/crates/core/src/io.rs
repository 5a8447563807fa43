//! Line-delimited JSON helpers and atomic file writes.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{ForgeError, Result};

/// One parsed line, or the reason it could not be parsed.
#[derive(Debug)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Reads a JSONL file, keeping per-line failures instead of aborting.
pub fn read_jsonl_lenient<T: DeserializeOwned>(path: &Path) -> Result<(Vec<(usize, T)>, Vec<LineError>)> {
    let file = fs::File::open(path).map_err(|e| ForgeError::io(path, e))?;
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| ForgeError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(v) => ok.push((line_no, v)),
            Err(e) => bad.push(LineError {
                line: line_no,
                message: e.to_string(),
            }),
        }
    }
    Ok((ok, bad))
}

/// Reads a JSONL file; any malformed line is an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let (ok, bad) = read_jsonl_lenient(path)?;
    if let Some(first) = bad.first() {
        return Err(ForgeError::invalid(format!(
            "{}:{}: {}",
            path.display(),
            first.line,
            first.message
        )));
    }
    Ok(ok.into_iter().map(|(_, v)| v).collect())
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes `contents` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| ForgeError::io(parent, e))?;
        }
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| ForgeError::io(&tmp, e))?;
        f.write_all(contents).map_err(|e| ForgeError::io(&tmp, e))?;
        f.sync_all().map_err(|e| ForgeError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| ForgeError::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_atomic(path, to_jsonl(items)?.as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenient_reader_keeps_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(&p, "{\"a\":1}\nnot json\n\n{\"a\":2}\n").unwrap();
        let (ok, bad) = read_jsonl_lenient::<serde_json::Value>(&p).unwrap();
        assert_eq!(ok.len(), 2);
        assert_eq!(ok[1].0, 4);
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].line, 2);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        let leftovers: Vec<_> = fs::read_dir(p.parent().unwrap())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains(".tmp-"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
