//! Flat `key = value` text used by config and synthetic-spec files.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One parsed entry with its 1-based line number.
#[derive(Clone, Debug)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse(text: &str, path: &Path) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("expected key = value, got {line:?}"),
        })?;
        out.push(Entry {
            key: k.trim().to_string(),
            value: v.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

pub fn value<T: FromStr>(entry: &Entry, path: &Path) -> Result<T> {
    entry.value.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: entry.line,
        msg: format!("bad value {:?} for {}", entry.value, entry.key),
    })
}

pub fn unknown_key(entry: &Entry, path: &Path) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: entry.line,
        msg: format!("unknown key {}", entry.key),
    }
}
