//! Highlight assignment file.
//!
//! First line is [`ASSIGNMENTS_MAGIC`]; each following line holds four
//! whitespace-separated fields `id start length loss`. `loss` is the
//! teacher-forced negative log-likelihood of the title on the window, or
//! `nan` when the window came from the detector alone. Ids contain no
//! whitespace.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::HighlightWindow;
use crate::error::{Error, Result};

pub const ASSIGNMENTS_MAGIC: &str = "titlegen-assignments v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub id: String,
    pub window: HighlightWindow,
    pub loss: f64,
}

pub fn format_assignments(items: &[Assignment]) -> Result<String> {
    let mut out = format!("{ASSIGNMENTS_MAGIC}\n");
    for a in items {
        if a.id.is_empty() || a.id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidRecord {
                id: a.id.clone(),
                msg: "id must be non-empty without whitespace".into(),
            });
        }
        writeln!(out, "{} {} {} {:?}", a.id, a.window.start, a.window.length, a.loss).unwrap();
    }
    Ok(out)
}

pub fn write_assignments(path: &Path, items: &[Assignment]) -> Result<()> {
    fs::write(path, format_assignments(items)?).map_err(|e| Error::io(path, e))
}

pub fn read_assignments(path: &Path) -> Result<Vec<Assignment>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == ASSIGNMENTS_MAGIC => {}
        _ => return Err(bad(1, format!("expected header {ASSIGNMENTS_MAGIC:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(bad(i + 1, format!("expected 4 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| bad(i + 1, format!("{s:?}: {e}")));
        let window = HighlightWindow::new(num(f[1])?, num(f[2])?);
        if window.length == 0 {
            return Err(bad(i + 1, "zero-length window".into()));
        }
        let loss = f[3]
            .parse::<f64>()
            .map_err(|e| bad(i + 1, format!("{:?}: {e}", f[3])))?;
        out.push(Assignment {
            id: f[0].to_string(),
            window,
            loss,
        });
    }
    Ok(out)
}
