//! Plain-text manifests: one comma-separated record per line, no header.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// `subject,target,block,relative_path`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentEntry {
    pub subject: u32,
    pub target: usize,
    pub block: u32,
    pub path: PathBuf,
}

/// `word,subject,relative_path`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordEntry {
    pub word: String,
    pub subject: u32,
    pub path: PathBuf,
}

fn fields(line: &str, n: usize, lineno: usize) -> Result<Vec<&str>> {
    let parts: Vec<&str> = line.splitn(n, ',').collect();
    if parts.len() != n {
        return Err(Error::Format(format!(
            "manifest line {lineno}: expected {n} fields, got {}",
            parts.len()
        )));
    }
    Ok(parts)
}

fn num<T: std::str::FromStr>(s: &str, lineno: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("manifest line {lineno}: bad number '{s}'")))
}

pub fn format_segments(entries: &[SegmentEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{},{},{},{}\n", e.subject, e.target, e.block, e.path.display()))
        .collect()
}

pub fn parse_segments(text: &str) -> Result<Vec<SegmentEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f = fields(line, 4, i + 1)?;
            Ok(SegmentEntry {
                subject: num(f[0], i + 1)?,
                target: num(f[1], i + 1)?,
                block: num(f[2], i + 1)?,
                path: PathBuf::from(f[3]),
            })
        })
        .collect()
}

pub fn format_words(entries: &[WordEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{},{},{}\n", e.word, e.subject, e.path.display()))
        .collect()
}

pub fn parse_words(text: &str) -> Result<Vec<WordEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f = fields(line, 3, i + 1)?;
            Ok(WordEntry {
                word: f[0].to_string(),
                subject: num(f[1], i + 1)?,
                path: PathBuf::from(f[2]),
            })
        })
        .collect()
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
