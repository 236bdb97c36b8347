//! Dataset manifests: CSV with header `subject_id,reading_path,interview_path,label`.
//!
//! Paths are resolved relative to the manifest's directory. Labels are the
//! tokens `control` and `depression`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const MANIFEST_COLUMNS: [&str; 4] = ["subject_id", "reading_path", "interview_path", "label"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Control,
    Depression,
}

impl Label {
    /// 0 for control, 1 for depression.
    pub fn index(self) -> usize {
        match self {
            Label::Control => 0,
            Label::Depression => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Control),
            1 => Some(Label::Depression),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Control => "control",
            Label::Depression => "depression",
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "control" => Ok(Label::Control),
            "depression" => Ok(Label::Depression),
            other => Err(format!(
                "unknown label `{other}` (expected control or depression)"
            )),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub subject_id: String,
    /// Resolved path, `None` when the cell was empty.
    pub reading_path: Option<PathBuf>,
    pub interview_path: Option<PathBuf>,
    pub label: Label,
}

/// Reads and validates a manifest file.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest_str(&text, path, base)
}

/// Parses manifest text; `origin` names the source in errors and `base` is
/// the directory relative paths are resolved against.
pub fn parse_manifest_str(text: &str, origin: &Path, base: &Path) -> Result<Vec<ManifestEntry>> {
    let err = |row: usize, detail: String| Error::Manifest {
        path: origin.to_path_buf(),
        row,
        detail,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let mut cols = [0usize; 4];
    for (slot, name) in cols.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| err(1, format!("missing column `{name}`")))?;
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Row numbers count file lines, header included.
        let row = i + 2;
        let record = record.map_err(|e| err(row, e.to_string()))?;
        let field = |c: usize| -> Result<&str> {
            record
                .get(cols[c])
                .ok_or_else(|| err(row, format!("missing value for `{}`", MANIFEST_COLUMNS[c])))
        };
        let subject_id = field(0)?.to_string();
        if subject_id.is_empty() {
            return Err(err(row, "empty subject_id".into()));
        }
        if !seen.insert(subject_id.clone()) {
            return Err(err(row, format!("duplicate subject_id `{subject_id}`")));
        }
        let resolve = |s: &str| (!s.is_empty()).then(|| base.join(s));
        let reading_path = resolve(field(1)?);
        let interview_path = resolve(field(2)?);
        let label = field(3)?.parse::<Label>().map_err(|m| err(row, m))?;
        entries.push(ManifestEntry {
            subject_id,
            reading_path,
            interview_path,
            label,
        });
    }
    Ok(entries)
}

/// Writes a manifest with paths relative to `dir` where possible.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("manifest write: {e}"));
    w.write_record(MANIFEST_COLUMNS).map_err(csv_err)?;
    let rel = |p: &Option<PathBuf>| -> String {
        p.as_ref()
            .map(|p| {
                p.strip_prefix(dir)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .into_owned()
            })
            .unwrap_or_default()
    };
    for e in entries {
        w.write_record([
            e.subject_id.as_str(),
            &rel(&e.reading_path),
            &rel(&e.interview_path),
            e.label.as_str(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("manifest write: {e}")))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
