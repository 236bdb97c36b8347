//! Cross-validation report and its text format.
//!
//! The file is line-oriented `key = value` text:
//!
//! ```text
//! report_version = 1
//! seed = 7
//! runs = 4
//! folds = 5
//! entries = 20
//! partial = false
//! wall_clock_secs = 412.7
//! config.<key> = <TOML value>            (one line per configuration key)
//! fold run=0 fold=0 tp=4 fp=0 tn=4 fn=0 precision=100.00 recall=100.00 f1=100.00 accuracy=100.00 specificity=100.00 undefined=- final_loss=0.0123
//! aggregate.precision = 97.50 ± 5.00     (one line per metric, only when complete)
//! ```
//!
//! Percentages carry two decimals. `final_loss` is written with enough
//! digits to round-trip exactly, and the per-fold metrics are recomputed
//! from the confusion counts when reading, so parsing is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::metrics::{Metrics, METRIC_NAMES};
use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// Metrics of one (run, fold) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldEntry {
    pub run: usize,
    pub fold: usize,
    pub metrics: Metrics,
    /// Mean training loss of the last epoch.
    pub final_loss: f64,
}

/// Mean and population standard deviation of one metric, in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }

    /// `"85.00 ± 5.00"`.
    pub fn format(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Per-metric mean ± std over all entries, in [`METRIC_NAMES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub metrics: Vec<(&'static str, MeanStd)>,
}

impl Aggregate {
    pub fn get(&self, name: &str) -> Option<MeanStd> {
        self.metrics
            .iter()
            .find(|(n, _)| *n == name)
            .map(|&(_, m)| m)
    }
}

/// Aggregates entries that must cover every `(run, fold)` pair exactly once.
pub fn aggregate_report(entries: &[FoldEntry], runs: usize, folds: usize) -> Result<Aggregate> {
    let mut seen = vec![false; runs * folds];
    for e in entries {
        if e.run >= runs
            || e.fold >= folds
            || std::mem::replace(&mut seen[e.run * folds + e.fold], true)
        {
            return Err(Error::Report(format!(
                "unexpected or duplicate entry run={} fold={}",
                e.run, e.fold
            )));
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Report(format!(
            "missing entry run={} fold={} ({} of {} present)",
            missing / folds,
            missing % folds,
            entries.len(),
            runs * folds
        )));
    }
    Ok(Aggregate {
        metrics: METRIC_NAMES
            .iter()
            .map(|&name| {
                let values: Vec<f64> = entries
                    .iter()
                    .map(|e| 100.0 * e.metrics.get(name).unwrap())
                    .collect();
                (name, MeanStd::of(&values))
            })
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub config: ModelConfig,
    pub seed: u64,
    pub runs: usize,
    pub folds: usize,
    /// Sorted by (run, fold).
    pub entries: Vec<FoldEntry>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn is_complete(&self) -> bool {
        self.aggregate().is_ok()
    }

    pub fn aggregate(&self) -> Result<Aggregate> {
        aggregate_report(&self.entries, self.runs, self.folds)
    }

    /// Equality ignoring the wall-clock field.
    pub fn same_results(&self, other: &RunReport) -> bool {
        self.to_text_without_timing() == other.to_text_without_timing()
    }

    fn to_text_without_timing(&self) -> String {
        self.to_text()
            .lines()
            .filter(|l| !l.starts_with("wall_clock_secs"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn to_text(&self) -> String {
        let aggregate = self.aggregate().ok();
        let mut s = String::new();
        writeln!(s, "report_version = {REPORT_VERSION}").unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "runs = {}", self.runs).unwrap();
        writeln!(s, "folds = {}", self.folds).unwrap();
        writeln!(s, "entries = {}", self.entries.len()).unwrap();
        writeln!(s, "partial = {}", aggregate.is_none()).unwrap();
        writeln!(s, "wall_clock_secs = {:.3}", self.wall_clock_secs).unwrap();
        for line in self
            .config
            .to_toml()
            .lines()
            .filter(|l| !l.trim().is_empty())
        {
            writeln!(s, "config.{line}").unwrap();
        }
        for e in &self.entries {
            let m = &e.metrics;
            let undefined: Vec<&str> = [
                ("precision", m.undefined.precision),
                ("recall", m.undefined.recall),
                ("f1", m.undefined.f1),
                ("specificity", m.undefined.specificity),
            ]
            .iter()
            .filter(|(_, u)| *u)
            .map(|(n, _)| *n)
            .collect();
            write!(
                s,
                "fold run={} fold={} tp={} fp={} tn={} fn={}",
                e.run, e.fold, m.tp, m.fp, m.tn, m.fn_
            )
            .unwrap();
            for name in METRIC_NAMES {
                write!(s, " {name}={:.2}", 100.0 * m.get(name).unwrap()).unwrap();
            }
            let undefined = if undefined.is_empty() {
                "-".to_string()
            } else {
                undefined.join(",")
            };
            writeln!(s, " undefined={undefined} final_loss={:?}", e.final_loss).unwrap();
        }
        if let Some(agg) = aggregate {
            for (name, ms) in &agg.metrics {
                writeln!(s, "aggregate.{name} = {}", ms.format()).unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Report(format!("line {}: {msg}", line + 1));
        let mut seed = None;
        let mut runs = None;
        let mut folds = None;
        let mut declared_entries = None;
        let mut wall_clock_secs = 0.0;
        let mut config_lines = String::new();
        let mut entries = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("fold ") {
                entries.push(parse_fold_line(rest).map_err(|m| bad(ln, &m))?);
                continue;
            }
            let (key, value) = line
                .split_once(" = ")
                .ok_or_else(|| bad(ln, "expected `key = value`"))?;
            let int = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| bad(ln, &format!("bad integer `{v}`")))
            };
            match key {
                "report_version" => {
                    if int(value)? != REPORT_VERSION as u64 {
                        return Err(bad(ln, &format!("unsupported report version {value}")));
                    }
                }
                "seed" => seed = Some(int(value)?),
                "runs" => runs = Some(int(value)? as usize),
                "folds" => folds = Some(int(value)? as usize),
                "entries" => declared_entries = Some(int(value)? as usize),
                "partial" => {}
                "wall_clock_secs" => {
                    wall_clock_secs = value.parse().map_err(|_| bad(ln, "bad wall_clock_secs"))?;
                }
                k if k.starts_with("config.") => {
                    writeln!(config_lines, "{} = {value}", &k["config.".len()..]).unwrap();
                }
                k if k.starts_with("aggregate.") => {}
                other => return Err(bad(ln, &format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Report(format!("missing `{k}`"));
        if declared_entries.is_some_and(|n| n != entries.len()) {
            return Err(Error::Report(format!(
                "declared {} entries, found {}",
                declared_entries.unwrap(),
                entries.len()
            )));
        }
        Ok(Self {
            config: ModelConfig::from_toml(&config_lines)?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            runs: runs.ok_or_else(|| missing("runs"))?,
            folds: folds.ok_or_else(|| missing("folds"))?,
            entries,
            wall_clock_secs,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Human-readable table: one row per metric, mean ± std in percent.
    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "head={} inputs={:?} fusion={:?} runs={} folds={} seed={}",
            self.config.head,
            self.config.inputs,
            self.config.fusion,
            self.runs,
            self.folds,
            self.seed
        )
        .unwrap();
        match self.aggregate() {
            Ok(agg) => {
                writeln!(s, "{:<12} {:>16}", "metric", "mean ± std (%)").unwrap();
                for (name, ms) in &agg.metrics {
                    writeln!(s, "{:<12} {:>16}", title(name), ms.format()).unwrap();
                }
            }
            Err(e) => writeln!(s, "partial report, no aggregate: {e}").unwrap(),
        }
        s
    }
}

fn title(name: &str) -> String {
    match name {
        "f1" => "F1".into(),
        other => {
            let mut c = other.chars();
            c.next()
                .map(|f| f.to_uppercase().chain(c).collect())
                .unwrap_or_default()
        }
    }
}

fn parse_fold_line(rest: &str) -> std::result::Result<FoldEntry, String> {
    let mut fields = std::collections::HashMap::new();
    for token in rest.split_whitespace() {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| format!("bad field `{token}`"))?;
        fields.insert(k, v);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| format!("fold row lacks `{k}`"))
    };
    let int = |k: &str| -> std::result::Result<usize, String> {
        get(k)?
            .parse()
            .map_err(|_| format!("bad integer for `{k}`"))
    };
    let metrics = Metrics::from_counts(int("tp")?, int("fp")?, int("tn")?, int("fn")?)
        .map_err(|e| e.to_string())?;
    let final_loss = get("final_loss")?
        .parse()
        .map_err(|_| "bad final_loss".to_string())?;
    Ok(FoldEntry {
        run: int("run")?,
        fold: int("fold")?,
        metrics,
        final_loss,
    })
}
