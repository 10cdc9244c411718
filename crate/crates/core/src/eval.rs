//! Post-hoc evaluation of prediction logs: per-label confusion counts,
//! macro F-measure, equal-count windows and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offline::Model;
use crate::online::{process_stream, OnlineConfig, OnlineState, Prediction, Variant};
use crate::types::{Instance, LabelSet};

pub const DEFAULT_WINDOWS: usize = 50;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl LabelCounts {
    /// `2TP / (2TP + FP + FN)`, or `None` when the label never occurs in
    /// either predictions or truth.
    pub fn f_measure(&self) -> Option<f64> {
        let denom = 2 * self.tp + self.fp + self.fn_;
        (denom > 0).then(|| (2 * self.tp) as f64 / denom as f64)
    }

    fn add(&mut self, other: &LabelCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// How labels with no predictions and no support enter the macro average.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndefinedF {
    /// Count them as F = 0.
    #[default]
    Zero,
    /// Leave them out of the mean.
    Exclude,
}

pub fn confusion(preds: &[LabelSet], truths: &[LabelSet], n: usize) -> Result<Vec<LabelCounts>> {
    if preds.len() != truths.len() {
        return Err(Error::usage(format!(
            "{} predictions vs {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let mut counts = vec![LabelCounts::default(); n];
    for (p, t) in preds.iter().zip(truths) {
        p.check_bounds(n)?;
        t.check_bounds(n)?;
        accumulate(&mut counts, p, t);
    }
    Ok(counts)
}

fn accumulate(counts: &mut [LabelCounts], pred: &LabelSet, truth: &LabelSet) {
    for c in pred.iter() {
        if truth.contains(c) {
            counts[c].tp += 1;
        } else {
            counts[c].fp += 1;
        }
    }
    for c in truth.iter().filter(|&c| !pred.contains(c)) {
        counts[c].fn_ += 1;
    }
}

pub fn macro_f_from_counts(counts: &[LabelCounts], mode: UndefinedF) -> f64 {
    let scores: Vec<f64> = match mode {
        UndefinedF::Zero => counts.iter().map(|c| c.f_measure().unwrap_or(0.0)).collect(),
        UndefinedF::Exclude => counts.iter().filter_map(LabelCounts::f_measure).collect(),
    };
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// Macro-averaged F-measure with undefined labels scored as 0.
pub fn macro_f(preds: &[LabelSet], truths: &[LabelSet], n: usize) -> Result<f64> {
    Ok(macro_f_from_counts(&confusion(preds, truths, n)?, UndefinedF::Zero))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window_index: usize,
    pub n_instances: usize,
    pub macro_f: f64,
    pub counts: Vec<LabelCounts>,
}

impl WindowReport {
    pub fn label_f(&self) -> Vec<f64> {
        self.counts.iter().map(|c| c.f_measure().unwrap_or(0.0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub dataset: String,
    pub variant: Variant,
    pub grid_dim: usize,
    pub eta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub meta: RunMeta,
    pub n_classes: usize,
    pub undefined_f: UndefinedF,
    pub windows: Vec<WindowReport>,
    pub mean_macro_f: f64,
}

impl RunReport {
    /// Confusion counts summed over all windows.
    pub fn total_counts(&self) -> Vec<LabelCounts> {
        let mut total = vec![LabelCounts::default(); self.n_classes];
        for w in &self.windows {
            for (t, c) in total.iter_mut().zip(&w.counts) {
                t.add(c);
            }
        }
        total
    }
}

/// Sizes of `w` contiguous windows over `len` items; the first `len % w` get one extra.
pub fn window_sizes(len: usize, w: usize) -> Result<Vec<usize>> {
    if w == 0 {
        return Err(Error::usage("window count must be at least 1"));
    }
    if len < w {
        return Err(Error::usage(format!(
            "only {len} instances for {w} windows; use at most {len} windows"
        )));
    }
    let (base, extra) = (len / w, len % w);
    Ok((0..w).map(|i| base + usize::from(i < extra)).collect())
}

/// Scores a prediction log against ground truth in `w` equal-count windows.
/// `truths[i]` must carry the same sequence id as `log[i]`.
pub fn windowed_evaluate(
    log: &[Prediction],
    truths: &[(u64, LabelSet)],
    n_classes: usize,
    w: usize,
    mode: UndefinedF,
    meta: RunMeta,
) -> Result<RunReport> {
    if log.len() != truths.len() {
        return Err(Error::usage(format!(
            "log has {} rows but {} truths were supplied",
            log.len(),
            truths.len()
        )));
    }
    if let Some((p, _)) = log.iter().zip(truths).find(|(p, t)| p.sequence_id != t.0) {
        return Err(Error::usage(format!(
            "log and truth misaligned at sequence id {}",
            p.sequence_id
        )));
    }
    let sizes = window_sizes(log.len(), w)?;
    let mut windows = Vec::with_capacity(w);
    let mut start = 0;
    for (window_index, size) in sizes.into_iter().enumerate() {
        let mut counts = vec![LabelCounts::default(); n_classes];
        for (p, (_, t)) in log[start..start + size].iter().zip(&truths[start..start + size]) {
            p.labels.check_bounds(n_classes)?;
            t.check_bounds(n_classes)?;
            accumulate(&mut counts, &p.labels, t);
        }
        windows.push(WindowReport {
            window_index,
            n_instances: size,
            macro_f: macro_f_from_counts(&counts, mode),
            counts,
        });
        start += size;
    }
    let mean_macro_f = windows.iter().map(|w| w.macro_f).sum::<f64>() / windows.len() as f64;
    Ok(RunReport {
        meta,
        n_classes,
        undefined_f: mode,
        windows,
        mean_macro_f,
    })
}

/// Runs the online pipeline with adaptation disabled. `model` is not modified.
pub fn run_frozen_baseline<I>(model: &Model, stream: I) -> Result<Vec<Prediction>>
where
    I: IntoIterator<Item = Instance>,
{
    let cfg = OnlineConfig {
        variant: Variant::Frozen,
        ..OnlineConfig::default()
    };
    let mut state = OnlineState::new(model.clone(), cfg)?;
    Ok(process_stream(&mut state, stream))
}

pub fn windows_table(report: &RunReport) -> String {
    let mut out = String::from("window_index,macro_f,n_instances");
    for j in 0..report.n_classes {
        write!(out, ",f_y{j}").unwrap();
    }
    out.push('\n');
    for w in &report.windows {
        write!(out, "{},{:?},{}", w.window_index, w.macro_f, w.n_instances).unwrap();
        for f in w.label_f() {
            write!(out, ",{f:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct SummaryRef<'a> {
    schema_version: u32,
    report: &'a RunReport,
}

#[derive(Deserialize)]
struct SummaryHeader {
    schema_version: u32,
}

#[derive(Deserialize)]
struct Summary {
    report: RunReport,
}

pub fn summary_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(&SummaryRef {
        schema_version: REPORT_SCHEMA_VERSION,
        report,
    })
    .expect("report serializes");
    s.push('\n');
    s
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub table: PathBuf,
    pub summary: PathBuf,
}

impl ReportFiles {
    pub fn for_prefix(dir: &Path, prefix: &str) -> Self {
        ReportFiles {
            table: dir.join(format!("{prefix}_windows.csv")),
            summary: dir.join(format!("{prefix}_summary.json")),
        }
    }
}

/// Writes `<prefix>_windows.csv` (one row per window) and
/// `<prefix>_summary.json` (the full report) into `dir`.
pub fn emit_report(report: &RunReport, dir: &Path, prefix: &str) -> Result<ReportFiles> {
    let files = ReportFiles::for_prefix(dir, prefix);
    crate::fsutil::write_atomic(&files.table, windows_table(report).as_bytes())?;
    if let Err(e) = crate::fsutil::write_atomic(&files.summary, summary_json(report).as_bytes()) {
        let _ = fs::remove_file(&files.table);
        return Err(e);
    }
    Ok(files)
}

pub fn load_report(summary: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(summary).map_err(|e| Error::io(summary, e))?;
    let parse_err = |e: serde_json::Error| Error::Parse {
        source_name: summary.display().to_string(),
        line: e.line() as u64,
        message: e.to_string(),
    };
    let header: SummaryHeader = serde_json::from_str(&text).map_err(parse_err)?;
    if header.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::Version {
            found: header.schema_version,
            expected: REPORT_SCHEMA_VERSION,
        });
    }
    let s: Summary = serde_json::from_str(&text).map_err(parse_err)?;
    Ok(s.report)
}

/// Per-window adaptive-minus-frozen table.
pub fn comparison_table(adaptive: &RunReport, frozen: &RunReport) -> Result<String> {
    if adaptive.windows.len() != frozen.windows.len() {
        return Err(Error::usage("reports have different window counts"));
    }
    let mut out = String::from("window_index,adaptive_macro_f,frozen_macro_f,delta\n");
    for (a, f) in adaptive.windows.iter().zip(&frozen.windows) {
        writeln!(
            out,
            "{},{:?},{:?},{:?}",
            a.window_index,
            a.macro_f,
            f.macro_f,
            a.macro_f - f.macro_f
        )
        .unwrap();
    }
    Ok(out)
}
