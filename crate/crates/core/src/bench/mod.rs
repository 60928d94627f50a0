//! Deep mutational scanning benchmark: assay ingestion and cleanup, label
//! binarization, per-assay metrics and protein-level aggregation with
//! bucketed breakdowns.

mod metrics;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::score::ScoreRow;
use crate::seq::{parse_mutation, ProteinSequence};

pub use metrics::{auc, average_ranks, mcc, median, pearson, spearman, Confusion, Mcc};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{file}: {reason}")]
    Format { file: String, reason: String },
    #[error("assay {0} has no entry in the reference table")]
    UnmappedAssay(String),
    #[error("assay {assay}: no score for {missing} of {total} mutants (first: {first})")]
    MissingScores { assay: String, missing: usize, total: usize, first: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutoffMethod {
    Manual,
    Median,
}

impl CutoffMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Manual => "manual",
            Self::Median => "median",
        }
    }
}

/// One row of the reference table.
#[derive(Debug, Clone, PartialEq)]
pub struct AssayMeta {
    pub assay_id: String,
    pub uniprot_id: String,
    pub cutoff: Option<f64>,
    pub cutoff_method: Option<CutoffMethod>,
    pub msa_depth_bucket: String,
    pub mutation_depth_bucket: String,
    pub taxon: String,
    /// Wild type the mutant codes refer to, when the table provides it.
    pub target_seq: Option<ProteinSequence>,
}

const REFERENCE_COLUMNS: [&str; 7] =
    ["assay_id", "uniprot_id", "cutoff", "cutoff_method", "msa_depth_bucket", "mutation_depth_bucket", "taxon"];

/// Reads `assay_id,uniprot_id,cutoff,cutoff_method,msa_depth_bucket,
/// mutation_depth_bucket,taxon` with an optional `target_seq` column.
/// Empty cutoff fields mean "not recorded".
pub fn read_reference(bytes: &[u8], file: &str) -> Result<Vec<AssayMeta>, BenchError> {
    let fail = |line: u64, reason: String| BenchError::Format { file: file.to_string(), reason: format!("line {line}: {reason}") };
    let mut rdr = csv::Reader::from_reader(bytes);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(REFERENCE_COLUMNS) {
        *slot = col(name).ok_or_else(|| fail(1, format!("missing column {name}")))?;
    }
    let target = col("target_seq");
    let mut out: Vec<AssayMeta> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
        let cutoff = match field(idx[2]).as_str() {
            "" => None,
            v => Some(v.parse::<f64>().ok().filter(|c| c.is_finite()).ok_or_else(|| fail(line, format!("bad cutoff {v:?}")))?),
        };
        let cutoff_method = match field(idx[3]).to_ascii_lowercase().as_str() {
            "" => None,
            "manual" => Some(CutoffMethod::Manual),
            "median" => Some(CutoffMethod::Median),
            v => return Err(fail(line, format!("cutoff_method must be manual or median, got {v:?}"))),
        };
        let assay_id = field(idx[0]);
        if assay_id.is_empty() {
            return Err(fail(line, "empty assay_id".into()));
        }
        if out.iter().any(|m| m.assay_id == assay_id) {
            return Err(fail(line, format!("duplicate assay_id {assay_id}")));
        }
        let target_seq = match target.map(field).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => Some(ProteinSequence::new(assay_id.clone(), s.as_bytes()).map_err(|e| fail(line, e.to_string()))?),
        };
        out.push(AssayMeta {
            uniprot_id: field(idx[1]),
            cutoff,
            cutoff_method,
            msa_depth_bucket: field(idx[4]),
            mutation_depth_bucket: field(idx[5]),
            taxon: field(idx[6]),
            target_seq,
            assay_id,
        });
    }
    Ok(out)
}

/// An assay row as read: the measurement may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAssayRow {
    pub line: u64,
    pub mutant: String,
    pub dms_score: Option<f64>,
}

/// Reads `mutant,DMS_score`; other columns are ignored. Empty, `NA` and
/// `NaN` measurements are missing.
pub fn read_assay_csv(bytes: &[u8], file: &str) -> Result<Vec<RawAssayRow>, BenchError> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h.trim() == name).ok_or_else(|| BenchError::Format {
            file: file.to_string(),
            reason: format!("missing column {name}"),
        })
    };
    let (m, s) = (col("mutant")?, col("DMS_score")?);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let raw = rec.get(s).unwrap_or("").trim();
        let dms_score = match raw {
            "" | "NA" | "nan" | "NaN" => None,
            v => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Some(x),
                _ => {
                    return Err(BenchError::Format { file: file.to_string(), reason: format!("line {line}: bad DMS_score {v:?}") })
                }
            },
        };
        rows.push(RawAssayRow { line, mutant: rec.get(m).unwrap_or("").trim().to_string(), dms_score });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssayRow {
    pub mutant: String,
    pub dms_score: f64,
}

/// A cleaned assay: unique mutants, all measured, higher is fitter.
#[derive(Debug, Clone, PartialEq)]
pub struct AssayTable {
    pub assay_id: String,
    pub rows: Vec<AssayRow>,
}

/// What preprocessing removed or merged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreprocessSummary {
    pub input_rows: usize,
    pub silent_removed: usize,
    pub duplicates_merged: usize,
    pub missing_dropped: usize,
    /// `(line, message)` for rows whose mutant code did not parse.
    pub errors: Vec<(u64, String)>,
}

/// Key under which a mutant code is matched across tables: the canonical
/// code when the wild type is known, the trimmed text otherwise.
pub fn mutant_key(code: &str, wild_type: Option<&ProteinSequence>) -> Result<String, String> {
    match wild_type {
        Some(wt) => parse_mutation(code, wt).map(|m| m.to_code()).map_err(|e| e.to_string()),
        None if code.trim().is_empty() => Err("empty mutation code".into()),
        None => Ok(code.trim().to_string()),
    }
}

/// True for codes made only of substitutions to the same residue; used
/// when no wild type is available to materialize the mutant.
fn lexically_silent(code: &str) -> bool {
    code.split(':').all(|t| {
        let b = t.as_bytes();
        b.len() >= 3
            && b[0].is_ascii_alphabetic()
            && b[0].eq_ignore_ascii_case(&b[b.len() - 1])
            && b[1..b.len() - 1].iter().all(u8::is_ascii_digit)
    })
}

/// Drops missing measurements, unparseable codes and silent mutations,
/// then merges duplicate mutants by averaging. Rows keep first-seen order.
pub fn preprocess_assay(
    assay_id: &str,
    raw: &[RawAssayRow],
    wild_type: Option<&ProteinSequence>,
) -> (AssayTable, PreprocessSummary) {
    let mut summary = PreprocessSummary { input_rows: raw.len(), ..Default::default() };
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<f64>> = HashMap::new();
    for r in raw {
        let Some(score) = r.dms_score else {
            summary.missing_dropped += 1;
            continue;
        };
        let silent = match wild_type {
            Some(wt) => match parse_mutation(&r.mutant, wt) {
                Ok(m) => m.is_silent(),
                Err(e) => {
                    summary.errors.push((r.line, e.to_string()));
                    continue;
                }
            },
            None => lexically_silent(&r.mutant),
        };
        if silent {
            summary.silent_removed += 1;
            continue;
        }
        let key = match mutant_key(&r.mutant, wild_type) {
            Ok(k) => k,
            Err(e) => {
                summary.errors.push((r.line, e));
                continue;
            }
        };
        let g = groups.entry(key.clone()).or_default();
        if g.is_empty() {
            order.push(key);
        } else {
            summary.duplicates_merged += 1;
        }
        g.push(score);
    }
    let rows = order
        .into_iter()
        .map(|k| {
            let v = &groups[&k];
            AssayRow { dms_score: v.iter().sum::<f64>() / v.len() as f64, mutant: k }
        })
        .collect();
    (AssayTable { assay_id: assay_id.to_string(), rows }, summary)
}

/// Labels and the cutoff that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Binarized {
    pub labels: Vec<bool>,
    pub cutoff: f64,
    pub method: CutoffMethod,
    /// Set when the metadata did not specify a usable cutoff.
    pub defaulted: bool,
}

/// `label = score > cutoff`. A recorded cutoff value is used as is; a
/// median method without a value, or no usable metadata, falls back to
/// the median of `scores`.
pub fn binarize_labels(scores: &[f64], cutoff: Option<f64>, method: Option<CutoffMethod>) -> Binarized {
    let (cutoff, method, defaulted) = match (cutoff, method) {
        (Some(c), Some(m)) => (c, m, false),
        (None, Some(CutoffMethod::Median)) => (median(scores).unwrap_or(0.0), CutoffMethod::Median, false),
        _ => {
            log::warn!("no usable binarization cutoff recorded; using the median");
            (median(scores).unwrap_or(0.0), CutoffMethod::Median, true)
        }
    };
    Binarized { labels: scores.iter().map(|&s| s > cutoff).collect(), cutoff, method, defaulted }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssayMetrics {
    pub assay_id: String,
    pub n: usize,
    pub spearman: Option<f64>,
    pub auc: Option<f64>,
    pub mcc: Option<f64>,
    pub mcc_degenerate: bool,
    pub cutoff: f64,
    pub cutoff_defaulted: bool,
}

/// Metrics of `predicted` (aligned with `dms`) against the measurements.
pub fn assay_metrics(assay_id: &str, predicted: &[f64], dms: &[f64], meta: Option<&AssayMeta>) -> AssayMetrics {
    let b = binarize_labels(dms, meta.and_then(|m| m.cutoff), meta.and_then(|m| m.cutoff_method));
    let m = mcc(predicted, &b.labels);
    AssayMetrics {
        assay_id: assay_id.to_string(),
        n: dms.len(),
        spearman: if dms.len() >= 2 { spearman(predicted, dms) } else { None },
        auc: auc(predicted, &b.labels),
        mcc: m.map(|m| m.value),
        mcc_degenerate: m.is_some_and(|m| m.degenerate),
        cutoff: b.cutoff,
        cutoff_defaulted: b.defaulted,
    }
}

/// Joins scores to a cleaned assay and computes its metrics. Every assay
/// mutant needs a score; extra scored mutants are ignored.
pub fn evaluate_assay(
    table: &AssayTable,
    scores: &[ScoreRow],
    meta: &AssayMeta,
) -> Result<AssayMetrics, BenchError> {
    let by_key: HashMap<String, f64> = scores
        .iter()
        .filter_map(|r| mutant_key(&r.mutant, meta.target_seq.as_ref()).ok().map(|k| (k, r.f)))
        .collect();
    let mut predicted = Vec::with_capacity(table.rows.len());
    let mut missing = Vec::new();
    for r in &table.rows {
        match by_key.get(&r.mutant) {
            Some(&f) => predicted.push(f),
            None => missing.push(r.mutant.clone()),
        }
    }
    if let Some(first) = missing.first() {
        return Err(BenchError::MissingScores {
            assay: table.assay_id.clone(),
            missing: missing.len(),
            total: table.rows.len(),
            first: first.clone(),
        });
    }
    let dms: Vec<f64> = table.rows.iter().map(|r| r.dms_score).collect();
    Ok(assay_metrics(&table.assay_id, &predicted, &dms, Some(meta)))
}

/// Mean of the present values and how many there were.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanOf {
    pub mean: Option<f64>,
    pub count: usize,
}

fn mean_of(values: impl IntoIterator<Item = Option<f64>>) -> MeanOf {
    let present: Vec<f64> = values.into_iter().flatten().collect();
    let count = present.len();
    MeanOf { mean: (count > 0).then(|| present.iter().sum::<f64>() / count as f64), count }
}

/// Aggregated metrics over a set of assays.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    /// `overall`, `msa_depth`, `mutation_depth` or `taxon`.
    pub group: String,
    pub bucket: String,
    pub n_assays: usize,
    pub n_uniprot: usize,
    /// Each mean counts proteins with at least one present value.
    pub spearman: MeanOf,
    pub auc: MeanOf,
    pub mcc: MeanOf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_assay: Vec<AssayMetrics>,
    /// Overall first, then bucket groups in a fixed order, buckets sorted.
    pub aggregates: Vec<AggregateRow>,
}

impl MetricReport {
    pub fn overall(&self) -> &AggregateRow {
        &self.aggregates[0]
    }
}

/// Unweighted mean over assays within each protein, then over proteins.
/// Absent metrics are skipped, never zero-filled.
fn aggregate_group(group: &str, bucket: &str, assays: &[(&AssayMetrics, &AssayMeta)]) -> AggregateRow {
    let mut by_uniprot: BTreeMap<&str, Vec<&AssayMetrics>> = BTreeMap::new();
    for (m, meta) in assays {
        by_uniprot.entry(meta.uniprot_id.as_str()).or_default().push(m);
    }
    for v in by_uniprot.values_mut() {
        v.sort_by(|a, b| a.assay_id.cmp(&b.assay_id));
    }
    let level = |get: fn(&AssayMetrics) -> Option<f64>| {
        mean_of(by_uniprot.values().map(|v| mean_of(v.iter().map(|m| get(m))).mean))
    };
    AggregateRow {
        group: group.to_string(),
        bucket: bucket.to_string(),
        n_assays: assays.len(),
        n_uniprot: by_uniprot.len(),
        spearman: level(|m| m.spearman),
        auc: level(|m| m.auc),
        mcc: level(|m| m.mcc),
    }
}

pub const BUCKET_GROUPS: [&str; 3] = ["msa_depth", "mutation_depth", "taxon"];

/// Overall and per-bucket aggregates. Assays with an empty bucket label
/// are left out of that group's breakdown.
pub fn aggregate(per_assay: Vec<AssayMetrics>, reference: &[AssayMeta]) -> Result<MetricReport, BenchError> {
    let meta: HashMap<&str, &AssayMeta> = reference.iter().map(|m| (m.assay_id.as_str(), m)).collect();
    let mut per_assay = per_assay;
    per_assay.sort_by(|a, b| a.assay_id.cmp(&b.assay_id));
    let joined: Vec<(&AssayMetrics, &AssayMeta)> = per_assay
        .iter()
        .map(|m| meta.get(m.assay_id.as_str()).map(|&x| (m, x)).ok_or_else(|| BenchError::UnmappedAssay(m.assay_id.clone())))
        .collect::<Result<_, _>>()?;
    let mut aggregates = vec![aggregate_group("overall", "all", &joined)];
    for group in BUCKET_GROUPS {
        let label = |m: &AssayMeta| -> String {
            match group {
                "msa_depth" => m.msa_depth_bucket.clone(),
                "mutation_depth" => m.mutation_depth_bucket.clone(),
                _ => m.taxon.clone(),
            }
        };
        let mut buckets: BTreeMap<String, Vec<(&AssayMetrics, &AssayMeta)>> = BTreeMap::new();
        for &(m, x) in &joined {
            let b = label(x);
            if !b.is_empty() {
                buckets.entry(b).or_default().push((m, x));
            }
        }
        aggregates.extend(buckets.iter().map(|(b, v)| aggregate_group(group, b, v)));
    }
    Ok(MetricReport { per_assay, aggregates })
}

/// One assay ready for evaluation.
#[derive(Debug, Clone)]
pub struct BenchInput {
    pub table: AssayTable,
    pub scores: Vec<ScoreRow>,
}

/// Evaluates assays in parallel and aggregates serially.
pub fn run_benchmark(inputs: &[BenchInput], reference: &[AssayMeta]) -> Result<MetricReport, BenchError> {
    let meta: HashMap<&str, &AssayMeta> = reference.iter().map(|m| (m.assay_id.as_str(), m)).collect();
    let per_assay = inputs
        .par_iter()
        .map(|inp| {
            let m = meta
                .get(inp.table.assay_id.as_str())
                .ok_or_else(|| BenchError::UnmappedAssay(inp.table.assay_id.clone()))?;
            evaluate_assay(&inp.table, &inp.scores, m)
        })
        .collect::<Result<Vec<_>, _>>()?;
    aggregate(per_assay, reference)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// `assay_id,n,spearman,auc,mcc,mcc_degenerate,cutoff,cutoff_defaulted`
pub fn write_per_assay<W: Write>(out: W, report: &MetricReport) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["assay_id", "n", "spearman", "auc", "mcc", "mcc_degenerate", "cutoff", "cutoff_defaulted"])?;
    for m in &report.per_assay {
        w.write_record([
            m.assay_id.clone(),
            m.n.to_string(),
            fmt_opt(m.spearman),
            fmt_opt(m.auc),
            fmt_opt(m.mcc),
            m.mcc_degenerate.to_string(),
            m.cutoff.to_string(),
            m.cutoff_defaulted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `group,bucket,n_assays,n_uniprot,spearman,auc,mcc,n_spearman,n_auc,n_mcc`
pub fn write_aggregates<W: Write>(out: W, report: &MetricReport) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "group", "bucket", "n_assays", "n_uniprot", "spearman", "auc", "mcc", "n_spearman", "n_auc", "n_mcc",
    ])?;
    for a in &report.aggregates {
        w.write_record([
            a.group.clone(),
            a.bucket.clone(),
            a.n_assays.to_string(),
            a.n_uniprot.to_string(),
            fmt_opt(a.spearman.mean),
            fmt_opt(a.auc.mean),
            fmt_opt(a.mcc.mean),
            a.spearman.count.to_string(),
            a.auc.count.to_string(),
            a.mcc.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width summary: one block per group, three decimals.
pub fn format_table(report: &MetricReport) -> String {
    let cell = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
    let mut s = String::new();
    let mut current = "";
    for a in &report.aggregates {
        if a.group != current {
            if !current.is_empty() {
                s.push('\n');
            }
            current = &a.group;
            let _ = writeln!(s, "{:<20} {:>8} {:>8} {:>8} {:>7} {:>9}", a.group, "Spearman", "AUC", "MCC", "assays", "proteins");
        }
        let _ = writeln!(
            s,
            "{:<20} {:>8} {:>8} {:>8} {:>7} {:>9}",
            a.bucket,
            cell(a.spearman.mean),
            cell(a.auc.mean),
            cell(a.mcc.mean),
            a.n_assays,
            a.n_uniprot
        );
    }
    s
}
