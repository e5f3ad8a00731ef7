//! Command implementations behind the `cocoedit` binary: masked-consistency
//! benchmark evaluation, score filtering with histograms, Pearson
//! correlation reports, mask dilation, and the toy training entry point.
//!
//! Every command writes deterministic, timestamp-free outputs, so reruns on
//! identical inputs are byte-identical.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{ConfigError, RunConfig};
use crate::grid::pgm::{read_pgm_grid, read_pgm_mask, write_pgm_mask};
use crate::metrics::{masked_psnr_db, masked_psnr_norm, masked_ssim, pearson, MetricConfig};
use crate::rewards::read_score_file;
use crate::trainer::{train, TrainError};

/// Default strict retention threshold of the `filter` command.
pub const DEFAULT_FILTER_THRESHOLD: f64 = 9.4;

/// CLI failure classes, mapped to process exit codes by the binary.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or config schema violation (exit 1).
    Usage(String),
    /// Unreadable or inconsistent data (exit 2).
    Data(String),
    /// Non-finite values during optimization (exit 3).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match &e {
            ConfigError::UnknownKeys(_) | ConfigError::InvalidOverride(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

/// Thread cap for data-parallel commands: `COCOEDIT_THREADS` when set,
/// otherwise the machine's available parallelism.
pub fn thread_cap() -> usize {
    match std::env::var("COCOEDIT_THREADS") {
        Ok(v) => v.parse::<usize>().ok().filter(|&n| n > 0).unwrap_or(1),
        Err(_) => std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1),
    }
}

/// Map `f` over `items` on up to `threads` workers, preserving input order.
fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let n = items.len();
    let threads = threads.max(1).min(n.max(1));
    if threads <= 1 || n <= 1 {
        return items.iter().map(&f).collect();
    }
    let mut results: Vec<Option<R>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(threads);
    let f = &f;
    std::thread::scope(|scope| {
        for (in_chunk, out_chunk) in items.chunks(chunk).zip(results.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (item, slot) in in_chunk.iter().zip(out_chunk.iter_mut()) {
                    *slot = Some(f(item));
                }
            });
        }
    });
    results.into_iter().map(|r| r.unwrap()).collect()
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{v:.6}")
    }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// One line of the benchmark manifest.
#[derive(Debug, Clone, serde::Deserialize)]
struct ManifestEntry {
    id: String,
    input: String,
    edited: String,
    mask: String,
    #[serde(default)]
    edit_type: Option<String>,
}

/// Metric values of one successfully evaluated sample.
#[derive(Debug, Clone, Copy)]
pub struct EvalMetrics {
    pub psnr_db: f64,
    pub psnr_norm: f64,
    pub ssim: f64,
    /// Fraction of pixels in the evaluated (non-edit) region.
    pub active_pixel_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub id: String,
    pub edit_type: Option<String>,
    pub result: Result<EvalMetrics, String>,
}

#[derive(Debug, Clone)]
pub struct AggregateRow {
    /// Edit type, or "overall".
    pub group: String,
    pub count: usize,
    pub psnr_db: f64,
    pub psnr_norm: f64,
    pub ssim: f64,
    pub active_pixel_fraction: f64,
}

#[derive(Debug)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl EvalReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.result.is_err()).count()
    }
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read manifest {}: {e}", path.display())))?;
    let mut entries = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("manifest line {}: {e}", i + 1)))?;
        if let Some(prev) = seen.insert(entry.id.clone(), i + 1) {
            return Err(CliError::Data(format!(
                "duplicate manifest id {:?} on lines {prev} and {}",
                entry.id,
                i + 1
            )));
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(CliError::Data(format!(
            "manifest {} contains no entries",
            path.display()
        )));
    }
    Ok(entries)
}

fn evaluate_entry(entry: &ManifestEntry, cfg: &MetricConfig) -> Result<EvalMetrics, String> {
    let input = read_pgm_grid(&entry.input).map_err(|e| format!("input: {e}"))?;
    let edited = read_pgm_grid(&entry.edited).map_err(|e| format!("edited: {e}"))?;
    let mask = read_pgm_mask(&entry.mask).map_err(|e| format!("mask: {e}"))?;
    // Masks arrive in edit=1 orientation; consistency is measured over the
    // complement.
    let region = mask.complement();
    let psnr_db = masked_psnr_db(&input, &edited, &region, cfg).map_err(|e| e.to_string())?;
    let psnr_norm = masked_psnr_norm(&input, &edited, &region, cfg).map_err(|e| e.to_string())?;
    let ssim = masked_ssim(&input, &edited, &region, cfg).map_err(|e| e.to_string())?;
    Ok(EvalMetrics {
        psnr_db: psnr_db.value,
        psnr_norm: psnr_norm.value,
        ssim: ssim.value,
        active_pixel_fraction: region.active_count() as f64 / region.len() as f64,
    })
}

fn aggregate(rows: &[EvalRow]) -> Vec<AggregateRow> {
    let mut by_type: HashMap<&str, Vec<&EvalMetrics>> = HashMap::new();
    let mut all = Vec::new();
    for row in rows {
        if let Ok(m) = &row.result {
            all.push(m);
            if let Some(t) = &row.edit_type {
                by_type.entry(t.as_str()).or_default().push(m);
            }
        }
    }
    let mean = |group: &str, ms: &[&EvalMetrics]| {
        let n = ms.len() as f64;
        AggregateRow {
            group: group.to_string(),
            count: ms.len(),
            psnr_db: ms.iter().map(|m| m.psnr_db).sum::<f64>() / n,
            psnr_norm: ms.iter().map(|m| m.psnr_norm).sum::<f64>() / n,
            ssim: ms.iter().map(|m| m.ssim).sum::<f64>() / n,
            active_pixel_fraction: ms.iter().map(|m| m.active_pixel_fraction).sum::<f64>() / n,
        }
    };
    let mut types: Vec<&str> = by_type.keys().copied().collect();
    types.sort_unstable();
    let mut out: Vec<AggregateRow> = types.iter().map(|t| mean(t, &by_type[t])).collect();
    if !all.is_empty() {
        out.push(mean("overall", &all));
    }
    out
}

/// Evaluate every manifest row (in parallel, capped by `threads`) and
/// aggregate unweighted means per edit type and overall.
pub fn evaluate_manifest(
    manifest_path: &Path,
    cfg: &MetricConfig,
    threads: usize,
) -> Result<EvalReport, CliError> {
    let entries = read_manifest(manifest_path)?;
    let results = parallel_map(&entries, threads, |e| evaluate_entry(e, cfg));
    let rows: Vec<EvalRow> = entries
        .into_iter()
        .zip(results)
        .map(|(e, result)| EvalRow {
            id: e.id,
            edit_type: e.edit_type,
            result,
        })
        .collect();
    let aggregates = aggregate(&rows);
    Ok(EvalReport { rows, aggregates })
}

/// CSV rendering: per-sample rows in manifest order, then aggregate rows
/// (`id = "mean"`), comma separated, LF line endings.
pub fn render_eval_csv(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("id,edit_type,psnr_db,psnr_norm,ssim,active_pixel_fraction,error\n");
    for row in &report.rows {
        let et = row.edit_type.as_deref().unwrap_or("");
        match &row.result {
            Ok(m) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},",
                    row.id,
                    et,
                    fmt_metric(m.psnr_db),
                    fmt_metric(m.psnr_norm),
                    fmt_metric(m.ssim),
                    fmt_metric(m.active_pixel_fraction)
                );
            }
            Err(msg) => {
                let _ = writeln!(out, "{},{},,,,,{}", row.id, et, msg.replace(',', ";"));
            }
        }
    }
    for agg in &report.aggregates {
        let _ = writeln!(
            out,
            "mean,{},{},{},{},{},",
            agg.group,
            fmt_metric(agg.psnr_db),
            fmt_metric(agg.psnr_norm),
            fmt_metric(agg.ssim),
            fmt_metric(agg.active_pixel_fraction)
        );
    }
    out
}

/// `eval` command: manifest in, CSV out. Failed samples become error rows;
/// unless `skip_errors` is set, any failure makes the command fail with a
/// data error after writing the CSV.
pub fn cmd_eval(
    manifest_path: &Path,
    cfg: &MetricConfig,
    out_csv: &Path,
    skip_errors: bool,
    threads: usize,
) -> Result<EvalReport, CliError> {
    let report = evaluate_manifest(manifest_path, cfg, threads)?;
    fs::write(out_csv, render_eval_csv(&report))
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", out_csv.display())))?;
    let failures = report.failures();
    if failures > 0 && !skip_errors {
        return Err(CliError::Data(format!(
            "{failures} of {} samples failed; report written to {}",
            report.rows.len(),
            out_csv.display()
        )));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// filter
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug)]
pub struct FilterOutcome {
    pub retained: Vec<(String, f64)>,
    pub rejected: Vec<(String, f64)>,
    pub histogram: Vec<HistogramBin>,
}

/// Edges of the refined tail bins; bin assignment compares against these
/// values directly, so boundary scores bin predictably.
pub const TAIL_EDGES: [f64; 5] = [9.0, 9.2, 9.4, 9.6, 9.8];

/// Histogram over `[0, 10]`: ten unit bins plus a refined 0.2-wide tail over
/// `[9, 10]`. Scores of exactly 10 land in the last bin of each family.
pub fn score_histogram(scores: &[f64]) -> Vec<HistogramBin> {
    let mut unit = [0usize; 10];
    let mut tail = [0usize; 5];
    for &s in scores {
        let u = (s.floor() as usize).min(9);
        unit[u] += 1;
        if s >= TAIL_EDGES[0] {
            let t = TAIL_EDGES.iter().rposition(|edge| s >= *edge).unwrap_or(0);
            tail[t] += 1;
        }
    }
    let mut bins = Vec::with_capacity(15);
    for (i, &count) in unit.iter().enumerate() {
        let (lo, hi) = (i as f64, i as f64 + 1.0);
        let bracket = if i == 9 { "]" } else { ")" };
        bins.push(HistogramBin {
            label: format!("[{lo:.0},{hi:.0}{bracket}"),
            lo,
            hi,
            count,
        });
    }
    for (i, &count) in tail.iter().enumerate() {
        let lo = 9.0 + 0.2 * i as f64;
        let hi = 9.0 + 0.2 * (i + 1) as f64;
        let bracket = if i == 4 { "]" } else { ")" };
        bins.push(HistogramBin {
            label: format!("[{lo:.1},{hi:.1}{bracket}"),
            lo,
            hi,
            count,
        });
    }
    bins
}

/// Deduplicate score records by id, keeping the last entry per id in
/// first-occurrence order (matching the file provider's policy).
pub fn dedupe_scores(records: &[(String, f64)]) -> Vec<(String, f64)> {
    let mut latest: HashMap<&str, f64> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for (id, score) in records {
        if latest.insert(id.as_str(), *score).is_none() {
            order.push(id.as_str());
        }
    }
    order
        .into_iter()
        .map(|id| (id.to_string(), latest[id]))
        .collect()
}

/// Partition unique ids by strict `score > threshold` and bin the scores.
pub fn filter_scores(records: &[(String, f64)], threshold: f64) -> FilterOutcome {
    let unique = dedupe_scores(records);
    let scores: Vec<f64> = unique.iter().map(|(_, s)| *s).collect();
    let histogram = score_histogram(&scores);
    let (retained, rejected): (Vec<_>, Vec<_>) =
        unique.into_iter().partition(|(_, s)| *s > threshold);
    FilterOutcome {
        retained,
        rejected,
        histogram,
    }
}

/// `filter` command: retain ids with score strictly above the threshold,
/// write them as JSON lines, and report the score histogram.
pub fn cmd_filter(
    scores_path: &Path,
    threshold: f64,
    out_path: &Path,
    histogram_path: Option<&Path>,
) -> Result<FilterOutcome, CliError> {
    let records = read_score_file(scores_path).map_err(|e| CliError::Data(e.to_string()))?;
    for (id, score) in &records {
        if !(0.0..=10.0).contains(score) {
            return Err(CliError::Data(format!(
                "score {score} for id {id:?} is outside the 0-10 rubric"
            )));
        }
    }
    let outcome = filter_scores(&records, threshold);
    let mut out = String::new();
    for (id, score) in &outcome.retained {
        let _ = writeln!(
            out,
            "{}",
            serde_json::json!({ "id": id, "score": score })
        );
    }
    fs::write(out_path, out)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", out_path.display())))?;
    if let Some(hp) = histogram_path {
        let mut csv = String::from("bin,lo,hi,count\n");
        for b in &outcome.histogram {
            let _ = writeln!(csv, "{},{},{},{}", b.label, b.lo, b.hi, b.count);
        }
        fs::write(hp, csv)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", hp.display())))?;
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// corr
// ---------------------------------------------------------------------------

/// `corr` command: inner-join two score files on id, report Pearson r, and
/// write the joined pairs for external plotting.
pub fn cmd_corr(
    a_path: &Path,
    b_path: &Path,
    out_csv: Option<&Path>,
) -> Result<f64, CliError> {
    let a = dedupe_scores(&read_score_file(a_path).map_err(|e| CliError::Data(e.to_string()))?);
    let b = dedupe_scores(&read_score_file(b_path).map_err(|e| CliError::Data(e.to_string()))?);
    let b_map: HashMap<&str, f64> = b.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    let mut pairs: Vec<(&str, f64, f64)> = Vec::new();
    for (id, sa) in &a {
        if let Some(&sb) = b_map.get(id.as_str()) {
            pairs.push((id, *sa, sb));
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Data(
            "the two score files share no ids".to_string(),
        ));
    }
    let xs: Vec<f64> = pairs.iter().map(|(_, x, _)| *x).collect();
    let ys: Vec<f64> = pairs.iter().map(|(_, _, y)| *y).collect();
    let r = pearson(&xs, &ys).map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(path) = out_csv {
        let mut csv = String::from("id,score_a,score_b\n");
        for (id, x, y) in &pairs {
            let _ = writeln!(csv, "{id},{},{}", fmt_metric(*x), fmt_metric(*y));
        }
        fs::write(path, csv)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(r)
}

// ---------------------------------------------------------------------------
// dilate
// ---------------------------------------------------------------------------

/// `dilate` command: square dilation of a PGM mask.
pub fn cmd_dilate(mask_in: &Path, radius: usize, mask_out: &Path) -> Result<(), CliError> {
    let mask = read_pgm_mask(mask_in).map_err(|e| CliError::Data(e.to_string()))?;
    let dilated = mask.dilate(radius);
    write_pgm_mask(&dilated, mask_out).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct TrainSummary {
    pub log_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub iterations: usize,
    pub first_mean_raw_reward: Option<f64>,
    pub final_mean_raw_reward: Option<f64>,
}

fn render_log(records: &[crate::trainer::IterationRecord]) -> String {
    let mut out = String::new();
    for rec in records {
        let _ = writeln!(out, "{}", serde_json::to_string(rec).expect("record serializes"));
    }
    out
}

/// `train` command: resolve the config (with overrides), run the loop, and
/// write the JSON-lines metrics log plus the final checkpoint. On abort the
/// checkpoint of the last completed iteration is written before the error is
/// returned.
pub fn cmd_train(
    config_path: &Path,
    overrides: &[String],
    log_path: &Path,
    checkpoint_path: &Path,
) -> Result<TrainSummary, CliError> {
    let run_cfg = RunConfig::from_path_with_overrides(config_path, overrides)?;
    let train_cfg = run_cfg.train_config();
    train_cfg
        .validate()
        .map_err(|e| CliError::Data(e.to_string()))?;
    let metric_cfg = run_cfg.metric_config()?;
    let provider = run_cfg.provider()?;
    let pool = run_cfg.task_pool(train_cfg.seed)?;

    match train(&train_cfg, &pool, provider.as_ref(), &metric_cfg) {
        Ok(outcome) => {
            fs::write(log_path, render_log(&outcome.records))
                .map_err(|e| CliError::Data(format!("cannot write {}: {e}", log_path.display())))?;
            outcome
                .policy
                .save(checkpoint_path)
                .map_err(|e| CliError::Data(e.to_string()))?;
            Ok(TrainSummary {
                log_path: log_path.to_path_buf(),
                checkpoint_path: checkpoint_path.to_path_buf(),
                iterations: outcome.records.len(),
                first_mean_raw_reward: outcome.records.first().map(|r| r.mean_raw_reward),
                final_mean_raw_reward: outcome.records.last().map(|r| r.mean_raw_reward),
            })
        }
        Err(abort) => {
            // Leave a checkpoint of the last good iteration and whatever log
            // lines completed.
            let _ = fs::write(log_path, render_log(&abort.records));
            let _ = abort.last_good_policy.save(checkpoint_path);
            let message = format!(
                "training aborted after {} iterations: {} (checkpoint of the last good iteration at {})",
                abort.completed_iterations,
                abort.error,
                checkpoint_path.display()
            );
            match abort.error {
                TrainError::NonFinite { .. } => Err(CliError::Numeric(message)),
                TrainError::Config(_) => Err(CliError::Data(message)),
                _ => Err(CliError::Data(message)),
            }
        }
    }
}
