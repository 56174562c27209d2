use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use segensemble::io::{read_metric_rows, MetricRow, ReportFormat};
use segensemble::stats::{
    build_ranking_table, significance_marker, significance_points, wilcoxon_with, Alternative, Comparison, Metric,
    PValueMethod, PairedSample, RankingTable, ZeroHandling,
};

use crate::{create_dir, require_file, toml_string, write_text, CliError, CliResult};

#[derive(Debug, Clone)]
pub struct CompareArgs {
    pub baseline: PathBuf,
    pub candidates: Vec<PathBuf>,
    pub out: PathBuf,
    /// Label for this experiment (e.g. a training-set size) in the output.
    pub group: String,
    pub zeros: ZeroHandling,
    pub format: ReportFormat,
}

/// One line of `comparisons.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub organ: String,
    pub group: String,
    pub metric: Metric,
    /// Cases with the metric defined on both sides.
    pub n_pairs: usize,
    /// Cases dropped because either side was flagged undefined.
    pub n_excluded: usize,
    pub n_effective: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub p_method: String,
    pub median_improvement: Option<f64>,
    pub improved: bool,
    pub points: u8,
    pub marker: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOutcome {
    pub rows: Vec<ComparisonRow>,
    pub table: RankingTable,
}

type Key = (String, String);

fn keyed(rows: &[MetricRow]) -> BTreeMap<Key, &MetricRow> {
    rows.iter().map(|r| ((r.case_id.clone(), r.organ.clone()), r)).collect()
}

fn value(row: &MetricRow, metric: Metric) -> Option<f64> {
    match metric {
        Metric::Mdta => row.mdta_mm,
        Metric::Hd95 => row.hd95_mm,
    }
}

fn check_keys(baseline: &BTreeMap<Key, &MetricRow>, candidate: &BTreeMap<Key, &MetricRow>, method: &str) -> CliResult<()> {
    let fmt = |keys: Vec<&Key>| {
        let shown: Vec<String> = keys.iter().take(20).map(|(c, o)| format!("{c}/{o}")).collect();
        let more = keys.len().saturating_sub(20);
        if more > 0 {
            format!("{} and {more} more", shown.join(", "))
        } else {
            shown.join(", ")
        }
    };
    let missing: Vec<&Key> = baseline.keys().filter(|k| !candidate.contains_key(*k)).collect();
    let extra: Vec<&Key> = candidate.keys().filter(|k| !baseline.contains_key(*k)).collect();
    if missing.is_empty() && extra.is_empty() {
        return Ok(());
    }
    let mut msg = format!("case/organ keys of `{method}` do not match the baseline");
    if !missing.is_empty() {
        write!(msg, "; missing from candidate: {}", fmt(missing)).ok();
    }
    if !extra.is_empty() {
        write!(msg, "; missing from baseline: {}", fmt(extra)).ok();
    }
    Err(segensemble::Error::Validation(msg).into())
}

/// Compare every candidate method against the baseline per organ and metric
/// with a two-sided Wilcoxon signed-rank test, then total the significance
/// points. Writes `comparisons.csv` and `ranking.csv` (or `ranking.toml`).
pub fn cmd_compare(args: &CompareArgs) -> CliResult<CompareOutcome> {
    require_file(&args.baseline, "baseline CSV")?;
    if args.candidates.is_empty() {
        return Err(CliError::Usage("at least one candidate CSV is required".into()));
    }
    for c in &args.candidates {
        require_file(c, "candidate CSV")?;
    }
    let baseline_rows = read_metric_rows(&args.baseline)?;
    let baseline = keyed(&baseline_rows);
    if baseline.len() != baseline_rows.len() {
        return Err(segensemble::Error::Validation(format!(
            "{} repeats a case/organ key; a baseline CSV must hold one method",
            args.baseline.display()
        ))
        .into());
    }
    let mut organs: Vec<String> = Vec::new();
    for r in &baseline_rows {
        if !organs.contains(&r.organ) {
            organs.push(r.organ.clone());
        }
    }

    // Candidate rows grouped by method, methods in order of appearance.
    let mut methods: Vec<(String, Vec<MetricRow>)> = Vec::new();
    for path in &args.candidates {
        for row in read_metric_rows(path)? {
            match methods.iter_mut().find(|(m, _)| *m == row.method) {
                Some((_, rows)) => rows.push(row),
                None => methods.push((row.method.clone(), vec![row])),
            }
        }
    }

    let mut out_rows = Vec::new();
    let mut comparisons = Vec::new();
    for (method, rows) in &methods {
        let candidate = keyed(rows);
        if candidate.len() != rows.len() {
            return Err(segensemble::Error::Validation(format!("method `{method}` repeats a case/organ key")).into());
        }
        check_keys(&baseline, &candidate, method)?;
        for organ in &organs {
            for metric in Metric::ALL {
                let mut base = Vec::new();
                let mut cand = Vec::new();
                let mut excluded = 0;
                for (key, b) in baseline.iter().filter(|(k, _)| &k.1 == organ) {
                    match (value(b, metric), value(candidate[key], metric)) {
                        (Some(x), Some(y)) => {
                            base.push(x);
                            cand.push(y);
                        }
                        _ => excluded += 1,
                    }
                }
                let n_pairs = base.len();
                let sample = PairedSample::new(base, cand, true)?;
                let test = wilcoxon_with(&sample, Alternative::TwoSided, args.zeros);
                let improved = sample.candidate_improved();
                let median_improvement = segensemble::stats::median(&sample.improvements());
                comparisons.push(Comparison {
                    method: method.clone(),
                    organ: organ.clone(),
                    group: args.group.clone(),
                    metric,
                    p_value: test.p_value,
                    improved,
                });
                out_rows.push(ComparisonRow {
                    method: method.clone(),
                    organ: organ.clone(),
                    group: args.group.clone(),
                    metric,
                    n_pairs,
                    n_excluded: excluded,
                    n_effective: test.n_effective,
                    statistic: test.statistic,
                    p_value: test.p_value,
                    p_method: match test.method {
                        PValueMethod::Exact => "exact",
                        PValueMethod::Normal => "normal",
                        PValueMethod::Degenerate => "degenerate",
                    }
                    .into(),
                    median_improvement,
                    improved,
                    points: significance_points(test.p_value, improved),
                    marker: significance_marker(test.p_value),
                });
                if excluded > 0 {
                    log::warn!("{method} / {organ} / {metric}: {excluded} cases excluded as undefined");
                }
            }
        }
    }
    let table = build_ranking_table(&comparisons);

    create_dir(&args.out)?;
    let csv_path = args.out.join("comparisons.csv");
    let csv_err = |e: csv::Error| CliError::Core(segensemble::Error::Parse { path: csv_path.clone(), reason: e.to_string() });
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    for r in &out_rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| crate::io_err(&csv_path, e))?;
    write_ranking(&table, args)?;
    Ok(CompareOutcome { rows: out_rows, table })
}

fn write_ranking(table: &RankingTable, args: &CompareArgs) -> CliResult<()> {
    match args.format {
        ReportFormat::Csv => {
            let path = args.out.join("ranking.csv");
            let csv_err = |e: csv::Error| CliError::Core(segensemble::Error::Parse { path: path.clone(), reason: e.to_string() });
            let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
            for r in &table.rows {
                w.serialize(r).map_err(csv_err)?;
            }
            w.flush().map_err(|e| crate::io_err(&path, e))
        }
        ReportFormat::Toml => write_text(&args.out.join("ranking.toml"), &toml_string(table)?),
    }
}

/// Human-readable ranking table with per-organ significance markers.
pub fn render(outcome: &CompareOutcome) -> String {
    let mut s = String::new();
    writeln!(s, "{:<16} {:>6} {:>6} {:>6}", "method", "mdta", "hd95", "total").ok();
    for r in &outcome.table.rows {
        writeln!(s, "{:<16} {:>6} {:>6} {:>6}", r.method, r.mdta, r.hd95, r.total).ok();
    }
    writeln!(s).ok();
    for r in &outcome.rows {
        writeln!(
            s,
            "{:<16} {:<14} {:<5} p={:<10.3e} {:<4} {}",
            r.method,
            r.organ,
            r.metric.name(),
            r.p_value,
            r.marker,
            if r.improved { "improved" } else { "not improved" }
        )
        .ok();
    }
    s
}
