use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;
use segensemble::io::read_metric_rows;
use segensemble::stats::{select_best_model, BestModelSelection, ModelMetrics};

use crate::{require_file, toml_string, write_text, CliError, CliResult};

#[derive(Debug, Clone)]
pub struct SelectArgs {
    /// One evaluation CSV per model, in model index order.
    pub evals: Vec<PathBuf>,
    /// Optional TOML record of the decision.
    pub out: Option<PathBuf>,
}

/// Per-model metric values pooled over every case and organ of its CSV;
/// flagged (undefined) entries are left out.
pub fn load_model_metrics(path: &std::path::Path) -> CliResult<ModelMetrics> {
    let rows = read_metric_rows(path)?;
    Ok(ModelMetrics {
        mdta: rows.iter().filter_map(|r| r.mdta_mm).collect(),
        hd95: rows.iter().filter_map(|r| r.hd95_mm).collect(),
    })
}

#[derive(Serialize)]
struct Record<'a> {
    best: usize,
    best_eval: String,
    excluded: &'a [usize],
    standings: Vec<StandingRecord>,
}

#[derive(Serialize)]
struct StandingRecord {
    index: usize,
    eval: String,
    median_mdta: f64,
    median_hd95: f64,
    rank_mdta: usize,
    rank_hd95: usize,
    rank_sum: usize,
}

/// Pick the best model from its internal-test evaluations. Returns the
/// selection and a printable decision trail.
pub fn cmd_select_bm(args: &SelectArgs) -> CliResult<(BestModelSelection, String)> {
    if args.evals.is_empty() {
        return Err(CliError::Usage("at least one evaluation CSV is required".into()));
    }
    for p in &args.evals {
        require_file(p, "evaluation CSV")?;
    }
    let models = args.evals.iter().map(|p| load_model_metrics(p)).collect::<CliResult<Vec<_>>>()?;
    let selection = select_best_model(&models)?;

    let name = |i: usize| args.evals[i].display().to_string();
    let mut trail = String::new();
    for &i in &selection.excluded {
        log::warn!("model {i} ({}) has no defined mDTA or HD95 values and is excluded", name(i));
        writeln!(trail, "model {i}: excluded, no defined values ({})", name(i)).ok();
    }
    for s in &selection.standings {
        writeln!(
            trail,
            "model {}: median mDTA {:.4} mm (rank {}), median HD95 {:.4} mm (rank {}), rank sum {} ({})",
            s.index,
            s.median_mdta,
            s.rank_mdta,
            s.median_hd95,
            s.rank_hd95,
            s.rank_sum,
            name(s.index)
        )
        .ok();
    }
    let best = selection.standings.iter().find(|s| s.index == selection.best).expect("best has a standing");
    let tied: Vec<usize> = selection
        .standings
        .iter()
        .filter(|s| s.rank_sum == best.rank_sum && s.index != best.index)
        .map(|s| s.index)
        .collect();
    if tied.is_empty() {
        writeln!(trail, "best model: {} (smallest rank sum {})", best.index, best.rank_sum).ok();
    } else {
        writeln!(
            trail,
            "best model: {} (rank sum {} shared with {:?}; lower median mDTA, then lower index, decides)",
            best.index, best.rank_sum, tied
        )
        .ok();
    }

    if let Some(out) = &args.out {
        let record = Record {
            best: selection.best,
            best_eval: name(selection.best),
            excluded: &selection.excluded,
            standings: selection
                .standings
                .iter()
                .map(|s| StandingRecord {
                    index: s.index,
                    eval: name(s.index),
                    median_mdta: s.median_mdta,
                    median_hd95: s.median_hd95,
                    rank_mdta: s.rank_mdta,
                    rank_hd95: s.rank_hd95,
                    rank_sum: s.rank_sum,
                })
                .collect(),
        };
        write_text(out, &toml_string(&record)?)?;
    }
    Ok((selection, trail))
}
