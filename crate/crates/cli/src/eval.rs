use std::path::PathBuf;

use rayon::prelude::*;
use segensemble::fusion::argmax_labels;
use segensemble::io::{
    load_reference, read_labels, read_manifest, read_volume, write_metric_rows, write_report, MetricRow,
    ReportFormat, Volume,
};
use segensemble::metrics::{evaluate_case, MetricReport};
use segensemble::LabelVolume;

use crate::{create_dir, require_file, CliError, CliResult};

/// Where the evaluated segmentations come from.
#[derive(Debug, Clone)]
pub enum Prediction {
    /// `<dir>/<case_id>.mha`, as written by `fuse`.
    Dir(PathBuf),
    /// Output `k` of every case's model list (argmax for score volumes).
    Model(usize),
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub manifest: PathBuf,
    pub prediction: Prediction,
    /// Method name written into every row; derived from the prediction
    /// source when absent.
    pub method: Option<String>,
    /// Aggregate CSV with one row per (case, organ).
    pub out: PathBuf,
    /// Optional directory for one report file per case.
    pub report_dir: Option<PathBuf>,
    pub format: ReportFormat,
}

impl EvalArgs {
    fn method_name(&self) -> String {
        if let Some(m) = &self.method {
            return m.clone();
        }
        match &self.prediction {
            Prediction::Model(k) => format!("model_{k}"),
            Prediction::Dir(d) => d
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "prediction".into()),
        }
    }
}

/// Score each case's prediction against its reference and write the
/// aggregate CSV (plus per-case reports when asked). Undefined metrics are
/// flagged in the rows and do not fail the command.
pub fn cmd_eval(args: &EvalArgs) -> CliResult<Vec<MetricReport>> {
    require_file(&args.manifest, "manifest")?;
    if let Prediction::Dir(d) = &args.prediction {
        if !d.is_dir() {
            return Err(segensemble::Error::Validation(format!("prediction directory {} does not exist", d.display())).into());
        }
    }
    let manifest = read_manifest(&args.manifest)?;
    let num_labels = manifest.num_labels()?;
    let labels = manifest.label_names()?;
    let method = args.method_name();
    if let Some(d) = &args.report_dir {
        create_dir(d)?;
    }

    let reports: Vec<MetricReport> = manifest
        .cases
        .par_iter()
        .map(|case| {
            let reference = load_reference(case, num_labels)?;
            let pred: LabelVolume = match &args.prediction {
                Prediction::Dir(d) => {
                    let path = d.join(format!("{}.mha", case.case_id));
                    require_file(&path, "prediction")?;
                    read_labels(&path)?.with_num_labels(num_labels)?
                }
                Prediction::Model(k) => {
                    if *k >= case.model_outputs.len() {
                        return Err(CliError::Usage(format!(
                            "--model {k} but case `{}` lists {} model outputs",
                            case.case_id,
                            case.model_outputs.len()
                        )));
                    }
                    match read_volume(&case.model_outputs[*k])? {
                        Volume::Scores(s) => argmax_labels(&s)?,
                        Volume::Labels(l) => l.with_num_labels(num_labels)?,
                    }
                }
            };
            let report = evaluate_case(&case.case_id, &method, &pred, &reference, &labels)?;
            if let Some(d) = &args.report_dir {
                let ext = match args.format {
                    ReportFormat::Csv => "csv",
                    ReportFormat::Toml => "toml",
                };
                write_report(&report, &d.join(format!("{}.{ext}", case.case_id)), args.format)?;
            }
            Ok(report)
        })
        .collect::<CliResult<_>>()?;

    let rows: Vec<MetricRow> = reports.iter().flat_map(MetricRow::from_report).collect();
    let flagged = rows.iter().filter(|r| !r.flags.is_empty()).count();
    if flagged > 0 {
        log::warn!("{flagged} of {} rows carry undefined-metric flags", rows.len());
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_metric_rows(&rows, &args.out)?;
    Ok(reports)
}
