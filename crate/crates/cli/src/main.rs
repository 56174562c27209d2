use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use segensemble::io::ReportFormat;
use segensemble::stats::ZeroHandling;
use segensemble_cli::{
    cmd_compare, cmd_eval, cmd_fuse, cmd_select_bm, cmd_synth, exit, render_ranking, CliError, CliResult, CompareArgs,
    EvalArgs, FuseArgs, Prediction, SelectArgs, StapleOverrides, SynthArgs,
};

/// Ensemble fusion and evaluation of 3D segmentations.
#[derive(Parser)]
#[command(name = "segensemble", version)]
struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic phantoms, simulated model outputs and a manifest.
    Synth {
        /// Generator config (TOML); built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        cases: Option<usize>,
        /// Boundary noise amplitude in mm.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Fuse the model outputs of every case in a manifest.
    Fuse {
        #[arg(long)]
        manifest: PathBuf,
        /// logit-sum, softmax-sum, majority-vote or staple.
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        staple: StapleFlags,
    },
    /// Score predictions against the manifest references.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding `<case_id>.mha` predictions.
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        pred_dir: Option<PathBuf>,
        /// Evaluate model output `K` of every case instead.
        #[arg(long, value_name = "K")]
        model: Option<usize>,
        /// Method name recorded in the rows.
        #[arg(long)]
        method: Option<String>,
        /// Aggregate CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-case reports.
        #[arg(long)]
        report_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Test candidate methods against a baseline and total significance points.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        /// Candidate evaluation CSV; repeat for several methods.
        #[arg(long = "candidate", required = true)]
        candidates: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Experiment label recorded with each comparison.
        #[arg(long, default_value = "all")]
        group: String,
        #[arg(long, value_enum, default_value = "drop")]
        zeros: Zeros,
        /// Format of the ranking table.
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Select the best model from per-model evaluation CSVs.
    SelectBm {
        /// Evaluation CSV of one model; repeat in model index order.
        #[arg(long = "eval", required = true)]
        evals: Vec<PathBuf>,
        /// Write the decision as TOML.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct StapleFlags {
    /// STAPLE parameters (TOML); flags below take precedence.
    #[arg(long)]
    staple_config: Option<PathBuf>,
    #[arg(long)]
    init_sensitivity: Option<f64>,
    #[arg(long)]
    init_specificity: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    convergence_tol: Option<f64>,
    #[arg(long)]
    roi_margin: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Toml,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Toml => ReportFormat::Toml,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Zeros {
    Drop,
    Pratt,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Synth { config, out, seed, cases, noise } => {
            let m = cmd_synth(&SynthArgs { config, out: out.clone(), seed, cases, noise_amplitude_mm: noise })?;
            println!("{} cases written; manifest {}", m.cases.len(), out.join("manifest.toml").display());
        }
        Command::Fuse { manifest, method, out, staple } => {
            let staple = StapleOverrides {
                config: staple.staple_config,
                init_sensitivity: staple.init_sensitivity,
                init_specificity: staple.init_specificity,
                max_iterations: staple.max_iterations,
                convergence_tol: staple.convergence_tol,
                roi_margin: staple.roi_margin,
            };
            let written = cmd_fuse(&FuseArgs { manifest, method, out: out.clone(), staple })?;
            println!("{} fused volumes written to {}", written.len(), out.display());
        }
        Command::Eval { manifest, pred_dir, model, method, out, report_dir, format } => {
            let prediction = match (pred_dir, model) {
                (Some(d), None) => Prediction::Dir(d),
                (None, Some(k)) => Prediction::Model(k),
                _ => return Err(CliError::Usage("give exactly one of --pred-dir and --model".into())),
            };
            let reports = cmd_eval(&EvalArgs { manifest, prediction, method, out: out.clone(), report_dir, format: format.into() })?;
            println!("{} cases evaluated; metrics in {}", reports.len(), out.display());
        }
        Command::Compare { baseline, candidates, out, group, zeros, format } => {
            let zeros = match zeros {
                Zeros::Drop => ZeroHandling::Drop,
                Zeros::Pratt => ZeroHandling::Pratt,
            };
            let outcome = cmd_compare(&CompareArgs { baseline, candidates, out, group, zeros, format: format.into() })?;
            print!("{}", render_ranking(&outcome));
        }
        Command::SelectBm { evals, out } => {
            let (_, trail) = cmd_select_bm(&SelectArgs { evals, out })?;
            print!("{trail}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::from(exit::OK),
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => ExitCode::from(exit::INTERNAL),
    }
}
