use std::path::{Path, PathBuf};

use rayon::prelude::*;
use segensemble::fusion::{fuse, FusionInputs};
use segensemble::io::{load_model_outputs, read_manifest, write_labels, CaseManifest, Volume};
use segensemble::{FusionMethod, LabelVolume, StapleParams};

use crate::provenance::{FileDigest, Provenance};
use crate::{create_dir, require_file, CliError, CliResult};

/// Per-flag STAPLE settings; each one set here beats the config file.
#[derive(Debug, Clone, Default)]
pub struct StapleOverrides {
    pub config: Option<PathBuf>,
    pub init_sensitivity: Option<f64>,
    pub init_specificity: Option<f64>,
    pub max_iterations: Option<usize>,
    pub convergence_tol: Option<f64>,
    pub roi_margin: Option<usize>,
}

impl StapleOverrides {
    pub fn resolve(&self) -> CliResult<StapleParams> {
        let mut p = match &self.config {
            Some(path) => {
                require_file(path, "STAPLE config")?;
                let text = std::fs::read_to_string(path).map_err(|e| crate::io_err(path, e))?;
                toml::from_str(&text).map_err(|e| segensemble::Error::Parse { path: path.clone(), reason: e.to_string() })?
            }
            None => StapleParams::default(),
        };
        if let Some(v) = self.init_sensitivity {
            p.init_sensitivity = v;
        }
        if let Some(v) = self.init_specificity {
            p.init_specificity = v;
        }
        if let Some(v) = self.max_iterations {
            p.max_iterations = v;
        }
        if let Some(v) = self.convergence_tol {
            p.convergence_tol = v;
        }
        if let Some(v) = self.roi_margin {
            p.roi_margin = v;
        }
        p.validate()?;
        Ok(p)
    }

    fn is_set(&self) -> bool {
        self.config.is_some()
            || self.init_sensitivity.is_some()
            || self.init_specificity.is_some()
            || self.max_iterations.is_some()
            || self.convergence_tol.is_some()
            || self.roi_margin.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct FuseArgs {
    pub manifest: PathBuf,
    pub method: String,
    pub out: PathBuf,
    pub staple: StapleOverrides,
}

fn inputs_of(volumes: Vec<Volume>) -> FusionInputs<f32> {
    if volumes.iter().all(|v| matches!(v, Volume::Scores(_))) {
        FusionInputs::Scores(
            volumes
                .into_iter()
                .filter_map(|v| match v {
                    Volume::Scores(s) => Some(s),
                    Volume::Labels(_) => None,
                })
                .collect(),
        )
    } else {
        FusionInputs::Masks(
            volumes
                .into_iter()
                .filter_map(|v| match v {
                    Volume::Labels(l) => Some(l),
                    Volume::Scores(_) => None,
                })
                .collect(),
        )
    }
}

/// Fuse the model outputs of one case.
pub fn fuse_case(case: &CaseManifest, num_labels: usize, method: &FusionMethod) -> CliResult<LabelVolume> {
    let inputs = inputs_of(load_model_outputs(case, num_labels)?);
    fuse(method, &inputs).map_err(|e| match e {
        segensemble::Error::InvalidArgument(m) => CliError::Usage(format!("case `{}`: {m}", case.case_id)),
        other => other.into(),
    })
}

/// Fuse every case of a manifest into `out/<case_id>.mha` and record a
/// provenance file.
pub fn cmd_fuse(args: &FuseArgs) -> CliResult<Vec<PathBuf>> {
    require_file(&args.manifest, "manifest")?;
    let method = match args.method.parse::<FusionMethod>()? {
        FusionMethod::Staple(_) => FusionMethod::Staple(args.staple.resolve()?),
        _ if args.staple.is_set() => {
            return Err(CliError::Usage(format!("STAPLE options were given but the method is {}", args.method)))
        }
        m => m,
    };
    let manifest = read_manifest(&args.manifest)?;
    let num_labels = manifest.num_labels()?;
    create_dir(&args.out)?;

    let outputs: Vec<PathBuf> = manifest
        .cases
        .par_iter()
        .map(|case| {
            let fused = fuse_case(case, num_labels, &method)?;
            let path = args.out.join(format!("{}.mha", case.case_id));
            write_labels(&fused, &path)?;
            log::info!("fused {} with {}", case.case_id, method);
            Ok(path)
        })
        .collect::<CliResult<_>>()?;

    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let mut prov = Provenance::new("fuse");
    prov.method = Some(method.name().to_string());
    if let FusionMethod::Staple(p) = &method {
        prov.params = toml::Table::try_from(p).map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let mut inputs = vec![FileDigest::of(&args.manifest, base)?];
    for case in &manifest.cases {
        for m in &case.model_outputs {
            inputs.push(FileDigest::of(m, base)?);
        }
    }
    prov.inputs = inputs;
    prov.outputs = outputs.iter().map(|p| FileDigest::of(p, &args.out)).collect::<CliResult<_>>()?;
    prov.write(&args.out.join("provenance.toml"))?;
    Ok(outputs)
}
