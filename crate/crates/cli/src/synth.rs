use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use segensemble::io::{write_labels, write_manifest, write_volume, CaseManifest, Manifest, Volume};
use segensemble::synth::{generate_ground_truth, generate_model_outputs, SynthConfig};

use crate::provenance::{FileDigest, Provenance};
use crate::{create_dir, require_file, toml_string, write_text, CliResult};

#[derive(Debug, Clone, Default)]
pub struct SynthArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub cases: Option<usize>,
    pub noise_amplitude_mm: Option<f64>,
}

impl SynthArgs {
    pub fn resolve(&self) -> CliResult<SynthConfig> {
        let mut config = match &self.config {
            Some(p) => {
                require_file(p, "synth config")?;
                SynthConfig::from_toml_file(p)?
            }
            None => SynthConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(cases) = self.cases {
            config.cases = cases;
        }
        if let Some(a) = self.noise_amplitude_mm {
            config.noise_amplitude_mm = a;
        }
        config.validate()?;
        Ok(config)
    }
}

pub fn case_id(k: usize) -> String {
    format!("case_{k:03}")
}

/// Write ground truth, rater score volumes and a manifest under `args.out`:
///
/// ```text
/// out/manifest.toml
/// out/synth.toml            effective generator config
/// out/provenance.toml
/// out/case_000/reference.mha
/// out/case_000/model_0.mha ...
/// ```
pub fn cmd_synth(args: &SynthArgs) -> CliResult<Manifest> {
    let config = args.resolve()?;
    let truth = generate_ground_truth(&config)?;
    create_dir(&args.out)?;

    let cases: Vec<CaseManifest> = (0..config.cases)
        .into_par_iter()
        .map(|k| -> CliResult<CaseManifest> {
            let id = case_id(k);
            let dir = args.out.join(&id);
            create_dir(&dir)?;
            write_labels(&truth, &dir.join("reference.mha"))?;
            let outputs = generate_model_outputs(&config, k, &truth)?;
            let mut model_outputs = Vec::with_capacity(outputs.len());
            for (j, scores) in outputs.into_iter().enumerate() {
                let name = format!("model_{j}.mha");
                write_volume(&Volume::Scores(scores), &dir.join(&name))?;
                model_outputs.push(Path::new(&id).join(name));
            }
            Ok(CaseManifest { case_id: id.clone(), reference: Path::new(&id).join("reference.mha"), model_outputs })
        })
        .collect::<CliResult<_>>()?;

    let labels: BTreeMap<String, String> =
        config.organs.iter().map(|o| (o.label.to_string(), o.name.clone())).collect();
    let manifest = Manifest { labels, cases };
    let manifest_path = args.out.join("manifest.toml");
    write_manifest(&manifest, &manifest_path)?;
    let config_path = args.out.join("synth.toml");
    write_text(&config_path, &toml_string(&config)?)?;

    let mut prov = Provenance::new("synth");
    prov.params = toml::Table::try_from(&config).map_err(|e| crate::CliError::Internal(e.to_string()))?;
    let mut outputs = vec![manifest_path, config_path];
    for c in &manifest.cases {
        outputs.push(args.out.join(&c.reference));
        outputs.extend(c.model_outputs.iter().map(|m| args.out.join(m)));
    }
    prov.outputs = outputs.iter().map(|p| FileDigest::of(p, &args.out)).collect::<CliResult<_>>()?;
    prov.write(&args.out.join("provenance.toml"))?;
    log::info!("wrote {} synthetic cases to {}", manifest.cases.len(), args.out.display());
    Ok(manifest)
}
