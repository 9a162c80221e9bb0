use std::path::PathBuf;

use clap::Args;
use soleprint::dataio::{self, DatasetSplit};
use soleprint::experiments::{generate_synthetic, ScenarioDataset, ScenarioOptions, SyntheticSpec};
use soleprint::morphometrics;

use crate::SplitArgs;

/// Where records come from: files on disk or a generated synthetic set.
#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Manifest CSV: id,image_path,sex,age,side,source[,ridge_counts].
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub manifest: Option<PathBuf>,

    /// Landmark CSV for the manifest's records.
    #[arg(long, conflicts_with = "synthetic")]
    pub landmarks: Option<PathBuf>,

    /// Scan resolution every image must have.
    #[arg(long, default_value_t = 200.0)]
    pub ppi: f64,

    /// Generate N synthetic prints from --seed instead of reading files.
    #[arg(long, value_name = "N", num_args = 0..=1, default_missing_value = "400")]
    pub synthetic: Option<usize>,
}

impl DatasetArgs {
    pub fn load(&self, seed: u64) -> soleprint::Result<ScenarioDataset> {
        if let Some(n) = self.synthetic {
            let spec = SyntheticSpec { n, seed, ..SyntheticSpec::default() };
            log::info!("generating {n} synthetic prints");
            return Ok(ScenarioDataset::from_synthetic(generate_synthetic(&spec)));
        }
        let path = self.manifest.as_ref().expect("clap requires --manifest without --synthetic");
        let manifest = dataio::load_manifest(path)?;
        let landmarks = match &self.landmarks {
            Some(p) => morphometrics::load_landmarks(p)?,
            None => Vec::new(),
        };
        log::info!("{} records, {} landmark sets", manifest.len(), landmarks.len());
        Ok(ScenarioDataset::from_files(manifest, landmarks, self.ppi))
    }

    /// Scenario options suited to the data source.
    pub fn options(&self, ds: &ScenarioDataset, mirror: bool) -> ScenarioOptions {
        let mut opts = ScenarioOptions { mirror, ..ScenarioOptions::default() };
        if let Some(set) = ds.synthetic() {
            opts.size_reference = set.spec.size_reference();
        }
        opts
    }
}

impl SplitArgs {
    pub fn resolve(&self, ds: &ScenarioDataset, seed: u64) -> soleprint::Result<DatasetSplit> {
        match &self.split {
            Some(p) => DatasetSplit::load(p),
            None => Ok(dataio::split_dataset(&ds.manifest.ids(), self.ratios, seed)?),
        }
    }
}
