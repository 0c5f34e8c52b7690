use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{make_example, AtomSet, GenConfig, TrainingExample};
use crate::error::Result;
use crate::grid::pgrd::{self, Dtype};
use crate::seed::mix_seed;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Per-example truth file: `{"atoms": [[x,y,z],...], "mates": [[x,y,z],...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub atoms: AtomSet,
    pub mates: AtomSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    /// Paths are relative to the manifest's directory.
    pub input: PathBuf,
    pub target: PathBuf,
    pub truth: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: GenConfig,
    pub base_seed: u64,
    pub dtype: Dtype,
    pub uniqueness_violated: bool,
    /// Mean fraction of non-zero target voxels.
    pub mean_target_occupancy: f64,
    pub examples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Generate `count` examples into `out_dir` together with `manifest.json`.
/// Example `i` is built from `mix_seed(base_seed, i)`.
pub fn make_dataset(
    config: &GenConfig,
    count: usize,
    base_seed: u64,
    out_dir: &Path,
    dtype: Dtype,
) -> Result<DatasetManifest> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let results: Vec<Result<(ManifestEntry, f64)>> = (0..count)
        .into_par_iter()
        .map(|index| {
            let seed = mix_seed(base_seed, index as u64);
            let ex = make_example(config, seed)?;
            let entry = ManifestEntry {
                index,
                seed,
                input: PathBuf::from(format!("{index:05}_input.pgrd")),
                target: PathBuf::from(format!("{index:05}_target.pgrd")),
                truth: PathBuf::from(format!("{index:05}_truth.json")),
            };
            pgrd::save(out_dir.join(&entry.input), &ex.input, dtype)?;
            pgrd::save(out_dir.join(&entry.target), &ex.target, dtype)?;
            let truth = TruthFile {
                atoms: ex.truth.clone(),
                mates: ex.truth_mates.clone(),
            };
            fs::write(out_dir.join(&entry.truth), serde_json::to_vec(&truth)?)?;
            let occupied = ex.target.values().iter().filter(|&&v| v > 0.0).count();
            Ok((entry, occupied as f64 / ex.target.values().len() as f64))
        })
        .collect();

    let mut examples = Vec::with_capacity(count);
    let mut occupancy = 0.0;
    for r in results {
        let (entry, occ) = r?;
        examples.push(entry);
        occupancy += occ;
    }
    let manifest = DatasetManifest {
        config: config.clone(),
        base_seed,
        dtype,
        uniqueness_violated: config.uniqueness_violated(),
        mean_target_occupancy: if count == 0 { 0.0 } else { occupancy / count as f64 },
        examples,
    };
    let w = BufWriter::new(fs::File::create(out_dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(w, &manifest)?;
    Ok(manifest)
}

/// Read one manifest entry back into memory.
pub fn load_example(dir: &Path, entry: &ManifestEntry) -> Result<TrainingExample> {
    let truth: TruthFile = serde_json::from_slice(&fs::read(dir.join(&entry.truth))?)?;
    Ok(TrainingExample {
        input: pgrd::load(dir.join(&entry.input))?,
        target: pgrd::load(dir.join(&entry.target))?,
        truth: truth.atoms,
        truth_mates: truth.mates,
        seed: entry.seed,
    })
}
