//! Run configuration: preset defaults, then a flat JSON config file, then
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use phasenet::datagen::GenConfig;
use phasenet::eval::EvalConfig;
use phasenet::model::{ArchSpec, TrainConfig};
use phasenet::peaks::PeakConfig;
use phasenet::separate::{SearchMode, SeparationConfig};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::ConfigError;

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Preset supplying the defaults: paper or desk.
    #[arg(long, default_value = "paper")]
    pub preset: String,
    /// JSON object with flat keys named like the flags (snake_case).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: Overrides,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Overrides {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_atoms: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom_radius: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_atom_scale: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supersample: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minibatch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_set_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_set_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refresh_every_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_scale: Option<f64>,
    /// Run minibatch elements on the thread pool.
    #[arg(long = "parallel-minibatch")]
    #[serde(rename = "parallel", skip_serializing_if = "is_false")]
    pub parallel_minibatch: bool,
    /// Build every training set from the validation seeds.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub shared_seeds: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_peaks: Option<usize>,
    /// Atoms to select during separation; defaults to n_atoms.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<SearchMode>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_temperature: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn parse_mode(s: &str) -> std::result::Result<SearchMode, String> {
    match s {
        "greedy" => Ok(SearchMode::Greedy),
        "anneal" => Ok(SearchMode::Anneal),
        _ => Err(format!("expected greedy or anneal, got {s:?}")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub arch: ArchSpec,
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub peaks: PeakConfig,
    pub separation: SeparationConfig,
    /// `subset_size` came from the file or a flag rather than `n_atoms`.
    pub subset_size_set: bool,
}

fn object<T: Serialize>(value: &T) -> Map<String, Value> {
    match serde_json::to_value(value) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("config types serialize to objects"),
    }
}

fn pick<T: serde::de::DeserializeOwned>(merged: &Map<String, Value>, keys: &Map<String, Value>) -> Result<T> {
    let sub: Map<String, Value> = keys
        .keys()
        .filter_map(|k| merged.get(k).map(|v| (k.clone(), v.clone())))
        .collect();
    serde_json::from_value(Value::Object(sub))
        .map_err(|e| ConfigError(format!("invalid configuration value: {e}")).into())
}

impl RunConfig {
    pub fn from_args(args: &ConfigArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => Some(read_config_file(path)?),
            None => None,
        };
        Self::merge(&args.preset, file, &args.flags)
    }

    pub fn merge(preset: &str, file: Option<Map<String, Value>>, flags: &Overrides) -> Result<Self> {
        let (Some(arch), Some(gen), Some(train)) = (
            ArchSpec::preset(preset),
            GenConfig::preset(preset),
            TrainConfig::preset(preset),
        ) else {
            bail!(ConfigError(format!("unknown preset {preset:?}; expected paper or desk")));
        };
        let gen_keys = object(&gen);
        let train_keys = object(&train);
        let peak_keys = object(&PeakConfig::default());
        let sep_keys = object(&SeparationConfig::default());

        let mut merged = Map::new();
        for keys in [&sep_keys, &peak_keys, &train_keys, &gen_keys] {
            merged.extend(keys.clone());
        }
        let known: Vec<String> = merged.keys().cloned().collect();
        merged.remove("subset_size");
        if let Some(file) = file {
            for (k, v) in file {
                if !known.contains(&k) {
                    bail!(ConfigError(format!("unknown configuration key {k:?}")));
                }
                merged.insert(k, v);
            }
        }
        merged.extend(object(flags));

        let gen: GenConfig = pick(&merged, &gen_keys)?;
        let mut separation: SeparationConfig = pick(&merged, &sep_keys)?;
        let subset_size_set = merged.contains_key("subset_size");
        if !subset_size_set {
            separation.subset_size = gen.n_atoms;
        }
        let cfg = RunConfig {
            preset: preset.to_string(),
            arch,
            train: pick(&merged, &train_keys)?,
            peaks: pick(&merged, &peak_keys)?,
            gen,
            separation,
            subset_size_set,
        };
        Ok(cfg)
    }

    /// Evaluation settings for data generated with `gen`.
    pub fn eval_for(&self, gen: &GenConfig) -> EvalConfig {
        let mut separation = self.separation.clone();
        if !self.subset_size_set {
            separation.subset_size = gen.n_atoms;
        }
        EvalConfig {
            peaks: self.peaks.clone(),
            separation,
        }
    }
}

fn read_config_file(path: &Path) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => bail!(ConfigError(format!("{} must hold a JSON object", path.display()))),
        Err(e) => bail!(ConfigError(format!("{}: {e}", path.display()))),
    }
}
