use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use phasenet::datagen::{make_dataset, DatasetManifest, MANIFEST_FILE};
use phasenet::eval::{ablation_tsv, evaluate_corpus, run_ablation, AblationVariant, MapSource};
use phasenet::grid::pgrd::{self, Dtype};
use phasenet::grid::ScalarField3D;
use phasenet::model::{checkpoint, infer, train, train_from, ArchSpec, LOG_FILE};
use phasenet::peaks::{find_peaks, positions, Peak};
use phasenet::separate::separate;
use serde_json::{json, Value};

use crate::config::{ConfigArgs, RunConfig};
use crate::ConfigError;

/// Default display threshold recorded with inferred maps: voxels below a
/// tenth of the maximum are shown empty.
const DISPLAY_THRESHOLD: f64 = 0.10;

#[derive(Debug, Parser)]
#[command(name = "phasenet", version, about = "Patterson-map inversion pipeline")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset of (Patterson map, density) examples.
    Gen(GenArgs),
    /// Train a network; writes the log and checkpoints.
    Train(TrainArgs),
    /// Run a checkpoint on one Patterson map.
    Infer(InferArgs),
    /// Extract peaks from a density map.
    Peaks(PeaksArgs),
    /// Choose the subset of peaks plus mates that explains a Patterson map.
    Separate(SeparateArgs),
    /// Score the full pipeline over a dataset.
    Eval(EvalArgs),
    /// Train the ablation variants with shared seeds.
    Ablate(AblateArgs),
    /// Describe a PGRD map, a PPNW checkpoint or an architecture preset.
    Inspect(InspectArgs),
}

fn parse_dtype(s: &str) -> std::result::Result<Dtype, String> {
    match s {
        "f32" => Ok(Dtype::F32),
        "f64" => Ok(Dtype::F64),
        _ => Err(format!("expected f32 or f64, got {s:?}")),
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "f64", value_parser = parse_dtype)]
    dtype: Dtype,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "f64", value_parser = parse_dtype)]
    dtype: Dtype,
}

#[derive(Debug, Args)]
struct PeaksArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SeparateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Peaks JSON as written by `peaks`.
    #[arg(long)]
    peaks: PathBuf,
    /// The measured Patterson map.
    #[arg(long)]
    patterson: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["checkpoint", "oracle"])))]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset directory holding manifest.json.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Take peaks from the target maps instead of a network.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated variants; all five when omitted.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// A .pgrd map or .ppnw checkpoint.
    path: Option<PathBuf>,
    /// Describe an architecture preset instead of a file.
    #[arg(long, conflicts_with = "path")]
    arch: Option<String>,
}

pub fn run(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Peaks(a) => peaks_cmd(a),
        Command::Separate(a) => separate_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn gen(a: GenArgs) -> Result<Value> {
    let cfg = RunConfig::from_args(&a.config)?;
    let seed = cfg.train.seed;
    if cfg.gen.uniqueness_violated() {
        eprintln!(
            "warning: inner box {} exceeds the uniqueness bound for outer box {}; \
             Patterson vector origins may be ambiguous",
            cfg.gen.inner_dim, cfg.gen.outer_dim
        );
    }
    let manifest = make_dataset(&cfg.gen, a.count, seed, &a.out, a.dtype)?;
    Ok(json!({
        "command": "gen",
        "manifest": path_str(&a.out.join(MANIFEST_FILE)),
        "examples": manifest.examples.len(),
        "atoms_per_example": cfg.gen.n_atoms,
        "target_atoms_per_example": if cfg.gen.with_mates { 2 * cfg.gen.n_atoms } else { cfg.gen.n_atoms },
        "mean_target_occupancy": manifest.mean_target_occupancy,
        "uniqueness_violated": manifest.uniqueness_violated,
    }))
}

fn train_cmd(a: TrainArgs) -> Result<Value> {
    let cfg = RunConfig::from_args(&a.config)?;
    if cfg.train.parallel {
        eprintln!(
            "note: --parallel-minibatch computes examples concurrently; gradients are \
             still reduced in a fixed order, so results match the serial run"
        );
    }
    let outcome = match &a.init {
        Some(path) => {
            let ck = checkpoint::load(path)?;
            if ck.arch != cfg.arch {
                bail!(ConfigError(format!(
                    "checkpoint architecture {:?} differs from preset {:?}",
                    ck.arch.name, cfg.arch.name
                )));
            }
            train_from(&cfg.arch, &cfg.gen, &cfg.train, ck.weights, Some(&a.out))?
        }
        None => train(&cfg.arch, &cfg.gen, &cfg.train, Some(&a.out))?,
    };
    Ok(json!({
        "command": "train",
        "log": path_str(&a.out.join(LOG_FILE)),
        "checkpoint": path_str(&a.out.join("final.ppnw")),
        "rows": outcome.rows.len(),
        "steps": outcome.steps,
        "initial_val_loss": outcome.initial_val_loss(),
        "final_val_loss": outcome.final_val_loss(),
    }))
}

fn infer_cmd(a: InferArgs) -> Result<Value> {
    let ck = checkpoint::load(&a.checkpoint)?;
    let input = pgrd::load(&a.input)?;
    let out = infer(&ck.arch, &ck.weights, &input)?;
    pgrd::save(&a.out, &out, a.dtype)?;
    Ok(json!({
        "command": "infer",
        "out": path_str(&a.out),
        "dims": out.dims().as_array(),
        "max": out.max(),
        "min": out.min(),
        "display_threshold": DISPLAY_THRESHOLD,
    }))
}

fn peaks_cmd(a: PeaksArgs) -> Result<Value> {
    let cfg = RunConfig::from_args(&a.config)?;
    let map = pgrd::load(&a.map)?;
    let peaks = find_peaks(&map, &cfg.peaks)?;
    fs::write(&a.out, serde_json::to_vec(&peaks)?)?;
    Ok(json!({
        "command": "peaks",
        "out": path_str(&a.out),
        "count": peaks.len(),
    }))
}

fn separate_cmd(a: SeparateArgs) -> Result<Value> {
    let cfg = RunConfig::from_args(&a.config)?;
    let peaks: Vec<Peak> = serde_json::from_slice(
        &fs::read(&a.peaks).with_context(|| format!("reading {}", a.peaks.display()))?,
    )?;
    let patterson = pgrd::load(&a.patterson)?;
    let mut gen = cfg.gen.clone();
    let dims = patterson.dims();
    if dims.nx != dims.ny || dims.ny != dims.nz {
        bail!(ConfigError(format!("Patterson map must be cubic, got {:?}", dims.as_array())));
    }
    if dims.nx != gen.outer_dim {
        log::warn!("using the map's edge {} instead of outer_dim {}", dims.nx, gen.outer_dim);
        gen.outer_dim = dims.nx;
    }
    let pool = phasenet::separate::augment_with_mates(&positions(&peaks), gen.outer_dim);
    let result = separate(&pool, &patterson, &gen, &cfg.separation)?;
    let body = json!({
        "atoms": result.selected,
        "indices": result.indices,
        "score": result.score,
    });
    fs::write(&a.out, serde_json::to_vec(&body)?)?;
    let mut trace = String::from("iter\tscore\n");
    for (i, s) in result.trace.iter().enumerate() {
        trace.push_str(&format!("{i}\t{s}\n"));
    }
    fs::write(&a.trace, trace)?;
    Ok(json!({
        "command": "separate",
        "out": path_str(&a.out),
        "trace": path_str(&a.trace),
        "pool": pool.len(),
        "selected": result.indices.len(),
        "score": result.score,
    }))
}

fn eval_cmd(a: EvalArgs) -> Result<Value> {
    let cfg = RunConfig::from_args(&a.config)?;
    let manifest = DatasetManifest::load(a.data.join(MANIFEST_FILE))?;
    let eval_cfg = cfg.eval_for(&manifest.config);
    let ck = match &a.checkpoint {
        Some(path) => Some(checkpoint::load(path)?),
        None => None,
    };
    let source = match &ck {
        Some(ck) => MapSource::Network {
            arch: &ck.arch,
            weights: &ck.weights,
        },
        None => MapSource::Oracle,
    };
    let report = evaluate_corpus(&a.data, &manifest, source, &eval_cfg);
    report.write(&a.out)?;
    let mut line = serde_json::to_value(report.summary())?;
    line["command"] = json!("eval");
    line["failed_cases"] = json!(report.failures.len());
    line["out"] = json!(path_str(&a.out));
    Ok(line)
}

fn ablate(a: AblateArgs) -> Result<Value> {
    let cfg = RunConfig::from_args(&a.config)?;
    let variants: Vec<AblationVariant> = if a.variants.is_empty() {
        AblationVariant::ALL.to_vec()
    } else {
        a.variants
            .iter()
            .map(|v| v.parse::<AblationVariant>())
            .collect::<phasenet::Result<_>>()?
    };
    let mut runs = Vec::new();
    let mut finals = serde_json::Map::new();
    for v in variants {
        let dir = a.out.join(v.name());
        let outcome = run_ablation(v, &cfg.arch, &cfg.gen, &cfg.train, Some(&dir))?;
        finals.insert(v.name().to_string(), json!(outcome.final_val_loss()));
        runs.push((v, outcome));
    }
    let tsv = a.out.join("ablation.tsv");
    fs::write(&tsv, ablation_tsv(&runs))?;
    Ok(json!({
        "command": "ablate",
        "out": path_str(&tsv),
        "final_val_loss": finals,
    }))
}

fn field_stats(f: &ScalarField3D) -> Value {
    let n = f.values().len() as f64;
    json!({
        "min": f.min(),
        "max": f.max(),
        "mean": f.sum() / n,
        "nonzero": f.values().iter().filter(|&&v| v != 0.0).count(),
    })
}

fn arch_summary(arch: &ArchSpec) -> Value {
    json!({
        "name": arch.name,
        "layers": arch.layers.len(),
        "param_count": arch.param_count(),
        "receptive_field": arch.receptive_field(),
    })
}

fn inspect(a: InspectArgs) -> Result<Value> {
    if let Some(name) = &a.arch {
        let arch = ArchSpec::preset(name)
            .ok_or_else(|| ConfigError(format!("unknown architecture preset {name:?}")))?;
        return Ok(json!({ "command": "inspect", "arch": arch_summary(&arch) }));
    }
    let Some(path) = a.path else {
        bail!(ConfigError("inspect needs a file path or --arch".into()));
    };
    let mut magic = [0u8; 4];
    fs::File::open(&path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .with_context(|| format!("reading {}", path.display()))?;
    if magic == pgrd::MAGIC {
        let header = pgrd::read_header(&mut fs::File::open(&path)?)?;
        let field = pgrd::load(&path)?;
        Ok(json!({
            "command": "inspect",
            "format": "PGRD",
            "version": header.version,
            "dims": header.dims.as_array(),
            "dtype": header.dtype,
            "stats": field_stats(&field),
        }))
    } else if &magic == checkpoint::MAGIC {
        let ck = checkpoint::load(&path)?;
        let tensors: Vec<Value> = ck
            .weights
            .convs
            .iter()
            .enumerate()
            .flat_map(|(i, c)| {
                let stats = |name: String, shape: Vec<usize>, v: &[f32]| {
                    let n = v.len() as f64;
                    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
                    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
                    json!({ "name": name, "shape": shape, "mean": mean, "std": var.sqrt() })
                };
                [
                    stats(format!("conv{i:02}.kernel"), c.kernel_shape().to_vec(), &c.kernel),
                    stats(format!("conv{i:02}.bias"), vec![c.out_channels], &c.bias),
                ]
            })
            .collect();
        Ok(json!({
            "command": "inspect",
            "format": "PPNW",
            "version": checkpoint::VERSION,
            "step": ck.step,
            "arch": arch_summary(&ck.arch),
            "param_count": ck.weights.param_count(),
            "tensors": tensors,
        }))
    } else {
        bail!(phasenet::Error::Format {
            format: "input",
            reason: format!("{} is neither a PGRD map nor a PPNW checkpoint", path.display()),
        })
    }
}
