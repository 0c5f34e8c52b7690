//! Scoring deduced atom positions against the truth, corpus-level accuracy
//! reports, and the training ablations.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{centro_mates, load_example, AtomSet, DatasetManifest, GenConfig, TrainingExample};
use crate::error::{Error, Result};
use crate::model::{infer, train, ArchSpec, NetworkWeights, TrainConfig, TrainOutcome};
use crate::peaks::{find_peaks, positions, PeakConfig};
use crate::seed::mix_seed;
use crate::separate::{augment_with_mates, separate, SeparationConfig};

pub const HISTOGRAM_BIN_PX: f64 = 0.05;
pub const SUMMARY_FILE: &str = "summary.json";
pub const HISTOGRAM_FILE: &str = "histogram.tsv";
pub const ABLATION_HEADER: &str = "refresh_index\tvariant\tval_loss";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomPair {
    pub deduced: usize,
    pub truth: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub pairs: Vec<AtomPair>,
    pub unmatched_true: Vec<usize>,
    pub unmatched_deduced: Vec<usize>,
    /// The deduced set was point-inverted before matching.
    pub flipped: bool,
    /// Mean pair distance in pixels; zero when nothing matched.
    pub mean_error: f64,
}

/// Index of the point in `set` nearest to `p`, lowest index on ties.
fn nearest(p: crate::grid::Vec3, set: &AtomSet) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, q) in set.iter().enumerate() {
        let d = p.distance_sq(*q);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Mutual-nearest-neighbor pairing: `d` and `t` pair when each is the
/// other's nearest point. Everything else is reported unmatched.
pub fn match_atoms(deduced: &AtomSet, truth: &AtomSet) -> MatchReport {
    let to_truth: Vec<Option<usize>> = deduced.iter().map(|&p| nearest(p, truth)).collect();
    let to_deduced: Vec<Option<usize>> = truth.iter().map(|&p| nearest(p, deduced)).collect();
    let mut pairs = Vec::new();
    let mut truth_used = vec![false; truth.len()];
    let mut unmatched_deduced = Vec::new();
    for (d, t) in to_truth.iter().enumerate() {
        match t {
            Some(t) if to_deduced[*t] == Some(d) => {
                truth_used[*t] = true;
                pairs.push(AtomPair {
                    deduced: d,
                    truth: *t,
                    distance: deduced.0[d].distance(truth.0[*t]),
                });
            }
            _ => unmatched_deduced.push(d),
        }
    }
    let unmatched_true = (0..truth.len()).filter(|&t| !truth_used[t]).collect();
    let mean_error = if pairs.is_empty() {
        0.0
    } else {
        pairs.iter().map(|p| p.distance).sum::<f64>() / pairs.len() as f64
    };
    MatchReport {
        pairs,
        unmatched_true,
        unmatched_deduced,
        flipped: false,
        mean_error,
    }
}

/// Matches `deduced` and its point inversion against `truth` and keeps the
/// one with more pairs, then the lower mean error.
pub fn best_enantiomer_match(deduced: &AtomSet, truth: &AtomSet, outer_dim: usize) -> MatchReport {
    let direct = match_atoms(deduced, truth);
    let mut flipped = match_atoms(&centro_mates(deduced, outer_dim), truth);
    flipped.flipped = true;
    let better = prefer(&flipped, &direct);
    if better {
        flipped
    } else {
        direct
    }
}

/// More pairs wins; equal counts fall back to the lower mean error.
fn prefer(a: &MatchReport, b: &MatchReport) -> bool {
    a.pairs.len() > b.pairs.len() || (a.pairs.len() == b.pairs.len() && a.mean_error < b.mean_error)
}

/// Where the density fed to peak finding comes from.
#[derive(Clone, Copy)]
pub enum MapSource<'a> {
    Network {
        arch: &'a ArchSpec,
        weights: &'a NetworkWeights<f32>,
    },
    /// The example's own target map; isolates the non-network stages.
    Oracle,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub peaks: PeakConfig,
    /// Case `i` runs with seed `mix_seed(separation.seed, i)`.
    pub separation: SeparationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub index: usize,
    pub atoms: usize,
    pub peaks: usize,
    pub separation_score: f64,
    pub report: MatchReport,
}

/// Peaks, separation and matching for one example.
pub fn evaluate_case(
    index: usize,
    example: &TrainingExample,
    source: MapSource<'_>,
    gen: &GenConfig,
    cfg: &EvalConfig,
) -> Result<CaseResult> {
    let map = match source {
        MapSource::Network { arch, weights } => infer(arch, weights, &example.input)?,
        MapSource::Oracle => example.target.clone(),
    };
    let peaks = find_peaks(&map, &cfg.peaks)?;
    let pool = augment_with_mates(&positions(&peaks), gen.outer_dim);
    let sep = SeparationConfig {
        seed: mix_seed(cfg.separation.seed, index as u64),
        ..cfg.separation.clone()
    };
    let result = separate(&pool, &example.input, gen, &sep)?;
    Ok(CaseResult {
        index,
        atoms: example.truth.len(),
        peaks: peaks.len(),
        separation_score: result.score,
        report: best_enantiomer_match(&result.selected, &example.truth, gen.outer_dim),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cases: usize,
    pub atoms_total: usize,
    pub atoms_matched: usize,
    pub mean_error_px: f64,
    pub flipped_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusReport {
    pub cases: Vec<CaseResult>,
    /// Cases whose pipeline failed, with the error message.
    pub failures: Vec<(usize, String)>,
}

impl CorpusReport {
    pub fn distances(&self) -> impl Iterator<Item = f64> + '_ {
        self.cases
            .iter()
            .flat_map(|c| c.report.pairs.iter().map(|p| p.distance))
    }

    pub fn summary(&self) -> Summary {
        let matched = self.distances().count();
        let cases = self.cases.len();
        Summary {
            cases,
            atoms_total: self.cases.iter().map(|c| c.atoms).sum(),
            atoms_matched: matched,
            mean_error_px: if matched == 0 {
                0.0
            } else {
                self.distances().sum::<f64>() / matched as f64
            },
            flipped_fraction: if cases == 0 {
                0.0
            } else {
                self.cases.iter().filter(|c| c.report.flipped).count() as f64 / cases as f64
            },
        }
    }

    /// Counts of pair distances in bins of `HISTOGRAM_BIN_PX`, from zero up
    /// to the last occupied bin.
    pub fn histogram(&self) -> Vec<(f64, usize)> {
        let mut counts: Vec<usize> = Vec::new();
        for d in self.distances() {
            let bin = (d / HISTOGRAM_BIN_PX).floor() as usize;
            if bin >= counts.len() {
                counts.resize(bin + 1, 0);
            }
            counts[bin] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(i, c)| (i as f64 * HISTOGRAM_BIN_PX, c))
            .collect()
    }

    pub fn histogram_tsv(&self) -> String {
        let mut s = String::from("bin_left_px\tcount\n");
        for (left, count) in self.histogram() {
            writeln!(s, "{left:.2}\t{count}").unwrap();
        }
        s
    }

    /// Writes `summary.json` and `histogram.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(SUMMARY_FILE), serde_json::to_vec_pretty(&self.summary())?)?;
        fs::write(dir.join(HISTOGRAM_FILE), self.histogram_tsv())?;
        Ok(())
    }
}

/// Runs every manifest case in parallel. A failing case is logged and
/// recorded, and the rest of the corpus continues.
pub fn evaluate_corpus(
    dir: &Path,
    manifest: &DatasetManifest,
    source: MapSource<'_>,
    cfg: &EvalConfig,
) -> CorpusReport {
    let gen = &manifest.config;
    let results: Vec<(usize, Result<CaseResult>)> = manifest
        .examples
        .par_iter()
        .map(|entry| {
            let r = load_example(dir, entry)
                .and_then(|ex| evaluate_case(entry.index, &ex, source, gen, cfg));
            (entry.index, r)
        })
        .collect();
    let mut report = CorpusReport::default();
    for (index, r) in results {
        match r {
            Ok(case) => report.cases.push(case),
            Err(e) => {
                log::warn!("case {index} failed: {e}");
                report.failures.push((index, e.to_string()));
            }
        }
    }
    report
}

/// Training variants compared against the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Baseline,
    /// Atoms only in the target, loss doubled to stay comparable.
    NoCentro10,
    /// Twice as many atoms, no mates in the target.
    NoCentro20,
    /// Inner box at 18/40 of the outer edge.
    InnerMid,
    /// Inner box at 24/40 of the outer edge.
    InnerLarge,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Baseline,
        AblationVariant::NoCentro10,
        AblationVariant::NoCentro20,
        AblationVariant::InnerMid,
        AblationVariant::InnerLarge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Baseline => "baseline",
            AblationVariant::NoCentro10 => "no_centro_10",
            AblationVariant::NoCentro20 => "no_centro_20",
            AblationVariant::InnerMid => "inner_mid",
            AblationVariant::InnerLarge => "inner_large",
        }
    }

    /// The variant's data and training configs derived from the baseline.
    pub fn configure(self, gen: &GenConfig, train: &TrainConfig) -> (GenConfig, TrainConfig) {
        let mut gen = gen.clone();
        let mut train = train.clone();
        let scaled_inner = |num: usize| (gen.outer_dim * num + 20) / 40;
        match self {
            AblationVariant::Baseline => {}
            AblationVariant::NoCentro10 => {
                gen.with_mates = false;
                train.loss_scale *= 2.0;
            }
            AblationVariant::NoCentro20 => {
                gen.n_atoms *= 2;
                gen.with_mates = false;
            }
            AblationVariant::InnerMid => gen.inner_dim = scaled_inner(18),
            AblationVariant::InnerLarge => gen.inner_dim = scaled_inner(24),
        }
        (gen, train)
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant {s:?}")))
    }
}

/// Trains a fresh network for one variant with the baseline's seeds.
pub fn run_ablation(
    variant: AblationVariant,
    arch: &ArchSpec,
    gen: &GenConfig,
    train_cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let (gen, cfg) = variant.configure(gen, train_cfg);
    train(arch, &gen, &cfg, out_dir)
}

/// Validation curves of several variants as one TSV.
pub fn ablation_tsv(runs: &[(AblationVariant, TrainOutcome)]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for (variant, outcome) in runs {
        for row in &outcome.rows {
            writeln!(s, "{}\t{}\t{}", row.refresh_index, variant.name(), row.val_loss).unwrap();
        }
    }
    s
}
