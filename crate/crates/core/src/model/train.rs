use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::arch::ArchSpec;
use super::checkpoint;
use super::network::{forward_tensor, init_weights, loss_and_gradients, mse, NetworkWeights};
use super::tensor::Tensor4D;
use crate::datagen::{make_example, GenConfig};
use crate::error::{Error, Result};
use crate::seed::mix_seed;

pub const LOG_FILE: &str = "train_log.tsv";
pub const LOG_HEADER: &str = "refresh_index\tepoch\ttrain_loss\tval_loss";

const INIT_STREAM: u64 = 0;
const VAL_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub minibatch_size: usize,
    pub train_set_size: usize,
    pub val_set_size: usize,
    pub refresh_every_epochs: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Multiplies the MSE, both in gradients and in reported losses.
    pub loss_scale: f64,
    /// Compute minibatch elements on the rayon pool. Gradients are summed in
    /// a fixed order, so results do not depend on the thread count.
    pub parallel: bool,
    /// Build every training set from the validation seeds.
    pub shared_seeds: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::paper()
    }
}

impl TrainConfig {
    /// 3000-example training sets remade every 3 epochs, 100 validation
    /// cases.
    pub fn paper() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            minibatch_size: 10,
            train_set_size: 3000,
            val_set_size: 100,
            refresh_every_epochs: 3,
            epochs: 100,
            seed: 0,
            loss_scale: 1.0,
            parallel: false,
            shared_seeds: false,
        }
    }

    /// 200-example training sets, 30 epochs.
    pub fn desk() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            train_set_size: 200,
            epochs: 30,
            ..TrainConfig::paper()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("epsilon", self.epsilon),
            ("loss_scale", self.loss_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        let counts = [
            ("minibatch_size", self.minibatch_size),
            ("train_set_size", self.train_set_size),
            ("val_set_size", self.val_set_size),
            ("refresh_every_epochs", self.refresh_every_epochs),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.shared_seeds && self.train_set_size > self.val_set_size {
            return Err(Error::Config(
                "shared_seeds needs train_set_size <= val_set_size".into(),
            ));
        }
        Ok(())
    }

    pub fn init_seed(&self) -> u64 {
        mix_seed(self.seed, INIT_STREAM)
    }

    pub fn val_seeds(&self) -> Vec<u64> {
        let base = mix_seed(self.seed, VAL_STREAM);
        (0..self.val_set_size as u64).map(|i| mix_seed(base, i)).collect()
    }

    /// Seeds of the training set used from refresh `index` on.
    pub fn train_seeds(&self, index: usize) -> Vec<u64> {
        if self.shared_seeds {
            let mut seeds = self.val_seeds();
            seeds.truncate(self.train_set_size);
            return seeds;
        }
        let base = mix_seed(self.seed, TRAIN_STREAM + index as u64);
        (0..self.train_set_size as u64).map(|i| mix_seed(base, i)).collect()
    }
}

/// One evaluation row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub refresh_index: usize,
    pub epoch: usize,
    /// Mean loss on the training set about to be used, before any step on it.
    pub train_loss: f64,
    pub val_loss: f64,
}

impl LogRow {
    pub fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.refresh_index, self.epoch, self.train_loss, self.val_loss
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<LogRow>,
    pub weights: NetworkWeights<f32>,
    pub steps: u64,
}

impl TrainOutcome {
    pub fn initial_val_loss(&self) -> f64 {
        self.rows[0].val_loss
    }

    pub fn final_val_loss(&self) -> f64 {
        self.rows.last().expect("at least one row").val_loss
    }
}

/// Parse a log written by [`train`].
pub fn read_log(text: &str) -> Result<Vec<LogRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::format("training log", "missing header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let bad = || Error::format("training log", format!("bad row {l:?}"));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(LogRow {
                refresh_index: f[0].parse().map_err(|_| bad())?,
                epoch: f[1].parse().map_err(|_| bad())?,
                train_loss: f[2].parse().map_err(|_| bad())?,
                val_loss: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

struct Sample {
    input: Tensor4D<f32>,
    target: Vec<f32>,
}

fn build_set(gen: &GenConfig, seeds: &[u64], parallel: bool) -> Result<Vec<Sample>> {
    let one = |&seed: &u64| -> Result<Sample> {
        let ex = make_example(gen, seed)?;
        Ok(Sample {
            input: Tensor4D::from_field(&ex.input),
            target: ex.target.values().iter().map(|&v| v as f32).collect(),
        })
    };
    if parallel {
        seeds.par_iter().map(one).collect()
    } else {
        seeds.iter().map(one).collect()
    }
}

fn mean_loss(
    arch: &ArchSpec,
    weights: &NetworkWeights<f32>,
    set: &[Sample],
    loss_scale: f64,
    parallel: bool,
) -> Result<f64> {
    let one = |s: &Sample| -> Result<f64> {
        let out = forward_tensor(arch, weights, s.input.clone())?;
        Ok(loss_scale * mse(&out.values, &s.target))
    };
    let losses: Vec<f64> = if parallel {
        set.par_iter().map(one).collect::<Result<_>>()?
    } else {
        set.iter().map(one).collect::<Result<_>>()?
    };
    Ok(losses.iter().sum::<f64>() / set.len() as f64)
}

/// Mean loss of `weights` over freshly generated examples.
pub fn evaluate(
    arch: &ArchSpec,
    weights: &NetworkWeights<f32>,
    gen: &GenConfig,
    seeds: &[u64],
    loss_scale: f64,
) -> Result<f64> {
    let set = build_set(gen, seeds, true)?;
    mean_loss(arch, weights, &set, loss_scale, true)
}

/// Train from He-normal initialization.
///
/// A validation set is built once. Training sets are built from fresh
/// seeds at the start and again every `refresh_every_epochs` epochs. At the
/// start, at every refresh and after the last epoch a row is logged with
/// the loss on the new training set and on the validation set, and a
/// checkpoint is written when `out_dir` is given.
pub fn train(
    arch: &ArchSpec,
    gen: &GenConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let weights = init_weights(arch, config.init_seed());
    train_from(arch, gen, config, weights, out_dir)
}

pub fn train_from(
    arch: &ArchSpec,
    gen: &GenConfig,
    config: &TrainConfig,
    mut weights: NetworkWeights<f32>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    arch.validate()?;
    gen.validate()?;
    config.validate()?;
    arch.check_input(gen.dims())?;
    let largest = gen.dims().as_array().into_iter().max().unwrap_or(0);
    if arch.receptive_field() < largest {
        log::warn!(
            "receptive field {} is smaller than the {largest}-voxel input",
            arch.receptive_field()
        );
    }
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut f = fs::File::create(dir.join(LOG_FILE))?;
            writeln!(f, "{LOG_HEADER}")?;
            Some(f)
        }
        None => None,
    };

    let par = config.parallel;
    let adam = config.adam();
    let mut state = AdamState::new(arch);
    let val = build_set(gen, &config.val_seeds(), par)?;
    let mut rows = Vec::new();
    let mut refresh = 0;
    let mut train_set = build_set(gen, &config.train_seeds(refresh), par)?;

    let mut record = |refresh: usize,
                      epoch: usize,
                      weights: &NetworkWeights<f32>,
                      train_set: &[Sample],
                      step: u64|
     -> Result<()> {
        let row = LogRow {
            refresh_index: refresh,
            epoch,
            train_loss: mean_loss(arch, weights, train_set, config.loss_scale, par)?,
            val_loss: mean_loss(arch, weights, &val, config.loss_scale, par)?,
        };
        if !(row.train_loss.is_finite() && row.val_loss.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        log::info!(
            "refresh {refresh} epoch {epoch}: train {:.6} val {:.6}",
            row.train_loss,
            row.val_loss
        );
        if let (Some(f), Some(dir)) = (log_file.as_mut(), out_dir) {
            writeln!(f, "{}", row.tsv())?;
            f.flush()?;
            checkpoint::save(dir.join(format!("checkpoint_{refresh:03}.ppnw")), arch, weights, step)?;
        }
        rows.push(row);
        Ok(())
    };
    record(refresh, 0, &weights, &train_set, state.t)?;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let shuffle_base = mix_seed(config.seed, SHUFFLE_STREAM);
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(shuffle_base, epoch as u64));
        order.shuffle(&mut rng);
        for batch in order.chunks(config.minibatch_size) {
            let step = |&i: &usize| {
                let s = &train_set[i];
                loss_and_gradients(arch, &weights, s.input.clone(), &s.target, config.loss_scale)
            };
            let results: Vec<_> = if par {
                batch.par_iter().map(step).collect::<Result<_>>()?
            } else {
                batch.iter().map(step).collect::<Result<_>>()?
            };
            let mut total = NetworkWeights::<f32>::zeros(arch);
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l;
                total.add_assign(g);
            }
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1 });
            }
            total.scale(1.0 / batch.len() as f32);
            adam_step(&mut weights, &total, &mut state, &adam);
        }
        let done = epoch + 1;
        if done % config.refresh_every_epochs == 0 || done == config.epochs {
            refresh += 1;
            train_set = build_set(gen, &config.train_seeds(refresh), par)?;
            order = (0..train_set.len()).collect();
            record(refresh, done, &weights, &train_set, state.t)?;
        }
    }
    if let Some(dir) = out_dir {
        checkpoint::save(dir.join("final.ppnw"), arch, &weights, state.t)?;
    }
    Ok(TrainOutcome {
        rows,
        weights,
        steps: state.t,
    })
}
