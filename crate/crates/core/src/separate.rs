//! Choosing which of the candidate positions (peaks plus their mates) form
//! the structure: swap search over fixed-size subsets, scored by how well
//! the subset's Patterson map reproduces the measured one.
//!
//! Scores are evaluated in Fourier space. Each pool atom's density spectrum
//! is computed once, a swap updates the subset's amplitude by one
//! subtraction and one addition, and Parseval's identity turns the spectral
//! residual into the real-space mean squared error. Every swap therefore
//! costs one pass over the grid instead of two transforms.

use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{atom_footprint, centro_mates, patterson_input, AtomSet, GenConfig};
use crate::error::{Error, Result};
use crate::grid::{Fft3, ScalarField3D};

/// Pool = candidates followed by their point-inverted mates.
pub fn augment_with_mates(candidates: &AtomSet, outer_dim: usize) -> AtomSet {
    candidates.concat(&centro_mates(candidates, outer_dim))
}

/// Mean squared voxel difference.
pub fn patterson_mse(a: &ScalarField3D, b: &ScalarField3D) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.values().len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    /// Accept only strict improvements.
    Greedy,
    /// Also accept a worse subset with probability `exp(-delta / T)`.
    Anneal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparationConfig {
    pub subset_size: usize,
    pub iterations: usize,
    pub mode: SearchMode,
    /// Starting temperature; one tenth of the initial score when unset.
    pub initial_temperature: Option<f64>,
    /// Per-iteration temperature factor.
    pub decay: f64,
    pub seed: u64,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        SeparationConfig {
            subset_size: 10,
            iterations: 5000,
            mode: SearchMode::Greedy,
            initial_temperature: None,
            decay: 0.999,
            seed: 0,
        }
    }
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subset_size == 0 {
            return Err(Error::Config("subset_size must be at least 1".into()));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config(format!(
                "decay must be in (0, 1), got {}",
                self.decay
            )));
        }
        if let Some(t) = self.initial_temperature {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("invalid initial_temperature {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    /// Best subset seen, as positions and as pool indices.
    pub selected: AtomSet,
    pub indices: Vec<usize>,
    pub score: f64,
    /// Current score before the first proposal and after every iteration.
    pub trace: Vec<f64>,
}

/// A subset of the pool together with its density, amplitude spectrum and
/// score against the measured Patterson map.
pub struct SeparationState {
    pool: AtomSet,
    gen: GenConfig,
    true_patterson: ScalarField3D,
    footprints: Vec<Vec<(usize, f64)>>,
    spectra: Vec<Vec<Complex64>>,
    target: Vec<Complex64>,
    amplitude: Vec<Complex64>,
    scratch: Vec<Complex64>,
    density: ScalarField3D,
    selected: Vec<usize>,
    unselected: Vec<usize>,
    score: f64,
}

impl SeparationState {
    /// Pool atoms are rasterized periodically so candidates near the edge
    /// never fail; interior atoms rasterize exactly as in data generation.
    pub fn new(
        pool: AtomSet,
        true_patterson: ScalarField3D,
        gen: &GenConfig,
        selected: Vec<usize>,
    ) -> Result<Self> {
        let dims = gen.dims();
        if true_patterson.dims() != dims {
            return Err(Error::Shape(format!(
                "Patterson map is {:?}, configuration expects {:?}",
                true_patterson.dims().as_array(),
                dims.as_array()
            )));
        }
        let mut seen = vec![false; pool.len()];
        for &i in &selected {
            if i >= pool.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config(format!("invalid or repeated pool index {i}")));
            }
        }
        let unselected = (0..pool.len()).filter(|&i| !seen[i]).collect();

        let fft = Fft3::new(dims);
        let n = dims.len();
        let mut footprints = Vec::with_capacity(pool.len());
        let mut spectra = Vec::with_capacity(pool.len());
        for &p in pool.iter() {
            let fp: Vec<(usize, f64)> =
                atom_footprint(p, gen.atom_radius, gen.supersample, dims, true)?
                    .into_iter()
                    .map(|(i, f)| (i, f * gen.per_atom_scale))
                    .collect();
            let mut spec = vec![Complex64::new(0.0, 0.0); n];
            for &(i, f) in &fp {
                spec[i].re += f;
            }
            fft.forward_in_place(&mut spec);
            footprints.push(fp);
            spectra.push(spec);
        }
        let target = fft.forward(&true_patterson)?.into_values();

        let mut density = ScalarField3D::zeros(dims);
        let mut amplitude = vec![Complex64::new(0.0, 0.0); n];
        for &i in &selected {
            for &(v, f) in &footprints[i] {
                density.values_mut()[v] += f;
            }
            for (a, s) in amplitude.iter_mut().zip(&spectra[i]) {
                *a += s;
            }
        }
        let mut state = SeparationState {
            pool,
            gen: gen.clone(),
            true_patterson,
            footprints,
            spectra,
            target,
            scratch: amplitude.clone(),
            amplitude,
            density,
            selected,
            unselected,
            score: 0.0,
        };
        state.score = state.spectral_score(&state.amplitude);
        Ok(state)
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn pool(&self) -> &AtomSet {
        &self.pool
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn selected_atoms(&self) -> AtomSet {
        AtomSet::new(self.selected.iter().map(|&i| self.pool.0[i]).collect())
    }

    pub fn test_density(&self) -> &ScalarField3D {
        &self.density
    }

    /// Patterson map of the current density, normalized like the input.
    pub fn test_patterson(&self) -> Result<ScalarField3D> {
        patterson_input(&self.density, self.gen.normalize_input)
    }

    /// Density and score rebuilt from scratch in real space.
    pub fn recompute(&self) -> Result<(ScalarField3D, f64)> {
        let mut density = ScalarField3D::zeros(self.gen.dims());
        for &i in &self.selected {
            for &(v, f) in &self.footprints[i] {
                density.values_mut()[v] += f;
            }
        }
        let p = patterson_input(&density, self.gen.normalize_input)?;
        let score = patterson_mse(&p, &self.true_patterson)?;
        Ok((density, score))
    }

    /// Score after swapping `selected[slot]` for `unselected[other]`,
    /// leaving the proposal staged for [`SeparationState::accept`].
    pub fn propose(&mut self, slot: usize, other: usize) -> f64 {
        let out = &self.spectra[self.selected[slot]];
        let inn = &self.spectra[self.unselected[other]];
        for (((s, a), o), i) in self.scratch.iter_mut().zip(&self.amplitude).zip(out).zip(inn) {
            *s = a - o + i;
        }
        self.spectral_score(&self.scratch)
    }

    /// Commit the swap last passed to [`SeparationState::propose`].
    pub fn accept(&mut self, slot: usize, other: usize, score: f64) {
        let (out, inn) = (self.selected[slot], self.unselected[other]);
        let values = self.density.values_mut();
        for &(v, f) in &self.footprints[out] {
            values[v] -= f;
        }
        for &(v, f) in &self.footprints[inn] {
            values[v] += f;
        }
        self.selected[slot] = inn;
        self.unselected[other] = out;
        std::mem::swap(&mut self.amplitude, &mut self.scratch);
        self.score = score;
    }

    /// Mean squared real-space error between the normalized Patterson of
    /// `amplitude` and the target, via Parseval.
    fn spectral_score(&self, amplitude: &[Complex64]) -> f64 {
        let n = amplitude.len() as f64;
        let power: f64 = amplitude.iter().map(|a| a.norm_sqr()).sum();
        // the Patterson origin equals the mean power
        let origin = power / n;
        let inv = if self.gen.normalize_input && origin > 0.0 {
            1.0 / origin
        } else {
            1.0
        };
        let sum: f64 = amplitude
            .iter()
            .zip(&self.target)
            .map(|(a, t)| (a.norm_sqr() * inv - t).norm_sqr())
            .sum();
        sum / (n * n)
    }
}

/// Swap search for the `subset_size` pool positions whose Patterson map
/// best matches `true_patterson`. Deterministic for a given seed.
pub fn separate(
    pool: &AtomSet,
    true_patterson: &ScalarField3D,
    gen: &GenConfig,
    cfg: &SeparationConfig,
) -> Result<SeparationResult> {
    cfg.validate()?;
    if pool.len() < cfg.subset_size {
        return Err(Error::PoolTooSmall {
            pool: pool.len(),
            subset: cfg.subset_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial = index::sample(&mut rng, pool.len(), cfg.subset_size).into_vec();
    let mut state = SeparationState::new(pool.clone(), true_patterson.clone(), gen, initial)?;

    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(state.score());
    let mut best = (state.score(), state.selected().to_vec());
    let mut temperature = cfg.initial_temperature.unwrap_or(0.1 * state.score());
    let free = pool.len() - cfg.subset_size;

    for _ in 0..cfg.iterations {
        if free > 0 {
            let slot = rng.random_range(0..cfg.subset_size);
            let other = rng.random_range(0..free);
            let proposed = state.propose(slot, other);
            let delta = proposed - state.score();
            let take = match cfg.mode {
                SearchMode::Greedy => delta < 0.0,
                SearchMode::Anneal => {
                    // draw unconditionally so the stream does not depend on delta
                    let u: f64 = rng.random();
                    delta < 0.0 || (temperature > 0.0 && u < (-delta / temperature).exp())
                }
            };
            if take {
                state.accept(slot, other, proposed);
                if proposed < best.0 {
                    best = (proposed, state.selected().to_vec());
                }
            }
        }
        temperature *= cfg.decay;
        trace.push(state.score());
    }

    let (score, indices) = best;
    Ok(SeparationResult {
        selected: AtomSet::new(indices.iter().map(|&i| pool.0[i]).collect()),
        indices,
        score,
        trace,
    })
}
