//! Synthetic training examples.
//!
//! An example starts from `n_atoms` non-overlapping random atoms inside a
//! small inner box, translated so their centroid sits at the box center.
//! The network input is the Patterson map of those atoms; the target is the
//! density of the atoms plus their point-inverted mates, each atom scaled by
//! `per_atom_scale` so a truth/mate clash never exceeds 1.0.

mod dataset;
mod raster;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{patterson, GridDims, ScalarField3D, Vec3};

pub use dataset::{
    load_example, make_dataset, DatasetManifest, ManifestEntry, TruthFile, MANIFEST_FILE,
};
pub use raster::{atom_footprint, rasterize};

/// Placement attempts per atom before the sampler gives up.
pub const PLACEMENT_RETRIES: usize = 10_000;

/// Whole-set redraws allowed when a centered set leaves the inner box.
const CONFINEMENT_RESAMPLES: usize = 100_000;

/// Positions are kept on a `2^-40` px lattice. For coordinates below `2^12`
/// every sum and difference of lattice values is exact, so point inversion
/// through the box center is an exact involution.
const LATTICE: f64 = (1u64 << 40) as f64;

fn snap(x: f64) -> f64 {
    (x * LATTICE).round() / LATTICE
}

fn snap_vec(p: Vec3) -> Vec3 {
    Vec3::new(snap(p.x), snap(p.y), snap(p.z))
}

/// Axis-aligned box `[lo, hi)` in absolute pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl Region {
    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.lo.x
            && p.x < self.hi.x
            && p.y >= self.lo.y
            && p.y < self.hi.y
            && p.z >= self.lo.z
            && p.z < self.hi.z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub outer_dim: usize,
    pub inner_dim: usize,
    pub n_atoms: usize,
    pub atom_radius: f64,
    /// Minimum center distance between original atoms; `2 * atom_radius`
    /// when unset.
    pub min_separation: Option<f64>,
    pub per_atom_scale: f64,
    pub supersample: usize,
    pub exclusion_region: Option<Region>,
    /// Divide each Patterson input by its origin value.
    pub normalize_input: bool,
    /// Put the point-inverted mates into the target alongside the atoms.
    pub with_mates: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig::paper()
    }
}

impl GenConfig {
    /// 40^3 grid, 12^3 inner box, 10 atoms of radius 1.
    pub fn paper() -> Self {
        GenConfig {
            outer_dim: 40,
            inner_dim: 12,
            n_atoms: 10,
            atom_radius: 1.0,
            min_separation: None,
            per_atom_scale: 0.5,
            supersample: 8,
            exclusion_region: None,
            normalize_input: true,
            with_mates: true,
        }
    }

    /// 20^3 grid, 6^3 inner box, 4 atoms.
    pub fn desk() -> Self {
        GenConfig {
            outer_dim: 20,
            inner_dim: 6,
            n_atoms: 4,
            ..GenConfig::paper()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub fn dims(&self) -> GridDims {
        GridDims {
            nx: self.outer_dim,
            ny: self.outer_dim,
            nz: self.outer_dim,
        }
    }

    pub fn min_separation(&self) -> f64 {
        self.min_separation.unwrap_or(2.0 * self.atom_radius)
    }

    /// Lower corner of the inner box, which is centered in the outer box.
    pub fn inner_origin(&self) -> f64 {
        (self.outer_dim as f64 - self.inner_dim as f64) / 2.0
    }

    /// True when the inner-box diagonal exceeds half the outer edge by more
    /// than one voxel, i.e. Patterson vector origins are no longer
    /// guaranteed unambiguous.
    pub fn uniqueness_violated(&self) -> bool {
        self.inner_dim as f64 * 3f64.sqrt() > self.outer_dim as f64 / 2.0 + 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        GridDims::cubic(self.outer_dim)?;
        if self.inner_dim > self.outer_dim {
            return fail(format!(
                "inner_dim {} exceeds outer_dim {}",
                self.inner_dim, self.outer_dim
            ));
        }
        if self.n_atoms > 0 && self.inner_dim == 0 {
            return fail("inner_dim must be positive".into());
        }
        if !(self.atom_radius > 0.0 && self.atom_radius.is_finite()) {
            return fail(format!("atom_radius must be positive, got {}", self.atom_radius));
        }
        let sep = self.min_separation();
        if !(sep >= 0.0 && sep.is_finite()) {
            return fail(format!("min_separation must be non-negative, got {sep}"));
        }
        if !(self.per_atom_scale > 0.0 && self.per_atom_scale * 2.0 <= 1.0) {
            return fail(format!(
                "per_atom_scale must be in (0, 0.5], got {}",
                self.per_atom_scale
            ));
        }
        if self.supersample == 0 {
            return fail("supersample must be at least 1".into());
        }
        // Spheres of diameter `sep` centered in the inner box are disjoint and
        // fit inside the box grown by `sep`; no packing beats pi/sqrt(18).
        let packing = std::f64::consts::PI / 18f64.sqrt();
        let needed = self.n_atoms as f64 * std::f64::consts::PI / 6.0 * sep.powi(3);
        let available = (self.inner_dim as f64 + sep).powi(3) * packing;
        if needed > available {
            return fail(format!(
                "{} atoms at separation {sep} cannot fit in a {}^3 box",
                self.n_atoms, self.inner_dim
            ));
        }
        Ok(())
    }
}

/// Ordered atom centers in pixel units. Serializes as `[[x,y,z], ...]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AtomSet(pub Vec<Vec3>);

impl AtomSet {
    pub fn new(positions: Vec<Vec3>) -> Self {
        AtomSet(positions)
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vec3> {
        self.0.iter()
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.0.is_empty() {
            return None;
        }
        let sum = self.0.iter().fold(Vec3::ZERO, |acc, &p| acc + p);
        Some(sum / self.0.len() as f64)
    }

    pub fn max_pairwise_distance(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.0.iter().enumerate() {
            for b in &self.0[i + 1..] {
                best = best.max(a.distance(*b));
            }
        }
        best
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.0.iter().enumerate() {
            for b in &self.0[i + 1..] {
                best = best.min(a.distance(*b));
            }
        }
        best
    }

    pub fn concat(&self, other: &AtomSet) -> AtomSet {
        AtomSet(self.0.iter().chain(&other.0).copied().collect())
    }
}

/// Rejection-sample `n_atoms` centers uniformly over the inner box.
pub fn sample_atoms(config: &GenConfig, seed: u64) -> Result<AtomSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_atoms_with(config, &mut rng)
}

fn sample_atoms_with<R: Rng>(config: &GenConfig, rng: &mut R) -> Result<AtomSet> {
    let lo = config.inner_origin();
    let span = config.inner_dim as f64;
    let sep_sq = config.min_separation().powi(2);
    let mut placed: Vec<Vec3> = Vec::with_capacity(config.n_atoms);
    for atom in 0..config.n_atoms {
        let mut accepted = None;
        for _ in 0..PLACEMENT_RETRIES {
            let p = snap_vec(Vec3::new(
                lo + rng.random::<f64>() * span,
                lo + rng.random::<f64>() * span,
                lo + rng.random::<f64>() * span,
            ));
            if config.exclusion_region.is_some_and(|r| r.contains(p)) {
                continue;
            }
            if placed.iter().all(|q| q.distance_sq(p) >= sep_sq) {
                accepted = Some(p);
                break;
            }
        }
        match accepted {
            Some(p) => placed.push(p),
            None => {
                return Err(Error::PlacementExhausted {
                    atom,
                    retries: PLACEMENT_RETRIES,
                })
            }
        }
    }
    Ok(AtomSet(placed))
}

/// Translate so the centroid lands on the center of an `outer_dim^3` box.
///
/// The shift is snapped to the position lattice, so the centroid is exact
/// to about `1e-12` px and lattice inputs stay on the lattice.
pub fn center_atoms(atoms: &AtomSet, outer_dim: usize) -> AtomSet {
    let Some(centroid) = atoms.centroid() else {
        return atoms.clone();
    };
    let shift = snap_vec(Vec3::splat(outer_dim as f64 / 2.0) - centroid);
    AtomSet(atoms.iter().map(|&p| p + shift).collect())
}

/// Point inversion `p -> 2c - p` through the box center `c`.
pub fn centro_mates(atoms: &AtomSet, outer_dim: usize) -> AtomSet {
    let twice_center = outer_dim as f64;
    AtomSet(
        atoms
            .iter()
            .map(|p| Vec3::new(twice_center - p.x, twice_center - p.y, twice_center - p.z))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    /// Patterson map of `truth`, normalized when the config asks for it.
    pub input: ScalarField3D,
    pub target: ScalarField3D,
    pub truth: AtomSet,
    pub truth_mates: AtomSet,
    pub seed: u64,
}

/// Build one example deterministically from `seed`.
///
/// Sets whose centered positions leave the inner box are redrawn, so the
/// atoms and their mates always share the inner box and the combined set
/// spans at most the inner-box diagonal.
pub fn make_example(config: &GenConfig, seed: u64) -> Result<TrainingExample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = sample_confined(config, &mut rng)?;
    let mates = centro_mates(&truth, config.outer_dim);
    let truth_density = rasterize(&truth, config)?;
    let target = if config.with_mates {
        let mut target = truth_density.clone();
        target.add_assign(&rasterize(&mates, config)?)?;
        target
    } else {
        truth_density.clone()
    };
    let input = patterson_input(&truth_density, config.normalize_input)?;
    Ok(TrainingExample {
        input,
        target,
        truth,
        truth_mates: mates,
        seed,
    })
}

fn sample_confined<R: Rng>(config: &GenConfig, rng: &mut R) -> Result<AtomSet> {
    let lo = config.inner_origin();
    let hi = lo + config.inner_dim as f64;
    for _ in 0..CONFINEMENT_RESAMPLES {
        let centered = center_atoms(&sample_atoms_with(config, rng)?, config.outer_dim);
        let inside = centered
            .iter()
            .all(|p| p.to_array().iter().all(|c| (lo..=hi).contains(c)));
        if inside {
            return Ok(centered);
        }
    }
    Err(Error::Config(format!(
        "no centered set fit the inner box after {CONFINEMENT_RESAMPLES} draws"
    )))
}

/// Patterson map of `density`, optionally divided by its origin value.
pub fn patterson_input(density: &ScalarField3D, normalize: bool) -> Result<ScalarField3D> {
    let mut p = patterson(density)?;
    if normalize {
        let origin = p.values()[0];
        if origin > 0.0 {
            p.values_mut().iter_mut().for_each(|v| *v /= origin);
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_sample_stays_in_inner_box() {
        let cfg = GenConfig::paper();
        for seed in 0..20 {
            let atoms = sample_atoms(&cfg, seed).unwrap();
            assert_eq!(atoms.len(), 10);
            for p in atoms.iter() {
                for c in p.to_array() {
                    assert!((14.0..26.0).contains(&c), "{c}");
                }
            }
            assert!(atoms.min_pairwise_distance() >= 2.0);
        }
    }

    #[test]
    fn single_atom_sample() {
        let cfg = GenConfig {
            n_atoms: 1,
            ..GenConfig::paper()
        };
        assert_eq!(sample_atoms(&cfg, 3).unwrap().len(), 1);
    }

    #[test]
    fn over_dense_config_exhausts() {
        let cfg = GenConfig {
            inner_dim: 2,
            n_atoms: 10,
            min_separation: Some(2.0),
            ..GenConfig::paper()
        };
        cfg.validate().unwrap();
        assert!(matches!(
            sample_atoms(&cfg, 1),
            Err(Error::PlacementExhausted { .. })
        ));
    }

    #[test]
    fn impossible_packing_is_a_config_error() {
        let cfg = GenConfig {
            inner_dim: 1,
            n_atoms: 50,
            ..GenConfig::paper()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn centering_examples() {
        let one = AtomSet::new(vec![Vec3::new(3.0, 3.0, 3.0)]);
        assert_eq!(center_atoms(&one, 40).0, vec![Vec3::splat(20.0)]);
        let two = AtomSet::new(vec![Vec3::splat(10.0), Vec3::splat(30.0)]);
        assert_eq!(center_atoms(&two, 40), two);
        assert!(center_atoms(&AtomSet::default(), 40).is_empty());
    }

    #[test]
    fn centering_preserves_distances_and_is_idempotent() {
        let cfg = GenConfig::paper();
        for seed in 0..10 {
            let atoms = sample_atoms(&cfg, seed).unwrap();
            let centered = center_atoms(&atoms, 40);
            assert!((atoms.max_pairwise_distance() - centered.max_pairwise_distance()).abs() < 1e-12);
            let c = centered.centroid().unwrap();
            assert!(c.distance(Vec3::splat(20.0)) < 1e-9);
            let twice = center_atoms(&centered, 40);
            for (a, b) in twice.iter().zip(centered.iter()) {
                assert!(a.distance(*b) < 1e-12);
            }
        }
    }

    #[test]
    fn mate_examples() {
        let c = AtomSet::new(vec![Vec3::splat(20.0)]);
        assert_eq!(centro_mates(&c, 40), c);
        let a = AtomSet::new(vec![Vec3::new(18.0, 20.0, 22.0)]);
        assert_eq!(centro_mates(&a, 40).0, vec![Vec3::new(22.0, 20.0, 18.0)]);
        let atoms = center_atoms(&sample_atoms(&GenConfig::paper(), 4).unwrap(), 40);
        assert_eq!(centro_mates(&centro_mates(&atoms, 40), 40), atoms);
        let mc = centro_mates(&atoms, 40).centroid().unwrap();
        assert!(mc.distance(Vec3::splat(20.0)) < 1e-9);
    }

    #[test]
    fn uniqueness_flag() {
        assert!(!GenConfig::paper().uniqueness_violated());
        assert!(!GenConfig::desk().uniqueness_violated());
        let wide = GenConfig {
            inner_dim: 24,
            ..GenConfig::paper()
        };
        assert!(wide.uniqueness_violated());
        let mid = GenConfig {
            inner_dim: 18,
            ..GenConfig::paper()
        };
        assert!(mid.uniqueness_violated());
    }

    #[test]
    fn example_is_deterministic_and_consistent() {
        let cfg = GenConfig::paper();
        let a = make_example(&cfg, 99).unwrap();
        let b = make_example(&cfg, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.input.values()[0], 1.0);
        assert!(a.target.max() <= 1.0);
        let from_mates = patterson_input(&rasterize(&a.truth_mates, &cfg).unwrap(), true).unwrap();
        assert!(a.input.max_relative_diff(&from_mates) < 1e-9);
        let raw = patterson(&rasterize(&a.truth, &cfg).unwrap()).unwrap();
        let mut expected = raw.clone();
        expected.scale(1.0 / raw.values()[0]);
        assert!(a.input.max_relative_diff(&expected) < 1e-9);
    }

    #[test]
    fn target_is_sum_of_both_densities() {
        let cfg = GenConfig::desk();
        let ex = make_example(&cfg, 5).unwrap();
        let mut sum = rasterize(&ex.truth, &cfg).unwrap();
        sum.add_assign(&rasterize(&ex.truth_mates, &cfg).unwrap()).unwrap();
        assert_eq!(ex.target, sum);
        let no_mates = make_example(
            &GenConfig {
                with_mates: false,
                ..cfg.clone()
            },
            5,
        )
        .unwrap();
        assert_eq!(no_mates.target, rasterize(&no_mates.truth, &cfg).unwrap());
    }

    #[test]
    fn paper_target_sparsity_in_band() {
        let cfg = GenConfig::paper();
        let mut fractions = Vec::new();
        for seed in 0..10 {
            let ex = make_example(&cfg, 1000 + seed).unwrap();
            let (lo, hi) = (13, 27);
            let mut nonzero = 0;
            for k in lo..hi {
                for j in lo..hi {
                    for i in lo..hi {
                        if ex.target.get(i, j, k) > 0.0 {
                            nonzero += 1;
                        }
                    }
                }
            }
            fractions.push(nonzero as f64 / 14f64.powi(3));
        }
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        assert!((0.10..=0.20).contains(&mean), "{mean}");
    }

    #[test]
    fn wide_inner_box_still_generates() {
        let cfg = GenConfig {
            inner_dim: 12,
            ..GenConfig::desk()
        };
        for seed in 0..20 {
            let ex = make_example(&cfg, seed).unwrap();
            assert!(ex.target.max() <= 1.0);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn separation_and_exclusion_hold(seed in any::<u64>()) {
                let cfg = GenConfig {
                    exclusion_region: Some(Region { lo: Vec3::splat(14.0), hi: Vec3::splat(20.0) }),
                    ..GenConfig::paper()
                };
                let atoms = sample_atoms(&cfg, seed).unwrap();
                prop_assert!(atoms.min_pairwise_distance() >= 2.0);
                for p in atoms.iter() {
                    prop_assert!(!cfg.exclusion_region.unwrap().contains(*p));
                }
            }

            #[test]
            fn combined_extent_within_half_edge(seed in any::<u64>()) {
                let cfg = GenConfig::paper();
                let ex = make_example(&cfg, seed).unwrap();
                let all = ex.truth.concat(&ex.truth_mates);
                prop_assert!(all.max_pairwise_distance() <= 20.0 + 2.0);
            }
        }
    }
}
