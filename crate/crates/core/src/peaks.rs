//! Candidate atom positions from a density map: 26-neighbor local maxima
//! above a threshold, refined to the density-weighted centroid of the 3x3x3
//! block around each maximum.

use serde::{Deserialize, Serialize};

use crate::datagen::AtomSet;
use crate::error::{Error, Result};
use crate::grid::{GridDims, ScalarField3D, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakConfig {
    /// Minimum peak value as a fraction of the map maximum.
    pub threshold_fraction: f64,
    pub max_peaks: usize,
}

impl Default for PeakConfig {
    fn default() -> Self {
        PeakConfig {
            threshold_fraction: 0.10,
            max_peaks: 40,
        }
    }
}

impl PeakConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction < 1.0) {
            return Err(Error::Config(format!(
                "threshold_fraction must be in (0, 1), got {}",
                self.threshold_fraction
            )));
        }
        if self.max_peaks == 0 {
            return Err(Error::Config("max_peaks must be at least 1".into()));
        }
        Ok(())
    }
}

/// Serializes as `{"pos": [x, y, z], "strength": s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub pos: Vec3,
    /// Summed density of the 27-voxel block.
    pub strength: f64,
}

pub fn positions(peaks: &[Peak]) -> AtomSet {
    AtomSet::new(peaks.iter().map(|p| p.pos).collect())
}

/// In-bounds members of the 3x3x3 block around `(i, j, k)`, center included.
fn block(dims: GridDims, i: usize, j: usize, k: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    let range = |c: usize, n: usize| c.saturating_sub(1)..(c + 2).min(n);
    let (xs, ys, zs) = (range(i, dims.nx), range(j, dims.ny), range(k, dims.nz));
    zs.flat_map(move |z| {
        let xs = xs.clone();
        ys.clone()
            .flat_map(move |y| xs.clone().map(move |x| (x, y, z)))
    })
}

/// Peaks of `map` sorted by descending strength. Negative values are
/// treated as zero. A plateau of equal local-maximum voxels yields one peak,
/// at its lowest flat index.
pub fn find_peaks(map: &ScalarField3D, config: &PeakConfig) -> Result<Vec<Peak>> {
    config.validate()?;
    let dims = map.dims();
    let v: Vec<f64> = map.values().iter().map(|&x| x.max(0.0)).collect();
    let max = v.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::EmptyMap);
    }
    let threshold = config.threshold_fraction * max;

    let is_local_max = |idx: usize| {
        let (i, j, k) = dims.coords(idx);
        block(dims, i, j, k).all(|(x, y, z)| v[dims.index(x, y, z)] <= v[idx])
    };

    let mut claimed = vec![false; v.len()];
    let mut found: Vec<(usize, Peak)> = Vec::new();
    for idx in 0..v.len() {
        if claimed[idx] || v[idx] < threshold || !is_local_max(idx) {
            continue;
        }
        // claim the whole equal-valued plateau so only this voxel reports it
        let mut stack = vec![idx];
        claimed[idx] = true;
        while let Some(cur) = stack.pop() {
            let (i, j, k) = dims.coords(cur);
            for (x, y, z) in block(dims, i, j, k) {
                let n = dims.index(x, y, z);
                if !claimed[n] && v[n] == v[idx] {
                    claimed[n] = true;
                    stack.push(n);
                }
            }
        }

        let (i, j, k) = dims.coords(idx);
        let mut weight = 0.0;
        let mut sum = Vec3::ZERO;
        for (x, y, z) in block(dims, i, j, k) {
            let w = v[dims.index(x, y, z)];
            weight += w;
            sum += Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * w;
        }
        found.push((
            idx,
            Peak {
                pos: sum / weight,
                strength: weight,
            },
        ));
    }
    found.sort_by(|a, b| b.1.strength.total_cmp(&a.1.strength).then(a.0.cmp(&b.0)));
    found.truncate(config.max_peaks);
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{rasterize, GenConfig};
    use crate::grid::circular_shift;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(p: Vec3) -> ScalarField3D {
        rasterize(&AtomSet::new(vec![p]), &GenConfig::paper()).unwrap()
    }

    #[test]
    fn single_atom_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut total = 0.0;
        for _ in 0..100 {
            let p = Vec3::new(
                rng.random_range(10.0..30.0),
                rng.random_range(10.0..30.0),
                rng.random_range(10.0..30.0),
            );
            let peaks = find_peaks(&single(p), &PeakConfig::default()).unwrap();
            assert_eq!(peaks.len(), 1);
            let err = peaks[0].pos.distance(p);
            assert!(err < 0.3, "{p:?} -> {:?}", peaks[0].pos);
            total += err;
        }
        assert!(total / 100.0 < 0.3);
    }

    #[test]
    fn two_separated_atoms() {
        let a = Vec3::new(15.3, 20.1, 19.7);
        let b = Vec3::new(25.3, 20.1, 19.7);
        let map = rasterize(&AtomSet::new(vec![a, b]), &GenConfig::paper()).unwrap();
        let peaks = find_peaks(&map, &PeakConfig::default()).unwrap();
        assert_eq!(peaks.len(), 2);
        let mut got: Vec<Vec3> = peaks.iter().map(|p| p.pos).collect();
        got.sort_by(|p, q| p.x.total_cmp(&q.x));
        assert!(got[0].distance(a) < 0.3);
        assert!(got[1].distance(b) < 0.3);
    }

    #[test]
    fn constant_map_gives_first_voxel() {
        let dims = GridDims::cubic(5).unwrap();
        let map = ScalarField3D::from_vec(dims, vec![0.7; dims.len()]).unwrap();
        let peaks = find_peaks(&map, &PeakConfig::default()).unwrap();
        assert_eq!(peaks.len(), 1);
        // centroid over the in-bounds 2x2x2 corner block
        assert!(peaks[0].pos.distance(Vec3::splat(1.0)) < 1e-12);
        assert!((peaks[0].strength - 8.0 * 0.7).abs() < 1e-12);
    }

    #[test]
    fn plateau_reports_once() {
        let dims = GridDims::cubic(8).unwrap();
        let mut map = ScalarField3D::zeros(dims);
        map.set(3, 3, 3, 1.0);
        map.set(4, 3, 3, 1.0);
        map.set(4, 4, 3, 1.0);
        let peaks = find_peaks(&map, &PeakConfig::default()).unwrap();
        assert_eq!(peaks.len(), 1);
    }

    #[test]
    fn empty_and_negative_maps_error() {
        let dims = GridDims::cubic(4).unwrap();
        assert!(matches!(
            find_peaks(&ScalarField3D::zeros(dims), &PeakConfig::default()),
            Err(Error::EmptyMap)
        ));
        let neg = ScalarField3D::from_vec(dims, vec![-0.5; dims.len()]).unwrap();
        assert!(matches!(find_peaks(&neg, &PeakConfig::default()), Err(Error::EmptyMap)));
    }

    #[test]
    fn cap_and_order() {
        let dims = GridDims::cubic(20).unwrap();
        let mut map = ScalarField3D::zeros(dims);
        for n in 0..5 {
            map.set(2 + 3 * n, 10, 10, 1.0 + n as f64);
        }
        let peaks = find_peaks(
            &map,
            &PeakConfig {
                threshold_fraction: 0.01,
                max_peaks: 3,
            },
        )
        .unwrap();
        let strengths: Vec<f64> = peaks.iter().map(|p| p.strength).collect();
        assert_eq!(strengths, [5.0, 4.0, 3.0]);
    }

    #[test]
    fn json_shape() {
        let p = Peak {
            pos: Vec3::new(1.0, 2.5, 3.0),
            strength: 0.25,
        };
        assert_eq!(
            serde_json::to_string(&p).unwrap(),
            r#"{"pos":[1.0,2.5,3.0],"strength":0.25}"#
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn atoms_map(seed: u64) -> ScalarField3D {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let atoms: Vec<Vec3> = (0..6)
                .map(|_| {
                    Vec3::new(
                        rng.random_range(8.0..32.0),
                        rng.random_range(8.0..32.0),
                        rng.random_range(8.0..32.0),
                    )
                })
                .collect();
            rasterize(&AtomSet::new(atoms), &GenConfig::paper()).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn translation_equivariant(seed in any::<u64>(), s in prop::array::uniform3(-4i64..=4)) {
                let map = atoms_map(seed);
                let cfg = PeakConfig::default();
                let a = find_peaks(&map, &cfg).unwrap();
                let b = find_peaks(&circular_shift(&map, s), &cfg).unwrap();
                prop_assert_eq!(a.len(), b.len());
                let shift = Vec3::new(s[0] as f64, s[1] as f64, s[2] as f64);
                for p in &a {
                    let moved = p.pos + shift;
                    prop_assert!(b.iter().any(|q| q.pos.distance(moved) < 1e-9 && (q.strength - p.strength).abs() < 1e-12));
                }
            }

            #[test]
            fn raising_threshold_never_adds(seed in any::<u64>(), lo in 0.01f64..0.5, extra in 0.0f64..0.49) {
                let map = atoms_map(seed);
                let low = PeakConfig { threshold_fraction: lo, max_peaks: 1000 };
                let high = PeakConfig { threshold_fraction: lo + extra, max_peaks: 1000 };
                let a = find_peaks(&map, &low).unwrap();
                let b = find_peaks(&map, &high).unwrap();
                prop_assert!(b.len() <= a.len());
                for p in &b {
                    prop_assert!(a.contains(p));
                }
            }
        }
    }
}
