use super::{AtomSet, GenConfig};
use crate::error::{Error, Result};
use crate::grid::{GridDims, ScalarField3D, Vec3};

/// Fraction of each voxel covered by a sphere, estimated on a
/// `supersample^3` lattice of subcell centers. Returns `(index, fraction)`
/// for every touched voxel.
///
/// With `wrap` the footprint is folded periodically into the grid;
/// otherwise the sphere plus a one-voxel margin must lie inside the grid.
pub fn atom_footprint(
    center: Vec3,
    radius: f64,
    supersample: usize,
    dims: GridDims,
    wrap: bool,
) -> Result<Vec<(usize, f64)>> {
    if !center.is_finite() {
        return Err(Error::Config(format!("non-finite atom position {center:?}")));
    }
    let extent = dims.as_array();
    let c = center.to_array();
    if !wrap {
        let margin = radius + 1.0;
        let inside = (0..3).all(|a| c[a] >= margin && c[a] <= extent[a] as f64 - margin);
        if !inside {
            return Err(Error::BoundaryViolation {
                x: c[0],
                y: c[1],
                z: c[2],
            });
        }
    }

    let s = supersample;
    let step = 1.0 / s as f64;
    let r2 = radius * radius;

    // per axis: first voxel and squared offsets of every subcell center
    let mut first = [0i64; 3];
    let mut offsets: [Vec<f64>; 3] = Default::default();
    for a in 0..3 {
        let lo = (c[a] - radius).floor() as i64;
        let hi = (c[a] + radius).floor() as i64;
        first[a] = lo;
        offsets[a] = (lo..=hi)
            .flat_map(|v| (0..s).map(move |t| v as f64 + (t as f64 + 0.5) * step))
            .map(|x| (x - c[a]) * (x - c[a]))
            .collect();
    }
    let span = |a: usize| offsets[a].len() / s;

    let norm = 1.0 / (s * s * s) as f64;
    let mut out = Vec::with_capacity(span(0) * span(1) * span(2));
    for vz in 0..span(2) {
        for vy in 0..span(1) {
            for vx in 0..span(0) {
                let mut count = 0usize;
                for tz in 0..s {
                    let dz = offsets[2][vz * s + tz];
                    if dz > r2 {
                        continue;
                    }
                    for ty in 0..s {
                        let dyz = dz + offsets[1][vy * s + ty];
                        if dyz > r2 {
                            continue;
                        }
                        count += offsets[0][vx * s..(vx + 1) * s]
                            .iter()
                            .filter(|&&dx| dyz + dx <= r2)
                            .count();
                    }
                }
                if count == 0 {
                    continue;
                }
                let idx = dims.wrapped_index(
                    first[0] + vx as i64,
                    first[1] + vy as i64,
                    first[2] + vz as i64,
                );
                out.push((idx, count as f64 * norm));
            }
        }
    }
    Ok(out)
}

/// Fractional-occupancy density of `atoms`, each scaled by
/// `per_atom_scale`.
pub fn rasterize(atoms: &AtomSet, config: &GenConfig) -> Result<ScalarField3D> {
    let dims = config.dims();
    let mut field = ScalarField3D::zeros(dims);
    for &p in atoms.iter() {
        for (idx, frac) in atom_footprint(p, config.atom_radius, config.supersample, dims, false)? {
            field.values_mut()[idx] += config.per_atom_scale * frac;
        }
    }
    Ok(field)
}
