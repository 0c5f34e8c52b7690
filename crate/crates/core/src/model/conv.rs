//! Direct 3D convolution kernels.
//!
//! Inputs are zero-padded into a volume of `(nx+2p) x (ny+2p) x (nz+2p)`
//! with `QB` elements of trailing slack. Within one z-plane the output
//! voxel `(x, y)` maps to the "extended" index `q = y*px + x` of the padded
//! plane, and every kernel tap `(dz, dy, dx)` becomes a constant offset
//! `dz*plane + dy*px + dx`. A run of `QB` consecutive `q` therefore reads a
//! contiguous input slice per tap. Columns with `x >= nx` are computed and
//! thrown away.

use super::tensor::Real;
use crate::error::{Error, Result};
use crate::grid::GridDims;

/// Lanes per inner block.
pub(crate) const QB: usize = 32;

/// Padded-volume layout for one spatial size and kernel size.
#[derive(Debug, Clone)]
pub(crate) struct Geometry {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub pad: usize,
    pub px: usize,
    pub plane: usize,
    /// Padded elements per channel, slack included.
    pub cstride: usize,
    /// Extended outputs per z-plane, rounded up to a multiple of `QB`.
    pub lq: usize,
    pub offsets: Vec<usize>,
}

impl Geometry {
    pub fn new(dims: GridDims, k: usize) -> Self {
        let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
        let pad = (k - 1) / 2;
        let px = nx + 2 * pad;
        let py = ny + 2 * pad;
        let pz = nz + 2 * pad;
        let plane = px * py;
        let l = (ny - 1) * px + nx;
        let lq = l.div_ceil(QB) * QB;
        let mut offsets = Vec::with_capacity(k * k * k);
        for dz in 0..k {
            for dy in 0..k {
                for dx in 0..k {
                    offsets.push(dz * plane + dy * px + dx);
                }
            }
        }
        Geometry {
            nx,
            ny,
            nz,
            pad,
            px,
            plane,
            cstride: pz * plane + QB,
            lq,
            offsets,
        }
    }

    pub fn voxels(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Zero-pad `channels` volumes stored back to back.
    pub fn pad_input<T: Real>(&self, input: &[T], channels: usize) -> Vec<T> {
        let n = self.voxels();
        let mut out = vec![T::zero(); channels * self.cstride];
        for c in 0..channels {
            let src = &input[c * n..(c + 1) * n];
            let dst = &mut out[c * self.cstride..(c + 1) * self.cstride];
            for z in 0..self.nz {
                for y in 0..self.ny {
                    let s = (z * self.ny + y) * self.nx;
                    let d = (z + self.pad) * self.plane + (y + self.pad) * self.px + self.pad;
                    dst[d..d + self.nx].copy_from_slice(&src[s..s + self.nx]);
                }
            }
        }
        out
    }

    /// Scatter dense volumes into the extended layout `[c][z][lq]`, zero in
    /// the discarded columns.
    pub fn to_ext<T: Real>(&self, dense: &[T], channels: usize) -> Vec<T> {
        let n = self.voxels();
        let mut out = vec![T::zero(); channels * self.nz * self.lq];
        for c in 0..channels {
            for z in 0..self.nz {
                for y in 0..self.ny {
                    let s = c * n + (z * self.ny + y) * self.nx;
                    let d = (c * self.nz + z) * self.lq + y * self.px;
                    out[d..d + self.nx].copy_from_slice(&dense[s..s + self.nx]);
                }
            }
        }
        out
    }

    /// Gather the valid columns of an extended-layout result.
    pub fn gather_ext<T: Real>(&self, ext: &[T], channels: usize, dense: &mut [T]) {
        let n = self.voxels();
        for c in 0..channels {
            for z in 0..self.nz {
                for y in 0..self.ny {
                    let s = (c * self.nz + z) * self.lq + y * self.px;
                    let d = c * n + (z * self.ny + y) * self.nx;
                    dense[d..d + self.nx].copy_from_slice(&ext[s..s + self.nx]);
                }
            }
        }
    }
}

/// Output-channel blocks used by the kernels: as many 4s as fit, then a 2,
/// then a single. Blocks of 8 get vectorized across channels instead of
/// lanes and run far slower.
fn blocks(channels: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut o = 0;
    for width in [4, 2, 1] {
        while channels - o >= width {
            out.push((o, width));
            o += width;
        }
    }
    out
}

/// Kernel `[o][c][t]` repacked as `[block][c][t][o in block]`.
pub(crate) fn pack<T: Real>(kernel: &[T], cout: usize, cin: usize, taps: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(kernel.len());
    for (o0, width) in blocks(cout) {
        for c in 0..cin {
            for t in 0..taps {
                for o in o0..o0 + width {
                    out.push(kernel[(o * cin + c) * taps + t]);
                }
            }
        }
    }
    out
}

/// Kernel for the input gradient: channels swapped and taps mirrored,
/// `[c][o][taps-1-t]`, then packed with `c` as the output channel.
pub(crate) fn pack_transposed<T: Real>(kernel: &[T], cout: usize, cin: usize, taps: usize) -> Vec<T> {
    let mut flipped = vec![T::zero(); kernel.len()];
    for o in 0..cout {
        for c in 0..cin {
            for t in 0..taps {
                flipped[(c * cout + o) * taps + (taps - 1 - t)] = kernel[(o * cin + c) * taps + t];
            }
        }
    }
    pack(&flipped, cin, cout, taps)
}

/// Cross-correlate padded input `[cin][cstride]` with a packed kernel into
/// the extended layout `[cout][nz][lq]`, adding `bias` when given.
pub(crate) fn correlate<T: Real>(
    geom: &Geometry,
    padded: &[T],
    cin: usize,
    packed: &[T],
    cout: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let mut out = vec![T::zero(); cout * geom.nz * geom.lq];
    let taps = geom.offsets.len();
    let mut wpos = 0;
    for (o0, width) in blocks(cout) {
        let w = &packed[wpos..wpos + width * cin * taps];
        wpos += w.len();
        match width {
            4 => correlate_block::<T, 4>(geom, padded, cin, w, o0, bias, &mut out),
            2 => correlate_block::<T, 2>(geom, padded, cin, w, o0, bias, &mut out),
            _ => correlate_block::<T, 1>(geom, padded, cin, w, o0, bias, &mut out),
        }
    }
    out
}

fn correlate_block<T: Real, const OB: usize>(
    geom: &Geometry,
    padded: &[T],
    cin: usize,
    w: &[T],
    o0: usize,
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let taps = geom.offsets.len();
    let mut b = [T::zero(); OB];
    if let Some(bias) = bias {
        b.copy_from_slice(&bias[o0..o0 + OB]);
    }
    for z in 0..geom.nz {
        for q0 in (0..geom.lq).step_by(QB) {
            let mut acc = [[T::zero(); QB]; OB];
            for c in 0..cin {
                let base = c * geom.cstride + z * geom.plane + q0;
                let wc = &w[c * taps * OB..(c + 1) * taps * OB];
                for (t, &off) in geom.offsets.iter().enumerate() {
                    let s = base + off;
                    let inp: &[T; QB] = padded[s..s + QB].try_into().unwrap();
                    let wt: &[T; OB] = wc[t * OB..(t + 1) * OB].try_into().unwrap();
                    for o in 0..OB {
                        let wo = wt[o];
                        for l in 0..QB {
                            acc[o][l] = wo.madd(inp[l], acc[o][l]);
                        }
                    }
                }
            }
            for o in 0..OB {
                let d = ((o0 + o) * geom.nz + z) * geom.lq + q0;
                for l in 0..QB {
                    out[d + l] = acc[o][l] + b[o];
                }
            }
        }
    }
}

/// Kernel gradient `[o][c][t]` given the padded layer input and the
/// pre-activation gradient in extended layout (zero in discarded columns).
pub(crate) fn kernel_gradient<T: Real>(
    geom: &Geometry,
    padded: &[T],
    cin: usize,
    grad_ext: &[T],
    cout: usize,
) -> Vec<T> {
    let taps = geom.offsets.len();
    let mut out = vec![T::zero(); cout * cin * taps];
    let k = geom.pad * 2 + 1;
    let mut o0 = 0;
    // 7-wide rows need 7 accumulators per output channel; cap at 2 channels
    // so everything stays in registers
    let widths: &[usize] = if k > 5 { &[2, 1] } else { &[4, 2, 1] };
    for &width in widths {
        while cout - o0 >= width {
            match (width, k) {
                (4, 3) => gradient_rows::<T, 4, 3>(geom, padded, cin, grad_ext, o0, &mut out),
                (4, 5) => gradient_rows::<T, 4, 5>(geom, padded, cin, grad_ext, o0, &mut out),
                (2, 3) => gradient_rows::<T, 2, 3>(geom, padded, cin, grad_ext, o0, &mut out),
                (2, 5) => gradient_rows::<T, 2, 5>(geom, padded, cin, grad_ext, o0, &mut out),
                (2, 7) => gradient_rows::<T, 2, 7>(geom, padded, cin, grad_ext, o0, &mut out),
                (1, 3) => gradient_rows::<T, 1, 3>(geom, padded, cin, grad_ext, o0, &mut out),
                (1, 5) => gradient_rows::<T, 1, 5>(geom, padded, cin, grad_ext, o0, &mut out),
                (1, 7) => gradient_rows::<T, 1, 7>(geom, padded, cin, grad_ext, o0, &mut out),
                (4, _) => kernel_gradient_block::<T, 4>(geom, padded, cin, grad_ext, o0, &mut out),
                (2, _) => kernel_gradient_block::<T, 2>(geom, padded, cin, grad_ext, o0, &mut out),
                _ => kernel_gradient_block::<T, 1>(geom, padded, cin, grad_ext, o0, &mut out),
            }
            o0 += width;
        }
    }
    out
}

/// Lanes per accumulator in [`gradient_rows`].
const RL: usize = 8;

/// Kernel gradient for one output block and one fixed kernel width `K`:
/// all `K` taps along x share each gradient load.
fn gradient_rows<T: Real, const OB: usize, const K: usize>(
    geom: &Geometry,
    padded: &[T],
    cin: usize,
    grad_ext: &[T],
    o0: usize,
    out: &mut [T],
) {
    let taps = K * K * K;
    let gstride = geom.nz * geom.lq;
    for c in 0..cin {
        for dz in 0..K {
            for dy in 0..K {
                let mut acc = [[[T::zero(); RL]; K]; OB];
                for z in 0..geom.nz {
                    let base = c * geom.cstride + (z + dz) * geom.plane + dy * geom.px;
                    for q0 in (0..geom.lq).step_by(RL) {
                        let mut g = [[T::zero(); RL]; OB];
                        for (o, go) in g.iter_mut().enumerate() {
                            let g0 = (o0 + o) * gstride + z * geom.lq + q0;
                            *go = grad_ext[g0..g0 + RL].try_into().unwrap();
                        }
                        for dx in 0..K {
                            let s = base + q0 + dx;
                            let inp: &[T; RL] = padded[s..s + RL].try_into().unwrap();
                            for o in 0..OB {
                                for l in 0..RL {
                                    acc[o][dx][l] = g[o][l].madd(inp[l], acc[o][dx][l]);
                                }
                            }
                        }
                    }
                }
                for o in 0..OB {
                    for dx in 0..K {
                        out[((o0 + o) * cin + c) * taps + (dz * K + dy) * K + dx] = lane_sum(&acc[o][dx]);
                    }
                }
            }
        }
    }
}

/// Pairwise sum, so the reduction vectorizes.
#[inline(always)]
fn lane_sum<T: Real, const N: usize>(a: &[T; N]) -> T {
    let mut v = *a;
    let mut w = N;
    while w > 1 {
        w /= 2;
        for i in 0..w {
            v[i] += v[i + w];
        }
    }
    v[0]
}

fn kernel_gradient_block<T: Real, const OB: usize>(
    geom: &Geometry,
    padded: &[T],
    cin: usize,
    grad_ext: &[T],
    o0: usize,
    out: &mut [T],
) {
    let taps = geom.offsets.len();
    let gstride = geom.nz * geom.lq;
    for c in 0..cin {
        for (t, &off) in geom.offsets.iter().enumerate() {
            let mut acc = [[T::zero(); QB]; OB];
            for z in 0..geom.nz {
                let base = c * geom.cstride + z * geom.plane + off;
                for q0 in (0..geom.lq).step_by(QB) {
                    let inp: &[T; QB] = padded[base + q0..base + q0 + QB].try_into().unwrap();
                    for o in 0..OB {
                        let g0 = (o0 + o) * gstride + z * geom.lq + q0;
                        let g: &[T; QB] = grad_ext[g0..g0 + QB].try_into().unwrap();
                        for l in 0..QB {
                            acc[o][l] = g[l].madd(inp[l], acc[o][l]);
                        }
                    }
                }
            }
            for o in 0..OB {
                out[((o0 + o) * cin + c) * taps + t] = lane_sum(&acc[o]);
            }
        }
    }
}

fn check_even(dims: GridDims) -> Result<()> {
    if dims.as_array().iter().any(|n| n % 2 != 0) {
        return Err(Error::Shape(format!(
            "max pooling needs even dims, got {:?}",
            dims.as_array()
        )));
    }
    Ok(())
}

pub(crate) fn half(dims: GridDims) -> GridDims {
    GridDims {
        nx: dims.nx / 2,
        ny: dims.ny / 2,
        nz: dims.nz / 2,
    }
}

pub(crate) fn double(dims: GridDims) -> GridDims {
    GridDims {
        nx: dims.nx * 2,
        ny: dims.ny * 2,
        nz: dims.nz * 2,
    }
}

/// Flat indices of the 2x2x2 block under pooled voxel `(i, j, k)`.
fn children(dims: GridDims, i: usize, j: usize, k: usize) -> [usize; 8] {
    let mut out = [0; 8];
    for (n, slot) in out.iter_mut().enumerate() {
        *slot = dims.index(2 * i + (n & 1), 2 * j + ((n >> 1) & 1), 2 * k + (n >> 2));
    }
    out
}

/// Index of the first maximum among the 8 children.
fn argmax<T: Real>(values: &[T], kids: &[usize; 8]) -> usize {
    let mut best = kids[0];
    for &idx in &kids[1..] {
        if values[idx] > values[best] {
            best = idx;
        }
    }
    best
}

pub(crate) fn maxpool_forward<T: Real>(input: &[T], channels: usize, dims: GridDims) -> Result<Vec<T>> {
    check_even(dims)?;
    let small = half(dims);
    let (n, m) = (dims.len(), small.len());
    let mut out = vec![T::zero(); channels * m];
    for c in 0..channels {
        let src = &input[c * n..(c + 1) * n];
        for k in 0..small.nz {
            for j in 0..small.ny {
                for i in 0..small.nx {
                    let kids = children(dims, i, j, k);
                    out[c * m + small.index(i, j, k)] = src[argmax(src, &kids)];
                }
            }
        }
    }
    Ok(out)
}

/// Route each pooled gradient to the first maximal child.
pub(crate) fn maxpool_backward<T: Real>(
    input: &[T],
    grad_out: &[T],
    channels: usize,
    dims: GridDims,
) -> Vec<T> {
    let small = half(dims);
    let (n, m) = (dims.len(), small.len());
    let mut grad = vec![T::zero(); channels * n];
    for c in 0..channels {
        let src = &input[c * n..(c + 1) * n];
        for k in 0..small.nz {
            for j in 0..small.ny {
                for i in 0..small.nx {
                    let kids = children(dims, i, j, k);
                    grad[c * n + argmax(src, &kids)] += grad_out[c * m + small.index(i, j, k)];
                }
            }
        }
    }
    grad
}

pub(crate) fn upsample_forward<T: Real>(input: &[T], channels: usize, dims: GridDims) -> Vec<T> {
    let big = double(dims);
    let (n, m) = (dims.len(), big.len());
    let mut out = vec![T::zero(); channels * m];
    for c in 0..channels {
        for k in 0..big.nz {
            for j in 0..big.ny {
                let row = c * n + dims.index(0, j / 2, k / 2);
                let dst = c * m + big.index(0, j, k);
                for i in 0..big.nx {
                    out[dst + i] = input[row + i / 2];
                }
            }
        }
    }
    out
}

/// Sum the gradients of the 8 copies back onto their source voxel.
pub(crate) fn upsample_backward<T: Real>(grad_out: &[T], channels: usize, dims: GridDims) -> Vec<T> {
    let big = double(dims);
    let (n, m) = (dims.len(), big.len());
    let mut grad = vec![T::zero(); channels * n];
    for c in 0..channels {
        for k in 0..dims.nz {
            for j in 0..dims.ny {
                for i in 0..dims.nx {
                    let kids = children(big, i, j, k);
                    grad[c * n + dims.index(i, j, k)] =
                        kids.iter().map(|&idx| grad_out[c * m + idx]).sum();
                }
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Six nested loops over a zero-padded volume.
    fn naive(
        input: &[f64],
        cin: usize,
        dims: GridDims,
        kernel: &[f64],
        bias: &[f64],
        cout: usize,
        k: usize,
    ) -> Vec<f64> {
        let p = (k - 1) as i64 / 2;
        let n = dims.len();
        let mut out = vec![0.0; cout * n];
        for o in 0..cout {
            for z in 0..dims.nz {
                for y in 0..dims.ny {
                    for x in 0..dims.nx {
                        let mut s = bias[o];
                        for c in 0..cin {
                            for dz in 0..k {
                                for dy in 0..k {
                                    for dx in 0..k {
                                        let (xx, yy, zz) = (
                                            x as i64 + dx as i64 - p,
                                            y as i64 + dy as i64 - p,
                                            z as i64 + dz as i64 - p,
                                        );
                                        if xx < 0
                                            || yy < 0
                                            || zz < 0
                                            || xx >= dims.nx as i64
                                            || yy >= dims.ny as i64
                                            || zz >= dims.nz as i64
                                        {
                                            continue;
                                        }
                                        let w = kernel[(o * cin + c) * k * k * k + (dz * k + dy) * k + dx];
                                        s += w * input[c * n
                                            + dims.index(xx as usize, yy as usize, zz as usize)];
                                    }
                                }
                            }
                        }
                        out[o * n + dims.index(x, y, z)] = s;
                    }
                }
            }
        }
        out
    }

    fn fast(
        input: &[f64],
        cin: usize,
        dims: GridDims,
        kernel: &[f64],
        bias: &[f64],
        cout: usize,
        k: usize,
    ) -> Vec<f64> {
        let g = Geometry::new(dims, k);
        let ext = correlate(&g, &g.pad_input(input, cin), cin, &pack(kernel, cout, cin, k * k * k), cout, Some(bias));
        let mut out = vec![0.0; cout * dims.len()];
        g.gather_ext(&ext, cout, &mut out);
        out
    }

    #[test]
    fn matches_naive_oracle() {
        let cases = [
            (GridDims::new(5, 4, 3).unwrap(), 2, 3, 3),
            (GridDims::new(7, 6, 5).unwrap(), 3, 13, 5),
            (GridDims::cubic(6).unwrap(), 1, 9, 7),
            (GridDims::new(1, 2, 3).unwrap(), 2, 4, 5),
        ];
        for (seed, &(dims, cin, cout, k)) in cases.iter().enumerate() {
            let input = random(cin * dims.len(), seed as u64);
            let kernel = random(cout * cin * k * k * k, 100 + seed as u64);
            let bias = random(cout, 200 + seed as u64);
            let a = naive(&input, cin, dims, &kernel, &bias, cout, k);
            let b = fast(&input, cin, dims, &kernel, &bias, cout, k);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-10, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn identity_kernel_copies_input() {
        let dims = GridDims::new(6, 5, 4).unwrap();
        let input = random(dims.len(), 3);
        let mut kernel = vec![0.0; 125];
        kernel[62] = 1.0;
        assert_eq!(fast(&input, 1, dims, &kernel, &[0.0], 1, 5), input);
    }

    #[test]
    fn ones_kernel_spreads_delta_into_block() {
        let dims = GridDims::cubic(5).unwrap();
        for (ci, cj, ck) in [(2, 2, 2), (0, 0, 0), (4, 1, 0)] {
            let mut input = vec![0.0; dims.len()];
            input[dims.index(ci, cj, ck)] = 1.0;
            let out = fast(&input, 1, dims, &[1.0; 27], &[0.0], 1, 3);
            for (idx, &v) in out.iter().enumerate() {
                let (i, j, k) = dims.coords(idx);
                let near = i.abs_diff(ci) <= 1 && j.abs_diff(cj) <= 1 && k.abs_diff(ck) <= 1;
                assert_eq!(v, if near { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn kernel_gradient_matches_oracle() {
        let dims = GridDims::new(6, 5, 4).unwrap();
        for (k, cin, cout) in [(1, 2, 3), (3, 3, 7), (5, 2, 5), (7, 1, 3)] {
            let taps = k * k * k;
            let input = random(cin * dims.len(), k as u64);
            let grad = random(cout * dims.len(), 10 + k as u64);
            let g = Geometry::new(dims, k);
            let fastg = kernel_gradient(&g, &g.pad_input(&input, cin), cin, &g.to_ext(&grad, cout), cout);
            // d/dw of sum(grad * conv(input, w)) is conv(input, e_w) dotted with grad
            for o in 0..cout {
                for c in 0..cin {
                    for t in 0..taps {
                        let mut kernel = vec![0.0; cout * cin * taps];
                        kernel[(o * cin + c) * taps + t] = 1.0;
                        let y = naive(&input, cin, dims, &kernel, &vec![0.0; cout], cout, k);
                        let expect: f64 = y.iter().zip(&grad).map(|(a, b)| a * b).sum();
                        let got = fastg[(o * cin + c) * taps + t];
                        assert!((expect - got).abs() < 1e-10, "k={k}");
                    }
                }
            }
        }
    }

    #[test]
    fn transposed_kernel_gives_input_gradient() {
        let dims = GridDims::new(5, 6, 4).unwrap();
        let (cin, cout, k) = (2, 5, 5);
        let taps = k * k * k;
        let kernel = random(cout * cin * taps, 4);
        let grad = random(cout * dims.len(), 5);
        let g = Geometry::new(dims, k);
        let ext = correlate(&g, &g.pad_input(&grad, cout), cout, &pack_transposed(&kernel, cout, cin, taps), cin, None);
        let mut dx = vec![0.0; cin * dims.len()];
        g.gather_ext(&ext, cin, &mut dx);
        for idx in [0, 7, 31, 2 * dims.len() - 1] {
            let mut e = vec![0.0; cin * dims.len()];
            e[idx] = 1.0;
            let y = naive(&e, cin, dims, &kernel, &vec![0.0; cout], cout, k);
            let expect: f64 = y.iter().zip(&grad).map(|(a, b)| a * b).sum();
            assert!((expect - dx[idx]).abs() < 1e-10);
        }
    }

    #[test]
    fn block_split_covers_channels() {
        for c in 1..30 {
            let b = blocks(c);
            assert_eq!(b.iter().map(|x| x.1).sum::<usize>(), c);
            assert_eq!(b[0].0, 0);
        }
        assert_eq!(blocks(11), vec![(0, 4), (4, 4), (8, 2), (10, 1)]);
    }

    #[test]
    fn maxpool_matches_enumeration() {
        let dims = GridDims::new(6, 4, 8).unwrap();
        let input = random(2 * dims.len(), 9);
        let out = maxpool_forward(&input, 2, dims).unwrap();
        let small = half(dims);
        for c in 0..2 {
            for idx in 0..small.len() {
                let (i, j, k) = small.coords(idx);
                let mut m = f64::NEG_INFINITY;
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(input[c * dims.len() + dims.index(2 * i + dx, 2 * j + dy, 2 * k + dz)]);
                        }
                    }
                }
                assert_eq!(out[c * small.len() + idx], m);
            }
        }
    }

    #[test]
    fn pool_and_upsample_shapes() {
        let dims = GridDims::cubic(4).unwrap();
        let constant = vec![2.5; dims.len()];
        let pooled = maxpool_forward(&constant, 1, dims).unwrap();
        assert_eq!(pooled, vec![2.5; 8]);
        assert_eq!(upsample_forward(&pooled, 1, half(dims)), constant);
        assert!(maxpool_forward(&vec![0.0; 30], 1, GridDims::new(5, 3, 2).unwrap()).is_err());

        // blockwise-constant input survives a pool/upsample round trip
        let small = random(8, 1);
        let x = upsample_forward(&small, 1, half(dims));
        let back = upsample_forward(&maxpool_forward(&x, 1, dims).unwrap(), 1, half(dims));
        assert_eq!(back, x);
    }

    #[test]
    fn pool_backward_routes_to_first_max() {
        let dims = GridDims::cubic(2).unwrap();
        let input = vec![1.0, 3.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let g = maxpool_backward(&input, &[5.0], 1, dims);
        assert_eq!(g, vec![0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let up = upsample_backward(&[1.0; 8], 1, GridDims::cubic(1).unwrap());
        assert_eq!(up, vec![8.0]);
    }
}
