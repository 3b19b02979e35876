//! Inner loops of the network and optimizer.
//!
//! On x86-64 the same loops are also compiled with AVX2 enabled and picked at
//! run time. Multiplies and adds are never fused, so both builds round
//! identically.

use crate::num::Scalar;

#[inline(always)]
fn axpy_plain<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

const RB: usize = 4;
const CB: usize = 16;

/// `out[b, :] += sum_i x[b, i] w[i, :]` with `x` of shape `batch x m` and `w` of shape `m x o`.
#[inline(always)]
fn matmul_acc_plain<T: Scalar>(x: &[T], w: &[T], batch: usize, m: usize, o: usize, out: &mut [T]) {
    let full_b = batch - batch % RB;
    let full_j = o - o % CB;
    let mut packed: Vec<(usize, [T; RB])> = Vec::with_capacity(m);
    for b0 in (0..full_b).step_by(RB) {
        let xs: [&[T]; RB] = std::array::from_fn(|r| &x[(b0 + r) * m..(b0 + r + 1) * m]);
        // input rows that are nonzero somewhere in this block of samples
        packed.clear();
        for i in 0..m {
            let xr: [T; RB] = std::array::from_fn(|r| xs[r][i]);
            if xr.iter().any(|v| *v != T::zero()) {
                packed.push((i, xr));
            }
        }
        for j0 in (0..full_j).step_by(CB) {
            let mut acc = [[T::zero(); CB]; RB];
            for &(i, xr) in &packed {
                let wr: &[T; CB] = w[i * o + j0..i * o + j0 + CB].try_into().expect("block");
                for r in 0..RB {
                    for c in 0..CB {
                        acc[r][c] += xr[r] * wr[c];
                    }
                }
            }
            for r in 0..RB {
                let dst = &mut out[(b0 + r) * o + j0..(b0 + r) * o + j0 + CB];
                for c in 0..CB {
                    dst[c] += acc[r][c];
                }
            }
        }
        for j in full_j..o {
            for r in 0..RB {
                let mut a = T::zero();
                for i in 0..m {
                    a += xs[r][i] * w[i * o + j];
                }
                out[(b0 + r) * o + j] += a;
            }
        }
    }
    for b in full_b..batch {
        let xb = &x[b * m..(b + 1) * m];
        let ob = &mut out[b * o..(b + 1) * o];
        for (i, &xi) in xb.iter().enumerate() {
            if xi != T::zero() {
                axpy_plain(xi, &w[i * o..(i + 1) * o], ob);
            }
        }
    }
}

/// `gw[i, :] += sum_b x[b, i] delta[b, :]`, visiting only nonzero inputs.
#[inline(always)]
fn weight_grad_plain<T: Scalar>(x: &[T], delta: &[T], batch: usize, m: usize, o: usize, gw: &mut [T]) {
    // bucket the nonzero inputs by column with two sequential passes
    let mut start = vec![0usize; m + 1];
    for row in x.chunks_exact(m).take(batch) {
        for (i, v) in row.iter().enumerate() {
            if *v != T::zero() {
                start[i + 1] += 1;
            }
        }
    }
    for i in 0..m {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut entries = vec![(0usize, T::zero()); start[m]];
    for (b, row) in x.chunks_exact(m).take(batch).enumerate() {
        for (i, &v) in row.iter().enumerate() {
            if v != T::zero() {
                entries[fill[i]] = (b, v);
                fill[i] += 1;
            }
        }
    }
    for i in 0..m {
        let row = &mut gw[i * o..(i + 1) * o];
        for &(b, xi) in &entries[start[i]..start[i + 1]] {
            axpy_plain(xi, &delta[b * o..(b + 1) * o], row);
        }
    }
}

/// `dx[b, i] = sum_j w[i, j] delta[b, j]`, via a transposed copy of `w`.
#[inline(always)]
fn input_grad_plain<T: Scalar>(w: &[T], delta: &[T], batch: usize, m: usize, o: usize, dx: &mut [T]) {
    const TILE: usize = 16;
    let mut wt = vec![T::zero(); m * o];
    for i0 in (0..m).step_by(TILE) {
        let i1 = (i0 + TILE).min(m);
        for j0 in (0..o).step_by(TILE) {
            let j1 = (j0 + TILE).min(o);
            for i in i0..i1 {
                for (k, &v) in w[i * o + j0..i * o + j1].iter().enumerate() {
                    wt[(j0 + k) * m + i] = v;
                }
            }
        }
    }
    dx.iter_mut().for_each(|v| *v = T::zero());
    matmul_acc_plain(delta, &wt, batch, o, m, dx);
}

/// `p -= step * m / (sqrt(v) + eps)` after the moment updates.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn adam_plain<T: Scalar>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], b1: T, b2: T, step: T, eps: T) {
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + c1 * g;
        *v = b2 * *v + c2 * g * g;
        *p -= step * *m / (v.sqrt() + eps);
    }
}

#[cfg(target_arch = "x86_64")]
mod wide {
    use super::*;

    #[target_feature(enable = "avx2")]
    pub(super) fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
        axpy_plain(a, x, y)
    }

    #[target_feature(enable = "avx2")]
    #[allow(clippy::too_many_arguments)]
    pub(super) fn adam<T: Scalar>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], b1: T, b2: T, step: T, eps: T) {
        adam_plain(p, g, m, v, b1, b2, step, eps)
    }

    #[target_feature(enable = "avx2")]
    pub(super) fn matmul_acc<T: Scalar>(x: &[T], w: &[T], batch: usize, m: usize, o: usize, out: &mut [T]) {
        matmul_acc_plain(x, w, batch, m, o, out)
    }

    #[target_feature(enable = "avx2")]
    pub(super) fn weight_grad<T: Scalar>(x: &[T], delta: &[T], batch: usize, m: usize, o: usize, gw: &mut [T]) {
        weight_grad_plain(x, delta, batch, m, o, gw)
    }

    #[target_feature(enable = "avx2")]
    pub(super) fn input_grad<T: Scalar>(w: &[T], delta: &[T], batch: usize, m: usize, o: usize, dx: &mut [T]) {
        input_grad_plain(w, delta, batch, m, o, dx)
    }

    pub(super) fn available() -> bool {
        std::is_x86_feature_detected!("avx2")
    }
}

/// `y += a * x`.
#[inline]
pub(crate) fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    if wide::available() {
        // SAFETY: the CPU supports AVX2
        return unsafe { wide::axpy(a, x, y) };
    }
    axpy_plain(a, x, y)
}

pub(crate) fn matmul_acc<T: Scalar>(x: &[T], w: &[T], batch: usize, m: usize, o: usize, out: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    if wide::available() {
        // SAFETY: the CPU supports AVX2
        return unsafe { wide::matmul_acc(x, w, batch, m, o, out) };
    }
    matmul_acc_plain(x, w, batch, m, o, out)
}

pub(crate) fn weight_grad<T: Scalar>(x: &[T], delta: &[T], batch: usize, m: usize, o: usize, gw: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    if wide::available() {
        // SAFETY: the CPU supports AVX2
        return unsafe { wide::weight_grad(x, delta, batch, m, o, gw) };
    }
    weight_grad_plain(x, delta, batch, m, o, gw)
}

pub(crate) fn input_grad<T: Scalar>(w: &[T], delta: &[T], batch: usize, m: usize, o: usize, dx: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    if wide::available() {
        // SAFETY: the CPU supports AVX2
        return unsafe { wide::input_grad(w, delta, batch, m, o, dx) };
    }
    input_grad_plain(w, delta, batch, m, o, dx)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn adam<T: Scalar>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], b1: T, b2: T, step: T, eps: T) {
    #[cfg(target_arch = "x86_64")]
    if wide::available() {
        // SAFETY: the CPU supports AVX2
        return unsafe { wide::adam(p, g, m, v, b1, b2, step, eps) };
    }
    adam_plain(p, g, m, v, b1, b2, step, eps)
}
