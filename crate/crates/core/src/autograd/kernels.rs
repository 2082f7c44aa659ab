//! Forward/backward kernels for the composite ops of the tape.

use super::real::{gemm, MatMut, MatRef, Real};

pub(crate) const KERNEL_TAPS: usize = 27;

/// Gathers the 3x3x3 zero-padded neighbourhood of every voxel:
/// `cols[v, tap * cin + c]` with `tap = ((dz+1)*3 + (dy+1))*3 + (dx+1)`.
pub(crate) fn im2col<T: Real>(x: &[T], dims: [usize; 3], cin: usize) -> Vec<T> {
    let [nx, ny, nz] = dims;
    let n = nx * ny * nz;
    let width = KERNEL_TAPS * cin;
    let mut cols = vec![T::zero(); n * width];
    for z in 0..nz {
        for y in 0..ny {
            for xx in 0..nx {
                let v = xx + nx * (y + ny * z);
                let row = &mut cols[v * width..(v + 1) * width];
                let mut tap = 0;
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (sx, sy, sz) = (xx as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if sx >= 0
                                && sy >= 0
                                && sz >= 0
                                && (sx as usize) < nx
                                && (sy as usize) < ny
                                && (sz as usize) < nz
                            {
                                let src = sx as usize + nx * (sy as usize + ny * sz as usize);
                                row[tap * cin..(tap + 1) * cin]
                                    .copy_from_slice(&x[src * cin..(src + 1) * cin]);
                            }
                            tap += 1;
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto voxels.
pub(crate) fn col2im_acc<T: Real>(dcols: &[T], dims: [usize; 3], cin: usize, dx_out: &mut [T]) {
    let [nx, ny, nz] = dims;
    let width = KERNEL_TAPS * cin;
    for z in 0..nz {
        for y in 0..ny {
            for xx in 0..nx {
                let v = xx + nx * (y + ny * z);
                let row = &dcols[v * width..(v + 1) * width];
                let mut tap = 0;
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (sx, sy, sz) = (xx as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if sx >= 0
                                && sy >= 0
                                && sz >= 0
                                && (sx as usize) < nx
                                && (sy as usize) < ny
                                && (sz as usize) < nz
                            {
                                let dst = sx as usize + nx * (sy as usize + ny * sz as usize);
                                let d = &mut dx_out[dst * cin..(dst + 1) * cin];
                                for (o, &g) in d.iter_mut().zip(&row[tap * cin..(tap + 1) * cin]) {
                                    *o += g;
                                }
                            }
                            tap += 1;
                        }
                    }
                }
            }
        }
    }
}

/// Shapes for windowed attention: `qkv` is `[windows * window, 3 * channels]`,
/// rows grouped by window, columns `[q | k | v]` each split into `heads`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnShape {
    pub windows: usize,
    pub window: usize,
    pub channels: usize,
    pub heads: usize,
}

impl AttnShape {
    fn head_dim(&self) -> usize {
        self.channels / self.heads
    }
}

/// Returns `(out, probs)`; `probs` is `[windows, heads, window, window]`.
pub(crate) fn attention_forward<T: Real>(qkv: &[T], bias: &[T], s: AttnShape) -> (Vec<T>, Vec<T>) {
    let AttnShape {
        windows,
        window,
        channels: c,
        heads,
    } = s;
    let dh = s.head_dim();
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut out = vec![T::zero(); windows * window * c];
    let mut probs = vec![T::zero(); windows * heads * window * window];
    let ww = window * window;
    for w in 0..windows {
        let row0 = w * window;
        for h in 0..heads {
            let p = &mut probs[(w * heads + h) * ww..(w * heads + h + 1) * ww];
            let q = MatRef::strided(qkv, row0 * 3 * c + h * dh, window, dh, 3 * c, 1);
            let k = MatRef::strided(qkv, row0 * 3 * c + c + h * dh, window, dh, 3 * c, 1);
            gemm(scale, q, k.t(), T::zero(), MatMut::dense(p, window, window));
            let b = &bias[h * ww..(h + 1) * ww];
            for i in 0..window {
                let r = &mut p[i * window..(i + 1) * window];
                let mut m = T::neg_infinity();
                for (x, &bb) in r.iter_mut().zip(&b[i * window..(i + 1) * window]) {
                    *x += bb;
                    m = m.max(*x);
                }
                let mut sum = T::zero();
                for x in r.iter_mut() {
                    *x = (*x - m).exp();
                    sum += *x;
                }
                let inv = T::one() / sum;
                for x in r.iter_mut() {
                    *x *= inv;
                }
            }
            let v = MatRef::strided(qkv, row0 * 3 * c + 2 * c + h * dh, window, dh, 3 * c, 1);
            gemm(
                T::one(),
                MatRef::dense(p, window, window),
                v,
                T::zero(),
                MatMut::strided(&mut out, row0 * c + h * dh, window, dh, c, 1),
            );
        }
    }
    (out, probs)
}

/// Accumulates gradients of windowed attention into `dqkv` / `dbias`.
pub(crate) fn attention_backward<T: Real>(
    qkv: &[T],
    probs: &[T],
    dout: &[T],
    s: AttnShape,
    mut dqkv: Option<&mut [T]>,
    mut dbias: Option<&mut [T]>,
) {
    let AttnShape {
        windows,
        window,
        channels: c,
        heads,
    } = s;
    let dh = s.head_dim();
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let ww = window * window;
    let mut dp = vec![T::zero(); ww];
    for w in 0..windows {
        let row0 = w * window;
        for h in 0..heads {
            let p = &probs[(w * heads + h) * ww..(w * heads + h + 1) * ww];
            let d_o = MatRef::strided(dout, row0 * c + h * dh, window, dh, c, 1);
            let v = MatRef::strided(qkv, row0 * 3 * c + 2 * c + h * dh, window, dh, 3 * c, 1);
            if let Some(dqkv) = dqkv.as_deref_mut() {
                // dV += P^T dO
                gemm(
                    T::one(),
                    MatRef::dense(p, window, window).t(),
                    d_o,
                    T::one(),
                    MatMut::strided(dqkv, row0 * 3 * c + 2 * c + h * dh, window, dh, 3 * c, 1),
                );
            }
            // dP = dO V^T, then dS = P * (dP - rowsum(dP * P))
            gemm(T::one(), d_o, v.t(), T::zero(), MatMut::dense(&mut dp, window, window));
            for i in 0..window {
                let pr = &p[i * window..(i + 1) * window];
                let dr = &mut dp[i * window..(i + 1) * window];
                let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                for (d, &pp) in dr.iter_mut().zip(pr) {
                    *d = pp * (*d - dot);
                }
            }
            if let Some(db) = dbias.as_deref_mut() {
                for (o, &g) in db[h * ww..(h + 1) * ww].iter_mut().zip(&dp) {
                    *o += g;
                }
            }
            if let Some(dqkv) = dqkv.as_deref_mut() {
                let q = MatRef::strided(qkv, row0 * 3 * c + h * dh, window, dh, 3 * c, 1);
                let k = MatRef::strided(qkv, row0 * 3 * c + c + h * dh, window, dh, 3 * c, 1);
                // dQ += scale * dS K
                gemm(
                    scale,
                    MatRef::dense(&dp, window, window),
                    k,
                    T::one(),
                    MatMut::strided(dqkv, row0 * 3 * c + h * dh, window, dh, 3 * c, 1),
                );
                // dK += scale * dS^T Q
                gemm(
                    scale,
                    MatRef::dense(&dp, window, window).t(),
                    q,
                    T::one(),
                    MatMut::strided(dqkv, row0 * 3 * c + c + h * dh, window, dh, 3 * c, 1),
                );
            }
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let k = T::of(GELU_K);
    let c = T::of(GELU_C);
    let half = T::of(0.5);
    half * x * (T::one() + fast_tanh(k * (x + c * x * x * x)))
}

/// `tanh` through a single `exp`, which is markedly cheaper than libm `tanh`.
fn fast_tanh<T: Real>(u: T) -> T {
    let lim = T::of(15.0);
    let u = u.max(-lim).min(lim);
    let two = T::of(2.0);
    T::one() - two / ((two * u).exp() + T::one())
}

pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let k = T::of(GELU_K);
    let c = T::of(GELU_C);
    let half = T::of(0.5);
    let th = fast_tanh(k * (x + c * x * x * x));
    half * (T::one() + th) + half * x * (T::one() - th * th) * k * (T::one() + T::of(3.0) * c * x * x)
}

pub(crate) const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm; returns `(y, xhat, rstd)`.
pub(crate) fn layer_norm_forward<T: Real>(
    x: &[T],
    rows: usize,
    cols: usize,
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut y = vec![T::zero(); rows * cols];
    let mut xhat = vec![T::zero(); rows * cols];
    let mut rstd = vec![T::zero(); rows];
    let inv_n = T::one() / T::of(cols as f64);
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let mean = xr.iter().copied().sum::<T>() * inv_n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
        rstd[r] = rs;
        for j in 0..cols {
            let h = (xr[j] - mean) * rs;
            xhat[r * cols + j] = h;
            y[r * cols + j] = h * gamma[j] + beta[j];
        }
    }
    (y, xhat, rstd)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    gamma: &[T],
    rows: usize,
    cols: usize,
    mut dx: Option<&mut [T]>,
    mut dgamma: Option<&mut [T]>,
    mut dbeta: Option<&mut [T]>,
) {
    let inv_n = T::one() / T::of(cols as f64);
    let mut dxhat = vec![T::zero(); cols];
    for r in 0..rows {
        let g = &dy[r * cols..(r + 1) * cols];
        let h = &xhat[r * cols..(r + 1) * cols];
        if let Some(dg) = dgamma.as_deref_mut() {
            for j in 0..cols {
                dg[j] += g[j] * h[j];
            }
        }
        if let Some(db) = dbeta.as_deref_mut() {
            for j in 0..cols {
                db[j] += g[j];
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let mut mean_d = T::zero();
            let mut mean_dh = T::zero();
            for j in 0..cols {
                dxhat[j] = g[j] * gamma[j];
                mean_d += dxhat[j];
                mean_dh += dxhat[j] * h[j];
            }
            mean_d *= inv_n;
            mean_dh *= inv_n;
            let out = &mut dx[r * cols..(r + 1) * cols];
            for j in 0..cols {
                out[j] += rstd[r] * (dxhat[j] - mean_d - h[j] * mean_dh);
            }
        }
    }
}
