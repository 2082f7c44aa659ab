use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the tape. `f32` trains, `f64` checks
/// gradients.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    /// # Safety
    /// All strided accesses of the three operands must be in bounds.
    #[allow(clippy::too_many_arguments)]
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// A strided read-only matrix view into a slice.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    data: &'a [T],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T: Real> MatRef<'a, T> {
    /// Dense row-major `rows x cols` view starting at `data[0]`.
    pub fn dense(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self::strided(data, 0, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a [T], offset: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            let last = offset + (rows - 1) * rs + (cols - 1) * cs;
            assert!(last < data.len(), "matrix view out of bounds");
        }
        MatRef {
            data,
            offset,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }
}

/// Writable strided destination.
pub(crate) struct MatMut<'a, T> {
    data: &'a mut [T],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T: Real> MatMut<'a, T> {
    pub fn dense(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        Self::strided(data, 0, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a mut [T], offset: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            let last = offset + (rows - 1) * rs + (cols - 1) * cs;
            assert!(last < data.len(), "matrix view out of bounds");
        }
        MatMut {
            data,
            offset,
            rows,
            cols,
            rs,
            cs,
        }
    }
}

/// `c = alpha * a * b + beta * c`.
pub(crate) fn gemm<T: Real>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: MatMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "output shape differs");
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    // Packing dominates for skinny products; loop directly instead.
    if c.rows.min(c.cols) < SKINNY || a.cols < SKINNY {
        return direct_gemm(alpha, a, b, beta, c);
    }
    // SAFETY: every view checked its last strided element against its slice
    // length on construction; `c` is uniquely borrowed.
    unsafe {
        T::raw_gemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

const SKINNY: usize = 8;

fn axpy<T: Real>(s: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += s * xv;
    }
}

fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (xs, ys) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += xs[l] * ys[l];
        }
    }
    let mut s = T::zero();
    for (&a, &b) in xr.iter().zip(yr) {
        s += a * b;
    }
    acc.iter().fold(s, |t, &v| t + v)
}

/// Loop-ordered product for shapes where packing is wasteful. The loop order
/// is picked so the innermost loop runs over contiguous memory when possible.
fn direct_gemm<T: Real>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: MatMut<'_, T>) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let cd = c.data;
    for i in 0..m {
        for j in 0..n {
            let at = c.offset + i * c.rs + j * c.cs;
            cd[at] = if beta == T::zero() { T::zero() } else { beta * cd[at] };
        }
    }
    let ai = |i: usize, p: usize| a.data[a.offset + i * a.rs + p * a.cs];
    let bi = |p: usize, j: usize| b.data[b.offset + p * b.rs + j * b.cs];
    if a.cs == 1 && b.rs == 1 && n < SKINNY {
        for i in 0..m {
            let ar = &a.data[a.offset + i * a.rs..][..k];
            for j in 0..n {
                let bc = &b.data[b.offset + j * b.cs..][..k];
                cd[c.offset + i * c.rs + j * c.cs] += alpha * dot(ar, bc);
            }
        }
    } else if b.cs == 1 && c.cs == 1 {
        for i in 0..m {
            let cr = &mut cd[c.offset + i * c.rs..][..n];
            for p in 0..k {
                let s = alpha * ai(i, p);
                if s != T::zero() {
                    axpy(s, &b.data[b.offset + p * b.rs..][..n], cr);
                }
            }
        }
    } else if a.rs == 1 && c.rs == 1 {
        for j in 0..n {
            let cc = &mut cd[c.offset + j * c.cs..][..m];
            for p in 0..k {
                let s = alpha * bi(p, j);
                if s != T::zero() {
                    axpy(s, &a.data[a.offset + p * a.cs..][..m], cc);
                }
            }
        }
    } else if a.cs == 1 && b.rs == 1 {
        for i in 0..m {
            let ar = &a.data[a.offset + i * a.rs..][..k];
            for j in 0..n {
                let bc = &b.data[b.offset + j * b.cs..][..k];
                cd[c.offset + i * c.rs + j * c.cs] += alpha * dot(ar, bc);
            }
        }
    } else {
        for i in 0..m {
            for j in 0..n {
                let mut s = T::zero();
                for p in 0..k {
                    s += ai(i, p) * bi(p, j);
                }
                cd[c.offset + i * c.rs + j * c.cs] += alpha * s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_paths_match_packed() {
        // every layout combination on skinny and square shapes
        let shapes = [(5usize, 7usize, 3usize), (9, 2, 11), (1, 13, 9), (10, 9, 12), (12, 1, 1)];
        for &(m, k, n) in &shapes {
            let a: Vec<f64> = (0..m * k).map(|v| ((v * 7 % 11) as f64) - 5.0).collect();
            let b: Vec<f64> = (0..k * n).map(|v| ((v * 5 % 13) as f64) * 0.25).collect();
            let at: Vec<f64> = (0..k).flat_map(|p| (0..m).map(move |i| (i, p))).map(|(i, p)| a[i * k + p]).collect();
            let bt: Vec<f64> = (0..n).flat_map(|j| (0..k).map(move |p| (p, j))).map(|(p, j)| b[p * n + j]).collect();
            let expect: Vec<f64> = (0..m * n)
                .map(|ij| 1.0 + 2.0 * (0..k).map(|p| a[(ij / n) * k + p] * b[p * n + ij % n]).sum::<f64>())
                .collect();
            for ta in [false, true] {
                for tb in [false, true] {
                    for tc in [false, true] {
                        let av = if ta { MatRef::dense(&at, k, m).t() } else { MatRef::dense(&a, m, k) };
                        let bv = if tb { MatRef::dense(&bt, n, k).t() } else { MatRef::dense(&b, k, n) };
                        let mut c = vec![0.5; m * n];
                        let cv = if tc {
                            MatMut::strided(&mut c, 0, m, n, 1, m)
                        } else {
                            MatMut::dense(&mut c, m, n)
                        };
                        gemm(2.0, av, bv, 2.0, cv);
                        for i in 0..m {
                            for j in 0..n {
                                let got = if tc { c[j * m + i] } else { c[i * n + j] };
                                assert!((got - expect[i * n + j]).abs() < 1e-9, "{m}x{k}x{n} {ta}{tb}{tc}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(1.0, MatRef::dense(&a, 2, 3), MatRef::dense(&b, 3, 4), 0.0, MatMut::dense(&mut c, 2, 4));
        for i in 0..2 {
            for j in 0..4 {
                let e: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], e);
            }
        }
        // (a^T)^T b via a transposed view of a 3x2 buffer
        let at: Vec<f64> = (0..3).flat_map(|k| (0..2).map(move |i| (i * 3 + k) as f64 - 2.0)).collect();
        let mut c2 = vec![0.0; 8];
        gemm(1.0, MatRef::dense(&at, 3, 2).t(), MatRef::dense(&b, 3, 4), 0.0, MatMut::dense(&mut c2, 2, 4));
        assert_eq!(c, c2);
    }
}
