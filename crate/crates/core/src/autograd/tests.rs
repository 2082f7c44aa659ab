use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Compares the tape gradient of `build(inputs)` against central differences
/// for every input element.
fn check_grads(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Var, tol: f64) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss);
    let eval = |inputs: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let l = build(&mut g, &vars);
        g.scalar(l)
    };
    let h = 1e-6;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).map(<[f64]>::to_vec).unwrap_or(vec![0.0; t.len()]);
        for i in 0..t.len() {
            let mut plus = inputs.clone();
            plus[k].data[i] += h;
            let mut minus = inputs.clone();
            minus[k].data[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let err = (fd - analytic[i]).abs();
            assert!(
                err <= tol * (1.0 + fd.abs()),
                "input {k} elem {i}: fd {fd} vs analytic {}",
                analytic[i]
            );
        }
    }
}

/// Reduces any node to a scalar with fixed pseudo-random weights so every
/// output element contributes a distinct gradient.
fn weighted_sum(g: &mut Graph<f64>, x: Var) -> Var {
    let t = g.value(x).clone();
    let w: Vec<f64> = (0..t.len()).map(|i| ((i * 7919 % 13) as f64 - 6.0) / 6.0).collect();
    let wv = g.constant(Tensor::new(t.rows, t.cols, w));
    let p = g.mul(x, wv);
    let m = g.mean(p);
    g.scale(m, t.len() as f64)
}

#[test]
fn matmul_and_elementwise_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, 3, 4);
    let b = rand_tensor(&mut rng, 4, 2);
    let c = rand_tensor(&mut rng, 3, 2);
    check_grads(
        vec![a, b, c],
        |g, v| {
            let ab = g.matmul(v[0], v[1]);
            let s = g.add(ab, v[2]);
            let d = g.sub(s, v[2]);
            let m = g.mul(d, v[2]);
            let sc = g.scale(m, 1.7);
            weighted_sum(g, sc)
        },
        1e-7,
    );
}

#[test]
fn row_broadcast_gelu_and_layer_norm_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, 5, 6);
    let b = rand_tensor(&mut rng, 1, 6);
    let gamma = rand_tensor(&mut rng, 1, 6);
    let beta = rand_tensor(&mut rng, 1, 6);
    check_grads(
        vec![x, b, gamma, beta],
        |g, v| {
            let y = g.add_row(v[0], v[1]);
            let y = g.gelu(y);
            let y = g.layer_norm(y, v[2], v[3]);
            weighted_sum(g, y)
        },
        1e-6,
    );
}

#[test]
fn gather_concat_and_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, 4, 3);
    let y = rand_tensor(&mut rng, 4, 2);
    let idx: Vec<u32> = (0..12u32).map(|i| (i * 5) % 12).collect();
    let idx = Arc::new(idx);
    check_grads(
        vec![x, y],
        move |g, v| {
            let p = g.gather(v[0], idx.clone(), 6, 2);
            let back = g.gather(p, Arc::new((0..12).collect()), 4, 3);
            let c = g.concat_cols(back, v[1]);
            let mr = g.mean_rows(c);
            let m1 = weighted_sum(g, mr);
            let m2 = g.mean_sq_diff(back, v[0]);
            let l = g.lin_comb(&[(m1, 1.0), (m2, 0.5)]);
            let s = g.add_scalar(l, 3.0);
            let d = g.div(m1, s);
            g.lin_comb(&[(d, 1.0), (l, 2.0)])
        },
        1e-6,
    );
}

#[test]
fn mean_abs_diff_and_clamp_away_from_kinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = rand_tensor(&mut rng, 3, 3);
    let b = Tensor::new(3, 3, a.data.iter().map(|v| v + 0.3 * v.signum() + 0.05).collect());
    check_grads(
        vec![a, b],
        |g, v| {
            let c = g.clamp(v[0], -0.9, 0.9);
            g.mean_abs_diff(c, v[1])
        },
        1e-6,
    );
}

#[test]
fn mse_gradient_is_two_residual_over_n() {
    let mut g = Graph::<f64>::new();
    let pred = g.leaf(Tensor::new(1, 4, vec![0.5, -1.0, 2.0, 0.0]));
    let eps = g.constant(Tensor::new(1, 4, vec![0.0, 1.0, 1.5, -0.5]));
    let l = g.mean_sq_diff(pred, eps);
    let grads = g.backward(l);
    let expected: Vec<f64> = [0.5, -2.0, 0.5, 0.5].iter().map(|r| 2.0 * r / 4.0).collect();
    assert_eq!(grads.get(pred).unwrap(), expected.as_slice());
    assert!(grads.get(eps).is_none());
}

#[test]
fn conv3_matches_direct_sum_and_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dims = [3, 4, 2];
    let n = 24;
    let x = rand_tensor(&mut rng, n, 2);
    let w = rand_tensor(&mut rng, 27 * 2, 3);

    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(w.clone());
    let y = g.conv3(xv, wv, dims);
    let out = g.value(y);
    for z in 0..2i64 {
        for yy in 0..4i64 {
            for xx in 0..3i64 {
                let v = (xx + 3 * (yy + 4 * z)) as usize;
                for co in 0..3 {
                    let mut acc = 0.0;
                    for dz in -1..=1i64 {
                        for dy in -1..=1i64 {
                            for dx in -1..=1i64 {
                                let (sx, sy, sz) = (xx + dx, yy + dy, z + dz);
                                if sx < 0 || sy < 0 || sz < 0 || sx >= 3 || sy >= 4 || sz >= 2 {
                                    continue;
                                }
                                let tap = ((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)) as usize;
                                let src = (sx + 3 * (sy + 4 * sz)) as usize;
                                for ci in 0..2 {
                                    acc += x.data[src * 2 + ci] * w.data[(tap * 2 + ci) * 3 + co];
                                }
                            }
                        }
                    }
                    assert!((out.data[v * 3 + co] - acc).abs() < 1e-12);
                }
            }
        }
    }
    check_grads(
        vec![x, w],
        move |g, v| {
            let y = g.conv3(v[0], v[1], dims);
            weighted_sum(g, y)
        },
        1e-6,
    );
}

#[test]
fn window_attention_rows_sum_to_one_and_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (windows, window, c, heads) = (3, 4, 4, 2);
    let qkv = rand_tensor(&mut rng, windows * window, 3 * c);
    let bias = rand_tensor(&mut rng, heads * window, window);
    let mut g = Graph::new();
    let q = g.constant(qkv.clone());
    let b = g.constant(bias.clone());
    let o = g.window_attention(q, b, heads, window);
    for row in g.attention_probs(o).unwrap().chunks_exact(window) {
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
    check_grads(
        vec![qkv, bias],
        move |g, v| {
            let o = g.window_attention(v[0], v[1], heads, window);
            weighted_sum(g, o)
        },
        1e-6,
    );
}

#[test]
fn frozen_inputs_receive_no_gradient() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::new(1, 2, vec![1.0, 2.0]));
    let b = g.leaf(Tensor::new(1, 2, vec![3.0, 4.0]));
    let p = g.mul(a, b);
    let l = g.mean(p);
    let grads = g.backward(l);
    assert!(grads.get(a).is_none());
    assert_eq!(grads.get(b).unwrap(), &[0.5, 1.0]);
}
