//! Brute-force reference implementations used only by test suites.
//!
//! Everything here is a direct transcription of a definition: six-deep
//! convolution loops, full-sort nearest neighbors, central finite
//! differences. These functions share the `Tensor` type with the main crate
//! but none of its op code, so agreement between the two is meaningful
//! evidence. They are single-threaded and deliberately slow.

use stcm::error::{Error, Result};
use stcm::tensor::Tensor;

/// Central finite differences `(f(p + h e_i) - f(p - h e_i)) / 2h` for every
/// coordinate of `params`.
pub fn fd_gradient(
    loss_fn: impl Fn(&[f64]) -> f64,
    params: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    if step <= 0.0 {
        return Err(Error::Argument(format!("fd step must be > 0, got {step}")));
    }
    let mut work = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + step;
        let plus = loss_fn(&work);
        work[i] = orig - step;
        let minus = loss_fn(&work);
        work[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at coordinate {i}: f+ = {plus}, f- = {minus}"
            )));
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Maximum relative error between an analytic gradient and its finite
/// difference estimate, with denominator `max(|a|, |b|, floor)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Triple-loop matrix product `out[n,o] = sum_i w[o,i] x[n,i] + b[o]`.
pub fn naive_matmul(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Tensor {
    let (batch, in_dim) = (x.shape()[0], x.shape()[1]);
    let out_dim = w.shape()[0];
    assert_eq!(w.shape()[1], in_dim);
    let mut out = Tensor::zeros(&[batch, out_dim]).unwrap();
    for n in 0..batch {
        for o in 0..out_dim {
            let mut acc = bias.map_or(0.0, |b| b.data()[o]);
            for i in 0..in_dim {
                acc += w.get(&[o, i]) * x.get(&[n, i]);
            }
            out.set(&[n, o], acc);
        }
    }
    out
}

/// Six-nested-loop convolution (cross-correlation) with explicit zero
/// padding: `pad_top`/`pad_left` rows and columns of zeros before the data,
/// enough after it to reach `out_h`/`out_w`.
pub fn naive_conv2d(
    x: &Tensor,
    k: &Tensor,
    bias: Option<&Tensor>,
    pad_top: usize,
    pad_left: usize,
    out_h: usize,
    out_w: usize,
) -> Tensor {
    let (batch, in_ch, in_h, in_w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (out_ch, _, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    assert_eq!(k.shape()[1], in_ch);
    let mut out = Tensor::zeros(&[batch, out_ch, out_h, out_w]).unwrap();
    for n in 0..batch {
        for d in 0..out_ch {
            for i in 0..out_h {
                for j in 0..out_w {
                    let mut acc = bias.map_or(0.0, |b| b.data()[d]);
                    for c in 0..in_ch {
                        for u in 0..kh {
                            for v in 0..kw {
                                // position in the padded image
                                let pi = i + u;
                                let pj = j + v;
                                if pi < pad_top || pj < pad_left {
                                    continue;
                                }
                                let (si, sj) = (pi - pad_top, pj - pad_left);
                                if si >= in_h || sj >= in_w {
                                    continue;
                                }
                                acc += k.get(&[d, c, u, v]) * x.get(&[n, c, si, sj]);
                            }
                        }
                    }
                    out.set(&[n, d, i, j], acc);
                }
            }
        }
    }
    out
}

/// Direct-definition transposed convolution over the full (uncropped)
/// output: `out[n,c,y,x] = sum h[n,d,y-u,x-v] k[d,c,u,v]`.
pub fn naive_conv2d_transpose(h: &Tensor, k: &Tensor) -> Tensor {
    let (batch, hd, hh, hw) = (h.shape()[0], h.shape()[1], h.shape()[2], h.shape()[3]);
    let (_, in_ch, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    let (oh, ow) = (hh + kh - 1, hw + kw - 1);
    let mut out = Tensor::zeros(&[batch, in_ch, oh, ow]).unwrap();
    for n in 0..batch {
        for c in 0..in_ch {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for d in 0..hd {
                        for u in 0..kh {
                            for v in 0..kw {
                                if y < u || x < v {
                                    continue;
                                }
                                let (si, sj) = (y - u, x - v);
                                if si >= hh || sj >= hw {
                                    continue;
                                }
                                acc += h.get(&[n, d, si, sj]) * k.get(&[d, c, u, v]);
                            }
                        }
                    }
                    out.set(&[n, c, y, x], acc);
                }
            }
        }
    }
    out
}

/// Brute-force Lp pooling for any order `p >= 1`:
/// `(epsilon + sum |h|^p)^(1/p)` over non-overlapping groups of
/// `feature_group` channels and `sh x sw` windows.
pub fn naive_lppool(
    h: &Tensor,
    feature_group: usize,
    sh: usize,
    sw: usize,
    p: f64,
    epsilon: f64,
) -> Tensor {
    let (shape, rank4) = match h.rank() {
        2 => (vec![h.shape()[0], h.shape()[1], 1, 1], false),
        4 => (h.shape().to_vec(), true),
        r => panic!("naive_lppool: rank {r}"),
    };
    let h4 = h.reshape(&shape).unwrap();
    let (batch, ch, hh, ww) = (shape[0], shape[1], shape[2], shape[3]);
    let (oc, oh, ow) = (ch / feature_group, hh / sh, ww / sw);
    let mut out = Tensor::zeros(&[batch, oc, oh, ow]).unwrap();
    for n in 0..batch {
        for g in 0..oc {
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut acc = epsilon;
                    for c in g * feature_group..(g + 1) * feature_group {
                        for i in oi * sh..(oi + 1) * sh {
                            for j in oj * sw..(oj + 1) * sw {
                                acc += h4.get(&[n, c, i, j]).abs().powf(p);
                            }
                        }
                    }
                    out.set(&[n, g, oi, oj], acc.powf(1.0 / p));
                }
            }
        }
    }
    if rank4 {
        out
    } else {
        out.reshape(&[batch, oc]).unwrap()
    }
}

/// Cosine distance with the totalized zero-vector rule: 1 against any
/// nonzero vector, 0 between two zero vectors.
pub fn naive_cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        return 0.0;
    }
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    1.0 - dot / (na * nb)
}

/// Full-sort k nearest neighbors under cosine distance. Ties break toward
/// the lower database index. `exclude` removes one database row per query
/// (the query itself in self-retrieval).
pub fn naive_knn(
    queries: &Tensor,
    database: &Tensor,
    k: usize,
    exclude: Option<&[usize]>,
) -> Vec<Vec<(usize, f64)>> {
    let dim = queries.shape()[1];
    assert_eq!(database.shape()[1], dim);
    let q_count = queries.shape()[0];
    let m = database.shape()[0];
    let mut result = Vec::with_capacity(q_count);
    for q in 0..q_count {
        let qrow = &queries.data()[q * dim..(q + 1) * dim];
        let skip = exclude.map(|e| e[q]);
        let mut all: Vec<(usize, f64)> = (0..m)
            .filter(|&i| Some(i) != skip)
            .map(|i| {
                let drow = &database.data()[i * dim..(i + 1) * dim];
                (i, naive_cosine_distance(qrow, drow))
            })
            .collect();
        all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        result.push(all);
    }
    result
}

/// Mean vector and covariance matrix (normalized by N) of row-vector data.
pub fn recompute_covariance(rows: &Tensor) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, dim) = (rows.shape()[0], rows.shape()[1]);
    let mut mean = vec![0.0; dim];
    for r in 0..n {
        for c in 0..dim {
            mean[c] += rows.get(&[r, c]);
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; dim]; dim];
    for r in 0..n {
        for i in 0..dim {
            let di = rows.get(&[r, i]) - mean[i];
            for j in 0..dim {
                let dj = rows.get(&[r, j]) - mean[j];
                cov[i][j] += di * dj;
            }
        }
    }
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }
    (mean, cov)
}

fn lp_norm(diff: &[f64], p: f64) -> f64 {
    diff.iter()
        .map(|v| v.abs().powf(p))
        .sum::<f64>()
        .powf(1.0 / p)
}

/// Scalar contrastive loss straight from its definition: the Lp distance for
/// temporal neighbors, the hinge `max(0, m - d)` otherwise.
pub fn drlim_scalar(z_a: &[f64], z_b: &[f64], neighbor: bool, margin: f64, p: f64) -> f64 {
    let diff: Vec<f64> = z_a.iter().zip(z_b).map(|(a, b)| a - b).collect();
    let d = lp_norm(&diff, p);
    if neighbor {
        d
    } else {
        (margin - d).max(0.0)
    }
}

/// Forward-only evaluation of the slowness-regularized pooling auto-encoder
/// loss for one fully-connected stage, written independently of the library
/// op code: for each frame `h = relu(w_e x + b)`, reconstruction
/// `|w_d h - x|^2` plus `alpha |h|_1`, plus `beta` times the L1 difference of
/// the pooled codes `sqrt(eps + sum_group h^2)`.
#[allow(clippy::too_many_arguments)]
pub fn slowness_ae_scalar(
    x_t: &[f64],
    x_tp: &[f64],
    enc_w: &[f64], // [hidden, input] row-major
    enc_b: &[f64],
    dec_w: &[f64], // [input, hidden] row-major
    hidden: usize,
    feature_group: usize,
    epsilon: f64,
    alpha: f64,
    beta: f64,
) -> f64 {
    let input = x_t.len();
    let encode = |x: &[f64]| -> Vec<f64> {
        (0..hidden)
            .map(|o| {
                let mut a = enc_b[o];
                for i in 0..input {
                    a += enc_w[o * input + i] * x[i];
                }
                a.max(0.0)
            })
            .collect()
    };
    let pool = |h: &[f64]| -> Vec<f64> {
        (0..hidden / feature_group)
            .map(|g| {
                let mut acc = epsilon;
                for j in g * feature_group..(g + 1) * feature_group {
                    acc += h[j] * h[j];
                }
                acc.sqrt()
            })
            .collect()
    };
    let mut total = 0.0;
    let mut codes = Vec::new();
    for x in [x_t, x_tp] {
        let h = encode(x);
        let mut recon = 0.0;
        for i in 0..input {
            let mut r = 0.0;
            for j in 0..hidden {
                r += dec_w[i * hidden + j] * h[j];
            }
            let e = r - x[i];
            recon += e * e;
        }
        let l1: f64 = h.iter().map(|v| v.abs()).sum();
        total += recon + alpha * l1;
        codes.push(pool(&h));
    }
    let slow: f64 = codes[0]
        .iter()
        .zip(&codes[1])
        .map(|(a, b)| (a - b).abs())
        .sum();
    total + beta * slow
}

/// Forward-only group-sparsity loss for one fully-connected stage:
/// reconstruction plus `alpha` times the sum of pooled group norms.
pub fn group_sparsity_scalar(
    x: &[f64],
    enc_w: &[f64],
    enc_b: &[f64],
    dec_w: &[f64],
    hidden: usize,
    feature_group: usize,
    epsilon: f64,
    alpha: f64,
) -> f64 {
    let input = x.len();
    let h: Vec<f64> = (0..hidden)
        .map(|o| {
            let mut a = enc_b[o];
            for i in 0..input {
                a += enc_w[o * input + i] * x[i];
            }
            a.max(0.0)
        })
        .collect();
    let mut recon = 0.0;
    for i in 0..input {
        let mut r = 0.0;
        for j in 0..hidden {
            r += dec_w[i * hidden + j] * h[j];
        }
        let e = r - x[i];
        recon += e * e;
    }
    let mut groups = 0.0;
    for g in 0..hidden / feature_group {
        let mut acc = epsilon;
        for j in g * feature_group..(g + 1) * feature_group {
            acc += h[j] * h[j];
        }
        groups += acc.sqrt();
    }
    recon + alpha * groups
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_gradient_of_quadratic() {
        let params = [1.0, -2.0, 3.0];
        let grad = fd_gradient(|p| p.iter().map(|v| v * v).sum(), &params, 1e-5).unwrap();
        for (g, p) in grad.iter().zip(&params) {
            assert!((g - 2.0 * p).abs() < 1e-8, "{g} vs {}", 2.0 * p);
        }
    }

    #[test]
    fn fd_gradient_of_constant_is_zero() {
        let grad = fd_gradient(|_| 7.5, &[1.0, 2.0], 1e-5).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn fd_gradient_rejects_non_finite() {
        assert!(fd_gradient(|_| f64::NAN, &[1.0], 1e-5).is_err());
    }

    #[test]
    fn cosine_distance_zero_rules() {
        assert_eq!(naive_cosine_distance(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(naive_cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
        assert!((naive_cosine_distance(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn knn_tie_break_by_index() {
        // Three identical database rows: order must be 0, 1, 2.
        let db = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let q = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let nn = naive_knn(&q, &db, 3, None);
        let ids: Vec<usize> = nn[0].iter().map(|&(i, _)| i).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn drlim_scalar_cases() {
        assert_eq!(drlim_scalar(&[1.0, 2.0], &[1.0, 2.0], true, 1.0, 2.0), 0.0);
        assert_eq!(drlim_scalar(&[1.0, 2.0], &[1.0, 2.0], false, 1.0, 2.0), 1.0);
        // distance 5 >= margin 1: hinge inactive
        assert_eq!(drlim_scalar(&[3.0, 4.0], &[0.0, 0.0], false, 1.0, 2.0), 0.0);
    }
}
