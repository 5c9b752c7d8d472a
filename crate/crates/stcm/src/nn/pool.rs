//! Lp pooling over non-overlapping feature groups and spatial windows.
//!
//! Each output is `(epsilon + sum |h|^p)^(1/p)` over its group; the
//! experiments fix `p = 2`, giving `sqrt(epsilon + sum h^2)`. The same
//! `epsilon` appears in forward and backward so gradient checks see one
//! consistent function. With `epsilon = 0` the output is exactly the plain
//! group norm, and the gradient at an all-zero group is defined as 0.

use super::PoolSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct PoolDims {
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    out_h: usize,
    out_w: usize,
}

fn pool_dims(shape: &[usize], spec: &PoolSpec) -> Result<PoolDims> {
    spec.validate()?;
    let (batch, channels, h, w) = match shape.len() {
        2 => (shape[0], shape[1], 1, 1),
        4 => (shape[0], shape[1], shape[2], shape[3]),
        _ => {
            return Err(Error::Shape(format!(
                "l2pool expects rank 2 [batch, features] or rank 4 [N,C,H,W], got {shape:?}"
            )))
        }
    };
    if channels % spec.feature_group != 0 {
        return Err(Error::Shape(format!(
            "feature group {} does not divide channel count {channels}",
            spec.feature_group
        )));
    }
    if h % spec.spatial_h != 0 || w % spec.spatial_w != 0 {
        return Err(Error::Shape(format!(
            "spatial window {}x{} does not divide extent {h}x{w}",
            spec.spatial_h, spec.spatial_w
        )));
    }
    Ok(PoolDims {
        batch,
        channels,
        h,
        w,
        out_ch: channels / spec.feature_group,
        out_h: h / spec.spatial_h,
        out_w: w / spec.spatial_w,
    })
}

/// Output shape of pooling applied to `shape` (rank preserved).
pub fn pooled_shape(shape: &[usize], spec: &PoolSpec) -> Result<Vec<usize>> {
    let d = pool_dims(shape, spec)?;
    Ok(match shape.len() {
        2 => vec![d.batch, d.out_ch],
        _ => vec![d.batch, d.out_ch, d.out_h, d.out_w],
    })
}

fn for_each_group_member(
    d: &PoolDims,
    spec: &PoolSpec,
    n: usize,
    g: usize,
    oi: usize,
    oj: usize,
    mut f: impl FnMut(usize),
) {
    let sample = d.channels * d.h * d.w;
    for c in g * spec.feature_group..(g + 1) * spec.feature_group {
        for i in oi * spec.spatial_h..(oi + 1) * spec.spatial_h {
            for j in oj * spec.spatial_w..(oj + 1) * spec.spatial_w {
                f(n * sample + (c * d.h + i) * d.w + j);
            }
        }
    }
}

pub fn l2pool_forward(h: &Tensor, spec: &PoolSpec) -> Result<Tensor> {
    let d = pool_dims(h.shape(), spec)?;
    let hd = h.data();
    let p = spec.order;
    let mut out = vec![0.0; d.batch * d.out_ch * d.out_h * d.out_w];
    let mut idx = 0;
    for n in 0..d.batch {
        for g in 0..d.out_ch {
            for oi in 0..d.out_h {
                for oj in 0..d.out_w {
                    let mut acc = spec.epsilon;
                    for_each_group_member(&d, spec, n, g, oi, oj, |off| {
                        let v = hd[off];
                        if p == 2.0 {
                            acc += v * v;
                        } else {
                            acc += v.abs().powf(p);
                        }
                    });
                    out[idx] = if p == 2.0 { acc.sqrt() } else { acc.powf(1.0 / p) };
                    idx += 1;
                }
            }
        }
    }
    Tensor::from_vec(&pooled_shape(h.shape(), spec)?, out)
}

/// Distributes `gout` to each group member: for `p = 2` the member gradient
/// is `h_j / sqrt(epsilon + sum h^2)`. With `epsilon = 0` an all-zero group
/// gets gradient 0 (the kink convention).
pub fn l2pool_backward(h: &Tensor, spec: &PoolSpec, gout: &Tensor) -> Result<Tensor> {
    let d = pool_dims(h.shape(), spec)?;
    let expected = pooled_shape(h.shape(), spec)?;
    if gout.shape() != expected.as_slice() {
        return Err(Error::Shape(format!(
            "l2pool_backward: expected gout {:?}, got {:?}",
            expected,
            gout.shape()
        )));
    }
    let hd = h.data();
    let gd = gout.data();
    let p = spec.order;
    let mut gin = vec![0.0; hd.len()];
    let mut idx = 0;
    for n in 0..d.batch {
        for g in 0..d.out_ch {
            for oi in 0..d.out_h {
                for oj in 0..d.out_w {
                    let mut acc = spec.epsilon;
                    for_each_group_member(&d, spec, n, g, oi, oj, |off| {
                        let v = hd[off];
                        if p == 2.0 {
                            acc += v * v;
                        } else {
                            acc += v.abs().powf(p);
                        }
                    });
                    let z = if p == 2.0 { acc.sqrt() } else { acc.powf(1.0 / p) };
                    let go = gd[idx];
                    idx += 1;
                    if z == 0.0 {
                        continue; // all-zero group with epsilon = 0
                    }
                    for_each_group_member(&d, spec, n, g, oi, oj, |off| {
                        let v = hd[off];
                        let dz = if p == 2.0 {
                            v / z
                        } else {
                            v.signum() * v.abs().powf(p - 1.0) * z.powf(1.0 - p)
                        };
                        gin[off] += go * dz;
                    });
                }
            }
        }
    }
    Tensor::from_vec(h.shape(), gin)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_eps0(fg: usize) -> PoolSpec {
        PoolSpec::features(fg).with_epsilon(0.0)
    }

    #[test]
    fn three_four_five() {
        let h = Tensor::from_vec(&[1, 4], vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let z = l2pool_forward(&h, &spec_eps0(4)).unwrap();
        assert_eq!(z.shape(), &[1, 1]);
        assert_eq!(z.data(), &[5.0]);
    }

    #[test]
    fn zero_group_zero_output() {
        let h = Tensor::zeros(&[1, 4]).unwrap();
        let z = l2pool_forward(&h, &spec_eps0(4)).unwrap();
        assert_eq!(z.data(), &[0.0]);
    }

    #[test]
    fn backward_unit_direction() {
        let h = Tensor::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap();
        let gout = Tensor::new(&[1, 1], 1.0).unwrap();
        let g = l2pool_backward(&h, &spec_eps0(2), &gout).unwrap();
        assert!((g.data()[0] - 0.6).abs() < 1e-15);
        assert!((g.data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn backward_zero_group_stabilized() {
        let h = Tensor::zeros(&[1, 4]).unwrap();
        let gout = Tensor::new(&[1, 1], 1.0).unwrap();
        let spec = PoolSpec::features(4).with_epsilon(1e-8);
        let g = l2pool_backward(&h, &spec, &gout).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spatial_and_feature_grouping() {
        // 4 channels pooled in groups of 2, 2x2 spatial window.
        let h = Tensor::new(&[1, 4, 2, 2], 1.0).unwrap();
        let spec = PoolSpec::new(2, 2, 2).with_epsilon(0.0);
        let z = l2pool_forward(&h, &spec).unwrap();
        assert_eq!(z.shape(), &[1, 2, 1, 1]);
        // Each group holds 8 ones: sqrt(8).
        for &v in z.data() {
            assert!((v - 8f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn non_dividing_group_rejected() {
        let h = Tensor::zeros(&[1, 5]).unwrap();
        assert!(l2pool_forward(&h, &spec_eps0(2)).is_err());
        let h = Tensor::zeros(&[1, 4, 3, 3]).unwrap();
        let spec = PoolSpec::new(2, 2, 2);
        assert!(l2pool_forward(&h, &spec).is_err());
    }

    #[test]
    fn sign_flip_invariance() {
        let h = Tensor::from_vec(&[1, 4], vec![1.0, -2.0, 3.0, -4.0]).unwrap();
        let flipped = h.scale(-1.0);
        let spec = spec_eps0(4);
        assert_eq!(
            l2pool_forward(&h, &spec).unwrap(),
            l2pool_forward(&flipped, &spec).unwrap()
        );
    }
}
