//! Differentiable building blocks: affine map, 2-D convolution and its
//! transpose, rectifier, and L2 pooling over feature groups and spatial
//! windows. Every op has an analytic forward and backward pass; the backward
//! passes are verified against central finite differences in the test suites.

mod conv;
mod pool;

pub use conv::{
    conv2d_backward, conv2d_forward, conv2d_kernel_grad, conv2d_transpose_forward, ConvGrads,
};
pub use pool::{l2pool_backward, l2pool_forward, pooled_shape};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Zero-padding mode for convolution. `Valid` keeps only fully overlapping
/// positions (output = input - kernel + 1). `Same` zero-pads so the output
/// spatial size equals the input's; for even kernels the extra pad row/column
/// goes to the bottom/right.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

impl Padding {
    /// (before, after) pad amounts along one axis for kernel extent `k`.
    pub fn amounts(self, k: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let total = k - 1;
                (total / 2, total - total / 2)
            }
        }
    }

    pub fn out_extent(self, input: usize, k: usize) -> Result<usize> {
        match self {
            Padding::Valid => {
                if k > input {
                    Err(Error::Shape(format!(
                        "kernel extent {k} larger than input extent {input}"
                    )))
                } else {
                    Ok(input - k + 1)
                }
            }
            Padding::Same => Ok(input),
        }
    }
}

/// L2 pooling geometry: `feature_group` channels pooled together
/// (non-overlapping), a `spatial_h` x `spatial_w` non-overlapping window,
/// norm order `p` (the experiments all use 2), and the stabilizer `epsilon`
/// added inside the root so the gradient is defined at all-zero groups.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolSpec {
    pub feature_group: usize,
    pub spatial_h: usize,
    pub spatial_w: usize,
    pub order: f64,
    pub epsilon: f64,
}

impl PoolSpec {
    /// Pooling across feature maps only.
    pub fn features(feature_group: usize) -> PoolSpec {
        PoolSpec {
            feature_group,
            spatial_h: 1,
            spatial_w: 1,
            order: 2.0,
            epsilon: DEFAULT_POOL_EPSILON,
        }
    }

    pub fn new(feature_group: usize, spatial_h: usize, spatial_w: usize) -> PoolSpec {
        PoolSpec {
            feature_group,
            spatial_h,
            spatial_w,
            order: 2.0,
            epsilon: DEFAULT_POOL_EPSILON,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> PoolSpec {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_group == 0 || self.spatial_h == 0 || self.spatial_w == 0 {
            return Err(Error::Argument("pool extents must be positive".into()));
        }
        if self.order < 1.0 {
            return Err(Error::Argument(format!(
                "pool order must be >= 1, got {}",
                self.order
            )));
        }
        if self.epsilon < 0.0 {
            return Err(Error::Argument(format!(
                "pool epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

pub const DEFAULT_POOL_EPSILON: f64 = 1e-8;

/// One layer of an encoder: the linear map geometry, whether a rectifier
/// follows, and the optional pooling stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub has_bias: bool,
    pub relu: bool,
    pub pool: Option<PoolSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    FullyConnected {
        in_dim: usize,
        out_dim: usize,
    },
    Convolutional {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        padding: Padding,
    },
}

impl LayerSpec {
    pub fn fully_connected(in_dim: usize, out_dim: usize) -> LayerSpec {
        LayerSpec {
            kind: LayerKind::FullyConnected { in_dim, out_dim },
            has_bias: true,
            relu: true,
            pool: None,
        }
    }

    pub fn convolutional(
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        padding: Padding,
    ) -> LayerSpec {
        LayerSpec {
            kind: LayerKind::Convolutional {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                padding,
            },
            has_bias: true,
            relu: true,
            pool: None,
        }
    }

    pub fn with_pool(mut self, pool: PoolSpec) -> LayerSpec {
        self.pool = Some(pool);
        self
    }

    pub fn linear_output(mut self) -> LayerSpec {
        self.relu = false;
        self
    }

    /// Shape of the pre-pool hidden activation for a batch input shape
    /// (`[B,in]` or `[N,C,H,W]`).
    pub fn hidden_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match &self.kind {
            LayerKind::FullyConnected { in_dim, out_dim } => {
                if input.len() != 2 || input[1] != *in_dim {
                    return Err(Error::Shape(format!(
                        "fully-connected layer expects [batch, {in_dim}], got {input:?}"
                    )));
                }
                Ok(vec![input[0], *out_dim])
            }
            LayerKind::Convolutional {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                padding,
            } => {
                if input.len() != 4 || input[1] != *in_channels {
                    return Err(Error::Shape(format!(
                        "convolutional layer expects [N, {in_channels}, H, W], got {input:?}"
                    )));
                }
                let oh = padding.out_extent(input[2], *kernel_h)?;
                let ow = padding.out_extent(input[3], *kernel_w)?;
                Ok(vec![input[0], *out_channels, oh, ow])
            }
        }
    }

    /// Output shape after the optional pooling stage.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let hidden = self.hidden_shape(input)?;
        match &self.pool {
            None => Ok(hidden),
            Some(pool) => pooled_shape(&hidden, pool),
        }
    }
}

/// `out[n,o] = sum_i w[o,i] * x[n,i] (+ b[o])`
pub fn affine_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (batch, in_dim, out_dim) = affine_dims(x, w, bias)?;
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![0.0; batch * out_dim];
    for n in 0..batch {
        let xrow = &xd[n * in_dim..(n + 1) * in_dim];
        let orow = &mut out[n * out_dim..(n + 1) * out_dim];
        for (o, slot) in orow.iter_mut().enumerate() {
            let wrow = &wd[o * in_dim..(o + 1) * in_dim];
            let mut acc = match bias {
                Some(b) => b.data()[o],
                None => 0.0,
            };
            for i in 0..in_dim {
                acc += wrow[i] * xrow[i];
            }
            *slot = acc;
        }
    }
    Tensor::from_vec(&[batch, out_dim], out)
}

/// Gradients of `affine_forward` w.r.t. input, weight, and bias.
pub fn affine_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, in_dim, out_dim) = affine_dims(x, w, None)?;
    if gout.shape() != [batch, out_dim] {
        return Err(Error::Shape(format!(
            "affine_backward: expected gout [{batch}, {out_dim}], got {:?}",
            gout.shape()
        )));
    }
    let xd = x.data();
    let wd = w.data();
    let gd = gout.data();

    let mut gx = vec![0.0; batch * in_dim];
    let mut gw = vec![0.0; out_dim * in_dim];
    let mut gb = vec![0.0; out_dim];

    for n in 0..batch {
        let xrow = &xd[n * in_dim..(n + 1) * in_dim];
        let grow = &gd[n * out_dim..(n + 1) * out_dim];
        let gxrow = &mut gx[n * in_dim..(n + 1) * in_dim];
        for o in 0..out_dim {
            let g = grow[o];
            gb[o] += g;
            let wrow = &wd[o * in_dim..(o + 1) * in_dim];
            let gwrow = &mut gw[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                gxrow[i] += g * wrow[i];
                gwrow[i] += g * xrow[i];
            }
        }
    }

    Ok((
        Tensor::from_vec(&[batch, in_dim], gx)?,
        Tensor::from_vec(&[out_dim, in_dim], gw)?,
        Tensor::from_vec(&[out_dim], gb)?,
    ))
}

fn affine_dims(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<(usize, usize, usize)> {
    if x.rank() != 2 || w.rank() != 2 {
        return Err(Error::Shape(format!(
            "affine expects x [batch,in] and w [out,in], got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (batch, in_dim) = (x.shape()[0], x.shape()[1]);
    let (out_dim, w_in) = (w.shape()[0], w.shape()[1]);
    if w_in != in_dim {
        return Err(Error::Shape(format!(
            "affine: x has {in_dim} inputs but w expects {w_in}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [out_dim] {
            return Err(Error::Shape(format!(
                "affine: bias shape {:?} does not match {out_dim} outputs",
                b.shape()
            )));
        }
    }
    Ok((batch, in_dim, out_dim))
}

/// Elementwise `max(0, x)`.
pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes `gout` where `x > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward(x: &Tensor, gout: &Tensor) -> Result<Tensor> {
    x.zip(gout, |v, g| if v > 0.0 { g } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut w = Tensor::zeros(&[3, 3]).unwrap();
        for i in 0..3 {
            w.set(&[i, i], 1.0);
        }
        let b = Tensor::zeros(&[3]).unwrap();
        let y = affine_forward(&x, &w, Some(&b)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn affine_hand_sum() {
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        let w = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let y = affine_forward(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn affine_shape_mismatch() {
        let x = Tensor::zeros(&[1, 3]).unwrap();
        let w = Tensor::zeros(&[2, 4]).unwrap();
        assert!(affine_forward(&x, &w, None).is_err());
    }

    #[test]
    fn relu_basics() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::from_vec(&[3], vec![5.0, 5.0, 5.0]).unwrap();
        // x == 0 passes zero gradient.
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn padding_arithmetic() {
        assert_eq!(Padding::Valid.out_extent(32, 9).unwrap(), 24);
        assert_eq!(Padding::Same.out_extent(32, 9).unwrap(), 32);
        assert_eq!(Padding::Same.amounts(9), (4, 4));
        assert_eq!(Padding::Same.amounts(4), (1, 2));
        assert!(Padding::Valid.out_extent(3, 5).is_err());
    }

    #[test]
    fn layer_spec_shapes() {
        let fc = LayerSpec::fully_connected(8, 12).with_pool(PoolSpec::features(4));
        assert_eq!(fc.output_shape(&[5, 8]).unwrap(), vec![5, 3]);

        let conv = LayerSpec::convolutional(3, 64, 9, 9, Padding::Same)
            .with_pool(PoolSpec::new(4, 2, 2));
        assert_eq!(conv.output_shape(&[1, 3, 32, 32]).unwrap(), vec![1, 16, 16, 16]);
    }
}
