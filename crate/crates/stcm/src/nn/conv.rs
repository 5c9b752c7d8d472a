//! 2-D convolution (cross-correlation convention), its transpose, and the
//! analytic gradients. Stride is always 1; padding is `Valid` or `Same`
//! zero-padding. Batch items are processed in parallel; the summation order
//! for each output element is fixed (channel, then kernel row, then kernel
//! column), so results do not depend on the thread count.

use rayon::prelude::*;

use super::Padding;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct ConvDims {
    batch: usize,
    in_ch: usize,
    in_h: usize,
    in_w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    // padded input extents
    ph: usize,
    pw: usize,
    pad_top: usize,
    pad_left: usize,
    out_h: usize,
    out_w: usize,
}

fn conv_dims(x: &Tensor, k: &Tensor, padding: Padding) -> Result<ConvDims> {
    if x.rank() != 4 || k.rank() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects x [N,C,H,W] and k [D,C,kh,kw], got {:?} and {:?}",
            x.shape(),
            k.shape()
        )));
    }
    let (batch, in_ch, in_h, in_w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (out_ch, k_ch, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    if k_ch != in_ch {
        return Err(Error::Shape(format!(
            "conv2d: input has {in_ch} channels but kernel expects {k_ch}"
        )));
    }
    let out_h = padding.out_extent(in_h, kh)?;
    let out_w = padding.out_extent(in_w, kw)?;
    let (pad_top, pad_bottom) = padding.amounts(kh);
    let (pad_left, pad_right) = padding.amounts(kw);
    Ok(ConvDims {
        batch,
        in_ch,
        in_h,
        in_w,
        out_ch,
        kh,
        kw,
        ph: in_h + pad_top + pad_bottom,
        pw: in_w + pad_left + pad_right,
        pad_top,
        pad_left,
        out_h,
        out_w,
    })
}

/// Copies one sample's channels into a zero-padded buffer of `ph x pw`.
fn pad_sample(x: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut padded = vec![0.0; d.in_ch * d.ph * d.pw];
    for c in 0..d.in_ch {
        for i in 0..d.in_h {
            let src = c * d.in_h * d.in_w + i * d.in_w;
            let dst = c * d.ph * d.pw + (i + d.pad_top) * d.pw + d.pad_left;
            padded[dst..dst + d.in_w].copy_from_slice(&x[src..src + d.in_w]);
        }
    }
    padded
}

/// `out[n,d,i,j] = b[d] + sum_{c,u,v} k[d,c,u,v] * x[n,c,i+u,j+v]`
/// over the (possibly zero-padded) input.
pub fn conv2d_forward(
    x: &Tensor,
    k: &Tensor,
    bias: Option<&Tensor>,
    padding: Padding,
) -> Result<Tensor> {
    let d = conv_dims(x, k, padding)?;
    if let Some(b) = bias {
        if b.shape() != [d.out_ch] {
            return Err(Error::Shape(format!(
                "conv2d: bias shape {:?} does not match {} output maps",
                b.shape(),
                d.out_ch
            )));
        }
    }
    let kd = k.data();
    let sample_in = d.in_ch * d.in_h * d.in_w;
    let sample_out = d.out_ch * d.out_h * d.out_w;
    let mut out = vec![0.0; d.batch * sample_out];

    out.par_chunks_mut(sample_out)
        .enumerate()
        .for_each(|(n, out_n)| {
            let xp = pad_sample(&x.data()[n * sample_in..(n + 1) * sample_in], &d);
            for dc in 0..d.out_ch {
                let plane = &mut out_n[dc * d.out_h * d.out_w..(dc + 1) * d.out_h * d.out_w];
                if let Some(b) = bias {
                    plane.fill(b.data()[dc]);
                }
                for c in 0..d.in_ch {
                    let xc = &xp[c * d.ph * d.pw..(c + 1) * d.ph * d.pw];
                    for u in 0..d.kh {
                        for v in 0..d.kw {
                            let kval = kd[((dc * d.in_ch + c) * d.kh + u) * d.kw + v];
                            if kval == 0.0 {
                                continue;
                            }
                            for i in 0..d.out_h {
                                let xrow = &xc[(i + u) * d.pw + v..(i + u) * d.pw + v + d.out_w];
                                let orow = &mut plane[i * d.out_w..(i + 1) * d.out_w];
                                for j in 0..d.out_w {
                                    orow[j] += kval * xrow[j];
                                }
                            }
                        }
                    }
                }
            }
        });

    Tensor::from_vec(&[d.batch, d.out_ch, d.out_h, d.out_w], out)
}

/// Adjoint of [`conv2d_forward`] with respect to its input: for all `x`, `h`,
/// `<conv(x,k), h> == <x, conv_transpose(h,k)>`. With `Valid` padding the
/// output grows to `H'+kh-1`; with `Same` it matches the forward input size.
pub fn conv2d_transpose_forward(h: &Tensor, k: &Tensor, padding: Padding) -> Result<Tensor> {
    if h.rank() != 4 || k.rank() != 4 {
        return Err(Error::Shape(format!(
            "conv2d_transpose expects h [N,D,H',W'] and k [D,C,kh,kw], got {:?} and {:?}",
            h.shape(),
            k.shape()
        )));
    }
    let (batch, hd, hh, hw) = (h.shape()[0], h.shape()[1], h.shape()[2], h.shape()[3]);
    let (out_ch_k, in_ch, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    if hd != out_ch_k {
        return Err(Error::Shape(format!(
            "conv2d_transpose: h has {hd} maps but kernel produces {out_ch_k}"
        )));
    }
    // Full (valid-adjoint) extents before cropping.
    let fh = hh + kh - 1;
    let fw = hw + kw - 1;
    let (crop_top, _) = padding.amounts(kh);
    let (crop_left, _) = padding.amounts(kw);
    let (out_h, out_w) = match padding {
        Padding::Valid => (fh, fw),
        Padding::Same => (hh, hw),
    };

    let kd = k.data();
    let sample_h = hd * hh * hw;
    let sample_out = in_ch * out_h * out_w;
    let mut out = vec![0.0; batch * sample_out];

    out.par_chunks_mut(sample_out)
        .enumerate()
        .for_each(|(n, out_n)| {
            let hn = &h.data()[n * sample_h..(n + 1) * sample_h];
            let mut full = vec![0.0; in_ch * fh * fw];
            for dc in 0..hd {
                let hplane = &hn[dc * hh * hw..(dc + 1) * hh * hw];
                for c in 0..in_ch {
                    let fplane = &mut full[c * fh * fw..(c + 1) * fh * fw];
                    for u in 0..kh {
                        for v in 0..kw {
                            let kval = kd[((dc * in_ch + c) * kh + u) * kw + v];
                            if kval == 0.0 {
                                continue;
                            }
                            for i in 0..hh {
                                let hrow = &hplane[i * hw..(i + 1) * hw];
                                let frow = &mut fplane[(i + u) * fw + v..(i + u) * fw + v + hw];
                                for j in 0..hw {
                                    frow[j] += kval * hrow[j];
                                }
                            }
                        }
                    }
                }
            }
            // Crop the padded border for Same; Valid has zero crop amounts.
            for c in 0..in_ch {
                for i in 0..out_h {
                    let src = c * fh * fw + (i + crop_top) * fw + crop_left;
                    let dst = c * out_h * out_w + i * out_w;
                    out_n[dst..dst + out_w].copy_from_slice(&full[src..src + out_w]);
                }
            }
        });

    Tensor::from_vec(&[batch, in_ch, out_h, out_w], out)
}

pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// Kernel gradient shared by convolution and transposed convolution:
/// `gk[d,c,u,v] = sum_{n,i,j} gout[n,d,i,j] * pad(x)[n,c,i+u,j+v]`.
///
/// For the transpose's kernel gradient, call with the roles swapped
/// (`x` = padded reconstruction gradient, `gout` = hidden activations); the
/// summation is identical by linearity.
pub fn conv2d_kernel_grad(
    x: &Tensor,
    gout: &Tensor,
    kh: usize,
    kw: usize,
    padding: Padding,
) -> Result<Tensor> {
    let shell = Tensor::zeros(&[gout.shape()[1], x.shape()[1], kh, kw])?;
    let d = conv_dims(x, &shell, padding)?;
    if gout.shape() != [d.batch, d.out_ch, d.out_h, d.out_w] {
        return Err(Error::Shape(format!(
            "conv2d_kernel_grad: expected gout {:?}, got {:?}",
            [d.batch, d.out_ch, d.out_h, d.out_w],
            gout.shape()
        )));
    }
    let gd = gout.data();
    let sample_in = d.in_ch * d.in_h * d.in_w;
    let sample_out = d.out_ch * d.out_h * d.out_w;

    // Padded copies of every sample, shared by all kernel-gradient rows.
    let padded: Vec<Vec<f64>> = (0..d.batch)
        .map(|n| pad_sample(&x.data()[n * sample_in..(n + 1) * sample_in], &d))
        .collect();

    let mut gk = vec![0.0; d.out_ch * d.in_ch * d.kh * d.kw];
    let row = d.in_ch * d.kh * d.kw;
    gk.par_chunks_mut(row).enumerate().for_each(|(dc, gk_d)| {
        for n in 0..d.batch {
            let xp = &padded[n];
            let gplane = &gd[n * sample_out + dc * d.out_h * d.out_w..][..d.out_h * d.out_w];
            for c in 0..d.in_ch {
                let xc = &xp[c * d.ph * d.pw..(c + 1) * d.ph * d.pw];
                for u in 0..d.kh {
                    for v in 0..d.kw {
                        let mut acc = 0.0;
                        for i in 0..d.out_h {
                            let xrow = &xc[(i + u) * d.pw + v..(i + u) * d.pw + v + d.out_w];
                            let grow = &gplane[i * d.out_w..(i + 1) * d.out_w];
                            for j in 0..d.out_w {
                                acc += grow[j] * xrow[j];
                            }
                        }
                        gk_d[(c * d.kh + u) * d.kw + v] += acc;
                    }
                }
            }
        }
    });
    Tensor::from_vec(&[d.out_ch, d.in_ch, d.kh, d.kw], gk)
}

/// Exact analytic gradients of [`conv2d_forward`] w.r.t. input, kernel, and
/// bias for the output gradient `gout`.
pub fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    gout: &Tensor,
    padding: Padding,
) -> Result<ConvGrads> {
    let d = conv_dims(x, k, padding)?;
    if gout.shape() != [d.batch, d.out_ch, d.out_h, d.out_w] {
        return Err(Error::Shape(format!(
            "conv2d_backward: expected gout {:?}, got {:?}",
            [d.batch, d.out_ch, d.out_h, d.out_w],
            gout.shape()
        )));
    }

    let gx = conv2d_transpose_forward(gout, k, padding)?;
    let gk = conv2d_kernel_grad(x, gout, d.kh, d.kw, padding)?;

    let gd = gout.data();
    let sample_out = d.out_ch * d.out_h * d.out_w;
    let mut gb = vec![0.0; d.out_ch];
    for n in 0..d.batch {
        for dc in 0..d.out_ch {
            let plane = &gd[n * sample_out + dc * d.out_h * d.out_w..][..d.out_h * d.out_w];
            let mut acc = 0.0;
            for &g in plane {
                acc += g;
            }
            gb[dc] += acc;
        }
    }

    Ok(ConvGrads {
        input: gx,
        kernel: gk,
        bias: Tensor::from_vec(&[d.out_ch], gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::new(&[1, 1, 3, 3], 1.0).unwrap();
        let k = Tensor::new(&[1, 1, 2, 2], 1.0).unwrap();
        let y = conv2d_forward(&x, &k, None, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::new(&[1, 1, 1, 1], 1.0).unwrap();
        let y = conv2d_forward(&x, &k, None, Padding::Valid).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn kernel_larger_than_input_rejected() {
        let x = Tensor::zeros(&[1, 1, 2, 2]).unwrap();
        let k = Tensor::zeros(&[1, 1, 3, 3]).unwrap();
        assert!(conv2d_forward(&x, &k, None, Padding::Valid).is_err());
    }

    #[test]
    fn same_padding_preserves_extent() {
        let x = Tensor::zeros(&[2, 3, 32, 32]).unwrap();
        let k = Tensor::zeros(&[64, 3, 9, 9]).unwrap();
        let y = conv2d_forward(&x, &k, None, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[2, 64, 32, 32]);
    }

    #[test]
    fn transpose_stamps_kernel_at_impulse() {
        let mut h = Tensor::zeros(&[1, 1, 3, 3]).unwrap();
        h.set(&[0, 0, 1, 2], 1.0);
        let k = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv2d_transpose_forward(&h, &k, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(y.get(&[0, 0, 1, 2]), 1.0);
        assert_eq!(y.get(&[0, 0, 1, 3]), 2.0);
        assert_eq!(y.get(&[0, 0, 2, 2]), 3.0);
        assert_eq!(y.get(&[0, 0, 2, 3]), 4.0);
        assert_eq!(y.sum(), 10.0);
    }

    #[test]
    fn transpose_of_zeros_is_zeros() {
        let h = Tensor::zeros(&[1, 2, 3, 3]).unwrap();
        let k = Tensor::new(&[2, 1, 2, 2], 0.5).unwrap();
        let y = conv2d_transpose_forward(&h, &k, Padding::Valid).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_bias_is_sum_of_gout() {
        let x = Tensor::new(&[2, 1, 3, 3], 0.5).unwrap();
        let k = Tensor::new(&[2, 1, 2, 2], 1.0).unwrap();
        let gout = Tensor::new(&[2, 2, 2, 2], 1.0).unwrap();
        let grads = conv2d_backward(&x, &k, &gout, Padding::Valid).unwrap();
        // 2 batch items x 2x2 spatial positions of ones.
        assert_eq!(grads.bias.data(), &[8.0, 8.0]);
    }

    #[test]
    fn backward_gx_ones_with_unit_kernel() {
        let x = Tensor::zeros(&[1, 1, 3, 3]).unwrap();
        let k = Tensor::new(&[1, 1, 1, 1], 1.0).unwrap();
        let gout = Tensor::new(&[1, 1, 3, 3], 1.0).unwrap();
        let grads = conv2d_backward(&x, &k, &gout, Padding::Valid).unwrap();
        assert!(grads.input.data().iter().all(|&v| v == 1.0));
    }
}
