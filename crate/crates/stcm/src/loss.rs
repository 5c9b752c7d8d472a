//! Training objectives: the contrastive pair loss, the slowness-regularized
//! pooling auto-encoder loss, and the group sparsity loss, each returning a
//! scalar breakdown and analytic parameter gradients.
//!
//! Kink conventions, used consistently everywhere: `sign(0) = 0` for L1
//! terms, gradient 0 at coincident codes for the Lp distance, and
//! subgradient 0 at the hinge corner.

use crate::error::{Error, Result};
use crate::model::{DecoderLayer, EncoderLayer, LayerGrads};
use crate::nn::l2pool_backward;
use crate::tensor::Tensor;

/// All hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// L1 weight on hidden activations.
    pub alpha: f64,
    /// Slowness weight on pooled-code differences.
    pub beta: f64,
    /// Contrastive margin for non-neighbor pairs.
    pub margin: f64,
    /// Order of the code-space distance.
    pub distance_order: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Pairs (or frames) per mini-batch.
    pub batch_size: usize,
    /// Negative pairs per positive pair in contrastive batches.
    pub negative_ratio: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            alpha: 0.0,
            beta: 0.0,
            margin: 1.0,
            distance_order: 2.0,
            learning_rate: 1e-2,
            momentum: 0.0,
            batch_size: 32,
            negative_ratio: 5,
            epochs: 100,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Argument(format!(
                "alpha and beta must be >= 0, got {} and {}",
                self.alpha, self.beta
            )));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Argument(format!("margin must be > 0, got {}", self.margin)));
        }
        if self.distance_order < 1.0 {
            return Err(Error::Argument(format!(
                "distance order must be >= 1, got {}",
                self.distance_order
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Argument(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.negative_ratio == 0 {
            return Err(Error::Argument(
                "batch size, epochs, and negative ratio must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Temporal relation of a frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairRelation {
    /// Adjacent frames of the same scene (`|t - t'| = 1`).
    TemporalNeighbor,
    /// Anything else: same-scene with a gap, or different scenes.
    NonNeighbor,
}

/// A materialized frame pair.
#[derive(Debug, Clone)]
pub struct SamplePair {
    pub x_a: Tensor,
    pub x_b: Tensor,
    pub relation: PairRelation,
}

/// Per-batch loss components; unused components stay zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub l1: f64,
    pub slowness: f64,
    pub group_sparsity: f64,
    pub contrastive_positive: f64,
    pub contrastive_negative: f64,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.total += other.total;
        self.reconstruction += other.reconstruction;
        self.l1 += other.l1;
        self.slowness += other.slowness;
        self.group_sparsity += other.group_sparsity;
        self.contrastive_positive += other.contrastive_positive;
        self.contrastive_negative += other.contrastive_negative;
    }

    pub fn scaled(&self, c: f64) -> LossBreakdown {
        LossBreakdown {
            total: self.total * c,
            reconstruction: self.reconstruction * c,
            l1: self.l1 * c,
            slowness: self.slowness * c,
            group_sparsity: self.group_sparsity * c,
            contrastive_positive: self.contrastive_positive * c,
            contrastive_negative: self.contrastive_negative * c,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Gradients for one auto-encoder stage.
#[derive(Debug, Clone)]
pub struct StageGrads {
    pub enc: LayerGrads,
    pub dec_weight: Tensor,
}

/// `sum |h_i|` and its subgradient `sign(h_i)` (0 at 0).
pub fn l1_penalty(h: &Tensor) -> (f64, Tensor) {
    let mut total = 0.0;
    for &v in h.data() {
        total += v.abs();
    }
    let grad = h.map(|v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    });
    (total, grad)
}

fn lp_distance(diff: &[f64], p: f64) -> f64 {
    if p == 2.0 {
        diff.iter().map(|v| v * v).sum::<f64>().sqrt()
    } else {
        diff.iter()
            .map(|v| v.abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }
}

/// d(distance)/d(diff_i) for the Lp norm, 0 at the origin.
fn lp_distance_grad(diff: &[f64], d: f64, p: f64) -> Vec<f64> {
    if d == 0.0 {
        return vec![0.0; diff.len()];
    }
    if p == 2.0 {
        diff.iter().map(|v| v / d).collect()
    } else {
        diff.iter()
            .map(|v| v.signum() * v.abs().powf(p - 1.0) * d.powf(1.0 - p))
            .collect()
    }
}

/// Contrastive loss for one code pair: the Lp distance for temporal
/// neighbors, the hinge `max(0, m - d)` for non-neighbors. Returns the loss
/// and the gradients w.r.t. both codes.
pub fn drlim_loss(
    z_a: &Tensor,
    z_b: &Tensor,
    relation: PairRelation,
    margin: f64,
    p: f64,
) -> Result<(f64, Tensor, Tensor)> {
    if z_a.shape() != z_b.shape() {
        return Err(Error::Shape(format!(
            "drlim_loss: code shapes {:?} and {:?} differ",
            z_a.shape(),
            z_b.shape()
        )));
    }
    if !(margin > 0.0) {
        return Err(Error::Argument(format!("margin must be > 0, got {margin}")));
    }
    let diff: Vec<f64> = z_a
        .data()
        .iter()
        .zip(z_b.data())
        .map(|(a, b)| a - b)
        .collect();
    let d = lp_distance(&diff, p);
    let (loss, scale) = match relation {
        PairRelation::TemporalNeighbor => (d, 1.0),
        PairRelation::NonNeighbor => {
            if d < margin {
                (margin - d, -1.0)
            } else {
                (0.0, 0.0)
            }
        }
    };
    let g = if scale == 0.0 {
        vec![0.0; diff.len()]
    } else {
        lp_distance_grad(&diff, d, p)
            .into_iter()
            .map(|v| v * scale)
            .collect()
    };
    let gz_a = Tensor::from_vec(z_a.shape(), g.clone())?;
    let gz_b = Tensor::from_vec(z_a.shape(), g.into_iter().map(|v| -v).collect())?;
    Ok((loss, gz_a, gz_b))
}

/// Batched contrastive loss over stacked code pairs (`[B, ...]` each side).
/// Losses are summed; the breakdown separates positive and negative terms.
pub fn drlim_loss_batch(
    z_a: &Tensor,
    z_b: &Tensor,
    relations: &[PairRelation],
    margin: f64,
    p: f64,
) -> Result<(LossBreakdown, Tensor, Tensor)> {
    if z_a.shape() != z_b.shape() {
        return Err(Error::Shape(format!(
            "drlim_loss_batch: code shapes {:?} and {:?} differ",
            z_a.shape(),
            z_b.shape()
        )));
    }
    let batch = z_a.shape()[0];
    if relations.len() != batch {
        return Err(Error::Argument(format!(
            "drlim_loss_batch: {} relations for batch of {batch}",
            relations.len()
        )));
    }
    let dim: usize = z_a.shape()[1..].iter().product();
    let mut breakdown = LossBreakdown::default();
    let mut gz_a = vec![0.0; z_a.len()];
    let mut gz_b = vec![0.0; z_b.len()];
    for n in 0..batch {
        let a = &z_a.data()[n * dim..(n + 1) * dim];
        let b = &z_b.data()[n * dim..(n + 1) * dim];
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let d = lp_distance(&diff, p);
        let (loss, scale) = match relations[n] {
            PairRelation::TemporalNeighbor => {
                breakdown.contrastive_positive += d;
                (d, 1.0)
            }
            PairRelation::NonNeighbor => {
                if d < margin {
                    breakdown.contrastive_negative += margin - d;
                    (margin - d, -1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        };
        breakdown.total += loss;
        if scale != 0.0 {
            for (i, g) in lp_distance_grad(&diff, d, p).into_iter().enumerate() {
                gz_a[n * dim + i] = g * scale;
                gz_b[n * dim + i] = -g * scale;
            }
        }
    }
    Ok((
        breakdown,
        Tensor::from_vec(z_a.shape(), gz_a)?,
        Tensor::from_vec(z_b.shape(), gz_b)?,
    ))
}

/// Slowness-regularized pooling auto-encoder loss over a batch of temporally
/// adjacent frame pairs (`x_t`, `x_tp` stacked as `[B, ...]`):
///
/// for each frame, squared reconstruction error `|W_d h - x|^2` plus
/// `alpha * |h|_1`, plus `beta` times the L1 difference of the two frames'
/// pooled codes, summed over pool groups (and spatial positions).
pub fn slowness_ae_loss(
    x_t: &Tensor,
    x_tp: &Tensor,
    enc: &EncoderLayer,
    dec: &DecoderLayer,
    alpha: f64,
    beta: f64,
) -> Result<(LossBreakdown, StageGrads)> {
    if x_t.shape() != x_tp.shape() {
        return Err(Error::Shape(format!(
            "slowness_ae_loss: frame shapes {:?} and {:?} differ",
            x_t.shape(),
            x_tp.shape()
        )));
    }
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::Argument(format!(
            "alpha and beta must be >= 0, got {alpha} and {beta}"
        )));
    }
    let pool = enc.spec.pool.as_ref().ok_or_else(|| {
        Error::Argument("slowness objective requires a pooling stage".into())
    })?;

    let cache_t = enc.forward(x_t)?;
    let cache_tp = enc.forward(x_tp)?;

    let mut breakdown = LossBreakdown::default();

    // Slowness term: L1 over the pooled-code difference, shared by both
    // frames' backward passes.
    let z_diff = cache_t.pooled.sub(&cache_tp.pooled)?;
    let (slow_l1, slow_sign) = l1_penalty(&z_diff);
    breakdown.slowness = beta * slow_l1;

    let mut enc_grads: Option<LayerGrads> = None;
    let mut dec_grad: Option<Tensor> = None;
    for (cache, x, sign) in [(&cache_t, x_t, 1.0), (&cache_tp, x_tp, -1.0)] {
        let recon = dec.reconstruct(&cache.hidden)?;
        let residual = recon.sub(x)?;
        breakdown.reconstruction += residual.sq_norm();

        let (h_l1, h_sign) = l1_penalty(&cache.hidden);
        breakdown.l1 += alpha * h_l1;

        // dL/dh from the reconstruction path...
        let (gw_dec, mut gh) = dec.backward(&cache.hidden, &residual.scale(2.0))?;
        // ...plus the L1 path...
        if alpha != 0.0 {
            gh = gh.add(&h_sign.scale(alpha))?;
        }
        // ...plus the slowness path through the pooling operator.
        if beta != 0.0 {
            let gz = slow_sign.scale(beta * sign);
            gh = gh.add(&l2pool_backward(&cache.hidden, pool, &gz)?)?;
        }
        let (layer_grads, _gx) = enc.backward_from_hidden(cache, &gh)?;

        match (&mut enc_grads, &mut dec_grad) {
            (None, None) => {
                enc_grads = Some(layer_grads);
                dec_grad = Some(gw_dec);
            }
            (Some(eg), Some(dg)) => {
                eg.weight.axpy(1.0, &layer_grads.weight)?;
                eg.bias.axpy(1.0, &layer_grads.bias)?;
                dg.axpy(1.0, &gw_dec)?;
            }
            _ => unreachable!(),
        }
    }

    breakdown.total = breakdown.reconstruction + breakdown.l1 + breakdown.slowness;
    Ok((
        breakdown,
        StageGrads {
            enc: enc_grads.unwrap(),
            dec_weight: dec_grad.unwrap(),
        },
    ))
}

/// Group sparsity auto-encoder loss over a batch of frames: squared
/// reconstruction error plus `alpha` times the sum of pooled group norms of
/// the hidden activations.
pub fn group_sparsity_loss(
    x: &Tensor,
    enc: &EncoderLayer,
    dec: &DecoderLayer,
    alpha: f64,
) -> Result<(LossBreakdown, StageGrads)> {
    if alpha < 0.0 {
        return Err(Error::Argument(format!("alpha must be >= 0, got {alpha}")));
    }
    let pool = enc.spec.pool.as_ref().ok_or_else(|| {
        Error::Argument("group sparsity objective requires a pooling stage".into())
    })?;

    let cache = enc.forward(x)?;
    let recon = dec.reconstruct(&cache.hidden)?;
    let residual = recon.sub(x)?;

    let mut breakdown = LossBreakdown::default();
    breakdown.reconstruction = residual.sq_norm();
    breakdown.group_sparsity = alpha * cache.pooled.sum();
    breakdown.total = breakdown.reconstruction + breakdown.group_sparsity;

    let (gw_dec, mut gh) = dec.backward(&cache.hidden, &residual.scale(2.0))?;
    if alpha != 0.0 {
        let gz = Tensor::new(cache.pooled.shape(), alpha)?;
        gh = gh.add(&l2pool_backward(&cache.hidden, pool, &gz)?)?;
    }
    let (enc_grads, _gx) = enc.backward_from_hidden(&cache, &gh)?;

    Ok((
        breakdown,
        StageGrads {
            enc: enc_grads,
            dec_weight: gw_dec,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fc_autoencoder, init_weights, Model};
    use crate::nn::PoolSpec;
    use crate::rng::Rng;

    #[test]
    fn l1_penalty_cases() {
        let h = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.0]).unwrap();
        let (v, g) = l1_penalty(&h);
        assert_eq!(v, 3.0);
        assert_eq!(g.data(), &[1.0, -1.0, 0.0]);
        let (v, _) = l1_penalty(&Tensor::zeros(&[4]).unwrap());
        assert_eq!(v, 0.0);
    }

    #[test]
    fn drlim_zero_cases() {
        let z = Tensor::from_vec(&[2], vec![0.3, -0.7]).unwrap();
        let (loss, ga, gb) =
            drlim_loss(&z, &z, PairRelation::TemporalNeighbor, 1.0, 2.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(ga.data().iter().all(|&v| v == 0.0));
        assert!(gb.data().iter().all(|&v| v == 0.0));

        // Coincident non-neighbors: loss m, gradient 0 at the norm kink.
        let (loss, ga, _) = drlim_loss(&z, &z, PairRelation::NonNeighbor, 1.0, 2.0).unwrap();
        assert_eq!(loss, 1.0);
        assert!(ga.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn drlim_inactive_hinge() {
        let a = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        let (loss, ga, gb) = drlim_loss(&a, &b, PairRelation::NonNeighbor, 1.0, 2.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(ga.data().iter().all(|&v| v == 0.0));
        assert!(gb.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn drlim_symmetry() {
        let a = Tensor::from_vec(&[3], vec![0.1, 0.5, -0.2]).unwrap();
        let b = Tensor::from_vec(&[3], vec![-0.4, 0.2, 0.9]).unwrap();
        for rel in [PairRelation::TemporalNeighbor, PairRelation::NonNeighbor] {
            let (l_ab, _, _) = drlim_loss(&a, &b, rel, 1.0, 2.0).unwrap();
            let (l_ba, _, _) = drlim_loss(&b, &a, rel, 1.0, 2.0).unwrap();
            assert_eq!(l_ab, l_ba);
        }
    }

    fn identity_autoencoder(dim: usize) -> Model {
        let mut model = fc_autoencoder(dim, dim, 1).unwrap();
        model.encoder.layers[0].spec.pool = Some(PoolSpec::features(1).with_epsilon(0.0));
        for i in 0..dim {
            model.encoder.layers[0].weight.set(&[i, i], 1.0);
            model.decoder.as_mut().unwrap().layers[0].weight.set(&[i, i], 1.0);
        }
        model
    }

    #[test]
    fn perfect_autoencoder_zero_loss() {
        let model = identity_autoencoder(4);
        let x = Tensor::from_vec(&[1, 4], vec![0.5, 1.0, 0.0, 2.0]).unwrap();
        let (breakdown, _) = slowness_ae_loss(
            &x,
            &x,
            &model.encoder.layers[0],
            &model.decoder.as_ref().unwrap().layers[0],
            0.0,
            0.0,
        )
        .unwrap();
        assert_eq!(breakdown.total, 0.0);
    }

    #[test]
    fn identical_frames_zero_slowness() {
        let mut model = fc_autoencoder(6, 8, 4).unwrap();
        init_weights(&mut model, &mut Rng::seed_from(9)).unwrap();
        let x = Rng::seed_from(17).uniform_tensor(-1.0, 1.0, &[2, 6]).unwrap();
        let (breakdown, _) = slowness_ae_loss(
            &x,
            &x,
            &model.encoder.layers[0],
            &model.decoder.as_ref().unwrap().layers[0],
            0.3,
            2.0,
        )
        .unwrap();
        assert_eq!(breakdown.slowness, 0.0);
    }

    #[test]
    fn term_isolation() {
        // alpha = beta = 0 reduces the total to the pure reconstruction term.
        let mut model = fc_autoencoder(6, 8, 4).unwrap();
        init_weights(&mut model, &mut Rng::seed_from(13)).unwrap();
        let x_t = Rng::seed_from(1).uniform_tensor(-1.0, 1.0, &[3, 6]).unwrap();
        let x_tp = Rng::seed_from(2).uniform_tensor(-1.0, 1.0, &[3, 6]).unwrap();
        let enc = &model.encoder.layers[0];
        let dec = &model.decoder.as_ref().unwrap().layers[0];

        let (plain, _) = slowness_ae_loss(&x_t, &x_tp, enc, dec, 0.0, 0.0).unwrap();
        assert_eq!(plain.total, plain.reconstruction);
        assert_eq!(plain.l1, 0.0);
        assert_eq!(plain.slowness, 0.0);

        let (full, _) = slowness_ae_loss(&x_t, &x_tp, enc, dec, 0.7, 1.3).unwrap();
        assert_eq!(full.reconstruction, plain.reconstruction);
        assert!((full.total - (full.reconstruction + full.l1 + full.slowness)).abs() < 1e-15);
        assert!(full.l1 > 0.0);
    }

    #[test]
    fn negative_hyperparameters_rejected() {
        let model = identity_autoencoder(2);
        let x = Tensor::zeros(&[1, 2]).unwrap();
        let enc = &model.encoder.layers[0];
        let dec = &model.decoder.as_ref().unwrap().layers[0];
        assert!(slowness_ae_loss(&x, &x, enc, dec, -1.0, 0.0).is_err());
        assert!(slowness_ae_loss(&x, &x, enc, dec, 0.0, -1.0).is_err());
        assert!(group_sparsity_loss(&x, enc, dec, -0.5).is_err());
    }

    #[test]
    fn group_sparsity_three_four_five() {
        // One active group (3,4,0,0) under alpha = 1: sparsity term 5.
        let mut model = fc_autoencoder(4, 4, 4).unwrap();
        model.encoder.layers[0].spec.pool = Some(PoolSpec::features(4).with_epsilon(0.0));
        for i in 0..4 {
            model.encoder.layers[0].weight.set(&[i, i], 1.0);
        }
        let x = Tensor::from_vec(&[1, 4], vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let (breakdown, _) = group_sparsity_loss(
            &x,
            &model.encoder.layers[0],
            &model.decoder.as_ref().unwrap().layers[0],
            1.0,
        )
        .unwrap();
        assert_eq!(breakdown.group_sparsity, 5.0);
    }

    #[test]
    fn group_sparsity_alpha_zero_is_reconstruction() {
        let mut model = fc_autoencoder(6, 8, 2).unwrap();
        init_weights(&mut model, &mut Rng::seed_from(23)).unwrap();
        let x = Rng::seed_from(3).uniform_tensor(-1.0, 1.0, &[2, 6]).unwrap();
        let (breakdown, _) = group_sparsity_loss(
            &x,
            &model.encoder.layers[0],
            &model.decoder.as_ref().unwrap().layers[0],
            0.0,
        )
        .unwrap();
        assert_eq!(breakdown.total, breakdown.reconstruction);
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        let mut c = TrainingConfig::default();
        c.margin = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainingConfig::default();
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainingConfig::default();
        c.alpha = -0.1;
        assert!(c.validate().is_err());
    }
}
