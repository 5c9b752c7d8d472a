//! Encoder/decoder stacks and their presets.
//!
//! An encoder layer is linear map -> optional rectifier -> optional L2
//! pooling; stacking layers gives the multi-stage encoders. Decoders
//! reconstruct each layer's input from the pre-pool hidden activation with a
//! bias-free linear or transposed-convolution map. A Siamese pair is the
//! same parameter set applied to two inputs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::nn::{
    affine_backward, affine_forward, conv2d_backward, conv2d_forward, conv2d_kernel_grad,
    conv2d_transpose_forward, l2pool_backward, l2pool_forward, relu_backward, relu_forward,
    LayerKind, LayerSpec, Padding, PoolSpec,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// One encoder stage: weight, bias, and the geometry in `spec`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub spec: LayerSpec,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Everything the backward pass needs about one layer's forward pass.
/// `hidden` is the pre-pool (post-rectifier) activation the losses consume.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Tensor,
    pub hidden: Tensor,
    pub pooled: Tensor,
}

/// Gradients for one encoder layer, aligned with [`EncoderLayer`].
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl EncoderLayer {
    pub fn new(spec: LayerSpec) -> Result<EncoderLayer> {
        let (weight, bias) = match &spec.kind {
            LayerKind::FullyConnected { in_dim, out_dim } => (
                Tensor::zeros(&[*out_dim, *in_dim])?,
                Tensor::zeros(&[*out_dim])?,
            ),
            LayerKind::Convolutional {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => (
                Tensor::zeros(&[*out_channels, *in_channels, *kernel_h, *kernel_w])?,
                Tensor::zeros(&[*out_channels])?,
            ),
        };
        Ok(EncoderLayer { spec, weight, bias })
    }

    pub fn fan_in(&self) -> usize {
        match &self.spec.kind {
            LayerKind::FullyConnected { in_dim, .. } => *in_dim,
            LayerKind::Convolutional {
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => in_channels * kernel_h * kernel_w,
        }
    }

    /// Forward through linear map, rectifier, and pooling for a batched input.
    pub fn forward(&self, x: &Tensor) -> Result<LayerCache> {
        let bias = self.spec.has_bias.then_some(&self.bias);
        let pre = match &self.spec.kind {
            LayerKind::FullyConnected { .. } => affine_forward(x, &self.weight, bias)?,
            LayerKind::Convolutional { padding, .. } => {
                conv2d_forward(x, &self.weight, bias, *padding)?
            }
        };
        let hidden = if self.spec.relu { relu_forward(&pre) } else { pre };
        let pooled = match &self.spec.pool {
            Some(pool) => l2pool_forward(&hidden, pool)?,
            None => hidden.clone(),
        };
        Ok(LayerCache {
            input: x.clone(),
            hidden,
            pooled,
        })
    }

    /// Backward from a gradient w.r.t. the pooled output.
    pub fn backward(&self, cache: &LayerCache, gpooled: &Tensor) -> Result<(LayerGrads, Tensor)> {
        let ghidden = match &self.spec.pool {
            Some(pool) => l2pool_backward(&cache.hidden, pool, gpooled)?,
            None => gpooled.clone(),
        };
        self.backward_from_hidden(cache, &ghidden)
    }

    /// Backward from a gradient w.r.t. the pre-pool hidden activation
    /// (losses that touch `h` directly enter here).
    pub fn backward_from_hidden(
        &self,
        cache: &LayerCache,
        ghidden: &Tensor,
    ) -> Result<(LayerGrads, Tensor)> {
        // hidden > 0 iff pre-activation > 0, so the rectifier mask can be
        // taken from the cached hidden activation.
        let gpre = if self.spec.relu {
            relu_backward(&cache.hidden, ghidden)?
        } else {
            ghidden.clone()
        };
        match &self.spec.kind {
            LayerKind::FullyConnected { .. } => {
                let (gx, gw, gb) = affine_backward(&cache.input, &self.weight, &gpre)?;
                Ok((LayerGrads { weight: gw, bias: gb }, gx))
            }
            LayerKind::Convolutional { padding, .. } => {
                let grads = conv2d_backward(&cache.input, &self.weight, &gpre, *padding)?;
                Ok((
                    LayerGrads {
                        weight: grads.kernel,
                        bias: grads.bias,
                    },
                    grads.input,
                ))
            }
        }
    }
}

/// A stack of encoder layers applied in order.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub layers: Vec<EncoderLayer>,
}

impl EncoderModel {
    pub fn new(specs: Vec<LayerSpec>) -> Result<EncoderModel> {
        let layers = specs
            .into_iter()
            .map(EncoderLayer::new)
            .collect::<Result<Vec<_>>>()?;
        if layers.is_empty() {
            return Err(Error::Argument("encoder needs at least one layer".into()));
        }
        Ok(EncoderModel { layers })
    }

    /// Final pooled code and the per-layer caches needed by backward passes.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Vec<LayerCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for layer in &self.layers {
            let cache = layer.forward(&current)?;
            current = cache.pooled.clone();
            caches.push(cache);
        }
        Ok((current, caches))
    }

    /// Pooled code only, for batched evaluation.
    pub fn encode_batch(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.encode(x)?.0)
    }

    /// Backpropagates a gradient w.r.t. the final code through every layer;
    /// returns per-layer parameter gradients and the input gradient.
    pub fn backward(&self, caches: &[LayerCache], gz: &Tensor) -> Result<(Vec<LayerGrads>, Tensor)> {
        if caches.len() != self.layers.len() {
            return Err(Error::Argument(format!(
                "cache count {} does not match layer count {}",
                caches.len(),
                self.layers.len()
            )));
        }
        let mut grads = vec![None; self.layers.len()];
        let mut g = gz.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let (layer_grads, gx) = layer.backward(&caches[idx], &g)?;
            grads[idx] = Some(layer_grads);
            g = gx;
        }
        Ok((grads.into_iter().map(|g| g.unwrap()).collect(), g))
    }

    /// Applies the shared parameter set to both halves of a pair.
    pub fn siamese(
        &self,
        x_a: &Tensor,
        x_b: &Tensor,
    ) -> Result<(Tensor, Tensor, Vec<LayerCache>, Vec<LayerCache>)> {
        let (z_a, caches_a) = self.encode(x_a)?;
        let (z_b, caches_b) = self.encode(x_b)?;
        Ok((z_a, z_b, caches_a, caches_b))
    }

    /// Per-sample code shape for a given per-sample input shape.
    pub fn code_shape(&self, sample_shape: &[usize]) -> Result<Vec<usize>> {
        let mut shape = Vec::with_capacity(sample_shape.len() + 1);
        shape.push(1);
        shape.extend_from_slice(sample_shape);
        for layer in &self.layers {
            shape = layer.spec.output_shape(&shape)?;
        }
        Ok(shape[1..].to_vec())
    }

    pub fn code_dim(&self, sample_shape: &[usize]) -> Result<usize> {
        Ok(self.code_shape(sample_shape)?.iter().product())
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            if !layer.weight.is_finite() || !layer.bias.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite parameter in encoder layer {i}"
                )));
            }
        }
        Ok(())
    }
}

/// Bias-free reconstruction map for one encoder stage. Rank-2 weights are a
/// linear map `[input_dim, hidden_dim]`; rank-4 weights are a transposed
/// convolution kernel `[D,C,kh,kw]` with the stage's padding.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub weight: Tensor,
    pub padding: Padding,
}

impl DecoderLayer {
    /// `W_d h`: reconstruction of the stage input from the hidden activation.
    pub fn reconstruct(&self, h: &Tensor) -> Result<Tensor> {
        match self.weight.rank() {
            2 => affine_forward(h, &self.weight, None),
            4 => conv2d_transpose_forward(h, &self.weight, self.padding),
            r => Err(Error::Shape(format!("decoder weight rank {r}"))),
        }
    }

    /// Gradients of `reconstruct` w.r.t. weight and hidden input.
    pub fn backward(&self, h: &Tensor, grecon: &Tensor) -> Result<(Tensor, Tensor)> {
        match self.weight.rank() {
            2 => {
                let (gh, gw, _gb) = affine_backward(h, &self.weight, grecon)?;
                Ok((gw, gh))
            }
            4 => {
                let kh = self.weight.shape()[2];
                let kw = self.weight.shape()[3];
                // The transpose's kernel gradient has the conv kernel-grad
                // form with the reconstruction gradient in the image slot.
                let gw = conv2d_kernel_grad(grecon, h, kh, kw, self.padding)?;
                let gh = conv2d_forward(grecon, &self.weight, None, self.padding)?;
                Ok((gw, gh))
            }
            r => Err(Error::Shape(format!("decoder weight rank {r}"))),
        }
    }

    pub fn fan_in(&self) -> usize {
        match self.weight.rank() {
            2 => self.weight.shape()[1],
            _ => self.weight.shape()[0] * self.weight.shape()[2] * self.weight.shape()[3],
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderModel {
    pub layers: Vec<DecoderLayer>,
}

/// An encoder with an optional per-stage decoder (auto-encoder presets carry
/// one; embedding presets do not).
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: EncoderModel,
    pub decoder: Option<DecoderModel>,
}

/// The architectures used in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchPreset {
    /// 64 9x9 convolution kernels, rectifier, pooling across feature maps in
    /// groups of 4 and 2x2 spatially: 32x32x3 input -> 16x16x16 code (4096).
    Layer1,
    /// 64 5x5 kernels over the layer-1 code, 4x4 spatial pooling:
    /// 16x16x16 input -> 64x4x4 code (1024).
    Layer2,
    /// Fully connected embedder 9216 -> 100 (rectified) -> 2 (linear).
    FcToy,
    /// Fully connected auto-encoder over 20x20 patches: 400 -> 512 hidden,
    /// pooled in groups of 4 -> 128 outputs.
    FcPatch,
}

impl ArchPreset {
    pub fn parse(name: &str) -> Result<ArchPreset> {
        match name {
            "layer1" => Ok(ArchPreset::Layer1),
            "layer2" => Ok(ArchPreset::Layer2),
            "fc_toy" => Ok(ArchPreset::FcToy),
            "fc_patch" => Ok(ArchPreset::FcPatch),
            other => Err(Error::Config(format!(
                "unknown architecture preset '{other}' (expected layer1, layer2, fc_toy, fc_patch)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ArchPreset::Layer1 => "layer1",
            ArchPreset::Layer2 => "layer2",
            ArchPreset::FcToy => "fc_toy",
            ArchPreset::FcPatch => "fc_patch",
        }
    }

    /// Per-sample input shape each preset was dimensioned for.
    pub fn reference_input(&self) -> Vec<usize> {
        match self {
            ArchPreset::Layer1 => vec![3, 32, 32],
            ArchPreset::Layer2 => vec![16, 16, 16],
            ArchPreset::FcToy => vec![9216],
            ArchPreset::FcPatch => vec![400],
        }
    }
}

/// Builds a preset architecture with zero-initialized parameters.
pub fn build_preset(preset: ArchPreset) -> Result<Model> {
    match preset {
        ArchPreset::Layer1 => conv_autoencoder(3, 64, 9, Padding::Same, PoolSpec::new(4, 2, 2)),
        ArchPreset::Layer2 => conv_autoencoder(16, 64, 5, Padding::Same, PoolSpec::new(1, 4, 4)),
        ArchPreset::FcToy => fc_embedder(9216, 100, 2),
        ArchPreset::FcPatch => fc_autoencoder(400, 512, 4),
    }
}

/// One-stage fully connected pooling auto-encoder.
pub fn fc_autoencoder(input_dim: usize, hidden: usize, feature_group: usize) -> Result<Model> {
    let spec = LayerSpec::fully_connected(input_dim, hidden)
        .with_pool(PoolSpec::features(feature_group));
    let encoder = EncoderModel::new(vec![spec])?;
    let decoder = DecoderModel {
        layers: vec![DecoderLayer {
            weight: Tensor::zeros(&[input_dim, hidden])?,
            padding: Padding::Valid,
        }],
    };
    Ok(Model {
        encoder,
        decoder: Some(decoder),
    })
}

/// One-stage convolutional pooling auto-encoder with a square kernel.
pub fn conv_autoencoder(
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    padding: Padding,
    pool: PoolSpec,
) -> Result<Model> {
    let spec = LayerSpec::convolutional(in_channels, out_channels, kernel, kernel, padding)
        .with_pool(pool);
    let encoder = EncoderModel::new(vec![spec])?;
    let decoder = DecoderModel {
        layers: vec![DecoderLayer {
            weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel])?,
            padding,
        }],
    };
    Ok(Model {
        encoder,
        decoder: Some(decoder),
    })
}

/// Two-layer fully connected embedding network (rectified hidden layer,
/// linear output) for contrastive training.
pub fn fc_embedder(input_dim: usize, hidden: usize, out_dim: usize) -> Result<Model> {
    let specs = vec![
        LayerSpec::fully_connected(input_dim, hidden),
        LayerSpec::fully_connected(hidden, out_dim).linear_output(),
    ];
    Ok(Model {
        encoder: EncoderModel::new(specs)?,
        decoder: None,
    })
}

/// Stacks the encoder layers of several models into one (the jointly trained
/// multi-stage contrastive network); decoders are dropped.
pub fn stack_encoders(models: &[Model]) -> Result<Model> {
    let mut layers = Vec::new();
    for m in models {
        layers.extend(m.encoder.layers.iter().cloned());
    }
    if layers.is_empty() {
        return Err(Error::Argument("stack_encoders of zero models".into()));
    }
    Ok(Model {
        encoder: EncoderModel { layers },
        decoder: None,
    })
}

/// Uniform init in `[-s, s]` with `s = 1/sqrt(fan_in)`; biases zero. The
/// draw order is fixed (encoder layers first, then decoder layers) so a
/// seed fully determines the parameters.
pub fn init_weights(model: &mut Model, rng: &mut Rng) -> Result<()> {
    for layer in &mut model.encoder.layers {
        let s = 1.0 / (layer.fan_in() as f64).sqrt();
        layer.weight = rng.uniform_tensor(-s, s, layer.weight.shape())?;
        layer.bias = Tensor::zeros(layer.bias.shape())?;
    }
    if let Some(decoder) = &mut model.decoder {
        for layer in &mut decoder.layers {
            let s = 1.0 / (layer.fan_in() as f64).sqrt();
            layer.weight = rng.uniform_tensor(-s, s, layer.weight.shape())?;
        }
    }
    Ok(())
}

// --- checkpoint format -----------------------------------------------------
//
// A checkpoint is a directory: `manifest.txt` ("key = value" lines) plus one
// STCM1 tensor file per parameter (layer<k>.enc_weight.stcm,
// layer<k>.enc_bias.stcm, layer<k>.dec_weight.stcm).

pub fn save_checkpoint(dir: &Path, model: &Model, extra: &[(String, String)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    writeln_kv(&mut manifest, "format", "stcm-checkpoint-1");
    writeln_kv(&mut manifest, "layers", &model.encoder.layers.len().to_string());
    for (i, layer) in model.encoder.layers.iter().enumerate() {
        let p = format!("layer{i}");
        match &layer.spec.kind {
            LayerKind::FullyConnected { in_dim, out_dim } => {
                writeln_kv(&mut manifest, &format!("{p}.kind"), "fc");
                writeln_kv(&mut manifest, &format!("{p}.in"), &in_dim.to_string());
                writeln_kv(&mut manifest, &format!("{p}.out"), &out_dim.to_string());
            }
            LayerKind::Convolutional {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                padding,
            } => {
                writeln_kv(&mut manifest, &format!("{p}.kind"), "conv");
                writeln_kv(&mut manifest, &format!("{p}.in"), &in_channels.to_string());
                writeln_kv(&mut manifest, &format!("{p}.out"), &out_channels.to_string());
                writeln_kv(&mut manifest, &format!("{p}.kernel_h"), &kernel_h.to_string());
                writeln_kv(&mut manifest, &format!("{p}.kernel_w"), &kernel_w.to_string());
                let pad = match padding {
                    Padding::Valid => "valid",
                    Padding::Same => "same",
                };
                writeln_kv(&mut manifest, &format!("{p}.padding"), pad);
            }
        }
        writeln_kv(&mut manifest, &format!("{p}.relu"), &layer.spec.relu.to_string());
        writeln_kv(
            &mut manifest,
            &format!("{p}.has_bias"),
            &layer.spec.has_bias.to_string(),
        );
        if let Some(pool) = &layer.spec.pool {
            writeln_kv(
                &mut manifest,
                &format!("{p}.pool.feature_group"),
                &pool.feature_group.to_string(),
            );
            writeln_kv(
                &mut manifest,
                &format!("{p}.pool.spatial_h"),
                &pool.spatial_h.to_string(),
            );
            writeln_kv(
                &mut manifest,
                &format!("{p}.pool.spatial_w"),
                &pool.spatial_w.to_string(),
            );
            writeln_kv(&mut manifest, &format!("{p}.pool.order"), &pool.order.to_string());
            writeln_kv(
                &mut manifest,
                &format!("{p}.pool.epsilon"),
                &pool.epsilon.to_string(),
            );
        }
        let has_dec = model
            .decoder
            .as_ref()
            .map(|d| i < d.layers.len())
            .unwrap_or(false);
        writeln_kv(&mut manifest, &format!("{p}.decoder"), &has_dec.to_string());
    }
    for (k, v) in extra {
        writeln_kv(&mut manifest, k, v);
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;

    for (i, layer) in model.encoder.layers.iter().enumerate() {
        io::write_tensor(&dir.join(format!("layer{i}.enc_weight.stcm")), &layer.weight)?;
        io::write_tensor(&dir.join(format!("layer{i}.enc_bias.stcm")), &layer.bias)?;
    }
    if let Some(decoder) = &model.decoder {
        for (i, layer) in decoder.layers.iter().enumerate() {
            io::write_tensor(&dir.join(format!("layer{i}.dec_weight.stcm")), &layer.weight)?;
        }
    }
    Ok(())
}

fn writeln_kv(buf: &mut String, key: &str, value: &str) {
    let _ = writeln!(buf, "{key} = {value}");
}

fn manifest_get<'a>(
    map: &'a std::collections::BTreeMap<String, String>,
    key: &str,
) -> Result<&'a str> {
    map.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| Error::Config(format!("checkpoint manifest missing key '{key}'")))
}

fn parse_num<T: std::str::FromStr>(raw: &str, key: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("checkpoint manifest key '{key}': bad value '{raw}'")))
}

pub fn load_checkpoint(dir: &Path) -> Result<Model> {
    let manifest_path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&manifest_path)?;
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    if manifest_get(&map, "format")? != "stcm-checkpoint-1" {
        return Err(Error::Config(format!(
            "unsupported checkpoint format '{}'",
            manifest_get(&map, "format")?
        )));
    }
    let layer_count: usize = parse_num(manifest_get(&map, "layers")?, "layers")?;
    let mut enc_layers = Vec::with_capacity(layer_count);
    let mut dec_layers = Vec::new();
    for i in 0..layer_count {
        let p = format!("layer{i}");
        let kind = manifest_get(&map, &format!("{p}.kind"))?;
        let in_sz: usize = parse_num(manifest_get(&map, &format!("{p}.in"))?, "in")?;
        let out_sz: usize = parse_num(manifest_get(&map, &format!("{p}.out"))?, "out")?;
        let padding = match map.get(&format!("{p}.padding")).map(|s| s.as_str()) {
            Some("same") => Padding::Same,
            Some("valid") | None => Padding::Valid,
            Some(other) => {
                return Err(Error::Config(format!("unknown padding '{other}'")));
            }
        };
        let mut spec = match kind {
            "fc" => LayerSpec::fully_connected(in_sz, out_sz),
            "conv" => {
                let kh: usize = parse_num(manifest_get(&map, &format!("{p}.kernel_h"))?, "kernel_h")?;
                let kw: usize = parse_num(manifest_get(&map, &format!("{p}.kernel_w"))?, "kernel_w")?;
                LayerSpec::convolutional(in_sz, out_sz, kh, kw, padding)
            }
            other => return Err(Error::Config(format!("unknown layer kind '{other}'"))),
        };
        spec.relu = parse_num(manifest_get(&map, &format!("{p}.relu"))?, "relu")?;
        spec.has_bias = parse_num(manifest_get(&map, &format!("{p}.has_bias"))?, "has_bias")?;
        if let Some(fg) = map.get(&format!("{p}.pool.feature_group")) {
            let pool = PoolSpec {
                feature_group: parse_num(fg, "pool.feature_group")?,
                spatial_h: parse_num(
                    manifest_get(&map, &format!("{p}.pool.spatial_h"))?,
                    "pool.spatial_h",
                )?,
                spatial_w: parse_num(
                    manifest_get(&map, &format!("{p}.pool.spatial_w"))?,
                    "pool.spatial_w",
                )?,
                order: parse_num(manifest_get(&map, &format!("{p}.pool.order"))?, "pool.order")?,
                epsilon: parse_num(
                    manifest_get(&map, &format!("{p}.pool.epsilon"))?,
                    "pool.epsilon",
                )?,
            };
            spec.pool = Some(pool);
        }
        let mut layer = EncoderLayer::new(spec)?;
        let weight = io::read_tensor(&dir.join(format!("{p}.enc_weight.stcm")))?;
        let bias = io::read_tensor(&dir.join(format!("{p}.enc_bias.stcm")))?;
        if weight.shape() != layer.weight.shape() || bias.shape() != layer.bias.shape() {
            return Err(Error::Config(format!(
                "checkpoint tensor shapes for layer {i} do not match its spec"
            )));
        }
        layer.weight = weight;
        layer.bias = bias;
        enc_layers.push(layer);

        let has_dec: bool = parse_num(manifest_get(&map, &format!("{p}.decoder"))?, "decoder")?;
        if has_dec {
            let weight = io::read_tensor(&dir.join(format!("{p}.dec_weight.stcm")))?;
            dec_layers.push(DecoderLayer { weight, padding });
        }
    }
    Ok(Model {
        encoder: EncoderModel { layers: enc_layers },
        decoder: if dec_layers.is_empty() {
            None
        } else {
            Some(DecoderModel { layers: dec_layers })
        },
    })
}
