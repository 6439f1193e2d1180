//! VQ-VAE labeling function `u(x)`: encoder, codebook nearest-neighbour
//! assignment and spatial one-hot label maps with a reserved fake class 0.

use candle_core::{Device, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{shape_err, CoreError, Result};
use crate::losses::{distortion, PerceptualExtractor};
use crate::nn::{ops, ChannelNorm, Conv2d, ParamStore};

/// Spatial downsampling of the VQ encoder.
pub const LABEL_STRIDE: usize = 8;

/// Index of the fake class.
pub const FAKE_CLASS: u32 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelerConfig {
    /// Codebook size `C`.
    pub classes: usize,
    /// Code dimension `D`.
    pub dim: usize,
    pub hidden_channels: usize,
    /// Commitment weight β.
    pub beta: f64,
    /// Weight of the reconstruction term.
    pub distortion_weight: f64,
    pub lambda_mse: f64,
    /// Adds a cross-covariance attention block after the encoder trunk.
    pub attention: bool,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self {
            classes: 1024,
            dim: 16,
            hidden_channels: 64,
            beta: 0.25,
            distortion_weight: 1.0,
            lambda_mse: 1.0,
            attention: false,
        }
    }
}

impl LabelerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.dim == 0 || self.hidden_channels == 0 {
            return Err(CoreError::Config("labeler classes, dim and hidden_channels must be positive".into()));
        }
        if !(self.beta > 0.0) {
            return Err(CoreError::Config("commitment weight beta must be positive".into()));
        }
        Ok(())
    }
}

/// Per-location class indices for one image; class 0 is fake, 1..=C are codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    classes: usize,
    height: usize,
    width: usize,
    indices: Vec<u32>,
}

impl LabelMap {
    pub fn new(classes: usize, height: usize, width: usize, indices: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 || classes == 0 {
            return Err(shape_err!("label map dims must be positive"));
        }
        if indices.len() != height * width {
            return Err(shape_err!("{} indices for a {height}x{width} map", indices.len()));
        }
        if let Some(i) = indices.iter().find(|i| **i as usize > classes) {
            return Err(CoreError::Domain(format!("class {i} exceeds C = {classes}")));
        }
        Ok(Self {
            classes,
            height,
            width,
            indices,
        })
    }

    /// Map with every location set to the fake class.
    pub fn fake(height: usize, width: usize, classes: usize) -> Result<Self> {
        Self::new(classes, height, width, vec![FAKE_CLASS; height * width])
    }

    /// Parses a (C+1)×H×W {0,1} array, requiring exactly one 1 per location.
    pub fn from_one_hot(one_hot: &[u8], channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels < 2 || one_hot.len() != channels * height * width {
            return Err(shape_err!("one-hot buffer of {} for {channels}x{height}x{width}", one_hot.len()));
        }
        let plane = height * width;
        let mut indices = Vec::with_capacity(plane);
        for p in 0..plane {
            let mut hit = None;
            for c in 0..channels {
                match one_hot[c * plane + p] {
                    0 => {}
                    1 if hit.is_none() => hit = Some(c as u32),
                    _ => return Err(CoreError::Domain(format!("location {p} is not one-hot"))),
                }
            }
            indices.push(hit.ok_or_else(|| CoreError::Domain(format!("location {p} has no class")))?);
        }
        Self::new(channels - 1, height, width, indices)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn channels(&self) -> usize {
        self.classes + 1
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// (C+1)×H×W one-hot array.
    pub fn one_hot(&self) -> Vec<u8> {
        let plane = self.height * self.width;
        let mut out = vec![0u8; self.channels() * plane];
        for (p, &c) in self.indices.iter().enumerate() {
            out[c as usize * plane + p] = 1;
        }
        out
    }

    pub fn uses_fake_class(&self) -> bool {
        self.indices.contains(&FAKE_CLASS)
    }

    /// (B, 1, H, W) u32 tensor of class indices.
    pub fn batch_indices(maps: &[LabelMap]) -> Result<Tensor> {
        let first = maps.first().ok_or_else(|| shape_err!("empty label batch"))?;
        let (h, w) = (first.height, first.width);
        let mut v = Vec::with_capacity(maps.len() * h * w);
        for m in maps {
            if (m.height, m.width) != (h, w) {
                return Err(shape_err!("label batch mixes sizes"));
            }
            v.extend_from_slice(&m.indices);
        }
        Ok(Tensor::from_vec(v, (maps.len(), 1, h, w), &Device::Cpu)?)
    }
}

/// 1-based index of the nearest codebook row to each `d`-dimensional vector in
/// `vectors` (squared Euclidean distance, ties to the lowest index).
pub fn nearest_code(vectors: &[f32], d: usize, codebook: &[f32]) -> Result<Vec<u32>> {
    if codebook.is_empty() {
        return Err(CoreError::Domain("empty codebook".into()));
    }
    if d == 0 || codebook.len() % d != 0 || vectors.len() % d != 0 {
        return Err(shape_err!("vectors and codebook must both be multiples of D = {d}"));
    }
    Ok(vectors
        .chunks_exact(d)
        .map(|e| {
            let mut best = (f64::INFINITY, 0usize);
            for (i, m) in codebook.chunks_exact(d).enumerate() {
                let dist: f64 = e.iter().zip(m).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
                if dist < best.0 {
                    best = (dist, i);
                }
            }
            best.1 as u32 + 1
        })
        .collect())
}

/// Location-major (B·H·W, D) copy of a (B, D, H, W) tensor.
fn to_rows(e: &Tensor) -> Result<Vec<f32>> {
    let (b, d, h, w) = e.dims4()?;
    Ok(e.permute((0, 2, 3, 1))?.contiguous()?.reshape((b * h * w, d))?.flatten_all()?.to_vec1()?)
}

struct Xca {
    qkv: Conv2d,
    proj: Conv2d,
    temperature: Var,
}

impl Xca {
    /// Cross-covariance attention: a softmax over channel-by-channel affinities
    /// of L2-normalized queries and keys.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let qkv = self.qkv.forward(x)?.reshape((b, 3, c, h * w))?;
        let norm = |t: Tensor| -> Result<Tensor> {
            let n = (t.sqr()?.sum_keepdim(2)? + 1e-12)?.sqrt()?;
            Ok(t.broadcast_div(&n)?)
        };
        let q = norm(qkv.narrow(1, 0, 1)?.squeeze(1)?)?;
        let k = norm(qkv.narrow(1, 1, 1)?.squeeze(1)?)?;
        let v = qkv.narrow(1, 2, 1)?.squeeze(1)?.contiguous()?;
        let logits = q.matmul(&k.t()?)?.broadcast_mul(self.temperature.as_tensor())?;
        let attn = logits.broadcast_sub(&logits.log_sum_exp(2)?.unsqueeze(2)?)?.exp()?;
        let out = attn.matmul(&v)?.reshape((b, c, h, w))?;
        Ok((x + self.proj.forward(&out)?)?)
    }
}

/// Reconstruction, embedding and commitment terms of the VQ objective.
pub struct VqLoss {
    pub total: Tensor,
    pub reconstruction: Tensor,
    pub embedding: Tensor,
    pub commitment: Tensor,
}

pub struct VqLabeler {
    pub config: LabelerConfig,
    pub store: ParamStore,
    encoder: Vec<(Conv2d, ChannelNorm)>,
    res: (Conv2d, Conv2d),
    attention: Option<Xca>,
    to_code: Conv2d,
    codebook: Var,
    decoder_in: (Conv2d, ChannelNorm),
    decoder_up: Vec<(Conv2d, ChannelNorm)>,
    decoder_out: Conv2d,
}

impl VqLabeler {
    pub fn new(config: LabelerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::nn::rng_for(seed, 0x7671);
        let mut s = ParamStore::new();
        let (n, d, c) = (config.hidden_channels, config.dim, config.classes);
        let mut encoder = Vec::new();
        for i in 0..3 {
            let cin = if i == 0 { 3 } else { n };
            let name = format!("vq_encoder.{i}");
            encoder.push((
                Conv2d::new(&mut s, &name, cin, n, 4, 2, 1, &mut rng)?,
                ChannelNorm::new(&mut s, &format!("{name}.norm"), n)?,
            ));
        }
        let res = (
            Conv2d::same(&mut s, "vq_encoder.res.0", n, n, 3, &mut rng)?,
            Conv2d::same(&mut s, "vq_encoder.res.1", n, n, 3, &mut rng)?,
        );
        let attention = if config.attention {
            Some(Xca {
                qkv: Conv2d::same(&mut s, "vq_encoder.xca.qkv", n, 3 * n, 1, &mut rng)?,
                proj: Conv2d::same(&mut s, "vq_encoder.xca.proj", n, n, 1, &mut rng)?,
                temperature: s.constant("vq_encoder.xca.temperature", &[1], 1.0)?,
            })
        } else {
            None
        };
        let to_code = Conv2d::same(&mut s, "vq_encoder.out", n, d, 1, &mut rng)?;
        let bound = 1.0 / c as f64;
        let codebook = s.uniform("vq_codebook", &[c, d], bound, &mut rng)?;
        let decoder_in = (
            Conv2d::same(&mut s, "vq_decoder.in", d, n, 3, &mut rng)?,
            ChannelNorm::new(&mut s, "vq_decoder.in.norm", n)?,
        );
        let mut decoder_up = Vec::new();
        for i in 0..3 {
            let name = format!("vq_decoder.up{i}");
            decoder_up.push((
                Conv2d::same(&mut s, &name, n, 4 * n, 3, &mut rng)?,
                ChannelNorm::new(&mut s, &format!("{name}.norm"), n)?,
            ));
        }
        let decoder_out = Conv2d::same(&mut s, "vq_decoder.out", n, 3, 3, &mut rng)?;
        Ok(Self {
            config,
            store: s,
            encoder,
            res,
            attention,
            to_code,
            codebook,
            decoder_in,
            decoder_up,
            decoder_out,
        })
    }

    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.set_section("labeler_config", &self.config)?;
        ckpt.put_group("labeler", self.store.export()?);
        Ok(())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let l = Self::new(ckpt.section("labeler_config")?, 0)?;
        l.store.import(&ckpt.group("labeler"))?;
        Ok(l)
    }

    pub fn codebook(&self) -> &Tensor {
        self.codebook.as_tensor()
    }

    /// Continuous latent `e`: (B, D, H/8, W/8).
    pub fn vq_encode(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || h % LABEL_STRIDE != 0 || w % LABEL_STRIDE != 0 {
            return Err(shape_err!("labeler expects 3 channels with dims divisible by {LABEL_STRIDE}, got {c}x{h}x{w}"));
        }
        let mut t = x.clone();
        for (conv, norm) in &self.encoder {
            t = norm.forward(&conv.forward(&t)?)?.relu()?;
        }
        let r = self.res.1.forward(&self.res.0.forward(&t)?.relu()?)?;
        t = (t + r)?.relu()?;
        if let Some(a) = &self.attention {
            t = a.forward(&t)?;
        }
        self.to_code.forward(&t)
    }

    /// 1-based code indices, (B, H/8, W/8) flattened location-major per image.
    pub fn codes(&self, e: &Tensor) -> Result<Vec<u32>> {
        let cb: Vec<f32> = self.codebook.as_tensor().flatten_all()?.to_vec1()?;
        nearest_code(&to_rows(e)?, self.config.dim, &cb)
    }

    /// `u(x)` for every image of the batch.
    pub fn label_maps(&self, x: &Tensor) -> Result<Vec<LabelMap>> {
        let e = self.vq_encode(x)?;
        let (b, _, h, w) = e.dims4()?;
        let codes = self.codes(&e)?;
        codes
            .chunks_exact(h * w)
            .take(b)
            .map(|c| LabelMap::new(self.config.classes, h, w, c.to_vec()))
            .collect()
    }

    /// Codebook rows selected by `codes` laid out as (B, D, H, W).
    fn select(&self, codes: &[u32], b: usize, h: usize, w: usize) -> Result<Tensor> {
        let idx: Vec<u32> = codes.iter().map(|c| c - 1).collect();
        let idx = Tensor::from_vec(idx, codes.len(), &Device::Cpu)?;
        let rows = self.codebook.as_tensor().index_select(&idx, 0)?;
        Ok(rows.reshape((b, h, w, self.config.dim))?.permute((0, 3, 1, 2))?.contiguous()?)
    }

    pub fn vq_decode(&self, m: &Tensor) -> Result<Tensor> {
        let mut t = self.decoder_in.1.forward(&self.decoder_in.0.forward(m)?)?.relu()?;
        for (conv, norm) in &self.decoder_up {
            t = norm.forward(&ops::pixel_shuffle(&conv.forward(&t)?, 2)?)?.relu()?;
        }
        Ok((self.decoder_out.forward(&t)? + 0.5)?)
    }

    /// Full VQ objective on a batch; the decoder sees the selected codes with a
    /// straight-through gradient to the encoder.
    pub fn vq_loss(&self, x: &Tensor, extractor: Option<&dyn PerceptualExtractor>) -> Result<VqLoss> {
        let e = self.vq_encode(x)?;
        let (b, _, h, w) = e.dims4()?;
        let codes = self.codes(&e)?;
        let m = self.select(&codes, b, h, w)?;
        let x_hat = self.vq_decode(&ops::straight_through(&e, &m)?)?;
        let reconstruction = distortion(&x_hat, x, self.config.lambda_mse, extractor)?;
        let (embedding, commitment) = code_losses(&e, &m)?;
        let total = ((&reconstruction * self.config.distortion_weight)? + &embedding)?.add(&(&commitment * self.config.beta)?)?;
        Ok(VqLoss {
            total,
            reconstruction,
            embedding,
            commitment,
        })
    }
}

/// `(‖sg(e) − m‖², ‖e − sg(m)‖²)`, each summed over D and averaged over locations.
pub fn code_losses(e: &Tensor, m: &Tensor) -> Result<(Tensor, Tensor)> {
    let per_loc = |a: &Tensor, b: &Tensor| -> Result<Tensor> { Ok(a.sub(b)?.sqr()?.sum(1)?.mean_all()?) };
    Ok((per_loc(&e.detach(), m)?, per_loc(e, &m.detach())?))
}

/// Map assigning the fake class everywhere.
pub fn fake_label_map(height: usize, width: usize, classes: usize) -> Result<LabelMap> {
    LabelMap::fake(height, width, classes)
}
