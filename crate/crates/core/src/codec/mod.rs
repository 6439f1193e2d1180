//! Mean-scale hyperprior codec: analysis `f`, synthesis `h`, and the entropy
//! model `g` (hyper path, conditional Gaussians, logistic hyper prior).

mod tables;

use std::str::FromStr;
use std::sync::OnceLock;

use candle_core::{Device, Tensor, Var};
use illm_entropy::{
    build_cdf, parse_container, BitstreamContainer, CdfTable, CoderBackend, Density, FlatTables,
    ReferenceBackend, TableParams,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use tables::{LatentTables, ScaleGrid};

use crate::checkpoint::Checkpoint;
use crate::error::{shape_err, CoreError, Result};
use crate::image::{self, Image};
use crate::nn::{ops, ChannelNorm, Conv2d, ParamStore};

/// Spatial downsampling of the analysis transform.
pub const LATENT_STRIDE: usize = 16;
/// Downsampling of the hyper latent; images are padded to this multiple.
pub const PAD_MULTIPLE: usize = 64;

pub const ENCODER: &str = "encoder.";
pub const DECODER: &str = "decoder.";
pub const HYPER_ENCODER: &str = "hyper_encoder.";
pub const HYPER_DECODER: &str = "hyper_decoder.";
pub const HYPER_PRIOR: &str = "hyper_prior.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub latent_channels: usize,
    pub hyper_channels: usize,
    pub hidden_channels: usize,
    pub scale_floor: f64,
    pub likelihood_floor: f64,
    pub precision: u32,
    pub tail_mass: f64,
    pub scale_grid_size: usize,
    pub scale_grid_max: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            latent_channels: 64,
            hyper_channels: 32,
            hidden_channels: 64,
            scale_floor: 0.11,
            likelihood_floor: 2f64.powi(-50),
            precision: 16,
            tail_mass: 1e-6,
            scale_grid_size: 64,
            scale_grid_max: 256.0,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.to_string()));
        if self.latent_channels == 0 || self.hyper_channels == 0 || self.hidden_channels == 0 {
            return bad("channel counts must be positive");
        }
        if !(self.scale_floor > 0.0) || !(self.scale_grid_max > self.scale_floor) {
            return bad("need 0 < scale_floor < scale_grid_max");
        }
        if !(self.likelihood_floor > 0.0 && self.likelihood_floor < 1.0) {
            return bad("likelihood_floor must lie in (0, 1)");
        }
        if self.scale_grid_size < 2 {
            return bad("scale_grid_size must be at least 2");
        }
        self.table_params().validate()?;
        Ok(())
    }

    pub fn table_params(&self) -> TableParams {
        TableParams {
            precision: self.precision,
            tail_mass: self.tail_mass,
            scale_floor: self.scale_floor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    /// Round to the mean-offset integer grid.
    Round,
    /// Rounded forward, identity backward.
    Ste,
    /// Additive uniform noise on `[-0.5, 0.5)`.
    Noise,
}

impl FromStr for QuantMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "round" => Ok(Self::Round),
            "ste" => Ok(Self::Ste),
            "noise" => Ok(Self::Noise),
            other => Err(CoreError::Config(format!("unknown quantization mode `{other}`"))),
        }
    }
}

/// `round(v - μ) + μ`, ties to even, computed elementwise in f32.
pub fn round_offset(v: f32, mean: f32) -> f32 {
    (v - mean).round_ties_even() + mean
}

/// Quantizes `values` around `means`. `rng` is only drawn from in noise mode.
pub fn quantize(values: &Tensor, means: &Tensor, mode: QuantMode, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if values.dims() != means.dims() {
        return Err(shape_err!("quantize: values {:?} vs means {:?}", values.dims(), means.dims()));
    }
    match mode {
        QuantMode::Round | QuantMode::Ste => {
            let v: Vec<f32> = values.flatten_all()?.to_vec1()?;
            let m: Vec<f32> = means.flatten_all()?.to_vec1()?;
            let q: Vec<f32> = v.iter().zip(&m).map(|(a, b)| round_offset(*a, *b)).collect();
            let q = Tensor::from_vec(q, values.dims(), &Device::Cpu)?;
            if mode == QuantMode::Round {
                Ok(q)
            } else {
                ops::straight_through(values, &q)
            }
        }
        QuantMode::Noise => {
            let n = values.elem_count();
            let u: Vec<f32> = (0..n).map(|_| rng.random_range(-0.5f32..0.5)).collect();
            Ok(values.add(&Tensor::from_vec(u, values.dims(), &Device::Cpu)?)?)
        }
    }
}

/// Bits of each symbol under its unit-bin Gaussian: `-log2 P(q)` with
/// `P(q) = Φ((q-μ+½)/σ) - Φ((q-μ-½)/σ)`, floored at `likelihood_floor`.
pub fn likelihood_bits(q: &Tensor, means: &Tensor, scales: &Tensor, scale_floor: f64, likelihood_floor: f64) -> Result<Tensor> {
    if q.dims() != means.dims() || q.dims() != scales.dims() {
        return Err(shape_err!("likelihood_bits: {:?}, {:?}, {:?}", q.dims(), means.dims(), scales.dims()));
    }
    let min_scale = scales.flatten_all()?.min(0)?.to_scalar::<f32>()? as f64;
    if min_scale < scale_floor * (1.0 - 1e-6) {
        return Err(CoreError::Domain(format!("scale {min_scale} below floor {scale_floor}")));
    }
    let d = q.sub(means)?.abs()?;
    let upper = ops::normal_cdf(&(d.neg()? + 0.5)?.div(scales)?)?;
    let lower = ops::normal_cdf(&(d.neg()? - 0.5)?.div(scales)?)?;
    bits_from_mass(&upper.sub(&lower)?, likelihood_floor)
}

fn bits_from_mass(p: &Tensor, floor: f64) -> Result<Tensor> {
    Ok((p.maximum(floor)?.log()? * (-1.0 / std::f64::consts::LN_2))?)
}

/// Model outputs of one training forward pass.
pub struct TrainForward {
    /// Reconstruction, clamped to `[0, 1]` in the forward pass.
    pub x_hat: Tensor,
    /// Straight-through quantized latent fed to the decoder.
    pub y_hat: Tensor,
    pub latent_bits: Tensor,
    pub hyper_bits: Tensor,
    pub pixels: usize,
}

impl TrainForward {
    /// Scalar bits per pixel over the batch.
    pub fn bpp(&self) -> Result<Tensor> {
        let total = (self.latent_bits.sum_all()? + self.hyper_bits.sum_all()?)?;
        Ok((total / self.pixels as f64)?)
    }

    pub fn rate(&self) -> Result<RateEstimate> {
        let latent = self.latent_bits.sum_all()?.to_scalar::<f32>()? as f64;
        let hyper = self.hyper_bits.sum_all()?.to_scalar::<f32>()? as f64;
        Ok(RateEstimate::new(latent, hyper, self.pixels))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub latent_bits: f64,
    pub hyper_bits: f64,
    pub total_bits: f64,
    pub bpp: f64,
}

impl RateEstimate {
    pub fn new(latent_bits: f64, hyper_bits: f64, pixels: usize) -> Self {
        let total_bits = latent_bits + hyper_bits;
        Self {
            latent_bits,
            hyper_bits,
            total_bits,
            bpp: total_bits / pixels as f64,
        }
    }
}

/// Conditional Gaussian parameters and the hyper latent they were decoded from.
pub struct EntropyParams {
    pub means: Tensor,
    pub scales: Tensor,
    /// Quantized hyper latent as seen by the hyper decoder.
    pub z_hat: Tensor,
    /// Per-element bits of the hyper latent under the logistic prior.
    pub hyper_bits: Tensor,
}

struct Stage {
    conv: Conv2d,
    norm: Option<ChannelNorm>,
}

pub struct HyperpriorCodec {
    pub config: CodecConfig,
    pub store: ParamStore,
    encoder: Vec<Stage>,
    decoder_in: Stage,
    decoder_up: Vec<Stage>,
    decoder_out: Conv2d,
    hyper_encoder: Vec<Conv2d>,
    hyper_decoder: Vec<Conv2d>,
    prior_loc: Var,
    prior_scale: Var,
    latent_tables: OnceLock<LatentTables>,
}

impl HyperpriorCodec {
    pub fn new(config: CodecConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::nn::rng_for(seed, 0x0063_6f64_6563);
        let mut s = ParamStore::new();
        let (n, cy, cz) = (config.hidden_channels, config.latent_channels, config.hyper_channels);

        let mut encoder = Vec::new();
        for i in 0..4 {
            let cin = if i == 0 { 3 } else { n };
            let cout = if i == 3 { cy } else { n };
            let name = format!("{ENCODER}{i}");
            let conv = Conv2d::new(&mut s, &name, cin, cout, 5, 2, 2, &mut rng)?;
            let norm = if i < 3 { Some(ChannelNorm::new(&mut s, &format!("{name}.norm"), n)?) } else { None };
            encoder.push(Stage { conv, norm });
        }

        let decoder_in = Stage {
            conv: Conv2d::same(&mut s, &format!("{DECODER}in"), cy, n, 3, &mut rng)?,
            norm: Some(ChannelNorm::new(&mut s, &format!("{DECODER}in.norm"), n)?),
        };
        let mut decoder_up = Vec::new();
        for i in 0..3 {
            let name = format!("{DECODER}up{i}");
            decoder_up.push(Stage {
                conv: Conv2d::same(&mut s, &name, n, 4 * n, 3, &mut rng)?,
                norm: Some(ChannelNorm::new(&mut s, &format!("{name}.norm"), n)?),
            });
        }
        let decoder_out = Conv2d::same(&mut s, &format!("{DECODER}out"), n, 12, 3, &mut rng)?;

        let hyper_encoder = vec![
            Conv2d::same(&mut s, &format!("{HYPER_ENCODER}0"), cy, n, 3, &mut rng)?,
            Conv2d::new(&mut s, &format!("{HYPER_ENCODER}1"), n, n, 5, 2, 2, &mut rng)?,
            Conv2d::new(&mut s, &format!("{HYPER_ENCODER}2"), n, cz, 5, 2, 2, &mut rng)?,
        ];
        let hyper_decoder = vec![
            Conv2d::same(&mut s, &format!("{HYPER_DECODER}0"), cz, n, 3, &mut rng)?,
            Conv2d::same(&mut s, &format!("{HYPER_DECODER}1"), n, 4 * n, 3, &mut rng)?,
            Conv2d::same(&mut s, &format!("{HYPER_DECODER}2"), n, 4 * n, 3, &mut rng)?,
            Conv2d::same(&mut s, &format!("{HYPER_DECODER}3"), n, 2 * cy, 3, &mut rng)?,
        ];
        let prior_loc = s.constant(&format!("{HYPER_PRIOR}loc"), &[cz], 0.0)?;
        // softplus(x) = 1 - floor, so the initial prior scale is 1.
        let init = ((1.0 - config.scale_floor).exp() - 1.0).ln() as f32;
        let prior_scale = s.constant(&format!("{HYPER_PRIOR}scale"), &[cz], init)?;

        Ok(Self {
            config,
            store: s,
            encoder,
            decoder_in,
            decoder_up,
            decoder_out,
            hyper_encoder,
            hyper_decoder,
            prior_loc,
            prior_scale,
            latent_tables: OnceLock::new(),
        })
    }

    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.set_section("codec_config", &self.config)?;
        ckpt.put_group("codec", self.store.export()?);
        Ok(())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let codec = Self::new(ckpt.section("codec_config")?, 0)?;
        codec.store.import(&ckpt.group("codec"))?;
        Ok(codec)
    }

    /// First 8 bytes of the parameter fingerprint, little endian.
    pub fn model_id(&self) -> Result<u64> {
        let fp = self.store.fingerprint()?;
        Ok(u64::from_le_bytes(fp[..8].try_into().unwrap()))
    }

    /// Analysis transform `f`: (B, 3, H, W) in `[0, 1]` to (B, C_y, H/16, W/16).
    pub fn analyze(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || h % PAD_MULTIPLE != 0 || w % PAD_MULTIPLE != 0 {
            return Err(shape_err!("analyze expects 3 channels padded to a multiple of {PAD_MULTIPLE}, got {c}x{h}x{w}"));
        }
        let flat = x.flatten_all()?;
        let (lo, hi) = (flat.min(0)?.to_scalar::<f32>()?, flat.max(0)?.to_scalar::<f32>()?);
        if !(lo >= 0.0 && hi <= 1.0) {
            return Err(CoreError::Domain(format!("image values span [{lo}, {hi}], outside [0, 1]")));
        }
        let mut t = x.clone();
        for st in &self.encoder {
            t = st.conv.forward(&t)?;
            if let Some(n) = &st.norm {
                t = n.forward(&t)?.relu()?;
            }
        }
        Ok(t)
    }

    fn synthesize_raw(&self, y: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = y.dims4()?;
        if c != self.config.latent_channels {
            return Err(shape_err!("latent has {c} channels, codec expects {}", self.config.latent_channels));
        }
        let mut t = self.decoder_in.conv.forward(y)?;
        t = self.decoder_in.norm.as_ref().unwrap().forward(&t)?.relu()?;
        for st in &self.decoder_up {
            t = ops::pixel_shuffle(&st.conv.forward(&t)?, 2)?;
            t = st.norm.as_ref().unwrap().forward(&t)?.relu()?;
        }
        let t = ops::pixel_shuffle(&self.decoder_out.forward(&t)?, 2)?;
        Ok((t + 0.5)?)
    }

    /// Synthesis transform `h`: latent to image, clamped to `[0, 1]`.
    pub fn synthesize(&self, y_hat: &Tensor) -> Result<Tensor> {
        Ok(self.synthesize_raw(y_hat)?.clamp(0f32, 1f32)?)
    }

    /// As [`synthesize`](Self::synthesize) but the clamp passes gradients through.
    pub fn synthesize_train(&self, y_hat: &Tensor) -> Result<Tensor> {
        let raw = self.synthesize_raw(y_hat)?;
        ops::straight_through(&raw, &raw.clamp(0f32, 1f32)?)
    }

    fn hyper_analyze(&self, y: &Tensor) -> Result<Tensor> {
        let h = &self.hyper_encoder;
        let t = h[0].forward(y)?.relu()?;
        let t = h[1].forward(&t)?.relu()?;
        h[2].forward(&t)
    }

    /// Means and scales (floored) of the latent conditionals given `z_hat`.
    pub fn hyper_synthesize(&self, z_hat: &Tensor) -> Result<(Tensor, Tensor)> {
        let h = &self.hyper_decoder;
        let t = h[0].forward(z_hat)?.relu()?;
        let t = ops::pixel_shuffle(&h[1].forward(&t)?, 2)?.relu()?;
        let t = ops::pixel_shuffle(&h[2].forward(&t)?, 2)?.relu()?;
        let t = h[3].forward(&t)?;
        let cy = self.config.latent_channels;
        let means = t.narrow(1, 0, cy)?;
        let scales = (ops::softplus(&t.narrow(1, cy, cy)?)? + self.config.scale_floor)?;
        Ok((means, scales))
    }

    /// Location and scale of the per-channel logistic hyper prior.
    pub fn prior_params(&self) -> Result<(Tensor, Tensor)> {
        let loc = self.prior_loc.as_tensor().clone();
        let scale = (ops::softplus(self.prior_scale.as_tensor())? + self.config.scale_floor)?;
        Ok((loc, scale))
    }

    /// Per-element bits of `z` under the hyper prior.
    pub fn hyper_bits(&self, z: &Tensor) -> Result<Tensor> {
        let (loc, scale) = self.prior_params()?;
        let loc = loc.reshape((1, (), 1, 1))?;
        let scale = scale.reshape((1, (), 1, 1))?;
        let d = z.broadcast_sub(&loc)?.abs()?;
        let upper = ops::logistic_cdf(&(d.neg()? + 0.5)?.broadcast_div(&scale)?)?;
        let lower = ops::logistic_cdf(&(d.neg()? - 0.5)?.broadcast_div(&scale)?)?;
        bits_from_mass(&upper.sub(&lower)?, self.config.likelihood_floor)
    }

    /// Hyper path from the unquantized latent. In noise mode the hyper bits use
    /// the noisy `z` while the hyper decoder sees the straight-through rounded one.
    pub fn entropy_params(&self, y: &Tensor, mode: QuantMode, rng: &mut ChaCha8Rng) -> Result<EntropyParams> {
        let z = self.hyper_analyze(y)?;
        let zeros = z.zeros_like()?;
        let (z_rate, z_hat) = match mode {
            QuantMode::Noise => (quantize(&z, &zeros, QuantMode::Noise, rng)?, quantize(&z, &zeros, QuantMode::Ste, rng)?),
            m => {
                let q = quantize(&z, &zeros, m, rng)?;
                (q.clone(), q)
            }
        };
        let hyper_bits = self.hyper_bits(&z_rate)?;
        let (means, scales) = self.hyper_synthesize(&z_hat)?;
        Ok(EntropyParams {
            means,
            scales,
            z_hat,
            hyper_bits,
        })
    }

    pub fn likelihood_bits(&self, q: &Tensor, means: &Tensor, scales: &Tensor) -> Result<Tensor> {
        likelihood_bits(q, means, scales, self.config.scale_floor, self.config.likelihood_floor)
    }

    /// Training forward pass on a padded batch: the rate uses noisy latents, the
    /// decoder sees straight-through rounded ones.
    pub fn forward_train(&self, x: &Tensor, rng: &mut ChaCha8Rng) -> Result<TrainForward> {
        let (b, _, h, w) = x.dims4()?;
        let y = self.analyze(x)?;
        let ep = self.entropy_params(&y, QuantMode::Noise, rng)?;
        let y_noisy = quantize(&y, &ep.means, QuantMode::Noise, rng)?;
        let latent_bits = self.likelihood_bits(&y_noisy, &ep.means, &ep.scales)?;
        let y_hat = quantize(&y, &ep.means, QuantMode::Ste, rng)?;
        let x_hat = self.synthesize_train(&y_hat)?;
        Ok(TrainForward {
            x_hat,
            y_hat,
            latent_bits,
            hyper_bits: ep.hyper_bits,
            pixels: b * h * w,
        })
    }

    /// Deterministic test-time reconstruction of a padded batch, plus the
    /// quantized latent and its entropy parameters.
    pub fn forward_eval(&self, x: &Tensor) -> Result<(Tensor, Tensor, EntropyParams)> {
        let mut rng = crate::nn::rng_for(0, 0);
        let y = self.analyze(x)?;
        let ep = self.entropy_params(&y, QuantMode::Round, &mut rng)?;
        let y_hat = quantize(&y, &ep.means, QuantMode::Round, &mut rng)?;
        Ok((self.synthesize(&y_hat)?, y_hat, ep))
    }

    /// The reconstruction `decompress(compress(image))` must reproduce.
    pub fn reconstruct(&self, image: &Image) -> Result<Image> {
        let padded = image.pad_reflect(PAD_MULTIPLE);
        let (x_hat, _, _) = self.forward_eval(&image::to_tensor(&[padded])?)?;
        let out = image::from_tensor(&x_hat)?.remove(0);
        out.crop(0, 0, image.width(), image.height())
    }

    /// Model rate of `image` on the rounded path, split by stream.
    pub fn estimate_rate(&self, image: &Image) -> Result<RateEstimate> {
        let padded = image.pad_reflect(PAD_MULTIPLE);
        let (_, y_hat, ep) = self.forward_eval(&image::to_tensor(&[padded])?)?;
        let latent = self.likelihood_bits(&y_hat, &ep.means, &ep.scales)?.sum_all()?.to_scalar::<f32>()?;
        let hyper = ep.hyper_bits.sum_all()?.to_scalar::<f32>()?;
        Ok(RateEstimate::new(latent as f64, hyper as f64, image.width() * image.height()))
    }

    pub fn latent_tables(&self) -> Result<&LatentTables> {
        if let Some(t) = self.latent_tables.get() {
            return Ok(t);
        }
        let c = &self.config;
        let grid = ScaleGrid::new(c.scale_floor, c.scale_grid_max, c.scale_grid_size);
        let t = LatentTables::new(grid, &c.table_params())?;
        Ok(self.latent_tables.get_or_init(|| t))
    }

    /// One logistic table per hyper channel, from the current prior parameters.
    pub fn hyper_tables(&self) -> Result<Vec<CdfTable>> {
        let (loc, scale) = self.prior_params()?;
        let loc: Vec<f32> = loc.to_vec1()?;
        let scale: Vec<f32> = scale.to_vec1()?;
        let params = self.config.table_params();
        loc.iter()
            .zip(&scale)
            .map(|(&l, &s)| {
                let scale = (s as f64).max(self.config.scale_floor);
                Ok(build_cdf(Density::Logistic { loc: l as f64, scale }, &params)?)
            })
            .collect()
    }

    pub fn compress(&self, image: &Image) -> Result<BitstreamContainer> {
        self.compress_with(image, &ReferenceBackend)
    }

    /// Codes `image` into a container holding the hyper stream then the latent stream.
    pub fn compress_with(&self, image: &Image, backend: &dyn CoderBackend) -> Result<BitstreamContainer> {
        let padded = image.pad_reflect(PAD_MULTIPLE);
        let x = image::to_tensor(&[padded])?;
        let mut rng = crate::nn::rng_for(0, 0);
        let y = self.analyze(&x)?;
        let z = self.hyper_analyze(&y)?;
        let z_hat = quantize(&z, &z.zeros_like()?, QuantMode::Round, &mut rng)?;
        let (_, cz, zh, zw) = z_hat.dims4()?;
        let z_sym: Vec<i32> = z_hat.flatten_all()?.to_vec1::<f32>()?.iter().map(|v| *v as i32).collect();
        let z_idx: Vec<u32> = (0..cz).flat_map(|c| std::iter::repeat_n(c as u32, zh * zw)).collect();
        let hyper_flat = FlatTables::from_tables(&self.hyper_tables()?)?;
        let hyper_stream = backend.encode(&z_sym, &z_idx, &hyper_flat)?;

        let (means, scales) = self.hyper_synthesize(&z_hat)?;
        let yv: Vec<f32> = y.flatten_all()?.to_vec1()?;
        let mv: Vec<f32> = means.flatten_all()?.to_vec1()?;
        let sym: Vec<i32> = yv.iter().zip(&mv).map(|(a, m)| (a - m).round_ties_even() as i32).collect();
        let tables = self.latent_tables()?;
        let idx = self.scale_indexes(&scales, tables)?;
        let latent_stream = backend.encode(&sym, &idx, &tables.flat)?;

        Ok(BitstreamContainer::new(
            vec![hyper_stream, latent_stream],
            image.width() as u32,
            image.height() as u32,
            self.model_id()?,
        )?)
    }

    fn scale_indexes(&self, scales: &Tensor, tables: &LatentTables) -> Result<Vec<u32>> {
        Ok(scales.flatten_all()?.to_vec1::<f32>()?.iter().map(|s| tables.grid.index(*s)).collect())
    }

    pub fn compress_bytes(&self, image: &Image) -> Result<Vec<u8>> {
        Ok(self.compress(image)?.to_bytes())
    }

    pub fn decompress_bytes(&self, bytes: &[u8]) -> Result<Image> {
        self.decompress(&parse_container(bytes)?)
    }

    pub fn decompress(&self, c: &BitstreamContainer) -> Result<Image> {
        self.decompress_with(c, &ReferenceBackend)
    }

    pub fn decompress_with(&self, c: &BitstreamContainer, backend: &dyn CoderBackend) -> Result<Image> {
        let expected = self.model_id()?;
        if c.model_id != expected {
            return Err(CoreError::ModelMismatch { expected, found: c.model_id });
        }
        if c.streams.len() != 2 {
            return Err(CoreError::Domain(format!("container holds {} streams, expected 2", c.streams.len())));
        }
        let (w, h) = (c.orig_width as usize, c.orig_height as usize);
        let (pw, ph) = (w.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE, h.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE);
        let cfg = &self.config;
        let (zh, zw) = (ph / PAD_MULTIPLE, pw / PAD_MULTIPLE);
        let z_idx: Vec<u32> = (0..cfg.hyper_channels).flat_map(|c| std::iter::repeat_n(c as u32, zh * zw)).collect();
        let hyper_flat = FlatTables::from_tables(&self.hyper_tables()?)?;
        let z_sym = backend.decode(&c.streams[0], &z_idx, &hyper_flat)?;
        let z_hat = Tensor::from_vec(
            z_sym.iter().map(|v| *v as f32).collect::<Vec<_>>(),
            (1, cfg.hyper_channels, zh, zw),
            &Device::Cpu,
        )?;
        let (means, scales) = self.hyper_synthesize(&z_hat)?;
        let tables = self.latent_tables()?;
        let idx = self.scale_indexes(&scales, tables)?;
        let sym = backend.decode(&c.streams[1], &idx, &tables.flat)?;
        let mv: Vec<f32> = means.flatten_all()?.to_vec1()?;
        let y_hat: Vec<f32> = sym.iter().zip(&mv).map(|(s, m)| *s as f32 + m).collect();
        let y_hat = Tensor::from_vec(y_hat, means.dims(), &Device::Cpu)?;
        let x_hat = self.synthesize(&y_hat)?;
        image::from_tensor(&x_hat)?.remove(0).crop(0, 0, w, h)
    }
}
