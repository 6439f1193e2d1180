//! ILLM U-Net discriminator with per-location (C+1)-class logits, and the binary
//! PatchGAN baseline.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{shape_err, CoreError, Result};
use crate::nn::{instance_norm, ops, Conv2d, Normalization, ParamStore};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorKind {
    IllmUnet,
    Patchgan,
}

impl std::str::FromStr for DiscriminatorKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "illm_unet" => Ok(Self::IllmUnet),
            "patchgan" => Ok(Self::Patchgan),
            other => Err(CoreError::Config(format!("unknown discriminator kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub kind: DiscriminatorKind,
    pub normalization: Normalization,
    pub base_channels: usize,
    /// Label count `C` of the ILLM head.
    pub classes: usize,
    /// Latent channels concatenated to the PatchGAN input; 0 disables conditioning.
    pub conditioning_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            kind: DiscriminatorKind::IllmUnet,
            normalization: Normalization::None,
            base_channels: 64,
            classes: 1024,
            conditioning_channels: 0,
        }
    }
}

/// Convolution followed by the configured normalization.
#[derive(Clone)]
struct NConv {
    conv: Conv2d,
    instance: bool,
}

impl NConv {
    #[allow(clippy::too_many_arguments)]
    fn new(
        s: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        norm: Normalization,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Self> {
        let mut conv = Conv2d::new(s, name, cin, cout, k, stride, pad, rng)?;
        if norm == Normalization::Spectral {
            conv = conv.with_spectral(s, name, rng)?;
        }
        Ok(Self {
            conv,
            instance: norm == Normalization::Instance,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv.forward(x)?;
        if self.instance {
            instance_norm(&y)
        } else {
            Ok(y)
        }
    }
}

struct ResBlock {
    a: NConv,
    b: NConv,
    skip: Option<Conv2d>,
}

impl ResBlock {
    fn new(s: &mut ParamStore, name: &str, cin: usize, cout: usize, norm: Normalization, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Self> {
        let a = NConv::new(s, &format!("{name}.a"), cin, cout, 3, 1, 1, norm, rng)?;
        let b = NConv::new(s, &format!("{name}.b"), cout, cout, 3, 1, 1, norm, rng)?;
        let skip = if cin != cout {
            let mut c = Conv2d::new(s, &format!("{name}.skip"), cin, cout, 1, 1, 0, rng)?;
            if norm == Normalization::Spectral {
                c = c.with_spectral(s, &format!("{name}.skip"), rng)?;
            }
            Some(c)
        } else {
            None
        };
        Ok(Self { a, b, skip })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = ops::leaky_relu(&self.a.forward(x)?, LEAKY_SLOPE)?;
        let h = self.b.forward(&h)?;
        let s = match &self.skip {
            Some(c) => c.forward(x)?,
            None => x.clone(),
        };
        ops::leaky_relu(&(h + s)?, LEAKY_SLOPE)
    }

    fn convs(&self) -> Vec<&Conv2d> {
        let mut v = vec![&self.a.conv, &self.b.conv];
        v.extend(self.skip.as_ref());
        v
    }
}

struct Unet {
    stem: NConv,
    down: Vec<ResBlock>,
    bottom: ResBlock,
    up: ResBlock,
    head: Conv2d,
}

impl Unet {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut t = ops::leaky_relu(&self.stem.forward(x)?, LEAKY_SLOPE)?;
        for (i, blk) in self.down.iter().enumerate() {
            if i > 0 {
                t = ops::avg_pool2(&t)?;
            }
            t = blk.forward(&t)?;
        }
        let skip = t.clone();
        let (_, _, h, w) = t.dims4()?;
        // Ceil-mode pooling for odd sizes: zero-pad, pool, upsample, crop back.
        let padded = t.pad_with_zeros(2, 0, h % 2)?.pad_with_zeros(3, 0, w % 2)?;
        let b = self.bottom.forward(&ops::avg_pool2(&padded)?)?;
        let up = ops::upsample_nearest(&b, 2)?.narrow(2, 0, h)?.narrow(3, 0, w)?;
        let t = self.up.forward(&Tensor::cat(&[&skip, &up], 1)?)?;
        self.head.forward(&t)
    }

    fn convs(&self) -> Vec<&Conv2d> {
        let mut v = vec![&self.stem.conv];
        for b in &self.down {
            v.extend(b.convs());
        }
        v.extend(self.bottom.convs());
        v.extend(self.up.convs());
        v.push(&self.head);
        v
    }

    fn instance_layers(&self) -> usize {
        let mut n = usize::from(self.stem.instance);
        for b in self.down.iter().chain([&self.bottom, &self.up]) {
            n += usize::from(b.a.instance) + usize::from(b.b.instance);
        }
        n
    }
}

struct PatchGan {
    layers: Vec<NConv>,
    head: Conv2d,
}

enum Net {
    Unet(Unet),
    Patch(PatchGan),
}

pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub store: ParamStore,
    net: Net,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.base_channels == 0 || config.classes == 0 {
            return Err(CoreError::Config("discriminator base_channels and classes must be positive".into()));
        }
        let mut rng = crate::nn::rng_for(seed, 0x6469_7363);
        let mut s = ParamStore::new();
        let norm = config.normalization;
        let b = config.base_channels;
        let net = match config.kind {
            DiscriminatorKind::IllmUnet => {
                let widths = [b, 2 * b, 4 * b, 4 * b];
                let stem = NConv::new(&mut s, "disc.stem", 3, b, 3, 1, 1, norm, &mut rng)?;
                let mut down = Vec::new();
                let mut cin = b;
                for (i, &w) in widths.iter().enumerate() {
                    down.push(ResBlock::new(&mut s, &format!("disc.down{i}"), cin, w, norm, &mut rng)?);
                    cin = w;
                }
                let bottom = ResBlock::new(&mut s, "disc.bottom", cin, cin, norm, &mut rng)?;
                let up = ResBlock::new(&mut s, "disc.up", 2 * cin, cin, norm, &mut rng)?;
                let mut head = Conv2d::new(&mut s, "disc.head", cin, config.classes + 1, 1, 1, 0, &mut rng)?;
                if norm == Normalization::Spectral {
                    head = head.with_spectral(&mut s, "disc.head", &mut rng)?;
                }
                Net::Unet(Unet { stem, down, bottom, up, head })
            }
            DiscriminatorKind::Patchgan => {
                let mut layers = Vec::new();
                let mut cin = 3 + config.conditioning_channels;
                for (i, w) in [b, 2 * b, 4 * b, 8 * b].into_iter().enumerate() {
                    // The first layer is never normalized, as in pix2pix.
                    let n = if i == 0 && norm == Normalization::Instance { Normalization::None } else { norm };
                    layers.push(NConv::new(&mut s, &format!("disc.patch{i}"), cin, w, 4, 2, 1, n, &mut rng)?);
                    cin = w;
                }
                let mut head = Conv2d::new(&mut s, "disc.head", cin, 1, 3, 1, 1, &mut rng)?;
                if norm == Normalization::Spectral {
                    head = head.with_spectral(&mut s, "disc.head", &mut rng)?;
                }
                Net::Patch(PatchGan { layers, head })
            }
        };
        Ok(Self { config, store: s, net })
    }

    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.set_section("discriminator_config", &self.config)?;
        ckpt.put_group("discriminator", self.store.export()?);
        Ok(())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let d = Self::new(ckpt.section("discriminator_config")?, 0)?;
        d.store.import(&ckpt.group("discriminator"))?;
        Ok(d)
    }

    /// Logits for a (B, 3, H, W) batch: (B, C+1, H/8, W/8) for the U-Net, a
    /// (B, 1, H/16, W/16) patch map for PatchGAN. `cond` is the PatchGAN latent.
    pub fn forward(&self, x: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || h % 8 != 0 || w % 8 != 0 {
            return Err(shape_err!("discriminator expects 3 channels with dims divisible by 8, got {c}x{h}x{w}"));
        }
        match &self.net {
            Net::Unet(u) => u.forward(x),
            Net::Patch(p) => {
                let mut t = match (cond, self.config.conditioning_channels) {
                    (None, 0) => x.clone(),
                    (Some(y), n) if n > 0 => {
                        let (_, cy, yh, _) = y.dims4()?;
                        if cy != n || h % yh != 0 {
                            return Err(shape_err!("conditioning latent {:?} does not align with {h}x{w}", y.dims()));
                        }
                        let up = ops::upsample_nearest(y, h / yh)?;
                        Tensor::cat(&[x, &up], 1)?
                    }
                    (None, _) => return Err(shape_err!("conditioned PatchGAN needs a latent")),
                    (Some(_), _) => return Err(shape_err!("unconditional PatchGAN given a latent")),
                };
                for l in &p.layers {
                    t = ops::leaky_relu(&l.forward(&t)?, LEAKY_SLOPE)?;
                }
                p.head.forward(&t)
            }
        }
    }

    fn convs(&self) -> Vec<&Conv2d> {
        match &self.net {
            Net::Unet(u) => u.convs(),
            Net::Patch(p) => {
                let mut v: Vec<&Conv2d> = p.layers.iter().map(|l| &l.conv).collect();
                v.push(&p.head);
                v
            }
        }
    }

    /// One power-iteration step on every spectrally normalized weight.
    pub fn power_iterate(&self) -> Result<()> {
        self.convs().into_iter().try_for_each(|c| c.power_iterate())
    }

    /// Number of instance-normalization layers and spectrally normalized convs.
    pub fn normalization_layers(&self) -> (usize, usize) {
        let spectral = self.convs().iter().filter(|c| c.is_spectral()).count();
        let instance = match &self.net {
            Net::Unet(u) => u.instance_layers(),
            Net::Patch(p) => p.layers.iter().filter(|l| l.instance).count(),
        };
        (instance, spectral)
    }

    pub fn output_channels(&self) -> usize {
        match self.config.kind {
            DiscriminatorKind::IllmUnet => self.config.classes + 1,
            DiscriminatorKind::Patchgan => 1,
        }
    }
}

/// Builds a discriminator from its config.
pub fn make_discriminator(config: DiscriminatorConfig, seed: u64) -> Result<Discriminator> {
    Discriminator::new(config, seed)
}
