//! Training objectives: distortion, the rate-distortion-adversarial Lagrangian,
//! binary non-saturating GAN losses and the multi-class ILLM losses.

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::labeler::LabelMap;
use crate::nn::{ops, Conv2d, ParamStore};

/// `-ln(1e-12)`: largest value any single log-likelihood term may contribute.
pub const MAX_NLL: f64 = 27.631_021_115_928_547;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub rate: f64,
    pub distortion: f64,
    pub adversarial: f64,
    pub mse: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rate: 1.0,
            distortion: 1.0,
            adversarial: 0.0,
            mse: 150.0,
        }
    }
}

/// Frozen feature network for the perceptual term.
pub trait PerceptualExtractor: Send + Sync {
    fn id(&self) -> &str;
    /// Feature maps of a (B, 3, H, W) batch in `[0, 1]`, one per declared layer.
    fn layers(&self, x: &Tensor) -> Result<Vec<Tensor>>;
}

/// Conv stack with fixed random weights drawn from a seed.
pub struct RandomConvNet {
    id: String,
    convs: Vec<Conv2d>,
}

impl RandomConvNet {
    /// `spec` lists `(out_channels, stride)` per layer; 3×3 kernels throughout.
    pub fn new(id: &str, seed: u64, spec: &[(usize, usize)]) -> Result<Self> {
        let mut rng = crate::nn::rng_for(seed, 0x6665_6174);
        let mut store = ParamStore::new();
        let mut cin = 3;
        let mut convs = Vec::with_capacity(spec.len());
        for (i, &(cout, stride)) in spec.iter().enumerate() {
            let mut c = Conv2d::new(&mut store, &format!("l{i}"), cin, cout, 3, stride, 1, &mut rng)?;
            // Detached copies so no optimizer or gradient ever touches them.
            c.weight = candle_core::Var::from_tensor(&c.weight.as_tensor().detach())?;
            c.bias = None;
            convs.push(c);
            cin = cout;
        }
        Ok(Self { id: id.to_string(), convs })
    }

    /// Five-layer default used by the distortion term.
    pub fn perceptual_default() -> Result<Self> {
        Self::new("random-conv5", 0x11A5_0000, &[(16, 1), (32, 2), (32, 1), (64, 2), (64, 1)])
    }
}

impl PerceptualExtractor for RandomConvNet {
    fn id(&self) -> &str {
        &self.id
    }

    fn layers(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut t = ((x * 2.0)? - 1.0)?;
        let mut out = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            let w = c.weight.as_tensor().detach();
            t = ops::leaky_relu(&ops::conv2d(&t, &w, c.stride, c.pad)?, 0.2)?;
            out.push(t.clone());
        }
        Ok(out)
    }
}

fn unit_normalize_channels(f: &Tensor) -> Result<Tensor> {
    let n = (f.sqr()?.sum_keepdim(1)? + 1e-10)?.sqrt()?;
    Ok(f.broadcast_div(&n)?)
}

/// LPIPS-style distance per image: channel-normalized features, squared
/// difference summed over channels, averaged over locations and layers.
/// Returns a (B,) tensor.
pub fn perceptual_distance(x_hat: &Tensor, x: &Tensor, extractor: &dyn PerceptualExtractor) -> Result<Tensor> {
    let a = extractor.layers(x_hat)?;
    let b = extractor.layers(x)?;
    let mut total: Option<Tensor> = None;
    for (fa, fb) in a.iter().zip(&b) {
        let d = unit_normalize_channels(fa)?.sub(&unit_normalize_channels(fb)?)?.sqr()?.sum(1)?;
        let per_image = d.flatten_from(1)?.mean(1)?;
        total = Some(match total {
            Some(t) => (t + per_image)?,
            None => per_image,
        });
    }
    let n = a.len().max(1) as f64;
    match total {
        Some(t) => Ok((t / n)?),
        None => Ok(Tensor::zeros(x.dim(0)?, candle_core::DType::F32, &Device::Cpu)?),
    }
}

/// `λ_MSE · MSE(x̂, x) + perceptual(x̂, x)`, as a scalar over the batch.
pub fn distortion(x_hat: &Tensor, x: &Tensor, lambda_mse: f64, extractor: Option<&dyn PerceptualExtractor>) -> Result<Tensor> {
    if x_hat.dims() != x.dims() {
        return Err(shape_err!("distortion: {:?} vs {:?}", x_hat.dims(), x.dims()));
    }
    let mse = x_hat.sub(x)?.sqr()?.mean_all()?;
    let mut d = (mse * lambda_mse)?;
    if let Some(e) = extractor {
        d = (d + perceptual_distance(x_hat, x, e)?.mean_all()?)?;
    }
    Ok(d)
}

/// `min(-ln σ(v), MAX_NLL)` elementwise.
fn nll_sigmoid(v: &Tensor) -> Result<Tensor> {
    Ok(ops::softplus(&v.neg()?)?.minimum(MAX_NLL)?)
}

/// Non-saturating binary losses `(L_D, L_G)` from discriminator logits.
pub fn binary_gan_losses(d_real: &Tensor, d_fake: &Tensor) -> Result<(Tensor, Tensor)> {
    let l_real = nll_sigmoid(d_real)?.mean_all()?;
    let l_fake = nll_sigmoid(&d_fake.neg()?)?.mean_all()?;
    let l_g = nll_sigmoid(d_fake)?.mean_all()?;
    Ok(((l_real + l_fake)?, l_g))
}

fn class_nll(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let logp = ops::log_softmax_channels(logits)?;
    let picked = logp.gather(targets, 1)?;
    Ok(picked.neg()?.minimum(MAX_NLL)?.mean_all()?)
}

fn check_labels(logits: &Tensor, labels: &[LabelMap]) -> Result<Tensor> {
    let (b, c, h, w) = logits.dims4()?;
    if labels.len() != b {
        return Err(shape_err!("{} label maps for a batch of {b}", labels.len()));
    }
    for l in labels {
        if l.classes() + 1 != c || l.height() != h || l.width() != w {
            return Err(shape_err!(
                "label map {}x{}x{} vs logits {c}x{h}x{w}",
                l.classes() + 1,
                l.height(),
                l.width()
            ));
        }
    }
    LabelMap::batch_indices(labels)
}

/// Discriminator loss: real logits against `u(x)`, fake logits against the fake
/// class, each averaged over locations.
pub fn illm_disc_loss(logits_real: &Tensor, logits_fake: &Tensor, labels: &[LabelMap]) -> Result<Tensor> {
    if logits_real.dims() != logits_fake.dims() {
        return Err(shape_err!("real {:?} vs fake {:?}", logits_real.dims(), logits_fake.dims()));
    }
    let targets = check_labels(logits_real, labels)?;
    let fake_targets = targets.zeros_like()?;
    Ok((class_nll(logits_real, &targets)? + class_nll(logits_fake, &fake_targets)?)?)
}

/// Generator loss: fake logits against the labels of the corresponding real image.
pub fn illm_gen_loss(logits_fake: &Tensor, labels: &[LabelMap]) -> Result<Tensor> {
    let targets = check_labels(logits_fake, labels)?;
    class_nll(logits_fake, &targets)
}

/// `λ_r · bpp + λ_ρ · distortion + λ_d · adversarial`.
pub fn total_objective(bpp: &Tensor, dist: &Tensor, gen_adv: &Tensor, w: &LossWeights) -> Result<Tensor> {
    Ok(((bpp * w.rate)? + (dist * w.distortion)?)?.add(&(gen_adv * w.adversarial)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(t: &Tensor) -> f32 {
        t.to_scalar::<f32>().unwrap()
    }

    #[test]
    fn binary_losses_at_zero_and_extremes() {
        let z = Tensor::zeros((2, 1, 3, 3), candle_core::DType::F32, &Device::Cpu).unwrap();
        let (ld, lg) = binary_gan_losses(&z, &z).unwrap();
        assert!((scalar(&ld) - 2.0 * std::f32::consts::LN_2).abs() < 1e-6);
        assert!((scalar(&lg) - std::f32::consts::LN_2).abs() < 1e-6);
        let big = (z.ones_like().unwrap() * 100.0).unwrap();
        let (ld, _) = binary_gan_losses(&big, &big.neg().unwrap()).unwrap();
        assert!(scalar(&ld) < 1e-6);
        let (_, lg) = binary_gan_losses(&z, &big).unwrap();
        assert!(scalar(&lg) < 1e-6);
        let (_, lg) = binary_gan_losses(&z, &(big.neg().unwrap() * 10.0).unwrap()).unwrap();
        assert!((scalar(&lg) as f64 - MAX_NLL).abs() < 1e-4);
    }

    #[test]
    fn distortion_arithmetic() {
        let x = Tensor::full(0.4f32, (1, 3, 8, 8), &Device::Cpu).unwrap();
        let y = (&x + 0.1).unwrap();
        assert!((scalar(&distortion(&y, &x, 150.0, None).unwrap()) - 1.5).abs() < 1e-4);
        assert_eq!(scalar(&distortion(&x, &x, 150.0, None).unwrap()), 0.0);
        let net = RandomConvNet::perceptual_default().unwrap();
        assert!(scalar(&distortion(&x, &x, 150.0, Some(&net)).unwrap()).abs() < 1e-6);
        assert!(scalar(&distortion(&y, &x, 0.0, Some(&net)).unwrap()) >= 0.0);
    }

    #[test]
    fn total_objective_arithmetic() {
        let t = |v: f32| Tensor::new(v, &Device::Cpu).unwrap();
        let w = LossWeights { rate: 1.0, distortion: 1.0, adversarial: 1.0, mse: 150.0 };
        assert!((scalar(&total_objective(&t(0.1), &t(0.5), &t(0.7), &w).unwrap()) - 1.3).abs() < 1e-6);
    }
}
