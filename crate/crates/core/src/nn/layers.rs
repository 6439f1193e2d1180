use candle_core::{Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops;
use super::store::ParamStore;
use crate::error::{CoreError, Result};

/// Normalization wrapped around a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    Instance,
    Spectral,
}

impl std::str::FromStr for Normalization {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "instance" => Ok(Self::Instance),
            "spectral" => Ok(Self::Spectral),
            other => Err(CoreError::Config(format!(
                "unknown normalization `{other}` (expected none, instance or spectral)"
            ))),
        }
    }
}

/// Spectral reparameterization `W / σ(W)` with σ estimated by power iteration
/// on a persistent `u` buffer.
#[derive(Clone)]
pub struct SpectralNorm {
    u: Var,
}

impl SpectralNorm {
    fn new(store: &mut ParamStore, name: &str, rows: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut u: Vec<f32> = (0..rows).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        normalize(&mut u);
        let u = store.buffer(name, Tensor::from_vec(u, rows, &Device::Cpu)?)?;
        Ok(Self { u })
    }

    /// One power-iteration step on the current weight; updates `u`.
    fn iterate(&self, w: &Tensor) -> Result<()> {
        let rows = w.dim(0)?;
        let wm: Vec<f32> = w.flatten_all()?.to_vec1()?;
        let cols = wm.len() / rows;
        let u: Vec<f32> = self.u.as_tensor().to_vec1()?;
        let mut v = vec![0f32; cols];
        for r in 0..rows {
            for c in 0..cols {
                v[c] += wm[r * cols + c] * u[r];
            }
        }
        normalize(&mut v);
        let mut nu = vec![0f32; rows];
        for r in 0..rows {
            nu[r] = (0..cols).map(|c| wm[r * cols + c] * v[c]).sum();
        }
        normalize(&mut nu);
        self.u.set(&Tensor::from_vec(nu, rows, &Device::Cpu)?)?;
        Ok(())
    }

    /// `W / (uᵀ W v)` with `v = normalize(Wᵀ u)` held constant.
    fn apply(&self, w: &Tensor) -> Result<Tensor> {
        let rows = w.dim(0)?;
        let wm = w.reshape((rows, ()))?;
        let u = self.u.as_tensor().detach().reshape((1, rows))?;
        let v = u.matmul(&wm.detach())?;
        let vn = (v.sqr()?.sum_all()?.sqrt()? + 1e-12)?;
        let v = v.broadcast_div(&vn)?;
        let sigma = u.matmul(&wm)?.matmul(&v.t()?)?.reshape(())?;
        Ok(w.broadcast_div(&sigma)?)
    }
}

fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= n);
}

#[derive(Clone)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub stride: usize,
    pub pad: usize,
    spectral: Option<SpectralNorm>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in = (cin * k * k) as f64;
        let weight = store.uniform(&format!("{name}.weight"), &[cout, cin, k, k], (3.0 / fan_in).sqrt(), rng)?;
        let bias = store.constant(&format!("{name}.bias"), &[cout], 0.0)?;
        Ok(Self {
            weight,
            bias: Some(bias),
            stride,
            pad,
            spectral: None,
        })
    }

    /// Same-padded convolution.
    pub fn same(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::new(store, name, cin, cout, k, 1, k / 2, rng)
    }

    pub fn with_spectral(mut self, store: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        let rows = self.weight.dim(0)?;
        self.spectral = Some(SpectralNorm::new(store, &format!("{name}.sn_u"), rows, rng)?);
        Ok(self)
    }

    pub fn is_spectral(&self) -> bool {
        self.spectral.is_some()
    }

    pub fn power_iterate(&self) -> Result<()> {
        match &self.spectral {
            Some(sn) => sn.iterate(self.weight.as_tensor()),
            None => Ok(()),
        }
    }

    pub fn effective_weight(&self) -> Result<Tensor> {
        match &self.spectral {
            Some(sn) => sn.apply(self.weight.as_tensor()),
            None => Ok(self.weight.as_tensor().clone()),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = ops::conv2d(x, &self.effective_weight()?, self.stride, self.pad)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Normalizes each spatial location across channels, with a learned per-channel
/// affine map.
#[derive(Clone)]
pub struct ChannelNorm {
    gamma: Var,
    beta: Var,
}

impl ChannelNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(&format!("{name}.gamma"), &[channels], 1.0)?,
            beta: store.constant(&format!("{name}.beta"), &[channels], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(1)?;
        let y = xc.broadcast_div(&(var + 1e-3)?.sqrt()?)?;
        let g = self.gamma.as_tensor().reshape((1, (), 1, 1))?;
        let b = self.beta.as_tensor().reshape((1, (), 1, 1))?;
        Ok(y.broadcast_mul(&g)?.broadcast_add(&b)?)
    }
}

/// Affine-free instance normalization over the spatial dims of each channel.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let flat = x.reshape((b, c, h * w))?;
    let mean = flat.mean_keepdim(2)?;
    let xc = flat.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(2)?;
    Ok(xc.broadcast_div(&(var + 1e-5)?.sqrt()?)?.reshape((b, c, h, w))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn spectral_norm_converges_to_unit_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", 4, 6, 3, 1, 1, &mut rng)
            .unwrap()
            .with_spectral(&mut store, "c", &mut rng)
            .unwrap();
        for _ in 0..50 {
            conv.power_iterate().unwrap();
        }
        let w = conv.effective_weight().unwrap().reshape((6, 36)).unwrap();
        // Largest singular value of the normalized matrix, by power iteration on WᵀW.
        let m: Vec<f32> = w.flatten_all().unwrap().to_vec1().unwrap();
        let mut v = vec![1f32; 36];
        let mut s = 0.0;
        for _ in 0..200 {
            let wv: Vec<f32> = (0..6).map(|r| (0..36).map(|c| m[r * 36 + c] * v[c]).sum()).collect();
            let mut nv: Vec<f32> = (0..36).map(|c| (0..6).map(|r| m[r * 36 + c] * wv[r]).sum()).collect();
            s = nv.iter().map(|x| x * x).sum::<f32>().sqrt().sqrt();
            normalize(&mut nv);
            v = nv;
        }
        assert!((s - 1.0).abs() < 1e-3, "sigma {s}");
    }

    #[test]
    fn channel_norm_output_is_standardized() {
        let mut store = ParamStore::new();
        let n = ChannelNorm::new(&mut store, "n", 8).unwrap();
        let x = Tensor::arange(0f32, 64.0, &Device::Cpu).unwrap().reshape((1, 8, 2, 4)).unwrap();
        let y = n.forward(&x).unwrap();
        let m: Vec<f32> = y.mean(1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-5));
    }
}
