use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

/// Named trainable parameters plus non-trainable buffers, in a stable order.
#[derive(Default, Clone)]
pub struct ParamStore {
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
}

/// Host copy of a tensor used for serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct HostTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl HostTensor {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Ok(Self {
            shape: t.dims().to_vec(),
            data: t.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?,
        })
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.data.clone(), self.shape.as_slice(), &Device::Cpu)?)
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(map: &mut BTreeMap<String, Var>, name: &str, t: Tensor) -> Result<Var> {
        if map.contains_key(name) {
            return Err(CoreError::Config(format!("duplicate parameter `{name}`")));
        }
        let v = Var::from_tensor(&t)?;
        map.insert(name.to_string(), v.clone());
        Ok(v)
    }

    pub fn param(&mut self, name: &str, t: Tensor) -> Result<Var> {
        Self::insert(&mut self.params, name, t)
    }

    pub fn buffer(&mut self, name: &str, t: Tensor) -> Result<Var> {
        Self::insert(&mut self.buffers, name, t)
    }

    /// Uniform initialization in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n)
            .map(|_| if bound > 0.0 { rng.random_range(-bound..bound) as f32 } else { 0.0 })
            .collect();
        self.param(name, Tensor::from_vec(data, shape, &Device::Cpu)?)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Var> {
        let n: usize = shape.iter().product();
        self.param(name, Tensor::from_vec(vec![value; n], shape, &Device::Cpu)?)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.get(name).or_else(|| self.buffers.get(name))
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.params.iter()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.buffers.iter()
    }

    /// Trainable parameters whose name starts with any of `prefixes`.
    pub fn params_with_prefix(&self, prefixes: &[&str]) -> Vec<(String, Var)> {
        self.params
            .iter()
            .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Every parameter and buffer, keyed by name.
    pub fn export(&self) -> Result<BTreeMap<String, HostTensor>> {
        self.params
            .iter()
            .chain(self.buffers.iter())
            .map(|(n, v)| Ok((n.clone(), HostTensor::from_tensor(v.as_tensor())?)))
            .collect()
    }

    /// Overwrites every parameter and buffer from `src`. Names and shapes must
    /// match exactly.
    pub fn import(&self, src: &BTreeMap<String, HostTensor>) -> Result<()> {
        let expected = self.params.len() + self.buffers.len();
        if src.len() != expected {
            return Err(CoreError::Checkpoint(format!(
                "archive holds {} tensors, model has {expected}",
                src.len()
            )));
        }
        for (name, var) in self.params.iter().chain(self.buffers.iter()) {
            let h = src
                .get(name)
                .ok_or_else(|| CoreError::Checkpoint(format!("missing tensor `{name}`")))?;
            if h.shape != var.dims() {
                return Err(CoreError::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, model expects {:?}",
                    h.shape,
                    var.dims()
                )));
            }
            var.set(&h.to_tensor()?)?;
        }
        Ok(())
    }

    /// Digest of the trainable parameters: names, shapes and little-endian bytes.
    pub fn fingerprint(&self) -> Result<[u8; 32]> {
        let mut h = Sha256::new();
        for (name, var) in &self.params {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for d in var.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in var.as_tensor().flatten_all()?.to_vec1::<f32>()? {
                h.update(x.to_le_bytes());
            }
        }
        Ok(h.finalize().into())
    }

    /// Deep copy with fresh storage.
    pub fn deep_clone(&self) -> Result<Self> {
        let copy = |m: &BTreeMap<String, Var>| -> Result<BTreeMap<String, Var>> {
            m.iter()
                .map(|(n, v)| Ok((n.clone(), Var::from_tensor(&v.as_tensor().copy()?)?)))
                .collect()
        };
        Ok(Self {
            params: copy(&self.params)?,
            buffers: copy(&self.buffers)?,
        })
    }
}
