use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Device, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::store::HostTensor;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// AdamW with decoupled weight decay. Moments live on the host so they can be
/// checkpointed and restored exactly.
pub struct AdamW {
    pub config: AdamWConfig,
    params: Vec<(String, Var)>,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    steps: u64,
}

impl AdamW {
    pub fn new(params: Vec<(String, Var)>, config: AdamWConfig) -> Self {
        let m = params.iter().map(|(_, p)| vec![0f32; p.elem_count()]).collect::<Vec<_>>();
        let v = m.clone();
        Self {
            config,
            params,
            m,
            v,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    /// Applies one update with learning rate `lr`. Parameters without a gradient
    /// in `grads` are left untouched.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, (_, var)) in self.params.iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g: Vec<f32> = g.flatten_all()?.to_vec1()?;
            let mut p: Vec<f32> = var.as_tensor().flatten_all()?.to_vec1()?;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g[j] as f64;
                let mj = c.beta1 * m[j] as f64 + (1.0 - c.beta1) * gj;
                let vj = c.beta2 * v[j] as f64 + (1.0 - c.beta2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let update = (mj / bc1) / ((vj / bc2).sqrt() + c.eps);
                let pj = p[j] as f64 * (1.0 - lr * c.weight_decay) - lr * update;
                p[j] = pj as f32;
            }
            var.set(&Tensor::from_vec(p, var.dims(), &Device::Cpu)?)?;
        }
        Ok(())
    }

    pub fn export_state(&self) -> BTreeMap<String, HostTensor> {
        let mut out = BTreeMap::new();
        for (i, (name, var)) in self.params.iter().enumerate() {
            let shape = var.dims().to_vec();
            out.insert(format!("m.{name}"), HostTensor { shape: shape.clone(), data: self.m[i].clone() });
            out.insert(format!("v.{name}"), HostTensor { shape, data: self.v[i].clone() });
        }
        out
    }

    pub fn import_state(&mut self, state: &BTreeMap<String, HostTensor>, steps: u64) -> Result<()> {
        for (i, (name, var)) in self.params.iter().enumerate() {
            for (key, dst) in [(format!("m.{name}"), &mut self.m[i]), (format!("v.{name}"), &mut self.v[i])] {
                let h = state
                    .get(&key)
                    .ok_or_else(|| CoreError::Checkpoint(format!("missing optimizer state `{key}`")))?;
                if h.data.len() != var.elem_count() {
                    return Err(CoreError::Checkpoint(format!("optimizer state `{key}` has wrong size")));
                }
                dst.copy_from_slice(&h.data);
            }
        }
        self.steps = steps;
        Ok(())
    }
}
