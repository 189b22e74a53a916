//! Named parameter tensors, batch-norm running statistics and Adam state.
//!
//! Values are kept at `f32` precision, the precision of the model file, so
//! that a saved and reloaded store computes bit-identical outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    Scale,
    Shift,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub role: ParamRole,
    pub values: Vec<f32>,
}

/// First and second moments per entry (empty for non-trainable entries).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
    adam: AdamState,
    version: u64,
}

fn to_f32(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&x| x as f32).collect()
}

impl ParameterStore {
    pub fn new(entries: Vec<ParamEntry>) -> Result<Self> {
        for e in &entries {
            if e.dims.iter().product::<usize>() != e.values.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: dims {:?} with {} values",
                    e.name,
                    e.dims,
                    e.values.len()
                )));
            }
        }
        let zeros = |e: &ParamEntry| {
            if e.role.trainable() {
                vec![0.0f32; e.values.len()]
            } else {
                Vec::new()
            }
        };
        let adam = AdamState {
            step: 0,
            m: entries.iter().map(zeros).collect(),
            v: entries.iter().map(zeros).collect(),
        };
        Ok(Self {
            entries,
            adam,
            version: 0,
        })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.index_of(name).map(|i| &self.entries[i])
    }

    pub fn values(&self, index: usize) -> Vec<f64> {
        self.entries[index].values.iter().map(|&x| x as f64).collect()
    }

    /// Counter bumped by every change to trainable values.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.role.trainable())
            .map(|e| e.values.len())
            .sum()
    }

    /// Overwrites entry `index` (values are rounded to `f32`).
    pub fn set_values(&mut self, index: usize, values: &[f64]) -> Result<()> {
        let e = &mut self.entries[index];
        if values.len() != e.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{}: expected {} values, got {}",
                e.name,
                e.values.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(e.name.clone()));
        }
        if e.role == ParamRole::RunningVar && values.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParams(format!("{}: negative variance", e.name)));
        }
        e.values = to_f32(values);
        if e.role.trainable() {
            self.version += 1;
        }
        Ok(())
    }

    pub(crate) fn set_adam(&mut self, adam: AdamState) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            let want = if e.role.trainable() { e.values.len() } else { 0 };
            if adam.m[i].len() != want || adam.v[i].len() != want {
                return Err(Error::ShapeMismatch(format!("optimizer state for {}", e.name)));
            }
        }
        self.adam = adam;
        Ok(())
    }

    pub fn reset_optimizer(&mut self) {
        self.adam.step = 0;
        for buf in self.adam.m.iter_mut().chain(self.adam.v.iter_mut()) {
            buf.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// One bias-corrected Adam update. `grads` is indexed like the entries;
    /// non-trainable entries are skipped. Non-finite gradients abort the step
    /// before anything is modified.
    pub fn adam_step(&mut self, grads: &[Vec<f64>], lr: f64, cfg: &AdamConfig) -> Result<()> {
        if grads.len() != self.entries.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradient entries for {} parameters",
                grads.len(),
                self.entries.len()
            )));
        }
        for (e, g) in self.entries.iter().zip(grads) {
            if !e.role.trainable() {
                continue;
            }
            if g.len() != e.values.len() {
                return Err(Error::ShapeMismatch(format!("gradient for {}", e.name)));
            }
            if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient {}[{i}] = {}", e.name, g[i])));
            }
        }
        let t = self.adam.step + 1;
        let c1 = 1.0 - cfg.beta1.powi(t as i32);
        let c2 = 1.0 - cfg.beta2.powi(t as i32);
        for (i, e) in self.entries.iter_mut().enumerate() {
            if !e.role.trainable() {
                continue;
            }
            let (m, v) = (&mut self.adam.m[i], &mut self.adam.v[i]);
            for (k, &gk) in grads[i].iter().enumerate() {
                let mk = cfg.beta1 * m[k] as f64 + (1.0 - cfg.beta1) * gk;
                let vk = cfg.beta2 * v[k] as f64 + (1.0 - cfg.beta2) * gk * gk;
                m[k] = mk as f32;
                v[k] = vk as f32;
                let step = lr * (mk / c1) / ((vk / c2).sqrt() + cfg.eps);
                e.values[k] = (e.values[k] as f64 - step) as f32;
            }
        }
        self.adam.step = t;
        self.version += 1;
        Ok(())
    }

    pub(crate) fn set_running(&mut self, index: usize, values: &[f64]) {
        self.entries[index].values = to_f32(values);
    }
}
