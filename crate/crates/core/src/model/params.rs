use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named parameter array. The shape is fixed at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { name: name.into(), shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn from_vec(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::config(format!(
                "tensor {name}: shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { name, shape: shape.to_vec(), data })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Named real-valued parameter arrays of a model. Gradients and momentum
/// buffers use the same type so shapes line up by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    tensors: Vec<Tensor>,
}

/// Gradient arrays shaped like the parameters they belong to.
pub type Gradients = ModelParams;

impl ModelParams {
    pub fn new(tensors: Vec<Tensor>) -> Result<Self> {
        for (i, t) in tensors.iter().enumerate() {
            if tensors[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::config(format!("duplicate tensor name {}", t.name)));
            }
        }
        let params = ModelParams { tensors };
        params.ensure_finite("parameters")?;
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams { tensors: self.tensors.iter().map(|t| Tensor::zeros(t.name.clone(), &t.shape)).collect() }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn same_shapes(&self, other: &ModelParams) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn check_shapes(&self, other: &ModelParams, what: &str) -> Result<()> {
        if self.same_shapes(other) {
            Ok(())
        } else {
            Err(Error::config(format!("{what}: parameter shapes do not match")))
        }
    }

    /// Reports the first tensor holding a NaN or infinity.
    pub fn ensure_finite(&self, site: &str) -> Result<()> {
        for t in &self.tensors {
            if let Some(pos) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::numeric(site, format!("{}[{pos}] = {}", t.name, t.data[pos])));
            }
        }
        Ok(())
    }

    /// `self += alpha * other`, elementwise. Shapes must already match.
    pub fn add_scaled(&mut self, alpha: f64, other: &ModelParams) {
        debug_assert!(self.same_shapes(other));
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x *= alpha);
        }
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.data.iter().copied())
    }

    /// Order-sensitive FNV-1a hash over the raw bits of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.iter_values() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Largest absolute value, useful for sanity checks.
    pub fn max_abs(&self) -> f64 {
        self.iter_values().fold(0.0, |m, v| m.max(v.abs()))
    }
}
