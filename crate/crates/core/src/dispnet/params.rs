//! Flat parameter storage with named tensors and a paired gradient buffer.

use std::ops::Range;

use rand::Rng;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    values: Vec<f64>,
    grads: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor; `values.len()` must equal the product of `shape`.
    pub fn add(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<TensorId> {
        let size: usize = shape.iter().product();
        if values.len() != size {
            return invalid(format!("tensor {name}: {} values for shape {shape:?}", values.len()));
        }
        if self.names.iter().any(|n| n == name) {
            return invalid(format!("duplicate tensor name {name}"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid(format!("tensor {name} has non-finite values"));
        }
        self.names.push(name.to_string());
        self.shapes.push(shape.to_vec());
        self.offsets.push(self.values.len());
        self.values.extend(values);
        self.grads.resize(self.values.len(), 0.0);
        Ok(TensorId(self.names.len() - 1))
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_xavier(
        &mut self,
        name: &str,
        fan_out: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Result<TensorId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, &[fan_out, fan_in], values)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<TensorId> {
        self.add(name, shape, vec![0.0; shape.iter().product()])
    }

    pub fn range(&self, id: TensorId) -> Range<usize> {
        let start = self.offsets[id.0];
        let size: usize = self.shapes[id.0].iter().product();
        start..start + size
    }

    pub fn get(&self, id: TensorId) -> &[f64] {
        &self.values[self.range(id)]
    }

    pub fn get_mut(&mut self, id: TensorId) -> &mut [f64] {
        let r = self.range(id);
        &mut self.values[r]
    }

    pub fn id(&self, name: &str) -> Option<TensorId> {
        self.names.iter().position(|n| n == name).map(TensorId)
    }

    pub fn name(&self, id: TensorId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = TensorId> {
        (0..self.names.len()).map(TensorId)
    }

    pub fn tensor_count(&self) -> usize {
        self.names.len()
    }

    /// Total scalar count.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    pub fn zero_grad(&mut self) {
        self.grads.fill(0.0);
    }

    /// A zeroed buffer the size of the gradient slots.
    pub fn grad_buffer(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Copies values from `other` tensor by tensor; names and shapes must match.
    pub fn copy_values_from(&mut self, other: &ParamSet) -> Result<()> {
        for id in self.ids().collect::<Vec<_>>() {
            let Some(src) = other.id(self.name(id)) else {
                return invalid(format!("missing tensor {}", self.name(id)));
            };
            if other.shape(src) != self.shape(id) {
                return invalid(format!(
                    "tensor {}: shape {:?} does not match {:?}",
                    self.name(id),
                    other.shape(src),
                    self.shape(id)
                ));
            }
            let values = other.get(src).to_vec();
            self.get_mut(id).copy_from_slice(&values);
        }
        Ok(())
    }
}
