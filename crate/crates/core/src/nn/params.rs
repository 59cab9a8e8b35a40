use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ontology::{FEATURE_DIM, NUM_CATEGORIES};

/// Layer widths of the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub dense: usize,
    pub output: usize,
}

impl Dims {
    /// 41 inputs, 10 outputs, dense layer as wide as the LSTM.
    pub fn activity(hidden: usize) -> Self {
        Self {
            input: FEATURE_DIM,
            hidden,
            dense: hidden,
            output: NUM_CATEGORIES,
        }
    }

    pub fn with_dense(mut self, dense: usize) -> Self {
        self.dense = dense;
        self
    }

    pub(crate) fn shapes(&self) -> [(&'static str, Shape); 7] {
        let gates = 4 * self.hidden;
        [
            ("lstm/kernel", Shape::Matrix(self.input, gates)),
            ("lstm/recurrent_kernel", Shape::Matrix(self.hidden, gates)),
            ("lstm/bias", Shape::Vector(gates)),
            ("dense1/kernel", Shape::Matrix(self.hidden, self.dense)),
            ("dense1/bias", Shape::Vector(self.dense)),
            ("dense2/kernel", Shape::Matrix(self.dense, self.output)),
            ("dense2/bias", Shape::Vector(self.output)),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.shapes().iter().map(|(_, s)| s.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    fn len(self) -> usize {
        match self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    fn to_vec(self) -> Vec<usize> {
        match self {
            Shape::Vector(n) => vec![n],
            Shape::Matrix(r, c) => vec![r, c],
        }
    }
}

/// Slots in [`ModelParameters`], in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    LstmKernel = 0,
    LstmRecurrent,
    LstmBias,
    Dense1Kernel,
    Dense1Bias,
    Dense2Kernel,
    Dense2Bias,
}

/// A named view of one parameter array (row-major).
#[derive(Debug, Clone, Copy)]
pub struct ParamArray<'a> {
    pub name: &'static str,
    pub shape: &'a [usize],
    pub values: &'a [f64],
}

/// All predictor weights in one contiguous row-major buffer.
///
/// LSTM gate blocks within each `4 * hidden` row are ordered input, forget,
/// cell, output. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    dims: Dims,
    offsets: [usize; 8],
    shapes: [Vec<usize>; 7],
    data: Vec<f64>,
}

pub type Gradients = ModelParameters;

impl ModelParameters {
    pub fn zeros(dims: Dims) -> Self {
        let specs = dims.shapes();
        let mut offsets = [0; 8];
        for (i, (_, shape)) in specs.iter().enumerate() {
            offsets[i + 1] = offsets[i] + shape.len();
        }
        let shapes = specs.map(|(_, s)| s.to_vec());
        Self {
            dims,
            offsets,
            shapes,
            data: vec![0.0; offsets[7]],
        }
    }

    /// Glorot-uniform weights, zero biases except the LSTM forget gate (1.0).
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut params = Self::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (slot, (_, shape)) in dims.shapes().iter().enumerate() {
            if let Shape::Matrix(fan_in, fan_out) = *shape {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let (lo, hi) = (params.offsets[slot], params.offsets[slot + 1]);
                for w in &mut params.data[lo..hi] {
                    *w = rng.random_range(-limit..limit);
                }
            }
        }
        let h = dims.hidden;
        params.slot_mut(Slot::LstmBias)[h..2 * h].fill(1.0);
        params
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims == other.dims
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn arrays(&self) -> impl Iterator<Item = ParamArray<'_>> {
        self.dims.shapes().into_iter().enumerate().map(move |(i, (name, _))| ParamArray {
            name,
            shape: &self.shapes[i],
            values: &self.data[self.offsets[i]..self.offsets[i + 1]],
        })
    }

    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.arrays().find(|a| a.name == name).map(|a| a.values)
    }

    pub fn array_shape(&self, name: &str) -> Option<&[usize]> {
        self.arrays().find(|a| a.name == name).map(|a| a.shape)
    }

    pub(crate) fn slot(&self, slot: Slot) -> &[f64] {
        let i = slot as usize;
        &self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    pub(crate) fn slot_mut(&mut self, slot: Slot) -> &mut [f64] {
        let i = slot as usize;
        &mut self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    pub(crate) fn from_parts(dims: Dims, data: Vec<f64>) -> Option<Self> {
        let mut p = Self::zeros(dims);
        if data.len() != p.data.len() {
            return None;
        }
        p.data = data;
        Some(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let a = ModelParameters::init(Dims::activity(8), 3);
        let b = ModelParameters::init(Dims::activity(8), 3);
        let bits = |p: &ModelParameters| p.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(a, ModelParameters::init(Dims::activity(8), 4));
    }

    #[test]
    fn shapes_and_forget_bias() {
        let p = ModelParameters::init(Dims::activity(8), 0);
        assert_eq!(p.array_shape("lstm/kernel"), Some(&[41, 32][..]));
        assert_eq!(p.array_shape("lstm/recurrent_kernel"), Some(&[8, 32][..]));
        assert_eq!(p.array_shape("dense2/kernel"), Some(&[8, 10][..]));
        let bias = p.array("lstm/bias").unwrap();
        assert!(bias[8..16].iter().all(|&b| b == 1.0));
        assert!(bias[..8].iter().chain(&bias[16..]).all(|&b| b == 0.0));
        assert!(p.array("dense1/bias").unwrap().iter().all(|&b| b == 0.0));
        assert_eq!(p.len(), Dims::activity(8).param_count());
    }

    #[test]
    fn weights_within_glorot_limit() {
        let p = ModelParameters::init(Dims::activity(16), 9);
        let limit = (6.0f64 / (41.0 + 64.0)).sqrt();
        let k = p.array("lstm/kernel").unwrap();
        assert!(k.iter().all(|w| w.abs() <= limit));
        assert!(k.iter().any(|w| w.abs() > limit * 0.5));
    }
}
