//! A small CPU training engine for fully convolutional networks.
//!
//! Tensors are dense `f32` in NCHW order. A [`Graph`] records operations
//! during the forward pass and replays them backwards; learnable values live
//! in a [`ParamStore`] so that one set of weights can be shared by many
//! concurrent inference graphs.

mod adam;
mod graph;
mod kernels;

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, Mode, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape {shape:?} vs {} values", data.len());
        Self { shape, data }
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }
    pub fn c(&self) -> usize {
        self.shape[1]
    }
    pub fn h(&self) -> usize {
        self.shape[2]
    }
    pub fn w(&self) -> usize {
        self.shape[3]
    }
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    /// Contiguous values of batch item `i`.
    pub fn item(&self, i: usize) -> &[f32] {
        let len = self.shape[1] * self.plane();
        &self.data[i * len..(i + 1) * len]
    }
}

pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    /// Buffers (normalization statistics) are saved but never optimized.
    pub trainable: bool,
}

/// Named parameters in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], value: Vec<f32>, trainable: bool) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "param {name}");
        assert!(!self.index.contains_key(name), "duplicate param {name}");
        let id = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![0.0; value.len()],
            value,
            trainable,
        });
        self.index.insert(name.to_string(), id);
        id
    }

    /// He-normal initialized convolution weight `[cout, cin, k, k]` plus a
    /// zero bias.
    pub fn add_conv<R: Rng + ?Sized>(&mut self, name: &str, cin: usize, cout: usize, k: usize, gain: f32, rng: &mut R) -> (ParamId, ParamId) {
        let fan_in = (cin * k * k) as f32;
        let normal = Normal::new(0.0, gain * (2.0 / fan_in).sqrt()).expect("finite std");
        let w = (0..cout * cin * k * k).map(|_| normal.sample(rng)).collect();
        let wid = self.add(&format!("{name}.w"), &[cout, cin, k, k], w, true);
        let bid = self.add(&format!("{name}.b"), &[cout], vec![0.0; cout], true);
        (wid, bid)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn count_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }
}
