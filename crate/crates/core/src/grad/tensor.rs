use std::sync::atomic::{AtomicU32, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Dense row-major float32 array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dimension in {shape:?}");
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} values",
            data.len()
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn scalar(v: f32) -> Self {
        Self::new(&[1], vec![v])
    }

    pub fn vector(data: &[f32]) -> Self {
        Self::new(&[data.len()], data.to_vec())
    }

    pub fn matrix(rows: usize, cols: usize, data: &[f32]) -> Self {
        Self::new(&[rows, cols], data.to_vec())
    }

    /// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn uniform_fan_in<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Self::new(shape, data)
    }

    pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f32, rng: &mut R) -> Self {
        let dist = Normal::new(0.0f32, std).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        Self::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f32 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Row `i` of a matrix.
    pub fn row(&self, i: usize) -> &[f32] {
        let cols = *self.shape.last().unwrap();
        &self.data[i * cols..(i + 1) * cols]
    }
}

static NEXT_SET_TAG: AtomicU32 = AtomicU32::new(1);

fn fresh_tag() -> u32 {
    NEXT_SET_TAG.fetch_add(1, Ordering::Relaxed)
}

/// A trainable tensor. `grad` is allocated iff `requires_grad`.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

impl Param {
    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameters owned by one model component.
///
/// Every set carries a process-unique tag so graph leaves can tell sets apart.
#[derive(Debug)]
pub struct ParamSet {
    tag: u32,
    params: Vec<Param>,
}

impl Clone for ParamSet {
    fn clone(&self) -> Self {
        Self {
            tag: fresh_tag(),
            params: self.params.clone(),
        }
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            tag: fresh_tag(),
            params: Vec::new(),
        }
    }

    pub fn tag(&self) -> u32 {
        self.tag
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        let grad = Some(vec![0.0; value.len()]);
        self.params.push(Param {
            name,
            value,
            requires_grad: true,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn set_requires_grad(&mut self, id: ParamId, on: bool) {
        let p = &mut self.params[id.0];
        p.requires_grad = on;
        p.grad = on.then(|| vec![0.0; p.value.len()]);
    }

    /// Freezes or unfreezes every parameter.
    pub fn set_all_requires_grad(&mut self, on: bool) {
        for i in 0..self.params.len() {
            self.set_requires_grad(ParamId(i), on);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            if let Some(g) = &mut p.grad {
                g.fill(0.0);
            }
        }
    }

    /// Adds gradients produced by a backward pass that belong to this set.
    pub fn accumulate(&mut self, grads: &super::Gradients) {
        for (key, g) in grads.iter() {
            if key.set != self.tag {
                continue;
            }
            let p = &mut self.params[key.index];
            if let Some(acc) = &mut p.grad {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    pub fn grad_sq_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|&x| f64::from(x) * f64::from(x))
            .sum()
    }

    pub fn scale_grads(&mut self, k: f32) {
        for p in &mut self.params {
            if let Some(g) = &mut p.grad {
                g.iter_mut().for_each(|x| *x *= k);
            }
        }
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub(crate) fn split_value_grad(p: &mut Param) -> (&mut [f32], Option<&[f32]>) {
        (p.value.data_mut(), p.grad.as_deref())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Order-sensitive FNV-1a hash of names, shapes and value bytes.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for p in &self.params {
            eat(p.name.as_bytes());
            for d in p.value.shape() {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Global gradient-norm clipping across several parameter sets.
pub fn clip_grad_norm(sets: &mut [&mut ParamSet], max_norm: f32) -> f32 {
    let total = sets.iter().map(|s| s.grad_sq_norm()).sum::<f64>().sqrt() as f32;
    if total > max_norm && total > 0.0 {
        let k = max_norm / total;
        for s in sets.iter_mut() {
            s.scale_grads(k);
        }
    }
    total
}
