//! Parameter storage and the small layer vocabulary shared by the models.
//!
//! Models keep their tensors in a [`ParamStore`] and describe structure with
//! index-based layer structs. A forward pass first binds the store onto a
//! tape (as trainable leaves or as constants) and then threads the bound
//! vars through the layers.

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sfd_autograd::{conv2d, linear, Grads, Tape, Tensor, Var};
use sha2::{Digest, Sha256};

use crate::archive::Archive;
use crate::error::{Result, SfdError};

pub const LRELU_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate param {name}");
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Put every tensor on the tape; `trainable` decides whether they
    /// collect gradients.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect()
    }

    /// Gradients for vars produced by [`bind`](Self::bind), zeros where none
    /// flowed.
    pub fn grads(&self, bound: &[Var<'_>], grads: &Grads) -> Vec<Tensor> {
        bound.iter().map(|v| grads.get_or_zeros(*v)).collect()
    }

    /// SHA-256 over names, shapes and the exact bit patterns of the values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            h.update([0u8]);
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.as_standard_layout().iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize().as_slice())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn write_into(&self, archive: &mut Archive, prefix: &str) {
        for (name, t) in self.iter() {
            archive.push(format!("{prefix}{name}"), t.clone());
        }
    }

    /// Overwrite every tensor from `archive` entries named `prefix + name`;
    /// every name must be present with the same shape.
    pub fn read_from(&mut self, archive: &Archive, prefix: &str) -> Result<()> {
        for (name, slot) in self.names.iter().zip(self.tensors.iter_mut()) {
            let key = format!("{prefix}{name}");
            let t = archive
                .get(&key)
                .ok_or_else(|| SfdError::Shape(format!("archive is missing `{key}`")))?;
            if t.shape() != slot.shape() {
                return Err(SfdError::Shape(format!(
                    "`{key}`: archive has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        let expected = self.names.len();
        let found = archive.with_prefix(prefix).count();
        if found != expected {
            return Err(SfdError::Shape(format!(
                "archive has {found} tensors under `{prefix}`, model expects {expected}"
            )));
        }
        Ok(())
    }
}

/// Deterministic initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("valid std");
        let n: usize = shape.iter().product();
        let v = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        ArrayD::from_shape_vec(IxDyn(shape), v).unwrap()
    }

    /// Kaiming-normal for leaky ReLU fan-in, multiplied by `gain`.
    pub fn kaiming(&mut self, shape: &[usize], gain: f64) -> Tensor {
        let fan_in: usize = shape[1..].iter().product();
        let std = (2.0 / ((1.0 + LRELU_SLOPE * LRELU_SLOPE) * fan_in as f64)).sqrt();
        self.normal(shape, std * gain)
    }

    pub fn unit_vector(&mut self, len: usize) -> Vec<f64> {
        let t = self.normal(&[len], 1.0);
        let n = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        t.iter().map(|v| v / n).collect()
    }
}

pub fn zeros(shape: &[usize]) -> Tensor {
    ArrayD::zeros(IxDyn(shape))
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl Conv {
    /// Registers `name.weight` / `name.bias` with Kaiming init.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
    ) -> Self {
        let weight = store.push(
            format!("{name}.weight"),
            init.kaiming(&[out_ch, in_ch, kernel, kernel], gain),
        );
        let bias = store.push(format!("{name}.bias"), zeros(&[out_ch]));
        Self {
            weight,
            bias,
            stride,
            pad: kernel / 2,
            in_ch,
            out_ch,
            kernel,
        }
    }

    pub fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Var<'t> {
        conv2d(x, p[self.weight], Some(p[self.bias]), self.stride, self.pad)
    }

    /// Forward with an explicitly supplied (e.g. spectrally normalized) weight.
    pub fn forward_with<'t>(&self, weight: Var<'t>, p: &[Var<'t>], x: Var<'t>) -> Var<'t> {
        conv2d(x, weight, Some(p[self.bias]), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, inp: usize, out: usize) -> Self {
        let std = (1.0 / inp as f64).sqrt();
        let weight = store.push(format!("{name}.weight"), init.normal(&[out, inp], std));
        let bias = store.push(format!("{name}.bias"), zeros(&[out]));
        Self { weight, bias }
    }

    pub fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Var<'t> {
        linear(x, p[self.weight], Some(p[self.bias]))
    }
}
