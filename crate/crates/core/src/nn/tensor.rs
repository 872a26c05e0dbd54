use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Named array with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub grad: Option<Vec<T>>,
    pub requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>, requires_grad: bool) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::structural(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            shape,
            values,
            grad: None,
            requires_grad,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Add `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<()> {
        if delta.len() != self.values.len() {
            return Err(Error::structural(format!(
                "gradient of length {} for tensor of length {}",
                delta.len(),
                self.values.len()
            )));
        }
        let grad = self.grad.get_or_insert_with(|| vec![T::zero(); delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g = *g + *d;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect();
        Tensor {
            shape: self.shape.clone(),
            values: conv(&self.values),
            grad: self.grad.as_ref().map(conv),
            requires_grad: self.requires_grad,
        }
    }
}

/// All parameters and buffers of a model, keyed by stable names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::structural(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::structural(format!("missing parameter {name}")))
    }

    pub fn values(&self, name: &str) -> Result<&[T]> {
        Ok(&self.get(name)?.values)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Names of tensors that receive gradients.
    pub fn trainable_names(&self) -> Vec<String> {
        self.tensors
            .iter()
            .filter(|(_, t)| t.requires_grad)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors.values_mut() {
            t.grad = None;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Bitwise equality of every value (gradients ignored).
    pub fn same_values(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(other.tensors.iter()).all(|((na, a), (nb, b))| {
                na == nb
                    && a.shape == b.shape
                    && a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits_eq(y))
            })
    }
}

trait BitsEq {
    fn to_bits_eq(&self, other: &Self) -> bool;
}

impl<T: Scalar> BitsEq for T {
    fn to_bits_eq(&self, other: &Self) -> bool {
        self.as_f64().to_bits() == other.as_f64().to_bits()
    }
}
