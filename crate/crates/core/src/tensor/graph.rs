use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use super::tape::{Grads, Tape, Var};
use super::{kernels, ParamStore, Scalar, Tensor};
use crate::error::Result;

/// The op set the context network is written against.
///
/// [`Eval`] runs it on plain tensors; [`TapeGraph`] records it for training.
/// Both share the kernels in [`kernels`], so a network evaluated either way
/// produces the same values.
pub trait Ops<T: Scalar> {
    type V: Clone;

    fn value<'s>(&'s self, v: &'s Self::V) -> &'s Tensor<T>;
    fn constant(&mut self, t: Tensor<T>) -> Self::V;
    fn param(&mut self, name: &str) -> Result<Self::V>;
    fn conv2d(&mut self, x: &Self::V, w: &Self::V, b: &Self::V, pad: usize) -> Result<Self::V>;
    fn relu(&mut self, x: &Self::V) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn concat(&mut self, xs: &[&Self::V]) -> Result<Self::V>;
    fn upsample2x(&mut self, x: &Self::V) -> Result<Self::V>;
}

/// Tape-free evaluation against read-only parameters.
pub struct Eval<'a, T: Scalar> {
    params: &'a ParamStore<T>,
}

impl<'a, T: Scalar> Eval<'a, T> {
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Eval { params }
    }
}

impl<'a, T: Scalar> Ops<T> for Eval<'a, T> {
    type V = Cow<'a, Tensor<T>>;

    fn value<'s>(&'s self, v: &'s Self::V) -> &'s Tensor<T> {
        v.as_ref()
    }

    fn constant(&mut self, t: Tensor<T>) -> Self::V {
        Cow::Owned(t)
    }

    fn param(&mut self, name: &str) -> Result<Self::V> {
        self.params.get(name).map(Cow::Borrowed)
    }

    fn conv2d(&mut self, x: &Self::V, w: &Self::V, b: &Self::V, pad: usize) -> Result<Self::V> {
        kernels::conv2d(x, w, b, pad).map(Cow::Owned)
    }

    fn relu(&mut self, x: &Self::V) -> Result<Self::V> {
        Ok(Cow::Owned(x.map(|v| v.max(T::zero()))))
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        a.same_shape(b, "add")?;
        let data = a.data().iter().zip(b.data()).map(|(&p, &q)| p + q).collect();
        Tensor::from_vec(a.shape(), data).map(Cow::Owned)
    }

    fn concat(&mut self, xs: &[&Self::V]) -> Result<Self::V> {
        let parts: Vec<&Tensor<T>> = xs.iter().map(|v| v.as_ref()).collect();
        kernels::concat(&parts).map(Cow::Owned)
    }

    fn upsample2x(&mut self, x: &Self::V) -> Result<Self::V> {
        Ok(Cow::Owned(kernels::upsample2x(x)))
    }
}

/// Records the network on a [`Tape`], with parameters pulled lazily from a
/// [`ParamStore`] as trainable leaves.
pub struct TapeGraph<'a, T: Scalar> {
    pub tape: Tape<T>,
    params: &'a ParamStore<T>,
    leaves: HashMap<String, Var>,
}

impl<'a, T: Scalar> TapeGraph<'a, T> {
    pub fn new(params: &'a ParamStore<T>) -> Self {
        TapeGraph {
            tape: Tape::new(),
            params,
            leaves: HashMap::new(),
        }
    }

    /// Backpropagates `loss` and returns one gradient per stored parameter;
    /// parameters the loss never touched get zero gradients.
    pub fn param_grads(&self, loss: Var) -> Result<BTreeMap<String, Tensor<T>>> {
        let grads: Grads<T> = self.tape.backward(loss)?;
        Ok(self
            .params
            .iter()
            .map(|(name, p)| {
                let g = match self.leaves.get(name) {
                    Some(&v) => grads.get_or_zeros(v, p.shape()),
                    None => Tensor::zeros(p.shape()),
                };
                (name.clone(), g)
            })
            .collect())
    }
}

impl<'a, T: Scalar> Ops<T> for TapeGraph<'a, T> {
    type V = Var;

    fn value<'s>(&'s self, v: &'s Var) -> &'s Tensor<T> {
        self.tape.value(*v)
    }

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.tape.constant(t)
    }

    fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.leaves.get(name) {
            return Ok(v);
        }
        let v = self.tape.param(self.params.get(name)?.clone());
        self.leaves.insert(name.to_string(), v);
        Ok(v)
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: &Var, pad: usize) -> Result<Var> {
        self.tape.conv2d(*x, *w, *b, pad)
    }

    fn relu(&mut self, x: &Var) -> Result<Var> {
        self.tape.relu(*x)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.add(*a, *b)
    }

    fn concat(&mut self, xs: &[&Var]) -> Result<Var> {
        let ids: Vec<Var> = xs.iter().map(|v| **v).collect();
        self.tape.concat(&ids)
    }

    fn upsample2x(&mut self, x: &Var) -> Result<Var> {
        self.tape.upsample2x(*x)
    }
}
