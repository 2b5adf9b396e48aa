use std::collections::BTreeMap;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments<T> {
    first: Tensor<T>,
    second: Tensor<T>,
}

/// Named parameters plus their Adam moments.
///
/// The step counter is shared by every parameter in the store.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
    moments: BTreeMap<String, Moments<T>>,
    step: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        let moments = Moments {
            first: Tensor::zeros(value.shape()),
            second: Tensor::zeros(value.shape()),
        };
        self.moments.insert(name.clone(), moments);
        self.params.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.moments.get(name).map(|m| &m.first)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.moments.get(name).map(|m| &m.second)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            moments: self
                .moments
                .iter()
                .map(|(k, m)| {
                    (
                        k.clone(),
                        Moments {
                            first: m.first.cast(),
                            second: m.second.cast(),
                        },
                    )
                })
                .collect(),
            step: self.step,
        }
    }

    /// One bias-corrected Adam update without weight decay.
    ///
    /// Every parameter must have a gradient; nothing is modified otherwise.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor<T>>, lr: f64, cfg: AdamConfig) -> Result<()> {
        for (name, p) in &self.params {
            let g = grads.get(name).ok_or_else(|| Error::MissingGradient(name.clone()))?;
            p.same_shape(g, "adam_step")?;
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
        let step_size = T::from_f64(lr / bc1);
        let bc2_sqrt = T::from_f64(bc2.sqrt());
        let eps = T::from_f64(cfg.eps);
        for (name, p) in self.params.iter_mut() {
            let g = &grads[name];
            let m = self.moments.get_mut(name).expect("moments exist for every parameter");
            let it = p
                .data_mut()
                .iter_mut()
                .zip(m.first.data_mut().iter_mut())
                .zip(m.second.data_mut().iter_mut())
                .zip(g.data());
            for (((p, m1), m2), &g) in it {
                *m1 = b1 * *m1 + one_b1 * g;
                *m2 = b2 * *m2 + one_b2 * g * g;
                let denom = m2.sqrt() / bc2_sqrt + eps;
                *p = *p - step_size * *m1 / denom;
            }
        }
        Ok(())
    }
}
