use std::rc::Rc;

use super::kernels;
use super::{Scalar, Shape, Tensor};
use crate::dmol;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, pad: usize },
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Concat(Vec<Var>),
    Upsample2x(Var),
    MaskSelect(Var, Rc<Tensor<T>>),
    MaskAssign { base: Var, values: Var, mask: Rc<Tensor<T>> },
    Sum(Var),
    Mean(Var),
    Scale(Var, T),
    // The gradient of the summed bits is produced together with the loss.
    DmolNll { params: Var, grad: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Wengert list recording every differentiable op of a forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    floored: u64,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            floored: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of likelihood evaluations clamped at the probability floor.
    pub fn floored(&self) -> u64 {
        self.floored
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op_name(&op).into()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let out = kernels::conv2d(self.value(x), self.value(w), self.value(b), pad)?;
        self.push(out, Op::Conv2d { x, w, b, pad }, &[x, w, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.same_shape(vb, "add")?;
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.same_shape(vb, "mul")?;
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        self.push(out, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let parts: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let out = kernels::concat(&parts)?;
        self.push(out, Op::Concat(xs.to_vec()), xs)
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let out = kernels::upsample2x(self.value(x));
        self.push(out, Op::Upsample2x(x), &[x])
    }

    /// `x ⊙ mask` with a constant 0/1 mask.
    pub fn mask_select(&mut self, x: Var, mask: Tensor<T>) -> Result<Var> {
        let vx = self.value(x);
        vx.same_shape(&mask, "mask_select")?;
        let data = vx.data().iter().zip(mask.data()).map(|(&p, &m)| p * m).collect();
        let out = Tensor::from_vec(vx.shape(), data)?;
        self.push(out, Op::MaskSelect(x, Rc::new(mask)), &[x])
    }

    /// `values` where `mask` is 1, `base` elsewhere.
    pub fn mask_assign(&mut self, base: Var, values: Var, mask: Tensor<T>) -> Result<Var> {
        let (vb, vv) = (self.value(base), self.value(values));
        vb.same_shape(vv, "mask_assign")?;
        vb.same_shape(&mask, "mask_assign")?;
        let data = vb
            .data()
            .iter()
            .zip(vv.data())
            .zip(mask.data())
            .map(|((&b, &v), &m)| if m > T::zero() { v } else { b })
            .collect();
        let out = Tensor::from_vec(vb.shape(), data)?;
        self.push(
            out,
            Op::MaskAssign {
                base,
                values,
                mask: Rc::new(mask),
            },
            &[base, values],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / T::from_f64(v.len() as f64));
        self.push(out, Op::Mean(x), &[x])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    /// Summed discretized-logistic-mixture code length (bits) of `targets`.
    ///
    /// `params` is `(N, 10K, H, W)`; `targets` holds `N×3×H×W` 8-bit values in
    /// planar layout; only pixels with `select[n·H·W + y·W + x]` set contribute.
    pub fn dmol_nll(&mut self, params: Var, mixtures: usize, targets: &[u8], select: &[bool]) -> Result<Var> {
        let p = self.value(params);
        let s = p.shape();
        if s.c != dmol::params_per_pixel(mixtures) {
            return Err(Error::shape("dmol_nll", s, dmol::params_per_pixel(mixtures)));
        }
        let hw = s.plane();
        if targets.len() != s.n * 3 * hw || select.len() != s.n * hw {
            return Err(Error::shape("dmol_nll targets", s, (targets.len(), select.len())));
        }
        let q = s.c;
        let mut grad = Tensor::zeros(s);
        let mut raw = vec![0.0f64; q];
        let mut g = vec![0.0f64; q];
        let mut total = 0.0f64;
        let mut floored = 0u64;
        for n in 0..s.n {
            for i in 0..hw {
                if !select[n * hw + i] {
                    continue;
                }
                for (ch, r) in raw.iter_mut().enumerate() {
                    *r = p.data()[(n * q + ch) * hw + i].to_f64();
                }
                let rgb = [
                    targets[(n * 3) * hw + i],
                    targets[(n * 3 + 1) * hw + i],
                    targets[(n * 3 + 2) * hw + i],
                ];
                let res = dmol::nll_with_grad(&raw, mixtures, rgb, &mut g);
                total += res.bits.iter().sum::<f64>();
                floored += res.floored as u64;
                for (ch, &gv) in g.iter().enumerate() {
                    grad.data_mut()[(n * q + ch) * hw + i] = T::from_f64(gv);
                }
            }
        }
        self.floored += floored;
        let out = Tensor::scalar(T::from_f64(total));
        self.push(out, Op::DmolNll { params, grad }, &[params])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", self.value(loss).shape(), "scalar"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Conv2d { x, w, b, pad } => {
                    let need = [self.needs(*x), self.needs(*w), self.needs(*b)];
                    let cg = kernels::conv2d_backward(self.value(*x), self.value(*w), &g, *pad, need);
                    accumulate(&mut grads, *x, cg.input);
                    accumulate(&mut grads, *w, cg.weight);
                    accumulate(&mut grads, *b, cg.bias);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, Some(g.clone()));
                    accumulate(&mut grads, *b, Some(g.clone()));
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, self.value(*b), |g, v| g * v);
                    let gb = zip_map(&g, self.value(*a), |g, v| g * v);
                    accumulate(&mut grads, *a, Some(ga));
                    accumulate(&mut grads, *b, Some(gb));
                }
                Op::Relu(x) => {
                    let gx = zip_map(&g, self.value(*x), |g, v| if v > T::zero() { g } else { T::zero() });
                    accumulate(&mut grads, *x, Some(gx));
                }
                Op::LeakyRelu(x, slope) => {
                    let slope = *slope;
                    let gx = zip_map(&g, self.value(*x), |g, v| if v > T::zero() { g } else { g * slope });
                    accumulate(&mut grads, *x, Some(gx));
                }
                Op::Concat(xs) => {
                    let channels: Vec<usize> = xs.iter().map(|&v| self.value(v).shape().c).collect();
                    for (v, part) in xs.iter().zip(kernels::split_channels(&g, &channels)) {
                        accumulate(&mut grads, *v, Some(part));
                    }
                }
                Op::Upsample2x(x) => {
                    accumulate(&mut grads, *x, Some(kernels::upsample2x_backward(&g)));
                }
                Op::MaskSelect(x, mask) => {
                    accumulate(&mut grads, *x, Some(zip_map(&g, mask, |g, m| g * m)));
                }
                Op::MaskAssign { base, values, mask } => {
                    let gb = zip_map(&g, mask, |g, m| if m > T::zero() { T::zero() } else { g });
                    let gv = zip_map(&g, mask, |g, m| if m > T::zero() { g } else { T::zero() });
                    accumulate(&mut grads, *base, Some(gb));
                    accumulate(&mut grads, *values, Some(gv));
                }
                Op::Sum(x) => {
                    let gs = g.data()[0];
                    accumulate(&mut grads, *x, Some(Tensor::full(self.value(*x).shape(), gs)));
                }
                Op::Mean(x) => {
                    let v = self.value(*x);
                    let gs = g.data()[0] / T::from_f64(v.len() as f64);
                    accumulate(&mut grads, *x, Some(Tensor::full(v.shape(), gs)));
                }
                Op::Scale(x, f) => {
                    let f = *f;
                    accumulate(&mut grads, *x, Some(g.map(|v| v * f)));
                }
                Op::DmolNll { params, grad } => {
                    let gs = g.data()[0];
                    accumulate(&mut grads, *params, Some(grad.map(|v| v * gs)));
                }
            }
        }
        Ok(Grads { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv2d { .. } => "conv2d",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::Relu(_) => "relu",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Concat(_) => "concat",
        Op::Upsample2x(_) => "upsample2x",
        Op::MaskSelect(..) => "mask_select",
        Op::MaskAssign { .. } => "mask_assign",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::Scale(..) => "scale",
        Op::DmolNll { .. } => "dmol_nll",
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Option<Tensor<T>>) {
    let Some(g) = g else { return };
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: Shape) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}
