//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters enter
//! the tape through [`Graph::param`]; whether they receive gradients is
//! decided by the graph's [`GroupMask`], which is how per-network freezing is
//! implemented. Values that must act as constants (gradient blocking) enter
//! through [`Graph::input`].

mod conv;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::losses;
use crate::nn::{GroupMask, ParamGrads, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: conv::ConvGeom,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Upsample2x(Var),
    InstanceNorm(Var, T),
    MeanAbsDiff(Var, Var),
    TaskLoss {
        logits: Var,
        labels: Vec<u8>,
        dice_eps: f64,
    },
    SymKl(Var, Var, f64),
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    mask: GroupMask,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Graph<T> {
    /// A graph in which parameters of the networks in `mask` are trainable.
    pub fn new(mask: GroupMask) -> Self {
        Graph {
            nodes: Vec::new(),
            mask,
            params: HashMap::new(),
        }
    }

    /// A graph with every parameter frozen.
    pub fn inference() -> Self {
        Self::new(GroupMask::NONE)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A constant; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// A free leaf that collects its gradient (used for gradient checks).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, true)
    }

    /// The tape node of a parameter; repeated uses share one node so
    /// gradients from every use accumulate.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let trainable = self.mask.contains(store.group(id));
        let v = self.push(store.get(id).clone(), Op::Param, trainable);
        self.params.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::validation(format!("conv2d expects rank-4 input and weight, got {xs:?} and {ws:?}")));
        }
        let geom = conv::ConvGeom::new(xs, ws, stride, pad)
            .ok_or_else(|| Error::validation(format!("conv2d: weight {ws:?} incompatible with input {xs:?}")))?;
        let out = conv::forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::validation(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(x);
        self.push(out, Op::Affine(x, scale), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::validation("concat of nothing"))?;
        let (n, _, h, w) = self.value(first).dims4();
        let mut channels = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4();
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::validation(format!(
                    "concat: {:?} incompatible with {:?}",
                    self.value(p).shape(),
                    self.value(first).shape()
                )));
            }
            channels += pc;
        }
        let plane = h * w;
        let mut out = Tensor::zeros(&[n, channels, h, w]);
        for s in 0..n {
            let mut offset = 0;
            for &p in parts {
                let pc = self.value(p).shape()[1];
                let src = &self.value(p).data()[s * pc * plane..(s + 1) * pc * plane];
                let start = (s * channels + offset) * plane;
                out.data_mut()[start..start + pc * plane].copy_from_slice(src);
                offset += pc;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Nearest-neighbour upsampling by a factor of two.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let src = self.value(x).data();
        let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
        let dst = out.data_mut();
        for plane in 0..n * c {
            for y in 0..2 * h {
                let srow = &src[(plane * h + y / 2) * w..(plane * h + y / 2 + 1) * w];
                let drow = &mut dst[(plane * 2 * h + y) * 2 * w..(plane * 2 * h + y + 1) * 2 * w];
                for (xx, d) in drow.iter_mut().enumerate() {
                    *d = srow[xx / 2];
                }
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::Upsample2x(x), rg)
    }

    /// Per-sample, per-channel standardisation over the spatial axes.
    pub fn instance_norm(&mut self, x: Var, eps: T) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let plane = h * w;
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(plane).take(n * c) {
            let (mean, inv_std) = moments(chunk, eps);
            for v in chunk.iter_mut() {
                *v = (*v - mean) * inv_std;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::InstanceNorm(x, eps), rg)
    }

    /// Scalar node: mean absolute difference.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = losses::mean_abs_diff(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(v), Op::MeanAbsDiff(a, b), rg))
    }

    /// Scalar node: cross-entropy plus soft Dice against `labels`.
    pub fn task_loss(&mut self, logits: Var, labels: &[u8], dice_eps: f64) -> Result<Var> {
        let v = losses::task_loss(self.value(logits), labels, dice_eps)?;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(v),
            Op::TaskLoss {
                logits,
                labels: labels.to_vec(),
                dice_eps,
            },
            rg,
        ))
    }

    /// Scalar node: symmetric KL between per-pixel class distributions.
    pub fn sym_kl(&mut self, a: Var, b: Var, floor: f64) -> Result<Var> {
        let v = losses::prediction_consistency(self.value(a), self.value(b), floor)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(v), Op::SymKl(a, b, floor), rg))
    }

    /// Scalar node: `Σ weight_i · term_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut total = T::zero();
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(Error::validation("weighted_sum expects scalar terms"));
            }
            total += w * self.value(v).data()[0];
        }
        let rg = terms.iter().any(|&(v, w)| w != T::zero() && self.rg(v));
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), rg))
    }

    /// Reverse pass from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::validation("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.rg(loss) {
            grads[loss.0] = Some(Tensor::scalar(T::one()));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            if matches!(node.op, Op::Input | Op::Param) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut send = |v: Var, t: Tensor<T>| {
            if self.rg(v) {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            }
        };
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Conv2d { x, w, b, geom } => {
                let need = (self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b)));
                let cg = conv::backward(self.value(*x), self.value(*w), g, geom, need);
                if let Some(dx) = cg.dx {
                    send(*x, dx);
                }
                if let Some(dw) = cg.dw {
                    send(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    send(*b, db);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    send(*a, g.zip_map(self.value(*b), |d, y| d * y));
                }
                if self.rg(*b) {
                    send(*b, g.zip_map(self.value(*a), |d, x| d * x));
                }
            }
            Op::Affine(x, scale) => send(*x, g.map(|d| d * *scale)),
            Op::Relu(x) => send(
                *x,
                g.zip_map(&node.value, |d, y| if y > T::zero() { d } else { T::zero() }),
            ),
            Op::Sigmoid(x) => send(*x, g.zip_map(&node.value, |d, y| d * y * (T::one() - y))),
            Op::Tanh(x) => send(*x, g.zip_map(&node.value, |d, y| d * (T::one() - y * y))),
            Op::Concat(parts) => {
                let (n, channels, h, w) = g.dims4();
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    if self.rg(p) {
                        let mut part = Tensor::zeros(self.value(p).shape());
                        for s in 0..n {
                            let start = (s * channels + offset) * plane;
                            part.data_mut()[s * pc * plane..(s + 1) * pc * plane]
                                .copy_from_slice(&g.data()[start..start + pc * plane]);
                        }
                        send(p, part);
                    }
                    offset += pc;
                }
            }
            Op::Upsample2x(x) => {
                let (n, c, h, w) = self.value(*x).dims4();
                let mut dx = Tensor::zeros(&[n, c, h, w]);
                let gd = g.data();
                let dd = dx.data_mut();
                for plane in 0..n * c {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            dd[(plane * h + y / 2) * w + xx / 2] += gd[(plane * 2 * h + y) * 2 * w + xx];
                        }
                    }
                }
                send(*x, dx);
            }
            Op::InstanceNorm(x, eps) => {
                let (n, c, h, w) = g.dims4();
                let plane = h * w;
                let inv_plane = T::one() / T::from_usize(plane).unwrap();
                let mut dx = Tensor::zeros(g.shape());
                let xin = self.value(*x).data();
                for i in 0..n * c {
                    let range = i * plane..(i + 1) * plane;
                    let (_, inv_std) = moments(&xin[range.clone()], *eps);
                    let y = &node.value.data()[range.clone()];
                    let gy = &g.data()[range.clone()];
                    let mean_g: T = gy.iter().copied().sum::<T>() * inv_plane;
                    let mean_gy: T = gy.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>() * inv_plane;
                    for ((d, &gv), &yv) in dx.data_mut()[range].iter_mut().zip(gy).zip(y) {
                        *d = inv_std * (gv - mean_g - yv * mean_gy);
                    }
                }
                send(*x, dx);
            }
            Op::MeanAbsDiff(a, b) => {
                let up = g.data()[0];
                let da = losses::mean_abs_diff_grad(self.value(*a), self.value(*b))?.map(|v| v * up);
                if self.rg(*b) {
                    send(*b, da.map(|v| -v));
                }
                send(*a, da);
            }
            Op::TaskLoss {
                logits,
                labels,
                dice_eps,
            } => {
                let up = g.data()[0];
                let d = losses::task_loss_grad(self.value(*logits), labels, *dice_eps)?;
                send(*logits, d.map(|v| v * up));
            }
            Op::SymKl(a, b, floor) => {
                let up = g.data()[0];
                let (da, db) = losses::prediction_consistency_grad(self.value(*a), self.value(*b), *floor)?;
                send(*a, da.map(|v| v * up));
                send(*b, db.map(|v| v * up));
            }
            Op::WeightedSum(terms) => {
                let up = g.data()[0];
                for &(v, w) in terms {
                    if w != T::zero() {
                        send(v, Tensor::scalar(up * w));
                    }
                }
            }
        }
        Ok(())
    }
}

fn moments<T: Scalar>(xs: &[T], eps: T) -> (T, T) {
    let n = T::from_usize(xs.len()).unwrap();
    let mean = xs.iter().copied().sum::<T>() / n;
    let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient collected at a leaf created with [`Graph::leaf`] or [`Graph::param`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every trainable parameter used in `graph`.
    pub fn params(&self, graph: &Graph<T>, store_len: usize) -> ParamGrads<T> {
        let mut out = ParamGrads::new(store_len);
        for (&id, &v) in &graph.params {
            if let Some(g) = self.wrt(v) {
                out.accumulate(id, g);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut s = seed.wrapping_add(0x9E3779B97F4A7C15);
        Tensor::from_fn(shape, |_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s % 10_000) as f64 / 5_000.0 - 1.0
        })
    }

    /// Checks d(Σ r ⊙ f(x))/dx against central differences, with `r` a fixed
    /// random tensor. The sum is realised as `len · mean|r⊙f(x) − (−1e6)|`,
    /// which is smooth because every difference is positive.
    fn check(build: impl Fn(&mut Graph<f64>, Var) -> Var, input: Tensor<f64>) {
        let weights = rand_tensor(&[4096], 99);
        let weighted = |g: &mut Graph<f64>, x: Var| -> Var {
            let out = build(g, x);
            let shape = g.value(out).shape().to_vec();
            let w = Tensor::from_vec(&shape, weights.data()[..g.value(out).len()].to_vec()).unwrap();
            let wv = g.input(w);
            g.mul(out, wv).unwrap()
        };
        let eval = |x: &Tensor<f64>| -> f64 {
            let mut g = Graph::inference();
            let xv = g.input(x.clone());
            let p = weighted(&mut g, xv);
            g.value(p).sum()
        };
        let mut g = Graph::inference();
        let xv = g.leaf(input.clone());
        let p = weighted(&mut g, xv);
        let len = g.value(p).len() as f64;
        let floor = g.input(Tensor::full(g.value(p).shape(), -1e6));
        let total = g.mean_abs_diff(p, floor).unwrap();
        let analytic = g.backward(total).unwrap().wrt(xv).unwrap().map(|v| v * len);
        let h = 1e-5;
        for i in 0..input.len() {
            let mut plus = input.clone();
            plus.data_mut()[i] += h;
            let mut minus = input.clone();
            minus.data_mut()[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!((fd - a).abs() < 1e-6 * (1.0 + fd.abs()), "element {i}: fd {fd} vs analytic {a}");
        }
    }

    #[test]
    fn conv_gradients() {
        let w = rand_tensor(&[3, 2, 3, 3], 1);
        let b = rand_tensor(&[3], 2);
        for &(stride, pad) in &[(1, 1), (2, 1)] {
            check(
                |g, x| {
                    let wv = g.input(w.clone());
                    let bv = g.input(b.clone());
                    g.conv2d(x, wv, Some(bv), stride, pad).unwrap()
                },
                rand_tensor(&[2, 2, 5, 4], 3),
            );
        }
    }

    #[test]
    fn pointwise_ops_gradients() {
        let other = rand_tensor(&[1, 2, 3, 3], 4);
        check(
            |g, x| {
                let o = g.input(other.clone());
                let s = g.sigmoid(x);
                let t = g.tanh(x);
                let m = g.mul(s, t).unwrap();
                let a = g.add(m, o).unwrap();
                let r = g.relu(a);
                let d = g.sub(r, x).unwrap();
                g.affine(d, 0.5, 1.0)
            },
            rand_tensor(&[1, 2, 3, 3], 5),
        );
    }

    #[test]
    fn structural_ops_gradients() {
        let other = rand_tensor(&[1, 1, 3, 3], 6);
        check(
            |g, x| {
                let o = g.input(other.clone());
                let c = g.concat(&[x, o, x]).unwrap();
                let n = g.instance_norm(c, 1e-5);
                g.upsample2x(n)
            },
            rand_tensor(&[1, 2, 3, 3], 7),
        );
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        use crate::nn::{NetGroup, ParamStore};
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", NetGroup::EventEncoder, rand_tensor(&[2, 1, 1, 1], 1));
        let b = store.add("b", NetGroup::TaskDecoder, rand_tensor(&[2, 2, 1, 1], 2));
        let mut g = Graph::new(GroupMask::of(&[NetGroup::TaskDecoder]));
        let x = g.input(rand_tensor(&[1, 1, 2, 2], 3));
        let av = g.param(&store, a);
        let bv = g.param(&store, b);
        let h = g.conv2d(x, av, None, 1, 0).unwrap();
        let y = g.conv2d(h, bv, None, 1, 0).unwrap();
        let t = g.input(Tensor::zeros(g.value(y).shape()));
        let l = g.mean_abs_diff(y, t).unwrap();
        let grads = g.backward(l).unwrap().params(&g, store.len());
        assert!(grads.get(a).is_none());
        assert!(grads.get(b).is_some());
    }
}
