use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::nn::{NetGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Square-kernel 2-D convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    /// Fan-in normal initialisation, `std = gain · sqrt(2 / fan_in)`; zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        group: NetGroup,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
    ) -> Self {
        let fan_in = (cin * kernel * kernel) as f64;
        let normal = Normal::new(0.0, gain * (2.0 / fan_in).sqrt()).expect("valid std");
        let w = Tensor::from_fn(&[cout, cin, kernel, kernel], |_| T::lit(normal.sample(rng)));
        Conv2d {
            weight: store.add(format!("{name}.weight"), group, w),
            bias: store.add(format!("{name}.bias"), group, Tensor::zeros(&[cout])),
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

pub const NORM_EPS: f64 = 1e-5;

/// `x + conv(relu(norm(conv(x))))`, with a strided 1×1 projection on the identity
/// path when the block changes resolution or width.
///
/// The block output is not rectified, so the embeddings built from these
/// blocks can take negative values.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    proj: Option<Conv2d>,
}

impl ResidualBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        group: NetGroup,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Self {
        let conv1 = Conv2d::new(store, rng, &format!("{name}.conv1"), group, cin, cout, 3, stride, 1.0);
        // small residual branch at init keeps deep stacks well conditioned
        let conv2 = Conv2d::new(store, rng, &format!("{name}.conv2"), group, cout, cout, 3, 1, 0.25);
        let proj = (cin != cout || stride != 1)
            .then(|| Conv2d::new(store, rng, &format!("{name}.proj"), group, cin, cout, 1, stride, 0.5));
        ResidualBlock { conv1, conv2, proj }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, store, x)?;
        let h = g.instance_norm(h, T::lit(NORM_EPS));
        let h = g.relu(h);
        let h = self.conv2.forward(g, store, h)?;
        let skip = match &self.proj {
            Some(p) => p.forward(g, store, x)?,
            None => x,
        };
        g.add(h, skip)
    }
}

/// Convolutional gated recurrent unit.
///
/// `z = σ(Wz∗[x,h])`, `r = σ(Wr∗[x,h])`, `n = tanh(Wn∗[x, r⊙h])`,
/// `h' = h + z⊙(n − h)`.
#[derive(Clone, Debug)]
pub struct ConvGru {
    update: Conv2d,
    reset: Conv2d,
    candidate: Conv2d,
}

impl ConvGru {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        group: NetGroup,
        input: usize,
        hidden: usize,
    ) -> Self {
        let cin = input + hidden;
        ConvGru {
            update: Conv2d::new(store, rng, &format!("{name}.update"), group, cin, hidden, 3, 1, 0.5),
            reset: Conv2d::new(store, rng, &format!("{name}.reset"), group, cin, hidden, 3, 1, 0.5),
            candidate: Conv2d::new(store, rng, &format!("{name}.candidate"), group, cin, hidden, 3, 1, 0.5),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, h: Var) -> Result<Var> {
        let xh = g.concat(&[x, h])?;
        let z = self.update.forward(g, store, xh)?;
        let z = g.sigmoid(z);
        let r = self.reset.forward(g, store, xh)?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, h)?;
        let xrh = g.concat(&[x, rh])?;
        let n = self.candidate.forward(g, store, xrh)?;
        let n = g.tanh(n);
        let delta = g.sub(n, h)?;
        let step = g.mul(z, delta)?;
        g.add(h, step)
    }
}
