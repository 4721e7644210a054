use std::collections::HashMap;

use crate::nn::{NetGroup, ParamGrads, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RAdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        RAdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Moments<T> {
    pub step: u64,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// Adam with variance rectification: plain momentum steps while the
/// second-moment estimate is unreliable, rectified adaptive steps afterwards.
#[derive(Clone, Debug)]
pub struct RAdam<T> {
    config: RAdamConfig,
    pub(crate) state: HashMap<ParamId, Moments<T>>,
}

impl<T: Scalar> RAdam<T> {
    pub fn new(config: RAdamConfig) -> Self {
        RAdam {
            config,
            state: HashMap::new(),
        }
    }

    pub fn config(&self) -> RAdamConfig {
        self.config
    }

    /// Applies one update to every parameter that has a gradient, using the
    /// learning rate returned by `lr` for that parameter's network.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>, lr: impl Fn(NetGroup) -> f64) {
        let RAdamConfig { beta1, beta2, eps } = self.config;
        let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
        for (id, g) in grads.iter() {
            let rate = lr(store.group(id));
            if rate == 0.0 {
                continue;
            }
            let st = self.state.entry(id).or_insert_with(|| Moments {
                step: 0,
                m: Tensor::zeros(g.shape()),
                v: Tensor::zeros(g.shape()),
            });
            st.step += 1;
            let t = st.step as f64;
            let b1t = beta1.powf(t);
            let b2t = beta2.powf(t);
            let rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
            let rect = (rho_t > 5.0).then(|| {
                ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt()
            });
            let (b1, b2) = (T::lit(beta1), T::lit(beta2));
            let step_size = T::lit(rate / (1.0 - b1t));
            let bias2 = T::lit((1.0 - b2t).sqrt());
            let rect_t = rect.map(T::lit);
            let eps_t = T::lit(eps);
            let param = store.get_mut(id);
            let (m, v) = (st.m.data_mut(), st.v.data_mut());
            for (((p, &gi), mi), vi) in param.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                match rect_t {
                    Some(r) => *p -= step_size * r * *mi * bias2 / (vi.sqrt() + eps_t),
                    None => *p -= step_size * *mi,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", NetGroup::TaskDecoder, Tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap());
        let mut opt = RAdam::new(RAdamConfig::default());
        for _ in 0..2000 {
            let mut grads = ParamGrads::new(1);
            grads.accumulate(id, &store.get(id).map(|v| 2.0 * v));
            opt.step(&mut store, &grads, |_| 0.05);
        }
        assert!(store.get(id).max_abs() < 1e-2, "{:?}", store.get(id));
    }

    #[test]
    fn zero_rate_leaves_group_untouched() {
        let mut store = ParamStore::<f32>::new();
        let a = store.add("a", NetGroup::EventEncoder, Tensor::full(&[3], 1.0));
        let b = store.add("b", NetGroup::TaskDecoder, Tensor::full(&[3], 1.0));
        let mut grads = ParamGrads::new(2);
        grads.accumulate(a, &Tensor::full(&[3], 1.0));
        grads.accumulate(b, &Tensor::full(&[3], 1.0));
        let mut opt = RAdam::new(RAdamConfig::default());
        opt.step(&mut store, &grads, |g| if g == NetGroup::EventEncoder { 0.0 } else { 0.1 });
        assert_eq!(store.get(a).data(), &[1.0, 1.0, 1.0]);
        assert!(store.get(b).data()[0] < 1.0);
    }
}
