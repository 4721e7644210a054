//! Training objectives: supervised task loss, the three consistency terms
//! and their weighted total.
//!
//! Every loss has a value function and a hand-derived gradient. The autodiff
//! graph calls both as fused operations, so the gradients checked against
//! finite differences here are exactly the ones used during training.
//!
//! Logit tensors are `[batch, classes, height, width]`. Batched losses are
//! the mean of the per-sample losses.

use crate::error::{Error, Result};
use crate::models::MultiScaleEmbedding;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_DICE_EPS: f64 = 1e-6;
pub const DEFAULT_PROB_FLOOR: f64 = 1e-8;

/// Weights of the four terms in the total objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub task: f64,
    pub cons_emb: f64,
    pub cons_pred: f64,
    pub cons_task: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            task: 1.0,
            cons_emb: 1.0,
            cons_pred: 1.0,
            cons_task: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(task: f64, cons_emb: f64, cons_pred: f64, cons_task: f64) -> Result<Self> {
        let w = LossWeights {
            task,
            cons_emb,
            cons_pred,
            cons_task,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.as_array();
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation(format!(
                "loss weights must be finite and non-negative: {all:?}"
            )));
        }
        if all.iter().all(|v| *v == 0.0) {
            return Err(Error::validation("at least one loss weight must be positive"));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.task, self.cons_emb, self.cons_pred, self.cons_task]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        LossWeights {
            task: self.task * factor,
            cons_emb: self.cons_emb * factor,
            cons_pred: self.cons_pred * factor,
            cons_task: self.cons_task * factor,
        }
    }
}

/// The four loss values of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub task: f64,
    pub cons_emb: f64,
    pub cons_pred: f64,
    pub cons_task: f64,
}

impl LossParts {
    pub fn as_array(&self) -> [f64; 4] {
        [self.task, self.cons_emb, self.cons_pred, self.cons_task]
    }
}

/// Weighted sum of the loss parts.
///
/// Any non-finite part aborts with a numeric error naming the offending term.
pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> Result<f64> {
    const NAMES: [&str; 4] = ["task", "cons_emb", "cons_pred", "cons_task"];
    let values = parts.as_array();
    for (name, v) in NAMES.iter().zip(values) {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss term `{name}` is {v}")));
        }
    }
    Ok(values
        .iter()
        .zip(weights.as_array())
        .map(|(v, w)| v * w)
        .sum())
}

fn check_logits<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> Result<(usize, usize, usize)> {
    if logits.shape().len() != 4 {
        return Err(Error::validation(format!(
            "logits must be [batch, classes, h, w], got {:?}",
            logits.shape()
        )));
    }
    let (n, c, h, w) = logits.dims4();
    if labels.len() != n * h * w {
        return Err(Error::validation(format!(
            "labels have {} entries, logits cover {} pixels",
            labels.len(),
            n * h * w
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(Error::validation(format!("label {bad} outside [0, {c})")));
    }
    Ok((n, c, h * w))
}

/// Per-pixel softmax over the class axis of one sample, written into `out`.
fn softmax_sample<T: Scalar>(logits: &[T], classes: usize, pixels: usize, out: &mut [T]) {
    for p in 0..pixels {
        let mut max = T::neg_infinity();
        for k in 0..classes {
            max = max.max(logits[k * pixels + p]);
        }
        let mut z = T::zero();
        for k in 0..classes {
            let e = (logits[k * pixels + p] - max).exp();
            out[k * pixels + p] = e;
            z += e;
        }
        for k in 0..classes {
            out[k * pixels + p] /= z;
        }
    }
}

/// Class probabilities of a logit tensor.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = logits.dims4();
    let per = c * h * w;
    let mut out = Tensor::zeros(logits.shape());
    for s in 0..n {
        softmax_sample(
            &logits.data()[s * per..(s + 1) * per],
            c,
            h * w,
            &mut out.data_mut()[s * per..(s + 1) * per],
        );
    }
    out
}

/// Mean per-pixel cross-entropy.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> Result<T> {
    let (n, c, pixels) = check_logits(logits, labels)?;
    let mut total = T::zero();
    for s in 0..n {
        let lg = &logits.data()[s * c * pixels..(s + 1) * c * pixels];
        for p in 0..pixels {
            let mut max = T::neg_infinity();
            for k in 0..c {
                max = max.max(lg[k * pixels + p]);
            }
            let lse = (0..c).map(|k| (lg[k * pixels + p] - max).exp()).sum::<T>().ln() + max;
            total += lse - lg[labels[s * pixels + p] as usize * pixels + p];
        }
    }
    Ok(total / T::from_usize(n * pixels).unwrap())
}

/// Macro-averaged soft Dice loss, `1 - mean_k (2·Σpg + ε) / (Σp + Σg + ε)`.
pub fn dice_loss<T: Scalar>(logits: &Tensor<T>, labels: &[u8], eps: f64) -> Result<T> {
    let (n, c, pixels) = check_logits(logits, labels)?;
    let eps = T::lit(eps);
    let probs = softmax(logits);
    let mut total = T::zero();
    for s in 0..n {
        let pr = &probs.data()[s * c * pixels..(s + 1) * c * pixels];
        let lb = &labels[s * pixels..(s + 1) * pixels];
        let mut score = T::zero();
        for k in 0..c {
            let (inter, psum, gsum) = dice_sums(pr, lb, k, pixels);
            score += (T::lit(2.0) * inter + eps) / (psum + gsum + eps);
        }
        total += T::one() - score / T::from_usize(c).unwrap();
    }
    Ok(total / T::from_usize(n).unwrap())
}

fn dice_sums<T: Scalar>(probs: &[T], labels: &[u8], class: usize, pixels: usize) -> (T, T, T) {
    let mut inter = T::zero();
    let mut psum = T::zero();
    let mut gsum = T::zero();
    for p in 0..pixels {
        let pk = probs[class * pixels + p];
        psum += pk;
        if labels[p] as usize == class {
            inter += pk;
            gsum += T::one();
        }
    }
    (inter, psum, gsum)
}

/// Cross-entropy plus soft Dice; non-negative.
pub fn task_loss<T: Scalar>(logits: &Tensor<T>, labels: &[u8], dice_eps: f64) -> Result<T> {
    Ok(cross_entropy(logits, labels)? + dice_loss(logits, labels, dice_eps)?)
}

/// Gradient of [`task_loss`] with respect to the logits.
pub fn task_loss_grad<T: Scalar>(logits: &Tensor<T>, labels: &[u8], dice_eps: f64) -> Result<Tensor<T>> {
    let (n, c, pixels) = check_logits(logits, labels)?;
    let eps = T::lit(dice_eps);
    let probs = softmax(logits);
    let mut grad = Tensor::zeros(logits.shape());
    let inv_pix = T::one() / T::from_usize(n * pixels).unwrap();
    let inv_c = T::one() / T::from_usize(c).unwrap();
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let two = T::lit(2.0);
    let mut coef = vec![(T::zero(), T::zero()); c];
    let mut dprob = vec![T::zero(); c];
    for s in 0..n {
        let range = s * c * pixels..(s + 1) * c * pixels;
        let pr = &probs.data()[range.clone()];
        let lb = &labels[s * pixels..(s + 1) * pixels];
        // d dice / d p_k(pixel) = -(1/c) * (2 g (S+ε) - (2I+ε)) / (S+ε)^2
        for (k, slot) in coef.iter_mut().enumerate() {
            let (inter, psum, gsum) = dice_sums(pr, lb, k, pixels);
            let denom = psum + gsum + eps;
            *slot = (two / denom, (two * inter + eps) / (denom * denom));
        }
        let g = &mut grad.data_mut()[range];
        for p in 0..pixels {
            let label = lb[p] as usize;
            let mut dot = T::zero();
            for k in 0..c {
                let gk = if k == label { T::one() } else { T::zero() };
                let (a, b) = coef[k];
                dprob[k] = -(a * gk - b) * inv_c * inv_n;
                dot += dprob[k] * pr[k * pixels + p];
            }
            for k in 0..c {
                let pk = pr[k * pixels + p];
                let gk = if k == label { T::one() } else { T::zero() };
                g[k * pixels + p] = (pk - gk) * inv_pix + pk * (dprob[k] - dot);
            }
        }
    }
    Ok(grad)
}

fn check_same<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::validation(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean absolute difference between two equally shaped tensors.
pub fn mean_abs_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    check_same(a, b, "mean_abs_diff")?;
    let sum: T = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).sum();
    Ok(sum / T::from_usize(a.len().max(1)).unwrap())
}

/// Gradient of [`mean_abs_diff`] with respect to `a`; the gradient for `b` is its negation.
pub fn mean_abs_diff_grad<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same(a, b, "mean_abs_diff")?;
    let inv = T::one() / T::from_usize(a.len().max(1)).unwrap();
    Ok(a.zip_map(b, |x, y| {
        let d = x - y;
        if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        }
    }))
}

/// L1 consistency between two multi-scale embeddings: the sum over levels
/// of the per-level mean absolute difference.
pub fn embedding_consistency<T: Scalar>(
    z_event: &MultiScaleEmbedding<T>,
    z_reencoded: &MultiScaleEmbedding<T>,
) -> Result<T> {
    let mut total = T::zero();
    for (a, b) in z_event.levels().iter().zip(z_reencoded.levels()) {
        total += mean_abs_diff(a, b)?;
    }
    Ok(total)
}

/// L1 consistency between the intermediate decoder features of two branches:
/// the sum over feature maps of their mean absolute difference.
pub fn task_feature_consistency<T: Scalar>(feats_a: &[Tensor<T>], feats_b: &[Tensor<T>]) -> Result<T> {
    if feats_a.len() != feats_b.len() {
        return Err(Error::validation(format!(
            "feature lists differ in length: {} vs {}",
            feats_a.len(),
            feats_b.len()
        )));
    }
    let mut total = T::zero();
    for (a, b) in feats_a.iter().zip(feats_b) {
        total += mean_abs_diff(a, b)?;
    }
    Ok(total)
}

fn floored_probs<T: Scalar>(logits: &Tensor<T>, floor: T) -> (Tensor<T>, Tensor<T>) {
    let raw = softmax(logits);
    let floored = raw.map(|p| p.max(floor));
    (raw, floored)
}

/// Symmetric KL divergence `½KL(P‖Q) + ½KL(Q‖P)` between the per-pixel class
/// distributions of two logit tensors, averaged over pixels and batch.
///
/// Probabilities are floored at `floor` before taking logarithms.
pub fn prediction_consistency<T: Scalar>(logits_a: &Tensor<T>, logits_b: &Tensor<T>, floor: f64) -> Result<T> {
    check_same(logits_a, logits_b, "prediction_consistency")?;
    let (n, _, h, w) = logits_a.dims4();
    let floor = T::lit(floor);
    let (_, p) = floored_probs(logits_a, floor);
    let (_, q) = floored_probs(logits_b, floor);
    let half = T::lit(0.5);
    let sum: T = p
        .data()
        .iter()
        .zip(q.data())
        .map(|(&pk, &qk)| half * (pk - qk) * (pk.ln() - qk.ln()))
        .sum();
    Ok(sum / T::from_usize(n * h * w).unwrap())
}

/// Gradients of [`prediction_consistency`] with respect to both logit tensors.
pub fn prediction_consistency_grad<T: Scalar>(
    logits_a: &Tensor<T>,
    logits_b: &Tensor<T>,
    floor: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_same(logits_a, logits_b, "prediction_consistency")?;
    let (n, c, h, w) = logits_a.dims4();
    let pixels = h * w;
    let floor = T::lit(floor);
    let (p_raw, p) = floored_probs(logits_a, floor);
    let (q_raw, q) = floored_probs(logits_b, floor);
    let scale = T::one() / T::from_usize(n * pixels).unwrap();
    let half = T::lit(0.5);
    // d/dP_k [½ Σ (P-Q)(ln P - ln Q)] = ½ (ln P_k - ln Q_k + (P_k - Q_k)/P_k)
    let dp = Tensor::from_fn(p.shape(), |i| {
        if p_raw.data()[i] < floor {
            return T::zero();
        }
        let (pk, qk) = (p.data()[i], q.data()[i]);
        half * (pk.ln() - qk.ln() + (pk - qk) / pk) * scale
    });
    let dq = Tensor::from_fn(q.shape(), |i| {
        if q_raw.data()[i] < floor {
            return T::zero();
        }
        let (pk, qk) = (p.data()[i], q.data()[i]);
        half * (qk.ln() - pk.ln() + (qk - pk) / qk) * scale
    });
    Ok((
        softmax_backward(&p_raw, &dp, n, c, pixels),
        softmax_backward(&q_raw, &dq, n, c, pixels),
    ))
}

/// Chain rule through a per-pixel softmax: `dz_k = p_k (dp_k - Σ_j p_j dp_j)`.
fn softmax_backward<T: Scalar>(probs: &Tensor<T>, dprobs: &Tensor<T>, n: usize, c: usize, pixels: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(probs.shape());
    let (pd, gd) = (probs.data(), dprobs.data());
    let od = out.data_mut();
    for s in 0..n {
        let base = s * c * pixels;
        for p in 0..pixels {
            let dot: T = (0..c).map(|k| pd[base + k * pixels + p] * gd[base + k * pixels + p]).sum();
            for k in 0..c {
                let i = base + k * pixels + p;
                od[i] = pd[i] * (gd[i] - dot);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(shape, |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        })
    }

    #[test]
    fn uniform_logits_give_log_c_cross_entropy() {
        let logits = Tensor::<f64>::zeros(&[1, 5, 3, 3]);
        let labels = vec![2u8; 9];
        let ce = cross_entropy(&logits, &labels).unwrap();
        assert!((ce - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_limit() {
        let labels: Vec<u8> = (0..16).map(|i| (i % 3) as u8).collect();
        let mut prev = f64::INFINITY;
        for mag in [1.0, 5.0, 20.0, 60.0] {
            let logits = Tensor::from_fn(&[1, 3, 4, 4], |i| {
                let (k, p) = (i / 16, i % 16);
                if labels[p] as usize == k {
                    mag
                } else {
                    0.0
                }
            });
            let l = task_loss(&logits, &labels, DEFAULT_DICE_EPS).unwrap();
            assert!(l >= 0.0 && l < prev);
            prev = l;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let logits = Tensor::<f32>::zeros(&[1, 3, 2, 2]);
        assert!(task_loss(&logits, &[0, 1, 2, 3], DEFAULT_DICE_EPS).is_err());
    }

    #[test]
    fn hand_evaluated_dice_on_two_pixels() {
        // two pixels, two classes, p = (0.5, 0.5) everywhere; labels (0, 1)
        let logits = Tensor::<f64>::zeros(&[1, 2, 1, 2]);
        let d = dice_loss(&logits, &[0, 1], 0.0).unwrap();
        // per class: inter 0.5, psum 1, gsum 1 -> 0.5
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_is_zero_on_identity_and_symmetric() {
        let a = tensor(&[2, 4, 3, 3], 1);
        let b = tensor(&[2, 4, 3, 3], 2);
        assert!(prediction_consistency(&a, &a, DEFAULT_PROB_FLOOR).unwrap().abs() < 1e-15);
        let ab = prediction_consistency(&a, &b, DEFAULT_PROB_FLOOR).unwrap();
        let ba = prediction_consistency(&b, &a, DEFAULT_PROB_FLOOR).unwrap();
        assert!(ab > 0.0);
        assert!((ab - ba).abs() < 1e-8);
    }

    #[test]
    fn kl_is_shift_invariant_per_pixel() {
        let a = tensor(&[1, 3, 4, 4], 3);
        let b = tensor(&[1, 3, 4, 4], 4);
        let shifts = tensor(&[1, 1, 4, 4], 5);
        let shifted = Tensor::from_fn(a.shape(), |i| a.data()[i] + 10.0 * shifts.data()[i % 16]);
        let x = prediction_consistency(&a, &b, DEFAULT_PROB_FLOOR).unwrap();
        let y = prediction_consistency(&shifted, &b, DEFAULT_PROB_FLOOR).unwrap();
        assert!((x - y).abs() < 1e-10);
    }

    #[test]
    fn feature_consistency_closed_form_and_additivity() {
        let a = tensor(&[1, 2, 3, 3], 6);
        let b = a.map(|v| v + 0.25);
        assert!((task_feature_consistency(&[a.clone()], &[b.clone()]).unwrap() - 0.25).abs() < 1e-12);
        let c = tensor(&[1, 1, 2, 2], 7);
        let d = tensor(&[1, 1, 2, 2], 8);
        let joint = task_feature_consistency(&[a.clone(), c.clone()], &[b.clone(), d.clone()]).unwrap();
        let split = task_feature_consistency(&[a], &[b]).unwrap() + task_feature_consistency(&[c], &[d]).unwrap();
        assert!((joint - split).abs() < 1e-12);
        assert!(task_feature_consistency::<f64>(&[], &[tensor(&[1], 0)]).is_err());
    }

    #[test]
    fn total_loss_is_linear_and_rejects_nan() {
        let parts = LossParts {
            task: 1.0,
            cons_emb: 1.0,
            cons_pred: 1.0,
            cons_task: 1.0,
        };
        let w = LossWeights::new(1.0, 2.0, 3.0, 4.0).unwrap();
        assert_eq!(total_loss(&parts, &w).unwrap(), 10.0);
        assert_eq!(total_loss(&parts, &w.scaled(2.0)).unwrap(), 20.0);
        let only_task = LossWeights::new(1.0, 0.0, 0.0, 0.0).unwrap();
        let p2 = LossParts {
            task: 0.7,
            cons_emb: 3.0,
            cons_pred: 5.0,
            cons_task: 9.0,
        };
        assert_eq!(total_loss(&p2, &only_task).unwrap(), 0.7);
        let bad = LossParts {
            cons_pred: f64::NAN,
            ..parts
        };
        assert!(matches!(total_loss(&bad, &w), Err(Error::Numeric(_))));
        assert!(LossWeights::new(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0, 0.0, 0.0).is_err());
    }
}
