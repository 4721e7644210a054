//! Reconstruction pretext task for the event encoder and reconstruction
//! decoder: from a grid sequence, reconstruct the frame at its end.
//!
//! The objective is the mean absolute error between the reconstruction and
//! the frame. Only the two event-side networks are updated.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Graph;
use crate::datasets::TargetSample;
use crate::error::{Error, Result};
use crate::models::EssModel;
use crate::nn::{GroupMask, NetGroup, RAdam, RAdamConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Recorded recurrent steps per sequence; `None` backpropagates through all.
    pub bptt: Option<usize>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            iterations: 600,
            batch_size: 8,
            lr: 1e-3,
            bptt: Some(4),
            seed: 0,
        }
    }
}

/// Loss after each iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainReport {
    pub losses: Vec<f64>,
}

impl PretrainReport {
    /// Mean of the last `n` losses.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let tail = &self.losses[self.losses.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

fn batch<T: Scalar>(data: &[TargetSample<T>], idx: &[usize]) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
    let steps = data[idx[0]].grids.len();
    let grids = (0..steps)
        .map(|s| {
            let ts: Vec<Tensor<T>> = idx.iter().map(|&i| data[i].grids[s].to_tensor()).collect();
            Tensor::stack_batch(&ts.iter().collect::<Vec<_>>())
        })
        .collect::<Result<_>>()?;
    let frames: Vec<Tensor<T>> = idx
        .iter()
        .map(|&i| {
            data[i]
                .paired_image
                .as_ref()
                .map(|img| img.to_tensor())
                .ok_or_else(|| Error::validation("pretext samples need their final frame"))
        })
        .collect::<Result<_>>()?;
    Ok((grids, Tensor::stack_batch(&frames.iter().collect::<Vec<_>>())?))
}

/// Mean absolute reconstruction error over `data`, in batches.
pub fn reconstruction_error<T: Scalar>(model: &EssModel<T>, data: &[TargetSample<T>]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in (0..data.len()).collect::<Vec<_>>().chunks(8) {
        let (grids, frames) = batch(data, chunk)?;
        let rec = model.reconstruct(&model.encode_events(&grids)?)?;
        total += crate::losses::mean_abs_diff(&rec, &frames)?.as_f64() * chunk.len() as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

pub fn pretrain_reconstruction<T: Scalar>(
    model: &mut EssModel<T>,
    data: &[TargetSample<T>],
    config: &PretrainConfig,
) -> Result<PretrainReport> {
    if data.is_empty() || config.batch_size == 0 {
        return Err(Error::validation("pretext training needs data and a positive batch size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = RAdam::new(RAdamConfig::default());
    let mask = GroupMask::of(&[NetGroup::EventEncoder, NetGroup::ReconDecoder]);
    let mut report = PretrainReport::default();
    for it in 0..config.iterations {
        let idx = sample(&mut rng, data.len(), config.batch_size.min(data.len())).into_vec();
        let (grids, frames) = batch(data, &idx)?;
        let mut g = Graph::new(mask);
        let z = model.graph_encode_events(&mut g, &grids, config.bptt)?;
        let rec = model.graph_reconstruct(&mut g, &z)?;
        let target = g.input(frames);
        let loss = g.mean_abs_diff(rec, target)?;
        let value = g.value(loss).data()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("reconstruction loss is {value} at iteration {it}")));
        }
        let grads = g.backward(loss)?.params(&g, model.store().len());
        opt.step(model.store_mut(), &grads, |group| if mask.contains(group) { config.lr } else { 0.0 });
        report.losses.push(value);
        if (it + 1) % 50 == 0 {
            log::info!("pretext iteration {}: loss {:.4}", it + 1, report.tail_mean(50));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_pretext, TargetConfig};
    use crate::models::ModelConfig;

    #[test]
    fn pretext_training_reduces_error_and_touches_only_event_networks() {
        let cfg = TargetConfig {
            n_grids: 2,
            events_per_window: 1500,
            ..TargetConfig::default()
        };
        let data: Vec<TargetSample<f32>> = make_pretext(4, 4, &cfg).unwrap();
        let mut m: EssModel<f32> = EssModel::new(ModelConfig::default(), 1).unwrap();
        let before = m.clone();
        let e0 = reconstruction_error(&m, &data).unwrap();
        let pc = PretrainConfig {
            iterations: 40,
            batch_size: 4,
            bptt: None,
            ..PretrainConfig::default()
        };
        pretrain_reconstruction(&mut m, &data, &pc).unwrap();
        let e1 = reconstruction_error(&m, &data).unwrap();
        assert!(e1 < 0.9 * e0, "{e0} -> {e1}");
        for g in [NetGroup::ImageEncoder, NetGroup::TaskDecoder] {
            assert_eq!(m.store().group_bytes(g), before.store().group_bytes(g));
        }
        assert_ne!(
            m.store().group_bytes(NetGroup::EventEncoder),
            before.store().group_bytes(NetGroup::EventEncoder)
        );
    }
}
