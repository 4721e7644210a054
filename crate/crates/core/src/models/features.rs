use crate::datasets::TargetSet;
use crate::error::{Error, Result};
use crate::models::{EssModel, MultiScaleEmbedding};
use crate::nn::NetGroup;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Outputs of the frozen event-side networks for every sample of a target
/// set: the final embedding and the reconstructed frame.
///
/// Valid only while the event encoder and reconstruction decoder keep the
/// parameters they had when the cache was built; [`FrozenFeatures::check`]
/// compares a fingerprint of those parameters.
#[derive(Clone, Debug)]
pub struct FrozenFeatures<T> {
    fingerprint: u64,
    embeddings: Vec<MultiScaleEmbedding<T>>,
    reconstructions: Vec<Tensor<T>>,
}

/// FNV-1a over the parameter bytes of the event-side networks.
pub fn event_side_fingerprint<T: Scalar>(model: &EssModel<T>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for g in [NetGroup::EventEncoder, NetGroup::ReconDecoder] {
        for b in model.store().group_bytes(g) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

const CHUNK: usize = 8;

impl<T: Scalar> FrozenFeatures<T> {
    pub fn compute(model: &EssModel<T>, set: &TargetSet<T>) -> Result<Self> {
        let mut embeddings = Vec::with_capacity(set.len());
        let mut reconstructions = Vec::with_capacity(set.len());
        let idx: Vec<usize> = (0..set.len()).collect();
        for chunk in idx.chunks(CHUNK) {
            let steps = chunk.iter().map(|&i| set.grids(i).len()).min().unwrap_or(0);
            if chunk.iter().any(|&i| set.grids(i).len() != steps) {
                return Err(Error::validation("samples of a set must have equal grid counts"));
            }
            let grids = (0..steps).map(|s| set.grid_batch(chunk, s)).collect::<Result<Vec<_>>>()?;
            let z = model.encode_events(&grids)?;
            let rec = model.reconstruct(&z)?;
            for k in 0..chunk.len() {
                embeddings.push(z.batch_item(k));
                reconstructions.push(rec.batch_item(k));
            }
        }
        Ok(FrozenFeatures {
            fingerprint: event_side_fingerprint(model),
            embeddings,
            reconstructions,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn check(&self, model: &EssModel<T>) -> Result<()> {
        if event_side_fingerprint(model) != self.fingerprint {
            return Err(Error::validation("cached event features are stale for this model"));
        }
        Ok(())
    }

    pub fn embedding(&self, i: usize) -> &MultiScaleEmbedding<T> {
        &self.embeddings[i]
    }

    pub fn reconstruction(&self, i: usize) -> &Tensor<T> {
        &self.reconstructions[i]
    }

    pub fn embedding_batch(&self, idx: &[usize]) -> Result<MultiScaleEmbedding<T>> {
        MultiScaleEmbedding::stack(&idx.iter().map(|&i| &self.embeddings[i]).collect::<Vec<_>>())
    }

    pub fn reconstruction_batch(&self, idx: &[usize]) -> Result<Tensor<T>> {
        Tensor::stack_batch(&idx.iter().map(|&i| &self.reconstructions[i]).collect::<Vec<_>>())
    }
}
