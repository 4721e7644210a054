use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::checkpoint::Checkpoint;
use crate::models::EssModel;
use crate::nn::{RAdam, RAdamConfig};
use crate::scalar::Scalar;
use crate::trainer::{Stage, TrainConfig};

/// Everything a run needs to continue bit-identically after a restart.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub model: EssModel<T>,
    /// One set of moment estimates per stage, indexed by [`Stage::index`];
    /// the stages optimise different objectives.
    pub(crate) optimizers: [RAdam<T>; 3],
    pub(crate) rng: ChaCha8Rng,
    /// Completed iterations.
    pub iteration: usize,
}

fn opt_key(kind: &str, stage: Stage, name: &str) -> String {
    format!("optim.{}.{kind}.{name}", stage.key())
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: EssModel<T>, config: &TrainConfig) -> Self {
        TrainState {
            model,
            optimizers: [0; 3].map(|_| RAdam::new(config.radam)),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            iteration: 0,
        }
    }

    pub fn optimizer_config(&self) -> RAdamConfig {
        self.optimizers[0].config()
    }

    /// Model parameters, optimizer moments, RNG position and iteration.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        let store = self.model.store();
        for stage in Stage::ALL {
            for (id, st) in &self.optimizers[stage.index()].state {
                let name = store.name(*id);
                ck.tensors.insert(opt_key("m", stage, name), st.m.cast());
                ck.tensors.insert(opt_key("v", stage, name), st.v.cast());
                ck.meta.insert(opt_key("step", stage, name), st.step.to_string());
            }
        }
        let seed: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        ck.meta.insert("rng.seed".into(), seed);
        ck.meta.insert("rng.stream".into(), self.rng.get_stream().to_string());
        ck.meta.insert("rng.word_pos".into(), self.rng.get_word_pos().to_string());
        ck.meta.insert("iteration".into(), self.iteration.to_string());
        let c = self.optimizer_config();
        ck.meta.insert("optim.beta1".into(), c.beta1.to_string());
        ck.meta.insert("optim.beta2".into(), c.beta2.to_string());
        ck.meta.insert("optim.eps".into(), c.eps.to_string());
        ck
    }

    /// Restores a state saved by [`TrainState::to_checkpoint`]. A checkpoint
    /// holding only model parameters starts a fresh optimizer and RNG.
    pub fn from_checkpoint(ck: &Checkpoint, config: &TrainConfig) -> Result<Self> {
        let model = EssModel::from_checkpoint(ck)?;
        let mut state = TrainState::new(model, config);
        if !ck.meta.contains_key("iteration") {
            return Ok(state);
        }
        state.iteration = ck.meta_value("iteration")?;
        let seed_hex: String = ck.meta_value("rng.seed")?;
        if seed_hex.len() != 64 {
            return Err(Error::Checkpoint("rng seed must be 32 bytes".into()));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Checkpoint("rng seed is not hex".into()))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(ck.meta_value("rng.stream")?);
        rng.set_word_pos(ck.meta_value("rng.word_pos")?);
        state.rng = rng;
        let config = RAdamConfig {
            beta1: ck.meta_value("optim.beta1")?,
            beta2: ck.meta_value("optim.beta2")?,
            eps: ck.meta_value("optim.eps")?,
        };
        let store = state.model.store();
        for stage in Stage::ALL {
            let prefix = opt_key("m", stage, "");
            let mut moments = HashMap::new();
            for (key, m) in ck.tensors.iter().filter(|(k, _)| k.starts_with(&prefix)) {
                let name = &key[prefix.len()..];
                let id = store
                    .find(name)
                    .ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown parameter {name:?}")))?;
                let v = ck
                    .tensors
                    .get(&opt_key("v", stage, name))
                    .ok_or_else(|| Error::Checkpoint(format!("missing second moment of {name:?}")))?;
                let step: u64 = ck.meta_value(&opt_key("step", stage, name))?;
                if m.shape() != store.get(id).shape() || v.shape() != m.shape() {
                    return Err(Error::Checkpoint(format!("optimizer state of {name:?} has the wrong shape")));
                }
                moments.insert(
                    id,
                    crate::nn::optim::Moments {
                        step,
                        m: m.cast(),
                        v: v.cast(),
                    },
                );
            }
            let mut opt = RAdam::new(config);
            opt.state = moments;
            state.optimizers[stage.index()] = opt;
        }
        Ok(state)
    }
}
