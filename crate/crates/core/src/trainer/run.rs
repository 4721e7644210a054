use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index::sample;
use serde::Serialize;

use crate::datasets::TargetSet;
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_events, Metrics};
use crate::image::LabeledImage;
use crate::models::FrozenFeatures;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trainer::steps::{
    apply_grads, stage1_grads, stage2_grads, stage_mask, supervised_event_grads, EventInput, Stage, StepGrads,
    StepLosses,
};
use crate::nn::NetGroup;
use crate::trainer::{Mode, TrainConfig, TrainState};

/// Inputs of a run. `eval` carries labels and is only read for evaluation.
#[derive(Clone, Copy)]
pub struct TrainData<'a, T> {
    pub source: &'a [LabeledImage],
    pub target: &'a TargetSet<T>,
    pub eval: Option<&'a TargetSet<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub miou: f64,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub stage: Stage,
    #[serde(flatten)]
    pub losses: StepLosses,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSummary>,
}

impl MetricsRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serialises")
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub records: Vec<MetricsRecord>,
    pub final_eval: Option<Metrics>,
    pub last_checkpoint: Option<PathBuf>,
}

/// Stage run at a given iteration.
pub fn schedule(mode: Mode, iteration: usize) -> Stage {
    match mode {
        Mode::Uda => [Stage::Stage1, Stage::Stage2][iteration % 2],
        Mode::EventsFrames => [Stage::Stage1, Stage::Stage2, Stage::Events][iteration % 3],
        Mode::Events => Stage::Events,
        Mode::SourceOnly => Stage::Stage1,
    }
}

pub struct Trainer<'a, T> {
    config: TrainConfig,
    data: TrainData<'a, T>,
    target_features: Option<Arc<FrozenFeatures<T>>>,
    eval_features: Option<Arc<FrozenFeatures<T>>>,
    metrics_out: Option<Box<dyn Write + 'a>>,
    checkpoint_dir: Option<PathBuf>,
    last_checkpoint: Option<PathBuf>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    /// Checks the config and that the data provides what the mode needs.
    pub fn new(config: TrainConfig, data: TrainData<'a, T>) -> Result<Self> {
        config.validate()?;
        let m = config.mode;
        let needs_source = matches!(m, Mode::Uda | Mode::EventsFrames | Mode::SourceOnly);
        let needs_target = matches!(m, Mode::Uda | Mode::EventsFrames | Mode::Events);
        let needs_labels = matches!(m, Mode::Events | Mode::EventsFrames);
        if needs_source && data.source.is_empty() {
            return Err(Error::validation(format!("{m} mode needs labelled source images")));
        }
        if needs_target && data.target.is_empty() {
            return Err(Error::validation(format!("{m} mode needs target event samples")));
        }
        if needs_labels && !data.target.has_labels() {
            return Err(Error::validation(format!("{m} mode needs labelled event samples")));
        }
        for set in [Some(data.target), data.eval].into_iter().flatten() {
            if !set.is_empty() && set.samples().iter().any(|s| s.grids.len() != config.n_grids) {
                return Err(Error::validation(format!(
                    "target samples must have {} grids as configured",
                    config.n_grids
                )));
            }
        }
        Ok(Trainer {
            config,
            data,
            target_features: None,
            eval_features: None,
            metrics_out: None,
            checkpoint_dir: None,
            last_checkpoint: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Reuses event features computed by the same frozen event networks.
    pub fn with_target_features(mut self, f: Arc<FrozenFeatures<T>>) -> Self {
        self.target_features = Some(f);
        self
    }

    pub fn with_eval_features(mut self, f: Arc<FrozenFeatures<T>>) -> Self {
        self.eval_features = Some(f);
        self
    }

    pub fn with_metrics_writer(mut self, w: impl Write + 'a) -> Self {
        self.metrics_out = Some(Box::new(w));
        self
    }

    pub fn with_checkpoint_dir(mut self, dir: impl AsRef<Path>) -> Self {
        self.checkpoint_dir = Some(dir.as_ref().to_path_buf());
        self
    }

    fn event_encoder_trains(&self) -> bool {
        stage_mask(&self.config, Stage::Events).contains(NetGroup::EventEncoder)
    }

    fn features(
        slot: &mut Option<Arc<FrozenFeatures<T>>>,
        state: &TrainState<T>,
        set: &TargetSet<T>,
    ) -> Result<Arc<FrozenFeatures<T>>> {
        if let Some(f) = slot {
            if f.len() == set.len() && f.check(&state.model).is_ok() {
                return Ok(f.clone());
            }
        }
        let f = Arc::new(FrozenFeatures::compute(&state.model, set)?);
        *slot = Some(f.clone());
        Ok(f)
    }

    fn draw(state: &mut TrainState<T>, n: usize, k: usize) -> Vec<usize> {
        sample(&mut state.rng, n, k.min(n)).into_vec()
    }

    fn micro_batch(&mut self, state: &mut TrainState<T>, stage: Stage) -> Result<StepGrads<T>> {
        let bs = self.config.batch_size;
        match stage {
            Stage::Stage1 => {
                let idx = Self::draw(state, self.data.source.len(), bs);
                let imgs: Vec<Tensor<T>> = idx.iter().map(|&i| self.data.source[i].image.to_tensor()).collect();
                let images = Tensor::stack_batch(&imgs.iter().collect::<Vec<_>>())?;
                let labels: Vec<u8> = idx.iter().flat_map(|&i| self.data.source[i].labels.data.iter().copied()).collect();
                stage1_grads(&state.model, &self.config, &images, &labels)
            }
            Stage::Stage2 => {
                let f = Self::features(&mut self.target_features, state, self.data.target)?;
                let idx = Self::draw(state, self.data.target.len(), bs);
                let z = f.embedding_batch(&idx)?;
                let recon = f.reconstruction_batch(&idx)?;
                stage2_grads(&state.model, &self.config, &z, &recon)
            }
            Stage::Events => {
                let set = self.data.target;
                let idx = Self::draw(state, set.len(), bs);
                let mut labels = Vec::new();
                for &i in &idx {
                    let l = set
                        .eval_labels(i)
                        .ok_or_else(|| Error::validation(format!("event sample {i} has no labels")))?;
                    labels.extend_from_slice(&l.data);
                }
                if self.event_encoder_trains() {
                    let grids = (0..set.n_grids()).map(|s| set.grid_batch(&idx, s)).collect::<Result<Vec<_>>>()?;
                    supervised_event_grads(&state.model, &self.config, EventInput::Grids(&grids), &labels)
                } else {
                    let f = Self::features(&mut self.target_features, state, set)?;
                    let z = f.embedding_batch(&idx)?;
                    supervised_event_grads(&state.model, &self.config, EventInput::Embedding(&z), &labels)
                }
            }
        }
    }

    /// Runs one iteration and returns its record, without evaluation.
    pub fn step(&mut self, state: &mut TrainState<T>) -> Result<MetricsRecord> {
        let stage = schedule(self.config.mode, state.iteration);
        let mut parts = Vec::with_capacity(self.config.grad_accumulation);
        for _ in 0..self.config.grad_accumulation {
            match self.micro_batch(state, stage) {
                Ok(p) => parts.push(p),
                Err(Error::Numeric(msg)) => {
                    let at = self
                        .last_checkpoint
                        .as_ref()
                        .map_or("none".to_string(), |p| p.display().to_string());
                    return Err(Error::Numeric(format!(
                        "{msg} at iteration {}; last good checkpoint: {at}",
                        state.iteration
                    )));
                }
                Err(e) => return Err(e),
            }
        }
        let losses = apply_grads(state, &self.config, parts)?;
        let record = MetricsRecord {
            iteration: state.iteration,
            stage,
            losses,
            eval: None,
        };
        state.iteration += 1;
        Ok(record)
    }

    /// Evaluates event segmentation on the eval split.
    pub fn evaluate(&mut self, state: &TrainState<T>) -> Result<Option<Metrics>> {
        let Some(eval) = self.data.eval else { return Ok(None) };
        if self.event_encoder_trains() {
            return evaluate_events(&state.model, eval, None).map(Some);
        }
        let f = Self::features(&mut self.eval_features, state, eval)?;
        evaluate_events(&state.model, eval, Some(&f)).map(Some)
    }

    fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        if let Some(w) = self.metrics_out.as_mut() {
            writeln!(w, "{}", record.to_json()).map_err(|e| Error::io("<metrics log>", e))?;
        }
        Ok(())
    }

    pub fn save_checkpoint(&mut self, state: &TrainState<T>) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.checkpoint_dir else { return Ok(None) };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("ckpt_{:06}.ckpt", state.iteration));
        state.to_checkpoint().save(&path)?;
        self.last_checkpoint = Some(path.clone());
        Ok(Some(path))
    }

    /// Trains until `config.iterations` iterations are complete.
    pub fn run(&mut self, state: &mut TrainState<T>) -> Result<TrainSummary> {
        let mut records = Vec::new();
        let mut final_eval = None;
        while state.iteration < self.config.iterations {
            let mut record = self.step(state)?;
            let done = state.iteration == self.config.iterations;
            let every = self.config.eval_every;
            if done || (every > 0 && state.iteration % every == 0) {
                if let Some(m) = self.evaluate(state)? {
                    record.eval = Some(EvalSummary {
                        accuracy: m.accuracy,
                        miou: m.miou,
                    });
                    if done {
                        final_eval = Some(m);
                    }
                }
            }
            self.write(&record)?;
            let every = self.config.checkpoint_every;
            if done || (every > 0 && state.iteration % every == 0) {
                self.save_checkpoint(state)?;
            }
            records.push(record);
        }
        if let Some(w) = self.metrics_out.as_mut() {
            w.flush().map_err(|e| Error::io("<metrics log>", e))?;
        }
        Ok(TrainSummary {
            records,
            final_eval,
            last_checkpoint: self.last_checkpoint.clone(),
        })
    }
}
