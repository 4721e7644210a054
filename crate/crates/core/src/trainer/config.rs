use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv;
use crate::losses::{LossWeights, DEFAULT_DICE_EPS, DEFAULT_PROB_FLOOR};
use crate::nn::RAdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Labelled images plus unlabelled events; alternates stage 1 and stage 2.
    Uda,
    /// Labelled events only.
    Events,
    /// Stage 1, stage 2 and a supervised event step, round-robin.
    EventsFrames,
    /// Stage 1 only; the baseline without any adaptation.
    SourceOnly,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Uda => "uda",
            Mode::Events => "events",
            Mode::EventsFrames => "events+frames",
            Mode::SourceOnly => "source-only",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uda" => Ok(Mode::Uda),
            "events" => Ok(Mode::Events),
            "events+frames" => Ok(Mode::EventsFrames),
            "source-only" => Ok(Mode::SourceOnly),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}; expected uda, events, events+frames or source-only"
            ))),
        }
    }
}

/// Switches that remove one consistency loss from stage 2.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    pub no_cons_emb: bool,
    pub no_cons_pred: bool,
    pub no_cons_task: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub iterations: usize,
    pub batch_size: usize,
    /// Micro-batches whose gradients are averaged into one update.
    pub grad_accumulation: usize,
    pub lr: f64,
    /// Multiplies the learning rate of the image encoder in stage 1.
    pub image_encoder_lr_factor: f64,
    /// Multiplies the learning rate of the task decoder in stage 2. Below 1
    /// keeps the consistency losses from dragging the decoder away from what
    /// stage 1 taught it; 0 freezes it there.
    pub stage2_task_lr_factor: f64,
    pub weights: LossWeights,
    pub ablation: Ablation,
    pub seed: u64,
    /// Iterations between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Iterations between evaluations; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Whether supervised event steps also update the event encoder.
    pub train_event_encoder: bool,
    /// Recorded recurrent steps when the event encoder is trained.
    pub bptt: Option<usize>,
    pub radam: RAdamConfig,
    pub dice_eps: f64,
    pub prob_floor: f64,
    /// Data scale the run is meant for; checked against the target set.
    pub events_per_window: usize,
    pub n_grids: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl TrainConfig {
    /// Desk-scale defaults for the synthetic benchmark.
    pub fn toy() -> Self {
        TrainConfig {
            mode: Mode::Uda,
            iterations: 3000,
            batch_size: 8,
            grad_accumulation: 1,
            lr: 3e-3,
            image_encoder_lr_factor: 0.1,
            stage2_task_lr_factor: 0.1,
            weights: LossWeights::default(),
            ablation: Ablation::default(),
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            train_event_encoder: true,
            bptt: None,
            radam: RAdamConfig::default(),
            dice_eps: DEFAULT_DICE_EPS,
            prob_floor: DEFAULT_PROB_FLOOR,
            events_per_window: 2000,
            n_grids: 20,
        }
    }

    /// Recipe for DDD17-scale data.
    pub fn ddd17() -> Self {
        TrainConfig {
            iterations: 50_000,
            batch_size: 16,
            lr: 1e-4,
            stage2_task_lr_factor: 1.0,
            events_per_window: 32_000,
            ..Self::toy()
        }
    }

    /// Recipe for DSEC-scale data.
    pub fn dsec() -> Self {
        TrainConfig {
            lr: 5e-4,
            events_per_window: 100_000,
            ..Self::ddd17()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "ddd17" => Ok(Self::ddd17()),
            "dsec" => Ok(Self::dsec()),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.batch_size == 0 || self.grad_accumulation == 0 {
            return bad("batch size and gradient accumulation must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.image_encoder_lr_factor > 0.0 && self.image_encoder_lr_factor <= 1.0) {
            return bad(format!(
                "image encoder learning-rate factor must be in (0, 1], got {}",
                self.image_encoder_lr_factor
            ));
        }
        if !(0.0..=1.0).contains(&self.stage2_task_lr_factor) {
            return bad(format!(
                "stage-2 task decoder learning-rate factor must be in [0, 1], got {}",
                self.stage2_task_lr_factor
            ));
        }
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.bptt == Some(0) {
            return bad("bptt must be positive when set".into());
        }
        if !(self.dice_eps > 0.0 && self.prob_floor > 0.0 && self.prob_floor < 1.0) {
            return bad("dice epsilon and probability floor must be positive".into());
        }
        let r = self.radam;
        if !(0.0..1.0).contains(&r.beta1) || !(0.0..1.0).contains(&r.beta2) || r.eps <= 0.0 {
            return bad("invalid optimizer moments".into());
        }
        Ok(())
    }

    /// Stage-2 weights after ablation: `[emb, pred, task]`.
    pub fn consistency_weights(&self) -> [f64; 3] {
        let w = &self.weights;
        let a = &self.ablation;
        [
            if a.no_cons_emb { 0.0 } else { w.cons_emb },
            if a.no_cons_pred { 0.0 } else { w.cons_pred },
            if a.no_cons_task { 0.0 } else { w.cons_task },
        ]
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<V: FromStr>(k: &str, v: &str) -> Result<V> {
            kv::parse_value(k, v)
        }
        match key {
            "mode" => self.mode = value.parse()?,
            "iterations" => self.iterations = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "grad_accumulation" => self.grad_accumulation = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "optim.lr" => self.lr = p(key, value)?,
            "optim.image_encoder_lr_factor" => self.image_encoder_lr_factor = p(key, value)?,
            "optim.stage2_task_lr_factor" => self.stage2_task_lr_factor = p(key, value)?,
            "optim.beta1" => self.radam.beta1 = p(key, value)?,
            "optim.beta2" => self.radam.beta2 = p(key, value)?,
            "optim.eps" => self.radam.eps = p(key, value)?,
            "loss.lambda1" => self.weights.task = p(key, value)?,
            "loss.lambda2" => self.weights.cons_emb = p(key, value)?,
            "loss.lambda3" => self.weights.cons_pred = p(key, value)?,
            "loss.lambda4" => self.weights.cons_task = p(key, value)?,
            "loss.dice_eps" => self.dice_eps = p(key, value)?,
            "loss.prob_floor" => self.prob_floor = p(key, value)?,
            "ablation.no_cons_emb" => self.ablation.no_cons_emb = p(key, value)?,
            "ablation.no_cons_pred" => self.ablation.no_cons_pred = p(key, value)?,
            "ablation.no_cons_task" => self.ablation.no_cons_task = p(key, value)?,
            "train.checkpoint_every" => self.checkpoint_every = p(key, value)?,
            "train.eval_every" => self.eval_every = p(key, value)?,
            "train.event_encoder" => self.train_event_encoder = p(key, value)?,
            "train.bptt" => {
                let k: usize = p(key, value)?;
                self.bptt = (k > 0).then_some(k);
            }
            "data.events_per_window" => self.events_per_window = p(key, value)?,
            "data.n_grids" => self.n_grids = p(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a config file. A `preset` key selects the starting values;
    /// every other key overrides one field.
    pub fn from_text(text: &str) -> Result<Self> {
        let map = kv::parse(text)?;
        let mut cfg = match map.get("preset") {
            Some(p) => Self::preset(p)?,
            None => Self::toy(),
        };
        for (k, v) in map.iter().filter(|(k, _)| k.as_str() != "preset") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let pairs: Vec<(&str, String)> = vec![
            ("mode", self.mode.to_string()),
            ("iterations", self.iterations.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("grad_accumulation", self.grad_accumulation.to_string()),
            ("seed", self.seed.to_string()),
            ("optim.lr", self.lr.to_string()),
            ("optim.image_encoder_lr_factor", self.image_encoder_lr_factor.to_string()),
            ("optim.stage2_task_lr_factor", self.stage2_task_lr_factor.to_string()),
            ("optim.beta1", self.radam.beta1.to_string()),
            ("optim.beta2", self.radam.beta2.to_string()),
            ("optim.eps", self.radam.eps.to_string()),
            ("loss.lambda1", w.task.to_string()),
            ("loss.lambda2", w.cons_emb.to_string()),
            ("loss.lambda3", w.cons_pred.to_string()),
            ("loss.lambda4", w.cons_task.to_string()),
            ("loss.dice_eps", self.dice_eps.to_string()),
            ("loss.prob_floor", self.prob_floor.to_string()),
            ("ablation.no_cons_emb", self.ablation.no_cons_emb.to_string()),
            ("ablation.no_cons_pred", self.ablation.no_cons_pred.to_string()),
            ("ablation.no_cons_task", self.ablation.no_cons_task.to_string()),
            ("train.checkpoint_every", self.checkpoint_every.to_string()),
            ("train.eval_every", self.eval_every.to_string()),
            ("train.event_encoder", self.train_event_encoder.to_string()),
            ("train.bptt", self.bptt.unwrap_or(0).to_string()),
            ("data.events_per_window", self.events_per_window.to_string()),
            ("data.n_grids", self.n_grids.to_string()),
        ];
        kv::render(pairs)
    }
}
