//! Single optimisation steps. Each step has a gradient function that leaves
//! the parameters untouched, and a wrapper that also applies the update.

use serde::Serialize;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::losses::LossParts;
use crate::models::{EssModel, MultiScaleEmbedding};
use crate::nn::{GroupMask, NetGroup, ParamGrads};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trainer::{Mode, TrainConfig, TrainState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Supervised on labelled images.
    Stage1,
    /// Consistency between frozen event features and the image branch.
    Stage2,
    /// Supervised on labelled events.
    Events,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Stage1, Stage::Stage2, Stage::Events];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::Events => "events",
        }
    }
}

/// Loss values of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepLosses {
    pub task: f64,
    pub cons_emb: f64,
    pub cons_pred: f64,
    pub cons_task: f64,
    /// Weighted objective that produced the gradients.
    pub total: f64,
}

impl StepLosses {
    pub fn parts(&self) -> LossParts {
        LossParts {
            task: self.task,
            cons_emb: self.cons_emb,
            cons_pred: self.cons_pred,
            cons_task: self.cons_task,
        }
    }

    pub(crate) fn mean(items: &[StepLosses]) -> StepLosses {
        let n = items.len().max(1) as f64;
        let sum = |f: fn(&StepLosses) -> f64| items.iter().map(f).sum::<f64>() / n;
        StepLosses {
            task: sum(|s| s.task),
            cons_emb: sum(|s| s.cons_emb),
            cons_pred: sum(|s| s.cons_pred),
            cons_task: sum(|s| s.cons_task),
            total: sum(|s| s.total),
        }
    }
}

/// Gradients of one micro-batch, with the learning-rate rule they need.
pub struct StepGrads<T> {
    pub stage: Stage,
    pub losses: StepLosses,
    pub grads: ParamGrads<T>,
    /// False when the objective has no trainable term (stage 2 with every
    /// consistency weight at zero); no update is applied then.
    pub active: bool,
}

fn scalar<T: Scalar>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v).data()[0].as_f64()
}

fn finite(losses: &StepLosses, stage: Stage) -> Result<()> {
    if losses.total.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{stage:?} loss is not finite: {losses:?}")))
    }
}

/// Learning rate per network for a stage.
pub fn stage_learning_rate(config: &TrainConfig, stage: Stage, group: NetGroup) -> f64 {
    match (stage, group) {
        (Stage::Stage1, NetGroup::ImageEncoder) => config.lr * config.image_encoder_lr_factor,
        (Stage::Stage2, NetGroup::TaskDecoder) => config.lr * config.stage2_task_lr_factor,
        (Stage::Stage1 | Stage::Stage2, NetGroup::ImageEncoder | NetGroup::TaskDecoder) => config.lr,
        (Stage::Events, NetGroup::TaskDecoder) => config.lr,
        (Stage::Events, NetGroup::EventEncoder) if config.mode == Mode::Events && config.train_event_encoder => config.lr,
        _ => 0.0,
    }
}

/// Networks a stage may update.
pub fn stage_mask(config: &TrainConfig, stage: Stage) -> GroupMask {
    let groups: Vec<NetGroup> = NetGroup::ALL
        .into_iter()
        .filter(|&g| stage_learning_rate(config, stage, g) > 0.0)
        .collect();
    GroupMask::of(&groups)
}

/// Stage 1: task loss of `T(E_img(images))` against `labels`.
pub fn stage1_grads<T: Scalar>(
    model: &EssModel<T>,
    config: &TrainConfig,
    images: &Tensor<T>,
    labels: &[u8],
) -> Result<StepGrads<T>> {
    let mut g = Graph::new(stage_mask(config, Stage::Stage1));
    let x = g.input(images.clone());
    let z = model.graph_image_encode(&mut g, x)?;
    let out = model.graph_task_decode(&mut g, &z)?;
    let task = g.task_loss(out.logits, labels, config.dice_eps)?;
    let total = g.weighted_sum(&[(task, T::lit(config.weights.task))])?;
    let losses = StepLosses {
        task: scalar(&g, task),
        total: scalar(&g, total),
        ..StepLosses::default()
    };
    finite(&losses, Stage::Stage1)?;
    let grads = g.backward(total)?.params(&g, model.store().len());
    Ok(StepGrads {
        stage: Stage::Stage1,
        losses,
        grads,
        active: config.weights.task > 0.0,
    })
}

/// Stage 2 on precomputed event features: `z_event` and the reconstructed
/// frames `recon` of the same samples.
///
/// The event-side task evaluation `T(z_event)` is computed without
/// recording and enters the objective as a constant target; the trainable
/// branch is `T(E_img(recon))`. Only the image encoder and the task decoder
/// receive gradients.
pub fn stage2_grads<T: Scalar>(
    model: &EssModel<T>,
    config: &TrainConfig,
    z_event: &MultiScaleEmbedding<T>,
    recon: &Tensor<T>,
) -> Result<StepGrads<T>> {
    let [we, wp, wt] = config.consistency_weights();
    let target = model.decode_task(z_event)?;
    let mut g = Graph::new(stage_mask(config, Stage::Stage2));
    let x = g.input(recon.clone());
    let z_hat = model.graph_image_encode(&mut g, x)?;
    let z_ev = z_event.to_graph(&mut g);
    let mut emb_terms = Vec::with_capacity(3);
    for (a, b) in z_hat.iter().zip(&z_ev) {
        emb_terms.push((g.mean_abs_diff(*a, *b)?, T::one()));
    }
    let emb = g.weighted_sum(&emb_terms)?;
    let out = model.graph_task_decode(&mut g, &z_hat)?;
    let target_logits = g.input(target.logits);
    let pred = g.sym_kl(target_logits, out.logits, config.prob_floor)?;
    let mut feat_terms = Vec::with_capacity(3);
    for (f, t) in out.features.iter().zip(target.features) {
        let t = g.input(t);
        feat_terms.push((g.mean_abs_diff(*f, t)?, T::one()));
    }
    let task = g.weighted_sum(&feat_terms)?;
    let total = g.weighted_sum(&[(emb, T::lit(we)), (pred, T::lit(wp)), (task, T::lit(wt))])?;
    let losses = StepLosses {
        task: 0.0,
        cons_emb: scalar(&g, emb),
        cons_pred: scalar(&g, pred),
        cons_task: scalar(&g, task),
        total: scalar(&g, total),
    };
    finite(&losses, Stage::Stage2)?;
    let active = [we, wp, wt].iter().any(|&w| w > 0.0);
    let grads = if active {
        g.backward(total)?.params(&g, model.store().len())
    } else {
        ParamGrads::new(model.store().len())
    };
    Ok(StepGrads {
        stage: Stage::Stage2,
        losses,
        grads,
        active,
    })
}

/// What a supervised event step starts from.
pub enum EventInput<'a, T> {
    /// Grid batches in temporal order, each `[N, bins, H, W]`.
    Grids(&'a [Tensor<T>]),
    /// Embedding from a frozen encoder.
    Embedding(&'a MultiScaleEmbedding<T>),
}

/// Supervised step on labelled events: task loss of `T(z_event)`. The event
/// encoder is updated only in events mode with encoder training enabled.
pub fn supervised_event_grads<T: Scalar>(
    model: &EssModel<T>,
    config: &TrainConfig,
    input: EventInput<'_, T>,
    labels: &[u8],
) -> Result<StepGrads<T>> {
    let mask = stage_mask(config, Stage::Events);
    let mut g = Graph::new(mask);
    let z = match input {
        EventInput::Grids(grids) => model.graph_encode_events(&mut g, grids, config.bptt)?,
        EventInput::Embedding(z) => {
            if mask.contains(NetGroup::EventEncoder) {
                return Err(Error::validation("training the event encoder needs grids, not an embedding"));
            }
            z.to_graph(&mut g)
        }
    };
    let out = model.graph_task_decode(&mut g, &z)?;
    let task = g.task_loss(out.logits, labels, config.dice_eps)?;
    let total = g.weighted_sum(&[(task, T::lit(config.weights.task))])?;
    let losses = StepLosses {
        task: scalar(&g, task),
        total: scalar(&g, total),
        ..StepLosses::default()
    };
    finite(&losses, Stage::Events)?;
    let grads = g.backward(total)?.params(&g, model.store().len());
    Ok(StepGrads {
        stage: Stage::Events,
        losses,
        grads,
        active: config.weights.task > 0.0,
    })
}

/// Averages micro-batch gradients and applies one optimizer update.
pub fn apply_grads<T: Scalar>(state: &mut TrainState<T>, config: &TrainConfig, parts: Vec<StepGrads<T>>) -> Result<StepLosses> {
    let stage = parts.first().map(|p| p.stage).ok_or_else(|| Error::validation("no gradients to apply"))?;
    if parts.iter().any(|p| p.stage != stage) {
        return Err(Error::validation("cannot mix stages in one update"));
    }
    let losses = StepLosses::mean(&parts.iter().map(|p| p.losses).collect::<Vec<_>>());
    if parts.iter().any(|p| p.active) {
        let k = parts.len();
        let mut iter = parts.into_iter();
        let mut grads = iter.next().expect("non-empty").grads;
        for p in iter {
            grads.merge(&p.grads);
        }
        if k > 1 {
            grads.scale(T::lit(1.0 / k as f64));
        }
        state.optimizers[stage.index()]
            .step(state.model.store_mut(), &grads, |g| stage_learning_rate(config, stage, g));
    }
    Ok(losses)
}

pub fn stage1_step<T: Scalar>(
    state: &mut TrainState<T>,
    config: &TrainConfig,
    images: &Tensor<T>,
    labels: &[u8],
) -> Result<StepLosses> {
    let g = stage1_grads(&state.model, config, images, labels)?;
    apply_grads(state, config, vec![g])
}

pub fn stage2_step<T: Scalar>(
    state: &mut TrainState<T>,
    config: &TrainConfig,
    z_event: &MultiScaleEmbedding<T>,
    recon: &Tensor<T>,
) -> Result<StepLosses> {
    let g = stage2_grads(&state.model, config, z_event, recon)?;
    apply_grads(state, config, vec![g])
}

pub fn supervised_event_step<T: Scalar>(
    state: &mut TrainState<T>,
    config: &TrainConfig,
    input: EventInput<'_, T>,
    labels: &[u8],
) -> Result<StepLosses> {
    let g = supervised_event_grads(&state.model, config, input, labels)?;
    apply_grads(state, config, vec![g])
}
