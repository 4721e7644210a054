//! Alternating two-stage optimisation.
//!
//! Stage 1 trains the image encoder and the task decoder on labelled
//! images. Stage 2 feeds unlabelled event sequences through the frozen event
//! encoder and reconstruction decoder, re-encodes the reconstruction with the
//! image encoder and pulls that branch towards the event branch with the
//! three consistency losses. Because the event-side networks are frozen in
//! stage 2, their outputs are computed once per sample and cached.

mod config;
mod run;
mod state;
pub mod steps;

pub use config::{Ablation, Mode, TrainConfig};
pub use run::{schedule, EvalSummary, MetricsRecord, TrainData, TrainSummary, Trainer};
pub use state::TrainState;
pub use steps::{stage1_step, stage2_step, supervised_event_step, EventInput, Stage, StepLosses};
