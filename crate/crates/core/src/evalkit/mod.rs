//! Segmentation metrics, evaluation of event predictions and the
//! event/image alignment score.
//!
//! The confusion matrix is indexed `[ground truth][prediction]`. Accuracy is
//! `trace / total`; the IoU of class `k` is
//! `cm[k][k] / (row_k + col_k - cm[k][k])`. Classes with a zero denominator
//! are absent from both maps and are excluded from the mean. Ratios are
//! computed exactly and rounded once.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::Serialize;

use crate::datasets::TargetSet;
use crate::error::{Error, Result};
use crate::image::LabelMap;
use crate::losses::{prediction_consistency, DEFAULT_PROB_FLOOR};
use crate::models::{EssModel, FrozenFeatures, MultiScaleEmbedding};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds a matrix from rows of counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::validation("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix {
            classes: c,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        if (gt.height, gt.width) != (pred.height, pred.width) {
            return Err(Error::validation("label maps differ in shape"));
        }
        let c = self.classes;
        if let Some(&bad) = gt.data.iter().chain(&pred.data).find(|&&l| l as usize >= c) {
            return Err(Error::validation(format!("class id {bad} is not below {c}")));
        }
        for (&g, &p) in gt.data.iter().zip(&pred.data) {
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::validation("cannot merge matrices of different class counts"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Exact IoU per class; `None` where the class is absent from both maps.
    pub fn iou_exact(&self) -> Vec<Option<BigRational>> {
        (0..self.classes)
            .map(|k| {
                let diag = self.get(k, k);
                let row: u64 = (0..self.classes).map(|j| self.get(k, j)).sum();
                let col: u64 = (0..self.classes).map(|i| self.get(i, k)).sum();
                let denom = row + col - diag;
                (denom > 0).then(|| BigRational::new(BigInt::from(diag), BigInt::from(denom)))
            })
            .collect()
    }

    /// Exact mean IoU over present classes; `None` for an empty matrix.
    pub fn miou_exact(&self) -> Option<BigRational> {
        let present: Vec<BigRational> = self.iou_exact().into_iter().flatten().collect();
        if present.is_empty() {
            return None;
        }
        let n = BigRational::from_integer(BigInt::from(present.len()));
        Some(present.into_iter().fold(BigRational::from_integer(BigInt::from(0)), |a, b| a + b) / n)
    }

    pub fn metrics(&self) -> Metrics {
        let total = self.total();
        let trace: u64 = (0..self.classes).map(|k| self.get(k, k)).sum();
        let to_f = |r: &BigRational| r.to_f64().unwrap_or(f64::NAN);
        let accuracy = if total == 0 {
            0.0
        } else {
            to_f(&BigRational::new(BigInt::from(trace), BigInt::from(total)))
        };
        Metrics {
            accuracy,
            miou: self.miou_exact().as_ref().map_or(0.0, to_f),
            per_class_iou: self.iou_exact().iter().map(|r| r.as_ref().map(to_f)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub miou: f64,
    /// `None` for classes excluded from the mean.
    pub per_class_iou: Vec<Option<f64>>,
}

/// Evaluation result written by the `eval` command.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub samples: usize,
    pub accuracy: f64,
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
}

impl EvalReport {
    pub fn new(split: impl Into<String>, samples: usize, m: Metrics) -> Self {
        EvalReport {
            split: split.into(),
            samples,
            accuracy: m.accuracy,
            miou: m.miou,
            per_class_iou: m.per_class_iou,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

const EVAL_CHUNK: usize = 8;

fn embeddings_for<T: Scalar>(
    model: &EssModel<T>,
    set: &TargetSet<T>,
    cache: Option<&FrozenFeatures<T>>,
    chunk: &[usize],
) -> Result<MultiScaleEmbedding<T>> {
    match cache {
        Some(c) => c.embedding_batch(chunk),
        None => {
            let steps = set.grids(chunk[0]).len();
            let grids = (0..steps).map(|s| set.grid_batch(chunk, s)).collect::<Result<Vec<_>>>()?;
            model.encode_events(&grids)
        }
    }
}

/// Segmentation of event sequences through the event encoder and the task
/// decoder. Reads the evaluation labels of `set`.
pub fn evaluate_events<T: Scalar>(
    model: &EssModel<T>,
    set: &TargetSet<T>,
    cache: Option<&FrozenFeatures<T>>,
) -> Result<Metrics> {
    if let Some(c) = cache {
        c.check(model)?;
    }
    let mut cm = ConfusionMatrix::new(model.config().classes);
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let z = embeddings_for(model, set, cache, chunk)?;
        let preds = model.decode_task(&z)?.predictions();
        for (&i, p) in chunk.iter().zip(&preds) {
            let gt = set
                .eval_labels(i)
                .ok_or_else(|| Error::validation(format!("target sample {i} has no evaluation labels")))?;
            cm.accumulate(gt, p)?;
        }
    }
    Ok(cm.metrics())
}

/// Segmentation of labelled images through the image encoder and the task decoder.
pub fn evaluate_images<T: Scalar>(model: &EssModel<T>, data: &[crate::image::LabeledImage]) -> Result<Metrics> {
    let mut cm = ConfusionMatrix::new(model.config().classes);
    for chunk in data.chunks(EVAL_CHUNK) {
        let imgs: Vec<Tensor<T>> = chunk.iter().map(|s| s.image.to_tensor()).collect();
        let batch = Tensor::stack_batch(&imgs.iter().collect::<Vec<_>>())?;
        let preds = model.decode_task(&model.encode_image(&batch)?)?.predictions();
        for (s, p) in chunk.iter().zip(&preds) {
            cm.accumulate(&s.labels, p)?;
        }
    }
    Ok(cm.metrics())
}

/// Mean symmetric KL divergence between the task decoder's predictions from
/// the event embedding and from the image embedding of the paired frame.
/// Zero when the two branches agree everywhere.
pub fn alignment_dissimilarity<T: Scalar>(
    model: &EssModel<T>,
    set: &TargetSet<T>,
    cache: Option<&FrozenFeatures<T>>,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::validation("alignment needs at least one paired sample"));
    }
    if let Some(c) = cache {
        c.check(model)?;
    }
    let mut total = 0.0;
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let imgs: Vec<Tensor<T>> = chunk
            .iter()
            .map(|&i| {
                set.paired_image(i)
                    .map(|im| im.to_tensor())
                    .ok_or_else(|| Error::validation(format!("target sample {i} has no paired frame")))
            })
            .collect::<Result<_>>()?;
        let batch = Tensor::stack_batch(&imgs.iter().collect::<Vec<_>>())?;
        let from_events = model.decode_task(&embeddings_for(model, set, cache, chunk)?)?;
        let from_image = model.decode_task(&model.encode_image(&batch)?)?;
        let d = prediction_consistency(&from_events.logits, &from_image.logits, DEFAULT_PROB_FLOOR)?;
        total += d.as_f64() * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}
