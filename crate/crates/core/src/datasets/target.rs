use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datasets::scene::sample_layout;
use crate::datasets::{derive_seed, generate_scene, tags, Domain, SceneConfig};
use crate::error::{Error, Result};
use crate::event::{build_voxel_grid, simulate_events, window_by_count, SimulatorConfig, VoxelGrid, DEFAULT_BINS};
use crate::image::{GrayImage, LabelMap, LabeledImage};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How target scenes become voxel-grid sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetConfig {
    pub scene: SceneConfig,
    pub n_grids: usize,
    pub events_per_window: usize,
    pub bins: usize,
    pub simulator: SimulatorConfig,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            scene: SceneConfig::default(),
            n_grids: 20,
            events_per_window: 2000,
            bins: DEFAULT_BINS,
            simulator: SimulatorConfig::default(),
        }
    }
}

/// Events per grid at the scale of the two real benchmarks.
pub const DDD17_EVENTS_PER_WINDOW: usize = 32_000;
pub const DSEC_EVENTS_PER_WINDOW: usize = 100_000;

/// A temporally ordered grid sequence ending at the last frame of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSample<T> {
    pub grids: Vec<VoxelGrid<T>>,
    /// Labels of the last frame; evaluation only.
    pub eval_labels: Option<LabelMap>,
    /// The last frame itself; pretext supervision and paired evaluation only.
    pub paired_image: Option<GrayImage>,
}

impl<T: Scalar> TargetSample<T> {
    pub fn new(grids: Vec<VoxelGrid<T>>, eval_labels: Option<LabelMap>, paired_image: Option<GrayImage>) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| Error::validation("a target sample needs at least one grid"))?;
        let dims = (first.bins(), first.height(), first.width());
        if grids.iter().any(|g| (g.bins(), g.height(), g.width()) != dims) {
            return Err(Error::validation("all grids of a sample must share (bins, height, width)"));
        }
        let hw = (dims.1, dims.2);
        if eval_labels.as_ref().is_some_and(|l| (l.height, l.width) != hw)
            || paired_image.as_ref().is_some_and(|i| (i.height, i.width) != hw)
        {
            return Err(Error::validation("labels and paired image must match the grid resolution"));
        }
        Ok(TargetSample {
            grids,
            eval_labels,
            paired_image,
        })
    }

    /// Drops everything except the grids.
    pub fn unlabeled(self) -> Self {
        TargetSample {
            grids: self.grids,
            eval_labels: None,
            paired_image: None,
        }
    }
}

/// Target samples with an audit of every access to evaluation labels.
#[derive(Debug, Default)]
pub struct TargetSet<T> {
    samples: Vec<TargetSample<T>>,
    label_reads: AtomicUsize,
}

impl<T: Scalar> Clone for TargetSet<T> {
    fn clone(&self) -> Self {
        TargetSet {
            samples: self.samples.clone(),
            label_reads: AtomicUsize::new(self.label_reads()),
        }
    }
}

impl<T: Scalar> TargetSet<T> {
    pub fn new(samples: Vec<TargetSample<T>>) -> Self {
        TargetSet {
            samples,
            label_reads: AtomicUsize::new(0),
        }
    }

    /// A set whose samples carry no labels or paired images at all.
    pub fn unlabeled(samples: Vec<TargetSample<T>>) -> Self {
        Self::new(samples.into_iter().map(TargetSample::unlabeled).collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn grids(&self, i: usize) -> &[VoxelGrid<T>] {
        &self.samples[i].grids
    }

    /// Grid `step` of each listed sample, stacked to `[N, bins, H, W]`.
    pub fn grid_batch(&self, indices: &[usize], step: usize) -> Result<Tensor<T>> {
        let ts: Vec<Tensor<T>> = indices.iter().map(|&i| self.samples[i].grids[step].to_tensor()).collect();
        Tensor::stack_batch(&ts.iter().collect::<Vec<_>>())
    }

    pub fn n_grids(&self) -> usize {
        self.samples.iter().map(|s| s.grids.len()).min().unwrap_or(0)
    }

    pub fn has_labels(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.eval_labels.is_some())
    }

    /// Evaluation labels of sample `i`; every call is counted.
    pub fn eval_labels(&self, i: usize) -> Option<&LabelMap> {
        self.label_reads.fetch_add(1, Ordering::Relaxed);
        self.samples[i].eval_labels.as_ref()
    }

    pub fn paired_image(&self, i: usize) -> Option<&GrayImage> {
        self.samples[i].paired_image.as_ref()
    }

    pub fn label_reads(&self) -> usize {
        self.label_reads.load(Ordering::Relaxed)
    }

    pub fn samples(&self) -> &[TargetSample<T>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<TargetSample<T>> {
        self.samples
    }
}

/// Labelled stills of the source domain, one per independent scene.
pub fn make_source(seed: u64, size: usize, config: &SceneConfig) -> Result<Vec<LabeledImage>> {
    config.validate()?;
    (0..size)
        .map(|i| {
            let s = derive_seed(seed, tags::SOURCE, i as u64);
            let frame = ChaCha8Rng::seed_from_u64(s ^ 0x5EED).random_range(0..config.frames);
            let layout = sample_layout(s, config, Domain::Source, &[frame])?;
            let (image, labels) = layout.render(frame);
            LabeledImage::new(image, labels)
        })
        .collect()
}

fn target_sample<T: Scalar>(seed: u64, config: &TargetConfig) -> Result<Option<TargetSample<T>>> {
    let scene = generate_scene(seed, &config.scene, Domain::Target)?;
    let stream = simulate_events(&scene.frames, &config.simulator)?;
    let needed = config.n_grids * config.events_per_window;
    if stream.len() < needed {
        log::warn!(
            "target scene {seed:#x}: {} events, {needed} needed for {} grids; skipped",
            stream.len(),
            config.n_grids
        );
        return Ok(None);
    }
    let windows = window_by_count(&stream.tail(needed), config.events_per_window)?;
    let (h, w) = (config.scene.height, config.scene.width);
    let grids = windows
        .iter()
        .map(|win| build_voxel_grid(win, config.bins, w, h))
        .collect::<Result<Vec<_>>>()?;
    let (_, last) = scene.frames.last().expect("scene has frames").clone();
    let labels = scene.labels.last().expect("scene has labels").clone();
    TargetSample::new(grids, Some(labels), Some(last)).map(Some)
}

fn make_family<T: Scalar>(seed: u64, tag: u64, size: usize, config: &TargetConfig) -> Result<Vec<TargetSample<T>>> {
    if config.n_grids == 0 || config.events_per_window == 0 {
        return Err(Error::validation("grid count and events per window must be positive"));
    }
    let max_attempts = 4 * size + 16;
    let mut out = Vec::with_capacity(size);
    let mut index = 0u64;
    while out.len() < size {
        if index as usize >= max_attempts {
            return Err(Error::validation(format!(
                "only {} of {size} target samples had enough events after {max_attempts} scenes",
                out.len()
            )));
        }
        if let Some(s) = target_sample(derive_seed(seed, tag, index), config)? {
            out.push(s);
        }
        index += 1;
    }
    Ok(out)
}

/// Target-domain samples: simulated events of the trailing
/// `n_grids * events_per_window` events of each scene, cut into grids, with
/// the last frame and its labels attached for evaluation.
///
/// Scenes with too few events are skipped with a warning and replaced by the
/// next scene of the same stream.
pub fn make_target<T: Scalar>(seed: u64, size: usize, config: &TargetConfig) -> Result<Vec<TargetSample<T>>> {
    make_family(seed, tags::TARGET, size, config)
}

/// Held-out target samples drawn from a stream disjoint from [`make_target`].
pub fn make_target_test<T: Scalar>(seed: u64, size: usize, config: &TargetConfig) -> Result<Vec<TargetSample<T>>> {
    make_family(seed, tags::TEST, size, config)
}

/// Samples for the reconstruction pretext task: target-style grids and the
/// last frame, without labels. Drawn from a stream disjoint from the others.
pub fn make_pretext<T: Scalar>(seed: u64, size: usize, config: &TargetConfig) -> Result<Vec<TargetSample<T>>> {
    Ok(make_family(seed, tags::PRETEXT, size, config)?
        .into_iter()
        .map(|s| TargetSample {
            eval_labels: None,
            ..s
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TargetConfig {
        TargetConfig {
            n_grids: 3,
            events_per_window: 500,
            ..TargetConfig::default()
        }
    }

    #[test]
    fn target_samples_have_requested_grids() {
        let t: Vec<TargetSample<f32>> = make_target(1, 2, &small()).unwrap();
        assert_eq!(t.len(), 2);
        for s in &t {
            assert_eq!(s.grids.len(), 3);
            for g in &s.grids {
                assert_eq!((g.bins(), g.height(), g.width()), (5, 64, 64));
            }
            assert!(s.eval_labels.is_some() && s.paired_image.is_some());
        }
    }

    #[test]
    fn label_reads_are_counted() {
        let set = TargetSet::new(make_target::<f32>(2, 1, &small()).unwrap());
        assert_eq!(set.label_reads(), 0);
        assert!(set.eval_labels(0).is_some());
        assert_eq!(set.label_reads(), 1);
        let bare = TargetSet::unlabeled(set.into_samples());
        assert!(!bare.has_labels());
        assert!(bare.paired_image(0).is_none());
    }

    #[test]
    fn impossible_event_budget_fails() {
        let cfg = TargetConfig {
            n_grids: 20,
            events_per_window: 1_000_000,
            ..small()
        };
        assert!(make_target::<f32>(0, 1, &cfg).is_err());
    }
}
