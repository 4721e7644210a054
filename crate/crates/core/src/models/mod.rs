//! The four networks, their shared parameter store and the checkpoint format.

pub mod checkpoint;
mod features;
mod networks;
pub mod pretrain;

pub use features::{event_side_fingerprint, FrozenFeatures};
pub use networks::{EventEncoder, ImageEncoder, ReconDecoder, TaskDecoder, TaskVars, TASK_DECODER_UPSAMPLINGS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::image::LabelMap;
use crate::nn::{NetGroup, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Architecture hyperparameters. Everything that changes parameter shapes
/// lives here; a checkpoint only loads into an identical config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Channel width `F` of the first embedding level.
    pub base_width: usize,
    /// Temporal bins of the voxel grids.
    pub bins: usize,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_width: 8,
            bins: 5,
            classes: 6,
            height: 64,
            width: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width < 2 || self.base_width % 2 != 0 {
            return Err(Error::validation("base width must be an even number of at least 2"));
        }
        if self.bins == 0 {
            return Err(Error::validation("at least one temporal bin is required"));
        }
        if !(2..=255).contains(&self.classes) {
            return Err(Error::validation("class count must be in 2..=255"));
        }
        if self.height == 0 || self.width == 0 || self.height % 8 != 0 || self.width % 8 != 0 {
            return Err(Error::validation(format!(
                "resolution {}x{} must be a non-zero multiple of 8",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Channels of the three embedding levels.
    pub fn level_channels(&self) -> [usize; 3] {
        let f = self.base_width;
        [f, 2 * f, 4 * f]
    }

    /// `[channels, height, width]` of each embedding level.
    pub fn level_shapes(&self) -> [[usize; 3]; 3] {
        let c = self.level_channels();
        std::array::from_fn(|i| [c[i], self.height >> (i + 1), self.width >> (i + 1)])
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("base_width", self.base_width.to_string()),
            ("bins", self.bins.to_string()),
            ("classes", self.classes.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
        ]
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in pairs {
            let parsed: usize = v
                .parse()
                .map_err(|_| Error::Config(format!("model.{k}: expected an integer, got {v:?}")))?;
            match k {
                "base_width" => cfg.base_width = parsed,
                "bins" => cfg.bins = parsed,
                "classes" => cfg.classes = parsed,
                "height" => cfg.height = parsed,
                "width" => cfg.width = parsed,
                other => return Err(Error::Config(format!("unknown model key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Three-level feature pyramid, each level `[batch, channels, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiScaleEmbedding<T> {
    levels: [Tensor<T>; 3],
}

impl<T: Scalar> MultiScaleEmbedding<T> {
    /// Checks that each level halves the resolution and doubles the
    /// channels of the previous one, at a common batch size.
    pub fn new(levels: [Tensor<T>; 3]) -> Result<Self> {
        let (n, c, h, w) = levels[0].dims4();
        for (i, l) in levels.iter().enumerate() {
            let s = l.shape();
            let expected = [n, c << i, h >> i, w >> i];
            if s != expected {
                return Err(Error::validation(format!(
                    "embedding level {i} has shape {s:?}, expected {expected:?}"
                )));
            }
        }
        Ok(MultiScaleEmbedding { levels })
    }

    pub fn zeros(config: &ModelConfig, batch: usize) -> Self {
        let shapes = config.level_shapes();
        MultiScaleEmbedding {
            levels: std::array::from_fn(|i| {
                let [c, h, w] = shapes[i];
                Tensor::zeros(&[batch, c, h, w])
            }),
        }
    }

    pub fn levels(&self) -> &[Tensor<T>; 3] {
        &self.levels
    }

    pub fn into_levels(self) -> [Tensor<T>; 3] {
        self.levels
    }

    pub fn batch(&self) -> usize {
        self.levels[0].shape()[0]
    }

    pub fn batch_item(&self, i: usize) -> Self {
        MultiScaleEmbedding {
            levels: std::array::from_fn(|l| self.levels[l].batch_item(i)),
        }
    }

    pub fn stack(items: &[&Self]) -> Result<Self> {
        let levels: Vec<Tensor<T>> = (0..3)
            .map(|l| Tensor::stack_batch(&items.iter().map(|e| &e.levels[l]).collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        let levels: [Tensor<T>; 3] = levels.try_into().expect("three levels");
        Self::new(levels)
    }

    fn check(&self, config: &ModelConfig) -> Result<()> {
        for (l, s) in self.levels.iter().zip(config.level_shapes()) {
            if l.shape()[1..] != s {
                return Err(Error::validation(format!(
                    "embedding level shape {:?} does not match model level {s:?}",
                    l.shape()
                )));
            }
        }
        Ok(())
    }

    /// Adds the levels to a graph as constants.
    pub fn to_graph(&self, g: &mut Graph<T>) -> [Var; 3] {
        std::array::from_fn(|i| g.input(self.levels[i].clone()))
    }

    pub fn from_graph(g: &Graph<T>, vars: &[Var; 3]) -> Self {
        MultiScaleEmbedding {
            levels: std::array::from_fn(|i| g.value(vars[i]).clone()),
        }
    }
}

/// Hidden state of the event encoder. Its levels are the embedding.
pub type RecurrentState<T> = MultiScaleEmbedding<T>;

/// Zero state for a batch; every sample starts its grid sequence here.
pub fn reset_state<T: Scalar>(config: &ModelConfig, batch: usize) -> RecurrentState<T> {
    MultiScaleEmbedding::zeros(config, batch)
}

/// Per-pixel class scores of one sample, `[classes, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitMap<T> {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> LogitMap<T> {
    /// Highest-scoring class per pixel; ties go to the lower class id.
    pub fn argmax(&self) -> LabelMap {
        let plane = self.height * self.width;
        let data = (0..plane)
            .map(|p| {
                let mut best = 0;
                for k in 1..self.classes {
                    if self.data[k * plane + p] > self.data[best * plane + p] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        LabelMap {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// Output of one task-decoder pass over a batch.
#[derive(Clone, Debug)]
pub struct TaskOutput<T> {
    /// `[batch, classes, h, w]`.
    pub logits: Tensor<T>,
    /// Intermediate features, coarse to fine.
    pub features: [Tensor<T>; 3],
}

impl<T: Scalar> TaskOutput<T> {
    pub fn logit_map(&self, i: usize) -> LogitMap<T> {
        let (_, c, h, w) = self.logits.dims4();
        LogitMap {
            classes: c,
            height: h,
            width: w,
            data: self.logits.batch_item(i).into_data(),
        }
    }

    pub fn predictions(&self) -> Vec<LabelMap> {
        (0..self.logits.shape()[0]).map(|i| self.logit_map(i).argmax()).collect()
    }
}

/// All four networks and their parameters.
#[derive(Clone, Debug)]
pub struct EssModel<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    event_encoder: EventEncoder,
    recon_decoder: ReconDecoder,
    image_encoder: ImageEncoder,
    task_decoder: TaskDecoder,
}

impl<T: Scalar> EssModel<T> {
    /// Deterministic initialisation; each network draws from its own stream.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let rng = |stream: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(stream);
            r
        };
        let event_encoder = EventEncoder::new(&mut store, &mut rng(0), &config);
        let recon_decoder = ReconDecoder::new(&mut store, &mut rng(1), &config);
        let image_encoder = ImageEncoder::new(&mut store, &mut rng(2), &config);
        let task_decoder = TaskDecoder::new(&mut store, &mut rng(3), &config);
        Ok(EssModel {
            config,
            store,
            event_encoder,
            recon_decoder,
            image_encoder,
            task_decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn task_decoder(&self) -> &TaskDecoder {
        &self.task_decoder
    }

    /// Number of scalar parameters in one network.
    pub fn parameter_count(&self, group: NetGroup) -> usize {
        self.store
            .ids()
            .filter(|&id| self.store.group(id) == group)
            .map(|id| self.store.get(id).len())
            .sum()
    }

    /// Copies every parameter of `group` from another model of the same config.
    pub fn copy_group_from(&mut self, other: &EssModel<T>, group: NetGroup) -> Result<()> {
        if other.config != self.config {
            return Err(Error::validation("cannot copy parameters between different model configs"));
        }
        for id in other.store.ids().filter(|&id| other.store.group(id) == group) {
            self.store.set(other.store.name(id), other.store.get(id).clone())?;
        }
        Ok(())
    }

    fn check_input(&self, t: &Tensor<T>, channels: usize, what: &str) -> Result<usize> {
        let s = t.shape();
        if s.len() != 4 || s[1] != channels || s[2] != self.config.height || s[3] != self.config.width {
            return Err(Error::validation(format!(
                "{what} has shape {s:?}, expected [N, {channels}, {}, {}]",
                self.config.height, self.config.width
            )));
        }
        Ok(s[0])
    }

    // Graph-level passes, used by the trainers.

    pub fn graph_event_step(&self, g: &mut Graph<T>, grid: Var, state: &[Var; 3]) -> Result<[Var; 3]> {
        self.event_encoder.step(g, &self.store, grid, state)
    }

    pub fn graph_reconstruct(&self, g: &mut Graph<T>, z: &[Var; 3]) -> Result<Var> {
        self.recon_decoder.forward(g, &self.store, z)
    }

    pub fn graph_image_encode(&self, g: &mut Graph<T>, image: Var) -> Result<[Var; 3]> {
        self.image_encoder.forward(g, &self.store, image)
    }

    pub fn graph_task_decode(&self, g: &mut Graph<T>, z: &[Var; 3]) -> Result<TaskVars> {
        self.task_decoder.forward(g, &self.store, z)
    }

    /// Unrolls the event encoder over a grid sequence from a reset state.
    ///
    /// With `bptt = Some(k)` only the last `k` steps are recorded in `g`; the
    /// earlier steps run in a throwaway inference graph and enter `g` as a
    /// constant state, which truncates backpropagation through time.
    pub fn graph_encode_events(&self, g: &mut Graph<T>, grids: &[Tensor<T>], bptt: Option<usize>) -> Result<[Var; 3]> {
        let first = grids
            .first()
            .ok_or_else(|| Error::validation("an event sequence needs at least one grid"))?;
        let n = self.check_input(first, self.config.bins, "voxel grid batch")?;
        let recorded = bptt.map_or(grids.len(), |k| k.clamp(1, grids.len()));
        let split = grids.len() - recorded;
        let mut state = reset_state(&self.config, n);
        for grid in &grids[..split] {
            state = self.event_encoder_step(grid, &state)?.1;
        }
        let mut h = state.to_graph(g);
        for grid in &grids[split..] {
            self.check_input(grid, self.config.bins, "voxel grid batch")?;
            let x = g.input(grid.clone());
            h = self.graph_event_step(g, x, &h)?;
        }
        Ok(h)
    }

    // Inference passes on tensors.

    /// One recurrent step on a `[N, bins, H, W]` grid batch.
    pub fn event_encoder_step(
        &self,
        grid: &Tensor<T>,
        state: &RecurrentState<T>,
    ) -> Result<(MultiScaleEmbedding<T>, RecurrentState<T>)> {
        let n = self.check_input(grid, self.config.bins, "voxel grid batch")?;
        state.check(&self.config)?;
        if state.batch() != n {
            return Err(Error::validation("state batch differs from grid batch"));
        }
        let mut g = Graph::inference();
        let x = g.input(grid.clone());
        let h = state.to_graph(&mut g);
        let out = self.graph_event_step(&mut g, x, &h)?;
        let next = MultiScaleEmbedding::from_graph(&g, &out);
        Ok((next.clone(), next))
    }

    /// Runs a grid sequence from a reset state; returns the final embedding.
    pub fn encode_events(&self, grids: &[Tensor<T>]) -> Result<MultiScaleEmbedding<T>> {
        let first = grids
            .first()
            .ok_or_else(|| Error::validation("an event sequence needs at least one grid"))?;
        let mut state = reset_state(&self.config, first.shape().first().copied().unwrap_or(0));
        for grid in grids {
            state = self.event_encoder_step(grid, &state)?.1;
        }
        Ok(state)
    }

    pub fn reconstruct(&self, z: &MultiScaleEmbedding<T>) -> Result<Tensor<T>> {
        z.check(&self.config)?;
        let mut g = Graph::inference();
        let vars = z.to_graph(&mut g);
        let out = self.graph_reconstruct(&mut g, &vars)?;
        Ok(g.value(out).clone())
    }

    /// Embeds a `[N, 1, H, W]` image batch.
    pub fn encode_image(&self, images: &Tensor<T>) -> Result<MultiScaleEmbedding<T>> {
        self.check_input(images, 1, "image batch")?;
        let mut g = Graph::inference();
        let x = g.input(images.clone());
        let out = self.graph_image_encode(&mut g, x)?;
        Ok(MultiScaleEmbedding::from_graph(&g, &out))
    }

    pub fn decode_task(&self, z: &MultiScaleEmbedding<T>) -> Result<TaskOutput<T>> {
        z.check(&self.config)?;
        let mut g = Graph::inference();
        let vars = z.to_graph(&mut g);
        let out = self.graph_task_decode(&mut g, &vars)?;
        Ok(TaskOutput {
            logits: g.value(out.logits).clone(),
            features: std::array::from_fn(|i| g.value(out.features[i]).clone()),
        })
    }
}
