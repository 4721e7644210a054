use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::models::ModelConfig;
use crate::nn::{Conv2d, ConvGru, NetGroup, ParamStore, ResidualBlock};
use crate::scalar::Scalar;

/// Recurrent event encoder: a full-resolution head, then per level a
/// stride-2 convolution feeding a ConvGRU. The GRU states are the embedding.
#[derive(Clone, Debug)]
pub struct EventEncoder {
    head: Conv2d,
    down: Vec<Conv2d>,
    gru: Vec<ConvGru>,
}

impl EventEncoder {
    pub(crate) fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let g = NetGroup::EventEncoder;
        let p = g.prefix();
        let f = cfg.base_width;
        let head = Conv2d::new(store, rng, &format!("{p}.head"), g, cfg.bins, f, 3, 1, 1.0);
        let widths = cfg.level_channels();
        let mut cin = f;
        let mut down = Vec::new();
        let mut gru = Vec::new();
        for (i, &c) in widths.iter().enumerate() {
            down.push(Conv2d::new(store, rng, &format!("{p}.down{i}"), g, cin, c, 3, 2, 1.0));
            gru.push(ConvGru::new(store, rng, &format!("{p}.gru{i}"), g, c, c));
            cin = c;
        }
        EventEncoder { head, down, gru }
    }

    pub(crate) fn step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        grid: Var,
        state: &[Var; 3],
    ) -> Result<[Var; 3]> {
        let x = self.head.forward(g, store, grid)?;
        let mut x = g.relu(x);
        let mut out = *state;
        for (i, (down, gru)) in self.down.iter().zip(&self.gru).enumerate() {
            let d = down.forward(g, store, x)?;
            let d = g.relu(d);
            out[i] = gru.forward(g, store, d, state[i])?;
            x = out[i];
        }
        Ok(out)
    }
}

/// Reconstruction decoder: residual blocks on the deepest level, then
/// upsampling stages that add the matching embedding level, then a 1x1
/// prediction squashed by a sigmoid.
#[derive(Clone, Debug)]
pub struct ReconDecoder {
    blocks: Vec<ResidualBlock>,
    up: Vec<Conv2d>,
    pred: Conv2d,
}

impl ReconDecoder {
    pub(crate) fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let g = NetGroup::ReconDecoder;
        let p = g.prefix();
        let f = cfg.base_width;
        let blocks = (0..2)
            .map(|i| ResidualBlock::new(store, rng, &format!("{p}.res{i}"), g, 4 * f, 4 * f, 1))
            .collect();
        let widths = [(4 * f, 2 * f), (2 * f, f), (f, f / 2)];
        let up = widths
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| Conv2d::new(store, rng, &format!("{p}.up{i}"), g, a, b, 3, 1, 1.0))
            .collect();
        let pred = Conv2d::new(store, rng, &format!("{p}.pred"), g, f / 2, 1, 1, 1, 1.0);
        ReconDecoder { blocks, up, pred }
    }

    pub(crate) fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, z: &[Var; 3]) -> Result<Var> {
        let mut x = z[2];
        for b in &self.blocks {
            x = b.forward(g, store, x)?;
        }
        // stage i lands on level 1, 0, then full resolution
        for (i, conv) in self.up.iter().enumerate() {
            let u = g.upsample2x(x);
            let c = conv.forward(g, store, u)?;
            x = g.relu(c);
            if i < 2 {
                x = g.add(x, z[1 - i])?;
            }
        }
        let out = self.pred.forward(g, store, x)?;
        Ok(g.sigmoid(out))
    }
}

/// Image encoder: instance-normalised input, a stride-2 stem, then three
/// pairs of residual blocks. The output of each pair is one embedding level.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    stem: Conv2d,
    blocks: Vec<ResidualBlock>,
}

pub(crate) const INSTANCE_NORM_EPS: f64 = 1e-5;

impl ImageEncoder {
    pub(crate) fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let g = NetGroup::ImageEncoder;
        let p = g.prefix();
        let f = cfg.base_width;
        let stem = Conv2d::new(store, rng, &format!("{p}.stem"), g, 1, f, 3, 2, 1.0);
        let spec = [(f, f, 1), (f, f, 1), (f, 2 * f, 2), (2 * f, 2 * f, 1), (2 * f, 4 * f, 2), (4 * f, 4 * f, 1)];
        let blocks = spec
            .iter()
            .enumerate()
            .map(|(i, &(a, b, s))| ResidualBlock::new(store, rng, &format!("{p}.res{i}"), g, a, b, s))
            .collect();
        ImageEncoder { stem, blocks }
    }

    pub(crate) fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, image: Var) -> Result<[Var; 3]> {
        let x = g.instance_norm(image, T::lit(INSTANCE_NORM_EPS));
        let x = self.stem.forward(g, store, x)?;
        let mut x = g.relu(x);
        let mut levels = [x; 3];
        for (i, b) in self.blocks.iter().enumerate() {
            x = b.forward(g, store, x)?;
            if i % 2 == 1 {
                levels[i / 2] = x;
            }
        }
        Ok(levels)
    }
}

/// Graph handles of one task-decoder pass.
#[derive(Clone, Copy, Debug)]
pub struct TaskVars {
    pub logits: Var,
    /// Intermediate features after the first convolution of each upsampling
    /// stage, coarse to fine.
    pub features: [Var; 3],
}

/// Task decoder: five residual blocks at the deepest level, then three
/// upsampling stages. The first two concatenate the matching embedding
/// level. Seven convolutions in total; the last one emits logits.
#[derive(Clone, Debug)]
pub struct TaskDecoder {
    blocks: Vec<ResidualBlock>,
    convs: Vec<Conv2d>,
}

/// Number of nearest-neighbour x2 upsamplings in the task decoder.
pub const TASK_DECODER_UPSAMPLINGS: usize = 3;

impl TaskDecoder {
    pub(crate) fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let g = NetGroup::TaskDecoder;
        let p = g.prefix();
        let f = cfg.base_width;
        let blocks = (0..5)
            .map(|i| ResidualBlock::new(store, rng, &format!("{p}.res{i}"), g, 4 * f, 4 * f, 1))
            .collect();
        let widths = [
            (4 * f, 4 * f, 3),
            (4 * f + 2 * f, 2 * f, 3),
            (2 * f, 2 * f, 3),
            (2 * f + f, f, 3),
            (f, f, 3),
            (f, f / 2, 3),
            (f / 2, cfg.classes, 1),
        ];
        let last = widths.len() - 1;
        // near-uniform class posteriors at init
        let convs = widths
            .iter()
            .enumerate()
            .map(|(i, &(a, b, k))| {
                let gain = if i == last { 0.1 } else { 1.0 };
                Conv2d::new(store, rng, &format!("{p}.conv{i}"), g, a, b, k, 1, gain)
            })
            .collect();
        TaskDecoder { blocks, convs }
    }

    /// `(residual blocks, convolutions, upsamplings)`.
    pub fn topology(&self) -> (usize, usize, usize) {
        (self.blocks.len(), self.convs.len(), TASK_DECODER_UPSAMPLINGS)
    }

    pub(crate) fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, z: &[Var; 3]) -> Result<TaskVars> {
        let mut x = z[2];
        for b in &self.blocks {
            x = b.forward(g, store, x)?;
        }
        let c = &self.convs;
        let conv_relu = |g: &mut Graph<T>, i: usize, x: Var| -> Result<Var> {
            let y = c[i].forward(g, store, x)?;
            Ok(g.relu(y))
        };
        x = conv_relu(g, 0, x)?;
        let mut features = [x; 3];
        for stage in 0..TASK_DECODER_UPSAMPLINGS {
            x = g.upsample2x(x);
            if stage < 2 {
                x = g.concat(&[x, z[1 - stage]])?;
            }
            // pre-activation, so the consistency target cannot be met by
            // silencing units on both branches
            let pre = c[1 + 2 * stage].forward(g, store, x)?;
            features[stage] = pre;
            x = g.relu(pre);
            if stage < 2 {
                x = conv_relu(g, 2 + 2 * stage, x)?;
            }
        }
        let logits = c[6].forward(g, store, x)?;
        Ok(TaskVars { logits, features })
    }
}
