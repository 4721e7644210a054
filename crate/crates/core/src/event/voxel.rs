use crate::error::{Error, Result};
use crate::event::EventWindow;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_BINS: usize = 5;

/// `B x H x W` grid of bilinear-in-time polarity accumulations, bins outermost.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid<T> {
    bins: usize,
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> VoxelGrid<T> {
    pub fn zeros(bins: usize, height: usize, width: usize) -> Self {
        VoxelGrid {
            bins,
            height,
            width,
            values: vec![T::zero(); bins * height * width],
        }
    }

    pub fn from_values(bins: usize, height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != bins * height * width {
            return Err(Error::validation(format!(
                "voxel grid {bins}x{height}x{width} needs {} values, got {}",
                bins * height * width,
                values.len()
            )));
        }
        Ok(VoxelGrid {
            bins,
            height,
            width,
            values,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, b: usize, y: usize, x: usize) -> T {
        self.values[(b * self.height + y) * self.width + x]
    }

    /// Signed sum over all cells, accumulated in double precision.
    pub fn sum(&self) -> f64 {
        self.values.iter().map(|v| v.as_f64()).sum()
    }

    /// `[1, B, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_vec(&[1, self.bins, self.height, self.width], self.values.clone())
            .expect("grid shape is consistent")
    }

    pub fn cast<U: Scalar>(&self) -> VoxelGrid<U> {
        VoxelGrid {
            bins: self.bins,
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Exact temporal weights of one event as integer numerators over a common
/// denominator: `weight(lower) = lower_num / denom`,
/// `weight(lower + 1) = upper_num / denom`, and `lower_num + upper_num == denom`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TemporalWeights {
    pub lower: usize,
    pub lower_num: u128,
    pub upper_num: u128,
    pub denom: u128,
}

impl TemporalWeights {
    pub fn as_f64(&self) -> (f64, f64) {
        (
            self.lower_num as f64 / self.denom as f64,
            self.upper_num as f64 / self.denom as f64,
        )
    }
}

/// Triangular-kernel weights for timestamp `t` in a window starting at `t0`
/// with duration `dt`, over `bins` bins. `dt == 0` sends everything to bin 0.
pub fn temporal_weights(t: u64, t0: u64, dt: u64, bins: usize) -> TemporalWeights {
    debug_assert!(t >= t0 && t - t0 <= dt && bins >= 1);
    if dt == 0 || bins == 1 {
        return TemporalWeights {
            lower: 0,
            lower_num: 1,
            upper_num: 0,
            denom: 1,
        };
    }
    let scaled = (bins as u128 - 1) * (t - t0) as u128;
    let denom = dt as u128;
    let lower = (scaled / denom) as usize;
    let rem = scaled % denom;
    TemporalWeights {
        lower,
        lower_num: denom - rem,
        upper_num: rem,
        denom,
    }
}

/// Accumulates a window into a `bins x height x width` grid.
///
/// Accumulation is exact: every contribution is an integer multiple of
/// `1 / dt`, so cell numerators are summed as integers and divided once.
/// The result is therefore independent of event order, and the grid sum
/// equals the polarity sum up to a single rounding per cell.
pub fn build_voxel_grid<T: Scalar>(
    window: &EventWindow,
    bins: usize,
    width: usize,
    height: usize,
) -> Result<VoxelGrid<T>> {
    if bins == 0 {
        return Err(Error::validation("a voxel grid needs at least one bin"));
    }
    if let Some(e) = window
        .events()
        .iter()
        .find(|e| e.x as usize >= width || e.y as usize >= height)
    {
        return Err(Error::validation(format!(
            "event at ({}, {}) outside {width}x{height} grid",
            e.x, e.y
        )));
    }
    let plane = width * height;
    let mut numer = vec![0i128; bins * plane];
    let (t0, dt) = (window.t0(), window.duration());
    let mut denom = 1u128;
    for e in window.events() {
        let w = temporal_weights(e.t, t0, dt, bins);
        denom = w.denom;
        let pix = e.y as usize * width + e.x as usize;
        let s = e.p.sign() as i128;
        numer[w.lower * plane + pix] += s * w.lower_num as i128;
        if w.upper_num != 0 {
            numer[(w.lower + 1) * plane + pix] += s * w.upper_num as i128;
        }
    }
    let d = denom as f64;
    let values = numer.iter().map(|&n| T::lit(n as f64 / d)).collect();
    VoxelGrid::from_values(bins, height, width, values)
}
