use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{GrayImage, LabelMap};

/// Scene geometry and motion. Style comes from the [`Domain`].
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Class count including background class 0.
    pub classes: usize,
    pub frame_interval_us: u64,
    pub shapes: (usize, usize),
    /// Shape radius range in pixels.
    pub radius: (f64, f64),
    /// Speed range in pixels per frame.
    pub speed: (f64, f64),
    /// Allowed foreground fraction of every frame's label map.
    pub foreground: (f64, f64),
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 64,
            frames: 160,
            classes: 6,
            frame_interval_us: 1000,
            shapes: (2, 4),
            radius: (8.0, 14.0),
            speed: (0.8, 2.0),
            foreground: (0.08, 0.6),
        }
    }
}

/// Attempts at drawing a layout that meets the foreground bounds.
const MAX_LAYOUT_ATTEMPTS: usize = 200;

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::validation(format!("at least 2 classes are required, got {}", self.classes)));
        }
        if self.classes > ShapeKind::ALL.len() + 1 {
            return Err(Error::validation(format!(
                "at most {} classes are supported",
                ShapeKind::ALL.len() + 1
            )));
        }
        let ranges = [self.radius, self.speed, self.foreground];
        if ranges.iter().any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b && *a >= 0.0)) {
            return Err(Error::validation("scene ranges must be finite, non-negative and ordered"));
        }
        if self.foreground.1 > 1.0 {
            return Err(Error::validation("foreground fraction bound exceeds 1"));
        }
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(Error::validation("scene dimensions and frame count must be positive"));
        }
        if self.shapes.0 == 0 || self.shapes.0 > self.shapes.1 {
            return Err(Error::validation("shape count range must be non-empty and start at 1 or more"));
        }
        if 2.0 * self.radius.1 >= self.height.min(self.width) as f64 {
            return Err(Error::validation("shapes must fit inside the frame"));
        }
        Ok(())
    }
}

/// The geometry that defines a foreground class (class id = index + 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Square,
    Triangle,
    Diamond,
    Ring,
    Cross,
    WideEllipse,
    TallEllipse,
    Hexagon,
    Corner,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 10] = [
        ShapeKind::Disk,
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Diamond,
        ShapeKind::Ring,
        ShapeKind::Cross,
        ShapeKind::WideEllipse,
        ShapeKind::TallEllipse,
        ShapeKind::Hexagon,
        ShapeKind::Corner,
    ];

    pub fn for_class(class: u8) -> ShapeKind {
        assert!(class >= 1, "class 0 is background");
        Self::ALL[(class as usize - 1) % Self::ALL.len()]
    }

    /// Whether offset `(dx, dy)` from the centre lies inside a shape of radius `r`.
    pub fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        let (ax, ay) = (dx.abs(), dy.abs());
        match self {
            ShapeKind::Disk => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => ax <= 0.8 * r && ay <= 0.8 * r,
            ShapeKind::Triangle => {
                // apex up, base at 0.7r
                dy >= -r && dy <= 0.7 * r && ax <= (dy + r) / 1.7
            }
            ShapeKind::Diamond => ax + ay <= 1.1 * r,
            ShapeKind::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= 0.3 * r * r
            }
            ShapeKind::Cross => (ax <= 0.33 * r && ay <= r) || (ay <= 0.33 * r && ax <= r),
            ShapeKind::WideEllipse => (dx / r).powi(2) + (dy / (0.5 * r)).powi(2) <= 1.0,
            ShapeKind::TallEllipse => (dx / (0.5 * r)).powi(2) + (dy / r).powi(2) <= 1.0,
            ShapeKind::Hexagon => ay <= 0.866 * r && ax + 0.577 * ay <= r,
            ShapeKind::Corner => {
                let inside = ax <= 0.9 * r && ay <= 0.9 * r;
                inside && (dx <= -0.3 * r || dy >= 0.3 * r)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Texture {
    /// Per-pixel uniform noise of the given amplitude, fixed to the object.
    Speckle { amplitude: f64 },
    /// Sinusoidal stripes fixed to the object.
    Stripes { amplitude: f64, period: (f64, f64) },
}

/// Appearance parameters of one domain. Shapes are always brighter than the
/// background; the domains differ in levels, contrast and texture only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainStyle {
    pub background: (f64, f64),
    pub contrast: (f64, f64),
    pub texture: Texture,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn style(self) -> DomainStyle {
        match self {
            Domain::Source => DomainStyle {
                background: (0.15, 0.35),
                contrast: (0.35, 0.55),
                texture: Texture::Speckle { amplitude: 0.06 },
            },
            Domain::Target => DomainStyle {
                background: (0.45, 0.6),
                contrast: (0.2, 0.35),
                texture: Texture::Stripes {
                    amplitude: 0.08,
                    period: (3.0, 7.0),
                },
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Shape {
    class: u8,
    center: (f64, f64),
    velocity: (f64, f64),
    radius: f64,
    level: f64,
    // stripe orientation and period, or speckle seed
    angle: f64,
    period: f64,
    phase: f64,
    seed: u64,
}

/// Sampled content of one scene; frames are rendered on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayout {
    config: SceneConfig,
    domain: Domain,
    background: f64,
    background_seed: u64,
    shapes: Vec<Shape>,
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Position in `[lo, hi]` after bouncing off both ends.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let len = hi - lo;
    if len <= 0.0 {
        return lo;
    }
    let u = (x - lo).rem_euclid(2.0 * len);
    lo + if u > len { 2.0 * len - u } else { u }
}

/// Deterministic noise in `[-1, 1]` for an integer lattice point.
fn lattice_noise(seed: u64, x: i64, y: i64) -> f64 {
    let h = super::derive_seed(seed, x as u64, (y as u64).wrapping_mul(0x1_0000_0001));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

impl SceneLayout {
    fn sample(rng: &mut ChaCha8Rng, config: &SceneConfig, domain: Domain) -> Self {
        let style = domain.style();
        let count = rng.random_range(config.shapes.0..=config.shapes.1);
        let background = uniform(rng, style.background);
        let (w, h) = (config.width as f64, config.height as f64);
        let shapes = (0..count)
            .map(|_| {
                let radius = uniform(rng, config.radius);
                let speed = uniform(rng, config.speed);
                let dir = rng.random_range(0.0..std::f64::consts::TAU);
                let period = match style.texture {
                    Texture::Stripes { period, .. } => uniform(rng, period),
                    Texture::Speckle { .. } => 1.0,
                };
                Shape {
                    class: rng.random_range(1..config.classes as u8),
                    center: (rng.random_range(radius..w - radius), rng.random_range(radius..h - radius)),
                    velocity: (speed * dir.cos(), speed * dir.sin()),
                    radius,
                    level: background + uniform(rng, style.contrast),
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                    period,
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    seed: rng.random(),
                }
            })
            .collect();
        SceneLayout {
            config: config.clone(),
            domain,
            background,
            background_seed: rng.random(),
            shapes,
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    fn texture(&self, amplitude_scale: f64, s: Option<&Shape>, lx: f64, ly: f64) -> f64 {
        match self.domain.style().texture {
            Texture::Speckle { amplitude } => {
                let seed = s.map_or(self.background_seed, |s| s.seed);
                amplitude * amplitude_scale * lattice_noise(seed, lx.floor() as i64, ly.floor() as i64)
            }
            Texture::Stripes { amplitude, .. } => {
                let (angle, period, phase) = s.map_or((0.3, 9.0, 0.0), |s| (s.angle, s.period, s.phase));
                let u = lx * angle.cos() + ly * angle.sin();
                amplitude * amplitude_scale * (std::f64::consts::TAU * u / period + phase).sin()
            }
        }
    }

    /// Renders frame `index` and its label map. Later shapes occlude earlier ones.
    pub fn render(&self, index: usize) -> (GrayImage, LabelMap) {
        let (w, h) = (self.config.width, self.config.height);
        let mut image = Vec::with_capacity(w * h);
        let mut labels = Vec::with_capacity(w * h);
        let f = index as f64;
        let centers: Vec<(f64, f64)> = self
            .shapes
            .iter()
            .map(|s| {
                (
                    reflect(s.center.0 + s.velocity.0 * f, s.radius, w as f64 - s.radius),
                    reflect(s.center.1 + s.velocity.1 * f, s.radius, h as f64 - s.radius),
                )
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut value = self.background + self.texture(0.5, None, px, py);
                let mut label = 0;
                for (s, c) in self.shapes.iter().zip(&centers) {
                    let (dx, dy) = (px - c.0, py - c.1);
                    if ShapeKind::for_class(s.class).contains(dx, dy, s.radius) {
                        value = s.level + self.texture(1.0, Some(s), dx, dy);
                        label = s.class;
                    }
                }
                image.push(value.clamp(0.0, 1.0) as f32);
                labels.push(label);
            }
        }
        (
            GrayImage::new(h, w, image).expect("sized"),
            LabelMap::new(h, w, labels).expect("sized"),
        )
    }

    fn foreground_ok(&self, labels: &LabelMap) -> bool {
        let fg = labels.data.iter().filter(|&&l| l != 0).count() as f64 / labels.data.len() as f64;
        fg >= self.config.foreground.0 && fg <= self.config.foreground.1
    }
}

/// A rendered sequence with per-frame labels and microsecond timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub layout: SceneLayout,
    pub frames: Vec<(u64, GrayImage)>,
    pub labels: Vec<LabelMap>,
}

/// Draws layouts until one keeps every frame inside the foreground bounds.
pub(crate) fn sample_layout(seed: u64, config: &SceneConfig, domain: Domain, frames: &[usize]) -> Result<SceneLayout> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let layout = SceneLayout::sample(&mut rng, config, domain);
        if frames.iter().all(|&f| layout.foreground_ok(&layout.render(f).1)) {
            return Ok(layout);
        }
    }
    Err(Error::validation(format!(
        "no layout within foreground bounds {:?} after {MAX_LAYOUT_ATTEMPTS} attempts",
        config.foreground
    )))
}

pub fn generate_scene(seed: u64, config: &SceneConfig, domain: Domain) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let layout = SceneLayout::sample(&mut rng, config, domain);
        let rendered: Vec<_> = (0..config.frames).map(|f| layout.render(f)).collect();
        if rendered.iter().all(|(_, l)| layout.foreground_ok(l)) {
            let (frames, labels) = rendered
                .into_iter()
                .enumerate()
                .map(|(i, (img, l))| ((i as u64 * config.frame_interval_us, img), l))
                .unzip();
            return Ok(Scene { layout, frames, labels });
        }
    }
    Err(Error::validation(format!(
        "no scene within foreground bounds {:?} after {MAX_LAYOUT_ATTEMPTS} attempts",
        config.foreground
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_stays_in_range() {
        for i in -50..50 {
            let v = reflect(i as f64 * 1.7, 2.0, 10.0);
            assert!((2.0..=10.0).contains(&v));
        }
        assert_eq!(reflect(11.0, 2.0, 10.0), 9.0);
        assert_eq!(reflect(0.0, 2.0, 10.0), 4.0);
    }

    #[test]
    fn shapes_are_distinct() {
        // Each pair of shape masks differs on a 41x41 lattice.
        let masks: Vec<Vec<bool>> = ShapeKind::ALL
            .iter()
            .map(|k| {
                (0..41 * 41)
                    .map(|i| k.contains((i % 41) as f64 - 20.0, (i / 41) as f64 - 20.0, 20.0))
                    .collect()
            })
            .collect();
        for i in 0..masks.len() {
            for j in i + 1..masks.len() {
                let diff = masks[i].iter().zip(&masks[j]).filter(|(a, b)| a != b).count();
                assert!(diff > 40, "{:?} vs {:?}", ShapeKind::ALL[i], ShapeKind::ALL[j]);
            }
        }
    }

    #[test]
    fn class_count_is_validated() {
        let cfg = SceneConfig {
            classes: 1,
            ..SceneConfig::default()
        };
        assert!(generate_scene(0, &cfg, Domain::Source).is_err());
    }

    #[test]
    fn shapes_are_brighter_than_background() {
        let s = generate_scene(5, &SceneConfig::default(), Domain::Target).unwrap();
        let (img, lab) = (&s.frames[0].1, &s.labels[0]);
        let mean = |fg: bool| {
            let v: Vec<f64> = img
                .data
                .iter()
                .zip(&lab.data)
                .filter(|(_, &l)| (l != 0) == fg)
                .map(|(&v, _)| v as f64)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(true) > mean(false) + 0.1);
    }
}
