//! On-disk dataset layout.
//!
//! ```text
//! manifest.txt                      seeds, generation config, split ranges
//! source/img_%05d.bin               IMG1: magic, u16 h, u16 w, f32 pixels
//! source/label_%05d.bin             LBL1: magic, u16 h, u16 w, u8 labels
//! target/sample_%05d/grid_%02d.vox  VOX1 grids in temporal order
//! target/sample_%05d/eval_label.bin optional LBL1
//! target/sample_%05d/image.bin      optional IMG1 (paired frame)
//! ```
//!
//! Target samples of all splits share one numbering; the manifest assigns
//! index ranges to the `train`, `test` and `pretext` splits.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datasets::{make_pretext, make_source, make_target, make_target_test, SceneConfig, TargetConfig, TargetSample};
use crate::error::{Error, Result};
use crate::event::io::{read_voxel, write_voxel};
use crate::event::SimulatorConfig;
use crate::image::{GrayImage, LabelMap, LabeledImage};
use crate::kv;

pub const MANIFEST: &str = "manifest.txt";
const FORMAT: &str = "ess-dataset-1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TargetSplit {
    Train,
    Test,
    Pretext,
}

impl TargetSplit {
    pub const ALL: [TargetSplit; 3] = [TargetSplit::Train, TargetSplit::Test, TargetSplit::Pretext];
}

impl fmt::Display for TargetSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetSplit::Train => "train",
            TargetSplit::Test => "test",
            TargetSplit::Pretext => "pretext",
        })
    }
}

impl FromStr for TargetSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(TargetSplit::Train),
            "test" => Ok(TargetSplit::Test),
            "pretext" => Ok(TargetSplit::Pretext),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Everything needed to regenerate a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub seed: u64,
    pub source_size: usize,
    pub target_train: usize,
    pub target_test: usize,
    pub pretext: usize,
    pub target: TargetConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            seed: 0,
            source_size: 256,
            target_train: 128,
            target_test: 48,
            pretext: 128,
            target: TargetConfig::default(),
        }
    }
}

impl DatasetSpec {
    pub fn split_len(&self, split: TargetSplit) -> usize {
        match split {
            TargetSplit::Train => self.target_train,
            TargetSplit::Test => self.target_test,
            TargetSplit::Pretext => self.pretext,
        }
    }

    /// First global target index of a split.
    pub fn split_start(&self, split: TargetSplit) -> usize {
        match split {
            TargetSplit::Train => 0,
            TargetSplit::Test => self.target_train,
            TargetSplit::Pretext => self.target_train + self.target_test,
        }
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let s = &self.target.scene;
        let mut v = vec![
            ("format", FORMAT.to_string()),
            ("seed", self.seed.to_string()),
            ("source.size", self.source_size.to_string()),
            ("scene.height", s.height.to_string()),
            ("scene.width", s.width.to_string()),
            ("scene.frames", s.frames.to_string()),
            ("scene.classes", s.classes.to_string()),
            ("scene.frame_interval_us", s.frame_interval_us.to_string()),
            ("scene.shapes_min", s.shapes.0.to_string()),
            ("scene.shapes_max", s.shapes.1.to_string()),
            ("scene.radius_min", s.radius.0.to_string()),
            ("scene.radius_max", s.radius.1.to_string()),
            ("scene.speed_min", s.speed.0.to_string()),
            ("scene.speed_max", s.speed.1.to_string()),
            ("scene.foreground_min", s.foreground.0.to_string()),
            ("scene.foreground_max", s.foreground.1.to_string()),
            ("target.n_grids", self.target.n_grids.to_string()),
            ("target.events_per_window", self.target.events_per_window.to_string()),
            ("target.bins", self.target.bins.to_string()),
            ("target.threshold", self.target.simulator.threshold.to_string()),
        ];
        for split in TargetSplit::ALL {
            let start = self.split_start(split);
            let key = match split {
                TargetSplit::Train => "split.train",
                TargetSplit::Test => "split.test",
                TargetSplit::Pretext => "split.pretext",
            };
            v.push((key, format!("{start}..{}", start + self.split_len(split))));
        }
        v
    }

    fn from_map(m: &std::collections::BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            m.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Config(format!("manifest is missing {k:?}")))
        };
        fn p<V: FromStr>(k: &str, raw: &str) -> Result<V> {
            kv::parse_value(k, raw)
        }
        if get("format")? != FORMAT {
            return Err(Error::Config(format!("unsupported dataset format {:?}", get("format")?)));
        }
        let range = |k: &str| -> Result<(usize, usize)> {
            let raw = get(k)?;
            let (a, b) = raw
                .split_once("..")
                .ok_or_else(|| Error::Config(format!("{k}: expected a range, got {raw:?}")))?;
            Ok((p(k, a)?, p(k, b)?))
        };
        let g = |k: &str| -> Result<f64> { p(k, get(k)?) };
        let u = |k: &str| -> Result<usize> { p(k, get(k)?) };
        let scene = SceneConfig {
            height: u("scene.height")?,
            width: u("scene.width")?,
            frames: u("scene.frames")?,
            classes: u("scene.classes")?,
            frame_interval_us: p("scene.frame_interval_us", get("scene.frame_interval_us")?)?,
            shapes: (u("scene.shapes_min")?, u("scene.shapes_max")?),
            radius: (g("scene.radius_min")?, g("scene.radius_max")?),
            speed: (g("scene.speed_min")?, g("scene.speed_max")?),
            foreground: (g("scene.foreground_min")?, g("scene.foreground_max")?),
        };
        let spec = DatasetSpec {
            seed: p("seed", get("seed")?)?,
            source_size: u("source.size")?,
            target_train: { let (a, b) = range("split.train")?; b - a },
            target_test: { let (a, b) = range("split.test")?; b - a },
            pretext: { let (a, b) = range("split.pretext")?; b - a },
            target: TargetConfig {
                scene,
                n_grids: u("target.n_grids")?,
                events_per_window: u("target.events_per_window")?,
                bins: u("target.bins")?,
                simulator: SimulatorConfig {
                    threshold: g("target.threshold")?,
                },
            },
        };
        for split in TargetSplit::ALL {
            let key = format!("split.{split}");
            let start = spec.split_start(split);
            if range(&key)? != (start, start + spec.split_len(split)) {
                return Err(Error::Config(format!("{key} does not follow the preceding splits")));
            }
        }
        Ok(spec)
    }
}

/// A fully generated dataset in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub source: Vec<LabeledImage>,
    pub target_train: Vec<TargetSample<f32>>,
    pub target_test: Vec<TargetSample<f32>>,
    pub pretext: Vec<TargetSample<f32>>,
}

impl Dataset {
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        Ok(Dataset {
            spec: spec.clone(),
            source: make_source(spec.seed, spec.source_size, &spec.target.scene)?,
            target_train: make_target(spec.seed, spec.target_train, &spec.target)?,
            target_test: make_target_test(spec.seed, spec.target_test, &spec.target)?,
            pretext: make_pretext(spec.seed, spec.pretext, &spec.target)?,
        })
    }

    pub fn split(&self, split: TargetSplit) -> &[TargetSample<f32>] {
        match split {
            TargetSplit::Train => &self.target_train,
            TargetSplit::Test => &self.target_test,
            TargetSplit::Pretext => &self.pretext,
        }
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn header(magic: &[u8; 4], h: usize, w: usize) -> Result<Vec<u8>> {
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(Error::validation("array dimensions must fit in 16 bits"));
    }
    let mut out = magic.to_vec();
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.extend_from_slice(&(w as u16).to_le_bytes());
    Ok(out)
}

pub fn encode_image(img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = header(b"IMG1", img.height, img.width)?;
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_labels(l: &LabelMap) -> Result<Vec<u8>> {
    let mut out = header(b"LBL1", l.height, l.width)?;
    out.extend_from_slice(&l.data);
    Ok(out)
}

fn decode_header(bytes: &[u8], magic: &[u8; 4], elem: usize) -> Result<(usize, usize)> {
    if bytes.len() < 8 || &bytes[..4] != magic {
        return Err(Error::decode(0, format!("expected {} header", String::from_utf8_lossy(magic))));
    }
    let h = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    if bytes.len() != 8 + elem * h * w {
        return Err(Error::decode(bytes.len().min(8 + elem * h * w) as u64, "payload length mismatch"));
    }
    Ok((h, w))
}

pub fn decode_image(bytes: &[u8]) -> Result<GrayImage> {
    let (h, w) = decode_header(bytes, b"IMG1", 4)?;
    let data = bytes[8..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    GrayImage::new(h, w, data)
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelMap> {
    let (h, w) = decode_header(bytes, b"LBL1", 1)?;
    LabelMap::new(h, w, bytes[8..].to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn sample_dir(root: &Path, index: usize) -> PathBuf {
    root.join("target").join(format!("sample_{index:05}"))
}

pub fn write_dataset(root: &Path, ds: &Dataset) -> Result<()> {
    mkdir(&root.join("source"))?;
    for (i, s) in ds.source.iter().enumerate() {
        write(&root.join(format!("source/img_{i:05}.bin")), &encode_image(&s.image)?)?;
        write(&root.join(format!("source/label_{i:05}.bin")), &encode_labels(&s.labels)?)?;
    }
    for split in TargetSplit::ALL {
        let start = ds.spec.split_start(split);
        for (k, s) in ds.split(split).iter().enumerate() {
            let dir = sample_dir(root, start + k);
            mkdir(&dir)?;
            for (g, grid) in s.grids.iter().enumerate() {
                write_voxel(&dir.join(format!("grid_{g:02}.vox")), grid)?;
            }
            if let Some(l) = &s.eval_labels {
                write(&dir.join("eval_label.bin"), &encode_labels(l)?)?;
            }
            if let Some(img) = &s.paired_image {
                write(&dir.join("image.bin"), &encode_image(img)?)?;
            }
        }
    }
    write(&root.join(MANIFEST), kv::render(ds.spec.to_pairs()).as_bytes())
}

pub fn read_manifest(root: &Path) -> Result<DatasetSpec> {
    let path = root.join(MANIFEST);
    let text = String::from_utf8(read(&path)?).map_err(|_| Error::Config("manifest is not utf-8".into()))?;
    DatasetSpec::from_map(&kv::parse(&text)?)
}

pub fn read_source(root: &Path, spec: &DatasetSpec) -> Result<Vec<LabeledImage>> {
    (0..spec.source_size)
        .map(|i| {
            let image = decode_image(&read(&root.join(format!("source/img_{i:05}.bin")))?)?;
            let labels = decode_labels(&read(&root.join(format!("source/label_{i:05}.bin")))?)?;
            LabeledImage::new(image, labels)
        })
        .collect()
}

/// What to load besides the grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TargetLoad {
    pub labels: bool,
    pub images: bool,
}

impl TargetLoad {
    pub const GRIDS_ONLY: TargetLoad = TargetLoad {
        labels: false,
        images: false,
    };
    pub const ALL: TargetLoad = TargetLoad {
        labels: true,
        images: true,
    };
}

/// Loads one target split. Label and image files are not even opened unless
/// requested.
pub fn read_target(root: &Path, spec: &DatasetSpec, split: TargetSplit, load: TargetLoad) -> Result<Vec<TargetSample<f32>>> {
    let start = spec.split_start(split);
    (start..start + spec.split_len(split))
        .map(|i| {
            let dir = sample_dir(root, i);
            let grids = (0..spec.target.n_grids)
                .map(|g| read_voxel(&dir.join(format!("grid_{g:02}.vox"))))
                .collect::<Result<Vec<_>>>()?;
            let optional = |name: &str, wanted: bool| -> Result<Option<Vec<u8>>> {
                let p = dir.join(name);
                if wanted && p.exists() {
                    read(&p).map(Some)
                } else {
                    Ok(None)
                }
            };
            let labels = optional("eval_label.bin", load.labels)?.map(|b| decode_labels(&b)).transpose()?;
            let image = optional("image.bin", load.images)?.map(|b| decode_image(&b)).transpose()?;
            TargetSample::new(grids, labels, image)
        })
        .collect()
}
