//! Command-line entry point. Every subcommand writes its artifacts under
//! `--out` and is deterministic for a given `--seed` and inputs.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::datasets::store::{read_manifest, read_source, read_target, write_dataset, Dataset, DatasetSpec, TargetLoad, TargetSplit};
use crate::datasets::{generate_scene, Domain, SceneConfig, TargetSet};
use crate::error::{Error, Result};
use crate::evalkit::{alignment_dissimilarity, evaluate_events, EvalReport};
use crate::event::io::{read_events, write_events, write_voxel};
use crate::event::{build_voxel_grid, simulate_events, window_by_count, SimulatorConfig, VoxelGrid};
use crate::models::checkpoint::Checkpoint;
use crate::models::pretrain::{pretrain_reconstruction, PretrainConfig};
use crate::models::{EssModel, FrozenFeatures, ModelConfig};
use crate::trainer::{Mode, TrainConfig, TrainData, TrainState, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

const CONFIG_HELP: &str = "\
Training config keys (file lines `key = value`, `[section]` prefixes allowed;
`--set key=value` overrides the file):
  preset                         toy | ddd17 | dsec starting values
  mode                           uda | events | events+frames | source-only
  iterations                     optimizer updates
  batch_size                     samples per micro-batch
  grad_accumulation              micro-batches averaged per update
  seed                           sampling and initialization seed
  optim.lr                       base learning rate
  optim.image_encoder_lr_factor  image-encoder rate multiplier in stage 1, in (0, 1]
  optim.stage2_task_lr_factor    task-decoder rate multiplier in stage 2, in [0, 1]
  optim.beta1, optim.beta2, optim.eps  moment estimates of the optimizer
  loss.lambda1                   task loss weight
  loss.lambda2                   embedding consistency weight
  loss.lambda3                   prediction consistency weight
  loss.lambda4                   task-feature consistency weight
  loss.dice_eps                  soft Dice smoothing
  loss.prob_floor                probability floor of the symmetric KL
  ablation.no_cons_emb, ablation.no_cons_pred, ablation.no_cons_task
  train.checkpoint_every, train.eval_every  cadences; 0 means only at the end
  train.event_encoder            update the event encoder in events mode
  train.bptt                     recorded recurrent steps; 0 records all
  data.events_per_window         events per voxel grid
  data.n_grids                   grids per sample";

#[derive(Parser, Debug)]
#[command(name = "ess", about = "Event-based semantic segmentation with image-to-event domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic two-domain dataset.
    GenData(GenDataArgs),
    /// Render one scene and simulate its event stream (EVT1).
    Simulate(SimulateArgs),
    /// Cut an EVT1 stream into fixed-count windows and write VOX1 grids.
    Voxelize(VoxelizeArgs),
    /// Pretrain the event encoder and reconstruction decoder.
    PretrainRecon(PretrainArgs),
    /// Train segmentation.
    #[command(after_help = CONFIG_HELP)]
    Train(TrainArgs),
    /// Evaluate event segmentation on a target split.
    Eval(EvalArgs),
    /// Score alignment between the event and image branches.
    Align(EvalArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    source_size: usize,
    #[arg(long, default_value_t = 128)]
    target_train: usize,
    #[arg(long, default_value_t = 48)]
    target_test: usize,
    #[arg(long, default_value_t = 128)]
    pretext: usize,
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    n_grids: usize,
    #[arg(long, default_value_t = 2000)]
    events_per_window: usize,
    #[arg(long, default_value_t = 5)]
    bins: usize,
    #[arg(long, default_value_t = 0.15)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `source` or `target` appearance.
    #[arg(long, default_value = "target")]
    domain: String,
    #[arg(long, default_value_t = 0.15)]
    threshold: f64,
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args, Debug)]
struct VoxelizeArgs {
    /// EVT1 input stream.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    bins: usize,
    #[arg(long, default_value_t = 2000)]
    events_per_window: usize,
    /// Accepted for uniformity; voxelization draws no random numbers.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 600)]
    iterations: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Recorded recurrent steps; 0 records all.
    #[arg(long, default_value_t = 4)]
    bptt: usize,
    #[arg(long, default_value_t = 8)]
    base_width: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set loss.lambda2=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint providing pretrained event networks, or a run to resume.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Continue the optimizer and iteration counter stored in `--init`.
    #[arg(long)]
    resume: bool,
    #[arg(long, default_value_t = 8)]
    base_width: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for uniformity; evaluation draws no random numbers.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Validation(_) | Error::Decode { .. } | Error::Checkpoint(_) | Error::Io { .. } => EXIT_DATA,
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Simulate(a) => simulate(a),
        Command::Voxelize(a) => voxelize(a),
        Command::PretrainRecon(a) => pretrain(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a, false),
        Command::Align(a) => eval(a, true),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut spec = DatasetSpec {
        seed: a.seed,
        source_size: a.source_size,
        target_train: a.target_train,
        target_test: a.target_test,
        pretext: a.pretext,
        ..DatasetSpec::default()
    };
    spec.target.scene.classes = a.classes;
    spec.target.n_grids = a.n_grids;
    spec.target.events_per_window = a.events_per_window;
    spec.target.bins = a.bins;
    spec.target.simulator = SimulatorConfig { threshold: a.threshold };
    spec.target.scene.validate().map_err(as_config)?;
    spec.target.simulator.validate().map_err(as_config)?;
    let ds = Dataset::generate(&spec)?;
    write_dataset(&a.out, &ds)?;
    log::info!("wrote dataset to {}", a.out.display());
    Ok(())
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Validation(m) => Error::Config(m),
        other => other,
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let domain = match a.domain.as_str() {
        "source" => Domain::Source,
        "target" => Domain::Target,
        other => return Err(Error::Config(format!("unknown domain {other:?}; expected source or target"))),
    };
    let mut scene_cfg = SceneConfig::default();
    if let Some(f) = a.frames {
        scene_cfg.frames = f;
    }
    let cfg = SimulatorConfig { threshold: a.threshold };
    cfg.validate().map_err(as_config)?;
    let scene = generate_scene(a.seed, &scene_cfg, domain)?;
    let stream = simulate_events(&scene.frames, &cfg)?;
    create_dir(&a.out)?;
    write_events(&a.out.join("events.evt"), &stream)?;
    let last = scene.labels.last().expect("scenes have frames");
    fs::write(a.out.join("last_labels.bin"), crate::datasets::store::encode_labels(last)?)
        .map_err(|e| Error::io(a.out.join("last_labels.bin"), e))?;
    println!("{} events, polarity sum {}", stream.len(), stream.polarity_sum());
    Ok(())
}

fn voxelize(a: VoxelizeArgs) -> Result<()> {
    if a.bins == 0 || a.events_per_window == 0 {
        return Err(Error::Config("bins and events per window must be positive".into()));
    }
    let stream = read_events(&a.input)?;
    let windows = window_by_count(&stream, a.events_per_window)?;
    create_dir(&a.out)?;
    for (i, w) in windows.iter().enumerate() {
        let grid: VoxelGrid<f32> = build_voxel_grid(w, a.bins, stream.width() as usize, stream.height() as usize)?;
        write_voxel(&a.out.join(format!("grid_{i:05}.vox")), &grid)?;
    }
    println!("{} grids", windows.len());
    Ok(())
}

fn model_config(spec: &DatasetSpec, base_width: usize) -> Result<ModelConfig> {
    let s = &spec.target.scene;
    let cfg = ModelConfig {
        base_width,
        bins: spec.target.bins,
        classes: s.classes,
        height: s.height,
        width: s.width,
    };
    cfg.validate().map_err(as_config)?;
    Ok(cfg)
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let spec = read_manifest(&a.data)?;
    let cfg = model_config(&spec, a.base_width)?;
    let pretext = read_target(&a.data, &spec, TargetSplit::Pretext, TargetLoad { labels: false, images: true })?;
    let mut model = EssModel::<f32>::new(cfg, a.seed)?;
    let pc = PretrainConfig {
        iterations: a.iterations,
        batch_size: a.batch_size,
        lr: a.lr,
        bptt: (a.bptt > 0).then_some(a.bptt),
        seed: a.seed,
    };
    let report = pretrain_reconstruction(&mut model, &pretext, &pc)?;
    create_dir(&a.out)?;
    let lines: String = report
        .losses
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{{\"iteration\":{i},\"recon_l1\":{l}}}\n"))
        .collect();
    write_text(&a.out.join("pretrain_metrics.jsonl"), &lines)?;
    model.to_checkpoint().save(&a.out.join("pretrain.ckpt"))?;
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_text(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => TrainConfig::toy(),
    };
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(m) = &a.mode {
        cfg.mode = m.parse()?;
    }
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    let spec = read_manifest(&a.data)?;
    if spec.target.n_grids != cfg.n_grids || spec.target.events_per_window != cfg.events_per_window {
        return Err(Error::Config(format!(
            "dataset has {} grids of {} events, config expects {} of {}",
            spec.target.n_grids, spec.target.events_per_window, cfg.n_grids, cfg.events_per_window
        )));
    }
    let mut state = match &a.init {
        Some(p) if a.resume => TrainState::from_checkpoint(&Checkpoint::load(p)?, &cfg)?,
        Some(p) => {
            // pretrained event networks, fresh image branch
            let ck = Checkpoint::load(p)?;
            let pre = EssModel::<f32>::from_checkpoint(&ck)?;
            let mut m = EssModel::new(*pre.config(), cfg.seed)?;
            m.copy_group_from(&pre, crate::nn::NetGroup::EventEncoder)?;
            m.copy_group_from(&pre, crate::nn::NetGroup::ReconDecoder)?;
            TrainState::new(m, &cfg)
        }
        None => TrainState::new(EssModel::new(model_config(&spec, a.base_width)?, cfg.seed)?, &cfg),
    };
    let source = match cfg.mode {
        Mode::Events => Vec::new(),
        _ => read_source(&a.data, &spec)?,
    };
    // uda and source-only runs never load event labels
    let needs_labels = matches!(cfg.mode, Mode::Events | Mode::EventsFrames);
    let load = TargetLoad {
        labels: needs_labels,
        images: false,
    };
    let target = TargetSet::new(read_target(&a.data, &spec, TargetSplit::Train, load)?);
    let eval = TargetSet::new(read_target(&a.data, &spec, TargetSplit::Test, TargetLoad::ALL)?);
    create_dir(&a.out)?;
    write_text(&a.out.join("config.txt"), &cfg.to_text())?;
    let metrics = fs::File::create(a.out.join("metrics.jsonl")).map_err(|e| Error::io(a.out.join("metrics.jsonl"), e))?;
    let data = TrainData {
        source: &source,
        target: &target,
        eval: Some(&eval),
    };
    let mut trainer = Trainer::new(cfg.clone(), data)?
        .with_metrics_writer(BufWriter::new(metrics))
        .with_checkpoint_dir(a.out.join("checkpoints"));
    if !target.is_empty() && cfg.mode != Mode::Events {
        trainer = trainer.with_target_features(Arc::new(FrozenFeatures::compute(&state.model, &target)?));
    }
    let summary = trainer.run(&mut state)?;
    if let Some(m) = summary.final_eval {
        write_text(&a.out.join("report.json"), &EvalReport::new("test", eval.len(), m).to_json())?;
    }
    write_text(
        &a.out.join("audit.txt"),
        &format!("event_label_reads = {}\n", target.label_reads()),
    )?;
    Ok(())
}

fn eval(a: EvalArgs, align_only: bool) -> Result<()> {
    let split: TargetSplit = a.split.parse()?;
    let spec = read_manifest(&a.data)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = EssModel::<f32>::from_checkpoint(&ck)?;
    let set = TargetSet::new(read_target(&a.data, &spec, split, TargetLoad::ALL)?);
    let features = FrozenFeatures::compute(&model, &set)?;
    let alignment = alignment_dissimilarity(&model, &set, Some(&features))?;
    let text = if align_only {
        format!("{{\"split\":\"{split}\",\"alignment\":{alignment}}}\n")
    } else {
        if !set.has_labels() {
            return Err(Error::validation(format!("split {split} has no labels to evaluate against")));
        }
        let m = evaluate_events(&model, &set, Some(&features))?;
        let mut v = serde_json::to_value(EvalReport::new(split.to_string(), set.len(), m)).expect("report serialises");
        v["alignment"] = serde_json::json!(alignment);
        serde_json::to_string_pretty(&v).expect("report serialises") + "\n"
    };
    print!("{text}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        let name = if align_only { "alignment.json" } else { "report.json" };
        write_text(&out.join(name), &text)?;
    }
    Ok(())
}
