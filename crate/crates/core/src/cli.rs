//! Command-line front end.
//!
//! Every run writes a [`RunManifest`] next to its outputs. `replay` re-runs
//! a manifest into a fresh directory and checks that every reproducible
//! artifact hashes the same.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::benchmark::{self, BenchmarkConfig, Method};
use crate::checkpoint::{self, CheckpointMeta, FORMAT_VERSION};
use crate::config_file::expand_config;
use crate::dataio::{self, ImageSize, Scenario, SceneConfig, SuiteConfig};
use crate::metrics::{clear_match, MetricCounts};
use crate::pretrain::{self, AdamConfig, TrainConfig};
use crate::report;
use crate::srnn::SrnnParams;
use crate::synth::{self, TrajectoryConfig};
use crate::tracker::{self, Dynamics, Scene, TrackerConfig, UnderflowPolicy};
use crate::{Error, Result, VERSION};

pub fn version_line() -> String {
    format!("dvae-umot {VERSION} (checkpoint format {FORMAT_VERSION})")
}

#[derive(Debug, Parser)]
#[command(
    name = "dvae-umot",
    about = "Unsupervised multi-object tracking with a dynamical VAE",
    disable_version_flag = true,
    after_help = "Every subcommand accepts --config FILE with `key = value` lines naming its flags; flags on the command line win."
)]
struct Cli {
    /// Print the version and the checkpoint format version.
    #[arg(long, short = 'V', global = true)]
    version: bool,
    /// Report errors as JSON on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

/// Parses with repeated flags overriding earlier ones, which is how config
/// file values give way to the command line.
fn parse_cli(argv: &[String]) -> std::result::Result<Cli, clap::Error> {
    let cmd = Cli::command()
        .args_override_self(true)
        .mut_subcommands(|c| c.args_override_self(true));
    let matches = cmd.try_get_matches_from(argv)?;
    Cli::from_arg_matches(&matches)
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic training and validation trajectories.
    SynthData(SynthDataArgs),
    /// Pre-train the SRNN on a synthetic dataset.
    Pretrain(PretrainArgs),
    /// Track the objects of one detection file.
    Track(TrackArgs),
    /// Score tracking results against ground truth.
    Evaluate(EvaluateArgs),
    /// Cut MOTChallenge ground truth and detections into test scenes.
    BuildBenchmark(BuildBenchmarkArgs),
    /// Write the synthetic benchmark scenes.
    SynthBenchmark(SynthBenchmarkArgs),
    /// Run DVAE-UMOT and the linear baseline over a scene set.
    Benchmark(BenchmarkArgs),
    /// Re-render tables and plots from a benchmark report.
    Report(ReportArgs),
    /// Re-run a recorded manifest and compare its artifacts.
    Replay(ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthData(_) => "synth-data",
            Command::Pretrain(_) => "pretrain",
            Command::Track(_) => "track",
            Command::Evaluate(_) => "evaluate",
            Command::BuildBenchmark(_) => "build-benchmark",
            Command::SynthBenchmark(_) => "synth-benchmark",
            Command::Benchmark(_) => "benchmark",
            Command::Report(_) => "report",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Args)]
struct SynthDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 500)]
    val: usize,
    #[arg(long, default_value_t = 60)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 50)]
    patience: usize,
    #[arg(long, default_value_t = 2000)]
    max_epochs: usize,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: self.lr,
                ..Default::default()
            },
            batch_size: self.batch,
            patience: self.patience,
            max_epochs: self.max_epochs,
            seed,
        }
    }
}

#[derive(Debug, Args)]
struct PretrainArgs {
    /// Directory with train.txt and val.txt.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write; the log and summary go next to it.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Clone)]
struct TrackerArgs {
    #[arg(long, default_value_t = 70)]
    iters: usize,
    #[arg(long, default_value_t = 0.04)]
    r_phi: f64,
    #[arg(long, default_value_t = 30)]
    init_window: usize,
    #[arg(long, default_value_t = 20)]
    init_iters: usize,
    /// Fine-tune the SRNN on the sequence during E-Z.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    fine_tune: bool,
    #[arg(long, default_value_t = 1e-4)]
    fine_tune_lr: f64,
    /// Re-estimate the observation covariance in the M-step.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    m_step_phi: bool,
    /// Tracked objects (default: detections in the first frame).
    #[arg(long)]
    n_objects: Option<usize>,
    /// What to do when every assignment likelihood underflows: softmax or uniform.
    #[arg(long, default_value = "softmax", value_parser = parse_underflow)]
    underflow: UnderflowPolicy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_underflow(s: &str) -> std::result::Result<UnderflowPolicy, String> {
    match s {
        "softmax" => Ok(UnderflowPolicy::Softmax),
        "uniform" => Ok(UnderflowPolicy::Uniform),
        _ => Err(format!("expected softmax or uniform, got {s:?}")),
    }
}

impl TrackerArgs {
    fn config(&self, dynamics: Dynamics) -> TrackerConfig {
        TrackerConfig {
            r_phi: self.r_phi,
            init_window: self.init_window,
            init_iters: self.init_iters,
            iters: self.iters,
            fine_tune: self.fine_tune,
            fine_tune_lr: self.fine_tune_lr,
            m_step_phi: self.m_step_phi,
            dynamics,
            seed: self.seed,
            n_objects: self.n_objects,
            record_history: false,
            underflow: self.underflow,
        }
    }
}

#[derive(Debug, Args)]
struct TrackArgs {
    /// Pre-trained checkpoint (required for dvae dynamics).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// MOTChallenge detection file.
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "dvae", value_parser = clap::value_parser!(String))]
    dynamics: String,
    /// Image width in pixels (default: meta.json beside the detections).
    #[arg(long)]
    width: Option<f64>,
    #[arg(long)]
    height: Option<f64>,
    #[command(flatten)]
    tracker: TrackerArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Ground-truth file; repeat together with --results for several sequences.
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    #[arg(long, required = true)]
    results: Vec<PathBuf>,
    /// Report JSON to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct BuildBenchmarkArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    det: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    width: f64,
    #[arg(long)]
    height: f64,
    /// Scene length in frames.
    #[arg(long, default_value_t = 60)]
    length: usize,
    #[arg(long, default_value_t = 3)]
    tracks: usize,
    #[arg(long)]
    first_frame: Option<usize>,
    #[arg(long)]
    last_frame: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    match_iou: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_window(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected START:END, got {s:?}"))?;
    let p = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("bad frame number {x:?}"));
    Ok((p(a)?, p(b)?))
}

#[derive(Debug, Args, Clone)]
struct SuiteArgs {
    /// Comma-separated scenario names.
    #[arg(long, default_value = "separated,sinusoidal,crossing,dropout,crossing+dropout", value_delimiter = ',')]
    scenarios: Vec<Scenario>,
    #[arg(long, default_value_t = 20)]
    scenes_per_scenario: usize,
    #[arg(long, default_value_t = 60)]
    length: usize,
    /// Detection noise as a fraction of box size.
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Frames without object 3 in dropout scenes.
    #[arg(long, default_value = "2:20", value_parser = parse_window)]
    dropout: (usize, usize),
    /// Frames without the second crossing object in crossing+dropout scenes.
    #[arg(long, default_value = "24:36", value_parser = parse_window)]
    crossing_dropout: (usize, usize),
    #[arg(long, default_value_t = 0)]
    suite_seed: u64,
}

impl SuiteArgs {
    fn config(&self) -> SuiteConfig {
        SuiteConfig {
            scenarios: self.scenarios.clone(),
            scenes_per_scenario: self.scenes_per_scenario,
            t_len: self.length,
            noise: self.noise,
            dropout: self.dropout,
            crossing_dropout: self.crossing_dropout,
            seed: self.suite_seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
struct SynthBenchmarkArgs {
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    suite: SuiteArgs,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Pre-train a model into the output directory first.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pretrain_first: bool,
    /// Training sequences for --pretrain-first.
    #[arg(long, default_value_t = 2000)]
    train_size: usize,
    #[arg(long, default_value_t = 500)]
    val_size: usize,
    #[command(flatten)]
    train: TrainArgs,
    /// Scene set written by build-benchmark or synth-benchmark, instead of
    /// generating the synthetic suite.
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Comma-separated methods: dvae-umot, vkf.
    #[arg(long, default_value = "dvae-umot,vkf", value_delimiter = ',', value_parser = parse_method)]
    methods: Vec<Method>,
    /// Also sweep r_phi over these comma-separated values.
    #[arg(long, value_delimiter = ',')]
    r_phi_sweep: Vec<f64>,
    #[command(flatten)]
    suite: SuiteArgs,
    #[command(flatten)]
    tracker: TrackerArgs,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    match s {
        "dvae-umot" | "dvae" => Ok(Method::DvaeUmot),
        "vkf" | "linear" => Ok(Method::Vkf),
        _ => Err(format!("expected dvae-umot or vkf, got {s:?}")),
    }
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// report.json written by `benchmark`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory receiving the replayed artifacts.
    #[arg(long)]
    out: PathBuf,
}

/// Where a command's `--out` points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutKind {
    Dir,
    File,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputHash {
    /// Relative to the output root.
    pub path: String,
    pub sha256: String,
    /// False for files carrying wall-clock times.
    pub reproducible: bool,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub checkpoint_format: u32,
    pub command: String,
    /// Arguments after the program name, with config files expanded.
    pub argv: Vec<String>,
    pub out: PathBuf,
    pub out_kind: OutKind,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<OutputHash>,
    pub wall_seconds: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Path of the manifest for an output target.
pub fn manifest_path(out: &Path, kind: OutKind) -> PathBuf {
    match kind {
        OutKind::Dir => out.join("manifest.json"),
        OutKind::File => {
            let mut name = out.file_name().map(OsString::from).unwrap_or_default();
            name.push(".manifest.json");
            out.with_file_name(name)
        }
    }
}

fn out_root(out: &Path, kind: OutKind) -> PathBuf {
    match kind {
        OutKind::Dir => out.to_path_buf(),
        OutKind::File => out.parent().map(Path::to_path_buf).unwrap_or_default(),
    }
}

/// What a command did, for its manifest.
struct Outcome {
    out: PathBuf,
    out_kind: OutKind,
    config: Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    /// `(path, reproducible)`.
    outputs: Vec<(PathBuf, bool)>,
}

impl Outcome {
    fn new(out: &Path, out_kind: OutKind, config: Value) -> Self {
        Outcome {
            out: out.to_path_buf(),
            out_kind,
            config,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn seed(mut self, name: &str, v: u64) -> Self {
        self.seeds.insert(name.to_string(), v);
        self
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_parent(file: &Path) -> Result<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn sibling(file: &Path, suffix: &str) -> PathBuf {
    let mut name = file.file_name().map(OsString::from).unwrap_or_default();
    name.push(suffix);
    file.with_file_name(name)
}

fn load_params(ckpt: Option<&Path>, needed: bool) -> Result<Option<SrnnParams>> {
    match ckpt {
        Some(p) => Ok(Some(checkpoint::load(p)?.0)),
        None if needed => Err(Error::Config(
            "DVAE dynamics need a pre-trained checkpoint: pass --ckpt (or use --dynamics linear)".into(),
        )),
        None => Ok(None),
    }
}

fn cmd_synth_data(a: &SynthDataArgs) -> Result<Outcome> {
    let cfg = TrajectoryConfig {
        t_len: a.length,
        ..Default::default()
    };
    let stats = synth::gen_dataset(&cfg, a.train, a.val, a.seed, &a.out)?;
    println!(
        "wrote {} training and {} validation sequences of {} frames to {}",
        a.train,
        a.val,
        a.length,
        a.out.display()
    );
    let mut o = Outcome::new(&a.out, OutKind::Dir, json!({ "trajectory": cfg, "train": a.train, "val": a.val }))
        .seed("data", a.seed);
    o.config["mean_avg_speed"] = json!(stats.mean_avg_speed);
    for f in ["train.txt", "val.txt", "stats.json"] {
        o.outputs.push((a.out.join(f), true));
    }
    Ok(o)
}

fn read_split(dir: &Path) -> Result<(Vec<synth::Sequence>, Vec<synth::Sequence>)> {
    Ok((synth::read_sequences(&dir.join("train.txt"))?, synth::read_sequences(&dir.join("val.txt"))?))
}

/// Trains, writing the checkpoint, the epoch log and a summary.
fn pretrain_into(
    train: &[synth::Sequence],
    val: &[synth::Sequence],
    cfg: &TrainConfig,
    ckpt: &Path,
    outputs: &mut Vec<(PathBuf, bool)>,
) -> Result<SrnnParams> {
    create_parent(ckpt)?;
    let res = pretrain::train(train, val, cfg, Some(ckpt), |row| {
        log::info!(
            "epoch {:>4}  train {:.4}  val {:.4}  ({:.1}s)",
            row.epoch,
            row.train_loss,
            row.val_loss,
            row.elapsed_s
        );
    })?;
    // the best epoch was saved during training; rewrite it so the file
    // exists even for lr = 0 runs that never improved past epoch 1
    checkpoint::save(ckpt, &res.params, &CheckpointMeta::new(res.best_epoch, cfg.seed))?;
    let log_path = sibling(ckpt, ".log.csv");
    pretrain::write_log_csv(&log_path, &res.log)?;
    let rmse = pretrain::one_step_rmse(&res.params, val);
    let summary_path = sibling(ckpt, ".summary.json");
    report::write_json(
        &summary_path,
        &json!({
            "best_epoch": res.best_epoch,
            "best_val_loss": res.best_val,
            "epochs_run": res.epochs_run,
            "stop": res.stop,
            "one_step_rmse": rmse,
        }),
    )?;
    println!(
        "best epoch {} of {} (val {:.4}); one-step RMSE {:.6} vs constant-position {:.6}",
        res.best_epoch, res.epochs_run, res.best_val, rmse.model, rmse.constant_position
    );
    outputs.push((ckpt.to_path_buf(), true));
    outputs.push((log_path, false));
    outputs.push((summary_path, true));
    Ok(res.params)
}

fn cmd_pretrain(a: &PretrainArgs) -> Result<Outcome> {
    let (train, val) = read_split(&a.data)?;
    let cfg = a.train.config(a.seed);
    let mut o = Outcome::new(&a.out, OutKind::File, json!({ "train": cfg })).seed("train", a.seed);
    o.inputs.push(a.data.join("train.txt"));
    o.inputs.push(a.data.join("val.txt"));
    pretrain_into(&train, &val, &cfg, &a.out, &mut o.outputs)?;
    Ok(o)
}

fn image_size(width: Option<f64>, height: Option<f64>, detections: &Path) -> Result<ImageSize> {
    match (width, height) {
        (Some(w), Some(h)) => ImageSize::new(w, h),
        (None, None) => detections
            .parent()
            .and_then(dataio::scene_size_hint)
            .ok_or_else(|| {
                Error::Config(format!(
                    "image size unknown for {}: pass --width and --height",
                    detections.display()
                ))
            }),
        _ => Err(Error::Config("pass both --width and --height".into())),
    }
}

fn cmd_track(a: &TrackArgs) -> Result<Outcome> {
    let dynamics: Dynamics = a.dynamics.parse()?;
    let cfg = a.tracker.config(dynamics);
    cfg.validate()?;
    let params = load_params(a.ckpt.as_deref(), dynamics == Dynamics::Dvae)?;
    let size = image_size(a.width, a.height, &a.detections)?;
    let seq = dataio::parse_detections(&a.detections, size)?;
    let scene = Scene::new(seq.frames)?;
    let res = tracker::track(&scene, params.as_ref(), &cfg)?;
    create_dir(&a.out)?;
    let results = a.out.join("results.txt");
    dataio::write_results(&results, &res.m, seq.first_frame, size)?;
    let diag_path = a.out.join("diagnostics.json");
    report::write_json(
        &diag_path,
        &json!({
            "config": cfg,
            "image_size": size,
            "first_frame": seq.first_frame,
            "frames": scene.t_len(),
            "objects": res.n_objects(),
            "diagnostics": res.diagnostics,
        }),
    )?;
    println!(
        "tracked {} objects over {} frames; results in {}",
        res.n_objects(),
        scene.t_len(),
        results.display()
    );
    let mut o = Outcome::new(&a.out, OutKind::Dir, json!({ "tracker": cfg, "image_size": size })).seed("track", cfg.seed);
    o.inputs.push(a.detections.clone());
    o.inputs.extend(a.ckpt.clone());
    o.outputs.push((results, true));
    o.outputs.push((diag_path, true));
    Ok(o)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<Outcome> {
    if a.gt.len() != a.results.len() {
        return Err(Error::Config(format!(
            "{} --gt files but {} --results files",
            a.gt.len(),
            a.results.len()
        )));
    }
    // IoU is unchanged by per-axis scaling, so pixel boxes are scored as read
    let mut total = MetricCounts::default();
    let mut sequences = Vec::new();
    let mut rows = Vec::new();
    for (g, r) in a.gt.iter().zip(&a.results) {
        let gt = dataio::read_track_set(g, ImageSize::UNIT)?;
        let hyp = dataio::read_track_set(r, ImageSize::UNIT)?;
        let (_, counts) = clear_match(&gt, &hyp, a.threshold);
        let m = counts.report()?;
        total.merge(&counts);
        rows.push((g.display().to_string(), m.clone()));
        sequences.push(json!({ "gt": g, "results": r, "metrics": m }));
    }
    let overall = total.report()?;
    create_parent(&a.out)?;
    report::write_json(
        &a.out,
        &json!({ "threshold": a.threshold, "overall": overall, "sequences": sequences }),
    )?;
    let csv = sibling(&a.out, ".csv");
    fs::write(&csv, report::evaluation_csv(&rows)).map_err(|e| Error::io(&csv, e))?;
    println!(
        "MOTA {:.4}  MOTP {:.4}  IDF1 {:.4}  IDS {}  FP {}  FN {}",
        overall.mota, overall.motp, overall.idf1, overall.ids, overall.fp, overall.fn_
    );
    let mut o = Outcome::new(&a.out, OutKind::File, json!({ "threshold": a.threshold }));
    o.inputs.extend(a.gt.iter().chain(&a.results).cloned());
    o.outputs.push((a.out.clone(), true));
    o.outputs.push((csv, true));
    Ok(o)
}

fn scene_outputs(root: &Path, o: &mut Outcome) -> Result<()> {
    for d in dataio::list_scene_dirs(root)? {
        for f in ["det.txt", "gt.txt", "meta.json"] {
            o.outputs.push((d.join(f), true));
        }
    }
    Ok(())
}

fn cmd_build_benchmark(a: &BuildBenchmarkArgs) -> Result<Outcome> {
    let size = ImageSize::new(a.width, a.height)?;
    let frames = match (a.first_frame, a.last_frame) {
        (Some(f), Some(l)) => Some((f, l)),
        (None, None) => None,
        _ => return Err(Error::Config("pass both --first-frame and --last-frame".into())),
    };
    let cfg = SceneConfig {
        size,
        frames,
        tracks: a.tracks,
        seed: a.seed,
        match_iou: a.match_iou,
    };
    let gt = dataio::read_mot(&a.gt, size)?;
    let det = dataio::read_mot(&a.det, size)?;
    let set = dataio::build_benchmark(&gt, &det, &cfg, a.length)?;
    create_dir(&a.out)?;
    dataio::write_scene_set(&a.out, &set.scenes)?;
    let summary = a.out.join("benchmark.json");
    report::write_json(
        &summary,
        &json!({ "scene_config": cfg, "length": a.length, "scenes": set.scenes.len(), "skipped_windows": set.skipped_windows }),
    )?;
    println!(
        "wrote {} scenes of {} frames ({} windows skipped) to {}",
        set.scenes.len(),
        a.length,
        set.skipped_windows,
        a.out.display()
    );
    let mut o = Outcome::new(&a.out, OutKind::Dir, json!({ "scene_config": cfg, "length": a.length })).seed("select", a.seed);
    o.inputs.push(a.gt.clone());
    o.inputs.push(a.det.clone());
    o.outputs.push((summary, true));
    scene_outputs(&a.out, &mut o)?;
    Ok(o)
}

fn cmd_synth_benchmark(a: &SynthBenchmarkArgs) -> Result<Outcome> {
    let cfg = a.suite.config();
    let scenes = dataio::synth_benchmark(&cfg)?;
    create_dir(&a.out)?;
    dataio::write_scene_set(&a.out, &scenes)?;
    println!("wrote {} scenes to {}", scenes.len(), a.out.display());
    let mut o = Outcome::new(&a.out, OutKind::Dir, json!({ "suite": cfg })).seed("suite", cfg.seed);
    scene_outputs(&a.out, &mut o)?;
    Ok(o)
}

fn cmd_benchmark(a: &BenchmarkArgs) -> Result<Outcome> {
    let suite = a.suite.config();
    let tracker = a.tracker.config(Dynamics::Dvae);
    let cfg = BenchmarkConfig {
        tracker,
        methods: a.methods.clone(),
        jobs: a.jobs.max(1),
        ..Default::default()
    };
    let needs_model = cfg.methods.contains(&Method::DvaeUmot);
    if needs_model && a.ckpt.is_none() && !a.pretrain_first {
        return Err(Error::Config("the dvae-umot method needs a model: pass --ckpt or --pretrain-first".into()));
    }
    let mut o = Outcome::new(&a.out, OutKind::Dir, Value::Null).seed("track", cfg.tracker.seed);
    let scenes = match &a.scenes {
        Some(dir) => {
            let dirs = dataio::list_scene_dirs(dir)?;
            for d in &dirs {
                for f in ["det.txt", "gt.txt", "meta.json"] {
                    o.inputs.push(d.join(f));
                }
            }
            dirs.iter().map(|d| dataio::read_scene_dir(d)).collect::<Result<Vec<_>>>()?
        }
        None => {
            o.seeds.insert("suite".into(), suite.seed);
            dataio::synth_benchmark(&suite)?
        }
    };
    if scenes.is_empty() {
        return Err(Error::Data("the benchmark has no scenes (0 listed)".into()));
    }
    create_dir(&a.out)?;
    let params = if needs_model && a.pretrain_first {
        let tcfg = TrajectoryConfig::default();
        let train = synth::generate_split(&tcfg, a.tracker.seed, crate::rng::label::SYNTH_TRAIN, a.train_size);
        let val = synth::generate_split(&tcfg, a.tracker.seed, crate::rng::label::SYNTH_VAL, a.val_size);
        let tc = a.train.config(a.tracker.seed);
        o.seeds.insert("train".into(), a.tracker.seed);
        Some(pretrain_into(&train, &val, &tc, &a.out.join("model.ckpt"), &mut o.outputs)?)
    } else {
        o.inputs.extend(a.ckpt.clone());
        load_params(a.ckpt.as_deref(), needs_model)?
    };
    let mut rep = benchmark::run_benchmark(&scenes, params.as_ref(), &cfg)?;
    if !a.r_phi_sweep.is_empty() {
        rep.sweep = benchmark::r_phi_sweep(&scenes, params.as_ref(), &cfg, &a.r_phi_sweep)?;
    }
    let rep_path = a.out.join("report.json");
    report::write_json(&rep_path, &rep)?;
    o.outputs.push((rep_path, true));
    o.outputs.extend(report::render(&rep, &a.out)?.into_iter().map(|p| (p, true)));
    print_summary(&rep);
    o.config = json!({ "benchmark": cfg, "suite": if a.scenes.is_none() { json!(suite) } else { Value::Null } });
    Ok(o)
}

fn print_summary(rep: &benchmark::BenchmarkReport) {
    println!("{:<10} {:<17} {:>6} {:>7} {:>7} {:>7} {:>5} {:>4} {:>4} {:>6} {:>6}", "method", "scenario", "scenes", "MOTA", "MOTP", "IDF1", "IDS", "MT", "ML", "FP", "FN");
    for s in &rep.summary {
        let m = &s.metrics;
        println!(
            "{:<10} {:<17} {:>6} {:>7.4} {:>7.4} {:>7.4} {:>5} {:>4} {:>4} {:>6} {:>6}",
            s.method.name(),
            s.group,
            s.scenes,
            m.mota,
            m.motp,
            m.idf1,
            m.ids,
            m.mt,
            m.ml,
            m.fp,
            m.fn_
        );
    }
    for p in &rep.sweep {
        println!("sweep r_phi {:<6} {:<10} MOTA {:.4}", p.r_phi, p.method.name(), p.mota);
    }
}

fn cmd_report(a: &ReportArgs) -> Result<Outcome> {
    let rep = report::read_benchmark_report(&a.input)?;
    let written = report::render(&rep, &a.out)?;
    println!("wrote {} files to {}", written.len(), a.out.display());
    let mut o = Outcome::new(&a.out, OutKind::Dir, Value::Null);
    o.inputs.push(a.input.clone());
    o.outputs.extend(written.into_iter().map(|p| (p, true)));
    Ok(o)
}

fn write_manifest(command: &str, argv: &[String], o: &Outcome, started: Instant) -> Result<RunManifest> {
    let root = out_root(&o.out, o.out_kind);
    let inputs = o
        .inputs
        .iter()
        .map(|p| {
            Ok(FileHash {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut outputs = Vec::new();
    for (p, reproducible) in &o.outputs {
        let rel = p.strip_prefix(&root).unwrap_or(p);
        outputs.push(OutputHash {
            path: rel.display().to_string(),
            sha256: sha256_file(p)?,
            reproducible: *reproducible,
        });
    }
    let m = RunManifest {
        tool: "dvae-umot".into(),
        version: VERSION.into(),
        checkpoint_format: FORMAT_VERSION,
        command: command.into(),
        argv: argv.to_vec(),
        out: o.out.clone(),
        out_kind: o.out_kind,
        config: o.config.clone(),
        seeds: o.seeds.clone(),
        inputs,
        outputs,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    report::write_json(&manifest_path(&o.out, o.out_kind), &m)?;
    Ok(m)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn cmd_replay(a: &ReplayArgs) -> Result<()> {
    let m = read_manifest(&a.manifest)?;
    if m.command == "replay" {
        return Err(Error::Data("cannot replay a replay".into()));
    }
    for i in &m.inputs {
        let now = sha256_file(Path::new(&i.path))?;
        if now != i.sha256 {
            return Err(Error::Data(format!("input {} changed since the recorded run", i.path)));
        }
    }
    let new_out = match m.out_kind {
        OutKind::Dir => a.out.clone(),
        OutKind::File => a.out.join(m.out.file_name().unwrap_or_default()),
    };
    let mut argv = vec!["dvae-umot".to_string()];
    argv.extend(m.argv.iter().cloned());
    argv.push("--out".into());
    argv.push(new_out.display().to_string());
    let cli = parse_cli(&argv).map_err(|e| Error::Config(format!("recorded arguments no longer parse: {e}")))?;
    let command = cli.command.ok_or_else(|| Error::Data("manifest has no command".into()))?;
    let fresh = execute(&command, &argv[1..])?
        .ok_or_else(|| Error::Data("manifest records a command without outputs".into()))?;
    let mut same = 0;
    let mut differ = Vec::new();
    for out in m.outputs.iter().filter(|o| o.reproducible) {
        match fresh.outputs.iter().find(|f| f.path == out.path) {
            Some(f) if f.sha256 == out.sha256 => same += 1,
            _ => differ.push(out.path.clone()),
        }
    }
    if !differ.is_empty() {
        return Err(Error::Data(format!("replay differs in {}", differ.join(", "))));
    }
    println!("replay reproduced {same} artifacts bit-identically");
    Ok(())
}

/// Runs one parsed command and writes its manifest.
fn execute(command: &Command, argv: &[String]) -> Result<Option<RunManifest>> {
    let started = Instant::now();
    let outcome = match command {
        Command::SynthData(a) => cmd_synth_data(a)?,
        Command::Pretrain(a) => cmd_pretrain(a)?,
        Command::Track(a) => cmd_track(a)?,
        Command::Evaluate(a) => cmd_evaluate(a)?,
        Command::BuildBenchmark(a) => cmd_build_benchmark(a)?,
        Command::SynthBenchmark(a) => cmd_synth_benchmark(a)?,
        Command::Benchmark(a) => cmd_benchmark(a)?,
        Command::Report(a) => cmd_report(a)?,
        Command::Replay(a) => {
            cmd_replay(a)?;
            return Ok(None);
        }
    };
    write_manifest(command.name(), argv, &outcome, started).map(Some)
}

fn report_error(e: &Error, json_errors: bool) -> i32 {
    let code = e.exit_code();
    if json_errors {
        let v = json!({ "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": code } });
        eprintln!("{v}");
    } else {
        eprintln!("error: {e}");
    }
    code
}

/// Parses `argv` (program name first) and runs it; returns the exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let json_errors = argv.iter().any(|a| a == "--json-errors");
    let argv = match expand_config(&argv) {
        Ok(a) => a,
        Err(e) => return report_error(&e, json_errors),
    };
    let cli = match parse_cli(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ if json_errors => {
                    let v = json!({ "error": { "kind": "usage", "message": e.render().to_string(), "exit_code": 1 } });
                    eprintln!("{v}");
                    1
                }
                _ => {
                    let _ = e.print();
                    1
                }
            };
        }
    };
    if cli.version {
        println!("{}", version_line());
        return 0;
    }
    let Some(command) = cli.command else {
        eprintln!("error: no subcommand given; see --help");
        return 1;
    };
    let args: Vec<String> = argv[1..].iter().filter(|a| *a != "--json-errors").cloned().collect();
    match execute(&command, &args) {
        Ok(_) => {
            let _ = std::io::stdout().flush();
            0
        }
        Err(e) => report_error(&e, json_errors),
    }
}
