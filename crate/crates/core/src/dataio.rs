//! MOTChallenge-format input and output, coordinate normalisation, and the
//! construction of benchmark scenes from MOT files or from the synthetic
//! trajectory generator.
//!
//! Files use pixel `(left, top, width, height)` with y pointing down.
//! Internally boxes are normalised `(l, t, r, b)` with y pointing up:
//! `l = left/W`, `r = (left+w)/W`, `t = 1 − top/H`, `b = 1 − (top+h)/H`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::metrics::{hungarian, iou, TrackSet};
use crate::rng::{self, label, Rng};
use crate::synth::{self, TrajectoryConfig};
use crate::tracker::Scene;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

impl ImageSize {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::Config(format!("image size must be positive, got {width}x{height}")));
        }
        Ok(ImageSize { width, height })
    }

    /// Unit size: pixel values are used as they are (with y flipped).
    pub const UNIT: ImageSize = ImageSize {
        width: 1.0,
        height: 1.0,
    };
}

/// Pixel `(left, top, w, h)` to a normalised box.
pub fn normalize(left: f64, top: f64, w: f64, h: f64, size: ImageSize) -> BBox {
    BBox::from_array([
        left / size.width,
        1.0 - top / size.height,
        (left + w) / size.width,
        1.0 - (top + h) / size.height,
    ])
}

/// Normalised box to pixel `(left, top, w, h)`.
pub fn denormalize(b: &BBox, size: ImageSize) -> [f64; 4] {
    [
        b.l * size.width,
        (1.0 - b.t) * size.height,
        (b.r - b.l) * size.width,
        (b.t - b.b) * size.height,
    ]
}

/// One row of a MOTChallenge file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRow {
    pub frame: usize,
    pub id: i64,
    pub bbox: BBox,
    pub conf: f64,
}

/// Parses MOTChallenge CSV text. Rows with a non-positive size are skipped
/// with a warning; anything else malformed is an error naming the line.
pub fn parse_mot(text: &str, path: &Path, size: ImageSize) -> Result<Vec<MotRow>> {
    let mut rows = Vec::new();
    let mut skipped = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() < 6 {
            return Err(err(format!("expected at least 6 columns, found {}", cols.len())));
        }
        let num = |j: usize| -> Result<f64> {
            cols[j]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("column {} is not a number: {:?}", j + 1, cols[j])))
        };
        let frame = num(0)?;
        if frame < 1.0 || frame.fract() != 0.0 {
            return Err(err(format!("frame must be an integer >= 1, got {}", cols[0])));
        }
        let id = num(1)?;
        if id.fract() != 0.0 {
            return Err(err(format!("id must be an integer, got {}", cols[1])));
        }
        let (left, top, w, h) = (num(2)?, num(3)?, num(4)?, num(5)?);
        let conf = if cols.len() > 6 { num(6)? } else { 1.0 };
        if !(w > 0.0 && h > 0.0) {
            skipped += 1;
            continue;
        }
        rows.push(MotRow {
            frame: frame as usize,
            id: id as i64,
            bbox: normalize(left, top, w, h, size),
            conf,
        });
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} rows with non-positive size", path.display());
    }
    Ok(rows)
}

pub fn read_mot(path: &Path, size: ImageSize) -> Result<Vec<MotRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mot(&text, path, size)
}

/// Detections grouped per frame from the first to the last frame present.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeq {
    pub first_frame: usize,
    pub frames: Vec<Vec<BBox>>,
}

pub fn group_frames(rows: &[MotRow]) -> FrameSeq {
    let (Some(lo), Some(hi)) = (rows.iter().map(|r| r.frame).min(), rows.iter().map(|r| r.frame).max()) else {
        return FrameSeq {
            first_frame: 1,
            frames: Vec::new(),
        };
    };
    let mut frames = vec![Vec::new(); hi - lo + 1];
    for r in rows {
        frames[r.frame - lo].push(r.bbox);
    }
    FrameSeq { first_frame: lo, frames }
}

/// Reads a detection file into a tracker scene (not yet validated).
pub fn parse_detections(path: &Path, size: ImageSize) -> Result<FrameSeq> {
    Ok(group_frames(&read_mot(path, size)?))
}

/// Rows with track ids as a [`TrackSet`]; ids must be non-negative.
pub fn rows_to_track_set(rows: &[MotRow], path: &Path) -> Result<TrackSet> {
    let mut s = TrackSet::new();
    for r in rows {
        if r.id < 0 {
            return Err(Error::Data(format!(
                "{}: frame {} has a row without a track id",
                path.display(),
                r.frame
            )));
        }
        s.push(r.frame, r.id as u64, r.bbox);
    }
    Ok(s)
}

pub fn read_track_set(path: &Path, size: ImageSize) -> Result<TrackSet> {
    rows_to_track_set(&read_mot(path, size)?, path)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_row(w: &mut impl Write, frame: usize, id: i64, px: [f64; 4], tail: &str) -> std::io::Result<()> {
    writeln!(w, "{frame},{id},{},{},{},{},{tail}", px[0], px[1], px[2], px[3])
}

/// Writes tracker output `m[n][t]` in the MOTChallenge result format with
/// ids `n + 1`.
pub fn write_results(path: &Path, m: &[Vec<[f64; 4]>], first_frame: usize, size: ImageSize) -> Result<()> {
    let mut w = create(path)?;
    let t_len = m.first().map_or(0, Vec::len);
    (|| -> std::io::Result<()> {
        for t in 0..t_len {
            for (n, tr) in m.iter().enumerate() {
                let px = denormalize(&BBox::from_array(tr[t]), size);
                write_row(&mut w, first_frame + t, n as i64 + 1, px, "1,-1,-1,-1")?;
            }
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

pub fn write_detections(path: &Path, frames: &[Vec<BBox>], first_frame: usize, size: ImageSize) -> Result<()> {
    let mut w = create(path)?;
    (|| -> std::io::Result<()> {
        for (t, f) in frames.iter().enumerate() {
            for b in f {
                write_row(&mut w, first_frame + t, -1, denormalize(b, size), "1,-1,-1,-1")?;
            }
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Ground truth `gt[n][t]` with the given ids.
pub fn write_gt(path: &Path, gt: &[Vec<BBox>], ids: &[u64], first_frame: usize, size: ImageSize) -> Result<()> {
    let mut w = create(path)?;
    let t_len = gt.first().map_or(0, Vec::len);
    (|| -> std::io::Result<()> {
        for t in 0..t_len {
            for (n, tr) in gt.iter().enumerate() {
                write_row(&mut w, first_frame + t, ids[n] as i64, denormalize(&tr[t], size), "1,1,1")?;
            }
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// A tracking scene with aligned ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchScene {
    pub name: String,
    pub scenario: Option<Scenario>,
    pub size: ImageSize,
    pub first_frame: usize,
    /// `gt[n][t]`.
    pub gt: Vec<Vec<BBox>>,
    pub gt_ids: Vec<u64>,
    pub detections: Scene,
    /// `labels[t][k]`: index into `gt` of the object behind detection `k`.
    pub labels: Vec<Vec<usize>>,
}

impl BenchScene {
    pub fn t_len(&self) -> usize {
        self.detections.t_len()
    }

    /// Ground truth as a track set on frames `1..=T`.
    pub fn gt_track_set(&self) -> TrackSet {
        let mut s = TrackSet::new();
        for (n, tr) in self.gt.iter().enumerate() {
            for (t, b) in tr.iter().enumerate() {
                s.push(t + 1, self.gt_ids[n], *b);
            }
        }
        s
    }

    /// Fraction of detections whose hard assignment matches the generator
    /// label, with tracked object `n` identified by the label of frame-1
    /// detection `n`.
    pub fn assignment_accuracy(&self, assignments: &[Vec<usize>]) -> f64 {
        let object_label = &self.labels[0];
        let mut ok = 0usize;
        let mut total = 0usize;
        for (t, row) in assignments.iter().enumerate() {
            for (k, &n) in row.iter().enumerate() {
                total += 1;
                ok += usize::from(object_label.get(n) == Some(&self.labels[t][k]));
            }
        }
        if total == 0 {
            1.0
        } else {
            ok as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SceneMeta {
    name: String,
    scenario: Option<Scenario>,
    img_width: f64,
    img_height: f64,
    first_frame: usize,
    t_len: usize,
    gt_ids: Vec<u64>,
    labels: Vec<Vec<usize>>,
}

/// Writes `det.txt`, `gt.txt` and `meta.json` into `dir`.
pub fn write_scene_dir(dir: &Path, scene: &BenchScene) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_detections(&dir.join("det.txt"), &scene.detections.frames, scene.first_frame, scene.size)?;
    write_gt(&dir.join("gt.txt"), &scene.gt, &scene.gt_ids, scene.first_frame, scene.size)?;
    let meta = SceneMeta {
        name: scene.name.clone(),
        scenario: scene.scenario,
        img_width: scene.size.width,
        img_height: scene.size.height,
        first_frame: scene.first_frame,
        t_len: scene.t_len(),
        gt_ids: scene.gt_ids.clone(),
        labels: scene.labels.clone(),
    };
    let path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&meta).expect("meta serialises");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

/// Image size recorded in a scene directory's `meta.json`, if present.
pub fn scene_size_hint(dir: &Path) -> Option<ImageSize> {
    let text = fs::read_to_string(dir.join("meta.json")).ok()?;
    let meta: SceneMeta = serde_json::from_str(&text).ok()?;
    ImageSize::new(meta.img_width, meta.img_height).ok()
}

pub fn read_scene_dir(dir: &Path) -> Result<BenchScene> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: SceneMeta =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", meta_path.display())))?;
    let size = ImageSize::new(meta.img_width, meta.img_height)?;
    let det_path = dir.join("det.txt");
    let det_rows = read_mot(&det_path, size)?;
    let mut frames = vec![Vec::new(); meta.t_len];
    for r in &det_rows {
        let t = r
            .frame
            .checked_sub(meta.first_frame)
            .filter(|&t| t < meta.t_len)
            .ok_or_else(|| Error::Data(format!("{}: frame {} outside the scene", det_path.display(), r.frame)))?;
        frames[t].push(r.bbox);
    }
    let gt_path = dir.join("gt.txt");
    let gt_rows = read_mot(&gt_path, size)?;
    let mut gt = vec![vec![None; meta.t_len]; meta.gt_ids.len()];
    for r in &gt_rows {
        let n = meta
            .gt_ids
            .iter()
            .position(|&id| id as i64 == r.id)
            .ok_or_else(|| Error::Data(format!("{}: unknown track id {}", gt_path.display(), r.id)))?;
        let t = r
            .frame
            .checked_sub(meta.first_frame)
            .filter(|&t| t < meta.t_len)
            .ok_or_else(|| Error::Data(format!("{}: frame {} outside the scene", gt_path.display(), r.frame)))?;
        gt[n][t] = Some(r.bbox);
    }
    let gt = gt
        .into_iter()
        .map(|tr| tr.into_iter().collect::<Option<Vec<_>>>())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Data(format!("{}: ground truth does not cover every frame", gt_path.display())))?;
    if meta.labels.len() != frames.len() || meta.labels.iter().zip(&frames).any(|(l, f)| l.len() != f.len()) {
        return Err(Error::Data(format!("{}: labels do not match the detections", meta_path.display())));
    }
    Ok(BenchScene {
        name: meta.name,
        scenario: meta.scenario,
        size,
        first_frame: meta.first_frame,
        gt,
        gt_ids: meta.gt_ids,
        detections: Scene::new(frames)?,
        labels: meta.labels,
    })
}

/// Scene directories `scene_NNNN` under `root`, in name order.
pub fn list_scene_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("scene_")))
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn write_scene_set(root: &Path, scenes: &[BenchScene]) -> Result<()> {
    for (i, s) in scenes.iter().enumerate() {
        write_scene_dir(&root.join(format!("scene_{:04}", i + 1)), s)?;
    }
    Ok(())
}

/// Settings for building scenes from MOT files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub size: ImageSize,
    /// Inclusive frame range; defaults to the ground-truth range.
    pub frames: Option<(usize, usize)>,
    pub tracks: usize,
    pub seed: u64,
    /// Minimum IoU for a detection to be matched to a ground-truth box.
    pub match_iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSet {
    pub scenes: Vec<BenchScene>,
    /// Windows without enough full-length tracks.
    pub skipped_windows: usize,
}

/// Matches detections to ground truth per frame (Hungarian on `1 − IoU`,
/// accepted at `IoU ≥ match_iou`), splits the sequence into windows of
/// `t_len` frames and emits one scene per window from `tracks` randomly
/// chosen ground-truth tracks that are present in every frame of it.
pub fn build_benchmark(gt: &[MotRow], det: &[MotRow], cfg: &SceneConfig, t_len: usize) -> Result<BenchmarkSet> {
    if t_len < 2 || cfg.tracks < 1 {
        return Err(Error::Config("scene length must be >= 2 and track count >= 1".into()));
    }
    let mut gt_by_frame: BTreeMap<usize, Vec<(u64, BBox)>> = BTreeMap::new();
    for r in gt {
        if r.id < 0 {
            return Err(Error::Data(format!("ground truth row in frame {} has no id", r.frame)));
        }
        gt_by_frame.entry(r.frame).or_default().push((r.id as u64, r.bbox));
    }
    let mut det_by_frame: BTreeMap<usize, Vec<BBox>> = BTreeMap::new();
    for r in det {
        det_by_frame.entry(r.frame).or_default().push(r.bbox);
    }
    let (lo, hi) = match cfg.frames {
        Some(range) => range,
        None => match (gt_by_frame.keys().next(), gt_by_frame.keys().last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::Data("ground truth is empty".into())),
        },
    };
    // matched detection per (frame, gt id)
    let mut matched: BTreeMap<(usize, u64), BBox> = BTreeMap::new();
    for frame in lo..=hi {
        let (Some(g), Some(d)) = (gt_by_frame.get(&frame), det_by_frame.get(&frame)) else {
            continue;
        };
        let cost: Vec<Vec<f64>> = g
            .iter()
            .map(|(_, gb)| {
                d.iter()
                    .map(|db| {
                        let v = iou(gb, db);
                        if v >= cfg.match_iou {
                            1.0 - v
                        } else {
                            f64::INFINITY
                        }
                    })
                    .collect()
            })
            .collect();
        for (i, j) in hungarian(&cost) {
            matched.insert((frame, g[i].0), d[j]);
        }
    }
    let mut scenes = Vec::new();
    let mut skipped = 0;
    let mut w = 0u64;
    let mut start = lo;
    while start + t_len - 1 <= hi {
        let frames: Vec<usize> = (start..start + t_len).collect();
        let ids_in = |f: usize| -> BTreeSet<u64> {
            gt_by_frame.get(&f).map(|v| v.iter().map(|(id, _)| *id).collect()).unwrap_or_default()
        };
        let mut eligible: BTreeSet<u64> = ids_in(start);
        for &f in &frames[1..] {
            let here = ids_in(f);
            eligible.retain(|id| here.contains(id));
        }
        eligible.retain(|id| matched.contains_key(&(start, *id)));
        if eligible.len() < cfg.tracks {
            skipped += 1;
        } else {
            let mut pool: Vec<u64> = eligible.into_iter().collect();
            let mut r = rng::stream(cfg.seed, &[label::SCENE_SELECT, w]);
            pool.shuffle(&mut r);
            let mut chosen: Vec<u64> = pool[..cfg.tracks].to_vec();
            chosen.sort_unstable();
            let gt_boxes: Vec<Vec<BBox>> = chosen
                .iter()
                .map(|id| {
                    frames
                        .iter()
                        .map(|f| gt_by_frame[f].iter().find(|(i, _)| i == id).expect("eligible").1)
                        .collect()
                })
                .collect();
            let mut det_frames = Vec::with_capacity(t_len);
            let mut labels = Vec::with_capacity(t_len);
            for &f in &frames {
                let mut fr = Vec::new();
                let mut lb = Vec::new();
                for (n, id) in chosen.iter().enumerate() {
                    if let Some(b) = matched.get(&(f, *id)) {
                        fr.push(*b);
                        lb.push(n);
                    }
                }
                det_frames.push(fr);
                labels.push(lb);
            }
            scenes.push(BenchScene {
                name: format!("frames_{start}_{}", start + t_len - 1),
                scenario: None,
                size: cfg.size,
                first_frame: start,
                gt: gt_boxes,
                gt_ids: chosen,
                detections: Scene::new(det_frames)?,
                labels,
            });
        }
        w += 1;
        start += t_len;
    }
    Ok(BenchmarkSet {
        scenes,
        skipped_windows: skipped,
    })
}

/// Scenario families of the synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "separated")]
    Separated,
    #[serde(rename = "sinusoidal")]
    Sinusoidal,
    #[serde(rename = "crossing")]
    Crossing,
    #[serde(rename = "dropout")]
    Dropout,
    #[serde(rename = "crossing+dropout")]
    CrossingDropout,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Separated,
        Scenario::Sinusoidal,
        Scenario::Crossing,
        Scenario::Dropout,
        Scenario::CrossingDropout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Separated => "separated",
            Scenario::Sinusoidal => "sinusoidal",
            Scenario::Crossing => "crossing",
            Scenario::Dropout => "dropout",
            Scenario::CrossingDropout => "crossing+dropout",
        }
    }

    fn crossing(self) -> bool {
        matches!(self, Scenario::Crossing | Scenario::CrossingDropout)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

/// Synthetic benchmark suite settings. Frame windows are 1-based and
/// inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub scenarios: Vec<Scenario>,
    pub scenes_per_scenario: usize,
    pub t_len: usize,
    /// Detection noise standard deviation as a fraction of box size.
    pub noise: f64,
    /// Frames in which object 3 is missing in `dropout` scenes.
    pub dropout: (usize, usize),
    /// Frames in which the second crossing object is missing in
    /// `crossing+dropout` scenes.
    pub crossing_dropout: (usize, usize),
    pub seed: u64,
    pub trajectory: TrajectoryConfig,
    /// Pixel size used when scenes are written to disk.
    pub size: ImageSize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            scenarios: Scenario::ALL.to_vec(),
            scenes_per_scenario: 20,
            t_len: 60,
            noise: 0.02,
            dropout: (2, 20),
            crossing_dropout: (24, 36),
            seed: 0,
            trajectory: TrajectoryConfig::default(),
            size: ImageSize {
                width: 1000.0,
                height: 1000.0,
            },
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_len < 2 {
            return Err(Error::Config("scene length must be at least 2".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be >= 0, got {}", self.noise)));
        }
        for (name, (a, b)) in [("dropout", self.dropout), ("crossing dropout", self.crossing_dropout)] {
            if a < 2 || b < a {
                return Err(Error::Config(format!(
                    "{name} window must satisfy 2 <= start <= end, got [{a}, {b}]"
                )));
            }
        }
        self.trajectory.validate()
    }
}

const MAX_ATTEMPTS: u64 = 2000;

fn center(b: &BBox) -> (f64, f64) {
    (0.5 * (b.l + b.r), 0.5 * (b.t + b.b))
}

fn center_dist(a: &BBox, b: &BBox) -> f64 {
    let (p, q) = (center(a), center(b));
    ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
}

/// Boxes apart by at least half their combined size along some axis.
fn well_apart(a: &BBox, b: &BBox) -> bool {
    let (p, q) = (center(a), center(b));
    (p.0 - q.0).abs() > a.width() + b.width() || (p.1 - q.1).abs() > a.height() + b.height()
}

fn shift(track: &mut [BBox], dx: f64, dy: f64) {
    for b in track {
        *b = BBox::from_array([b.l + dx, b.t + dy, b.r + dx, b.b + dy]);
    }
}

/// Three ground-truth tracks for one scene.
fn scenario_tracks(cfg: &SuiteConfig, scenario: Scenario, scene: u64) -> Result<Vec<Vec<BBox>>> {
    let mut traj = TrajectoryConfig {
        t_len: cfg.t_len,
        ..cfg.trajectory.clone()
    };
    if scenario == Scenario::Sinusoidal {
        traj.seg_type_probs = [0.0, 0.0, 0.0, 1.0];
    }
    let sidx = Scenario::ALL.iter().position(|&s| s == scenario).unwrap_or(0) as u64;
    let mid = cfg.t_len / 2;
    let last = cfg.t_len - 1;
    for attempt in 0..MAX_ATTEMPTS {
        let mut r = rng::stream(cfg.seed, &[label::BENCH, sidx, scene, attempt]);
        let mut tracks: Vec<Vec<BBox>> = (0..3).map(|_| synth::gen_bbox_track(&traj, &mut r).boxes).collect();
        let ok = if scenario.crossing() {
            // move track 2 onto track 1 at the middle frame, slightly offset
            let (c1, c2) = (center(&tracks[0][mid]), center(&tracks[1][mid]));
            let off = r.gen_range(-0.25..0.25) * tracks[0][mid].width();
            shift(&mut tracks[1], c1.0 - c2.0 + off, c1.1 - c2.1);
            let close = center_dist(&tracks[0][mid], &tracks[1][mid]) < tracks[0][mid].width();
            let apart_ends =
                well_apart(&tracks[0][0], &tracks[1][0]) && well_apart(&tracks[0][last], &tracks[1][last]);
            let third =
                (0..cfg.t_len).all(|t| well_apart(&tracks[2][t], &tracks[0][t]) && well_apart(&tracks[2][t], &tracks[1][t]));
            close && apart_ends && third
        } else {
            (0..cfg.t_len).all(|t| {
                well_apart(&tracks[0][t], &tracks[1][t])
                    && well_apart(&tracks[0][t], &tracks[2][t])
                    && well_apart(&tracks[1][t], &tracks[2][t])
            })
        };
        if ok {
            return Ok(tracks);
        }
    }
    Err(Error::Data(format!(
        "could not place {scenario} tracks for scene {scene} in {MAX_ATTEMPTS} attempts"
    )))
}

fn noisy_box(g: &BBox, sigma: f64, r: &mut Rng) -> BBox {
    if sigma == 0.0 {
        return *g;
    }
    let scale = [g.width(), g.height(), g.width(), g.height()];
    for _ in 0..100 {
        let a = g.to_array();
        let o: [f64; 4] = std::array::from_fn(|d| a[d] + sigma * scale[d] * r.sample::<f64, _>(StandardNormal));
        let b = BBox::from_array(o);
        if b.is_valid() {
            return b;
        }
    }
    *g
}

/// Builds one synthetic scene: detections are noisy copies of the ground
/// truth, scripted absences removed, and the order within each frame
/// shuffled.
pub fn synth_scene(cfg: &SuiteConfig, scenario: Scenario, scene: u64) -> Result<BenchScene> {
    let gt = scenario_tracks(cfg, scenario, scene)?;
    let sidx = Scenario::ALL.iter().position(|&s| s == scenario).unwrap_or(0) as u64;
    let mut r = rng::stream(cfg.seed, &[label::BENCH, sidx, scene, u64::MAX]);
    let absent = |n: usize, frame: usize| -> bool {
        let within = |(a, b): (usize, usize)| (a..=b).contains(&frame);
        match scenario {
            Scenario::Dropout => n == 2 && within(cfg.dropout),
            Scenario::CrossingDropout => n == 1 && within(cfg.crossing_dropout),
            _ => false,
        }
    };
    let mut frames = Vec::with_capacity(cfg.t_len);
    let mut labels = Vec::with_capacity(cfg.t_len);
    for t in 0..cfg.t_len {
        let mut dets: Vec<(usize, BBox)> = (0..gt.len())
            .filter(|&n| !absent(n, t + 1))
            .map(|n| (n, noisy_box(&gt[n][t], cfg.noise, &mut r)))
            .collect();
        dets.shuffle(&mut r);
        labels.push(dets.iter().map(|d| d.0).collect());
        frames.push(dets.into_iter().map(|d| d.1).collect());
    }
    Ok(BenchScene {
        name: format!("{scenario}_{scene:03}"),
        scenario: Some(scenario),
        size: cfg.size,
        first_frame: 1,
        gt,
        gt_ids: vec![1, 2, 3],
        detections: Scene::new(frames)?,
        labels,
    })
}

/// Every scene of the suite, scenario by scenario.
pub fn synth_benchmark(cfg: &SuiteConfig) -> Result<Vec<BenchScene>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &s in &cfg.scenarios {
        for i in 0..cfg.scenes_per_scenario {
            out.push(synth_scene(cfg, s, i as u64)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::evaluate;
    use proptest::prelude::*;

    #[test]
    fn normalises_the_documented_example() {
        let rows = parse_mot("1,-1,10,20,30,40,1\n", Path::new("x"), ImageSize::new(100.0, 100.0).unwrap()).unwrap();
        let b = rows[0].bbox;
        for (x, w) in b.to_array().iter().zip([0.1, 0.8, 0.4, 0.4]) {
            assert!((x - w).abs() < 1e-12);
        }
        assert_eq!(rows[0].id, -1);
    }

    proptest! {
        #[test]
        fn pixel_round_trip(left in -500.0f64..2000.0, top in -500.0f64..1500.0,
                            w in 0.5f64..400.0, h in 0.5f64..400.0,
                            iw in 100.0f64..4000.0, ih in 100.0f64..3000.0) {
            let size = ImageSize::new(iw, ih).unwrap();
            let px = denormalize(&normalize(left, top, w, h, size), size);
            for (a, b) in px.iter().zip([left, top, w, h]) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let err = parse_mot("1,-1,1,2,3,4\n2,x,1,2,3,4\n", Path::new("det.txt"), ImageSize::UNIT).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
        assert!(parse_mot("1,2,3\n", Path::new("d"), ImageSize::UNIT).is_err());
        assert!(parse_mot("0,1,1,2,3,4\n", Path::new("d"), ImageSize::UNIT).is_err());
    }

    #[test]
    fn non_positive_sizes_are_skipped() {
        let rows = parse_mot("1,-1,1,2,0,4\n1,-1,1,2,3,4\n", Path::new("d"), ImageSize::UNIT).unwrap();
        assert_eq!(rows.len(), 1);
    }

    #[test]
    fn empty_file_gives_an_invalid_scene() {
        let seq = group_frames(&parse_mot("", Path::new("d"), ImageSize::UNIT).unwrap());
        assert!(seq.frames.is_empty());
        assert!(Scene::new(seq.frames).is_err());
    }

    fn rows_for(tracks: &[(i64, Vec<[f64; 4]>)], start: usize) -> Vec<MotRow> {
        let mut rows = Vec::new();
        for (id, boxes) in tracks {
            for (t, px) in boxes.iter().enumerate() {
                rows.push(MotRow {
                    frame: start + t,
                    id: *id,
                    bbox: normalize(px[0], px[1], px[2], px[3], ImageSize::new(100.0, 100.0).unwrap()),
                    conf: 1.0,
                });
            }
        }
        rows
    }

    fn moving(x0: f64, len: usize) -> Vec<[f64; 4]> {
        (0..len).map(|t| [x0 + t as f64, 10.0, 8.0, 20.0]).collect()
    }

    fn scene_cfg() -> SceneConfig {
        SceneConfig {
            size: ImageSize::new(100.0, 100.0).unwrap(),
            frames: None,
            tracks: 3,
            seed: 4,
            match_iou: 0.5,
        }
    }

    #[test]
    fn perfect_detector_keeps_everything() {
        let gt = rows_for(&[(1, moving(0.0, 12)), (2, moving(30.0, 12)), (3, moving(60.0, 12)), (4, moving(80.0, 6))], 1);
        let det: Vec<MotRow> = gt.iter().map(|r| MotRow { id: -1, ..*r }).collect();
        let set = build_benchmark(&gt, &det, &scene_cfg(), 6).unwrap();
        assert_eq!(set.scenes.len(), 2);
        assert_eq!(set.skipped_windows, 0);
        for s in &set.scenes {
            assert_eq!(s.gt.len(), 3);
            for t in 0..6 {
                let mut got: Vec<[f64; 4]> = s.detections.frames[t].iter().map(|b| b.to_array()).collect();
                let mut want: Vec<[f64; 4]> = s.gt.iter().map(|tr| tr[t].to_array()).collect();
                got.sort_by(|a, b| a.partial_cmp(b).unwrap());
                want.sort_by(|a, b| a.partial_cmp(b).unwrap());
                assert_eq!(got, want);
            }
        }
        assert_eq!(build_benchmark(&gt, &det, &scene_cfg(), 6).unwrap(), set);
        // window 1 has four full tracks, so the choice depends on the seed
        let other = build_benchmark(&gt, &det, &SceneConfig { seed: 99, ..scene_cfg() }, 6).unwrap();
        assert_eq!(other.scenes.len(), 2);
    }

    #[test]
    fn poor_matches_are_dropped_and_short_windows_skipped() {
        let gt = rows_for(&[(1, moving(0.0, 4)), (2, moving(30.0, 4)), (3, moving(60.0, 2))], 1);
        let mut det: Vec<MotRow> = gt.iter().map(|r| MotRow { id: -1, ..*r }).collect();
        // shift one detection so its IoU with every box is about 0.3
        let b = det[1].bbox;
        let w = b.width();
        det[1].bbox = BBox::from_array([b.l + 0.54 * w, b.t, b.r + 0.54 * w, b.b]);
        let cfg = SceneConfig { tracks: 2, ..scene_cfg() };
        let set = build_benchmark(&gt, &det, &cfg, 2).unwrap();
        assert_eq!(set.scenes.len(), 2);
        assert_eq!(set.scenes[0].detections.frames[1].len(), 1);
        let set3 = build_benchmark(&gt, &det, &scene_cfg(), 2).unwrap();
        assert_eq!(set3.skipped_windows, 1);
    }

    #[test]
    fn clean_suite_detections_equal_ground_truth() {
        let cfg = SuiteConfig {
            noise: 0.0,
            scenes_per_scenario: 2,
            scenarios: vec![Scenario::Separated, Scenario::Sinusoidal],
            ..Default::default()
        };
        for s in synth_benchmark(&cfg).unwrap() {
            for (t, f) in s.detections.frames.iter().enumerate() {
                assert_eq!(f.len(), 3);
                for (k, b) in f.iter().enumerate() {
                    assert_eq!(*b, s.gt[s.labels[t][k]][t]);
                }
            }
        }
    }

    #[test]
    fn dropout_window_removes_object_three() {
        let cfg = SuiteConfig {
            scenes_per_scenario: 2,
            scenarios: vec![Scenario::Dropout, Scenario::CrossingDropout],
            ..Default::default()
        };
        for s in synth_benchmark(&cfg).unwrap() {
            let (a, b, who) = match s.scenario.unwrap() {
                Scenario::Dropout => (2, 20, 2),
                _ => (24, 36, 1),
            };
            for t in 1..=60 {
                let k = s.detections.frames[t - 1].len();
                let missing = !s.labels[t - 1].contains(&who);
                assert_eq!(k == 2, (a..=b).contains(&t), "frame {t}");
                assert_eq!(missing, (a..=b).contains(&t));
            }
        }
    }

    #[test]
    fn crossing_tracks_come_close() {
        let cfg = SuiteConfig {
            scenes_per_scenario: 5,
            scenarios: vec![Scenario::Crossing],
            ..Default::default()
        };
        for s in synth_benchmark(&cfg).unwrap() {
            let min = (0..60)
                .map(|t| center_dist(&s.gt[0][t], &s.gt[1][t]) / s.gt[0][t].width())
                .fold(f64::INFINITY, f64::min);
            assert!(min < 1.0, "{}: closest approach {min} widths", s.name);
            assert!(well_apart(&s.gt[0][0], &s.gt[1][0]));
        }
    }

    #[test]
    fn suite_is_seeded() {
        let cfg = SuiteConfig { scenes_per_scenario: 2, ..Default::default() };
        let a = synth_benchmark(&cfg).unwrap();
        assert_eq!(a, synth_benchmark(&cfg).unwrap());
        assert_eq!(a.len(), 10);
        assert_ne!(a, synth_benchmark(&SuiteConfig { seed: 1, ..cfg }).unwrap());
    }

    #[test]
    fn scene_directory_round_trip() {
        let cfg = SuiteConfig {
            scenes_per_scenario: 1,
            scenarios: vec![Scenario::Dropout],
            ..Default::default()
        };
        let scene = synth_benchmark(&cfg).unwrap().remove(0);
        let dir = tempfile::tempdir().unwrap();
        write_scene_set(dir.path(), std::slice::from_ref(&scene)).unwrap();
        let dirs = list_scene_dirs(dir.path()).unwrap();
        assert_eq!(dirs.len(), 1);
        assert!(dirs[0].ends_with("scene_0001"));
        let back = read_scene_dir(&dirs[0]).unwrap();
        assert_eq!(back.labels, scene.labels);
        assert_eq!(back.gt_ids, scene.gt_ids);
        for (a, b) in back.gt.iter().flatten().zip(scene.gt.iter().flatten()) {
            for (x, y) in a.to_array().iter().zip(b.to_array()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        assert_eq!(scene_size_hint(&dirs[0]), Some(scene.size));
    }

    #[test]
    fn metrics_agree_in_both_coordinate_systems() {
        let cfg = SuiteConfig { scenes_per_scenario: 1, scenarios: vec![Scenario::Crossing], ..Default::default() };
        let s = synth_benchmark(&cfg).unwrap().remove(0);
        let gt = s.gt_track_set();
        let mut hyp = TrackSet::new();
        for (t, f) in s.detections.frames.iter().enumerate() {
            for (k, b) in f.iter().enumerate() {
                hyp.push(t + 1, s.labels[t][k] as u64 + 10, *b);
            }
        }
        let size = ImageSize::new(1920.0, 1080.0).unwrap();
        let px = |b: &BBox| {
            let p = denormalize(b, size);
            BBox::from_array([p[0], -p[1], p[0] + p[2], -p[1] - p[3]])
        };
        let a = evaluate(&gt, &hyp, 0.5).unwrap();
        let b = evaluate(&gt.map_boxes(px), &hyp.map_boxes(px), 0.5).unwrap();
        assert_eq!(a.mota, b.mota);
        assert_eq!(a.idf1, b.idf1);
        assert!((a.motp - b.motp).abs() < 1e-9);
    }

    #[test]
    fn results_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("res.txt");
        let m = vec![vec![[0.1, 0.9, 0.2, 0.7], [0.11, 0.9, 0.21, 0.7]], vec![[0.5, 0.5, 0.6, 0.3]; 2]];
        let size = ImageSize::new(640.0, 480.0).unwrap();
        write_results(&path, &m, 5, size).unwrap();
        let set = read_track_set(&path, size).unwrap();
        assert_eq!(set.ids(), [1u64, 2].into_iter().collect());
        assert_eq!(set.frames.keys().copied().collect::<Vec<_>>(), vec![5, 6]);
        let b = set.frames[&6][0].1;
        assert!((b.l - 0.11).abs() < 1e-12 && (b.b - 0.7).abs() < 1e-12);
    }
}
