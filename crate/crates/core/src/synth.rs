//! Synthetic single-object box trajectories.
//!
//! Each of `x` (left), `y` (top) and the width is a piece-wise function of
//! time built from four elementary segment kinds. The segmentation is shared
//! by the three coordinates; the segment kinds and their parameters are
//! drawn independently per coordinate. Within a segment time is local
//! (`tau = 0` at the segment's first frame) and the free constant is solved
//! so the segment starts where the previous one ended.
//!
//! The width is generated in relative units (starting at 1) and multiplied
//! by the sampled initial width, so the same motion parameters produce
//! proportional size changes for small and large boxes.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::rng::{self, label, Rng};
use crate::{Error, Result};

/// Smallest allowed box side.
pub const MIN_SIDE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Static,
    ConstVelocity,
    ConstAcceleration,
    Sinusoidal,
}

impl SegmentKind {
    pub const ALL: [SegmentKind; 4] = [
        SegmentKind::Static,
        SegmentKind::ConstVelocity,
        SegmentKind::ConstAcceleration,
        SegmentKind::Sinusoidal,
    ];
}

/// Mean and standard deviation of a Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gauss {
    pub mu: f64,
    pub sigma: f64,
}

impl Gauss {
    pub const fn new(mu: f64, sigma: f64) -> Self {
        Gauss { mu, sigma }
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        Normal::new(self.mu, self.sigma).expect("sigma validated").sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    /// Frames per sequence.
    pub t_len: usize,
    /// Maximum number of segments.
    pub s_max: usize,
    /// Shortest allowed segment, in frames.
    pub min_segment: usize,
    /// Probabilities of static, constant-velocity, constant-acceleration and
    /// sinusoidal segments.
    pub seg_type_probs: [f64; 4],
    /// Velocity, per frame.
    pub a1: Gauss,
    /// Acceleration term, per frame squared.
    pub a2: Gauss,
    /// Angular frequency, rad per frame.
    pub omega: Gauss,
    pub phi0: Gauss,
    /// Sinusoid amplitude.
    pub amp: Gauss,
    /// `ln w0`.
    pub log_w0: Gauss,
    /// `ln(h / w)`.
    pub log_r_hw: Gauss,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            t_len: 60,
            s_max: 3,
            min_segment: 5,
            seg_type_probs: [0.25; 4],
            a1: Gauss::new(0.0, 0.005),
            a2: Gauss::new(0.0, 2e-4),
            omega: Gauss::new(0.1, 0.05),
            phi0: Gauss::new(0.0, std::f64::consts::PI),
            amp: Gauss::new(0.0, 0.05),
            log_w0: Gauss::new(0.08f64.ln(), 0.5),
            log_r_hw: Gauss::new(2.5f64.ln(), 0.3),
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.t_len < 2 {
            return bad(format!("sequence length must be at least 2, got {}", self.t_len));
        }
        if self.s_max < 1 {
            return bad("s_max must be at least 1".into());
        }
        if self.min_segment < 1 {
            return bad("minimum segment length must be at least 1".into());
        }
        let sum: f64 = self.seg_type_probs.iter().sum();
        if self.seg_type_probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
            return bad(format!("segment type probabilities must form a simplex, got {:?}", self.seg_type_probs));
        }
        for (name, g) in [
            ("a1", self.a1),
            ("a2", self.a2),
            ("omega", self.omega),
            ("phi0", self.phi0),
            ("amp", self.amp),
            ("w0", self.log_w0),
            ("r_hw", self.log_r_hw),
        ] {
            if !(g.sigma >= 0.0 && g.sigma.is_finite() && g.mu.is_finite()) {
                return bad(format!("{name}: sigma must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Parameters of one segment; only the fields its kind uses matter.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SegmentParams {
    pub a1: f64,
    pub a2: f64,
    pub omega: f64,
    pub phi0: f64,
    pub amp: f64,
}

impl SegmentParams {
    pub fn sample(cfg: &TrajectoryConfig, rng: &mut Rng) -> Self {
        SegmentParams {
            a1: cfg.a1.sample(rng),
            a2: cfg.a2.sample(rng),
            omega: cfg.omega.sample(rng),
            phi0: cfg.phi0.sample(rng),
            amp: cfg.amp.sample(rng),
        }
    }
}

/// Value of a segment at local time `tau`, with the free constant chosen so
/// that the value at `tau = 0` is `start`.
pub fn segment_value(kind: SegmentKind, p: &SegmentParams, start: f64, tau: f64) -> f64 {
    match kind {
        SegmentKind::Static => start,
        SegmentKind::ConstVelocity => p.a1 * tau + start,
        SegmentKind::ConstAcceleration => p.a2 * tau * tau + p.a1 * tau + start,
        SegmentKind::Sinusoidal => {
            let offset = start - p.amp * p.phi0.sin();
            offset + p.amp * (p.omega * tau + p.phi0).sin()
        }
    }
}

/// Values of a segment at `tau = 0, 1, ..., len - 1`.
pub fn gen_segment(kind: SegmentKind, p: &SegmentParams, start: f64, len: usize) -> Vec<f64> {
    (0..len).map(|tau| segment_value(kind, p, start, tau as f64)).collect()
}

/// A segmentation of `0..T` into consecutive segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    /// Segment lengths, summing to `T`.
    pub lengths: Vec<usize>,
}

impl Segmentation {
    /// Draws `s ~ U{1..s_max}` (capped so every segment can have the minimum
    /// length) and a uniformly random composition of `T` into `s` parts.
    pub fn sample(cfg: &TrajectoryConfig, rng: &mut Rng) -> Self {
        let t = cfg.t_len;
        let min_len = cfg.min_segment.min(t);
        let cap = (t / min_len).max(1);
        let s = rng.gen_range(1..=cfg.s_max.min(cap));
        let spare = t - s * min_len;
        // stars and bars: choose s-1 bar positions among spare + s - 1 slots
        let mut bars = index::sample(rng, spare + s - 1, s - 1).into_vec();
        bars.sort_unstable();
        let mut lengths = Vec::with_capacity(s);
        let mut prev = 0usize;
        for (i, &b) in bars.iter().enumerate() {
            let extra = b - i - prev;
            lengths.push(min_len + extra);
            prev = b - i;
        }
        lengths.push(min_len + spare - prev);
        Segmentation { lengths }
    }

    /// Start frame of each segment.
    pub fn starts(&self) -> Vec<usize> {
        self.lengths
            .iter()
            .scan(0, |acc, &l| {
                let s = *acc;
                *acc += l;
                Some(s)
            })
            .collect()
    }
}

fn sample_kind(cfg: &TrajectoryConfig, rng: &mut Rng) -> SegmentKind {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &p) in SegmentKind::ALL.iter().zip(&cfg.seg_type_probs) {
        acc += p;
        if u < acc {
            return *k;
        }
    }
    // rounding: fall back to the last kind with positive probability
    *SegmentKind::ALL
        .iter()
        .zip(&cfg.seg_type_probs)
        .rev()
        .find(|(_, &p)| p > 0.0)
        .map(|(k, _)| k)
        .unwrap_or(&SegmentKind::Static)
}

/// One coordinate sequence (GenSeq): each segment starts at the previous
/// segment's value extrapolated to the boundary.
pub fn gen_sequence(cfg: &TrajectoryConfig, seg: &Segmentation, start: f64, rng: &mut Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.t_len);
    let mut value = start;
    for &len in &seg.lengths {
        let kind = sample_kind(cfg, rng);
        let p = SegmentParams::sample(cfg, rng);
        out.extend(gen_segment(kind, &p, value, len));
        value = segment_value(kind, &p, value, len as f64);
    }
    out
}

/// A generated track with the latent quantities used to build it.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub boxes: Vec<BBox>,
    pub r_hw: f64,
    pub segmentation: Segmentation,
}

/// Box track: `x0, y0 ~ U(0, 1)`, `w0` and `r_hw` log-normal, box
/// `(x, y, x + w, y - h)` with `h = w * r_hw`.
pub fn gen_bbox_track(cfg: &TrajectoryConfig, rng: &mut Rng) -> Track {
    let x0: f64 = rng.gen();
    let y0: f64 = rng.gen();
    let w0 = cfg.log_w0.sample(rng).exp();
    let r_hw = cfg.log_r_hw.sample(rng).exp();
    let seg = Segmentation::sample(cfg, rng);
    let xs = gen_sequence(cfg, &seg, x0, rng);
    let ys = gen_sequence(cfg, &seg, y0, rng);
    let ws = gen_sequence(cfg, &seg, 1.0, rng);
    let w_min = (MIN_SIDE.max(MIN_SIDE / r_hw)) * (1.0 + 1e-9);
    let boxes = (0..cfg.t_len)
        .map(|t| {
            let w = (w0 * ws[t]).max(w_min);
            let h = w * r_hw;
            BBox {
                l: xs[t],
                t: ys[t],
                r: xs[t] + w,
                b: ys[t] - h,
            }
        })
        .collect();
    Track {
        boxes,
        r_hw,
        segmentation: seg,
    }
}

/// Track number `index` of a dataset split, from its own RNG stream.
pub fn dataset_track(cfg: &TrajectoryConfig, seed: u64, split: u64, index: usize) -> Track {
    let mut r = rng::stream(seed, &[split, index as u64]);
    gen_bbox_track(cfg, &mut r)
}

/// Box sequences as `[l, t, r, b]` arrays.
pub type Sequence = Vec<[f64; 4]>;

pub fn generate_split(cfg: &TrajectoryConfig, seed: u64, split: u64, n: usize) -> Vec<Sequence> {
    (0..n)
        .map(|i| dataset_track(cfg, seed, split, i).boxes.iter().map(|b| b.to_array()).collect())
        .collect()
}

/// Mean per-frame displacement of the box centre.
pub fn average_speed(seq: &[[f64; 4]]) -> f64 {
    let c = |b: &[f64; 4]| (0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3]));
    let n = seq.len().saturating_sub(1);
    if n == 0 {
        return 0.0;
    }
    seq.windows(2)
        .map(|w| {
            let (a, b) = (c(&w[0]), c(&w[1]));
            ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt()
        })
        .sum::<f64>()
        / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin edges, one more than `counts`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[0, max(values)]`.
    pub fn build(values: &[f64], bins: usize) -> Self {
        let hi = values.iter().copied().fold(0.0, f64::max).max(1e-12);
        let edges: Vec<f64> = (0..=bins).map(|i| hi * i as f64 / bins as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let i = ((v / hi) * bins as f64) as usize;
            counts[i.min(bins - 1)] += 1;
        }
        Histogram { edges, counts }
    }

    pub fn occupied_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub t_len: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    pub config: TrajectoryConfig,
    pub avg_speed_histogram: Histogram,
    pub mean_avg_speed: f64,
}

/// Formats with 9 significant digits.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = 8 - exp;
    if (0..=17).contains(&decimals) {
        format!("{:.*}", decimals as usize, x)
    } else {
        format!("{x:.8e}")
    }
}

pub fn write_sequences(path: &Path, seqs: &[Sequence], t_len: usize) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    writeln!(w, "{t_len} {}", seqs.len()).map_err(io)?;
    for (i, s) in seqs.iter().enumerate() {
        if i > 0 {
            writeln!(w).map_err(io)?;
        }
        for b in s {
            writeln!(w, "{} {} {} {}", fmt_sig9(b[0]), fmt_sig9(b[1]), fmt_sig9(b[2]), fmt_sig9(b[3]))
                .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_sequences(path: &Path) -> Result<Vec<Sequence>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = BufReader::new(f).lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(parse_err(1, "empty dataset file".into())),
    };
    let hv: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(1, format!("bad header {header:?}, expected `T count`")))?;
    let [t_len, count] = hv[..] else {
        return Err(parse_err(1, format!("bad header {header:?}, expected `T count`")));
    };
    let mut seqs: Vec<Sequence> = Vec::with_capacity(count);
    let mut cur: Sequence = Vec::with_capacity(t_len);
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(i + 1, format!("expected four numbers, got {line:?}")))?;
        let [l, t, r, b] = vals[..] else {
            return Err(parse_err(i + 1, format!("expected four numbers, got {line:?}")));
        };
        cur.push([l, t, r, b]);
        if cur.len() == t_len {
            seqs.push(std::mem::replace(&mut cur, Vec::with_capacity(t_len)));
        }
    }
    if !cur.is_empty() || seqs.len() != count {
        return Err(Error::Data(format!(
            "{}: header promises {count} sequences of {t_len} frames, found {} complete and {} extra frames",
            path.display(),
            seqs.len(),
            cur.len()
        )));
    }
    Ok(seqs)
}

/// Writes `train.txt`, `val.txt` and `stats.json` under `out_dir`.
pub fn gen_dataset(
    cfg: &TrajectoryConfig,
    n_train: usize,
    n_val: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetStats> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let train = generate_split(cfg, seed, label::SYNTH_TRAIN, n_train);
    let val = generate_split(cfg, seed, label::SYNTH_VAL, n_val);
    write_sequences(&out_dir.join("train.txt"), &train, cfg.t_len)?;
    write_sequences(&out_dir.join("val.txt"), &val, cfg.t_len)?;
    let speeds: Vec<f64> = train.iter().map(|s| average_speed(s)).collect();
    let stats = DatasetStats {
        t_len: cfg.t_len,
        n_train,
        n_val,
        seed,
        config: cfg.clone(),
        avg_speed_histogram: Histogram::build(&speeds, 20),
        mean_avg_speed: speeds.iter().sum::<f64>() / speeds.len().max(1) as f64,
    };
    let path = out_dir.join("stats.json");
    let json = serde_json::to_string_pretty(&stats).expect("stats serialise");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(stats)
}
