//! Runs DVAE-UMOT and the linear baseline over a scene set and collects a
//! per-method, per-scenario comparison.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dataio::BenchScene;
use crate::metrics::{clear_match, MetricCounts, MetricReport};
use crate::rng::{self, label};
use crate::srnn::SrnnParams;
use crate::tracker::{self, to_track_set, Dynamics, TrackerConfig};
use crate::{Error, Result};

/// Version of the report JSON layout.
pub const REPORT_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "dvae-umot")]
    DvaeUmot,
    #[serde(rename = "vkf")]
    Vkf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::DvaeUmot => "dvae-umot",
            Method::Vkf => "vkf",
        }
    }

    fn dynamics(self) -> Dynamics {
        match self {
            Method::DvaeUmot => Dynamics::Dvae,
            Method::Vkf => Dynamics::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    /// Shared tracker settings; `dynamics` is set per method and `seed` is
    /// the master seed from which per-scene seeds are derived.
    pub tracker: TrackerConfig,
    pub methods: Vec<Method>,
    /// Worker threads; left out of reports since it does not change them.
    #[serde(skip_serializing, default = "one")]
    pub jobs: usize,
    /// IoU threshold of the evaluation.
    pub threshold: f64,
    /// Score the estimates after every EM iteration.
    pub mota_curve: bool,
    /// Scenes whose trajectories are kept for overlay plots, per scenario.
    pub overlays_per_scenario: usize,
}

fn one() -> usize {
    1
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            tracker: TrackerConfig::default(),
            methods: vec![Method::DvaeUmot, Method::Vkf],
            jobs: 1,
            threshold: 0.5,
            mota_curve: true,
            overlays_per_scenario: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOutcome {
    pub scene: String,
    pub group: String,
    pub method: Method,
    pub seed: u64,
    pub counts: MetricCounts,
    pub metrics: MetricReport,
    pub assignment_accuracy: f64,
    pub underflows: usize,
    /// MOTA of the cascade initialisation and after every iteration.
    pub mota_by_iteration: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub method: Method,
    /// Scenario name, or `all`.
    pub group: String,
    pub scenes: usize,
    pub metrics: MetricReport,
    pub mean_assignment_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotaCurve {
    pub method: Method,
    pub mota: Vec<f64>,
}

/// Box centres for a trajectory plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub scene: String,
    pub group: String,
    pub gt: Vec<Vec<[f64; 2]>>,
    pub detections: Vec<Vec<[f64; 2]>>,
    pub estimates: Vec<(Method, Vec<Vec<[f64; 2]>>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub r_phi: f64,
    pub method: Method,
    pub mota: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub format: u32,
    pub version: String,
    pub config: BenchmarkConfig,
    pub scenes: usize,
    pub summary: Vec<GroupSummary>,
    pub per_scene: Vec<SceneOutcome>,
    pub mota_vs_iteration: Vec<MotaCurve>,
    pub overlays: Vec<Overlay>,
    #[serde(default)]
    pub sweep: Vec<SweepPoint>,
}

impl BenchmarkReport {
    pub fn summary_for(&self, method: Method, group: &str) -> Option<&GroupSummary> {
        self.summary.iter().find(|s| s.method == method && s.group == group)
    }
}

/// Applies `f` to `0..n` on up to `jobs` threads and returns the results
/// in index order.
pub fn par_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|sc| {
        for _ in 0..jobs {
            sc.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let v = f(i);
                slots.lock().expect("worker panicked")[i] = Some(v);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|v| v.expect("every index is filled"))
        .collect()
}

fn group_of(s: &BenchScene) -> String {
    s.scenario.map_or_else(|| "mot".to_string(), |c| c.name().to_string())
}

fn centers(boxes: impl Iterator<Item = [f64; 4]>) -> Vec<[f64; 2]> {
    boxes.map(|a| [0.5 * (a[0] + a[2]), 0.5 * (a[1] + a[3])]).collect()
}

struct Run {
    outcome: SceneOutcome,
    m: Vec<Vec<[f64; 4]>>,
}

fn run_one(scene: &BenchScene, index: usize, method: Method, params: Option<&SrnnParams>, cfg: &BenchmarkConfig) -> Result<Run> {
    let seed = rng::derive_seed(cfg.tracker.seed, &[label::BENCH_TRACK, index as u64]);
    let tcfg = TrackerConfig {
        dynamics: method.dynamics(),
        seed,
        record_history: cfg.mota_curve,
        ..cfg.tracker.clone()
    };
    let res = tracker::track(&scene.detections, params, &tcfg)
        .map_err(|e| Error::Numeric(format!("scene {}: {}: {e}", scene.name, method.name())))?;
    let gt = scene.gt_track_set();
    let (_, counts) = clear_match(&gt, &res.track_set(), cfg.threshold);
    let metrics = counts.report()?;
    let mota_by_iteration = res
        .history
        .iter()
        .map(|m| clear_match(&gt, &to_track_set(m), cfg.threshold).1.report().map(|r| r.mota))
        .collect::<Result<Vec<_>>>()?;
    Ok(Run {
        outcome: SceneOutcome {
            scene: scene.name.clone(),
            group: group_of(scene),
            method,
            seed,
            counts,
            metrics,
            assignment_accuracy: scene.assignment_accuracy(&res.assignments),
            underflows: res.diagnostics.underflows,
            mota_by_iteration,
        },
        m: res.m,
    })
}

fn summarise(outcomes: &[SceneOutcome], method: Method, group: &str) -> Result<Option<GroupSummary>> {
    let sel: Vec<&SceneOutcome> = outcomes
        .iter()
        .filter(|o| o.method == method && (group == "all" || o.group == group))
        .collect();
    if sel.is_empty() {
        return Ok(None);
    }
    let mut c = MetricCounts::default();
    for o in &sel {
        c.merge(&o.counts);
    }
    Ok(Some(GroupSummary {
        method,
        group: group.to_string(),
        scenes: sel.len(),
        metrics: c.report()?,
        mean_assignment_accuracy: sel.iter().map(|o| o.assignment_accuracy).sum::<f64>() / sel.len() as f64,
    }))
}

/// Tracks every scene with every method. `params` is required when
/// DVAE-UMOT is among the methods.
pub fn run_benchmark(scenes: &[BenchScene], params: Option<&SrnnParams>, cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if scenes.is_empty() {
        return Err(Error::Data("the benchmark has no scenes (0 listed)".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::Config("no tracking method selected".into()));
    }
    if cfg.methods.contains(&Method::DvaeUmot) && params.is_none() {
        return Err(Error::Config(
            "DVAE-UMOT needs a pre-trained checkpoint: pass --ckpt or --pretrain-first".into(),
        ));
    }
    cfg.tracker.validate()?;
    let jobs: Vec<(usize, Method)> = (0..scenes.len())
        .flat_map(|i| cfg.methods.iter().map(move |&m| (i, m)))
        .collect();
    let runs = par_map(jobs.len(), cfg.jobs, |j| {
        let (i, m) = jobs[j];
        run_one(&scenes[i], i, m, params, cfg)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut groups: Vec<String> = Vec::new();
    for s in scenes {
        let g = group_of(s);
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    let outcomes: Vec<SceneOutcome> = runs.iter().map(|r| r.outcome.clone()).collect();
    let mut summary = Vec::new();
    for &m in &cfg.methods {
        for g in groups.iter().map(String::as_str).chain(["all"]) {
            summary.extend(summarise(&outcomes, m, g)?);
        }
    }

    let mut mota_vs_iteration = Vec::new();
    if cfg.mota_curve {
        for &m in &cfg.methods {
            let curves: Vec<&Vec<f64>> = outcomes.iter().filter(|o| o.method == m).map(|o| &o.mota_by_iteration).collect();
            let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
            let mota = (0..len)
                .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / curves.len() as f64)
                .collect();
            mota_vs_iteration.push(MotaCurve { method: m, mota });
        }
    }

    let mut overlays = Vec::new();
    let mut shown: BTreeMap<String, usize> = BTreeMap::new();
    for (i, s) in scenes.iter().enumerate() {
        let g = group_of(s);
        let count = shown.entry(g.clone()).or_default();
        if *count >= cfg.overlays_per_scenario {
            continue;
        }
        *count += 1;
        let estimates = runs
            .iter()
            .zip(&jobs)
            .filter(|(_, (si, _))| *si == i)
            .map(|(r, (_, m))| (*m, r.m.iter().map(|tr| centers(tr.iter().copied())).collect()))
            .collect();
        overlays.push(Overlay {
            scene: s.name.clone(),
            group: g,
            gt: s.gt.iter().map(|tr| centers(tr.iter().map(|b| b.to_array()))).collect(),
            detections: s.detections.frames.iter().map(|f| centers(f.iter().map(|b| b.to_array()))).collect(),
            estimates,
        });
    }

    Ok(BenchmarkReport {
        format: REPORT_FORMAT,
        version: crate::VERSION.to_string(),
        config: cfg.clone(),
        scenes: scenes.len(),
        summary,
        per_scene: outcomes,
        mota_vs_iteration,
        overlays,
        sweep: Vec::new(),
    })
}

/// Overall MOTA per method for each observation-noise ratio.
pub fn r_phi_sweep(
    scenes: &[BenchScene],
    params: Option<&SrnnParams>,
    cfg: &BenchmarkConfig,
    r_phis: &[f64],
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for &r_phi in r_phis {
        let c = BenchmarkConfig {
            tracker: TrackerConfig {
                r_phi,
                ..cfg.tracker.clone()
            },
            mota_curve: false,
            overlays_per_scenario: 0,
            ..cfg.clone()
        };
        let rep = run_benchmark(scenes, params, &c)?;
        for &m in &cfg.methods {
            let s = rep.summary_for(m, "all").expect("every method is summarised");
            out.push(SweepPoint {
                r_phi,
                method: m,
                mota: s.metrics.mota,
            });
        }
    }
    Ok(out)
}
