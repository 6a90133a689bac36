//! IoU, the Hungarian solver and CLEAR-MOT / identity metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::{Error, Result};

/// Intersection over union; 0 when either box has no area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.r.min(b.r) - a.l.max(b.l);
    let ih = a.t.min(b.t) - a.b.max(b.b);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Minimum-cost assignment on an `n × m` matrix (rows of equal length).
///
/// Non-finite entries mark forbidden pairs. The solver first maximises the
/// number of allowed pairs, then minimises their total cost; rows or columns
/// that can only be matched through forbidden entries stay unassigned.
/// Returns `(row, col)` pairs sorted by row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let transpose = n > m;
    let (rows, cols) = if transpose { (m, n) } else { (n, m) };
    let at = |i: usize, j: usize| if transpose { cost[j][i] } else { cost[i][j] };

    // forbidden entries cost more than any full assignment of allowed ones
    let finite_span: f64 = cost
        .iter()
        .flatten()
        .filter(|x| x.is_finite())
        .map(|x| x.abs())
        .fold(0.0, f64::max);
    let big = (finite_span + 1.0) * (rows as f64 + 1.0) * 4.0;
    let c = |i: usize, j: usize| {
        let v = at(i, j);
        if v.is_finite() {
            v
        } else {
            big
        }
    };

    // Shortest augmenting path with potentials, 1-based as in the classic
    // formulation; p[j] is the row matched to column j.
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if !used[j] {
                    let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=cols)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .filter(|&(i, j)| at(i, j).is_finite())
        .map(|(i, j)| if transpose { (j, i) } else { (i, j) })
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Sum of costs over an assignment.
pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| cost[i][j]).sum()
}

/// Frame-indexed tracks: for every frame, the `(track id, box)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackSet {
    pub frames: BTreeMap<usize, Vec<(u64, BBox)>>,
}

impl TrackSet {
    pub fn new() -> Self {
        TrackSet::default()
    }

    pub fn push(&mut self, frame: usize, id: u64, b: BBox) {
        self.frames.entry(frame).or_default().push((id, b));
    }

    /// `tracks[n][t]` is object `n` at frame `t + 1`, with id `n + 1`.
    pub fn from_dense(tracks: &[Vec<BBox>]) -> Self {
        let mut s = TrackSet::new();
        for (n, tr) in tracks.iter().enumerate() {
            for (t, b) in tr.iter().enumerate() {
                s.push(t + 1, n as u64 + 1, *b);
            }
        }
        s
    }

    pub fn num_detections(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn ids(&self) -> BTreeSet<u64> {
        self.frames.values().flatten().map(|(id, _)| *id).collect()
    }

    pub fn map_boxes(&self, f: impl Fn(&BBox) -> BBox) -> Self {
        TrackSet {
            frames: self
                .frames
                .iter()
                .map(|(&t, v)| (t, v.iter().map(|(id, b)| (*id, f(b))).collect()))
                .collect(),
        }
    }
}

/// Matching result of one frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMatch {
    pub frame: usize,
    /// `(gt id, hypothesis id, IoU)`.
    pub matches: Vec<(u64, u64, f64)>,
    pub unmatched_gt: Vec<u64>,
    pub unmatched_hyp: Vec<u64>,
    /// GT ids whose hypothesis changed at this frame.
    pub switches: Vec<u64>,
}

/// Additive counts; reports over several sequences sum these first.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub gt: usize,
    pub hyp: usize,
    pub matches: usize,
    pub fp: usize,
    pub fn_: usize,
    pub ids: usize,
    pub iou_sum: f64,
    pub idtp: usize,
    pub gt_tracks: usize,
    pub mt: usize,
    pub pt: usize,
    pub ml: usize,
}

impl MetricCounts {
    pub fn merge(&mut self, o: &MetricCounts) {
        self.gt += o.gt;
        self.hyp += o.hyp;
        self.matches += o.matches;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.ids += o.ids;
        self.iou_sum += o.iou_sum;
        self.idtp += o.idtp;
        self.gt_tracks += o.gt_tracks;
        self.mt += o.mt;
        self.pt += o.pt;
        self.ml += o.ml;
    }

    pub fn report(&self) -> Result<MetricReport> {
        if self.gt == 0 {
            return Err(Error::Data("ground truth is empty; MOTA is undefined".into()));
        }
        let gt = self.gt as f64;
        let pct = |x: usize| 100.0 * x as f64 / gt;
        Ok(MetricReport {
            mota: 1.0 - (self.fn_ + self.fp + self.ids) as f64 / gt,
            motp: if self.matches > 0 {
                self.iou_sum / self.matches as f64
            } else {
                0.0
            },
            idf1: 2.0 * self.idtp as f64 / (self.gt + self.hyp) as f64,
            ids: self.ids,
            fp: self.fp,
            fn_: self.fn_,
            ids_pct: pct(self.ids),
            fp_pct: pct(self.fp),
            fn_pct: pct(self.fn_),
            mt: self.mt,
            ml: self.ml,
            pt: self.pt,
            gt_tracks: self.gt_tracks,
            gt_detections: self.gt,
            matches: self.matches,
        })
    }
}

/// Aggregate metrics. Fractions are in `[0, 1]` (MOTA may be negative);
/// `*_pct` fields are percentages of the GT detection count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mota: f64,
    pub motp: f64,
    pub idf1: f64,
    pub ids: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ids_pct: f64,
    pub fp_pct: f64,
    pub fn_pct: f64,
    pub mt: usize,
    pub ml: usize,
    pub pt: usize,
    pub gt_tracks: usize,
    pub gt_detections: usize,
    pub matches: usize,
}

/// Per-frame CLEAR matching followed by the additive counts.
pub fn clear_match(gt: &TrackSet, hyp: &TrackSet, threshold: f64) -> (Vec<FrameMatch>, MetricCounts) {
    let frames: BTreeSet<usize> = gt.frames.keys().chain(hyp.frames.keys()).copied().collect();
    let empty = Vec::new();
    let mut prev: BTreeMap<u64, u64> = BTreeMap::new();
    let mut last_hyp: BTreeMap<u64, u64> = BTreeMap::new();
    let mut present: BTreeMap<u64, usize> = BTreeMap::new();
    let mut covered: BTreeMap<u64, usize> = BTreeMap::new();
    let mut counts = MetricCounts::default();
    let mut out = Vec::with_capacity(frames.len());

    for t in frames {
        let g = gt.frames.get(&t).unwrap_or(&empty);
        let h = hyp.frames.get(&t).unwrap_or(&empty);
        let mut g_used = vec![false; g.len()];
        let mut h_used = vec![false; h.len()];
        let mut fm = FrameMatch {
            frame: t,
            ..FrameMatch::default()
        };
        for (gid, _) in g {
            *present.entry(*gid).or_default() += 1;
        }
        // keep last frame's correspondences that are still valid
        for (gi, (gid, gb)) in g.iter().enumerate() {
            let Some(&hid) = prev.get(gid) else { continue };
            if let Some(hi) = h.iter().position(|(id, _)| *id == hid) {
                let o = iou(gb, &h[hi].1);
                if !h_used[hi] && o >= threshold {
                    g_used[gi] = true;
                    h_used[hi] = true;
                    fm.matches.push((*gid, hid, o));
                }
            }
        }
        let gi_free: Vec<usize> = (0..g.len()).filter(|&i| !g_used[i]).collect();
        let hi_free: Vec<usize> = (0..h.len()).filter(|&i| !h_used[i]).collect();
        if !gi_free.is_empty() && !hi_free.is_empty() {
            let cost: Vec<Vec<f64>> = gi_free
                .iter()
                .map(|&gi| {
                    hi_free
                        .iter()
                        .map(|&hi| {
                            let o = iou(&g[gi].1, &h[hi].1);
                            if o >= threshold {
                                1.0 - o
                            } else {
                                f64::INFINITY
                            }
                        })
                        .collect()
                })
                .collect();
            for (a, b) in hungarian(&cost) {
                let (gi, hi) = (gi_free[a], hi_free[b]);
                g_used[gi] = true;
                h_used[hi] = true;
                let (gid, hid) = (g[gi].0, h[hi].0);
                if last_hyp.get(&gid).is_some_and(|&old| old != hid) {
                    fm.switches.push(gid);
                }
                fm.matches.push((gid, hid, 1.0 - cost[a][b]));
            }
        }
        prev.clear();
        for &(gid, hid, o) in &fm.matches {
            prev.insert(gid, hid);
            last_hyp.insert(gid, hid);
            *covered.entry(gid).or_default() += 1;
            counts.iou_sum += o;
        }
        fm.unmatched_gt = (0..g.len()).filter(|&i| !g_used[i]).map(|i| g[i].0).collect();
        fm.unmatched_hyp = (0..h.len()).filter(|&i| !h_used[i]).map(|i| h[i].0).collect();
        counts.gt += g.len();
        counts.hyp += h.len();
        counts.matches += fm.matches.len();
        counts.fn_ += fm.unmatched_gt.len();
        counts.fp += fm.unmatched_hyp.len();
        counts.ids += fm.switches.len();
        out.push(fm);
    }

    for (gid, &n) in &present {
        let ratio = covered.get(gid).copied().unwrap_or(0) as f64 / n as f64;
        counts.gt_tracks += 1;
        if ratio >= 0.8 {
            counts.mt += 1;
        } else if ratio <= 0.2 {
            counts.ml += 1;
        } else {
            counts.pt += 1;
        }
    }
    counts.idtp = id_true_positives(gt, hyp, threshold);
    (out, counts)
}

/// Identity true positives: the best one-to-one pairing of GT and
/// hypothesis ids, scored by the number of frames where the pair overlaps
/// with IoU at least `threshold`.
pub fn id_true_positives(gt: &TrackSet, hyp: &TrackSet, threshold: f64) -> usize {
    let gids: Vec<u64> = gt.ids().into_iter().collect();
    let hids: Vec<u64> = hyp.ids().into_iter().collect();
    if gids.is_empty() || hids.is_empty() {
        return 0;
    }
    let mut overlap = vec![vec![0usize; hids.len()]; gids.len()];
    for (t, g) in &gt.frames {
        let Some(h) = hyp.frames.get(t) else { continue };
        for (gid, gb) in g {
            let gi = gids.binary_search(gid).expect("id listed");
            for (hid, hb) in h {
                if iou(gb, hb) >= threshold {
                    overlap[gi][hids.binary_search(hid).expect("id listed")] += 1;
                }
            }
        }
    }
    let cost: Vec<Vec<f64>> = overlap.iter().map(|r| r.iter().map(|&x| -(x as f64)).collect()).collect();
    hungarian(&cost).iter().map(|&(i, j)| overlap[i][j]).sum()
}

/// CLEAR-MOT and IDF1 for one sequence.
pub fn evaluate(gt: &TrackSet, hyp: &TrackSet, threshold: f64) -> Result<MetricReport> {
    clear_match(gt, hyp, threshold).1.report()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn bx(l: f64, t: f64, r: f64, b: f64) -> BBox {
        BBox { l, t, r, b }
    }

    #[test]
    fn iou_cases() {
        let a = bx(0.0, 2.0, 2.0, 0.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(5.0, 6.0, 6.0, 5.0)), 0.0);
        let b = bx(1.0, 2.0, 3.0, 0.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &b), iou(&b, &a));
    }

    #[test]
    fn hungarian_small_case() {
        let pairs = hungarian(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(assignment_cost(&[vec![1.0, 2.0], vec![2.0, 4.0]], &pairs), 4.0);
    }

    #[test]
    fn hungarian_diagonal() {
        let c: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..5).map(|j| if i == j { 0.0 } else { 1.0 + (i * j) as f64 }).collect())
            .collect();
        assert_eq!(hungarian(&c), (0..5).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn hungarian_forbidden_entries() {
        let inf = f64::INFINITY;
        // row 1 can only use forbidden entries
        let c = vec![vec![1.0, inf], vec![inf, inf], vec![inf, 2.0]];
        assert_eq!(hungarian(&c), vec![(0, 0), (2, 1)]);
        assert!(hungarian(&[vec![inf, inf]]).is_empty());
        assert!(hungarian(&[]).is_empty());
    }

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        let n = cost.len();
        let m = cost[0].len();
        // enumerate injective maps from the smaller side to the larger one
        fn rec(cost: &[Vec<f64>], i: usize, used: &mut Vec<bool>, tr: bool) -> f64 {
            let rows = if tr { cost[0].len() } else { cost.len() };
            if i == rows {
                return 0.0;
            }
            let cols = if tr { cost.len() } else { cost[0].len() };
            let mut best = f64::INFINITY;
            for j in 0..cols {
                if !used[j] {
                    used[j] = true;
                    let c = if tr { cost[j][i] } else { cost[i][j] };
                    best = best.min(c + rec(cost, i + 1, used, tr));
                    used[j] = false;
                }
            }
            best
        }
        let tr = n > m;
        let cols = if tr { n } else { m };
        rec(cost, 0, &mut vec![false; cols], tr)
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut r = rng::stream(1, &[]);
        for case in 0..1000 {
            let n = r.gen_range(1..=6);
            let m = r.gen_range(1..=6);
            let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| r.gen_range(0..50) as f64).collect()).collect();
            let pairs = hungarian(&cost);
            assert_eq!(pairs.len(), n.min(m));
            assert_eq!(assignment_cost(&cost, &pairs), brute_force(&cost), "case {case}: {cost:?}");
        }
    }

    fn perfect_set() -> TrackSet {
        let tracks: Vec<Vec<BBox>> = (0..3)
            .map(|n| {
                (0..10)
                    .map(|t| {
                        let x = 0.2 * n as f64 + 0.01 * t as f64;
                        bx(x, 0.5, x + 0.1, 0.3)
                    })
                    .collect()
            })
            .collect();
        TrackSet::from_dense(&tracks)
    }

    #[test]
    fn perfect_hypothesis() {
        let gt = perfect_set();
        let r = evaluate(&gt, &gt, 0.5).unwrap();
        assert_eq!((r.mota, r.motp, r.idf1), (1.0, 1.0, 1.0));
        assert_eq!((r.ids, r.fp, r.fn_), (0, 0, 0));
        assert_eq!((r.mt, r.ml), (3, 0));
    }

    #[test]
    fn constructed_errors_give_mota() {
        // 3 tracks × 10 frames; drop two GT matches, add one spurious
        // hypothesis and swap identities once.
        let gt = perfect_set();
        let mut hyp = TrackSet::new();
        for (&t, v) in &gt.frames {
            for &(id, b) in v {
                if id == 1 && (t == 3 || t == 4) {
                    continue; // 2 FN
                }
                // track 2 switches to hypothesis id 7 from frame 6 on
                let hid = if id == 2 && t >= 6 { 7 } else { id };
                hyp.push(t, hid, b);
            }
        }
        hyp.push(5, 9, bx(0.9, 0.95, 0.95, 0.9)); // 1 FP
        let r = evaluate(&gt, &hyp, 0.5).unwrap();
        assert_eq!((r.fn_, r.fp, r.ids), (2, 1, 1));
        assert!((r.mota - (1.0 - 4.0 / 30.0)).abs() < 1e-9);
        assert!((r.mota - 0.86667).abs() < 1e-5);
    }

    #[test]
    fn mostly_tracked_threshold() {
        let gt = TrackSet::from_dense(&[(0..10).map(|_| bx(0.0, 1.0, 1.0, 0.0)).collect()]);
        let mut hyp = gt.clone();
        hyp.frames.get_mut(&10).unwrap().clear();
        let r = evaluate(&gt, &hyp, 0.5).unwrap();
        assert_eq!((r.mt, r.pt, r.ml), (1, 0, 0));
        let mut hyp = TrackSet::new();
        hyp.push(1, 1, bx(0.0, 1.0, 1.0, 0.0));
        hyp.push(2, 1, bx(0.0, 1.0, 1.0, 0.0));
        let r = evaluate(&gt, &hyp, 0.5).unwrap();
        assert_eq!((r.mt, r.pt, r.ml), (0, 0, 1));
    }

    #[test]
    fn empty_ground_truth_is_an_error() {
        assert!(evaluate(&TrackSet::new(), &perfect_set(), 0.5).is_err());
    }

    #[test]
    fn continuity_prefers_previous_match() {
        // two hypotheses overlap the GT box; the one matched last frame keeps
        // the match even though the other has higher IoU now
        let g = bx(0.0, 1.0, 1.0, 0.0);
        let mut gt = TrackSet::new();
        gt.push(1, 1, g);
        gt.push(2, 1, g);
        let mut hyp = TrackSet::new();
        hyp.push(1, 5, g);
        hyp.push(2, 5, bx(0.0, 1.0, 0.7, 0.0));
        hyp.push(2, 6, g);
        let (fm, c) = clear_match(&gt, &hyp, 0.5);
        assert_eq!(fm[1].matches[0].1, 5);
        assert_eq!((c.ids, c.fp), (0, 1));
    }

    fn random_scene(seed: u64) -> (TrackSet, TrackSet) {
        let mut r = rng::stream(seed, &[]);
        let mut gt = TrackSet::new();
        let mut hyp = TrackSet::new();
        for n in 0..3u64 {
            let (x, y) = (r.gen_range(0.0..0.8), r.gen_range(0.2..1.0));
            for t in 1..=8 {
                let b = bx(x + 0.01 * t as f64, y, x + 0.1 + 0.01 * t as f64, y - 0.15);
                if r.gen_bool(0.9) {
                    gt.push(t, n + 1, b);
                }
                if r.gen_bool(0.9) {
                    let j = r.gen_range(-0.03..0.03);
                    let hid = if r.gen_bool(0.1) { n + 10 } else { n + 1 };
                    hyp.push(t, hid, bx(b.l + j, b.t + j, b.r + j, b.b + j));
                }
            }
        }
        (gt, hyp)
    }

    proptest! {
        #[test]
        fn scaling_leaves_metrics_unchanged(seed: u64, k in 0.1f64..10.0) {
            let (gt, hyp) = random_scene(seed);
            prop_assume!(gt.num_detections() > 0);
            let a = evaluate(&gt, &hyp, 0.5).unwrap();
            let b = evaluate(&gt.map_boxes(|b| b.scaled(k)), &hyp.map_boxes(|b| b.scaled(k)), 0.5).unwrap();
            prop_assert_eq!((a.fp, a.fn_, a.ids, a.mt, a.ml), (b.fp, b.fn_, b.ids, b.mt, b.ml));
            prop_assert!((a.mota - b.mota).abs() < 1e-12);
            prop_assert!((a.motp - b.motp).abs() < 1e-9);
            prop_assert!((a.idf1 - b.idf1).abs() < 1e-12);
        }

        #[test]
        fn relabelling_hypotheses_is_invariant(seed: u64, offset in 100u64..1000) {
            let (gt, hyp) = random_scene(seed);
            prop_assume!(gt.num_detections() > 0);
            let mut relabelled = hyp.clone();
            for v in relabelled.frames.values_mut() {
                for (id, _) in v.iter_mut() {
                    *id = offset + 3 * *id;
                }
            }
            let a = evaluate(&gt, &hyp, 0.5).unwrap();
            let b = evaluate(&gt, &relabelled, 0.5).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn mota_is_one_only_without_errors(seed: u64) {
            let (gt, hyp) = random_scene(seed);
            prop_assume!(gt.num_detections() > 0);
            let r = evaluate(&gt, &hyp, 0.5).unwrap();
            prop_assert_eq!(r.mota == 1.0, r.fp + r.fn_ + r.ids == 0);
            prop_assert!(r.mota <= 1.0);
            prop_assert!((0.0..=1.0).contains(&r.motp) && (0.0..=1.0).contains(&r.idf1));
        }

        #[test]
        fn hungarian_float_costs_match_brute_force(
            n in 1usize..=5, m in 1usize..=5, seed: u64
        ) {
            let mut r = rng::stream(seed, &[]);
            let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
            let got = assignment_cost(&cost, &hungarian(&cost));
            prop_assert!((got - brute_force(&cost)).abs() < 1e-9);
        }
    }
}
