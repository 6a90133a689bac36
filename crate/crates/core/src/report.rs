//! Report emission: JSON, a CSV summary table and SVG plots (MOTA against
//! EM iteration, per-scene MOTA box plots, the r_Φ sweep and trajectory
//! overlays).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::benchmark::{BenchmarkReport, Method, Overlay};
use crate::metrics::MetricReport;
use crate::{Error, Result};

pub fn to_json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report serialises") + "\n"
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, to_json(value)).map_err(|e| Error::io(path, e))
}

pub fn read_benchmark_report(path: &Path) -> Result<BenchmarkReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub const CSV_HEADER: &str = "method,scenario,scenes,mota,motp,idf1,ids,mt,ml,fp,fn,ids_pct,fp_pct,fn_pct,assignment_accuracy";

fn metric_cells(m: &MetricReport) -> String {
    format!(
        "{:.6},{:.6},{:.6},{},{},{},{},{},{:.4},{:.4},{:.4}",
        m.mota, m.motp, m.idf1, m.ids, m.mt, m.ml, m.fp, m.fn_, m.ids_pct, m.fp_pct, m.fn_pct
    )
}

/// The per-method, per-scenario comparison table.
pub fn summary_csv(r: &BenchmarkReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in &r.summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6}",
            s.method.name(),
            s.group,
            s.scenes,
            metric_cells(&s.metrics),
            s.mean_assignment_accuracy
        );
    }
    out
}

pub fn evaluation_csv(rows: &[(String, MetricReport)]) -> String {
    let mut out = String::from("sequence,mota,motp,idf1,ids,mt,ml,fp,fn,ids_pct,fp_pct,fn_pct\n");
    for (name, m) in rows {
        let _ = writeln!(out, "{name},{}", metric_cells(m));
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn method_color(m: Method) -> &'static str {
    match m {
        Method::DvaeUmot => PALETTE[0],
        Method::Vkf => PALETTE[1],
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Plot frame with linear axes mapping data ranges onto a fixed canvas.
struct Canvas {
    svg: String,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 60.0;
const MR: f64 = 20.0;
const MT: f64 = 40.0;
const MB: f64 = 50.0;

impl Canvas {
    fn new(title: &str, xlabel: &str, ylabel: &str, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) -> Self {
        let (x1, y1) = (if x1 > x0 { x1 } else { x0 + 1.0 }, if y1 > y0 { y1 } else { y0 + 1.0 });
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
        let _ = writeln!(
            svg,
            r#"<rect x="{ML}" y="{MT}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - ML - MR,
            H - MT - MB
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (ML + W - MR) / 2.0, H - 12.0, esc(xlabel));
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            (MT + H - MB) / 2.0,
            esc(ylabel)
        );
        let mut c = Canvas { svg, x0, x1, y0, y1 };
        for i in 0..=4 {
            let fx = x0 + (x1 - x0) * i as f64 / 4.0;
            let fy = y0 + (y1 - y0) * i as f64 / 4.0;
            let (px, py) = (c.px(fx), c.py(fy));
            let _ = writeln!(c.svg, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#, H - MB + 16.0, tick(fx));
            let _ = writeln!(c.svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, ML - 6.0, py + 4.0, tick(fy));
            let _ = writeln!(c.svg, r##"<line x1="{ML}" x2="{}" y1="{py:.1}" y2="{py:.1}" stroke="#ddd"/>"##, W - MR);
        }
        c
    }

    fn px(&self, x: f64) -> f64 {
        ML + (x - self.x0) / (self.x1 - self.x0) * (W - ML - MR)
    }

    fn py(&self, y: f64) -> f64 {
        H - MB - (y - self.y0) / (self.y1 - self.y0) * (H - MT - MB)
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, extra: &str) {
        let p: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let _ = writeln!(
            self.svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8" {extra}/>"#,
            p.join(" ")
        );
    }

    fn dot(&mut self, x: f64, y: f64, r: f64, color: &str) {
        if x.is_finite() && y.is_finite() {
            let _ = writeln!(self.svg, r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{color}"/>"#, self.px(x), self.py(y));
        }
    }

    fn legend(&mut self, entries: &[(String, &str)]) {
        for (i, (name, color)) in entries.iter().enumerate() {
            let y = MT + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                self.svg,
                r#"<line x1="{}" x2="{}" y1="{y}" y2="{y}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
                W - MR - 130.0,
                W - MR - 110.0,
                W - MR - 104.0,
                y + 4.0,
                esc(name)
            );
        }
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo.is_finite() {
        let pad = 0.05 * (hi - lo).max(1e-3);
        (lo - pad, hi + pad)
    } else {
        (0.0, 1.0)
    }
}

/// Line plot of named series.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[(String, &str, Vec<(f64, f64)>)]) -> String {
    let xs = range(series.iter().flat_map(|s| s.2.iter().map(|p| p.0)));
    let ys = range(series.iter().flat_map(|s| s.2.iter().map(|p| p.1)));
    let mut c = Canvas::new(title, xlabel, ylabel, xs, ys);
    for (_, color, pts) in series {
        c.polyline(pts, color, "");
        for &(x, y) in pts.iter().filter(|_| pts.len() <= 12) {
            c.dot(x, y, 3.0, color);
        }
    }
    c.legend(&series.iter().map(|s| (s.0.clone(), s.1)).collect::<Vec<_>>());
    c.finish()
}

pub fn mota_curve_svg(r: &BenchmarkReport) -> String {
    let series: Vec<(String, &str, Vec<(f64, f64)>)> = r
        .mota_vs_iteration
        .iter()
        .map(|c| {
            let pts = c.mota.iter().enumerate().map(|(i, &m)| (i as f64, m)).collect();
            (c.method.name().to_string(), method_color(c.method), pts)
        })
        .collect();
    line_plot("Mean MOTA by EM iteration", "iteration (0 = initialisation)", "MOTA", &series)
}

pub fn sweep_svg(r: &BenchmarkReport) -> String {
    let mut series: Vec<(String, &str, Vec<(f64, f64)>)> = Vec::new();
    for &m in &r.config.methods {
        let pts: Vec<(f64, f64)> = r.sweep.iter().filter(|p| p.method == m).map(|p| (p.r_phi, p.mota)).collect();
        if !pts.is_empty() {
            series.push((m.name().to_string(), method_color(m), pts));
        }
    }
    line_plot("MOTA against observation-noise ratio", "r_phi", "MOTA", &series)
}

fn quartiles(v: &mut [f64]) -> [f64; 5] {
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let x = p * (v.len() - 1) as f64;
        let (i, f) = (x.floor() as usize, x.fract());
        v[i] + f * (v[(i + 1).min(v.len() - 1)] - v[i])
    };
    [q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)]
}

/// Per-scene MOTA distribution for every scenario and method.
pub fn mota_box_svg(r: &BenchmarkReport) -> String {
    let mut groups: Vec<&str> = Vec::new();
    for o in &r.per_scene {
        if !groups.contains(&o.group.as_str()) {
            groups.push(&o.group);
        }
    }
    let methods = &r.config.methods;
    let ys = range(r.per_scene.iter().map(|o| o.metrics.mota).chain([1.0]));
    let slots = (groups.len() * methods.len()).max(1) as f64;
    let mut c = Canvas::new("Per-scene MOTA", "scenario", "MOTA", (0.0, slots), ys);
    let mut slot = 0.0;
    for g in &groups {
        let start = slot;
        for &m in methods {
            let mut v: Vec<f64> = r.per_scene.iter().filter(|o| o.method == m && o.group == *g).map(|o| o.metrics.mota).collect();
            if !v.is_empty() {
                let [lo, q1, med, q3, hi] = quartiles(&mut v);
                let (xl, xr, xm) = (c.px(slot + 0.2), c.px(slot + 0.8), c.px(slot + 0.5));
                let color = method_color(m);
                let _ = writeln!(
                    c.svg,
                    r#"<line x1="{xm:.1}" x2="{xm:.1}" y1="{:.1}" y2="{:.1}" stroke="{color}"/>"#,
                    c.py(lo),
                    c.py(hi)
                );
                let _ = writeln!(
                    c.svg,
                    r#"<rect x="{xl:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="white" stroke="{color}" stroke-width="1.5"/>"#,
                    c.py(q3),
                    xr - xl,
                    (c.py(q1) - c.py(q3)).max(0.5)
                );
                let _ = writeln!(
                    c.svg,
                    r#"<line x1="{xl:.1}" x2="{xr:.1}" y1="{0:.1}" y2="{0:.1}" stroke="{color}" stroke-width="2"/>"#,
                    c.py(med)
                );
            }
            slot += 1.0;
        }
        let _ = writeln!(
            c.svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            c.px(0.5 * (start + slot)),
            MT - 4.0,
            esc(g)
        );
    }
    c.legend(&methods.iter().map(|&m| (m.name().to_string(), method_color(m))).collect::<Vec<_>>());
    c.finish()
}

/// Ground truth (dashed), detections (grey dots) and estimated tracks of
/// one scene in normalised image coordinates.
pub fn overlay_svg(o: &Overlay) -> String {
    let all = o
        .gt
        .iter()
        .flatten()
        .chain(o.detections.iter().flatten())
        .chain(o.estimates.iter().flat_map(|e| e.1.iter().flatten()));
    let pts: Vec<[f64; 2]> = all.copied().collect();
    let xs = range(pts.iter().map(|p| p[0]));
    let ys = range(pts.iter().map(|p| p[1]));
    let mut c = Canvas::new(&format!("Trajectories: {}", o.scene), "x", "y", xs, ys);
    for f in &o.detections {
        for p in f {
            c.dot(p[0], p[1], 1.6, "#999");
        }
    }
    for tr in &o.gt {
        let pts: Vec<(f64, f64)> = tr.iter().map(|p| (p[0], p[1])).collect();
        c.polyline(&pts, "black", r#"stroke-dasharray="4 3""#);
    }
    let mut legend = vec![("ground truth".to_string(), "black")];
    for (m, tracks) in &o.estimates {
        for (n, tr) in tracks.iter().enumerate() {
            let pts: Vec<(f64, f64)> = tr.iter().map(|p| (p[0], p[1])).collect();
            let color = if o.estimates.len() == 1 {
                PALETTE[n % PALETTE.len()]
            } else {
                method_color(*m)
            };
            c.polyline(&pts, color, r#"stroke-opacity="0.8""#);
        }
        legend.push((m.name().to_string(), method_color(*m)));
    }
    c.legend(&legend);
    c.finish()
}

fn put(dir: &Path, name: &str, body: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    written.push(p);
    Ok(())
}

/// Writes the CSV table and every plot the report has data for; returns
/// the written paths.
pub fn render(r: &BenchmarkReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    put(dir, "summary.csv", &summary_csv(r), &mut written)?;
    put(dir, "mota_by_scene.svg", &mota_box_svg(r), &mut written)?;
    if r.mota_vs_iteration.iter().any(|c| !c.mota.is_empty()) {
        put(dir, "mota_vs_iteration.svg", &mota_curve_svg(r), &mut written)?;
    }
    if !r.sweep.is_empty() {
        put(dir, "mota_vs_r_phi.svg", &sweep_svg(r), &mut written)?;
    }
    for o in &r.overlays {
        let name: String = o
            .scene
            .chars()
            .map(|ch| if ch.is_ascii_alphanumeric() || ch == '_' || ch == '-' { ch } else { '_' })
            .collect();
        put(dir, &format!("overlay_{name}.svg"), &overlay_svg(o), &mut written)?;
    }
    Ok(written)
}
