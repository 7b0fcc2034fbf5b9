//! Deterministic SVG line charts for run diagnostics and noise sweeps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics_csv::{fmt_sig6, metrics_to_csv};
use super::write_file;
use crate::earlycurve::curve_value;
use crate::error::{Error, Result};
use crate::trainer::{MetricsRow, SweepPoint};

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

#[derive(Clone, Debug)]
struct Series {
    label: String,
    color: &'static str,
    dashed: bool,
    dots: bool,
    points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
struct Marker {
    x: f64,
    label: String,
    color: &'static str,
}

#[derive(Clone, Debug)]
struct Chart {
    title: String,
    x_label: String,
    y_label: String,
    y_range: Option<(f64, f64)>,
    series: Vec<Series>,
    markers: Vec<Marker>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

impl Chart {
    fn render(&self) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).chain(self.markers.iter().map(|m| m.x));
        let (x0, x1) = span(
            xs.clone().fold(f64::INFINITY, f64::min),
            xs.fold(f64::NEG_INFINITY, f64::max),
        );
        let (y0, y1) = self.y_range.unwrap_or_else(|| {
            let ys = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
            let lo = ys.clone().fold(f64::INFINITY, f64::min);
            let hi = ys.fold(f64::NEG_INFINITY, f64::max);
            if lo.is_finite() {
                span(lo, hi)
            } else {
                (0.0, 1.0)
            }
        });
        let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, esc(&self.title));
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for i in 0..=5 {
            let f = i as f64 / 5.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let (px, py) = (sx(xv), sy(yv));
            let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, TOP + ph, TOP + ph + 4.0);
            let _ = writeln!(s, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, fmt_tick(xv));
            let _ = writeln!(s, r#"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/>"#, LEFT - 4.0);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, py + 4.0, fmt_tick(yv));
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );
        for m in &self.markers {
            let px = sx(m.x);
            let _ = writeln!(
                s,
                r#"<line class="trigger" x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{:.2}" stroke="{}" stroke-dasharray="2,3"/>"#,
                TOP + ph,
                m.color
            );
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" fill="{}">{}</text>"#, px + 3.0, TOP + 12.0, m.color, esc(&m.label));
        }
        for se in &self.series {
            let pts: Vec<String> = se.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            if pts.len() > 1 {
                let dash = if se.dashed { r#" stroke-dasharray="6,4""# } else { "" };
                let _ = writeln!(s, r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#, se.color, pts.join(" "));
            }
            if se.dots || pts.len() == 1 {
                for &(x, y) in &se.points {
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#, sx(x), sy(y), se.color);
                }
            }
        }
        for (i, se) in self.series.iter().enumerate() {
            let y = TOP + 10.0 + 16.0 * i as f64;
            let x = W - RIGHT + 12.0;
            let dash = if se.dashed { r#" stroke-dasharray="6,4""# } else { "" };
            let _ = writeln!(s, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="1.5"{dash}/>"#, x + 22.0, se.color);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x + 27.0, y + 4.0, esc(&se.label));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn fmt_tick(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e6 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn class_label(names: &[String], c: u8) -> String {
    names.get(c as usize).cloned().unwrap_or_else(|| format!("class {c}"))
}

fn classes_in(rows: &[MetricsRow]) -> Vec<u8> {
    let mut cs: Vec<u8> = rows.iter().filter_map(|r| r.class).collect();
    cs.sort_unstable();
    cs.dedup();
    cs
}

fn series_of(rows: &[MetricsRow], class: Option<u8>, f: impl Fn(&MetricsRow) -> Option<f64>) -> Vec<(f64, f64)> {
    rows.iter().filter(|r| r.class == class).filter_map(|r| f(r).map(|v| (r.epoch as f64, v))).collect()
}

/// Per-class IoU_el (dashed) and IoU_m (solid) over epochs.
pub fn memorization_chart(names: &[String], rows: &[MetricsRow]) -> String {
    let mut series = Vec::new();
    for (i, c) in classes_in(rows).into_iter().enumerate() {
        let label = class_label(names, c);
        let el = series_of(rows, Some(c), |r| r.iou_el);
        let m = series_of(rows, Some(c), |r| r.iou_m);
        if !el.is_empty() {
            series.push(Series { label: format!("{label} IoU_el"), color: color(i), dashed: true, dots: false, points: el });
        }
        if !m.is_empty() {
            series.push(Series { label: format!("{label} IoU_m"), color: color(i), dashed: false, dots: false, points: m });
        }
    }
    Chart {
        title: "Early learning and memorization".into(),
        x_label: "epoch".into(),
        y_label: "IoU on wrongly annotated pixels".into(),
        y_range: Some((0.0, 1.0)),
        series,
        markers: Vec::new(),
    }
    .render()
}

/// Training IoU of one class, the curve fitted when it triggered (or the last
/// fit), and a marker at the trigger epoch.
pub fn fit_chart(names: &[String], rows: &[MetricsRow], class: u8) -> String {
    let label = class_label(names, class);
    let own: Vec<&MetricsRow> = rows.iter().filter(|r| r.class == Some(class)).collect();
    let trigger = own.iter().find_map(|r| r.trigger_epoch);
    let fit_row = trigger
        .and_then(|t| own.iter().find(|r| r.epoch == t && r.fit_a.is_some()))
        .or_else(|| own.iter().rev().find(|r| r.fit_a.is_some()));
    let observed: Vec<(f64, f64)> =
        own.iter().filter(|r| r.epoch >= 1).filter_map(|r| r.train_iou.map(|v| (r.epoch as f64, v))).collect();
    let mut series =
        vec![Series { label: "training IoU".into(), color: color(0), dashed: false, dots: true, points: observed.clone() }];
    if let Some(r) = fit_row {
        let (a, b, c) = (r.fit_a.unwrap(), r.fit_b.unwrap_or(0.0), r.fit_c.unwrap_or(1.0));
        let t_max = observed.last().map(|p| p.0).unwrap_or(1.0).max(1.0);
        let steps = 100;
        let pts = (0..=steps)
            .map(|i| {
                let t = 1.0 + (t_max - 1.0) * i as f64 / steps as f64;
                (t, curve_value(a, b, c, t))
            })
            .collect();
        series.push(Series { label: format!("fit at epoch {}", r.epoch), color: color(1), dashed: false, dots: false, points: pts });
    }
    let markers = trigger
        .map(|t| vec![Marker { x: t as f64, label: format!("trigger {t}"), color: "#444444" }])
        .unwrap_or_default();
    Chart {
        title: format!("Training IoU fit: {label}"),
        x_label: "epoch".into(),
        y_label: "IoU vs original annotations".into(),
        y_range: Some((0.0, 1.0)),
        series,
        markers,
    }
    .render()
}

/// Mean IoU of the working annotations against the clean masks.
pub fn label_quality_chart(rows: &[MetricsRow]) -> String {
    let pts = series_of(rows, None, |r| r.label_quality);
    Chart {
        title: "Annotation quality".into(),
        x_label: "epoch".into(),
        y_label: "mIoU of working annotations".into(),
        y_range: Some((0.0, 1.0)),
        series: vec![Series { label: "label quality".into(), color: color(2), dashed: false, dots: false, points: pts }],
        markers: Vec::new(),
    }
    .render()
}

/// One row of a noise sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: usize,
    pub annotation_miou: f64,
    pub baseline_test_miou: f64,
    pub adele_test_miou: f64,
    pub baseline_final_iou_m: Option<f64>,
    pub adele_final_iou_m: Option<f64>,
}

impl SweepRow {
    pub fn gap(&self) -> f64 {
        self.adele_test_miou - self.baseline_test_miou
    }
}

impl From<&SweepPoint> for SweepRow {
    fn from(p: &SweepPoint) -> Self {
        SweepRow {
            level: p.level,
            annotation_miou: p.annotation_miou,
            baseline_test_miou: p.baseline.summary.last_epoch_test_miou,
            adele_test_miou: p.adele.summary.last_epoch_test_miou,
            baseline_final_iou_m: p.baseline.summary.final_iou_m,
            adele_final_iou_m: p.adele.summary.final_iou_m,
        }
    }
}

pub const SWEEP_COLUMNS: [&str; 7] = [
    "level",
    "annotation_miou",
    "baseline_test_miou",
    "adele_test_miou",
    "gap",
    "baseline_final_iou_m",
    "adele_final_iou_m",
];

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut s = SWEEP_COLUMNS.join(",");
    s.push('\n');
    let o = |v: Option<f64>| v.map(fmt_sig6).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.level,
            fmt_sig6(r.annotation_miou),
            fmt_sig6(r.baseline_test_miou),
            fmt_sig6(r.adele_test_miou),
            fmt_sig6(r.gap()),
            o(r.baseline_final_iou_m),
            o(r.adele_final_iou_m)
        );
    }
    s
}

/// Test mIoU of both arms against the annotation quality of each level.
pub fn sweep_chart(rows: &[SweepRow]) -> String {
    let arm = |f: fn(&SweepRow) -> f64| rows.iter().map(|r| (r.annotation_miou, f(r))).collect::<Vec<_>>();
    Chart {
        title: "Noise sweep".into(),
        x_label: "annotation mIoU".into(),
        y_label: "test mIoU (last epoch)".into(),
        y_range: Some((0.0, 1.0)),
        series: vec![
            Series { label: "baseline".into(), color: color(0), dashed: true, dots: true, points: arm(|r| r.baseline_test_miou) },
            Series { label: "ADELE".into(), color: color(1), dashed: false, dots: true, points: arm(|r| r.adele_test_miou) },
        ],
        markers: Vec::new(),
    }
    .render()
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect()
}

/// Writes `metrics.csv`, `memorization.svg`, `label_quality.svg` and one
/// `fit_<class>.svg` per class into `dir`, returning the paths written.
pub fn write_report(names: &[String], rows: &[MetricsRow], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::invalid("cannot report on a run without metrics rows"));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut files = vec![
        (dir.join("metrics.csv"), metrics_to_csv(rows)?),
        (dir.join("memorization.svg"), memorization_chart(names, rows)),
        (dir.join("label_quality.svg"), label_quality_chart(rows)),
    ];
    for c in classes_in(rows) {
        let stem = format!("fit_{c}_{}", file_stem(&class_label(names, c)));
        files.push((dir.join(format!("{stem}.svg")), fit_chart(names, rows, c)));
    }
    for (p, body) in &files {
        write_file(p, body.as_bytes())?;
    }
    Ok(files.into_iter().map(|f| f.0).collect())
}

/// Writes `sweep.csv` and `sweep.svg` into `dir`.
pub fn write_sweep_report(rows: &[SweepRow], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::invalid("cannot report on an empty sweep"));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let files = [(dir.join("sweep.csv"), sweep_to_csv(rows)), (dir.join("sweep.svg"), sweep_chart(rows))];
    for (p, body) in &files {
        write_file(p, body.as_bytes())?;
    }
    Ok(files.into_iter().map(|f| f.0).collect())
}
