//! Deterministic SVG figures: the grouped-bar ablation chart and the
//! four-panel prediction trace.

use std::fmt::Write;

use handstate_core::model_state::ModelKind;
use handstate_core::types::{AlignedSample, FeatureSubset, Target, TargetPair, EMG_CHANNELS};
use handstate_core::Scalar;
use handstate_eval::{Cell, Metric};

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_T: f64 = 36.0;
const GAP: f64 = 40.0;

const SUBSET_COLORS: [(FeatureSubset, &str); 3] = [
    (FeatureSubset::Full, "#1f77b4"),
    (FeatureSubset::ExoOnly, "#ff7f0e"),
    (FeatureSubset::EmgOnly, "#2ca02c"),
];
const CHANNEL_COLORS: [&str; EMG_CHANNELS] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{w:.0}" height="{h:.0}" fill="white"/>"#);
}

/// Linear map from a data interval onto a pixel interval.
#[derive(Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    p0: f64,
    p1: f64,
}

impl Scale {
    fn at(&self, v: f64) -> f64 {
        let span = if self.hi > self.lo { self.hi - self.lo } else { 1.0 };
        self.p0 + (v - self.lo) / span * (self.p1 - self.p0)
    }
}

fn y_axis(out: &mut String, y: Scale, x0: f64, x1: f64, ticks: usize) {
    for i in 0..=ticks {
        let v = y.lo + (y.hi - y.lo) * i as f64 / ticks as f64;
        let py = y.at(v);
        let _ = writeln!(
            out,
            r##"<line x1="{x0:.1}" y1="{py:.1}" x2="{x1:.1}" y2="{py:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            x0 - 4.0,
            py + 4.0
        );
    }
}

fn round_out(lo: f64, hi: f64, step: f64) -> (f64, f64) {
    ((lo / step).floor() * step, ((hi / step).ceil() * step).max((lo / step).floor() * step + step))
}

/// Grouped bars with interval whiskers: one panel per (metric, target),
/// metrics in rows and targets in columns, architectures along each axis
/// and one colour per feature subset.
pub fn ablation_figure(cells: &[Cell]) -> String {
    let mut archs: Vec<ModelKind> = Vec::new();
    for c in cells {
        if !archs.contains(&c.architecture) {
            archs.push(c.architecture);
        }
    }
    let w = MARGIN_L + 2.0 * PANEL_W + GAP + 20.0;
    let h = MARGIN_T + 2.0 * PANEL_H + GAP + 50.0;
    let mut out = String::new();
    header(&mut out, w, h);
    for (row, metric) in Metric::ALL.into_iter().enumerate() {
        let in_metric: Vec<&Cell> = cells.iter().filter(|c| c.metric == metric).collect();
        let lo = in_metric
            .iter()
            .map(|c| c.ci_low.unwrap_or(c.mean).min(c.mean))
            .fold(0.0, f64::min);
        let hi = in_metric
            .iter()
            .map(|c| c.ci_high.unwrap_or(c.mean).max(c.mean))
            .fold(if metric == Metric::R2 { 1.0 } else { 0.0 }, f64::max);
        let (lo, hi) = round_out(lo, hi, 0.25);
        for (col, target) in Target::ALL.into_iter().enumerate() {
            let x0 = MARGIN_L + col as f64 * (PANEL_W + GAP);
            let y0 = MARGIN_T + row as f64 * (PANEL_H + GAP);
            let y = Scale {
                lo,
                hi,
                p0: y0 + PANEL_H,
                p1: y0,
            };
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-weight="bold">{} {}</text>"#,
                x0 + PANEL_W / 2.0,
                y0 - 10.0,
                metric.name(),
                target.name()
            );
            y_axis(&mut out, y, x0, x0 + PANEL_W, 4);
            let zero = y.at(0.0_f64.clamp(lo, hi));
            let group = PANEL_W / archs.len().max(1) as f64;
            let bar = group * 0.8 / SUBSET_COLORS.len() as f64;
            for (g, arch) in archs.iter().enumerate() {
                let gx = x0 + g as f64 * group + group * 0.1;
                let _ = writeln!(
                    out,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{arch}</text>"#,
                    x0 + (g as f64 + 0.5) * group,
                    y0 + PANEL_H + 14.0
                );
                for (s, (subset, color)) in SUBSET_COLORS.iter().enumerate() {
                    let Some(c) = in_metric
                        .iter()
                        .find(|c| c.architecture == *arch && c.subset == *subset && c.target == target)
                    else {
                        continue;
                    };
                    let bx = gx + s as f64 * bar;
                    let top = y.at(c.mean.clamp(lo, hi));
                    let _ = writeln!(
                        out,
                        r#"<rect x="{bx:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}"/>"#,
                        top.min(zero),
                        bar * 0.9,
                        (zero - top).abs()
                    );
                    if let (Some(a), Some(b)) = (c.ci_low, c.ci_high) {
                        let cx = bx + bar * 0.45;
                        let (ya, yb) = (y.at(a.clamp(lo, hi)), y.at(b.clamp(lo, hi)));
                        let _ = writeln!(
                            out,
                            r#"<path d="M{cx:.1} {ya:.1}V{yb:.1}M{:.1} {ya:.1}H{:.1}M{:.1} {yb:.1}H{:.1}" stroke="black" fill="none"/>"#,
                            cx - 3.0,
                            cx + 3.0,
                            cx - 3.0,
                            cx + 3.0
                        );
                    }
                }
            }
        }
    }
    let ly = h - 20.0;
    for (i, (subset, color)) in SUBSET_COLORS.iter().enumerate() {
        let lx = MARGIN_L + i as f64 * 110.0;
        let _ = writeln!(
            out,
            r#"<rect x="{lx:.1}" y="{:.1}" width="12" height="12" fill="{color}"/><text x="{:.1}" y="{ly:.1}">{subset}</text>"#,
            ly - 10.0,
            lx + 16.0
        );
    }
    out.push_str("</svg>\n");
    out
}

fn polyline(out: &mut String, xs: &[f64], ys: &[f64], x: Scale, y: Scale, color: &str, dash: bool) {
    let mut d = String::new();
    for (i, (a, b)) in xs.iter().zip(ys).enumerate() {
        let _ = write!(d, "{}{:.1} {:.1}", if i == 0 { "M" } else { "L" }, x.at(*a), y.at(*b));
    }
    let dash = if dash { r#" stroke-dasharray="4 2""# } else { "" };
    let _ = writeln!(out, r#"<path d="{d}" stroke="{color}" fill="none" stroke-width="1"{dash}/>"#);
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

/// Four stacked panels over time: EMG channels, exoskeleton features,
/// opening degree and compliance, the last two with the prediction
/// (solid) over the ground truth (dashed).
pub fn trace_figure<T: Scalar>(samples: &[AlignedSample<T>], predictions: &[(T, TargetPair<T>)]) -> String {
    let w = MARGIN_L + 2.0 * PANEL_W + 20.0;
    let panel_h = PANEL_H * 0.75;
    let h = MARGIN_T + 4.0 * (panel_h + GAP);
    let mut out = String::new();
    header(&mut out, w, h);
    let ts: Vec<f64> = samples.iter().map(|s| s.t.as_f64()).collect();
    let pt: Vec<f64> = predictions.iter().map(|p| p.0.as_f64()).collect();
    let (t0, t1) = range(ts.iter().chain(&pt).copied());
    let x = Scale {
        lo: t0,
        hi: t1,
        p0: MARGIN_L,
        p1: MARGIN_L + 2.0 * PANEL_W,
    };
    let truth = |f: fn(&TargetPair<T>) -> T| -> (Vec<f64>, Vec<f64>) {
        samples
            .iter()
            .filter_map(|s| s.y.map(|y| (s.t.as_f64(), f(&y).as_f64())))
            .unzip()
    };
    let pred = |f: fn(&TargetPair<T>) -> T| -> Vec<f64> { predictions.iter().map(|p| f(&p.1).as_f64()).collect() };

    for panel in 0..4 {
        let y0 = MARGIN_T + panel as f64 * (panel_h + GAP);
        let mut lines: Vec<(Vec<f64>, Vec<f64>, &str, bool)> = Vec::new();
        let title = match panel {
            0 => {
                for (c, color) in CHANNEL_COLORS.iter().enumerate() {
                    lines.push((ts.clone(), samples.iter().map(|s| s.emg[c].as_f64()).collect(), color, false));
                }
                "EMG channels"
            }
            1 => {
                lines.push((ts.clone(), samples.iter().map(|s| s.exo[0].as_f64()).collect(), "#1f77b4", false));
                lines.push((ts.clone(), samples.iter().map(|s| s.exo[1].as_f64()).collect(), "#ff7f0e", false));
                "exoskeleton position, current"
            }
            2 => {
                let (tx, ty) = truth(|y| y.y_o);
                lines.push((tx, ty, "#555555", true));
                lines.push((pt.clone(), pred(|y| y.y_o), "#d62728", false));
                "opening degree y_o (rad)"
            }
            _ => {
                let (tx, ty) = truth(|y| y.y_c);
                lines.push((tx, ty, "#555555", true));
                lines.push((pt.clone(), pred(|y| y.y_c), "#d62728", false));
                "compliance y_c"
            }
        };
        let (lo, hi) = match panel {
            2 => (0.0, std::f64::consts::FRAC_PI_2),
            3 => (-1.0, 1.0),
            _ => range(lines.iter().flat_map(|l| l.1.iter().copied())),
        };
        let y = Scale {
            lo,
            hi,
            p0: y0 + panel_h,
            p1: y0,
        };
        let _ = writeln!(out, r#"<text x="{MARGIN_L:.1}" y="{:.1}" font-weight="bold">{title}</text>"#, y0 - 8.0);
        y_axis(&mut out, y, x.p0, x.p1, 2);
        for (xs, ys, color, dash) in &lines {
            polyline(&mut out, xs, ys, x, y, color, *dash);
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">time (s), {t0:.1} to {t1:.1}</text>"#,
        x.p0 + PANEL_W,
        h - 10.0
    );
    out.push_str("</svg>\n");
    out
}
