//! Dependency-free SVG plots. Output is a pure function of the input, so identical records give
//! byte-identical files.

use std::fmt::Write as _;

use pgrl_core::metrics::{LossGroups, Quantiles};
use pgrl_core::train::Mode;

use crate::run::RunRecord;

const W: f64 = 720.0;
const H: f64 = 360.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 40.0;

const GROUP_COLORS: [(&str, &str); 3] = [("benign", "#4c72b0"), ("poisoned", "#c44e52"), ("cover", "#55a868")];

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="16" text-anchor="middle" font-size="13">{title}</text>"#, W / 2.0);
    s
}

fn axes(s: &mut String, x_label: &str, y_label: &str, y_max: f64) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = y0 - (y0 - y1) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{y:.1}" x2="{x0}" y2="{y:.1}" stroke="black"/>"#, x0 - 4.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, x0 - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text>"#, (x0 + x1) / 2.0, H - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{y_label}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
}

fn legend(s: &mut String, entries: &[(&str, &str)]) {
    let x = W - RIGHT + 16.0;
    for (i, (name, color)) in entries.iter().enumerate() {
        let y = TOP + 12.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}">{name}</text>"#, x + 16.0);
    }
}

/// Box plot of per-epoch training loss by provenance group; `None` without any quantiles.
pub fn loss_boxplot(groups: &[LossGroups]) -> Option<String> {
    let per_epoch: Vec<(usize, [Option<Quantiles>; 3])> =
        groups.iter().map(|g| (g.epoch, [g.benign, g.poisoned, g.cover])).collect();
    let y_max = per_epoch.iter().flat_map(|(_, q)| q.iter().flatten()).map(|q| q.max).fold(f64::NEG_INFINITY, f64::max);
    if !y_max.is_finite() {
        return None;
    }
    let y_max = if y_max > 0.0 { y_max * 1.05 } else { 1.0 };
    let mut s = header("Training loss by sample group");
    axes(&mut s, "epoch", "cross entropy", y_max);
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let slot = (x1 - x0) / per_epoch.len() as f64;
    let box_w = (slot / 4.0).min(14.0);
    let y = |v: f64| y0 - (y0 - y1) * (v / y_max).clamp(0.0, 1.0);
    for (e, (epoch, qs)) in per_epoch.iter().enumerate() {
        let center = x0 + slot * (e as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="{center:.1}" y="{:.1}" text-anchor="middle">{epoch}</text>"#, y0 + 14.0);
        let present: Vec<(usize, &Quantiles)> = qs.iter().enumerate().filter_map(|(g, q)| q.as_ref().map(|q| (g, q))).collect();
        let n = present.len() as f64;
        for (k, (g, q)) in present.iter().enumerate() {
            let cx = center + (k as f64 - (n - 1.0) / 2.0) * (box_w + 2.0);
            let color = GROUP_COLORS[*g].1;
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="{color}"/>"#,
                y(q.min),
                y(q.max)
            );
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{box_w:.1}" height="{:.1}" fill="{color}" fill-opacity="0.35" stroke="{color}"/>"#,
                cx - box_w / 2.0,
                y(q.q3),
                (y(q.q1) - y(q.q3)).max(0.5)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/>"#,
                cx - box_w / 2.0,
                y(q.median),
                cx + box_w / 2.0,
                y(q.median)
            );
        }
    }
    legend(&mut s, &GROUP_COLORS);
    s.push_str("</svg>\n");
    Some(s)
}

fn mode_color(m: Mode) -> &'static str {
    match m {
        Mode::Pgrl => "#c44e52",
        Mode::LcvOnly => "#8172b2",
        Mode::WceOnly => "#dd8452",
        Mode::Naive => "#4c72b0",
        Mode::FpfIsolation => "#55a868",
    }
}

/// ACC (vertical) against ASR (horizontal), one point per record, colored by defense mode.
pub fn acc_asr_scatter(records: &[RunRecord]) -> Option<String> {
    if records.is_empty() {
        return None;
    }
    let mut s = header("Accuracy vs attack success rate");
    axes(&mut s, "ASR", "ACC", 1.0);
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    for i in 0..=4 {
        let x = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{:.2}</text>"#, y0 + 14.0, i as f64 / 4.0);
    }
    for r in records {
        let m = r.point.train.mode;
        let cx = x0 + (x1 - x0) * r.metrics.asr.clamp(0.0, 1.0);
        let cy = y0 - (y0 - y1) * r.metrics.acc.clamp(0.0, 1.0);
        let _ = writeln!(
            s,
            r#"<circle cx="{cx:.1}" cy="{cy:.1}" r="4" fill="{}" fill-opacity="0.8"><title>{} seed {} acc {:.3} asr {:.3}</title></circle>"#,
            mode_color(m),
            m.as_str(),
            r.seed,
            r.metrics.acc,
            r.metrics.asr
        );
    }
    let mut modes: Vec<Mode> = Vec::new();
    for r in records {
        if !modes.contains(&r.point.train.mode) {
            modes.push(r.point.train.mode);
        }
    }
    modes.sort_by_key(|m| Mode::ALL.iter().position(|x| x == m));
    let entries: Vec<(&str, &str)> = modes.iter().map(|&m| (m.as_str(), mode_color(m))).collect();
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    Some(s)
}
