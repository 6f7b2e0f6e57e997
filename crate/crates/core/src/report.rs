//! CSV tables and SVG line charts for axis reports.
//!
//! Segment tables have rows `(1)`..`(4)` and the columns Recall, IoU and mIoU
//! with three decimals. Per-bin tables print values in shortest round-trip
//! form so they parse back to the exact metric. Undefined values print
//! `null`.

use std::fmt::Write as _;

use crate::metrics::{AxisBinReport, BinRow, SegmentReport};

fn cell(v: Option<f64>, fixed: bool) -> String {
    match v {
        None => "null".into(),
        Some(v) if fixed => format!("{v:.3}"),
        Some(v) => format!("{v:?}"),
    }
}

pub fn segment_csv(r: &SegmentReport) -> String {
    let mut s = String::from("segment,Recall,IoU,mIoU\n");
    for (k, row) in r.rows.iter().enumerate() {
        let m = &row.metrics;
        let _ = writeln!(s, "({}),{},{},{}", k + 1, cell(m.recall, true), cell(m.iou, true), cell(m.miou, true));
    }
    s
}

pub fn bin_csv(r: &AxisBinReport) -> String {
    let mut s = String::from("axis,bin,start,end,occupied_gt,recall,iou,miou\n");
    for (i, b) in r.bins.iter().enumerate() {
        let m = &b.metrics;
        let _ = writeln!(
            s,
            "{},{i},{},{},{},{},{},{}",
            r.axis.short_name(),
            b.start,
            b.end,
            b.occupied_gt_count,
            cell(m.recall, false),
            cell(m.iou, false),
            cell(m.miou, false)
        );
    }
    s
}

/// Divides a curve by its largest defined value (unchanged if that is 0).
pub fn max_normalize(curve: &[Option<f64>]) -> Vec<Option<f64>> {
    let max = curve.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    if max > 0.0 {
        curve.iter().map(|v| v.map(|v| v / max)).collect()
    } else {
        curve.to_vec()
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const SERIES: [(&str, &str); 3] = [("recall", "#1f77b4"), ("IoU", "#d62728"), ("mIoU", "#2ca02c")];

fn series(bins: &[BinRow]) -> [Vec<Option<f64>>; 3] {
    [
        bins.iter().map(|b| b.metrics.recall).collect(),
        bins.iter().map(|b| b.metrics.iou).collect(),
        bins.iter().map(|b| b.metrics.miou).collect(),
    ]
}

/// A line chart of recall, IoU and mIoU against bin index. Undefined bins
/// break the line. Output depends only on the report.
pub fn bin_chart_svg(r: &AxisBinReport, normalize: bool) -> String {
    let curves = series(&r.bins).map(|c| if normalize { max_normalize(&c) } else { c });
    let n = r.bins.len().max(1);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let px = |i: usize| MARGIN + if n > 1 { plot_w * i as f64 / (n - 1) as f64 } else { plot_w / 2.0 };
    let py = |v: f64| MARGIN + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{} axis, {} bins{}</text>"#,
        WIDTH / 2.0,
        r.axis,
        r.bins.len(),
        if normalize { " (max-normalized)" } else { "" }
    );
    let _ = writeln!(
        s,
        r#"<path d="M{m:.2} {m:.2} V{b:.2} H{r:.2}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for t in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="10">{t:.1}</text>"#,
            MARGIN - 6.0,
            py(t) + 3.0
        );
    }
    for (k, (name, color)) in SERIES.iter().enumerate() {
        let mut runs: Vec<Vec<String>> = vec![Vec::new()];
        for (i, v) in curves[k].iter().enumerate() {
            match v {
                Some(v) => runs.last_mut().unwrap().push(format!("{:.2},{:.2}", px(i), py(*v))),
                None => runs.push(Vec::new()),
            }
        }
        for run in runs.iter().filter(|r| !r.is_empty()) {
            if run.len() == 1 {
                let (x, y) = run[0].split_once(',').unwrap();
                let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="2" fill="{color}"/>"#);
            } else {
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    run.join(" ")
                );
            }
        }
        let ly = MARGIN + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{ly:.2}" font-family="sans-serif" font-size="11" fill="{color}">{name}</text>"#,
            WIDTH - MARGIN - 40.0
        );
    }
    s.push_str("</svg>\n");
    s
}
