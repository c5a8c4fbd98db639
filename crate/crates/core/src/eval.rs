//! Match detections to ground truth at an IOU threshold, sweep confidence
//! thresholds, compute average precision, and emit PR tables and plots.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::labels::{LabeledObject, MergedClass};
use crate::stitch::SceneDetections;

/// Outcome of matching one scene's detections against its truths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// `(detection index, truth index)` pairs into the caller's slices.
    pub pairs: Vec<(usize, usize)>,
}

/// A detection reduced to what matching needs: class, confidence, box.
pub type ClassedDetection = (MergedClass, f64, BBox);
/// A truth reduced to class and box.
pub type ClassedTruth = (MergedClass, BBox);

/// Greedy confidence-ordered matching.
///
/// Detections are processed in descending confidence (ties keep input
/// order); each claims the unmatched same-class truth with the highest IOU
/// when that IOU reaches the threshold, ties on IOU going to the lowest
/// truth index. Every truth is claimed at most once; unmatched detections
/// are false positives, unmatched truths false negatives.
pub fn match_boxes(
    detections: &[ClassedDetection],
    truths: &[ClassedTruth],
    iou_threshold: f64,
) -> MatchCounts {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].1.total_cmp(&detections[a].1));

    let mut claimed = vec![false; truths.len()];
    let mut pairs = Vec::new();
    for det_index in order {
        let (class, _, ref bbox) = detections[det_index];
        let mut best: Option<(usize, f64)> = None;
        for (truth_index, (truth_class, truth_box)) in truths.iter().enumerate() {
            if *truth_class != class || claimed[truth_index] {
                continue;
            }
            let overlap = iou(bbox, truth_box);
            if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((truth_index, overlap));
            }
        }
        if let Some((truth_index, _)) = best {
            claimed[truth_index] = true;
            pairs.push((det_index, truth_index));
        }
    }
    pairs.sort_unstable();
    MatchCounts {
        true_positives: pairs.len(),
        false_positives: detections.len() - pairs.len(),
        false_negatives: truths.len() - pairs.len(),
        pairs,
    }
}

/// [`match_boxes`] over scene types.
pub fn match_detections(
    detections: &SceneDetections,
    truths: &[LabeledObject],
    iou_threshold: f64,
) -> MatchCounts {
    let dets: Vec<ClassedDetection> = detections
        .detections
        .iter()
        .map(|d| (d.class, d.confidence, d.bbox))
        .collect();
    let gts: Vec<ClassedTruth> = truths.iter().map(|t| (t.class, t.bbox)).collect();
    match_boxes(&dets, &gts, iou_threshold)
}

/// One point of the confidence sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// The default sweep grid: 0.01 to 0.90 in steps of 0.01 (90 points).
pub fn default_threshold_grid() -> Vec<f64> {
    (1..=90).map(|i| f64::from(i) / 100.0).collect()
}

fn validate_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::BadThresholdGrid {
            reason: "empty grid".into(),
        });
    }
    for pair in thresholds.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::BadThresholdGrid {
                reason: format!("not strictly increasing at {} -> {}", pair[0], pair[1]),
            });
        }
    }
    if thresholds.iter().any(|t| !(0.0 < *t && *t < 1.0)) {
        return Err(Error::BadThresholdGrid {
            reason: "thresholds must lie in (0, 1)".into(),
        });
    }
    Ok(())
}

/// Sweep confidence thresholds for one class across scenes.
///
/// At each threshold `t` matching runs on the subset of detections with
/// confidence >= `t`; counts aggregate over scenes. Precision is defined as
/// 1.0 when nothing is predicted, keeping curves total functions of the
/// threshold.
pub fn sweep_pr(
    samples: &[(&SceneDetections, &[LabeledObject])],
    class: MergedClass,
    thresholds: &[f64],
    iou_threshold: f64,
) -> Result<Vec<PRPoint>> {
    validate_thresholds(thresholds)?;
    let per_scene: Vec<(Vec<ClassedDetection>, Vec<ClassedTruth>)> = samples
        .iter()
        .map(|(dets, truths)| {
            (
                dets.detections
                    .iter()
                    .filter(|d| d.class == class)
                    .map(|d| (d.class, d.confidence, d.bbox))
                    .collect(),
                truths
                    .iter()
                    .filter(|t| t.class == class)
                    .map(|t| (t.class, t.bbox))
                    .collect(),
            )
        })
        .collect();

    let mut points = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (dets, truths) in &per_scene {
            let surviving: Vec<ClassedDetection> = dets
                .iter()
                .filter(|(_, conf, _)| *conf >= threshold)
                .cloned()
                .collect();
            let counts = match_boxes(&surviving, truths, iou_threshold);
            tp += counts.true_positives;
            fp += counts.false_positives;
            fn_ += counts.false_negatives;
        }
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        points.push(PRPoint {
            threshold,
            precision,
            recall,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
        });
    }
    Ok(points)
}

/// Trapezoidal area under the precision-recall polyline.
///
/// Points are sorted by recall ascending and anchored at
/// `(0, precision of the lowest-recall point)`.
pub fn average_precision(points: &[PRPoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyPrCurve);
    }
    let mut curve: Vec<(f64, f64)> = points.iter().map(|p| (p.recall, p.precision)).collect();
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    let anchor = (0.0, curve[0].1);
    let mut area = 0.0;
    let mut prev = anchor;
    for &(recall, precision) in &curve {
        area += (recall - prev.0) * (precision + prev.1) / 2.0;
        prev = (recall, precision);
    }
    Ok(area)
}

/// Per-class sweep results and AP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: MergedClass,
    pub average_precision: f64,
    pub truth_count: usize,
    pub detection_count: usize,
    pub points: Vec<PRPoint>,
}

/// PR points across the confidence sweep plus the resulting AP per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub scene_count: usize,
    pub detection_count: usize,
    pub truth_count: usize,
    pub classes: Vec<ClassReport>,
}

impl EvalReport {
    pub fn class(&self, class: MergedClass) -> Option<&ClassReport> {
        self.classes.iter().find(|c| c.class == class)
    }

    pub fn ap(&self, class: MergedClass) -> Option<f64> {
        self.class(class).map(|c| c.average_precision)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Evaluate detections against truths for every class present in either.
pub fn evaluate(
    samples: &[(&SceneDetections, &[LabeledObject])],
    thresholds: &[f64],
    iou_threshold: f64,
) -> Result<EvalReport> {
    let mut classes: BTreeSet<MergedClass> = BTreeSet::new();
    for (dets, truths) in samples {
        classes.extend(dets.detections.iter().map(|d| d.class));
        classes.extend(truths.iter().map(|t| t.class));
    }
    let mut reports = Vec::new();
    for class in classes {
        let points = sweep_pr(samples, class, thresholds, iou_threshold)?;
        let average_precision = average_precision(&points)?;
        reports.push(ClassReport {
            class,
            average_precision,
            truth_count: samples
                .iter()
                .map(|(_, t)| t.iter().filter(|o| o.class == class).count())
                .sum(),
            detection_count: samples
                .iter()
                .map(|(d, _)| d.detections.iter().filter(|o| o.class == class).count())
                .sum(),
            points,
        });
    }
    Ok(EvalReport {
        iou_threshold,
        scene_count: samples.len(),
        detection_count: samples.iter().map(|(d, _)| d.detections.len()).sum(),
        truth_count: samples.iter().map(|(_, t)| t.len()).sum(),
        classes: reports,
    })
}

// ---- report files ----

/// PR table rows: `class,threshold,tp,fp,fn,precision,recall`.
pub fn pr_table_csv(report: &EvalReport) -> String {
    let mut s = String::from("class,threshold,tp,fp,fn,precision,recall\n");
    for class_report in &report.classes {
        for p in &class_report.points {
            s.push_str(&format!(
                "{},{:.4},{},{},{},{:.6},{:.6}\n",
                class_report.class,
                p.threshold,
                p.true_positives,
                p.false_positives,
                p.false_negatives,
                p.precision,
                p.recall
            ));
        }
    }
    s
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_B: f64 = 60.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_R: f64 = 30.0;
const CURVE_COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn plot_x(recall: f64) -> f64 {
    MARGIN_L + recall * (PLOT_W - MARGIN_L - MARGIN_R)
}

fn plot_y(precision: f64) -> f64 {
    PLOT_H - MARGIN_B - precision * (PLOT_H - MARGIN_T - MARGIN_B)
}

/// Render one or more labeled PR curves into a standalone SVG.
pub fn pr_curve_svg(title: &str, curves: &[(String, &[PRPoint])]) -> String {
    let mut svg = String::new();
    svg.push_str(&format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_W}" height="{PLOT_H}" viewBox="0 0 {PLOT_W} {PLOT_H}">"#
    ));
    svg.push('\n');
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    svg.push('\n');
    svg.push_str(&format!(
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>"#,
        PLOT_W / 2.0
    ));
    svg.push('\n');

    // axes and grid
    for i in 0..=5 {
        let v = f64::from(i) / 5.0;
        let x = plot_x(v);
        let y = plot_y(v);
        svg.push_str(&format!(
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#dddddd"/>"##,
            plot_y(0.0),
            plot_y(1.0)
        ));
        svg.push_str(&format!(
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
            plot_x(0.0),
            plot_x(1.0)
        ));
        svg.push_str(&format!(
            r#"<text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{v:.1}</text>"#,
            plot_y(0.0) + 18.0
        ));
        svg.push_str(&format!(
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.1}</text>"#,
            plot_x(0.0) - 8.0,
            y + 4.0
        ));
        svg.push('\n');
    }
    svg.push_str(&format!(
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        plot_x(0.0),
        plot_y(0.0),
        plot_x(1.0),
        plot_y(0.0)
    ));
    svg.push_str(&format!(
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        plot_x(0.0),
        plot_y(0.0),
        plot_x(0.0),
        plot_y(1.0)
    ));
    svg.push('\n');
    svg.push_str(&format!(
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">recall</text>"#,
        (plot_x(0.0) + plot_x(1.0)) / 2.0,
        PLOT_H - 14.0
    ));
    svg.push_str(&format!(
        r#"<text x="18" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {})">precision</text>"#,
        (plot_y(0.0) + plot_y(1.0)) / 2.0,
        (plot_y(0.0) + plot_y(1.0)) / 2.0
    ));
    svg.push('\n');

    for (index, (label, points)) in curves.iter().enumerate() {
        let color = CURVE_COLORS[index % CURVE_COLORS.len()];
        let mut sorted: Vec<(f64, f64)> = points.iter().map(|p| (p.recall, p.precision)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = sorted
            .iter()
            .map(|(r, p)| format!("{:.2},{:.2}", plot_x(*r), plot_y(*p)))
            .collect();
        if !path.is_empty() {
            svg.push_str(&format!(
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                path.join(" ")
            ));
            svg.push('\n');
        }
        let legend_y = MARGIN_T + 16.0 * index as f64;
        svg.push_str(&format!(
            r#"<line x1="{:.1}" y1="{legend_y:.1}" x2="{:.1}" y2="{legend_y:.1}" stroke="{color}" stroke-width="3"/>"#,
            plot_x(0.0) + 10.0,
            plot_x(0.0) + 34.0
        ));
        svg.push_str(&format!(
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{label}</text>"#,
            plot_x(0.0) + 40.0,
            legend_y + 4.0
        ));
        svg.push('\n');
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write the PR table, a per-class curve plot, and the JSON summary.
///
/// Produces `pr_table.csv`, `report.json`, and one `pr_<class>.svg` per
/// class; returns the written paths.
pub fn write_report(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    let csv_path = out_dir.join("pr_table.csv");
    std::fs::write(&csv_path, pr_table_csv(report)).map_err(|e| Error::io(&csv_path, e))?;
    written.push(csv_path);

    let json_path = out_dir.join("report.json");
    std::fs::write(&json_path, report.to_json()).map_err(|e| Error::io(&json_path, e))?;
    written.push(json_path);

    for class_report in &report.classes {
        let title = format!(
            "{} (AP {:.4})",
            class_report.class, class_report.average_precision
        );
        let svg = pr_curve_svg(
            &title,
            &[(class_report.class.to_string(), class_report.points.as_slice())],
        );
        let path = out_dir.join(format!("pr_{}.svg", class_report.class));
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Overlay the same class's curves from several labeled reports, mirroring a
/// side-by-side method comparison.
pub fn write_comparison_plot(
    path: &Path,
    class: MergedClass,
    reports: &[(String, &EvalReport)],
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let curves: Vec<(String, &[PRPoint])> = reports
        .iter()
        .filter_map(|(label, report)| {
            report
                .class(class)
                .map(|c| (format!("{label} (AP {:.4})", c.average_precision), c.points.as_slice()))
        })
        .collect();
    let svg = pr_curve_svg(&format!("{class} PR comparison"), &curves);
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
