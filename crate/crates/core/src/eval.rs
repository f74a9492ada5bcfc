//! Detection and grounding evaluation.
//!
//! Detection AP follows the usual benchmark recipe: per image and category,
//! predictions are visited by descending score and greedily matched to the
//! unmatched ground truth of highest IoU at or above the threshold. Matches
//! from all images are then ranked by score into one precision/recall curve
//! per category and threshold, whose interpolated area is the AP.
//!
//! Ground truths flagged `ignore` are matchable but uncounted: a prediction
//! that only overlaps ignored boxes is neither a true nor a false positive,
//! and ignored boxes do not add to the recall denominator. Ignored boxes can
//! absorb any number of predictions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom2d::{iou2d, Box2D};
use crate::geom3d::{iou3d, Box3D};

/// Overlap measure used for matching.
pub trait Overlap {
    fn overlap(&self, other: &Self) -> Result<f64>;
}

impl Overlap for Box2D {
    fn overlap(&self, other: &Self) -> Result<f64> {
        iou2d(self, other)
    }
}

impl Overlap for Box3D {
    fn overlap(&self, other: &Self) -> Result<f64> {
        iou3d(self, other)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection<B> {
    pub image_id: String,
    pub category: String,
    pub bbox: B,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth<B> {
    pub image_id: String,
    pub category: String,
    pub bbox: B,
    #[serde(default)]
    pub ignore: bool,
}

pub type Detection2D = Detection<Box2D>;
pub type Detection3D = Detection<Box3D>;
pub type GroundTruth2D = GroundTruth<Box2D>;
pub type GroundTruth3D = GroundTruth<Box3D>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApInterpolation {
    /// Mean interpolated precision at recall 0, 0.01, ..., 1.
    #[default]
    Point101,
    /// Area under the interpolated curve at every recall change.
    AllPoints,
}

/// IoU thresholds 0.05, 0.10, ..., 0.50.
pub fn default_thresholds() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 20.0).collect()
}

/// Parses `start:end:step` (inclusive) or a comma-separated list. Values
/// are snapped to 1e-9 so that `0.05:0.50:0.05` yields exact twentieths.
pub fn parse_thresholds(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidConfig(format!("bad threshold spec {spec:?}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let snap = |v: f64| (v * 1e9).round() / 1e9;
    let parts: Vec<&str> = spec.split(':').collect();
    let out = match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if !(step > 0.0 && b >= a) {
                return Err(bad());
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| snap(a + i as f64 * step)).collect()
        }
        [list] => list.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(bad()),
    };
    let cfg = EvalConfig {
        thresholds: out,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg.thresholds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub interpolation: ApInterpolation,
    /// Worker threads; 1 runs on the calling thread.
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: default_thresholds(),
            interpolation: ApInterpolation::default(),
            jobs: 1,
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::InvalidConfig("no IoU thresholds".into()));
        }
        if let Some(t) = self
            .thresholds
            .iter()
            .find(|t| !(t.is_finite() && **t >= 0.0 && **t <= 1.0))
        {
            return Err(Error::InvalidConfig(format!("IoU threshold {t} outside [0, 1]")));
        }
        Ok(())
    }
}

/// Outcome of matching one prediction at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchLabel {
    TruePositive,
    FalsePositive,
    /// Matched an ignored ground truth; excluded from the curve.
    Ignored,
}

/// Prediction indices by descending score; equal scores keep input order.
pub fn visit_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy matching over a precomputed `ious[pred][gt]` matrix.
///
/// Returns, per prediction (input order), the matched ground truth index.
fn match_with_ious(order: &[usize], ious: &[Vec<f64>], ignore: &[bool], threshold: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; ignore.len()];
    let mut out = vec![None; ious.len()];
    for &p in order {
        let row = &ious[p];
        let best = |want_ignored: bool, taken: &[bool]| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &iou) in row.iter().enumerate() {
                if ignore[g] != want_ignored || (!want_ignored && taken[g]) || iou < threshold {
                    continue;
                }
                if best.map_or(true, |(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            best.map(|(g, _)| g)
        };
        if let Some(g) = best(false, &taken) {
            taken[g] = true;
            out[p] = Some(g);
        } else if let Some(g) = best(true, &taken) {
            out[p] = Some(g);
        }
    }
    out
}

fn iou_matrix<B: Overlap>(preds: &[&B], gts: &[&B]) -> Vec<Vec<f64>> {
    preds
        .iter()
        .map(|p| {
            gts.iter()
                .map(|g| {
                    p.overlap(g).unwrap_or_else(|e| {
                        debug!("treating IoU as 0: {e}");
                        0.0
                    })
                })
                .collect()
        })
        .collect()
}

/// Greedy matching of one image/category group.
///
/// Predictions are visited by descending score (ties by input order); each
/// takes the unmatched, non-ignored ground truth of highest IoU (ties by
/// lowest index) if that IoU reaches `iou_threshold`, falling back to an
/// ignored ground truth. The result lists `(pred_index, gt_index)` in
/// prediction input order.
pub fn match_greedy<B: Overlap>(
    preds: &[Detection<B>],
    gts: &[GroundTruth<B>],
    iou_threshold: f64,
) -> Vec<(usize, Option<usize>)> {
    let pb: Vec<&B> = preds.iter().map(|p| &p.bbox).collect();
    let gb: Vec<&B> = gts.iter().map(|g| &g.bbox).collect();
    let ious = iou_matrix(&pb, &gb);
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let ignore: Vec<bool> = gts.iter().map(|g| g.ignore).collect();
    match_with_ious(&visit_order(&scores), &ious, &ignore, iou_threshold)
        .into_iter()
        .enumerate()
        .collect()
}

/// AP of one ranked list of true/false positives (best score first).
///
/// Returns `None` when there is nothing to measure: no ground truth and no
/// predictions. With no ground truth but some predictions the AP is 0.
pub fn average_precision(ranked_tp: &[bool], num_gt: usize, interp: ApInterpolation) -> Option<f64> {
    if num_gt == 0 {
        return if ranked_tp.is_empty() { None } else { Some(0.0) };
    }
    let n = ranked_tp.len();
    let mut recall = Vec::with_capacity(n);
    let mut precision = Vec::with_capacity(n);
    let mut tp = 0usize;
    for (i, &hit) in ranked_tp.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..n.saturating_sub(1)).rev() {
        if precision[i + 1] > precision[i] {
            precision[i] = precision[i + 1];
        }
    }
    let ap = match interp {
        ApInterpolation::Point101 => {
            let mut sum = 0.0;
            for k in 0..=100 {
                let r = k as f64 / 100.0;
                let i = recall.partition_point(|&x| x < r);
                if i < n {
                    sum += precision[i];
                }
            }
            sum / 101.0
        }
        ApInterpolation::AllPoints => {
            let mut prev = 0.0;
            let mut area = 0.0;
            for i in 0..n {
                if recall[i] > prev {
                    area += (recall[i] - prev) * precision[i];
                    prev = recall[i];
                }
            }
            area
        }
    };
    Some(ap)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    /// AP per threshold; `None` where undefined.
    pub ap: Vec<Option<f64>>,
    pub mean_ap: Option<f64>,
    pub num_gt: usize,
    pub num_pred: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: String,
    pub interpolation: ApInterpolation,
    pub thresholds: Vec<f64>,
    pub per_category: BTreeMap<String, CategoryReport>,
    /// Mean over categories with a defined AP, per threshold.
    pub per_threshold: Vec<Option<f64>>,
    /// Mean of `per_threshold`.
    pub map: Option<f64>,
    /// Per-threshold mean at IoU 0.15, when that threshold is evaluated.
    pub ap15: Option<f64>,
    pub counts: Vec<Counts>,
    /// Categories predicted but absent from the ground truth; their
    /// predictions all count as false positives.
    pub categories_without_gt: Vec<String>,
    pub num_images: usize,
}

fn mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    /// Machine-readable form shared by the command line and the C interface.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text summary: one row per category plus the overall row.
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("   -  ".to_string(), |x| format!("{x:6.3}"));
        let width = self
            .per_category
            .keys()
            .map(|k| k.chars().count())
            .max()
            .unwrap_or(0)
            .max(8);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} detection AP ({} thresholds {}..{}, {:?})",
            self.kind.to_uppercase(),
            self.thresholds.len(),
            self.thresholds.first().copied().unwrap_or_default(),
            self.thresholds.last().copied().unwrap_or_default(),
            self.interpolation
        );
        let _ = writeln!(
            s,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}",
            "category", "AP15", "mAP", "#gt", "#pred"
        );
        let i15 = self.thresholds.iter().position(|t| is_015(*t));
        for (name, c) in &self.per_category {
            let ap15 = i15.and_then(|i| c.ap[i]);
            let _ = writeln!(
                s,
                "{name:<width$}  {}  {}  {:>6}  {:>6}",
                fmt(ap15),
                fmt(c.mean_ap),
                c.num_gt,
                c.num_pred
            );
        }
        let _ = writeln!(s, "{:<width$}  {}  {}", "overall", fmt(self.ap15), fmt(self.map));
        for (t, (ap, c)) in self.thresholds.iter().zip(self.per_threshold.iter().zip(&self.counts)) {
            let _ = writeln!(
                s,
                "  IoU>={t:.2}  AP {}  TP {} FP {} FN {}",
                fmt(*ap),
                c.tp,
                c.fp,
                c.fn_
            );
        }
        if !self.categories_without_gt.is_empty() {
            let _ = writeln!(
                s,
                "categories without ground truth: {}",
                self.categories_without_gt.join(", ")
            );
        }
        s
    }
}

fn is_015(t: f64) -> bool {
    (t - 0.15).abs() < 1e-9
}

struct GroupResult {
    category: String,
    /// Scores in visit order.
    scores: Vec<f64>,
    /// `labels[t][k]` for the k-th visited prediction at threshold t.
    labels: Vec<Vec<MatchLabel>>,
    num_gt: usize,
}

fn evaluate_group<B: Overlap>(
    category: &str,
    preds: &[&Detection<B>],
    gts: &[&GroundTruth<B>],
    thresholds: &[f64],
) -> GroupResult {
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let order = visit_order(&scores);
    let pb: Vec<&B> = preds.iter().map(|p| &p.bbox).collect();
    let gb: Vec<&B> = gts.iter().map(|g| &g.bbox).collect();
    let ious = iou_matrix(&pb, &gb);
    let ignore: Vec<bool> = gts.iter().map(|g| g.ignore).collect();
    let labels = thresholds
        .iter()
        .map(|&t| {
            let m = match_with_ious(&order, &ious, &ignore, t);
            order
                .iter()
                .map(|&p| match m[p] {
                    Some(g) if ignore[g] => MatchLabel::Ignored,
                    Some(_) => MatchLabel::TruePositive,
                    None => MatchLabel::FalsePositive,
                })
                .collect()
        })
        .collect();
    GroupResult {
        category: category.to_string(),
        scores: order.iter().map(|&p| scores[p]).collect(),
        labels,
        num_gt: ignore.iter().filter(|i| !**i).count(),
    }
}

fn run_parallel<T: Send, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> T + Sync + Send,
{
    if jobs <= 1 {
        return Ok((0..n).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

/// Detection AP over a dataset for any box type with an overlap measure.
pub fn evaluate<B: Overlap + Sync>(
    kind: &str,
    preds: &[Detection<B>],
    gts: &[GroundTruth<B>],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    if let Some(p) = preds.iter().find(|p| !p.score.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "non-finite score for image {} category {}",
            p.image_id, p.category
        )));
    }

    type Group<'a, B> = (Vec<&'a Detection<B>>, Vec<&'a GroundTruth<B>>);
    let mut groups: BTreeMap<(&str, &str), Group<'_, B>> = BTreeMap::new();
    for p in preds {
        groups
            .entry((p.category.as_str(), p.image_id.as_str()))
            .or_default()
            .0
            .push(p);
    }
    for g in gts {
        groups
            .entry((g.category.as_str(), g.image_id.as_str()))
            .or_default()
            .1
            .push(g);
    }
    let keyed: Vec<(&(&str, &str), &Group<'_, B>)> = groups.iter().collect();
    let thresholds = &config.thresholds;
    let results = run_parallel(config.jobs, keyed.len(), |i| {
        let ((category, _), (p, g)) = keyed[i];
        evaluate_group(category, p, g, thresholds)
    })?;

    // Groups arrive sorted by (category, image); a stable sort by score
    // therefore breaks ties by image id, then by rank within the image.
    let mut by_category: BTreeMap<&str, Vec<&GroupResult>> = BTreeMap::new();
    for r in &results {
        by_category.entry(r.category.as_str()).or_default().push(r);
    }
    let gt_categories: std::collections::BTreeSet<&str> = gts.iter().map(|g| g.category.as_str()).collect();

    let nt = thresholds.len();
    let mut counts = vec![Counts::default(); nt];
    let mut per_category = BTreeMap::new();
    let mut without_gt = Vec::new();
    for (category, group_results) in by_category {
        let num_gt: usize = group_results.iter().map(|g| g.num_gt).sum();
        let mut ranked: Vec<(f64, usize, usize)> = group_results
            .iter()
            .enumerate()
            .flat_map(|(gi, g)| g.scores.iter().enumerate().map(move |(k, &s)| (s, gi, k)))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        let ap: Vec<Option<f64>> = (0..nt)
            .map(|t| {
                let flags: Vec<bool> = ranked
                    .iter()
                    .filter_map(|&(_, gi, k)| match group_results[gi].labels[t][k] {
                        MatchLabel::TruePositive => Some(true),
                        MatchLabel::FalsePositive => Some(false),
                        MatchLabel::Ignored => None,
                    })
                    .collect();
                let tp = flags.iter().filter(|f| **f).count();
                counts[t].tp += tp;
                counts[t].fp += flags.len() - tp;
                counts[t].fn_ += num_gt - tp;
                average_precision(&flags, num_gt, config.interpolation)
            })
            .collect();
        if !gt_categories.contains(category) {
            without_gt.push(category.to_string());
        }
        per_category.insert(
            category.to_string(),
            CategoryReport {
                mean_ap: mean(ap.iter().copied()),
                ap,
                num_gt,
                num_pred: ranked.len(),
            },
        );
    }

    let per_threshold: Vec<Option<f64>> = (0..nt)
        .map(|t| mean(per_category.values().map(|c: &CategoryReport| c.ap[t])))
        .collect();
    let ap15 = thresholds
        .iter()
        .position(|t| is_015(*t))
        .and_then(|i| per_threshold[i]);
    let images: std::collections::BTreeSet<&str> = preds
        .iter()
        .map(|p| p.image_id.as_str())
        .chain(gts.iter().map(|g| g.image_id.as_str()))
        .collect();
    Ok(EvalReport {
        kind: kind.to_string(),
        interpolation: config.interpolation,
        thresholds: thresholds.clone(),
        map: mean(per_threshold.iter().copied()),
        per_threshold,
        ap15,
        counts,
        per_category,
        categories_without_gt: without_gt,
        num_images: images.len(),
    })
}

pub fn evaluate_3d(preds: &[Detection3D], gts: &[GroundTruth3D], config: &EvalConfig) -> Result<EvalReport> {
    evaluate("3d", preds, gts, config)
}

pub fn evaluate_2d(preds: &[Detection2D], gts: &[GroundTruth2D], config: &EvalConfig) -> Result<EvalReport> {
    evaluate("2d", preds, gts, config)
}

/// One grounded-reasoning answer with its predicted region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GCoTRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub answer_correct: bool,
    #[serde(default)]
    pub predicted_box: Option<Box2D>,
    pub gt_box: Box2D,
}

impl GCoTRecord {
    /// Grounding is correct when IoU with the ground truth exceeds 0.5.
    pub fn grounding_correct(&self) -> bool {
        self.predicted_box
            .as_ref()
            .and_then(|p| iou2d(p, &self.gt_box).ok())
            .is_some_and(|iou| iou > GCOT_IOU_THRESHOLD)
    }
}

pub const GCOT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GCoTReport {
    pub a_acc: f64,
    pub g_acc: f64,
    pub consistency: f64,
    pub num_records: usize,
}

impl GCoTReport {
    pub fn to_text(&self) -> String {
        format!(
            "records      {}\nA-Acc        {:.4}\nG-Acc        {:.4}\nConsistency  {:.4}\n",
            self.num_records, self.a_acc, self.g_acc, self.consistency
        )
    }
}

/// Answer accuracy, grounding accuracy and their conjunction.
pub fn evaluate_gcot(records: &[GCoTRecord]) -> Result<GCoTReport> {
    if records.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let (mut a, mut g, mut both) = (0usize, 0usize, 0usize);
    for r in records {
        let ga = r.grounding_correct();
        a += r.answer_correct as usize;
        g += ga as usize;
        both += (ga && r.answer_correct) as usize;
    }
    let n = records.len() as f64;
    Ok(GCoTReport {
        a_acc: a as f64 / n,
        g_acc: g as f64 / n,
        consistency: both as f64 / n,
        num_records: records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(x: f64) -> Box3D {
        Box3D::axis_aligned([x, 0.0, 5.0], [1.0, 1.0, 1.0]).unwrap()
    }

    fn det(img: &str, cat: &str, b: Box3D, s: f64) -> Detection3D {
        Detection {
            image_id: img.into(),
            category: cat.into(),
            bbox: b,
            score: s,
        }
    }

    fn gt(img: &str, cat: &str, b: Box3D) -> GroundTruth3D {
        GroundTruth {
            image_id: img.into(),
            category: cat.into(),
            bbox: b,
            ignore: false,
        }
    }

    #[test]
    fn thresholds_are_exact_twentieths() {
        let t = default_thresholds();
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.05);
        assert_eq!(t[2], 0.15);
        assert_eq!(t[9], 0.5);
    }

    #[test]
    fn threshold_specs() {
        assert_eq!(parse_thresholds("0.05:0.50:0.05").unwrap(), default_thresholds());
        assert_eq!(parse_thresholds("0.25, 0.5").unwrap(), vec![0.25, 0.5]);
        assert!(parse_thresholds("0.5:0.1:0.1").is_err());
        assert!(parse_thresholds("a:b").is_err());
        assert!(parse_thresholds("2").is_err());
    }

    #[test]
    fn single_match() {
        let m = match_greedy(&[det("a", "c", cube(0.05), 0.9)], &[gt("a", "c", cube(0.0))], 0.5);
        assert_eq!(m, vec![(0, Some(0))]);
        let m = match_greedy::<Box3D>(&[det("a", "c", cube(0.0), 0.9)], &[], 0.5);
        assert_eq!(m, vec![(0, None)]);
    }

    #[test]
    fn higher_score_wins_contested_gt() {
        let preds = [det("a", "c", cube(0.0), 0.3), det("a", "c", cube(0.1), 0.8)];
        let m = match_greedy(&preds, &[gt("a", "c", cube(0.0))], 0.5);
        assert_eq!(m, vec![(0, None), (1, Some(0))]);
    }

    #[test]
    fn ignored_gt_absorbs_predictions() {
        let preds = [det("a", "c", cube(0.0), 0.9), det("a", "c", cube(0.05), 0.8)];
        let mut g = gt("a", "c", cube(0.0));
        g.ignore = true;
        let r = evaluate_3d(&preds, &[g], &EvalConfig::default()).unwrap();
        assert_eq!(r.per_category["c"].num_gt, 0);
        assert_eq!(r.per_category["c"].ap[0], None);
        assert_eq!(r.counts[0], Counts { tp: 0, fp: 0, fn_: 0 });
    }

    #[test]
    fn ap_basics() {
        assert_eq!(average_precision(&[true], 1, ApInterpolation::Point101), Some(1.0));
        assert_eq!(
            average_precision(&[false, false], 2, ApInterpolation::Point101),
            Some(0.0)
        );
        assert_eq!(average_precision(&[], 3, ApInterpolation::Point101), Some(0.0));
        assert_eq!(average_precision(&[], 0, ApInterpolation::Point101), None);
        assert_eq!(average_precision(&[false], 0, ApInterpolation::Point101), Some(0.0));
        // one of two found at rank 1: precision 1 up to recall 0.5
        let ap = average_precision(&[true], 2, ApInterpolation::Point101).unwrap();
        assert!((ap - 51.0 / 101.0).abs() < 1e-15);
        let ap = average_precision(&[true], 2, ApInterpolation::AllPoints).unwrap();
        assert_eq!(ap, 0.5);
        // interpolation lifts the dip at rank 2
        let ap = average_precision(&[true, false, true], 2, ApInterpolation::AllPoints).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_empty_reports() {
        let gts = vec![gt("a", "chair", cube(0.0)), gt("b", "table", cube(3.0))];
        let preds: Vec<_> = gts.iter().map(|g| det(&g.image_id, &g.category, g.bbox, 0.9)).collect();
        let r = evaluate_3d(&preds, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(r.map, Some(1.0));
        assert_eq!(r.ap15, Some(1.0));
        assert!(r.per_category.values().all(|c| c.ap.iter().all(|a| *a == Some(1.0))));

        let r = evaluate_3d(&[], &gts, &EvalConfig::default()).unwrap();
        assert_eq!(r.map, Some(0.0));
        assert_eq!(r.counts[0], Counts { tp: 0, fp: 0, fn_: 2 });
    }

    #[test]
    fn predicted_category_without_gt_is_flagged() {
        let gts = vec![gt("a", "chair", cube(0.0))];
        let preds = vec![det("a", "chair", cube(0.0), 0.9), det("a", "lamp", cube(2.0), 0.5)];
        let r = evaluate_3d(&preds, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(r.categories_without_gt, vec!["lamp".to_string()]);
        assert_eq!(r.per_category["lamp"].ap[0], Some(0.0));
        assert_eq!(r.map, Some(0.5));
    }

    #[test]
    fn image_order_does_not_matter() {
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for i in 0..6 {
            let img = format!("img{i}");
            gts.push(gt(&img, "c", cube(0.0)));
            // identical scores across images exercise the tie-break
            preds.push(det(&img, "c", cube(0.1 * i as f64), 0.5));
            preds.push(det(&img, "c", cube(2.0), 0.5));
        }
        let a = evaluate_3d(&preds, &gts, &EvalConfig::default()).unwrap();
        preds.reverse();
        let mut p2: Vec<_> = preds.chunks(2).flat_map(|c| [c[1].clone(), c[0].clone()]).collect();
        p2.rotate_left(4);
        gts.reverse();
        let b = evaluate_3d(&p2, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn jobs_do_not_change_results() {
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for i in 0..40 {
            let img = format!("{i:03}");
            gts.push(gt(&img, if i % 2 == 0 { "a" } else { "b" }, cube(0.0)));
            preds.push(det(&img, "a", cube(0.02 * i as f64), (i % 7) as f64 / 7.0));
        }
        let serial = evaluate_3d(&preds, &gts, &EvalConfig::default()).unwrap();
        let parallel = evaluate_3d(
            &preds,
            &gts,
            &EvalConfig {
                jobs: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn footprint_fixture_matches_2d() {
        // equal heights and vertical placement: 3D IoU equals the xz footprint IoU
        let mk3 = |x: f64, z: f64, w: f64, l: f64| Box3D::axis_aligned([x, 0.0, z], [w, 2.0, l]).unwrap();
        let mk2 =
            |x: f64, z: f64, w: f64, l: f64| Box2D::new(x - w / 2.0, z - l / 2.0, x + w / 2.0, z + l / 2.0).unwrap();
        let g = [(0.0, 5.0, 1.0, 2.0), (3.0, 8.0, 2.0, 2.0)];
        let p = [
            (0.2, 5.1, 1.0, 2.0, 0.9),
            (3.9, 8.0, 2.0, 2.0, 0.7),
            (9.0, 9.0, 1.0, 1.0, 0.8),
        ];
        let cfg = EvalConfig {
            thresholds: vec![0.3],
            ..Default::default()
        };
        let r3 = evaluate_3d(
            &p.iter()
                .map(|&(x, z, w, l, s)| det("i", "c", mk3(x, z, w, l), s))
                .collect::<Vec<_>>(),
            &g.iter()
                .map(|&(x, z, w, l)| gt("i", "c", mk3(x, z, w, l)))
                .collect::<Vec<_>>(),
            &cfg,
        )
        .unwrap();
        let r2 = evaluate_2d(
            &p.iter()
                .map(|&(x, z, w, l, s)| Detection {
                    image_id: "i".into(),
                    category: "c".into(),
                    bbox: mk2(x, z, w, l),
                    score: s,
                })
                .collect::<Vec<_>>(),
            &g.iter()
                .map(|&(x, z, w, l)| GroundTruth {
                    image_id: "i".into(),
                    category: "c".into(),
                    bbox: mk2(x, z, w, l),
                    ignore: false,
                })
                .collect::<Vec<_>>(),
            &cfg,
        )
        .unwrap();
        assert!((r3.map.unwrap() - r2.map.unwrap()).abs() < 1e-12);
        assert_eq!(r3.counts, r2.counts);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = EvalConfig {
            thresholds: vec![],
            ..Default::default()
        };
        assert!(evaluate_3d(&[], &[], &cfg).is_err());
        let cfg = EvalConfig {
            thresholds: vec![1.5],
            ..Default::default()
        };
        assert!(evaluate_3d(&[], &[], &cfg).is_err());
        let p = det("a", "c", cube(0.0), f64::NAN);
        assert!(evaluate_3d(&[p], &[], &EvalConfig::default()).is_err());
    }

    fn rec(answer: bool, iou_target: Option<f64>) -> GCoTRecord {
        // gt is [0,10]x[0,10]; a box [0,w]x[0,10] has IoU w/10
        let gt_box = Box2D::new(0.0, 0.0, 10.0, 10.0).unwrap();
        GCoTRecord {
            id: None,
            answer_correct: answer,
            predicted_box: iou_target.map(|t| Box2D::new(0.0, 0.0, 10.0 * t, 10.0).unwrap()),
            gt_box,
        }
    }

    #[test]
    fn gcot_example() {
        // grounding holds for IoUs 0.6 and 0.9; only the first record has both
        let r = evaluate_gcot(&[rec(true, Some(0.6)), rec(true, Some(0.4)), rec(false, Some(0.9))]).unwrap();
        assert!((r.a_acc - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.g_acc - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.consistency - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gcot_edges() {
        let r = evaluate_gcot(&[rec(true, Some(1.0)), rec(true, Some(1.0))]).unwrap();
        assert_eq!((r.a_acc, r.g_acc, r.consistency), (1.0, 1.0, 1.0));
        // IoU of exactly 0.5 does not count; a missing box never counts
        let r = evaluate_gcot(&[rec(true, Some(0.5)), rec(true, None)]).unwrap();
        assert_eq!(r.g_acc, 0.0);
        assert_eq!(evaluate_gcot(&[]), Err(Error::EmptyEvaluation));
    }
}
