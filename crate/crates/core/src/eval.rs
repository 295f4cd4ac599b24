//! Benchmark-style matching of detections to ground truth and average
//! precision. The same matcher labels training examples for the rescorer.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::detections::{Dataset, Detection, GroundTruthObject};
use crate::error::{Error, Result};
use crate::geometry::iou;

/// IoU criteria 0.50, 0.55, ..., 0.95.
pub fn coco_criteria() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchLabels {
    pub labels: BTreeMap<u64, Label>,
    /// Detection id -> ground-truth id, present iff the detection is positive.
    pub matched_gt: BTreeMap<u64, u64>,
}

/// Index-aligned matching result: `matched[k]` is the index into the ground
/// truths matched by detection `k`.
pub fn match_indices(
    detections: &[Detection],
    scores: &[f64],
    ground_truths: &[GroundTruthObject],
    criterion: f64,
) -> Vec<Option<usize>> {
    assert_eq!(detections.len(), scores.len());
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(detections[a].id.cmp(&detections[b].id))
    });
    let mut taken = vec![false; ground_truths.len()];
    let mut matched = vec![None; detections.len()];
    for k in order {
        let det = &detections[k];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in ground_truths.iter().enumerate() {
            if taken[g] || gt.class_id != det.class_id {
                continue;
            }
            let o = iou(&det.bbox, &gt.bbox);
            if o < criterion {
                continue;
            }
            best = match best {
                Some((bg, bo))
                    if bo > o || (bo == o && ground_truths[bg].id < gt.id) =>
                {
                    Some((bg, bo))
                }
                _ => Some((g, o)),
            };
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            matched[k] = Some(g);
        }
    }
    matched
}

/// Matches in descending order of each detection's own score.
pub fn match_detections(
    detections: &[Detection],
    ground_truths: &[GroundTruthObject],
    criterion: f64,
) -> MatchLabels {
    let scores: Vec<f64> = detections.iter().map(Detection::score).collect();
    match_with_scores(detections, &scores, ground_truths, criterion)
}

/// Matches using `scores` as the ranking instead of the stored scores.
pub fn match_with_scores(
    detections: &[Detection],
    scores: &[f64],
    ground_truths: &[GroundTruthObject],
    criterion: f64,
) -> MatchLabels {
    let matched = match_indices(detections, scores, ground_truths, criterion);
    let mut out = MatchLabels::default();
    for (det, m) in detections.iter().zip(matched) {
        match m {
            Some(g) => {
                out.labels.insert(det.id, Label::Positive);
                out.matched_gt.insert(det.id, ground_truths[g].id);
            }
            None => {
                out.labels.insert(det.id, Label::Negative);
            }
        }
    }
    out
}

/// One ranked detection as seen by the AP computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub score: f64,
    pub true_positive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrCurve {
    pub ap: f64,
    /// (recall, precision) after each distinct score level.
    pub points: Vec<(f64, f64)>,
}

/// Area under the precision envelope of the ranked outcomes. Detections with
/// equal scores form one step of the curve, so AP is independent of their
/// order.
pub fn average_precision(outcomes: &[Outcome], num_gt: usize) -> PrCurve {
    if num_gt == 0 {
        let ap = if outcomes.is_empty() { 1.0 } else { 0.0 };
        return PrCurve { ap, points: vec![] };
    }
    let mut sorted = outcomes.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < sorted.len() {
        let level = sorted[k].score;
        while k < sorted.len() && sorted[k].score == level {
            if sorted[k].true_positive {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push((tp as f64 / num_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut envelope: Vec<f64> = points.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in points.iter().zip(&envelope) {
        ap += (p.0 - prev_recall) * env;
        prev_recall = p.0;
    }
    PrCurve {
        ap: ap.clamp(0.0, 1.0),
        points,
    }
}

/// Half-open occlusion range `[lo, hi)`; a bin ending at 1 also holds 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OcclusionBin {
    pub lo: f64,
    pub hi: f64,
}

impl OcclusionBin {
    pub fn contains(&self, occlusion: f64) -> bool {
        (self.lo <= occlusion && occlusion < self.hi) || (self.hi >= 1.0 && occlusion >= 1.0)
    }
}

/// `[0,0.5)` and `[0.5,1]`.
pub fn default_bins() -> Vec<OcclusionBin> {
    vec![
        OcclusionBin { lo: 0.0, hi: 0.5 },
        OcclusionBin { lo: 0.5, hi: 1.0 },
    ]
}

/// Bins must be contiguous, non-empty and cover exactly `[0,1]`.
pub fn check_bins(bins: &[OcclusionBin]) -> Result<()> {
    if bins.is_empty() {
        return Ok(());
    }
    let err = |m: String| Err(Error::InvalidBins(m));
    if bins[0].lo != 0.0 {
        return err(format!("first bin starts at {}", bins[0].lo));
    }
    if bins[bins.len() - 1].hi != 1.0 {
        return err(format!("last bin ends at {}", bins[bins.len() - 1].hi));
    }
    for b in bins {
        if !(b.lo < b.hi) {
            return err(format!("empty bin [{},{})", b.lo, b.hi));
        }
    }
    for w in bins.windows(2) {
        if w[0].hi != w[1].lo {
            let kind = if w[0].hi > w[1].lo { "overlap" } else { "gap" };
            return err(format!("{kind} between {} and {}", w[0].hi, w[1].lo));
        }
    }
    Ok(())
}

/// Parses `0,0.5,1` (bin edges) into bins.
pub fn parse_bins(spec: &str) -> Result<Vec<OcclusionBin>> {
    let edges: Vec<f64> = spec
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidBins(format!("cannot parse '{spec}'")))
        })
        .collect::<Result<_>>()?;
    if edges.len() < 2 {
        return Err(Error::InvalidBins(format!("need at least two edges in '{spec}'")));
    }
    let bins: Vec<OcclusionBin> = edges
        .windows(2)
        .map(|w| OcclusionBin { lo: w[0], hi: w[1] })
        .collect();
    check_bins(&bins)?;
    Ok(bins)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApAt {
    pub criterion: f64,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApSummary {
    pub ap_at: Vec<ApAt>,
    /// Mean over every criterion in `ap_at`.
    pub ap_range: f64,
}

impl ApSummary {
    fn from_values(criteria: &[f64], values: Vec<f64>) -> Self {
        let ap_range = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        Self {
            ap_at: criteria
                .iter()
                .zip(values)
                .map(|(&criterion, ap)| ApAt { criterion, ap })
                .collect(),
            ap_range,
        }
    }

    pub fn ap(&self, criterion: f64) -> Option<f64> {
        self.ap_at
            .iter()
            .find(|a| (a.criterion - criterion).abs() < 1e-9)
            .map(|a| a.ap)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassAp {
    pub class_id: usize,
    pub num_gt: usize,
    pub summary: ApSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinAp {
    pub bin: OcclusionBin,
    pub num_gt: usize,
    pub summary: ApSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassCurve {
    pub criterion: f64,
    pub class_id: usize,
    pub curve: PrCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub criteria: Vec<f64>,
    /// Class-averaged (unweighted) AP.
    pub overall: ApSummary,
    pub per_class: Vec<ClassAp>,
    pub per_occlusion_bin: Vec<BinAp>,
    pub pr_curves: Vec<ClassCurve>,
}

impl EvalReport {
    pub fn bin(&self, lo: f64) -> Option<&BinAp> {
        self.per_occlusion_bin.iter().find(|b| b.bin.lo == lo)
    }

    pub fn pr_csv(&self) -> String {
        let mut s = String::from("criterion,class_id,recall,precision\n");
        for c in &self.pr_curves {
            for (r, p) in &c.curve.points {
                let _ = writeln!(s, "{},{},{r},{p}", c.criterion, c.class_id);
            }
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub criteria: Vec<f64>,
    pub bins: Vec<OcclusionBin>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            criteria: coco_criteria(),
            bins: default_bins(),
        }
    }
}

/// A matched or unmatched detection in dataset-wide bookkeeping.
struct Ranked {
    score: f64,
    class_id: usize,
    matched_occlusion: Option<f64>,
}

/// Outcomes and GT count for one class restricted to `bin` (or everything).
fn collect(ranked: &[Ranked], gts: &[(usize, f64)], class: usize, bin: Option<&OcclusionBin>) -> (Vec<Outcome>, usize) {
    let in_bin = |occ: f64| bin.is_none_or(|b| b.contains(occ));
    let outcomes = ranked
        .iter()
        .filter(|r| r.class_id == class)
        .filter_map(|r| match r.matched_occlusion {
            Some(occ) if in_bin(occ) => Some(Outcome {
                score: r.score,
                true_positive: true,
            }),
            // matched to a ground truth outside the bin: ignored
            Some(_) => None,
            None => Some(Outcome {
                score: r.score,
                true_positive: false,
            }),
        })
        .collect();
    let num_gt = gts.iter().filter(|&&(c, occ)| c == class && in_bin(occ)).count();
    (outcomes, num_gt)
}

/// Unweighted mean over classes that have ground truth; falls back to all
/// classes when none do.
fn class_mean(values: &[(usize, f64)]) -> f64 {
    let with_gt: Vec<f64> = values.iter().filter(|v| v.0 > 0).map(|v| v.1).collect();
    let pool: Vec<f64> = if with_gt.is_empty() {
        values.iter().map(|v| v.1).collect()
    } else {
        with_gt
    };
    if pool.is_empty() {
        0.0
    } else {
        pool.iter().sum::<f64>() / pool.len() as f64
    }
}

/// Evaluates the dataset as given; `score_overrides[i][k]` replaces the
/// effective score of detection `k` of image `i` when present.
pub fn evaluate(
    dataset: &Dataset,
    score_overrides: Option<&[Vec<f64>]>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    check_bins(&config.bins)?;
    if let Some(o) = score_overrides {
        if o.len() != dataset.images.len() {
            return Err(Error::Config(format!(
                "{} score overrides for {} images",
                o.len(),
                dataset.images.len()
            )));
        }
    }
    let num_classes = dataset.num_classes.max(1);
    let gts: Vec<(usize, f64)> = dataset
        .images
        .iter()
        .flat_map(|r| r.ground_truths.iter().map(|g| (g.class_id, g.occlusion)))
        .collect();

    // per criterion, per class, per bin (index 0 = unbinned)
    let slots = config.bins.len() + 1;
    let mut values = vec![vec![vec![(0usize, 0.0f64); slots]; num_classes]; config.criteria.len()];
    let mut pr_curves = Vec::new();
    for (ci, &criterion) in config.criteria.iter().enumerate() {
        let ranked: Vec<Ranked> = dataset
            .images
            .par_iter()
            .enumerate()
            .map(|(i, record)| {
                let scores: Vec<f64> = match score_overrides {
                    Some(o) => o[i].clone(),
                    None => record.detections.iter().map(Detection::score).collect(),
                };
                let matched = match_indices(&record.detections, &scores, &record.ground_truths, criterion);
                record
                    .detections
                    .iter()
                    .zip(scores)
                    .zip(matched)
                    .map(|((d, score), m)| Ranked {
                        score,
                        class_id: d.class_id,
                        matched_occlusion: m.map(|g| record.ground_truths[g].occlusion),
                    })
                    .collect::<Vec<_>>()
            })
            .flatten()
            .collect();
        for class in 0..num_classes {
            let (outcomes, num_gt) = collect(&ranked, &gts, class, None);
            let curve = average_precision(&outcomes, num_gt);
            values[ci][class][0] = (num_gt, curve.ap);
            pr_curves.push(ClassCurve {
                criterion,
                class_id: class,
                curve,
            });
            for (bi, bin) in config.bins.iter().enumerate() {
                let (outcomes, num_gt) = collect(&ranked, &gts, class, Some(bin));
                values[ci][class][bi + 1] = (num_gt, average_precision(&outcomes, num_gt).ap);
            }
        }
    }

    let summary = |class: Option<usize>, slot: usize| {
        let aps = config
            .criteria
            .iter()
            .enumerate()
            .map(|(ci, _)| match class {
                Some(c) => values[ci][c][slot].1,
                None => class_mean(
                    &(0..num_classes)
                        .map(|c| values[ci][c][slot])
                        .collect::<Vec<_>>(),
                ),
            })
            .collect();
        ApSummary::from_values(&config.criteria, aps)
    };
    let count_gt = |class: Option<usize>, bin: Option<&OcclusionBin>| {
        gts.iter()
            .filter(|&&(c, occ)| class.is_none_or(|k| k == c) && bin.is_none_or(|b| b.contains(occ)))
            .count()
    };

    Ok(EvalReport {
        criteria: config.criteria.clone(),
        overall: summary(None, 0),
        per_class: (0..num_classes)
            .map(|c| ClassAp {
                class_id: c,
                num_gt: count_gt(Some(c), None),
                summary: summary(Some(c), 0),
            })
            .collect(),
        per_occlusion_bin: config
            .bins
            .iter()
            .enumerate()
            .map(|(bi, bin)| BinAp {
                bin: *bin,
                num_gt: count_gt(None, Some(bin)),
                summary: summary(None, bi + 1),
            })
            .collect(),
        pr_curves,
    })
}

/// Mean number of detections scoring above `threshold` per covered object.
///
/// Each detection is assigned to the same-class ground truth it overlaps
/// most, if that overlap reaches `criterion`. Objects with at least one
/// assigned detection (of any score) are averaged over.
pub fn confident_detections_per_object(dataset: &Dataset, threshold: f64, criterion: f64) -> f64 {
    let (mut objects, mut confident) = (0usize, 0usize);
    for record in &dataset.images {
        let mut assigned = vec![(0usize, 0usize); record.ground_truths.len()];
        for d in &record.detections {
            let best = record
                .ground_truths
                .iter()
                .enumerate()
                .filter(|(_, g)| g.class_id == d.class_id)
                .map(|(k, g)| (k, iou(&d.bbox, &g.bbox)))
                .filter(|&(_, o)| o >= criterion)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some((k, _)) = best {
                assigned[k].0 += 1;
                if d.score() > threshold {
                    assigned[k].1 += 1;
                }
            }
        }
        for (any, conf) in assigned {
            if any > 0 {
                objects += 1;
                confident += conf;
            }
        }
    }
    if objects == 0 {
        0.0
    } else {
        confident as f64 / objects as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::{BBox, ImageRecord};

    fn gt(id: u64, b: BBox) -> GroundTruthObject {
        GroundTruthObject::new(id, b, 0)
    }

    #[test]
    fn exact_hit_is_positive() {
        let b = BBox::new(0.0, 0.0, 4.0, 8.0);
        let m = match_detections(&[Detection::scored(0, b, 0.3)], &[gt(5, b)], 0.5);
        assert_eq!(m.labels[&0], Label::Positive);
        assert_eq!(m.matched_gt[&0], 5);
    }

    #[test]
    fn double_detection_is_negative() {
        let g = BBox::new(0.0, 0.0, 10.0, 10.0);
        let d = vec![
            Detection::scored(1, BBox::new(0.0, 0.0, 10.0, 9.0), 0.7),
            Detection::scored(0, BBox::new(0.0, 0.0, 10.0, 8.0), 0.9),
        ];
        let m = match_detections(&d, &[gt(0, g)], 0.5);
        assert_eq!(m.labels[&0], Label::Positive);
        assert_eq!(m.labels[&1], Label::Negative);
        assert!(!m.matched_gt.contains_key(&1));
    }

    #[test]
    fn prefers_most_overlapping_unmatched() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(2.0, 0.0, 12.0, 10.0);
        // first detection sits on b, second between a and b
        let d = vec![
            Detection::scored(0, b, 0.9),
            Detection::scored(1, BBox::new(1.5, 0.0, 11.5, 10.0), 0.8),
        ];
        let m = match_detections(&d, &[gt(0, a), gt(1, b)], 0.5);
        assert_eq!(m.matched_gt[&0], 1);
        assert_eq!(m.matched_gt[&1], 0);
    }

    #[test]
    fn other_class_is_ineligible() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0);
        let d = Detection::one_hot(0, b, 0.9, 1, 2);
        let m = match_detections(&[d], &[gt(0, b)], 0.5);
        assert_eq!(m.labels[&0], Label::Negative);
    }

    fn tp(score: f64) -> Outcome {
        Outcome {
            score,
            true_positive: true,
        }
    }
    fn fp(score: f64) -> Outcome {
        Outcome {
            score,
            true_positive: false,
        }
    }

    #[test]
    fn perfect_ranking() {
        assert_eq!(average_precision(&[tp(0.9), tp(0.8), fp(0.1)], 2).ap, 1.0);
    }

    #[test]
    fn false_positive_first_halves_ap() {
        let c = average_precision(&[fp(0.9), tp(0.8)], 1);
        assert_eq!(c.ap, 0.5);
        assert_eq!(c.points, vec![(0.0, 0.0), (1.0, 0.5)]);
    }

    #[test]
    fn empty_and_zero_gt_conventions() {
        assert_eq!(average_precision(&[], 3).ap, 0.0);
        assert_eq!(average_precision(&[], 0).ap, 1.0);
        assert_eq!(average_precision(&[fp(0.2)], 0).ap, 0.0);
    }

    #[test]
    fn envelope_fills_dips() {
        // TP, FP, TP over 2 GT: points (0.5,1), (0.5,0.5), (1,2/3)
        let c = average_precision(&[tp(0.9), fp(0.8), tp(0.7)], 2);
        assert!((c.ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn tied_scores_are_one_step() {
        let a = average_precision(&[fp(0.5), tp(0.5)], 1).ap;
        let b = average_precision(&[tp(0.5), fp(0.5)], 1).ap;
        assert_eq!(a, b);
        assert_eq!(a, 0.5);
    }

    #[test]
    fn bins_validation() {
        assert!(check_bins(&default_bins()).is_ok());
        assert!(parse_bins("0,0.5,1").is_ok());
        assert!(matches!(parse_bins("0,0.5"), Err(Error::InvalidBins(_))));
        let overlapping = [
            OcclusionBin { lo: 0.0, hi: 0.6 },
            OcclusionBin { lo: 0.5, hi: 1.0 },
        ];
        assert!(check_bins(&overlapping).is_err());
        let gap = [
            OcclusionBin { lo: 0.0, hi: 0.4 },
            OcclusionBin { lo: 0.5, hi: 1.0 },
        ];
        assert!(check_bins(&gap).is_err());
        assert!(OcclusionBin { lo: 0.5, hi: 1.0 }.contains(1.0));
        assert!(!OcclusionBin { lo: 0.0, hi: 0.5 }.contains(0.5));
    }

    #[test]
    fn uniform_scores_perfect_set() {
        let boxes = [
            BBox::new(0.0, 0.0, 10.0, 10.0),
            BBox::new(5.0, 0.0, 15.0, 10.0),
            BBox::new(40.0, 40.0, 50.0, 60.0),
        ];
        let rec = ImageRecord::new(
            "u",
            boxes.iter().enumerate().map(|(k, b)| Detection::scored(k as u64, *b, 0.5)).collect(),
            boxes.iter().enumerate().map(|(k, b)| gt(k as u64, *b)).collect(),
        );
        let ds = Dataset::new(vec![rec], 1);
        let r = evaluate(&ds, None, &EvalConfig::default()).unwrap();
        assert!(r.overall.ap_at.iter().all(|a| a.ap == 1.0));
        assert_eq!(r.overall.ap_range, 1.0);
        assert_eq!(r.overall.ap_at.len(), 10);
    }

    #[test]
    fn ap_range_is_mean_of_criteria() {
        let rec = ImageRecord::new(
            "m",
            vec![
                Detection::scored(0, BBox::new(0.0, 0.0, 10.0, 7.0), 0.9),
                Detection::scored(1, BBox::new(30.0, 0.0, 40.0, 9.5), 0.8),
            ],
            vec![
                gt(0, BBox::new(0.0, 0.0, 10.0, 10.0)),
                gt(1, BBox::new(30.0, 0.0, 40.0, 10.0)),
            ],
        );
        let r = evaluate(&Dataset::new(vec![rec], 1), None, &EvalConfig::default()).unwrap();
        let mean = r.overall.ap_at.iter().map(|a| a.ap).sum::<f64>() / 10.0;
        assert!((r.overall.ap_range - mean).abs() < 1e-12);
        // IoUs 0.7 and 0.95: AP is 1 up to 0.7; above it the top-scored
        // detection turns into a false positive ahead of the hit
        assert_eq!(r.overall.ap(0.7), Some(1.0));
        assert_eq!(r.overall.ap(0.75), Some(0.25));
    }

    #[test]
    fn out_of_bin_matches_are_ignored() {
        // two GT covering each other by half; one isolated
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(5.0, 0.0, 15.0, 10.0);
        let c = BBox::new(50.0, 50.0, 60.0, 60.0);
        let rec = ImageRecord::new(
            "b",
            vec![
                Detection::scored(0, c, 0.9),
                Detection::scored(1, a, 0.8),
                Detection::scored(2, BBox::new(80.0, 80.0, 90.0, 90.0), 0.85),
            ],
            vec![gt(0, a), gt(1, b), gt(2, c)],
        );
        let ds = Dataset::new(vec![rec], 1);
        let cfg = EvalConfig {
            criteria: vec![0.5],
            bins: default_bins(),
        };
        let r = evaluate(&ds, None, &cfg).unwrap();
        let low = r.bin(0.0).unwrap();
        let high = r.bin(0.5).unwrap();
        assert_eq!(low.num_gt, 1);
        assert_eq!(high.num_gt, 2);
        // low bin: TP(0.9), FP(0.85), ignored(0.8) over 1 GT
        assert_eq!(low.summary.ap_at[0].ap, 1.0);
        // high bin: ignored(0.9), FP(0.85), TP(0.8) over 2 GT -> 0.5 * 0.5
        assert_eq!(high.summary.ap_at[0].ap, 0.25);
    }

    #[test]
    fn overrides_change_ranking() {
        let g = BBox::new(0.0, 0.0, 10.0, 10.0);
        let rec = ImageRecord::new(
            "o",
            vec![
                Detection::scored(0, BBox::new(20.0, 20.0, 30.0, 30.0), 0.9),
                Detection::scored(1, g, 0.1),
            ],
            vec![gt(0, g)],
        );
        let ds = Dataset::new(vec![rec], 1);
        let cfg = EvalConfig {
            criteria: vec![0.5],
            bins: vec![],
        };
        assert_eq!(evaluate(&ds, None, &cfg).unwrap().overall.ap_range, 0.5);
        let o = vec![vec![0.0, 1.0]];
        assert_eq!(evaluate(&ds, Some(&o), &cfg).unwrap().overall.ap_range, 1.0);
    }

    #[test]
    fn per_object_counting() {
        let g = BBox::new(0.0, 0.0, 10.0, 10.0);
        let rec = ImageRecord::new(
            "c",
            vec![
                Detection::scored(0, g, 0.9),
                Detection::scored(1, BBox::new(0.0, 0.0, 10.0, 9.0), 0.8),
                Detection::scored(2, BBox::new(0.0, 0.0, 10.0, 8.0), 0.2),
            ],
            vec![gt(0, g), gt(1, BBox::new(40.0, 40.0, 50.0, 50.0))],
        );
        let ds = Dataset::new(vec![rec], 1);
        assert_eq!(confident_detections_per_object(&ds, 0.5, 0.5), 2.0);
    }
}
