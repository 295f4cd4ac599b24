//! Box overlap, handcrafted pair descriptors and ground-truth occlusion.

use crate::detections::{BBox, Detection, GroundTruthObject};

/// Number of geometric entries at the front of [`RawPairFeatures`].
pub const GEOMETRIC_PAIR_FEATURES: usize = 7;

pub fn raw_pair_feature_len(num_classes: usize) -> usize {
    GEOMETRIC_PAIR_FEATURES + 2 * num_classes
}

/// Intersection over union; 0 for disjoint or touching boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Descriptor of an ordered detection pair:
/// `[iou, dx, dy, l2, log(w_i/w_j), log(h_i/h_j), log(a_i/a_j), scores_i.., scores_j..]`.
/// Offsets run from the centre of `i` to the centre of `j` and are divided
/// by `(w_i + h_i) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawPairFeatures(pub Vec<f64>);

impl RawPairFeatures {
    pub fn iou(&self) -> f64 {
        self.0[0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn raw_pair_features(d_i: &Detection, d_j: &Detection, num_classes: usize) -> RawPairFeatures {
    let mut out = Vec::with_capacity(raw_pair_feature_len(num_classes));
    write_pair_features(d_i, d_j, num_classes, &mut out);
    RawPairFeatures(out)
}

/// Appends the pair descriptor to `out`; used to fill pair batches without
/// per-pair allocation.
pub fn write_pair_features(d_i: &Detection, d_j: &Detection, num_classes: usize, out: &mut Vec<f64>) {
    let (a, b) = (&d_i.bbox, &d_j.bbox);
    let (wi, hi, wj, hj) = (a.width(), a.height(), b.width(), b.height());
    let norm = 0.5 * (wi + hi);
    let (cxi, cyi) = a.center();
    let (cxj, cyj) = b.center();
    let dx = (cxj - cxi) / norm;
    let dy = (cyj - cyi) / norm;
    out.push(iou(a, b));
    out.push(dx);
    out.push(dy);
    out.push(dx.hypot(dy));
    out.push((wi / wj).ln());
    out.push((hi / hj).ln());
    out.push(((wi / hi) / (wj / hj)).ln());
    for d in [d_i, d_j] {
        out.extend((0..num_classes).map(|c| d.scores.get(c).copied().unwrap_or(0.0)));
    }
}

/// Fraction of `target`'s area covered by the union of `others`, computed
/// exactly by compressing the clipped rectangle edges into a grid.
pub fn covered_fraction(target: &BBox, others: &[BBox]) -> f64 {
    let clipped: Vec<BBox> = others.iter().filter_map(|o| target.intersection(o)).collect();
    if clipped.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = clipped.iter().flat_map(|b| [b.x_min, b.x_max]).collect();
    let mut ys: Vec<f64> = clipped.iter().flat_map(|b| [b.y_min, b.y_max]).collect();
    for v in [&mut xs, &mut ys] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let mut covered = 0.0;
    for xw in xs.windows(2) {
        let mx = 0.5 * (xw[0] + xw[1]);
        // boxes spanning this column, reused for every row in it
        let column: Vec<&BBox> = clipped
            .iter()
            .filter(|b| b.x_min <= mx && mx <= b.x_max)
            .collect();
        if column.is_empty() {
            continue;
        }
        for yw in ys.windows(2) {
            let my = 0.5 * (yw[0] + yw[1]);
            if column.iter().any(|b| b.y_min <= my && my <= b.y_max) {
                covered += (xw[1] - xw[0]) * (yw[1] - yw[0]);
            }
        }
    }
    (covered / target.area()).clamp(0.0, 1.0)
}

pub fn occlusion_fraction(target: &GroundTruthObject, others: &[GroundTruthObject]) -> f64 {
    let boxes: Vec<BBox> = others.iter().map(|o| o.bbox).collect();
    covered_fraction(&target.bbox, &boxes)
}
