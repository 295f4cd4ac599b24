use crate::detections::Detection;
use crate::geometry::{iou, raw_pair_feature_len, write_pair_features};

/// Ordered detection pairs grouped by their first member. Every detection
/// owns its self-pair, stored first in its group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairIndex {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
    pub num_detections: usize,
}

impl PairIndex {
    /// Number of pair rows `K`.
    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// Segment id of every pair row, aligned with [`Self::first`].
    pub fn segments(&self) -> &[usize] {
        &self.first
    }

    pub fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.first
            .iter()
            .zip(&self.second)
            .filter(move |&(&a, &b)| a == i && b != i)
            .map(|(_, &b)| b)
    }

    /// Row-major `K x (7 + 2C)` pair descriptors.
    pub fn raw_features(&self, detections: &[Detection], num_classes: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * raw_pair_feature_len(num_classes));
        for (&i, &j) in self.first.iter().zip(&self.second) {
            write_pair_features(&detections[i], &detections[j], num_classes, &mut out);
        }
        out
    }
}

pub fn build_pair_index(detections: &[Detection], threshold: f64) -> PairIndex {
    let n = detections.len();
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for i in 0..n {
        first.push(i);
        second.push(i);
        for j in 0..n {
            if j != i && iou(&detections[i].bbox, &detections[j].bbox) > threshold {
                first.push(i);
                second.push(j);
            }
        }
    }
    PairIndex {
        first,
        second,
        num_detections: n,
    }
}
