//! Greedy non-maximum suppression, pre-filtering and threshold sweeps.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::detections::{Dataset, Detection, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::iou;

/// Threshold used to thin raw detector output before rescoring.
pub const DEFAULT_PREFILTER_THETA: f64 = 0.8;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NmsResult {
    /// Kept detection ids in the order they were accepted.
    pub kept: Vec<u64>,
    /// Suppressed id -> id of the kept detection that suppressed it.
    pub suppressed_by: BTreeMap<u64, u64>,
}

/// Descending score, ascending id on ties.
pub(crate) fn score_order(a: &Detection, b: &Detection) -> Ordering {
    b.score().total_cmp(&a.score()).then(a.id.cmp(&b.id))
}

pub fn greedy_nms(detections: &[Detection], theta: f64, class_aware: bool) -> NmsResult {
    let mut order: Vec<&Detection> = detections.iter().collect();
    order.sort_by(|a, b| score_order(a, b));
    let mut suppressor: Vec<Option<u64>> = vec![None; order.len()];
    let mut result = NmsResult::default();
    for k in 0..order.len() {
        if suppressor[k].is_some() {
            continue;
        }
        let top = order[k];
        result.kept.push(top.id);
        for (m, cand) in order.iter().enumerate().skip(k + 1) {
            if suppressor[m].is_some() || (class_aware && cand.class_id != top.class_id) {
                continue;
            }
            if iou(&top.bbox, &cand.bbox) > theta {
                suppressor[m] = Some(top.id);
            }
        }
    }
    for (d, s) in order.iter().zip(suppressor) {
        if let Some(s) = s {
            result.suppressed_by.insert(d.id, s);
        }
    }
    result
}

/// Drops suppressed detections; ground truths pass through unchanged.
pub fn prefilter(record: &ImageRecord, theta: f64, class_aware: bool) -> ImageRecord {
    let result = greedy_nms(&record.detections, theta, class_aware);
    ImageRecord {
        image_id: record.image_id.clone(),
        detections: record
            .detections
            .iter()
            .filter(|d| !result.suppressed_by.contains_key(&d.id))
            .cloned()
            .collect(),
        ground_truths: record.ground_truths.clone(),
    }
}

/// Keeps every detection but records its suppressor.
pub fn mark_suppressed(record: &ImageRecord, theta: f64, class_aware: bool) -> ImageRecord {
    let result = greedy_nms(&record.detections, theta, class_aware);
    let mut out = record.clone();
    for d in &mut out.detections {
        d.suppressed_by = result.suppressed_by.get(&d.id).copied();
    }
    out
}

pub fn apply_nms(dataset: &Dataset, theta: f64, class_aware: bool) -> Dataset {
    Dataset::new(
        dataset
            .images
            .par_iter()
            .map(|r| prefilter(r, theta, class_aware))
            .collect(),
        dataset.num_classes,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<(f64, f64)>,
    pub best_theta: f64,
    pub best_value: f64,
}

impl SweepTable {
    pub fn to_csv(&self, metric_name: &str) -> String {
        let mut s = format!("theta,{metric_name}\n");
        for (t, v) in &self.rows {
            let _ = writeln!(s, "{t},{v}");
        }
        s
    }
}

/// Evaluates `metric` after GreedyNMS at every threshold. The best row is the
/// largest metric value; ties resolve to the smallest threshold.
pub fn threshold_sweep<M>(dataset: &Dataset, thetas: &[f64], metric: M) -> Result<SweepTable>
where
    M: Fn(&Dataset) -> f64 + Sync,
{
    let mut tables = threshold_sweep_columns(dataset, thetas, 1, |d| vec![metric(d)])?;
    Ok(tables.remove(0))
}

/// Like [`threshold_sweep`] for a metric producing `columns` values per
/// threshold; returns one table per column.
pub fn threshold_sweep_columns<M>(dataset: &Dataset, thetas: &[f64], columns: usize, metric: M) -> Result<Vec<SweepTable>>
where
    M: Fn(&Dataset) -> Vec<f64> + Sync,
{
    if thetas.is_empty() {
        return Err(Error::NoThresholds);
    }
    let class_aware = dataset.num_classes > 1;
    let rows: Vec<(f64, Vec<f64>)> = thetas
        .par_iter()
        .map(|&t| (t, metric(&apply_nms(dataset, t, class_aware))))
        .collect();
    (0..columns)
        .map(|c| {
            let rows: Vec<(f64, f64)> = rows
                .iter()
                .map(|(t, v)| {
                    v.get(c)
                        .map(|&x| (*t, x))
                        .ok_or_else(|| Error::shape("threshold_sweep", format!("metric returned {} values", v.len())))
                })
                .collect::<Result<_>>()?;
            let (best_theta, best_value) = best_row(&rows);
            Ok(SweepTable {
                rows,
                best_theta,
                best_value,
            })
        })
        .collect()
}

fn best_row(rows: &[(f64, f64)]) -> (f64, f64) {
    rows.iter()
        .copied()
        .fold(None, |best: Option<(f64, f64)>, (t, v)| match best {
            Some((bt, bv)) if bv > v || (bv == v && bt <= t) => Some((bt, bv)),
            _ => Some((t, v)),
        })
        .expect("non-empty")
}

/// Parses `start:step:end` (inclusive end, tolerant to rounding) or a comma
/// separated list.
pub fn parse_thetas(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse thresholds '{spec}'"));
    let parts: Vec<&str> = spec.split(':').collect();
    let values = if parts.len() == 3 {
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let (start, step, end) = (nums[0], nums[1], nums[2]);
        if !(step > 0.0) || end < start {
            return Err(bad());
        }
        let count = ((end - start) / step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9)
            .collect()
    } else {
        spec.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() {
        return Err(Error::NoThresholds);
    }
    Ok(values)
}
