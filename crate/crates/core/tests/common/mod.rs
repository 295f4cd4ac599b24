//! Independent reference implementations and random instance generators
//! shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use nmslab::autodiff::{Graph, Tensor, Var};
use nmslab::eval::Outcome;
use nmslab::geometry::iou;
use nmslab::nms::NmsResult;
use nmslab::{BBox, Detection, GroundTruthObject, ImageRecord};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A detection is suppressed by the earliest accepted detection (in
/// acceptance order) that overlaps it beyond `theta`; the next accepted
/// detection is found by a full scan each round.
pub fn nms_oracle(dets: &[Detection], theta: f64, class_aware: bool) -> NmsResult {
    let mut remaining: Vec<usize> = (0..dets.len()).collect();
    let mut kept: Vec<usize> = Vec::new();
    let mut suppressed_by = BTreeMap::new();
    while !remaining.is_empty() {
        let mut best = remaining[0];
        for &k in &remaining {
            let (a, b) = (&dets[k], &dets[best]);
            if a.score() > b.score() || (a.score() == b.score() && a.id < b.id) {
                best = k;
            }
        }
        remaining.retain(|&k| k != best);
        let suppressor = kept.iter().find(|&&p| {
            (!class_aware || dets[p].class_id == dets[best].class_id) && iou(&dets[p].bbox, &dets[best].bbox) > theta
        });
        match suppressor {
            Some(&p) => {
                suppressed_by.insert(dets[best].id, dets[p].id);
            }
            None => kept.push(best),
        }
    }
    NmsResult {
        kept: kept.iter().map(|&k| dets[k].id).collect(),
        suppressed_by,
    }
}

/// Processes detections by repeatedly scanning for the best remaining one,
/// matching each to the most overlapping free same-class object.
pub fn match_oracle(
    dets: &[Detection],
    scores: &[f64],
    gts: &[GroundTruthObject],
    criterion: f64,
) -> Vec<Option<usize>> {
    let n = dets.len();
    let mut done = vec![false; n];
    let mut taken = vec![false; gts.len()];
    let mut out = vec![None; n];
    for _ in 0..n {
        let mut k = usize::MAX;
        for c in (0..n).filter(|&c| !done[c]) {
            if k == usize::MAX || scores[c] > scores[k] || (scores[c] == scores[k] && dets[c].id < dets[k].id) {
                k = c;
            }
        }
        done[k] = true;
        let mut candidates: Vec<(f64, u64, usize)> = gts
            .iter()
            .enumerate()
            .filter(|(g, gt)| !taken[*g] && gt.class_id == dets[k].class_id)
            .map(|(g, gt)| (iou(&dets[k].bbox, &gt.bbox), gt.id, g))
            .filter(|c| c.0 >= criterion)
            .collect();
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        if let Some(&(_, _, g)) = candidates.first() {
            taken[g] = true;
            out[k] = Some(g);
        }
    }
    out
}

/// Area under the interpolated curve from the threshold definition: for each
/// distinct score t the operating point uses every detection scoring ≥ t,
/// and precision at recall r is the best precision of any operating point
/// reaching r.
pub fn ap_oracle(outcomes: &[Outcome], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return if outcomes.is_empty() { 1.0 } else { 0.0 };
    }
    let mut thresholds: Vec<f64> = outcomes.iter().map(|o| o.score).collect();
    thresholds.sort_by(|a, b| a.total_cmp(b));
    thresholds.dedup();
    let points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let sel: Vec<&Outcome> = outcomes.iter().filter(|o| o.score >= t).collect();
            let tp = sel.iter().filter(|o| o.true_positive).count() as f64;
            (tp / num_gt as f64, tp / sel.len() as f64)
        })
        .collect();
    let mut recalls: Vec<f64> = points.iter().map(|p| p.0).collect();
    recalls.push(0.0);
    recalls.sort_by(|a, b| a.total_cmp(b));
    recalls.dedup();
    let mut ap = 0.0;
    for w in recalls.windows(2) {
        let best = points
            .iter()
            .filter(|p| p.0 >= w[1])
            .map(|p| p.1)
            .fold(0.0f64, f64::max);
        ap += (w[1] - w[0]) * best;
    }
    ap
}

pub fn random_box(rng: &mut ChaCha8Rng, extent: f64, min: f64, max: f64) -> BBox {
    let w = rng.gen_range(min..max);
    let h = rng.gen_range(min..max);
    let x = rng.gen_range(0.0..extent - w);
    let y = rng.gen_range(0.0..extent - h);
    BBox::new(x, y, x + w, y + h)
}

/// Detections clustered around a few centres so overlaps are common. Scores
/// come from a coarse grid half of the time to exercise ties.
pub fn random_detections(rng: &mut ChaCha8Rng, n: usize, num_classes: usize) -> Vec<Detection> {
    let centres: Vec<BBox> = (0..rng.gen_range(1..=4)).map(|_| random_box(rng, 100.0, 15.0, 35.0)).collect();
    let coarse = rng.gen_bool(0.5);
    let mut ids: Vec<u64> = (0..n as u64 * 3).collect();
    shuffle(rng, &mut ids);
    (0..n)
        .map(|k| {
            let c = centres[rng.gen_range(0..centres.len())];
            let jitter = |rng: &mut ChaCha8Rng| rng.gen_range(-6.0..6.0);
            let (x0, y0) = (c.x_min + jitter(rng), c.y_min + jitter(rng));
            let w = (c.width() + jitter(rng)).max(4.0);
            let h = (c.height() + jitter(rng)).max(4.0);
            let b = BBox::new(x0, y0, x0 + w, y0 + h);
            let s = if coarse {
                rng.gen_range(1..=5) as f64 / 5.0
            } else {
                rng.gen_range(0.01..1.0)
            };
            let class = rng.gen_range(0..num_classes);
            Detection::one_hot(ids[k], b, s, class, num_classes)
        })
        .collect()
}

pub fn random_ground_truths(rng: &mut ChaCha8Rng, dets: &[Detection], n: usize, num_classes: usize) -> Vec<GroundTruthObject> {
    (0..n)
        .map(|k| {
            let b = if !dets.is_empty() && rng.gen_bool(0.7) {
                let d = &dets[rng.gen_range(0..dets.len())].bbox;
                let s = rng.gen_range(-3.0..3.0);
                BBox::new(d.x_min + s, d.y_min - s, d.x_max + s, d.y_max)
            } else {
                random_box(rng, 100.0, 15.0, 35.0)
            };
            GroundTruthObject::new(k as u64 * 7 + 1, b, rng.gen_range(0..num_classes))
        })
        .collect()
}

pub fn random_record(rng: &mut ChaCha8Rng, n: usize, num_gt: usize, num_classes: usize) -> ImageRecord {
    let dets = random_detections(rng, n, num_classes);
    let gts = random_ground_truths(rng, &dets, num_gt, num_classes);
    ImageRecord::new(format!("img-{}", rng.gen::<u32>()), dets, gts)
}

pub fn shuffle<T>(rng: &mut ChaCha8Rng, v: &mut [T]) {
    use rand::seq::SliceRandom;
    v.shuffle(rng);
}

/// Largest `|fd - g| / (|g| + 1e-8)` over every entry of every input, with
/// central differences at step `1e-4`.
pub fn fd_max_relative_error(inputs: &[Tensor<f64>], build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let eval = |ts: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.parameter(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).values()[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.backward(out).expect("scalar root");
    let h = 1e-4;
    let mut worst = 0.0f64;
    for (ti, t) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[ti]).map(<[f64]>::to_vec).unwrap_or(vec![0.0; t.len()]);
        for k in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[ti].values_mut()[k] += h;
            let mut minus = inputs.to_vec();
            minus[ti].values_mut()[k] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max(relative_error(numeric, analytic[k]));
        }
    }
    worst
}

pub fn relative_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / (analytic.abs() + 1e-8)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// Entries with magnitude in [0.05, 1) and random sign.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, v).expect("shape")
}

/// Reduces a matrix to a scalar through fixed distinct column weights so
/// every entry gets a different upstream gradient.
pub fn project(g: &mut Graph<f64>, x: Var, seed: u64) -> Var {
    use rand::SeedableRng;
    let cols = g.value(x).cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(vec![cols, 1], (0..cols).map(|_| rng.gen_range(0.5..1.5)).collect()).expect("shape");
    let w = g.input(w);
    let b = g.input(Tensor::zeros(vec![1]));
    let y = g.linear(x, w, b).expect("shape");
    g.sum(y)
}
