//! Synthetic crowded scenes and a simulated detector that emits several
//! jittered, noisily scored boxes per object plus scattered false positives.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::detections::{BBox, Dataset, Detection, GroundTruthObject, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::{covered_fraction, iou};

/// Placement attempts allowed per object before giving up.
pub const MAX_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub width: f64,
    pub height: f64,
    pub objects_min: usize,
    pub objects_max: usize,
    /// Median object height in pixels; heights are log-normal.
    pub size_median: f64,
    pub size_sigma: f64,
    /// Median width / height ratio.
    pub aspect: f64,
    /// Log-normal sigma of the aspect ratio.
    pub aspect_jitter: f64,
    /// Fraction of objects placed in mutually occluding clusters.
    pub crowding: f64,
    pub cluster_size_max: usize,
    /// Range each clustered object's overlap with its anchor must fall in,
    /// measured as covered fraction in both directions.
    pub occlusion_min: f64,
    pub occlusion_max: f64,
    /// Upper bound on the covered fraction between unclustered objects.
    pub free_max_occlusion: f64,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Mean number of boxes per detected object: one plus a Poisson draw
    /// with mean `detections_per_object - 1`.
    pub detections_per_object: f64,
    /// Probability that an object yields no detection at all.
    pub miss_rate: f64,
    /// Centre jitter as a fraction of the object's width/height.
    pub center_jitter: f64,
    /// Log-normal sigma of the width and height jitter.
    pub size_jitter: f64,
    /// Stddev of the noise added to the IoU-based quality.
    pub score_noise: f64,
    /// Score = sigmoid(slope * (quality - offset)).
    pub link_slope: f64,
    pub link_offset: f64,
    /// Poisson mean of background boxes per image.
    pub false_positives: f64,
    /// Background quality is uniform in `[0, fp_quality_max]` before noise.
    pub fp_quality_max: f64,
    /// Boxes scoring below this are not emitted.
    pub score_floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub scene: SceneConfig,
    pub detector: DetectorConfig,
}

pub const PRESET_NAMES: [&str; 3] = ["sparse", "crowded", "multiclass-8"];

impl Preset {
    pub fn from_toml(text: &str) -> Result<Self> {
        let p: Preset = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn named(name: &str) -> Option<Self> {
        let text = match name {
            "sparse" => include_str!("../presets/sparse.toml"),
            "crowded" => include_str!("../presets/crowded.toml"),
            "multiclass-8" => include_str!("../presets/multiclass-8.toml"),
            _ => return None,
        };
        Some(Self::from_toml(text).expect("shipped presets are valid"))
    }

    pub fn sparse() -> Self {
        Self::named("sparse").expect("shipped")
    }

    pub fn crowded() -> Self {
        Self::named("crowded").expect("shipped")
    }

    pub fn multiclass8() -> Self {
        Self::named("multiclass-8").expect("shipped")
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scene;
        let d = &self.detector;
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if !(s.width > 0.0 && s.height > 0.0) {
            return fail("image extent must be positive");
        }
        if s.objects_min > s.objects_max {
            return fail("objects_min exceeds objects_max");
        }
        if !(s.size_median > 0.0) || s.size_sigma < 0.0 || !(s.aspect > 0.0) || s.aspect_jitter < 0.0 {
            return fail("size distribution is degenerate");
        }
        if !(0.0..=1.0).contains(&s.crowding) {
            return fail("crowding must lie in [0,1]");
        }
        if s.cluster_size_max < 2 {
            return fail("cluster_size_max must be at least 2");
        }
        if !(0.0 <= s.occlusion_min && s.occlusion_min < s.occlusion_max && s.occlusion_max <= 1.0) {
            return fail("occlusion target range is degenerate");
        }
        if s.num_classes == 0 {
            return fail("num_classes must be at least 1");
        }
        if d.detections_per_object < 0.0 || d.false_positives < 0.0 {
            return fail("means must be non-negative");
        }
        if d.center_jitter < 0.0 || d.size_jitter < 0.0 || d.score_noise < 0.0 {
            return fail("noise levels must be non-negative");
        }
        if !(0.0..=1.0).contains(&d.miss_rate) {
            return fail("miss_rate must lie in [0,1]");
        }
        Ok(())
    }
}

/// Generated objects plus the (member, anchor) index pairs that were placed
/// with a target overlap.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub objects: Vec<GroundTruthObject>,
    pub cluster_pairs: Vec<(usize, usize)>,
}

fn sample_box<R: Rng + ?Sized>(config: &SceneConfig, rng: &mut R, center: Option<(f64, f64)>) -> BBox {
    let h = LogNormal::new(config.size_median.ln(), config.size_sigma)
        .expect("valid")
        .sample(rng);
    let a = LogNormal::new(config.aspect.ln(), config.aspect_jitter)
        .expect("valid")
        .sample(rng);
    let w = h * a;
    let (cx, cy) = center.unwrap_or_else(|| {
        (
            rng.gen_range(0.0..config.width.max(f64::MIN_POSITIVE)),
            rng.gen_range(0.0..config.height.max(f64::MIN_POSITIVE)),
        )
    });
    BBox::from_center(cx, cy, w, h)
}

fn inside(config: &SceneConfig, b: &BBox) -> bool {
    b.x_min >= 0.0 && b.y_min >= 0.0 && b.x_max <= config.width && b.y_max <= config.height
}

/// Covered fraction in both directions.
fn mutual_cover(a: &BBox, b: &BBox) -> (f64, f64) {
    (
        covered_fraction(a, std::slice::from_ref(b)),
        covered_fraction(b, std::slice::from_ref(a)),
    )
}

pub fn generate_scene(config: &SceneConfig, rng: &mut impl Rng) -> Result<Scene> {
    let count = rng.gen_range(config.objects_min..=config.objects_max);
    let clustered = ((config.crowding * count as f64).round() as usize).min(count);
    let mut boxes: Vec<BBox> = Vec::with_capacity(count);
    let mut pairs = Vec::new();

    let free_ok = |b: &BBox, boxes: &[BBox]| {
        boxes.iter().all(|o| {
            let (p, q) = mutual_cover(b, o);
            p.max(q) < config.free_max_occlusion
        })
    };
    let place_free = |boxes: &[BBox], rng: &mut dyn rand::RngCore| -> Result<BBox> {
        for _ in 0..MAX_ATTEMPTS {
            let b = sample_box(config, rng, None);
            if inside(config, &b) && free_ok(&b, boxes) {
                return Ok(b);
            }
        }
        Err(Error::InfeasibleOcclusion {
            attempts: MAX_ATTEMPTS,
        })
    };

    let mut remaining = clustered;
    while remaining > 0 {
        let size = if remaining <= config.cluster_size_max {
            remaining
        } else {
            rng.gen_range(2..=config.cluster_size_max).min(remaining)
        };
        remaining -= size;
        let start = boxes.len();
        let seed = place_free(&boxes, rng)?;
        boxes.push(seed);
        for _ in 1..size {
            let mut placed = None;
            for _ in 0..MAX_ATTEMPTS {
                let anchor = rng.gen_range(start..boxes.len());
                let a = boxes[anchor];
                let (w, h) = (a.width(), a.height());
                let cx = a.center().0 + rng.gen_range(-w..w);
                let cy = a.center().1 + rng.gen_range(-0.3 * h..0.3 * h);
                let b = sample_box(config, rng, Some((cx, cy)));
                if !inside(config, &b) {
                    continue;
                }
                let (p, q) = mutual_cover(&b, &a);
                let in_range = |v: f64| config.occlusion_min <= v && v <= config.occlusion_max;
                if !(in_range(p) && in_range(q)) {
                    continue;
                }
                let others_ok = boxes.iter().enumerate().all(|(k, o)| {
                    if k == anchor {
                        return true;
                    }
                    let (p, q) = mutual_cover(&b, o);
                    if k >= start {
                        p.max(q) <= config.occlusion_max
                    } else {
                        p.max(q) < config.free_max_occlusion
                    }
                });
                if others_ok {
                    placed = Some((b, anchor));
                    break;
                }
            }
            let (b, anchor) = placed.ok_or(Error::InfeasibleOcclusion {
                attempts: MAX_ATTEMPTS,
            })?;
            pairs.push((boxes.len(), anchor));
            boxes.push(b);
        }
    }
    while boxes.len() < count {
        let b = place_free(&boxes, rng)?;
        boxes.push(b);
    }

    let mut objects: Vec<GroundTruthObject> = boxes
        .iter()
        .enumerate()
        .map(|(k, b)| GroundTruthObject::new(k as u64, *b, rng.gen_range(0..config.num_classes)))
        .collect();
    for k in 0..objects.len() {
        let others: Vec<BBox> = boxes
            .iter()
            .enumerate()
            .filter(|&(o, _)| o != k)
            .map(|(_, b)| *b)
            .collect();
        objects[k].occlusion = covered_fraction(&boxes[k], &others);
    }
    Ok(Scene {
        objects,
        cluster_pairs: pairs,
    })
}

fn link(config: &DetectorConfig, quality: f64) -> f64 {
    sigmoid(config.link_slope * (quality - config.link_offset)).clamp(1e-6, 1.0 - 1e-6)
}

fn poisson(mean: f64, rng: &mut impl Rng) -> usize {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("positive mean").sample(rng) as usize
    }
}

/// Detector output for the given objects, shuffled, with ids `0..`.
/// Background boxes borrow the object size distribution of `scene`.
pub fn simulate_detector(
    objects: &[GroundTruthObject],
    scene: &SceneConfig,
    config: &DetectorConfig,
    rng: &mut impl Rng,
) -> Vec<(BBox, f64, usize)> {
    let noise = Normal::new(0.0, config.score_noise.max(0.0)).expect("valid");
    let unit = Normal::new(0.0, 1.0).expect("valid");
    let mut out = Vec::new();
    for gt in objects {
        if config.miss_rate > 0.0 && rng.gen_bool(config.miss_rate) {
            continue;
        }
        let copies = if config.detections_per_object >= 1.0 {
            1 + poisson(config.detections_per_object - 1.0, rng)
        } else {
            usize::from(rng.gen_bool(config.detections_per_object))
        };
        let b = gt.bbox;
        let (cx, cy) = b.center();
        for _ in 0..copies {
            let (w, h) = (b.width(), b.height());
            let jx = cx + config.center_jitter * w * unit.sample(rng);
            let jy = cy + config.center_jitter * h * unit.sample(rng);
            let jw = w * (config.size_jitter * unit.sample(rng)).exp();
            let jh = h * (config.size_jitter * unit.sample(rng)).exp();
            let det = BBox::from_center(jx, jy, jw, jh);
            let quality = iou(&det, &b) + noise.sample(rng);
            out.push((det, link(config, quality), gt.class_id));
        }
    }
    for _ in 0..poisson(config.false_positives, rng) {
        let det = sample_box(scene, rng, None);
        let quality = rng.gen_range(0.0..=config.fp_quality_max) + noise.sample(rng);
        out.push((det, link(config, quality), rng.gen_range(0..scene.num_classes)));
    }
    out.retain(|&(_, s, _)| s >= config.score_floor);
    out.shuffle(rng);
    out
}

pub fn generate_record(preset: &Preset, image_id: String, rng: &mut impl Rng) -> Result<ImageRecord> {
    let scene = generate_scene(&preset.scene, rng)?;
    let c = preset.scene.num_classes;
    let detections = simulate_detector(&scene.objects, &preset.scene, &preset.detector, rng)
        .into_iter()
        .enumerate()
        .map(|(k, (b, s, class))| {
            if c == 1 {
                Detection::scored(k as u64, b, s)
            } else {
                Detection::one_hot(k as u64, b, s, class, c)
            }
        })
        .collect();
    Ok(ImageRecord::new(image_id, detections, scene.objects))
}

/// Image `k` draws from stream `k` of the seed, so images can be generated
/// in parallel and any prefix of a larger dataset is reproduced exactly.
pub fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn generate_dataset(preset: &Preset, images: usize, seed: u64) -> Result<Dataset> {
    preset.validate()?;
    let records = (0..images)
        .into_par_iter()
        .map(|k| generate_record(preset, format!("s{seed}-{k:06}"), &mut image_rng(seed, k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(records, preset.scene.num_classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::validate_record;

    #[test]
    fn presets_parse() {
        for name in PRESET_NAMES {
            assert!(Preset::named(name).is_some(), "{name}");
        }
        assert!(Preset::named("dense").is_none());
        assert_eq!(Preset::multiclass8().scene.num_classes, 8);
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let a = generate_dataset(&Preset::crowded(), 5, 7).unwrap();
        let b = generate_dataset(&Preset::crowded(), 5, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&Preset::crowded(), 5, 8).unwrap();
        assert_ne!(a, c);
        let prefix = generate_dataset(&Preset::crowded(), 3, 7).unwrap();
        assert_eq!(prefix.images[..], a.images[..3]);
    }

    #[test]
    fn records_are_valid() {
        for name in PRESET_NAMES {
            let p = Preset::named(name).unwrap();
            let ds = generate_dataset(&p, 20, 1).unwrap();
            for r in &ds.images {
                assert!(validate_record(r, ds.num_classes).is_empty(), "{name}");
                for g in &r.ground_truths {
                    assert!(g.bbox.x_min >= 0.0 && g.bbox.x_max <= p.scene.width);
                }
            }
        }
    }

    #[test]
    fn clustered_pairs_hit_target_range() {
        let mut config = Preset::crowded().scene;
        config.crowding = 1.0;
        config.occlusion_min = 0.5;
        config.occlusion_max = 0.8;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let scene = generate_scene(&config, &mut rng).unwrap();
            assert!(!scene.cluster_pairs.is_empty());
            for &(m, a) in &scene.cluster_pairs {
                let (p, q) = mutual_cover(&scene.objects[m].bbox, &scene.objects[a].bbox);
                assert!((0.5..=0.8).contains(&p) && (0.5..=0.8).contains(&q), "{p} {q}");
            }
        }
    }

    #[test]
    fn infeasible_target_errors() {
        let mut config = Preset::crowded().scene;
        config.width = 50.0;
        config.height = 50.0;
        config.size_median = 200.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            generate_scene(&config, &mut rng),
            Err(Error::InfeasibleOcclusion { .. })
        ));
    }

    #[test]
    fn noiseless_detector_reproduces_objects() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Preset::sparse();
        let scene = generate_scene(&p.scene, &mut rng).unwrap();
        let det = DetectorConfig {
            detections_per_object: 1.0,
            center_jitter: 0.0,
            size_jitter: 0.0,
            score_noise: 0.0,
            false_positives: 0.0,
            ..p.detector.clone()
        };
        let out = simulate_detector(&scene.objects, &p.scene, &det, &mut rng);
        assert_eq!(out.len(), scene.objects.len());
        let expected = link(&det, 1.0);
        for (b, s, _) in out {
            assert!(scene.objects.iter().any(|g| iou(&g.bbox, &b) > 1.0 - 1e-12));
            assert!((s - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_dataset() {
        let ds = generate_dataset(&Preset::sparse(), 0, 1).unwrap();
        assert!(ds.images.is_empty());
    }
}
