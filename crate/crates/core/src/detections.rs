//! Data model shared by every stage of the pipeline and its JSON Lines
//! representation.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry;

/// Axis-aligned box in corner form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.x_min.is_finite()
            && self.y_min.is_finite()
            && self.x_max.is_finite()
            && self.y_max.is_finite()
    }

    /// Strictly positive extent in both axes. NaN coordinates fail this too.
    pub fn is_proper(&self) -> bool {
        self.x_max > self.x_min && self.y_max > self.y_min
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let b = BBox::new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        );
        b.is_proper().then_some(b)
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: u64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub scores: Vec<f64>,
    pub class_id: usize,
    /// Set only by mark-only suppression output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suppressed_by: Option<u64>,
}

impl Detection {
    pub fn new(id: u64, bbox: BBox, scores: Vec<f64>, class_id: usize) -> Self {
        Self {
            id,
            bbox,
            scores,
            class_id,
            suppressed_by: None,
        }
    }

    /// Single-class convenience constructor.
    pub fn scored(id: u64, bbox: BBox, score: f64) -> Self {
        Self::new(id, bbox, vec![score], 0)
    }

    /// One-hot multi-class constructor.
    pub fn one_hot(id: u64, bbox: BBox, score: f64, class_id: usize, num_classes: usize) -> Self {
        let mut scores = vec![0.0; num_classes];
        scores[class_id] = score;
        Self::new(id, bbox, scores, class_id)
    }

    /// Confidence used for ranking: the entry at the detection's class.
    pub fn score(&self) -> f64 {
        self.scores.get(self.class_id).copied().unwrap_or(f64::NAN)
    }

    pub fn set_score(&mut self, score: f64) {
        if let Some(s) = self.scores.get_mut(self.class_id) {
            *s = score;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub id: u64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_id: usize,
    /// Fraction of the box covered by the other objects of the image.
    /// Never read from files; see [`ImageRecord::recompute_occlusion`].
    #[serde(skip)]
    pub occlusion: f64,
}

impl GroundTruthObject {
    pub fn new(id: u64, bbox: BBox, class_id: usize) -> Self {
        Self {
            id,
            bbox,
            class_id,
            occlusion: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub detections: Vec<Detection>,
    #[serde(default)]
    pub ground_truths: Vec<GroundTruthObject>,
}

impl ImageRecord {
    pub fn new(
        image_id: impl Into<String>,
        detections: Vec<Detection>,
        ground_truths: Vec<GroundTruthObject>,
    ) -> Self {
        let mut record = Self {
            image_id: image_id.into(),
            detections,
            ground_truths,
        };
        record.recompute_occlusion();
        record
    }

    pub fn recompute_occlusion(&mut self) {
        let boxes: Vec<BBox> = self.ground_truths.iter().map(|g| g.bbox).collect();
        for (k, gt) in self.ground_truths.iter_mut().enumerate() {
            let others: Vec<BBox> = boxes
                .iter()
                .enumerate()
                .filter(|&(o, _)| o != k)
                .map(|(_, b)| *b)
                .collect();
            gt.occlusion = geometry::covered_fraction(&gt.bbox, &others);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<ImageRecord>, num_classes: usize) -> Self {
        Self { images, num_classes }
    }

    /// Class count implied by the records: the score vector length if any
    /// detection exists, otherwise one past the largest ground-truth class.
    pub fn infer_num_classes(images: &[ImageRecord]) -> usize {
        let from_scores = images
            .iter()
            .flat_map(|r| r.detections.iter())
            .map(|d| d.scores.len())
            .max();
        let from_gt = images
            .iter()
            .flat_map(|r| r.ground_truths.iter())
            .map(|g| g.class_id + 1)
            .max();
        from_scores
            .into_iter()
            .chain(from_gt)
            .max()
            .unwrap_or(1)
            .max(1)
    }

    pub fn num_ground_truths(&self) -> usize {
        self.images.iter().map(|r| r.ground_truths.len()).sum()
    }

    pub fn num_detections(&self) -> usize {
        self.images.iter().map(|r| r.detections.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for record in &self.images {
            let violations = validate_record(record, self.num_classes);
            if !violations.is_empty() {
                return Err(Error::InvalidRecord {
                    image_id: record.image_id.clone(),
                    violations: violations.iter().map(|v| v.to_string()).collect(),
                });
            }
        }
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let images = read_records(std::io::BufReader::new(file), path)?;
        let num_classes = Self::infer_num_classes(&images);
        Ok(Self::new(images, num_classes))
    }

    pub fn write_jsonl(&self, out: impl Write) -> std::io::Result<()> {
        write_records(&self.images, out)
    }
}

/// Parses JSON Lines records; blank lines are skipped. Occlusion fractions
/// are recomputed for every record.
pub fn read_records(reader: impl BufRead, path: &Path) -> Result<Vec<ImageRecord>> {
    let mut images = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: ImageRecord = serde_json::from_str(&line).map_err(|source| Error::Parse {
            path: path.to_owned(),
            line: k + 1,
            source,
        })?;
        record.recompute_occlusion();
        images.push(record);
    }
    Ok(images)
}

pub fn write_records(images: &[ImageRecord], mut out: impl Write) -> std::io::Result<()> {
    for record in images {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subject {
    Detection(u64),
    GroundTruth(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    NonFiniteBox,
    DegenerateBox,
    ClassOutOfRange { class_id: usize },
    ScoreLength { expected: usize, found: usize },
    NonFiniteScore,
    NotOneHot,
    DuplicateId,
    OcclusionOutOfRange,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonFiniteBox => f.write_str("non-finite box"),
            Self::DegenerateBox => f.write_str("degenerate box"),
            Self::ClassOutOfRange { class_id } => write!(f, "class out of range ({class_id})"),
            Self::ScoreLength { expected, found } => {
                write!(f, "score vector length {found}, expected {expected}")
            }
            Self::NonFiniteScore => f.write_str("non-finite score"),
            Self::NotOneHot => f.write_str("score vector is not one-hot at class_id"),
            Self::DuplicateId => f.write_str("duplicate id"),
            Self::OcclusionOutOfRange => f.write_str("occlusion outside [0,1]"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub subject: Subject,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.subject {
            Subject::Detection(id) => write!(f, "detection {id}: {}", self.kind),
            Subject::GroundTruth(id) => write!(f, "ground truth {id}: {}", self.kind),
        }
    }
}

fn check_box(b: &BBox, subject: Subject, out: &mut Vec<Violation>) {
    if !b.is_finite() {
        out.push(Violation {
            subject,
            kind: ViolationKind::NonFiniteBox,
        });
    } else if !b.is_proper() {
        out.push(Violation {
            subject,
            kind: ViolationKind::DegenerateBox,
        });
    }
}

/// Checks every record invariant and reports all violations found. An empty
/// list means the record is well formed.
pub fn validate_record(record: &ImageRecord, num_classes: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for d in &record.detections {
        let subject = Subject::Detection(d.id);
        let mut push = |kind| {
            out.push(Violation { subject, kind });
        };
        if !seen.insert(subject) {
            push(ViolationKind::DuplicateId);
        }
        if d.class_id >= num_classes {
            push(ViolationKind::ClassOutOfRange {
                class_id: d.class_id,
            });
        }
        if d.scores.len() != num_classes || d.scores.is_empty() {
            push(ViolationKind::ScoreLength {
                expected: num_classes,
                found: d.scores.len(),
            });
        }
        if d.scores.iter().any(|s| !s.is_finite()) {
            push(ViolationKind::NonFiniteScore);
        } else if num_classes > 1
            && d
                .scores
                .iter()
                .enumerate()
                .any(|(c, &s)| c != d.class_id && s != 0.0)
        {
            push(ViolationKind::NotOneHot);
        }
        check_box(&d.bbox, subject, &mut out);
    }
    for g in &record.ground_truths {
        let subject = Subject::GroundTruth(g.id);
        if !seen.insert(subject) {
            out.push(Violation {
                subject,
                kind: ViolationKind::DuplicateId,
            });
        }
        if g.class_id >= num_classes {
            out.push(Violation {
                subject,
                kind: ViolationKind::ClassOutOfRange {
                    class_id: g.class_id,
                },
            });
        }
        if !(0.0..=1.0).contains(&g.occlusion) {
            out.push(Violation {
                subject,
                kind: ViolationKind::OcclusionOutOfRange,
            });
        }
        check_box(&g.bbox, subject, &mut out);
    }
    out
}
