//! Matching-derived labels and class-balanced weights for the logistic loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::detections::ImageRecord;
use crate::error::Result;
use crate::eval::{match_indices, Label};
use crate::gnet::model::GnetModel;
use crate::scalar::Scalar;

/// Running label frequencies used to weight examples so that the expected
/// weight carried by positives is `gamma`, split evenly across classes, and
/// the negatives carry `1 - gamma`.
///
/// Counts start at one per category so the weights are defined before any
/// label has been seen.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub positives: Vec<u64>,
    pub negatives: u64,
}

impl ClassBalance {
    pub fn new(num_classes: usize) -> Self {
        Self {
            positives: vec![1; num_classes.max(1)],
            negatives: 1,
        }
    }

    pub fn observe(&mut self, labels: &[(usize, Label)]) {
        for &(class, label) in labels {
            match label {
                Label::Positive => self.positives[class] += 1,
                Label::Negative => self.negatives += 1,
            }
        }
    }

    fn total(&self) -> f64 {
        (self.positives.iter().sum::<u64>() + self.negatives) as f64
    }

    pub fn positive_weight(&self, class: usize, gamma: f64) -> f64 {
        let freq = self.positives[class] as f64 / self.total();
        gamma / (self.positives.len() as f64 * freq)
    }

    pub fn negative_weight(&self, gamma: f64) -> f64 {
        let freq = self.negatives as f64 / self.total();
        (1.0 - gamma) / freq
    }

    pub fn weights(&self, labels: &[(usize, Label)], gamma: f64) -> Vec<f64> {
        labels
            .iter()
            .map(|&(class, label)| match label {
                Label::Positive => self.positive_weight(class, gamma),
                Label::Negative => self.negative_weight(gamma),
            })
            .collect()
    }
}

/// Frozen labels and weights for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms {
    pub labels: Vec<Label>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    pub loss: f64,
    /// One gradient buffer per model parameter, in parameter order.
    pub grads: Vec<Vec<T>>,
    pub labels: Vec<Label>,
    /// Logit of each detection at its own class.
    pub logits: Vec<f64>,
}

fn run<T: Scalar>(
    model: &GnetModel<T>,
    record: &ImageRecord,
    terms: impl FnOnce(&[f64]) -> LossTerms,
) -> Result<LossOutput<T>> {
    let zero_grads = || model.params().iter().map(|p| vec![T::zero(); p.len()]).collect();
    if record.detections.is_empty() {
        return Ok(LossOutput {
            loss: 0.0,
            grads: zero_grads(),
            labels: vec![],
            logits: vec![],
        });
    }
    let mut graph = Graph::new();
    let params: Vec<Var> = model.params().iter().map(|p| graph.parameter(p.clone())).collect();
    let logits = model.build(&mut graph, &params, record)?;
    let classes: Vec<usize> = record.detections.iter().map(|d| d.class_id).collect();
    let s = graph.pick_columns(logits, &classes)?;
    let s_values: Vec<f64> = graph.value(s).values().iter().map(|v| v.to_f64_lossless()).collect();
    let LossTerms { labels, weights } = terms(&s_values);
    let y: Vec<T> = labels.iter().map(|l| T::of(l.sign())).collect();
    let w: Vec<T> = weights.iter().map(|&w| T::of(w)).collect();
    let loss = graph.weighted_logistic_loss(s, &y, &w)?;
    graph.backward(loss)?;
    let grads = params
        .iter()
        .zip(model.params())
        .map(|(&v, p)| graph.grad(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); p.len()]))
        .collect();
    Ok(LossOutput {
        loss: graph.value(loss).values()[0].to_f64_lossless(),
        grads,
        labels,
        logits: s_values,
    })
}

/// Loss and parameter gradients for fixed labels and weights.
pub fn loss_and_grads<T: Scalar>(model: &GnetModel<T>, record: &ImageRecord, terms: &LossTerms) -> Result<LossOutput<T>> {
    run(model, record, |_| terms.clone())
}

/// Labels from matching the new scores against the ground truth at
/// `criterion`; the matching itself is not differentiated.
pub fn matching_labels(record: &ImageRecord, logits: &[f64], criterion: f64) -> Vec<(usize, Label)> {
    let matched = match_indices(&record.detections, logits, &record.ground_truths, criterion);
    record
        .detections
        .iter()
        .zip(matched)
        .map(|(d, m)| (d.class_id, if m.is_some() { Label::Positive } else { Label::Negative }))
        .collect()
}

/// Forward pass, matching on the new scores, balance update and weighted
/// logistic loss with gradients, for one image.
pub fn training_loss<T: Scalar>(
    model: &GnetModel<T>,
    record: &ImageRecord,
    criterion: f64,
    balance: &mut ClassBalance,
) -> Result<LossOutput<T>> {
    let gamma = model.config().gamma;
    run(model, record, |logits| {
        let labels = matching_labels(record, logits, criterion);
        balance.observe(&labels);
        LossTerms {
            weights: balance.weights(&labels, gamma),
            labels: labels.into_iter().map(|l| l.1).collect(),
        }
    })
}
