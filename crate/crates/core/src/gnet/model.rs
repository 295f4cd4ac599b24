use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{sigmoid, Graph, Tensor, Var};
use crate::detections::{Dataset, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::raw_pair_feature_len;
use crate::gnet::config::GnetConfig;
use crate::gnet::pairs::build_pair_index;
use crate::scalar::Scalar;

/// Indices of one fully connected layer's weight and bias in the parameter
/// list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dense {
    weight: usize,
    bias: usize,
    relu: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct BlockLayers {
    reduce: Dense,
    pair: Vec<Dense>,
    post: Vec<Dense>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    encoder: Vec<Dense>,
    blocks: Vec<BlockLayers>,
    head: Vec<Dense>,
}

/// Name and shape of every parameter, in storage order, plus the layer
/// wiring that refers to them.
pub(crate) fn plan(config: &GnetConfig) -> (Vec<(String, Vec<usize>)>, Layout) {
    let mut specs = Vec::new();
    let mut dense = |name: String, d_in: usize, d_out: usize, relu: bool| {
        specs.push((format!("{name}.weight"), vec![d_in, d_out]));
        specs.push((format!("{name}.bias"), vec![d_out]));
        Dense {
            weight: specs.len() - 2,
            bias: specs.len() - 1,
            relu,
        }
    };
    let c = config.feature_dim;
    let r = config.reduced_dim;
    let g = config.pair_feature_dim;
    let l = config.pair_width();

    let mut encoder = Vec::new();
    let mut width = raw_pair_feature_len(config.num_classes);
    for k in 0..config.pair_encoder_layers {
        encoder.push(dense(format!("encoder.{k}"), width, g, true));
        width = g;
    }
    let mut blocks = Vec::new();
    for b in 0..config.num_blocks {
        let reduce = dense(format!("block.{b}.reduce"), c, r, true);
        let pair = (0..config.block_pair_layers)
            .map(|k| dense(format!("block.{b}.pair.{k}"), l, l, true))
            .collect();
        let post = (0..config.post_pool_layers)
            .map(|k| {
                let last = k + 1 == config.post_pool_layers;
                let out = if last { c } else { l };
                // the layer feeding the residual sum stays linear
                dense(format!("block.{b}.post.{k}"), l, out, !last)
            })
            .collect();
        blocks.push(BlockLayers { reduce, pair, post });
    }
    let head = (0..config.score_head_layers)
        .map(|k| {
            let last = k + 1 == config.score_head_layers;
            let out = if last { config.num_classes } else { c };
            dense(format!("head.{k}"), c, out, !last)
        })
        .collect();
    (specs, Layout { encoder, blocks, head })
}

/// All learnable tensors of the rescoring network.
#[derive(Clone, Debug, PartialEq)]
pub struct GnetModel<T> {
    config: GnetConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    layout: Layout,
}

impl<T: Scalar> GnetModel<T> {
    /// Xavier-uniform weights and zero biases, seeded by `config.init_seed`.
    pub fn new(config: GnetConfig) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = plan(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape) in specs {
            let t = if shape.len() == 2 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let n = shape[0] * shape[1];
                let v = (0..n).map(|_| T::of(rng.gen_range(-limit..limit))).collect();
                Tensor::new(shape, v)?
            } else {
                Tensor::zeros(shape)
            };
            names.push(name);
            params.push(t);
        }
        Ok(Self {
            config,
            names,
            params,
            layout,
        })
    }

    /// Assembles a model from named tensors, rejecting any name or shape that
    /// disagrees with `config`.
    pub fn from_parts(config: GnetConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = plan(&config);
        if specs.len() != named.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                specs.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for ((name, shape), (found_name, t)) in specs.into_iter().zip(named) {
            if name != found_name || shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {found_name} {:?} does not match {name} {shape:?}",
                    t.shape()
                )));
            }
            names.push(name);
            params.push(t);
        }
        Ok(Self {
            config,
            names,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &GnetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Records the forward pass for `record` on `graph` and returns the
    /// `n x C` logits. `params` are the graph handles of [`Self::params`].
    pub(crate) fn build(&self, graph: &mut Graph<T>, params: &[Var], record: &ImageRecord) -> Result<Var> {
        let cfg = &self.config;
        let dets = &record.detections;
        let n = dets.len();
        let pairs = build_pair_index(dets, cfg.neighbor_iou_threshold);
        let raw_width = raw_pair_feature_len(cfg.num_classes);
        let raw = Tensor::from_f64(vec![pairs.len(), raw_width], &pairs.raw_features(dets, cfg.num_classes))?;

        let dense = |graph: &mut Graph<T>, x: Var, d: &Dense| -> Result<Var> {
            let y = graph.linear(x, params[d.weight], params[d.bias])?;
            Ok(if d.relu { graph.relu(y) } else { y })
        };

        let mut pair_features = graph.input(raw);
        for d in &self.layout.encoder {
            pair_features = dense(graph, pair_features, d)?;
        }
        let mut x = graph.input(Tensor::zeros(vec![n, cfg.feature_dim]));
        for block in &self.layout.blocks {
            let reduced = dense(graph, x, &block.reduce)?;
            let left = graph.gather_rows(reduced, &pairs.first)?;
            let right = graph.gather_rows(reduced, &pairs.second)?;
            let mut h = graph.concat(&[left, right, pair_features])?;
            for d in &block.pair {
                h = dense(graph, h, d)?;
            }
            let mut pooled = graph.segment_max(h, pairs.segments(), n)?;
            for d in &block.post {
                pooled = dense(graph, pooled, d)?;
            }
            x = graph.add(x, pooled)?;
        }
        for d in &self.layout.head {
            x = dense(graph, x, d)?;
        }
        Ok(x)
    }

    /// Raw logits `n x C` for every detection of `record`.
    pub fn forward(&self, record: &ImageRecord) -> Result<Tensor<T>> {
        let n = record.detections.len();
        if n == 0 {
            return Tensor::new(vec![0, self.config.num_classes], vec![]);
        }
        let mut graph = Graph::new();
        let params: Vec<Var> = self.params.iter().map(|p| graph.input(p.clone())).collect();
        let out = self.build(&mut graph, &params, record)?;
        Ok(graph.value(out).clone())
    }

    /// Replaces each detection's class score with the sigmoid of its logit.
    /// Boxes, classes and cardinality are untouched; nothing is suppressed.
    pub fn rescore_record(&self, record: &ImageRecord) -> Result<ImageRecord> {
        let logits = self.forward(record)?;
        let mut out = record.clone();
        for (r, det) in out.detections.iter_mut().enumerate() {
            let z = logits.row(r)[det.class_id];
            det.set_score(sigmoid(z).to_f64_lossless());
        }
        Ok(out)
    }
}

/// Rescores every image; images are processed in parallel against one
/// shared parameter set.
pub fn rescore<T: Scalar>(model: &GnetModel<T>, dataset: &Dataset) -> Result<Dataset> {
    if model.config().num_classes != dataset.num_classes {
        return Err(Error::ClassMismatch {
            model: model.config().num_classes,
            data: dataset.num_classes,
        });
    }
    let images = dataset
        .images
        .par_iter()
        .map(|r| model.rescore_record(r))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(images, dataset.num_classes))
}
