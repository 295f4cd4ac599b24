//! Single-worker training loop with a piecewise-constant learning-rate
//! schedule, epoch-shuffled sampling and bit-exact resumption.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamState};
use crate::detections::Dataset;
use crate::error::{Error, Result};
use crate::eval::{coco_criteria, evaluate, EvalConfig};
use crate::gnet::{checkpoint, rescore, training_loss, ClassBalance, GnetModel};
use crate::nms;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrStep {
    pub iteration: u64,
    pub multiplier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub base_lr: f64,
    /// Multipliers applied from their iteration onwards, cumulatively.
    pub lr_schedule: Vec<LrStep>,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// 0 disables periodic validation.
    pub eval_every: u64,
    /// Images whose gradients are summed into one update.
    pub gradient_accumulation: usize,
    /// IoU criterion of the labelling matcher.
    pub match_criterion: f64,
    /// GreedyNMS threshold applied to the inputs before training.
    pub prefilter_theta: Option<f64>,
    pub ema_decay: f64,
}

impl Default for TrainConfig {
    /// 30k iterations from 1e-3, divided by ten every 10k.
    fn default() -> Self {
        Self {
            iterations: 30_000,
            base_lr: 1e-3,
            lr_schedule: vec![
                LrStep {
                    iteration: 10_000,
                    multiplier: 0.1,
                },
                LrStep {
                    iteration: 20_000,
                    multiplier: 0.1,
                },
            ],
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            gradient_accumulation: 1,
            match_criterion: 0.5,
            prefilter_theta: Some(nms::DEFAULT_PREFILTER_THETA),
            ema_decay: 0.99,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.base_lr > 0.0) {
            return fail(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.lr_schedule.windows(2).any(|w| w[0].iteration >= w[1].iteration) {
            return fail("lr_schedule iterations must be strictly increasing".into());
        }
        if self.lr_schedule.iter().any(|s| !(s.multiplier > 0.0)) {
            return fail("lr_schedule multipliers must be positive".into());
        }
        if self.gradient_accumulation == 0 {
            return fail("gradient_accumulation must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.match_criterion) {
            return fail("match_criterion must lie in [0,1]".into());
        }
        Ok(())
    }

    /// Learning rate for the update taken at iteration `t` (0-based).
    pub fn lr_at(&self, t: u64) -> f64 {
        self.lr_schedule
            .iter()
            .filter(|s| s.iteration <= t)
            .fold(self.base_lr, |lr, s| lr * s.multiplier)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryRow {
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
    pub val_ap_05: Option<f64>,
    pub val_ap_range: Option<f64>,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut s = String::from("iteration,loss,lr,val_ap_05,val_ap_range\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.iteration,
            r.loss,
            r.lr,
            opt(r.val_ap_05),
            opt(r.val_ap_range)
        );
    }
    s
}

/// Position of the epoch-shuffled sampler. The permutation of an epoch is
/// derived from `(seed, epoch)` alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub seed: u64,
    pub epoch: u64,
    pub cursor: usize,
}

fn epoch_order(seed: u64, epoch: u64, len: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// Everything besides the model and optimizer moments needed to resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSidecar {
    pub config: TrainConfig,
    pub iteration: u64,
    pub sampler: SamplerState,
    pub balance: ClassBalance,
    pub ema_loss: Option<f64>,
}

pub struct Trainer<T> {
    model: GnetModel<T>,
    adam: AdamState<T>,
    config: TrainConfig,
    train: Dataset,
    val: Option<Dataset>,
    iteration: u64,
    sampler: SamplerState,
    order: Vec<usize>,
    balance: ClassBalance,
    ema_loss: Option<f64>,
    history: Vec<HistoryRow>,
}

fn prepare(data: &Dataset, theta: Option<f64>) -> Dataset {
    match theta {
        Some(t) => nms::apply_nms(data, t, data.num_classes > 1),
        None => data.clone(),
    }
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: GnetModel<T>, train: &Dataset, val: Option<&Dataset>, config: TrainConfig) -> Result<Self> {
        let adam = AdamState::new(model.params());
        let sampler = SamplerState {
            seed: config.seed,
            epoch: 0,
            cursor: 0,
        };
        let balance = ClassBalance::new(model.config().num_classes);
        Self::assemble(model, adam, train, val, config, 0, sampler, balance, None)
    }

    /// Continues from a checkpointed model, its optimizer moments and the
    /// sidecar written alongside them.
    pub fn resume(
        model: GnetModel<T>,
        adam: AdamState<T>,
        sidecar: TrainSidecar,
        train: &Dataset,
        val: Option<&Dataset>,
    ) -> Result<Self> {
        Self::assemble(
            model,
            adam,
            train,
            val,
            sidecar.config,
            sidecar.iteration,
            sidecar.sampler,
            sidecar.balance,
            sidecar.ema_loss,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        model: GnetModel<T>,
        adam: AdamState<T>,
        train: &Dataset,
        val: Option<&Dataset>,
        config: TrainConfig,
        iteration: u64,
        sampler: SamplerState,
        balance: ClassBalance,
        ema_loss: Option<f64>,
    ) -> Result<Self> {
        config.validate()?;
        if train.images.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        for data in std::iter::once(train).chain(val) {
            if data.num_classes != model.config().num_classes {
                return Err(Error::ClassMismatch {
                    model: model.config().num_classes,
                    data: data.num_classes,
                });
            }
        }
        let train = prepare(train, config.prefilter_theta);
        let val = val.map(|v| prepare(v, config.prefilter_theta));
        let order = epoch_order(sampler.seed, sampler.epoch, train.images.len());
        Ok(Self {
            model,
            adam,
            config,
            train,
            val,
            iteration,
            sampler,
            order,
            balance,
            ema_loss,
            history: Vec::new(),
        })
    }

    pub fn model(&self) -> &GnetModel<T> {
        &self.model
    }

    pub fn into_model(self) -> GnetModel<T> {
        self.model
    }

    pub fn adam(&self) -> &AdamState<T> {
        &self.adam
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    pub fn ema_loss(&self) -> Option<f64> {
        self.ema_loss
    }

    pub fn sidecar(&self) -> TrainSidecar {
        TrainSidecar {
            config: self.config.clone(),
            iteration: self.iteration,
            sampler: self.sampler,
            balance: self.balance.clone(),
            ema_loss: self.ema_loss,
        }
    }

    fn next_image(&mut self) -> usize {
        if self.sampler.cursor == self.order.len() {
            self.sampler.epoch += 1;
            self.sampler.cursor = 0;
            self.order = epoch_order(self.sampler.seed, self.sampler.epoch, self.order.len());
        }
        let k = self.order[self.sampler.cursor];
        self.sampler.cursor += 1;
        k
    }

    /// One optimizer update over `gradient_accumulation` images.
    pub fn step(&mut self) -> Result<&HistoryRow> {
        let lr = self.config.lr_at(self.iteration);
        let mut total_loss = 0.0;
        let mut grads: Option<Vec<Vec<T>>> = None;
        for _ in 0..self.config.gradient_accumulation {
            let k = self.next_image();
            let record = &self.train.images[k];
            let out = training_loss(&self.model, record, self.config.match_criterion, &mut self.balance)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    image_id: record.image_id.clone(),
                    iteration: self.iteration,
                    loss: out.loss,
                });
            }
            total_loss += out.loss;
            match &mut grads {
                None => grads = Some(out.grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(out.grads) {
                        for (x, y) in a.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                }
            }
        }
        let grads = grads.expect("at least one image per step");
        let mut params: Vec<_> = self.model.params_mut().iter_mut().collect();
        adam_step(&mut params, &grads, &mut self.adam, T::of(lr))?;
        self.iteration += 1;
        let decay = self.config.ema_decay;
        self.ema_loss = Some(match self.ema_loss {
            None => total_loss,
            Some(e) => decay * e + (1.0 - decay) * total_loss,
        });
        let (val_ap_05, val_ap_range) = if self.config.eval_every > 0 && self.iteration.is_multiple_of(self.config.eval_every) {
            match self.validate()? {
                Some((a, b)) => (Some(a), Some(b)),
                None => (None, None),
            }
        } else {
            (None, None)
        };
        self.history.push(HistoryRow {
            iteration: self.iteration,
            loss: total_loss,
            lr,
            val_ap_05,
            val_ap_range,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// AP at 0.5 and averaged over 0.5:0.95 on the validation set.
    pub fn validate(&self) -> Result<Option<(f64, f64)>> {
        let Some(val) = &self.val else {
            return Ok(None);
        };
        let rescored = rescore(&self.model, val)?;
        let report = evaluate(
            &rescored,
            None,
            &EvalConfig {
                criteria: coco_criteria(),
                bins: vec![],
            },
        )?;
        Ok(Some((report.overall.ap(0.5).unwrap_or(0.0), report.overall.ap_range)))
    }

    /// Steps until `until` iterations have been taken, calling
    /// `on_checkpoint` every `checkpoint_every` iterations.
    pub fn run_until(&mut self, until: u64, mut on_checkpoint: impl FnMut(&Self) -> Result<()>) -> Result<()> {
        while self.iteration < until {
            self.step()?;
            let every = self.config.checkpoint_every;
            if every > 0 && self.iteration.is_multiple_of(every) {
                on_checkpoint(self)?;
            }
        }
        Ok(())
    }

    /// Trains for the configured number of iterations.
    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.config.iterations, |_| Ok(()))
    }

    /// Writes the model container (with optimizer moments) to `path` and the
    /// sidecar to `path` with a `.json` extension appended.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        checkpoint::save(path, &self.model, Some(&self.adam))?;
        let side = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(&side, json).map_err(|e| Error::io(side, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>, train: &Dataset, val: Option<&Dataset>) -> Result<Self> {
        let path = path.as_ref();
        let ckpt = checkpoint::load::<T>(path)?;
        let adam = ckpt
            .adam
            .ok_or_else(|| Error::Checkpoint("checkpoint holds no optimizer state".into()))?;
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: TrainSidecar = serde_json::from_str(&text)?;
        Self::resume(ckpt.model, adam, sidecar, train, val)
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Trains a copy of `model` and returns it with the per-iteration history.
pub fn train<T: Scalar>(
    model: GnetModel<T>,
    dataset: &Dataset,
    config: TrainConfig,
    val: Option<&Dataset>,
) -> Result<(GnetModel<T>, Vec<HistoryRow>)> {
    let mut trainer = Trainer::new(model, dataset, val, config)?;
    trainer.run()?;
    let history = trainer.history.clone();
    Ok((trainer.into_model(), history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnet::GnetConfig;
    use crate::synth::{generate_dataset, Preset};

    fn tiny() -> GnetModel<f64> {
        GnetModel::new(GnetConfig {
            num_blocks: 2,
            ..GnetConfig::with_feature_dim(8)
        })
        .unwrap()
    }

    fn config(iterations: u64) -> TrainConfig {
        TrainConfig {
            iterations,
            base_lr: 1e-3,
            lr_schedule: vec![],
            seed: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_is_cumulative() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 1e-3);
        assert_eq!(c.lr_at(9_999), 1e-3);
        assert_eq!(c.lr_at(10_000), 1e-3 * 0.1);
        assert_eq!(c.lr_at(25_000), 1e-3 * 0.1 * 0.1);
    }

    #[test]
    fn bad_schedules_rejected() {
        let mut c = TrainConfig::default();
        c.lr_schedule.swap(0, 1);
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lr_schedule[0].multiplier = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_iterations_leave_model_unchanged() {
        let data = generate_dataset(&Preset::sparse(), 3, 1).unwrap();
        let model = tiny();
        let (trained, history) = train(model.clone(), &data, config(0), None).unwrap();
        assert_eq!(trained, model);
        assert!(history.is_empty());
    }

    #[test]
    fn epochs_visit_every_image_once() {
        let data = generate_dataset(&Preset::sparse(), 5, 2).unwrap();
        let mut t = Trainer::new(tiny(), &data, None, config(10)).unwrap();
        let mut seen: Vec<usize> = (0..5).map(|_| t.next_image()).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(t.sampler.epoch, 0);
        t.next_image();
        assert_eq!(t.sampler.epoch, 1);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let data = generate_dataset(&Preset::crowded(), 4, 3).unwrap();
        let mut full = Trainer::new(tiny(), &data, None, config(9)).unwrap();
        full.run().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut first = Trainer::new(tiny(), &data, None, config(9)).unwrap();
        first.run_until(5, |_| Ok(())).unwrap();
        first.save_checkpoint(&path).unwrap();
        let mut second = Trainer::<f64>::load_checkpoint(&path, &data, None).unwrap();
        second.run().unwrap();

        assert_eq!(second.model(), full.model());
        assert_eq!(second.adam(), full.adam());
        assert_eq!(second.sidecar(), full.sidecar());
        let tail: Vec<f64> = full.history()[5..].iter().map(|r| r.loss).collect();
        let resumed: Vec<f64> = second.history().iter().map(|r| r.loss).collect();
        assert_eq!(tail, resumed);
    }

    #[test]
    fn validation_columns_filled() {
        let data = generate_dataset(&Preset::sparse(), 3, 5).unwrap();
        let c = TrainConfig {
            eval_every: 2,
            ..config(4)
        };
        let (_, history) = train(tiny(), &data, c, Some(&data)).unwrap();
        assert!(history[0].val_ap_05.is_none());
        assert!(history[1].val_ap_05.is_some());
        let csv = history_csv(&history);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(1).unwrap().ends_with(",,"));
    }

    #[test]
    fn non_finite_loss_aborts_with_image_id() {
        let data = generate_dataset(&Preset::crowded(), 2, 6).unwrap();
        let mut model = tiny();
        let last = model.params().len() - 1;
        model.params_mut()[last].values_mut()[0] = f64::NAN;
        let err = train(model, &data, config(1), None).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
    }
}
