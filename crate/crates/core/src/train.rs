//! Training loop, evaluation and the adversarial min-max step.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{pgd_attack, Dataset, PgdConfig};
use crate::engine::{Sgd, StepLrSchedule};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::sparsifiers::{HookContext, Sparsifier};
use crate::sparsity::{flops_forward, global_sparsity, FlopsLedger, MaskSet, Phase};
use crate::tensor::{Float, Tensor};

/// Optimization recipe for one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: Float,
    pub momentum: Float,
    pub weight_decay: Float,
    pub milestones: Vec<usize>,
    pub lr_factor: Float,
    pub seed: u64,
    /// PGD used to perturb every training batch.
    pub adversarial: Option<PgdConfig>,
    /// PGD used for test-set adversarial accuracy.
    pub eval_attack: Option<PgdConfig>,
    pub eval_batch: usize,
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 128,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            milestones: vec![20, 30],
            lr_factor: 0.1,
            seed: 0,
            adversarial: None,
            eval_attack: None,
            eval_batch: 500,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::input("epochs and batch sizes must be positive"));
        }
        if self.milestones.iter().any(|&m| m >= self.epochs) {
            return Err(Error::input("milestones must be below the epoch count"));
        }
        StepLrSchedule::new(self.learning_rate, self.milestones.clone(), self.lr_factor)?;
        Sgd::new(self.learning_rate, self.momentum, self.weight_decay)?;
        for pgd in self.adversarial.iter().chain(&self.eval_attack) {
            pgd.validate()?;
        }
        Ok(())
    }
}

/// Measurements emitted after every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: Float,
    pub train_acc: Float,
    pub test_clean_acc: Float,
    pub test_adv_acc: Option<Float>,
    pub global_sparsity: Float,
    pub cumulative_flops: f64,
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub clean_acc: Float,
    pub adv_acc: Option<Float>,
}

/// Result of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: Float,
    pub correct: usize,
    /// Training FLOPs spent, attack included.
    pub flops: f64,
}

/// Mixes a base seed with two counters (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn argmax(row: &[Float]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let c = logits.dims()[1];
    logits
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count()
}

/// One SGD step on `(x, y)`. With `attack`, the batch is first replaced by
/// its PGD perturbation against the current parameters. Each attack step
/// costs two forward passes of FLOPs.
pub fn adversarial_train_step(
    model: &mut Model,
    optimizer: &mut Sgd,
    masks: &MaskSet,
    x: Tensor,
    y: &[usize],
    attack: Option<&PgdConfig>,
    seed: u64,
) -> Result<StepOutcome> {
    let batch = y.len();
    let fwd = flops_forward(model.spec(), Some(masks), batch)?;
    let mut flops = 3.0 * fwd;
    let x = match attack {
        Some(cfg) => {
            let delta = pgd_attack(model, Some(masks), &x, y, cfg, seed)?;
            flops += 2.0 * fwd * cfg.steps as f64;
            delta.apply(&x)?
        }
        None => x,
    };
    let (loss, correct, grads) = {
        let mut pass = model.forward(x, Some(masks), false)?;
        let loss = pass.loss(y)?;
        let value = pass.tape.value(loss).item();
        let correct = count_correct(pass.logits(), y);
        (value, correct, pass.backward(loss)?)
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    model.zero_grad();
    model.accumulate_grads(&grads)?;
    optimizer.step(model, Some(masks))?;
    Ok(StepOutcome {
        loss,
        correct,
        flops,
    })
}

/// Clean accuracy, plus adversarial accuracy when `attack` is given.
/// Batch `b` of the attack uses seed `derive_seed(seed, 1, b)`.
pub fn evaluate(
    model: &Model,
    masks: Option<&MaskSet>,
    data: &Dataset,
    attack: Option<&PgdConfig>,
    seed: u64,
    batch: usize,
) -> Result<Evaluation> {
    if batch == 0 {
        return Err(Error::input("batch size must be positive"));
    }
    let n = data.len();
    let (mut clean, mut adv) = (0usize, 0usize);
    for (b, start) in (0..n).step_by(batch).enumerate() {
        let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
        let (x, y) = data.batch(&idx)?;
        if let Some(cfg) = attack {
            let delta = pgd_attack(model, masks, &x, &y, cfg, derive_seed(seed, 1, b as u64))?;
            adv += count_correct(&model.predict(delta.apply(&x)?, masks)?, &y);
        }
        clean += count_correct(&model.predict(x, masks)?, &y);
    }
    Ok(Evaluation {
        clean_acc: clean as Float / n as Float,
        adv_acc: attack.map(|_| adv as Float / n as Float),
    })
}

/// Receives the training state at phase start and after every epoch.
pub trait TrainObserver {
    fn on_start(&mut self, _phase: Phase, _model: &Model, _masks: &MaskSet) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _record: &MetricsRecord, _model: &Model, _masks: &MaskSet) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Datasets and recipe shared by the phases of a run.
pub struct Trainer<'a> {
    pub config: &'a TrainConfig,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
}

impl Trainer<'_> {
    fn context<'b>(&'b self, model: &'b mut Model, masks: &'b mut MaskSet) -> HookContext<'b> {
        HookContext {
            model,
            masks,
            train: self.train,
            epochs: self.config.epochs,
            seed: self.config.seed,
        }
    }

    /// Runs `config.epochs` epochs with a fresh optimizer, charging FLOPs to
    /// `phase`. Records are numbered from `epoch_offset`; shuffling depends
    /// only on the local epoch, so repeated phases see the same batches.
    pub fn run(
        &self,
        model: &mut Model,
        masks: &mut MaskSet,
        sparsifier: &mut dyn Sparsifier,
        phase: Phase,
        epoch_offset: usize,
        ledger: &mut FlopsLedger,
        observer: &mut dyn TrainObserver,
    ) -> Result<Vec<MetricsRecord>> {
        let cfg = self.config;
        cfg.validate()?;
        if model.classes() != self.train.classes() {
            return Err(Error::dim("model and dataset disagree on class count"));
        }
        let start = Instant::now();
        let schedule = StepLrSchedule::new(cfg.learning_rate, cfg.milestones.clone(), cfg.lr_factor)?;
        let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum, cfg.weight_decay)?;
        sparsifier.on_init(&mut self.context(model, masks))?;
        model.apply_masks(masks)?;
        observer.on_start(phase, model, masks)?;

        let n = self.train.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut iteration = 0usize;
        let mut records = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            sparsifier.on_epoch_start(epoch, &mut self.context(model, masks))?;
            opt.learning_rate = schedule.lr(epoch);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(epoch as u64);
            order.sort_unstable();
            order.shuffle(&mut rng);
            let (mut loss_sum, mut correct) = (0.0, 0usize);
            for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
                let (x, y) = self.train.batch(idx)?;
                let out = adversarial_train_step(
                    model,
                    &mut opt,
                    masks,
                    x,
                    &y,
                    cfg.adversarial.as_ref(),
                    derive_seed(cfg.seed, 2 + epoch as u64, b as u64),
                )?;
                ledger.add(phase, out.flops)?;
                loss_sum += out.loss * idx.len() as Float;
                correct += out.correct;
                sparsifier.after_optimizer_step(iteration, &mut self.context(model, masks))?;
                iteration += 1;
            }
            let eval = evaluate(
                model,
                Some(masks),
                self.test,
                cfg.eval_attack.as_ref(),
                derive_seed(cfg.seed, 0, epoch as u64),
                cfg.eval_batch,
            )?;
            let record = MetricsRecord {
                epoch: epoch_offset + epoch,
                train_loss: loss_sum / n as Float,
                train_acc: correct as Float / n as Float,
                test_clean_acc: eval.clean_acc,
                test_adv_acc: eval.adv_acc,
                global_sparsity: global_sparsity(masks),
                cumulative_flops: ledger.total(),
                wall_seconds: cfg.record_wall_time.then(|| start.elapsed().as_secs_f64()),
            };
            log::debug!(
                "epoch {} loss {:.4} train {:.3} test {:.3}",
                record.epoch,
                record.train_loss,
                record.train_acc,
                record.test_clean_acc
            );
            observer.on_epoch(&record, model, masks)?;
            records.push(record);
        }
        sparsifier.on_train_end(&mut self.context(model, masks))?;
        model.apply_masks(masks)?;
        Ok(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::model::build_mlp;

    fn toy() -> Dataset {
        let x = Tensor::from_fn(&[8, 4], |i| ((i * 7) % 10) as Float / 10.0);
        Dataset::new(x, (0..8).map(|i| i % 2).collect(), 2, Split::Train).unwrap()
    }

    #[test]
    fn derive_seed_spreads() {
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 0, 1));
        assert_ne!(derive_seed(1, 1, 0), derive_seed(1, 0, 1));
        assert_eq!(derive_seed(7, 3, 4), derive_seed(7, 3, 4));
    }

    #[test]
    fn zero_budget_attack_equals_clean_step() {
        let d = toy();
        let (x, y) = d.batch(&[0, 1, 2, 3]).unwrap();
        let masks = build_mlp(4, &[5], 2, 1).unwrap().spec().full_masks();
        let mut a = build_mlp(4, &[5], 2, 1).unwrap();
        let mut b = a.clone();
        let mut oa = Sgd::new(0.1, 0.9, 5e-4).unwrap();
        let mut ob = oa.clone();
        let zero = PgdConfig { epsilon: 0.0, alpha: 2.0 / 255.0, steps: 3, random_start: true };
        let ra = adversarial_train_step(&mut a, &mut oa, &masks, x.clone(), &y, Some(&zero), 5).unwrap();
        let rb = adversarial_train_step(&mut b, &mut ob, &masks, x, &y, None, 5).unwrap();
        assert_eq!(ra.loss, rb.loss);
        assert_eq!(a, b);
    }

    #[test]
    fn constant_model_scores_one_over_c() {
        let mut m = build_mlp(4, &[], 2, 0).unwrap();
        for l in m.layers_mut() {
            l.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
        }
        let e = evaluate(&m, None, &toy(), None, 0, 3).unwrap();
        assert_eq!(e.clean_acc, 0.5);
        assert_eq!(e.adv_acc, None);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.milestones = vec![10, 40];
        assert!(c.validate().is_err());
        let c = TrainConfig { momentum: 1.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }
}
