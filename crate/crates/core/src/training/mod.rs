//! Training: configuration, learning-rate schedule, dataset splitting,
//! perturbations used for augmentation and robustness sweeps, and the
//! minibatch Adam loop with best-validation checkpoint selection.

mod perturb;

pub use perturb::{break_piece_size, perturb, PerturbationSpec, ScribbleLabel};

use std::io::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::KnnMode;
use crate::model::{argmax, Checkpoint, CheckpointMeta, EdgeSource, Model, ModelConfig, NetworkInput};
use crate::numerics::{adam_step, AdamState, Tensor};
use crate::sketch::{DatasetSplit, Preprocess, Sketch, DEFAULT_RDP_EPSILON};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_interval: usize,
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub n_points: usize,
    pub k: usize,
    pub dilations: Vec<usize>,
    pub rdp_epsilon: f64,
    /// Perturbations sampled uniformly for augmented training sketches.
    pub augmentation: Vec<PerturbationSpec>,
    /// Fraction of training sketches perturbed each epoch when augmentation is set.
    pub augment_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr: 0.002,
            lr_decay_interval: 50,
            lr_decay_factor: 0.5,
            seed: 0,
            n_points: 256,
            k: 8,
            dilations: vec![1, 4, 8, 16],
            rdp_epsilon: DEFAULT_RDP_EPSILON,
            augmentation: Vec::new(),
            augment_fraction: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidArgument(format!("train config: {m}")));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail("lr must be finite and non-negative");
        }
        if self.lr_decay_interval == 0 || !(self.lr_decay_factor.is_finite() && self.lr_decay_factor > 0.0) {
            return fail("lr decay interval and factor must be positive");
        }
        if !(0.0..=1.0).contains(&self.augment_fraction) {
            return fail("augment_fraction must be in [0, 1]");
        }
        if !(self.rdp_epsilon.is_finite() && self.rdp_epsilon >= 0.0) {
            return fail("rdp_epsilon must be finite and non-negative");
        }
        self.augmentation.iter().try_for_each(PerturbationSpec::validate)
    }

    /// Learning rate for a zero-based epoch index.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(self.lr, self.lr_decay_factor, self.lr_decay_interval, epoch)
    }

    /// Model configuration with this config's sampling and neighborhood sizes.
    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            sample_points: self.n_points,
            k: self.k,
            units_per_branch: self.dilations.len(),
            dilations: self.dilations.clone(),
            num_classes,
            ..ModelConfig::default()
        }
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess { rdp_epsilon: self.rdp_epsilon, n_points: self.n_points }
    }

    /// Parse flat `key = value` text. `#` starts a comment; `augmentation`
    /// may repeat and appends one perturbation per line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| Error::Parse(format!("config line {}: {m}", i + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
                v.parse().map_err(|_| format!("bad value '{v}'"))
            }
            let r: std::result::Result<(), String> = (|| {
                match key {
                    "epochs" => config.epochs = num(value)?,
                    "batch_size" => config.batch_size = num(value)?,
                    "lr" => config.lr = num(value)?,
                    "lr_decay_interval" => config.lr_decay_interval = num(value)?,
                    "lr_decay_factor" => config.lr_decay_factor = num(value)?,
                    "seed" => config.seed = num(value)?,
                    "n_points" => config.n_points = num(value)?,
                    "k" => config.k = num(value)?,
                    "rdp_epsilon" => config.rdp_epsilon = num(value)?,
                    "augment_fraction" => config.augment_fraction = num(value)?,
                    "dilations" => {
                        config.dilations = value.split(',').map(|d| num(d.trim())).collect::<std::result::Result<_, _>>()?
                    }
                    "augmentation" => config.augmentation.push(value.parse().map_err(|e: Error| e.to_string())?),
                    other => return Err(format!("unknown key '{other}'")),
                }
                Ok(())
            })();
            r.map_err(err)?;
        }
        config.validate()?;
        Ok(config)
    }
}

/// `lr0 * factor^floor(epoch / interval)`.
pub fn lr_schedule(lr0: f64, factor: f64, interval: usize, epoch: usize) -> f64 {
    lr0 * factor.powi((epoch / interval.max(1)) as i32)
}

/// Seeded shuffle, then train, validation and test taken in order.
pub fn split_dataset(sketches: &[Sketch], counts: (usize, usize, usize), seed: u64) -> Result<DatasetSplit> {
    let (tr, va, te) = counts;
    if tr + va + te > sketches.len() {
        return Err(Error::InvalidArgument(format!(
            "split of {tr}+{va}+{te} needs {} sketches, have {}",
            tr + va + te,
            sketches.len()
        )));
    }
    let mut order: Vec<usize> = (0..sketches.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| order[range].iter().map(|&i| sketches[i].clone()).collect();
    Ok(DatasetSplit { train: take(0..tr), validation: take(tr..tr + va), test: take(tr + va..tr + va + te), seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

/// Epoch with the lowest validation loss (earliest on ties), or the last
/// epoch when no validation loss was recorded.
pub fn select_best_epoch(history: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for r in history {
        if let Some(v) = r.val_loss {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((r.epoch, v));
            }
        }
    }
    best.map(|(e, _)| e).or_else(|| history.last().map(|r| r.epoch))
}

pub fn write_history<W: Write>(mut writer: W, history: &[EpochRecord]) -> Result<()> {
    for r in history {
        serde_json::to_writer(&mut writer, r)?;
        writeln!(writer)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

struct Prepared {
    input: NetworkInput,
    targets: Vec<usize>,
}

fn prepare(sketch: &Sketch, preprocess: &Preprocess) -> Result<Prepared> {
    let s = preprocess.apply(sketch)?;
    let targets = s.labels().ok_or_else(|| Error::Validation("training sketch lost its labels".into()))?;
    Ok(Prepared { input: NetworkInput::from_sketch(&s)?, targets })
}

fn check_labeled(sketches: &[Sketch], classes: usize, what: &str) -> Result<()> {
    for (i, s) in sketches.iter().enumerate() {
        if !s.is_labeled() {
            return Err(Error::Validation(format!("{what} sketch {i} is unlabeled")));
        }
        s.validate_classes(classes).map_err(|e| Error::Validation(format!("{what} sketch {i}: {e}")))?;
    }
    Ok(())
}

/// Point-weighted mean eval-mode loss.
fn mean_loss(model: &Model, data: &[Prepared]) -> Result<f64> {
    let losses: Vec<(f64, usize)> = data
        .par_iter()
        .map(|p| Ok((model.loss(&p.input, &p.targets, EdgeSource::Knn(KnnMode::Eval))?, p.targets.len())))
        .collect::<Result<_>>()?;
    let total: usize = losses.iter().map(|l| l.1).sum();
    Ok(losses.iter().map(|&(l, n)| l * n as f64).sum::<f64>() / total as f64)
}

/// Minibatch Adam on mean point cross-entropy with stochastic dilated KNN.
///
/// Input sketches are raw labeled drawings; each is preprocessed to
/// `model_config.sample_points` points, after augmentation when that applies.
pub fn train(split: &DatasetSplit, model_config: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    model_config.validate()?;
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let classes = model_config.num_classes;
    check_labeled(&split.train, classes, "train")?;
    check_labeled(&split.validation, classes, "validation")?;

    let preprocess = Preprocess { rdp_epsilon: config.rdp_epsilon, n_points: model_config.sample_points };
    let clean: Vec<Prepared> = split.train.iter().map(|s| prepare(s, &preprocess)).collect::<Result<_>>()?;
    let validation: Vec<Prepared> = split.validation.iter().map(|s| prepare(s, &preprocess)).collect::<Result<_>>()?;

    let mut model = Model::new(model_config.clone(), config.seed)?;
    let mut params = model.params.to_vec();
    let mut adam = AdamState::new(&params, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_7A11);

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Vec<Tensor>, usize)> = None;
    let mut order: Vec<usize> = (0..clean.len()).collect();

    for epoch in 0..config.epochs {
        adam.lr = config.lr_at(epoch);
        order.shuffle(&mut rng);

        // Augmented copies are rebuilt from the raw sketch every epoch.
        let mut augmented: Vec<Option<Prepared>> = Vec::with_capacity(order.len());
        for &i in &order {
            let aug = if !config.augmentation.is_empty() && rng.random::<f64>() < config.augment_fraction {
                let spec = config.augmentation.choose(&mut rng).expect("nonempty");
                let perturbed = perturb(&split.train[i], spec, rng.next_u64())?;
                Some(prepare(&perturbed, &preprocess)?)
            } else {
                None
            };
            augmented.push(aug);
        }

        let (mut loss_sum, mut point_sum) = (0.0, 0usize);
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let start = batch_idx * config.batch_size;
            let items: Vec<(&Prepared, u64)> = batch
                .iter()
                .enumerate()
                .map(|(j, &i)| (augmented[start + j].as_ref().unwrap_or(&clean[i]), rng.next_u64()))
                .collect();
            let points: usize = items.iter().map(|(p, _)| p.targets.len()).sum();
            let results: Vec<_> = items
                .par_iter()
                .map(|(p, seed)| {
                    let weight = p.targets.len() as f64 / points as f64;
                    model.loss_and_grads(&p.input, &p.targets, EdgeSource::Knn(KnnMode::Train { seed: *seed }), weight)
                })
                .collect::<Result<_>>()?;

            let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            for r in &results {
                for (g, rg) in grads.iter_mut().zip(&r.grads) {
                    g.add_assign(rg);
                }
                loss_sum += r.loss * r.points as f64;
                point_sum += r.points;
            }
            adam_step(&mut params, &grads, &mut adam)?;
            model.params.set_from_slice(&params)?;
        }

        let train_loss = loss_sum / point_sum as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numerics(format!("epoch {epoch}: training loss is {train_loss}")));
        }
        let val_loss = if validation.is_empty() { None } else { Some(mean_loss(&model, &validation)?) };
        if let Some(v) = val_loss {
            if !v.is_finite() {
                return Err(Error::Numerics(format!("epoch {epoch}: validation loss is {v}")));
            }
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, params.clone(), epoch));
            }
        }
        history.push(EpochRecord { epoch, train_loss, val_loss, lr: adam.lr });
    }

    let (final_params, best_epoch) = match best {
        Some((_, p, e)) => (p, e),
        None => (params, config.epochs - 1),
    };
    model.params.set_from_slice(&final_params)?;
    let category = split.train[0].category.clone();
    let checkpoint = Checkpoint {
        meta: CheckpointMeta {
            model: model_config.clone(),
            training: Some(config.clone()),
            rdp_epsilon: config.rdp_epsilon,
            seed: config.seed,
            category,
            classes: (0..classes).map(|c| c.to_string()).collect(),
            best_epoch: Some(best_epoch),
        },
        params: model.params,
    };
    Ok(TrainOutcome { checkpoint, history })
}

/// Fraction of points whose eval-mode prediction matches the label, over
/// sketches preprocessed for `model`.
pub fn point_accuracy(model: &Model, sketches: &[Sketch], preprocess: &Preprocess) -> Result<f64> {
    let counts: Vec<(usize, usize)> = sketches
        .par_iter()
        .map(|s| {
            let p = prepare(s, preprocess)?;
            let logits = model.logits(&p.input, EdgeSource::Knn(KnnMode::Eval))?;
            let hit = p.targets.iter().enumerate().filter(|&(r, &t)| argmax(logits.row(r)) == t).count();
            Ok((hit, p.targets.len()))
        })
        .collect::<Result<_>>()?;
    let (hit, total) = counts.iter().fold((0, 0), |(h, t), &(a, b)| (h + a, t + b));
    if total == 0 {
        return Err(Error::DegenerateInput("no points to score".into()));
    }
    Ok(hit as f64 / total as f64)
}

#[cfg(test)]
mod tests;
