//! Gradient-descent training with best-checkpoint selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rfa_backward, AdjustmentMatrix, FusionModel, FusionParameters, NaiveWeights, PlainAttention};
use crate::config::{MergeKind, OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::{accuracy_and_wf1};

/// A merge with a flat parameter vector and a per-sample loss gradient.
pub trait Trainable: Clone {
    fn flat(&self) -> Vec<f64>;
    fn set_flat(&mut self, flat: &[f64]);
    fn loss_grad(&self, m: &AdjustmentMatrix, gold: usize) -> Result<(f64, Vec<f64>)>;
    fn into_model(self) -> FusionModel;
}

impl Trainable for FusionParameters {
    fn flat(&self) -> Vec<f64> {
        FusionParameters::flat(self)
    }

    fn set_flat(&mut self, flat: &[f64]) {
        FusionParameters::set_flat(self, flat)
    }

    fn loss_grad(&self, m: &AdjustmentMatrix, gold: usize) -> Result<(f64, Vec<f64>)> {
        rfa_backward(m, self, gold).map(|(l, g)| (l, g.flat()))
    }

    fn into_model(self) -> FusionModel {
        FusionModel::Rfa(self)
    }
}

impl Trainable for NaiveWeights {
    fn flat(&self) -> Vec<f64> {
        self.m.clone()
    }

    fn set_flat(&mut self, flat: &[f64]) {
        self.m.copy_from_slice(flat);
    }

    fn loss_grad(&self, m: &AdjustmentMatrix, gold: usize) -> Result<(f64, Vec<f64>)> {
        self.backward(m, gold)
    }

    fn into_model(self) -> FusionModel {
        FusionModel::Weights(self)
    }
}

impl Trainable for PlainAttention {
    fn flat(&self) -> Vec<f64> {
        PlainAttention::flat(self)
    }

    fn set_flat(&mut self, flat: &[f64]) {
        PlainAttention::set_flat(self, flat)
    }

    fn loss_grad(&self, m: &AdjustmentMatrix, gold: usize) -> Result<(f64, Vec<f64>)> {
        self.backward(m, gold)
    }

    fn into_model(self) -> FusionModel {
        FusionModel::Attn(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Epoch of the selected checkpoint; 0 is the initialization.
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub best_weighted_f1: f64,
    /// Mean training loss per epoch, before each epoch's updates.
    pub loss_history: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

fn labeled(data: &[AdjustmentMatrix]) -> Result<Vec<(&AdjustmentMatrix, usize)>> {
    let out: Vec<_> = data
        .iter()
        .filter_map(|m| m.gold_label.map(|g| (m, g)))
        .collect();
    if out.is_empty() {
        return Err(Error::Data("fusion training needs at least one labeled sample".into()));
    }
    Ok(out)
}

fn score<M: Trainable>(model: &M, data: &[(&AdjustmentMatrix, usize)], n: usize) -> Result<(f64, f64)> {
    let fm = model.clone().into_model();
    let mut pred = Vec::with_capacity(data.len());
    let mut gold = Vec::with_capacity(data.len());
    for (m, g) in data {
        pred.push(fm.apply(m)?.class);
        gold.push(*g);
    }
    accuracy_and_wf1(&pred, &gold, n)
}

/// Trains `init` on the labeled samples of `data`, selecting the checkpoint
/// with the best accuracy (weighted F1 breaks ties) on `selection` (or on
/// `data` when `None`). Deterministic for a fixed `seed`.
pub fn train_model<M: Trainable>(
    init: M,
    data: &[AdjustmentMatrix],
    selection: Option<&[AdjustmentMatrix]>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(M, TrainOutcome)> {
    let train_set = labeled(data)?;
    let select_set = match selection {
        Some(s) => labeled(s)?,
        None => train_set.clone(),
    };
    let n = train_set[0].0.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = init;
    let mut params = model.flat();
    let mut adam = Adam::new(params.len());
    let (mut best_acc, mut best_f1) = score(&model, &select_set, n)?;
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let batch = if train_set.len() < cfg.batch_size.max(1) {
        train_set.len()
    } else {
        cfg.batch_size.max(1)
    };

    for epoch in 1..=cfg.epochs {
        if batch < train_set.len() {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut grad = vec![0.0; params.len()];
            for &idx in chunk {
                let (m, g) = train_set[idx];
                let (loss, gi) = model.loss_grad(m, g)?;
                epoch_loss += loss;
                for (a, b) in grad.iter_mut().zip(&gi) {
                    *a += b;
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            match cfg.optimizer {
                OptimizerKind::Sgd => {
                    for (p, g) in params.iter_mut().zip(&grad) {
                        *p -= cfg.learning_rate * g;
                    }
                }
                OptimizerKind::Adam => adam.update(&mut params, &grad, cfg.learning_rate),
            }
            model.set_flat(&params);
        }
        loss_history.push(epoch_loss / train_set.len() as f64);
        let (acc, f1) = score(&model, &select_set, n)?;
        if acc > best_acc || (acc == best_acc && f1 > best_f1) {
            best_acc = acc;
            best_f1 = f1;
            best = model.clone();
            best_epoch = epoch;
        }
    }
    Ok((
        best,
        TrainOutcome {
            best_epoch,
            best_accuracy: best_acc,
            best_weighted_f1: best_f1,
            loss_history,
        },
    ))
}

/// Initializes and trains the merge named by `kind`. The RFA and plain
/// attention merges start from `Uniform(-init_scale, init_scale)`; naive
/// weights start from all ones. Naive add-up has nothing to train.
pub fn train(
    kind: MergeKind,
    include_vanilla: bool,
    data: &[AdjustmentMatrix],
    selection: Option<&[AdjustmentMatrix]>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(FusionModel, TrainOutcome)> {
    let first = labeled(data)?[0].0;
    let (n, t) = (first.n(), first.t());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_seed = seed.wrapping_add(1);
    match kind {
        MergeKind::Add => {
            let model = FusionModel::Add { include_vanilla };
            let set = labeled(selection.unwrap_or(data))?;
            let mut pred = Vec::new();
            let mut gold = Vec::new();
            for (m, g) in set {
                pred.push(model.apply(m)?.class);
                gold.push(g);
            }
            let (acc, f1) = accuracy_and_wf1(&pred, &gold, n)?;
            Ok((
                model,
                TrainOutcome {
                    best_epoch: 0,
                    best_accuracy: acc,
                    best_weighted_f1: f1,
                    loss_history: Vec::new(),
                },
            ))
        }
        MergeKind::Rfa => {
            let init = FusionParameters::random(n, t, cfg.init_scale, &mut rng);
            let (m, o) = train_model(init, data, selection, cfg, train_seed)?;
            Ok((m.into_model(), o))
        }
        MergeKind::Weights => {
            let (m, o) = train_model(NaiveWeights::ones(n, t), data, selection, cfg, train_seed)?;
            Ok((m.into_model(), o))
        }
        MergeKind::Attn => {
            let init = PlainAttention::random(n, t, cfg.init_scale, &mut rng);
            let (m, o) = train_model(init, data, selection, cfg, train_seed)?;
            Ok((m.into_model(), o))
        }
    }
}
