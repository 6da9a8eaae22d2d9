use ndarray::Axis;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{bce_grad, bce_with_logits, MlpConfig, MlpModel, Mode, NormStats};
use crate::encoding::{split_by_respondent, EncodedDataset};
use crate::rng;
use crate::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub validation_accuracy: Vec<f64>,
    /// Number of completed epochs.
    pub stopping_epoch: usize,
    /// Epoch (0-based) whose snapshot was returned.
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(model: &mut MlpModel, lr: f64) -> Self {
        let shapes: Vec<usize> = model.param_slices_mut().iter().map(|p| p.len()).collect();
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, model: &mut MlpModel, grads: &[Vec<f64>]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((p, g), m), v) in model
            .param_slices_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

fn both_classes(labels: &[f64]) -> bool {
    labels.iter().any(|&y| y == 1.0) && labels.iter().any(|&y| y == 0.0)
}

fn eval_metrics(model: &MlpModel, data: &EncodedDataset, labels: &[f64]) -> Result<(f64, f64)> {
    let logits = model.forward(data.matrix.view())?;
    let loss = bce_with_logits(logits.view(), labels);
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(&z, &y)| (z > 0.0) == (y == 1.0))
        .count();
    Ok((loss, hits as f64 / labels.len() as f64))
}

/// Minibatch Adam on mean sigmoid cross-entropy with early stopping on the
/// validation loss. The validation split is a seeded fraction of the
/// respondents in `data`; the snapshot with the lowest validation loss is
/// returned in eval mode.
pub fn fit(config: &MlpConfig, data: &EncodedDataset) -> Result<(MlpModel, TrainReport)> {
    config.validate()?;
    if data.matrix.ncols() != config.input_dim {
        return Err(Error::ShapeMismatch {
            expected: config.input_dim,
            got: data.matrix.ncols(),
        });
    }
    let (train_rows, val_rows) = split_by_respondent(
        &data.respondent_ids,
        config.validation_fraction,
        rng::derive_seed_tagged(config.seed, "validation-split", &[]),
    );
    if train_rows.len() < 2 || val_rows.is_empty() {
        return Err(Error::DegenerateData(format!(
            "need at least two respondents; got {} training and {} validation rows",
            train_rows.len(),
            val_rows.len()
        )));
    }
    let train = data.subset(&train_rows);
    let val = data.subset(&val_rows);
    let train_y = train.labels_f64();
    let val_y = val.labels_f64();
    if !both_classes(&train_y) || !both_classes(&val_y) {
        return Err(Error::DegenerateData("a split contains a single class".into()));
    }

    let mut rng = rng::stream(config.seed, 0);
    let mut model = MlpModel::new(config, &mut rng);
    let mut adam = Adam::new(&mut model, config.learning_rate);
    let mut order: Vec<usize> = (0..train.n_rows()).collect();

    let mut report = TrainReport {
        train_loss: Vec::new(),
        train_accuracy: Vec::new(),
        validation_loss: Vec::new(),
        validation_accuracy: Vec::new(),
        stopping_epoch: 0,
        best_epoch: 0,
    };
    let mut best: Option<(f64, MlpModel)> = None;
    let mut since_best = 0;

    for epoch in 0..config.max_epochs {
        model.set_mode(Mode::Train);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size) {
            // A trailing single row cannot be batch-normalised.
            if chunk.len() < 2 {
                continue;
            }
            let x = train.matrix.select(Axis(0), chunk);
            let y: Vec<f64> = chunk.iter().map(|&r| train_y[r]).collect();
            let cache = model.forward_cached(x.view(), NormStats::Batch, Some(&mut rng));
            loss_sum += bce_with_logits(cache.logits.view(), &y) * chunk.len() as f64;
            hits += cache
                .logits
                .iter()
                .zip(&y)
                .filter(|(&z, &t)| (z > 0.0) == (t == 1.0))
                .count();
            seen += chunk.len();
            let grads = model.backward(&cache, bce_grad(cache.logits.view(), &y).view(), NormStats::Batch);
            adam.step(&mut model, &grads.tensors);
            model.update_running_stats(&cache, chunk.len());
        }
        model.set_mode(Mode::Eval);
        let (val_loss, val_acc) = eval_metrics(&model, &val, &val_y)?;
        report.train_loss.push(loss_sum / seen.max(1) as f64);
        report.train_accuracy.push(hits as f64 / seen.max(1) as f64);
        report.validation_loss.push(val_loss);
        report.validation_accuracy.push(val_acc);
        report.stopping_epoch = epoch + 1;

        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience {
                break;
            }
        }
    }
    let (_, mut best_model) = best.expect("at least one epoch");
    best_model.set_mode(Mode::Eval);
    Ok((best_model, report))
}
