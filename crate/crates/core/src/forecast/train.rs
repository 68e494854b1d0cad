//! Mini-batch training of the LSTM predictors and evaluation metrics.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::dataset::{Dataset, Sample};
use super::lstm::{forward, loss_and_grad, LstmShape};
use super::{pearson, PredictorKind, PredictorModel, MODEL_FORMAT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Adam,
    Sgdm,
}

impl std::str::FromStr for Solver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Solver::Adam),
            "sgdm" => Ok(Solver::Sgdm),
            other => Err(Error::Config(format!(
                "unknown solver '{other}' (expected adam or sgdm)"
            ))),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub solver: Solver,
    pub initial_lr: f64,
    pub epochs: usize,
    /// Learning rate multiplier applied every `drop_period` epochs.
    pub drop_factor: f64,
    pub drop_period: usize,
    /// SGDM momentum.
    pub momentum: f64,
    pub hidden1: usize,
    pub hidden2: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            solver: Solver::Adam,
            initial_lr: 1e-2,
            epochs: 200,
            drop_factor: 0.5,
            drop_period: 50,
            momentum: 0.9,
            hidden1: 32,
            hidden2: 16,
            batch_size: 64,
        }
    }
}

/// Goodness-of-fit of predictions against observations in physical units:
/// RMSE, Pearson correlation, R^2, and the least-squares slope of
/// predicted on observed (1 on the ideal 45-degree line).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub n: usize,
    pub rmse: f64,
    pub corr: f64,
    pub r2: f64,
    pub fit_slope: f64,
}

pub fn split_metrics(observed: &[f64], predicted: &[f64]) -> SplitMetrics {
    assert_eq!(observed.len(), predicted.len());
    let n = observed.len();
    if n == 0 {
        return SplitMetrics {
            n: 0,
            rmse: f64::NAN,
            corr: f64::NAN,
            r2: f64::NAN,
            fit_slope: f64::NAN,
        };
    }
    let sse: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p).powi(2))
        .sum();
    let mean_y = observed.iter().sum::<f64>() / n as f64;
    let sst: f64 = observed.iter().map(|y| (y - mean_y).powi(2)).sum();
    let mean_p = predicted.iter().sum::<f64>() / n as f64;
    let cov: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - mean_y) * (p - mean_p))
        .sum();
    SplitMetrics {
        n,
        rmse: (sse / n as f64).sqrt(),
        corr: pearson(observed, predicted).unwrap_or(0.0),
        r2: if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN },
        fit_slope: if sst > 0.0 { cov / sst } else { f64::NAN },
    }
}

/// Training provenance stored inside a saved model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub solver: Solver,
    pub initial_lr: f64,
    pub epochs: usize,
    pub drop_factor: f64,
    pub drop_period: usize,
    pub momentum: f64,
    pub seed: u64,
    pub train_metrics: SplitMetrics,
    pub test_metrics: SplitMetrics,
}

/// A trained predictor plus its evaluation.
#[derive(Debug, Clone)]
pub struct TrainedPredictor {
    pub model: PredictorModel,
    pub train_metrics: SplitMetrics,
    pub test_metrics: SplitMetrics,
    pub final_loss: f64,
}

fn normalized_pairs(ds: &Dataset, samples: &[Sample]) -> Vec<(Vec<f64>, f64)> {
    samples
        .iter()
        .map(|s| (ds.norm.normalize_input(&s.input), ds.norm.normalize_target(s.target)))
        .collect()
}

fn evaluate(params: &[f64], shape: &LstmShape, ds: &Dataset, samples: &[Sample]) -> SplitMetrics {
    let observed: Vec<f64> = samples.iter().map(|s| s.target).collect();
    let predicted: Vec<f64> = samples
        .iter()
        .map(|s| {
            let x = ds.norm.normalize_input(&s.input);
            ds.norm.denormalize_target(forward(params, shape, &x))
        })
        .collect();
    split_metrics(&observed, &predicted)
}

/// Trains an LSTM predictor on the dataset by mini-batch backpropagation
/// through time, minimizing mean squared error in normalized units.
/// Deterministic given (dataset, config, seed); zero epochs returns the
/// freshly initialized model.
pub fn train(ds: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<TrainedPredictor> {
    if ds.train.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    assert!(cfg.drop_period >= 1 && cfg.batch_size >= 1);
    let shape = LstmShape {
        n_features: ds.n_features,
        n_steps: ds.n_steps,
        h1: cfg.hidden1,
        h2: cfg.hidden2,
    };
    let mut params = shape.init_params(seed);
    let data = normalized_pairs(ds, &ds.train);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f72_6465);

    let mut adam_m = vec![0.0; params.len()];
    let mut adam_v = vec![0.0; params.len()];
    let mut sgdm_vel = vec![0.0; params.len()];
    let mut adam_t = 0u32;
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);

    let mut last_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        let lr = cfg.initial_lr * cfg.drop_factor.powi((epoch / cfg.drop_period) as i32);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], f64)> = chunk
                .iter()
                .map(|&i| (data[i].0.as_slice(), data[i].1))
                .collect();
            let (loss, grad) = loss_and_grad(&params, &shape, &batch);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            match cfg.solver {
                Solver::Adam => {
                    adam_t += 1;
                    let bc1 = 1.0 - beta1.powi(adam_t as i32);
                    let bc2 = 1.0 - beta2.powi(adam_t as i32);
                    for i in 0..params.len() {
                        adam_m[i] = beta1 * adam_m[i] + (1.0 - beta1) * grad[i];
                        adam_v[i] = beta2 * adam_v[i] + (1.0 - beta2) * grad[i] * grad[i];
                        params[i] -= lr * (adam_m[i] / bc1) / ((adam_v[i] / bc2).sqrt() + eps);
                    }
                }
                Solver::Sgdm => {
                    for i in 0..params.len() {
                        sgdm_vel[i] = cfg.momentum * sgdm_vel[i] + grad[i];
                        params[i] -= lr * sgdm_vel[i];
                    }
                }
            }
            epoch_loss += loss;
            batches += 1;
        }
        last_loss = epoch_loss / batches as f64;
    }

    let train_metrics = evaluate(&params, &shape, ds, &ds.train);
    let test_metrics = evaluate(&params, &shape, ds, &ds.test);
    let model = PredictorModel {
        format: MODEL_FORMAT.to_string(),
        kind: PredictorKind::Lstm,
        target: ds.target,
        n_steps: ds.n_steps,
        features: ds
            .target
            .feature_names()
            .iter()
            .map(|s| s.to_string())
            .collect(),
        hidden: vec![cfg.hidden1, cfg.hidden2],
        params,
        norm: Some(ds.norm.clone()),
        training: Some(TrainingMeta {
            solver: cfg.solver,
            initial_lr: cfg.initial_lr,
            epochs: cfg.epochs,
            drop_factor: cfg.drop_factor,
            drop_period: cfg.drop_period,
            momentum: cfg.momentum,
            seed,
            train_metrics,
            test_metrics,
        }),
    };
    Ok(TrainedPredictor {
        model,
        train_metrics,
        test_metrics,
        final_loss: last_loss,
    })
}
