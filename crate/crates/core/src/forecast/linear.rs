//! Linear autoregressive baseline: least squares on the flattened,
//! standardized input window.

use crate::error::{Error, Result};

use super::dataset::Dataset;
use super::train::{split_metrics, SplitMetrics, TrainedPredictor};
use super::{PredictorKind, PredictorModel, MODEL_FORMAT};

/// Fits `y = w . x + b` by ridge-regularized normal equations
/// (lambda = 1e-8, only for numerical rank safety).
pub fn fit_linear_ar(ds: &Dataset) -> Result<TrainedPredictor> {
    if ds.train.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let d = ds.n_steps * ds.n_features + 1; // + bias
    let mut xtx = vec![0.0; d * d];
    let mut xty = vec![0.0; d];
    for s in &ds.train {
        let mut x = ds.norm.normalize_input(&s.input);
        x.push(1.0);
        let y = ds.norm.normalize_target(s.target);
        for i in 0..d {
            xty[i] += x[i] * y;
            for j in 0..d {
                xtx[i * d + j] += x[i] * x[j];
            }
        }
    }
    for i in 0..d {
        xtx[i * d + i] += 1e-8;
    }
    let w = solve(&mut xtx, &mut xty, d)?;

    let predict = |input: &[f64]| -> f64 {
        let x = ds.norm.normalize_input(input);
        let mut y = w[d - 1];
        for (i, v) in x.iter().enumerate() {
            y += w[i] * v;
        }
        ds.norm.denormalize_target(y)
    };
    let eval = |samples: &[super::dataset::Sample]| -> SplitMetrics {
        let obs: Vec<f64> = samples.iter().map(|s| s.target).collect();
        let pred: Vec<f64> = samples.iter().map(|s| predict(&s.input)).collect();
        split_metrics(&obs, &pred)
    };
    let train_metrics = eval(&ds.train);
    let test_metrics = eval(&ds.test);

    let model = PredictorModel {
        format: MODEL_FORMAT.to_string(),
        kind: PredictorKind::LinearAr,
        target: ds.target,
        n_steps: ds.n_steps,
        features: ds
            .target
            .feature_names()
            .iter()
            .map(|s| s.to_string())
            .collect(),
        hidden: vec![],
        params: w,
        norm: Some(ds.norm.clone()),
        training: None,
    };
    Ok(TrainedPredictor {
        model,
        train_metrics,
        test_metrics,
        final_loss: train_metrics.rmse.powi(2),
    })
}

/// Gaussian elimination with partial pivoting on a dense row-major system.
fn solve(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(Error::InsufficientData(
                "singular normal equations in linear fit".into(),
            ));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut v = b[row];
        for k in row + 1..n {
            v -= a[row * n + k] * x[k];
        }
        x[row] = v / a[row * n + row];
    }
    Ok(x)
}
