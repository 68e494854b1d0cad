//! Link-state forecasting: correlation analysis for predictor selection,
//! sequence datasets, and t+1 predictors for link speed and GHG emission
//! rate.
//!
//! Four predictor kinds share one container: a from-scratch two-layer
//! LSTM, a linear autoregressive baseline, the identity predictor
//! (prediction = current value, which reduces anticipatory routing to
//! myopic routing), and the perfect-lookahead oracle whose values come
//! from the routing layer's shadow simulation rather than from
//! [`PredictorModel::predict_window`].

pub mod dataset;
pub mod linear;
pub mod lstm;
pub mod train;

pub use dataset::{build_dataset, Dataset, Normalization, Sample, Target, N_STEPS};
pub use linear::fit_linear_ar;
pub use lstm::{check_gradients, LstmShape};
pub use train::{train, Solver, SplitMetrics, TrainConfig, TrainedPredictor, TrainingMeta};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkstate::IntervalRow;
use crate::net::Link;

pub const MODEL_FORMAT: &str = "ecoroute-predictor-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Lstm,
    LinearAr,
    Identity,
    Oracle,
}

/// Serializable predictor container: kind, shapes, flattened parameters,
/// normalization constants, and training provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub format: String,
    pub kind: PredictorKind,
    pub target: Target,
    pub n_steps: usize,
    pub features: Vec<String>,
    /// Hidden layer widths, `[h1, h2]` for the LSTM, empty otherwise.
    pub hidden: Vec<usize>,
    pub params: Vec<f64>,
    pub norm: Option<Normalization>,
    pub training: Option<TrainingMeta>,
}

impl PredictorModel {
    pub fn identity(target: Target) -> PredictorModel {
        PredictorModel {
            format: MODEL_FORMAT.to_string(),
            kind: PredictorKind::Identity,
            target,
            n_steps: N_STEPS,
            features: target.feature_names().iter().map(|s| s.to_string()).collect(),
            hidden: vec![],
            params: vec![],
            norm: None,
            training: None,
        }
    }

    pub fn oracle(target: Target) -> PredictorModel {
        PredictorModel {
            kind: PredictorKind::Oracle,
            ..PredictorModel::identity(target)
        }
    }

    fn lstm_shape(&self) -> LstmShape {
        LstmShape {
            n_features: self.target.n_features(),
            n_steps: self.n_steps,
            h1: self.hidden[0],
            h2: self.hidden[1],
        }
    }

    /// Raw (unclamped) prediction from a physical-unit input window of
    /// shape `n_steps x n_features`, step-major.
    pub fn predict_window(&self, window: &[f64]) -> f64 {
        let nf = self.target.n_features();
        assert_eq!(window.len(), self.n_steps * nf, "window shape mismatch");
        match self.kind {
            PredictorKind::Identity => {
                window[(self.n_steps - 1) * nf + self.target.target_feature()]
            }
            PredictorKind::Lstm => {
                let norm = self.norm.as_ref().expect("lstm model carries normalization");
                let x = norm.normalize_input(window);
                norm.denormalize_target(lstm::forward(&self.params, &self.lstm_shape(), &x))
            }
            PredictorKind::LinearAr => {
                let norm = self.norm.as_ref().expect("linear model carries normalization");
                let x = norm.normalize_input(window);
                let d = self.params.len();
                let mut y = self.params[d - 1];
                for (i, v) in x.iter().enumerate() {
                    y += self.params[i] * v;
                }
                norm.denormalize_target(y)
            }
            PredictorKind::Oracle => {
                panic!("oracle predictions come from the routing shadow simulation")
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("model serializes");
        fs::write(path.as_ref(), json).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PredictorModel> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: PredictorModel = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path, 1, format!("bad model file: {e}")))?;
        if model.format != MODEL_FORMAT {
            return Err(Error::parse(
                path,
                1,
                format!("unsupported model format '{}'", model.format),
            ));
        }
        Ok(model)
    }
}

/// Clamps a raw t+1 prediction to its physical range: negative values go
/// to zero, and speed predictions cap at the link speed limit.
pub fn clamp_prediction(target: Target, raw: f64, link: &Link) -> f64 {
    match target {
        Target::Speed => raw.clamp(0.0, link.speed_limit_kmh as f64),
        Target::GhgEr => raw.max(0.0),
    }
}

/// Clamped t+1 prediction for one link from its most recent closed
/// interval rows (ascending interval order; the last `n_steps` are used).
/// With insufficient history the current value is returned (identity
/// fallback); with no history at all the free-flow convention applies
/// (speed limit, zero emission rate).
pub fn predict_link(model: &PredictorModel, history: &[IntervalRow], link: &Link) -> f64 {
    let t = model.target;
    let fallback = |rows: &[IntervalRow]| -> f64 {
        let default = match t {
            Target::Speed => link.speed_limit_kmh as f64,
            Target::GhgEr => 0.0,
        };
        match rows.last() {
            Some(r) => t.target_value(r).unwrap_or(default),
            None => default,
        }
    };
    let raw = if history.len() < model.n_steps {
        fallback(history)
    } else {
        let recent = &history[history.len() - model.n_steps..];
        let mut window = Vec::with_capacity(model.n_steps * t.n_features());
        let mut complete = true;
        for row in recent {
            match t.features(row) {
                Some(f) => window.extend(f),
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if complete && model.kind != PredictorKind::Oracle {
            model.predict_window(&window)
        } else {
            fallback(history)
        }
    };
    clamp_prediction(t, raw, link)
}

/// Pearson correlation. `None` when either series has zero variance.
pub(crate) fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx).powi(2);
        vy += (y - my).powi(2);
    }
    if vx <= 0.0 || vy <= 0.0 {
        None
    } else {
        Some(cov / (vx * vy).sqrt())
    }
}

/// One cell of the lagged correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationEntry {
    pub variable: String,
    pub lag: usize,
    pub coeff: f64,
    /// Set when the lagged series had zero variance (coefficient reported
    /// as 0).
    pub zero_variance: bool,
}

/// Pearson coefficients of each candidate variable at lags 1..=`lags`
/// against the target at the following interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTable {
    pub target: Target,
    pub lags: usize,
    pub entries: Vec<CorrelationEntry>,
}

impl CorrelationTable {
    pub fn get(&self, variable: &str, lag: usize) -> Option<&CorrelationEntry> {
        self.entries
            .iter()
            .find(|e| e.variable == variable && e.lag == lag)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variable,lag,coeff,zero_variance\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{},{},{},{}\n",
                e.variable, e.lag, e.coeff, e.zero_variance
            ));
        }
        s
    }
}

const CORR_VARIABLES: &[&str] = &[
    "speed",
    "ghg_er",
    "density",
    "flow",
    "delay",
    "nox",
    "inlink_speed",
];

fn variable_value(row: &IntervalRow, var: &str) -> Option<f64> {
    match var {
        "speed" => Some(row.v_kmh),
        "ghg_er" => row.ghg_er_gps,
        "density" => Some(row.density_lane),
        "flow" => Some(row.flow_vph),
        "delay" => Some(row.delay_s),
        "nox" => Some(row.nox_g),
        "inlink_speed" => Some(row.inlink_mean_v_kmh),
        _ => unreachable!(),
    }
}

/// Builds the lagged correlation table over all links' consecutive
/// interval windows. Requires at least 30 window samples per lag. The
/// `ghg_er` row is omitted when any input row lacks a derived emission
/// rate.
pub fn correlation_table(
    rows: &[IntervalRow],
    target: Target,
    lags: usize,
) -> Result<CorrelationTable> {
    assert!(lags >= 1);
    if target == Target::GhgEr && rows.iter().any(|r| r.ghg_er_gps.is_none()) {
        return Err(Error::InsufficientData(
            "GHG ER target requires rows with derived emission rates".into(),
        ));
    }
    let mut by_link: std::collections::BTreeMap<crate::net::LinkId, Vec<&IntervalRow>> =
        Default::default();
    for r in rows {
        by_link.entry(r.link).or_default().push(r);
    }
    let variables: Vec<&str> = CORR_VARIABLES
        .iter()
        .copied()
        .filter(|v| *v != "ghg_er" || rows.iter().all(|r| r.ghg_er_gps.is_some()))
        .collect();

    // lagged[lag-1][variable] runs parallel to targets[lag-1].
    let mut lagged: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); variables.len()]; lags];
    let mut targets: Vec<Vec<f64>> = vec![Vec::new(); lags];
    for (_, mut series) in by_link {
        series.sort_by_key(|r| r.interval);
        for w in series.windows(lags + 1) {
            if !w.windows(2).all(|p| p[1].interval == p[0].interval + 1) {
                continue;
            }
            let Some(y) = target.target_value(w[lags]) else {
                continue;
            };
            for lag in 1..=lags {
                let row = w[lags - lag];
                for (vi, var) in variables.iter().enumerate() {
                    if let Some(x) = variable_value(row, var) {
                        lagged[lag - 1][vi].push(x);
                    }
                }
                targets[lag - 1].push(y);
            }
        }
    }
    for lag in 1..=lags {
        if targets[lag - 1].len() < 30 {
            return Err(Error::InsufficientData(format!(
                "need >= 30 samples per lag, lag {lag} has {}",
                targets[lag - 1].len()
            )));
        }
    }
    let mut entries = Vec::new();
    for (vi, var) in variables.iter().enumerate() {
        for lag in 1..=lags {
            let xs = &lagged[lag - 1][vi];
            let ys = &targets[lag - 1];
            let (coeff, zero_variance) = match pearson(xs, ys) {
                Some(c) => (c, false),
                None => (0.0, true),
            };
            entries.push(CorrelationEntry {
                variable: var.to_string(),
                lag,
                coeff,
                zero_variance,
            });
        }
    }
    Ok(CorrelationTable {
        target,
        lags,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{LinkId, NodeId};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn test_link() -> Link {
        Link {
            id: LinkId(0),
            from_node: NodeId(0),
            to_node: NodeId(1),
            length_m: 400.0,
            lanes: 2,
            speed_limit_kmh: 80,
        }
    }

    fn row(interval: u32, v: f64, density: f64) -> IntervalRow {
        IntervalRow {
            link: LinkId(0),
            interval,
            v_kmh: v,
            density_lane: density,
            flow_vph: 100.0,
            delay_s: 1.0,
            ghg_g: 25.0,
            nox_g: 0.01,
            inlink_mean_v_kmh: 35.0,
            ghg_er_gps: Some(0.8),
        }
    }

    #[test]
    fn correlation_detects_lagged_copy() {
        // speed(t) is an exact copy of density(t-1).
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut density = Vec::new();
        let mut rows = Vec::new();
        for i in 0..120u32 {
            let d: f64 = rng.random_range(1.0..30.0);
            density.push(d);
            let v = if i == 0 { 20.0 } else { density[i as usize - 1] };
            rows.push(row(i, v, d));
        }
        let table = correlation_table(&rows, Target::Speed, 5).unwrap();
        let c = table.get("density", 1).unwrap();
        assert!((c.coeff - 1.0).abs() < 1e-9, "lag-1 density coeff {}", c.coeff);
    }

    #[test]
    fn correlation_noise_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<IntervalRow> = (0..10_600u32)
            .map(|i| row(i, rng.random_range(0.0..80.0), rng.random_range(0.0..40.0)))
            .collect();
        let table = correlation_table(&rows, Target::Speed, 5).unwrap();
        for lag in 1..=5 {
            let c = table.get("density", lag).unwrap();
            assert!(c.coeff.abs() < 0.1, "lag {lag}: {}", c.coeff);
        }
    }

    #[test]
    fn correlation_flags_zero_variance() {
        let rows: Vec<IntervalRow> = (0..80u32).map(|i| row(i, 20.0 + i as f64, 5.0)).collect();
        let table = correlation_table(&rows, Target::Speed, 2).unwrap();
        let c = table.get("density", 1).unwrap();
        assert!(c.zero_variance);
        assert_eq!(c.coeff, 0.0);
    }

    #[test]
    fn correlation_needs_thirty_samples() {
        let rows: Vec<IntervalRow> = (0..20u32).map(|i| row(i, 20.0, 5.0)).collect();
        assert!(matches!(
            correlation_table(&rows, Target::Speed, 5),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn clamp_rules() {
        let link = test_link();
        assert_eq!(clamp_prediction(Target::Speed, 95.0, &link), 80.0);
        assert_eq!(clamp_prediction(Target::Speed, -3.0, &link), 0.0);
        assert_eq!(clamp_prediction(Target::Speed, 42.5, &link), 42.5);
        assert_eq!(clamp_prediction(Target::GhgEr, -0.2, &link), 0.0);
        assert_eq!(clamp_prediction(Target::GhgEr, 1.7, &link), 1.7);
        // Idempotence at the boundaries.
        assert_eq!(clamp_prediction(Target::Speed, 80.0, &link), 80.0);
        assert_eq!(clamp_prediction(Target::GhgEr, 0.0, &link), 0.0);
    }

    #[test]
    fn predict_link_fallback_and_identity() {
        let link = test_link();
        let ident = PredictorModel::identity(Target::Speed);
        // No history: free-flow convention.
        assert_eq!(predict_link(&ident, &[], &link), 80.0);
        // Short history: current value.
        let hist = vec![row(0, 33.0, 4.0)];
        assert_eq!(predict_link(&ident, &hist, &link), 33.0);
        // Full history: identity still returns the latest value.
        let hist: Vec<IntervalRow> = (0..4).map(|i| row(i, 30.0 + i as f64, 4.0)).collect();
        assert_eq!(predict_link(&ident, &hist, &link), 33.0);
    }

    #[test]
    fn model_json_roundtrip() {
        let model = PredictorModel::identity(Target::GhgEr);
        let f = tempfile::NamedTempFile::new().unwrap();
        model.save(f.path()).unwrap();
        let loaded = PredictorModel::load(f.path()).unwrap();
        assert_eq!(loaded, model);
    }
}
