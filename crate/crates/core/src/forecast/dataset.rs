//! Sequence dataset construction from link-interval histories.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkstate::IntervalRow;
use crate::net::LinkId;

/// Number of past intervals fed to the predictors.
pub const N_STEPS: usize = 3;

/// What the predictor forecasts at interval t+1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Link space-mean speed, km/h.
    Speed,
    /// Link mean per-vehicle GHG emission rate, g/s.
    GhgEr,
}

impl Target {
    /// Feature names per input step. The target variable itself is always
    /// among the features (`target_feature` gives its column).
    pub fn feature_names(&self) -> &'static [&'static str] {
        match self {
            Target::Speed => &["speed_kmh", "density_lane", "inlink_speed_kmh"],
            Target::GhgEr => &["speed_kmh", "ghg_er_gps", "density_lane", "inlink_speed_kmh"],
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names().len()
    }

    /// Column of the target variable inside the feature vector.
    pub fn target_feature(&self) -> usize {
        match self {
            Target::Speed => 0,
            Target::GhgEr => 1,
        }
    }

    /// Extracts this target's feature vector from a row. `None` if the row
    /// lacks a required derived variable.
    pub fn features(&self, row: &IntervalRow) -> Option<Vec<f64>> {
        match self {
            Target::Speed => Some(vec![row.v_kmh, row.density_lane, row.inlink_mean_v_kmh]),
            Target::GhgEr => row
                .ghg_er_gps
                .map(|er| vec![row.v_kmh, er, row.density_lane, row.inlink_mean_v_kmh]),
        }
    }

    pub fn target_value(&self, row: &IntervalRow) -> Option<f64> {
        match self {
            Target::Speed => Some(row.v_kmh),
            Target::GhgEr => row.ghg_er_gps,
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speed" => Ok(Target::Speed),
            "ghg" | "ghg_er" => Ok(Target::GhgEr),
            other => Err(Error::Config(format!(
                "unknown prediction target '{other}' (expected speed or ghg)"
            ))),
        }
    }
}

/// One supervised sample: `n_steps` consecutive intervals of features and
/// the target at the following interval. Values are raw physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub link: LinkId,
    /// Step-major: `input[step * n_features + feature]`.
    pub input: Vec<f64>,
    pub target: f64,
    pub target_interval: u32,
    pub run: usize,
}

/// Per-feature standardization constants, computed on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub feat_mean: Vec<f64>,
    pub feat_sd: Vec<f64>,
    pub target_mean: f64,
    pub target_sd: f64,
}

impl Normalization {
    fn fit(samples: &[Sample], n_features: usize) -> Normalization {
        let n_rows = samples.len() * (samples[0].input.len() / n_features);
        let mut feat_mean = vec![0.0; n_features];
        for s in samples {
            for (i, v) in s.input.iter().enumerate() {
                feat_mean[i % n_features] += v;
            }
        }
        for m in &mut feat_mean {
            *m /= n_rows as f64;
        }
        let mut feat_sd = vec![0.0; n_features];
        for s in samples {
            for (i, v) in s.input.iter().enumerate() {
                feat_sd[i % n_features] += (v - feat_mean[i % n_features]).powi(2);
            }
        }
        for sd in &mut feat_sd {
            *sd = (*sd / n_rows as f64).sqrt().max(1e-8);
        }
        let target_mean = samples.iter().map(|s| s.target).sum::<f64>() / samples.len() as f64;
        let target_sd = (samples
            .iter()
            .map(|s| (s.target - target_mean).powi(2))
            .sum::<f64>()
            / samples.len() as f64)
            .sqrt()
            .max(1e-8);
        Normalization {
            feat_mean,
            feat_sd,
            target_mean,
            target_sd,
        }
    }

    pub fn normalize_input(&self, input: &[f64]) -> Vec<f64> {
        let nf = self.feat_mean.len();
        input
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.feat_mean[i % nf]) / self.feat_sd[i % nf])
            .collect()
    }

    pub fn normalize_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_sd
    }

    pub fn denormalize_target(&self, y: f64) -> f64 {
        y * self.target_sd + self.target_mean
    }
}

/// Train/test split of sequence samples with shared normalization.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub target: Target,
    pub n_steps: usize,
    pub n_features: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub norm: Normalization,
}

impl Dataset {
    pub fn sizes(&self) -> (usize, usize) {
        (self.train.len(), self.test.len())
    }
}

/// Builds sliding-window samples from one or more independent runs of
/// link-interval rows, then splits them 80/20 by contiguous time blocks
/// within each run (earlier intervals train, later intervals test).
/// Windows never straddle missing intervals or run boundaries.
pub fn build_dataset(
    runs: &[Vec<IntervalRow>],
    target: Target,
    train_fraction: f64,
) -> Result<Dataset> {
    assert!(train_fraction > 0.0 && train_fraction < 1.0);
    let nf = target.n_features();
    if target == Target::GhgEr {
        let missing = runs.iter().flatten().any(|r| r.ghg_er_gps.is_none());
        if missing {
            return Err(Error::InsufficientData(
                "rows lack the per-vehicle GHG emission rate; derive it from link attributes \
                 first"
                    .into(),
            ));
        }
    }
    let mut samples: Vec<Sample> = Vec::new();
    for (run_idx, rows) in runs.iter().enumerate() {
        let mut by_link: BTreeMap<LinkId, Vec<&IntervalRow>> = BTreeMap::new();
        for r in rows {
            by_link.entry(r.link).or_default().push(r);
        }
        for (link, mut series) in by_link {
            series.sort_by_key(|r| r.interval);
            if series.len() < N_STEPS + 1 {
                continue;
            }
            for w in series.windows(N_STEPS + 1) {
                let consecutive = w
                    .windows(2)
                    .all(|p| p[1].interval == p[0].interval + 1);
                if !consecutive {
                    continue;
                }
                let mut input = Vec::with_capacity(N_STEPS * nf);
                for row in &w[..N_STEPS] {
                    input.extend(target.features(row).expect("checked above"));
                }
                samples.push(Sample {
                    link,
                    input,
                    target: target.target_value(w[N_STEPS]).expect("checked above"),
                    target_interval: w[N_STEPS].interval,
                    run: run_idx,
                });
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::InsufficientData(
            "no complete sliding windows in the provided history".into(),
        ));
    }

    // Per-run block split: the smallest prefix of whole intervals holding
    // at least `train_fraction` of the run's samples goes to train.
    let mut train = Vec::new();
    let mut test = Vec::new();
    for run_idx in 0..runs.len() {
        let mut run_samples: Vec<Sample> = samples
            .iter()
            .filter(|s| s.run == run_idx)
            .cloned()
            .collect();
        if run_samples.is_empty() {
            continue;
        }
        run_samples.sort_by_key(|s| (s.target_interval, s.link));
        let want = (train_fraction * run_samples.len() as f64).ceil() as usize;
        let mut cut_interval = run_samples[0].target_interval;
        let mut count = 0usize;
        for s in &run_samples {
            if count >= want && s.target_interval > cut_interval {
                break;
            }
            cut_interval = s.target_interval;
            count += 1;
        }
        for s in run_samples {
            if s.target_interval <= cut_interval {
                train.push(s);
            } else {
                test.push(s);
            }
        }
    }
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training split".into()));
    }
    let norm = Normalization::fit(&train, nf);
    Ok(Dataset {
        target,
        n_steps: N_STEPS,
        n_features: nf,
        train,
        test,
        norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(link: u64, interval: u32, v: f64) -> IntervalRow {
        IntervalRow {
            link: LinkId(link),
            interval,
            v_kmh: v,
            density_lane: 2.0 + (interval % 5) as f64,
            flow_vph: 120.0,
            delay_s: 0.0,
            ghg_g: 30.0,
            nox_g: 0.01,
            inlink_mean_v_kmh: v * 0.9,
            ghg_er_gps: Some(0.5 + 0.01 * (interval % 7) as f64),
        }
    }

    #[test]
    fn sliding_window_count() {
        let rows: Vec<IntervalRow> = (0..10).map(|i| row(0, i, 30.0 + i as f64)).collect();
        let ds = build_dataset(&[rows], Target::Speed, 0.8).unwrap();
        assert_eq!(ds.train.len() + ds.test.len(), 7); // 10 - 3
    }

    #[test]
    fn windows_never_cross_gaps() {
        let mut rows: Vec<IntervalRow> = (0..6).map(|i| row(0, i, 30.0)).collect();
        rows.extend((8..14).map(|i| row(0, i, 30.0)));
        let ds = build_dataset(&[rows], Target::Speed, 0.8).unwrap();
        // 6-long block gives 3 windows, second 6-long block gives 3.
        assert_eq!(ds.train.len() + ds.test.len(), 6);
        for s in ds.train.iter().chain(&ds.test) {
            assert!(s.target_interval != 8 && s.target_interval != 9 && s.target_interval != 10);
        }
    }

    #[test]
    fn split_is_80_20_on_clean_series() {
        let rows: Vec<IntervalRow> = (0..103).map(|i| row(0, i, 30.0 + (i % 9) as f64)).collect();
        let ds = build_dataset(&[rows], Target::Speed, 0.8).unwrap();
        assert_eq!(ds.train.len(), 80);
        assert_eq!(ds.test.len(), 20);
        let max_train = ds.train.iter().map(|s| s.target_interval).max().unwrap();
        let min_test = ds.test.iter().map(|s| s.target_interval).min().unwrap();
        assert!(max_train < min_test, "train must precede test in time");
    }

    #[test]
    fn ghg_target_needs_er() {
        let rows: Vec<IntervalRow> = (0..10)
            .map(|i| {
                let mut r = row(0, i, 30.0);
                r.ghg_er_gps = None;
                r
            })
            .collect();
        assert!(build_dataset(&[rows], Target::GhgEr, 0.8).is_err());
    }

    #[test]
    fn normalization_roundtrip() {
        let rows: Vec<IntervalRow> = (0..40).map(|i| row(0, i, 20.0 + i as f64)).collect();
        let ds = build_dataset(&[rows], Target::GhgEr, 0.8).unwrap();
        for s in &ds.train {
            let normed = ds.norm.normalize_input(&s.input);
            let nf = ds.n_features;
            for (i, v) in normed.iter().enumerate() {
                let back = v * ds.norm.feat_sd[i % nf] + ds.norm.feat_mean[i % nf];
                assert!((back - s.input[i]).abs() < 1e-12);
            }
            let y = ds.norm.normalize_target(s.target);
            assert!((ds.norm.denormalize_target(y) - s.target).abs() < 1e-12);
        }
    }
}
