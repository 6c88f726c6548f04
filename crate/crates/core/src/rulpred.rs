//! Health-indicator regressors and the augmentation experiment.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use autograd::layers::{Conv1d, Gru, Linear};
use autograd::{AdamW, AdamWConfig, Graph, ParamSet, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{row_digest, BearingLifecycle, CHANNELS};
use crate::error::{Error, Result};
use crate::metrics::{rul_scores, RulScores};
use crate::trainer::{run_seeds, SeedReport};

const SCNN_CHANNELS: [usize; 3] = [16, 32, 64];
const GRU_HIDDEN: usize = 64;
const SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictorKind {
    #[serde(rename = "SCNN")]
    Scnn,
    #[serde(rename = "GRU")]
    Gru,
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictorKind::Scnn => "SCNN",
            PredictorKind::Gru => "GRU",
        })
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SCNN" => Ok(PredictorKind::Scnn),
            "GRU" => Ok(PredictorKind::Gru),
            _ => Err(Error::Config(format!("unknown predictor kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub kind: PredictorKind,
    pub k: usize,
    pub n_feature: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Body {
    Scnn(Vec<Conv1d>),
    Gru(Gru, Gru),
}

/// Maps a `[B, rows, 2, n_feature]` window to `B` values in `[0, 1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Predictor {
    pub spec: PredictorSpec,
    pub params: ParamSet,
    body: Body,
    head: Linear,
}

pub fn build_predictor(spec: PredictorSpec, seed: u64) -> Result<Predictor> {
    if spec.k == 0 || spec.n_feature == 0 {
        return Err(Error::Config("predictor needs k and n_feature above zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::new();
    let (body, width) = match spec.kind {
        PredictorKind::Scnn => {
            let mut cin = CHANNELS * (spec.k + 1);
            let mut convs = Vec::new();
            for (i, &c) in SCNN_CHANNELS.iter().enumerate() {
                convs.push(Conv1d::new(&mut set, &format!("conv{i}"), cin, c, 3, 2, 1, &mut rng));
                cin = c;
            }
            (Body::Scnn(convs), cin)
        }
        PredictorKind::Gru => {
            let a = Gru::new(&mut set, "gru0", CHANNELS * spec.n_feature, GRU_HIDDEN, &mut rng);
            let b = Gru::new(&mut set, "gru1", GRU_HIDDEN, GRU_HIDDEN, &mut rng);
            (Body::Gru(a, b), GRU_HIDDEN)
        }
    };
    let head = Linear::new(&mut set, "head", width, 1, &mut rng);
    Ok(Predictor { spec, params: set, body, head })
}

impl Predictor {
    /// `window` is `[B, rows, 2, n_feature]`; the convolutional body needs
    /// `rows == k + 1`, the recurrent one takes any length.
    pub fn forward(&self, g: &mut Graph, window: &Tensor) -> Result<Var> {
        let s = window.shape();
        let nf = self.spec.n_feature;
        if s.len() != 4 || s[2] != CHANNELS || s[3] != nf || s[1] == 0 {
            return Err(Error::Shape(format!("predictor input {s:?}")));
        }
        let (b, rows) = (s[0], s[1]);
        let feat = match &self.body {
            Body::Scnn(convs) => {
                if rows != self.spec.k + 1 {
                    return Err(Error::Shape(format!("window of {rows} rows, expected {}", self.spec.k + 1)));
                }
                let mut h = g.input(window.clone().reshape(&[b, rows * CHANNELS, nf])?);
                for c in convs {
                    h = c.forward(g, &self.params, h)?;
                    h = g.leaky_relu(h, SLOPE);
                }
                g.mean_axis(h, 2)?
            }
            Body::Gru(a, bl) => {
                let row = CHANNELS * nf;
                let mut h0 = g.input(Tensor::zeros(&[b, GRU_HIDDEN]));
                let mut h1 = g.input(Tensor::zeros(&[b, GRU_HIDDEN]));
                for r in 0..rows {
                    let mut step = Vec::with_capacity(b * row);
                    for bi in 0..b {
                        let off = (bi * rows + r) * row;
                        step.extend_from_slice(&window.data()[off..off + row]);
                    }
                    let x = g.input(Tensor::new(vec![b, row], step)?);
                    h0 = a.step(g, &self.params, x, h0)?;
                    h1 = bl.step(g, &self.params, h0, h1)?;
                }
                h1
            }
        };
        let out = self.head.forward(g, &self.params, feat)?;
        let out = g.sigmoid(out);
        Ok(g.reshape(out, &[b])?)
    }

    pub fn predict(&self, window: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::eval();
        let v = self.forward(&mut g, window)?;
        Ok(g.value(v).data().to_vec())
    }

    /// Predictions for every window position `k..len` of a series.
    pub fn predict_series(&self, series: &[Vec<f64>]) -> Result<Vec<f64>> {
        let set = PredWindows::from_series(&[series], self.spec.k)?;
        let mut out = Vec::with_capacity(set.len());
        let ids: Vec<usize> = (0..set.len()).collect();
        for chunk in ids.chunks(512) {
            let (x, _) = set.gather(chunk, self.spec.n_feature)?;
            out.extend(self.predict(&x)?);
        }
        Ok(out)
    }
}

/// `(k + 1)`-row windows with the HI of their last row as target.
#[derive(Debug, Clone)]
pub struct PredWindows<'a> {
    series: Vec<&'a [Vec<f64>]>,
    targets: Vec<Option<&'a [f64]>>,
    index: Vec<(usize, usize)>,
    k: usize,
}

impl<'a> PredWindows<'a> {
    pub fn new(lifecycles: &[&'a BearingLifecycle], k: usize) -> Result<Self> {
        let mut w = Self::from_series(&lifecycles.iter().map(|l| l.series.as_slice()).collect::<Vec<_>>(), k)?;
        w.targets = lifecycles.iter().map(|l| Some(l.hi.as_slice())).collect();
        Ok(w)
    }

    fn from_series(series: &[&'a [Vec<f64>]], k: usize) -> Result<Self> {
        let mut index = Vec::new();
        for (l, s) in series.iter().enumerate() {
            if s.len() <= k {
                return Err(Error::InsufficientData(format!("series of {} rows for window {k}", s.len())));
            }
            index.extend((k..s.len()).map(|t| (l, t)));
        }
        Ok(Self { series: series.to_vec(), targets: vec![None; series.len()], index, k })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Rows of every window, for leakage checks.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.index.iter().flat_map(|&(l, t)| self.series[l][t - self.k..=t].iter().map(Vec::as_slice))
    }

    /// `([B, k+1, 2, n_feature], targets)`
    pub fn gather(&self, ids: &[usize], n_feature: usize) -> Result<(Tensor, Vec<f64>)> {
        let rows = self.k + 1;
        let mut data = Vec::with_capacity(ids.len() * rows * CHANNELS * n_feature);
        let mut y = Vec::with_capacity(ids.len());
        for &i in ids {
            let (l, t) = self.index[i];
            for r in &self.series[l][t - self.k..=t] {
                data.extend_from_slice(r);
            }
            y.push(self.targets[l].map_or(f64::NAN, |h| h[t]));
        }
        Ok((Tensor::new(vec![ids.len(), rows, CHANNELS, n_feature], data)?, y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorPlan {
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub val_fraction: f64,
}

impl Default for PredictorPlan {
    fn default() -> Self {
        Self { epochs: 150, early_stop_patience: 20, batch_size: 2048, lr: 8e-4, weight_decay: 0.01, val_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorManifest {
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn batch_mse(p: &Predictor, set: &PredWindows, ids: &[usize], bs: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in ids.chunks(bs) {
        let (x, y) = set.gather(chunk, p.spec.n_feature)?;
        let pred = p.predict(&x)?;
        total += pred.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / ids.len() as f64)
}

/// AdamW on the squared error to HI, with best-validation restore.
pub fn train_predictor(
    mut p: Predictor,
    windows: &PredWindows,
    plan: &PredictorPlan,
    seed: u64,
) -> Result<(Predictor, PredictorManifest)> {
    if windows.is_empty() {
        return Err(Error::InsufficientData("no training windows".into()));
    }
    if plan.batch_size == 0 || plan.epochs == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..windows.len()).collect();
    ids.shuffle(&mut rng);
    let n = ids.len();
    let n_val = if n >= 2 && plan.val_fraction > 0.0 {
        ((n as f64 * plan.val_fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let val = ids.split_off(n - n_val);
    let mut train = ids;
    let mut opt = AdamW::new(&p.params, AdamWConfig { weight_decay: plan.weight_decay, ..AdamWConfig::with_lr(plan.lr) });
    let mut m = PredictorManifest { train_mse: Vec::new(), val_mse: Vec::new(), best_epoch: 0, stopped_early: false };
    let mut best: Option<(f64, ParamSet)> = None;
    for epoch in 0..plan.epochs {
        train.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in train.chunks(plan.batch_size) {
            let (x, y) = windows.gather(chunk, p.spec.n_feature)?;
            let mut g = Graph::eval();
            let out = p.forward(&mut g, &x)?;
            let t = g.input(Tensor::new(vec![chunk.len()], y)?);
            let d = g.sub(out, t)?;
            let sq = g.square(d);
            let loss = g.mean(sq);
            let v = g.value(loss).item();
            if !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite predictor loss at epoch {epoch}")));
            }
            total += v * chunk.len() as f64;
            let grads = g.backward(loss)?;
            let gs = grads.for_set(&p.params);
            opt.step(&mut p.params, &gs);
        }
        m.train_mse.push(total / train.len() as f64);
        let monitored = if val.is_empty() {
            *m.train_mse.last().expect("pushed")
        } else {
            batch_mse(&p, windows, &val, plan.batch_size)?
        };
        m.val_mse.push(monitored);
        if best.as_ref().is_none_or(|b| monitored < b.0) {
            best = Some((monitored, p.params.clone()));
            m.best_epoch = epoch;
        }
        if epoch - m.best_epoch >= plan.early_stop_patience {
            m.stopped_early = true;
            break;
        }
    }
    if let Some((_, params)) = best {
        p.params.load_from(&params)?;
    }
    Ok((p, m))
}

/// Held-out bearing, training bearings and optional generated lifecycles.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub test: BearingLifecycle,
    pub train: Vec<BearingLifecycle>,
    /// Label of the augmentation source, `None` for real data only.
    pub augmentation: Option<String>,
    pub generated: Vec<BearingLifecycle>,
    pub kind: PredictorKind,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub predictor: PredictorPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: PredictorKind,
    pub test_bearing: String,
    pub augmentation: String,
    pub n_train_windows: usize,
    pub n_test_windows: usize,
    pub per_seed: SeedReport<RulScores>,
    pub mean: Option<RulScores>,
}

impl ExperimentReport {
    pub const TSV_HEADER: &'static str = "model\ttest_bearing\taugmentation\tMAE\tRMSE\tScore\tseeds\tstatus";

    pub fn tsv_row(&self) -> String {
        let (mae, rmse, score) = match &self.mean {
            Some(m) => (m.mae.to_string(), m.rmse.to_string(), m.score.to_string()),
            None => ("undefined".into(), "undefined".into(), "undefined".into()),
        };
        let status = if self.per_seed.is_partial() { "partial" } else { "complete" };
        format!(
            "{}\t{}\t{}\t{mae}\t{rmse}\t{score}\t{}\t{status}",
            self.kind,
            self.test_bearing,
            self.augmentation,
            self.per_seed.values.len()
        )
    }
}

/// Train windows from real and generated lifecycles; fails if any test row
/// appears among them.
pub fn training_windows<'a>(plan: &'a ExperimentPlan) -> Result<PredWindows<'a>> {
    let test: HashSet<[u8; 32]> = plan.test.series.iter().map(|r| row_digest(r)).collect();
    let all: Vec<&BearingLifecycle> = plan.train.iter().chain(&plan.generated).collect();
    if let Some(lc) = all.iter().find(|lc| lc.bearing_id == plan.test.bearing_id) {
        return Err(Error::Leakage(format!("test bearing {} is in the training set", lc.bearing_id)));
    }
    let w = PredWindows::new(&all, plan.k)?;
    if w.rows().any(|r| test.contains(&row_digest(r))) {
        return Err(Error::Leakage(format!("a training window contains a row of {}", plan.test.bearing_id)));
    }
    Ok(w)
}

pub fn augmentation_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    if plan.augmentation.is_some() && plan.generated.is_empty() {
        return Err(Error::MissingData("augmentation requested without generated lifecycles".into()));
    }
    let train = training_windows(plan)?;
    let test = PredWindows::new(&[&plan.test], plan.k)?;
    let spec = PredictorSpec { kind: plan.kind, k: plan.k, n_feature: plan.test.n_feature };
    let test_ids: Vec<usize> = (0..test.len()).collect();
    let per_seed = run_seeds(&plan.seeds, |seed| {
        let (p, _) = train_predictor(build_predictor(spec, seed)?, &train, &plan.predictor, seed)?;
        let mut pred = Vec::with_capacity(test.len());
        let mut truth = Vec::with_capacity(test.len());
        for chunk in test_ids.chunks(512) {
            let (x, y) = test.gather(chunk, spec.n_feature)?;
            pred.extend(p.predict(&x)?);
            truth.extend(y);
        }
        rul_scores(&pred, &truth)
    });
    let mean = (!per_seed.is_partial() && !per_seed.values.is_empty()).then(|| {
        let n = per_seed.values.len() as f64;
        let sum = |f: fn(&RulScores) -> f64| per_seed.values.iter().map(|(_, s)| f(s)).sum::<f64>() / n;
        RulScores { rmse: sum(|s| s.rmse), mae: sum(|s| s.mae), score: sum(|s| s.score) }
    });
    Ok(ExperimentReport {
        kind: plan.kind,
        test_bearing: plan.test.bearing_id.clone(),
        augmentation: plan.augmentation.clone().unwrap_or_else(|| "none".into()),
        n_train_windows: train.len(),
        n_test_windows: test.len(),
        per_seed,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize_lifecycle, SyntheticSpec};

    fn lc(id: &str, n: usize, seed: u64) -> BearingLifecycle {
        synthesize_lifecycle(
            &SyntheticSpec {
                bearing_id: id.into(),
                n,
                fpt_index: n / 2,
                base_mean: [0.4, 0.5],
                noise_scale: 0.05,
                growth_exponent: 1.0,
                seed,
            },
            32,
        )
        .unwrap()
    }

    #[test]
    fn outputs_are_bounded_and_batched() {
        let s = PredictorSpec { kind: PredictorKind::Scnn, k: 15, n_feature: 32 };
        let p = build_predictor(s, 1).unwrap();
        let x = Tensor::from_fn(&[3, 16, 2, 32], |i| (i as f64 * 0.37).sin());
        let y = p.predict(&x).unwrap();
        assert_eq!(y.len(), 3);
        assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        let g = build_predictor(PredictorSpec { kind: PredictorKind::Gru, ..s }, 1).unwrap();
        for rows in [15, 20] {
            let x = Tensor::from_fn(&[2, rows, 2, 32], |i| (i as f64 * 0.11).cos());
            assert!(g.predict(&x).unwrap().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!("lstm".parse::<PredictorKind>().is_err());
    }

    #[test]
    fn deterministic_and_fits_constant_targets() {
        let mut a = lc("a", 40, 1);
        a.hi = vec![0.5; 40];
        let w = PredWindows::new(&[&a], 4).unwrap();
        let plan = PredictorPlan { epochs: 30, batch_size: 16, lr: 1e-2, ..PredictorPlan::default() };
        let s = PredictorSpec { kind: PredictorKind::Scnn, k: 4, n_feature: 32 };
        let (p, m1) = train_predictor(build_predictor(s, 3).unwrap(), &w, &plan, 3).unwrap();
        let (_, m2) = train_predictor(build_predictor(s, 3).unwrap(), &w, &plan, 3).unwrap();
        assert_eq!(m1, m2);
        let ids: Vec<usize> = (0..w.len()).collect();
        let mse = batch_mse(&p, &w, &ids, 64).unwrap();
        assert!(mse < 0.25, "{mse}");
    }

    #[test]
    fn augmentation_accounting_and_leakage() {
        let k = 4;
        let plan = ExperimentPlan {
            test: lc("test", 30, 9),
            train: vec![lc("a", 30, 1), lc("b", 25, 2)],
            augmentation: Some("gen".into()),
            generated: vec![lc("g0", 20, 5), lc("g1", 22, 6)],
            kind: PredictorKind::Scnn,
            k,
            seeds: vec![1],
            predictor: PredictorPlan { epochs: 1, batch_size: 32, ..PredictorPlan::default() },
        };
        let base = (30 - k) + (25 - k);
        assert_eq!(training_windows(&plan).unwrap().len(), base + (20 - k) + (22 - k));
        let r = augmentation_experiment(&plan).unwrap();
        let m = r.mean.unwrap();
        assert!(m.mae <= m.rmse + 1e-12);
        let mut leaky = plan.clone();
        leaky.generated[0].series[3] = leaky.test.series[7].clone();
        assert!(matches!(training_windows(&leaky), Err(Error::Leakage(_))));
    }
}
