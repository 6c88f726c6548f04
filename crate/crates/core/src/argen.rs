//! Autoregressive and non-autoregressive generation.

use std::collections::VecDeque;

use autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{compute_hi, quantize_hi, BearingLifecycle, HiMode, NormStats, WindowSet, CHANNELS};
use crate::error::{Error, Result};
use crate::nets::{ConditionBundle, ModelBundle, Part};
use crate::trainer::InitialGenerator;

pub const DEFAULT_LENGTH: usize = 1000;
pub const DEFAULT_FPT_STEP: usize = 300;
/// Class assumed for rows of the initial buffer.
pub const HEALTHY_CLASS: usize = 31;

/// `dim` standard normals for step `position` of noise stream `stream`.
/// Any step can be drawn without drawing the ones before it.
pub fn step_noise(seed: u64, stream: u64, position: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos((position as u128) << 20);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiSchedule {
    pub length: usize,
    pub fpt_step: usize,
    pub hi: Vec<f64>,
    pub classes: Vec<usize>,
}

impl HiSchedule {
    pub fn validate(&self) -> Result<()> {
        let n = self.length;
        if self.classes.len() != n || self.hi.len() != n {
            return Err(Error::Schedule(format!("{} classes for length {n}", self.classes.len())));
        }
        if self.fpt_step == 0 || self.fpt_step >= n {
            return Err(Error::Schedule(format!("fpt_step {} outside (0, {n})", self.fpt_step)));
        }
        if self.classes[..self.fpt_step].iter().any(|&c| c != HEALTHY_CLASS)
            || self.classes.windows(2).any(|w| w[1] > w[0])
            || self.classes[n - 1] != 0
        {
            return Err(Error::Schedule("classes must start at 31, never rise and end at 0".into()));
        }
        Ok(())
    }
}

/// Flat at 1 up to `fpt_step - 1`, then linear down to 0 at the last step.
pub fn plan_hi_schedule(length: usize, fpt_step: usize) -> Result<HiSchedule> {
    if fpt_step == 0 || fpt_step >= length {
        return Err(Error::Schedule(format!("need 0 < fpt_step < length, got {fpt_step} and {length}")));
    }
    let hi = compute_hi(length, fpt_step - 1, HiMode::Piecewise)?;
    let classes = hi.iter().map(|&h| quantize_hi(h)).collect::<Result<Vec<_>>>()?;
    let s = HiSchedule { length, fpt_step, hi, classes };
    s.validate()?;
    Ok(s)
}

/// Fixed-length FIFO of generated rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    rows: VecDeque<Vec<f64>>,
    discarded: usize,
}

impl HistoryBuffer {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("empty history".into()));
        }
        let w = rows[0].len();
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::Shape("ragged history rows".into()));
        }
        Ok(Self { rows: rows.into(), discarded: 0 })
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().map(Vec::as_slice)
    }

    /// Rows dropped so far.
    pub fn discarded(&self) -> usize {
        self.discarded
    }

    /// Drop the oldest row and append `row`.
    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows[0].len() {
            return Err(Error::Shape(format!("row of {} values, buffer holds {}", row.len(), self.rows[0].len())));
        }
        self.rows.pop_front();
        self.rows.push_back(row);
        self.discarded += 1;
        Ok(())
    }

    /// `[1, k, 2, n_feature]`
    pub fn to_tensor(&self) -> Tensor {
        let w = self.rows[0].len();
        let data: Vec<f64> = self.rows.iter().flatten().copied().collect();
        Tensor::new(vec![1, self.k(), CHANNELS, w / CHANNELS], data).expect("buffer shape")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Generator parameter fingerprint, hex.
    pub checkpoint: String,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedLifecycle {
    pub series: Vec<Vec<f64>>,
    pub schedule: HiSchedule,
    pub provenance: Provenance,
}

impl GeneratedLifecycle {
    /// View as a labelled lifecycle for downstream consumers.
    pub fn to_lifecycle(&self, bearing_id: &str, n_feature: usize) -> Result<BearingLifecycle> {
        let lc = BearingLifecycle {
            bearing_id: bearing_id.into(),
            series: self.series.clone(),
            fpt_index: self.schedule.fpt_step - 1,
            hi: self.schedule.hi.clone(),
            hi_class: self.schedule.classes.clone(),
            norm_stats: NormStats::identity(),
            n_feature,
        };
        lc.validate()?;
        Ok(lc)
    }
}

/// Sample the starting buffer from a trained initial generator.
pub fn init_history(init: &InitialGenerator, seed: u64) -> Result<HistoryBuffer> {
    if init.trained_epochs == 0 {
        return Err(Error::Contract("initial generator has not been trained".into()));
    }
    let w = init.sample(seed)?;
    if w.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Contract("initial window outside [0, 1]".into()));
    }
    let row = w.len() / init.k;
    HistoryBuffer::new(w.data().chunks(row).map(<[f64]>::to_vec).collect())
}

fn checkpoint_id(model: &ModelBundle) -> String {
    format!("{:016x}", model.fingerprint(Part::Generator).unwrap_or(0))
}

/// Roll out `schedule.length` steps from `history`, using noise stream 0.
pub fn ar_generate(
    model: &ModelBundle,
    init: &InitialGenerator,
    schedule: &HiSchedule,
    seed: u64,
) -> Result<GeneratedLifecycle> {
    let mut history = init_history(init, seed)?;
    rollout(model, &mut history, schedule, seed, 0)
}

/// Roll out from an explicit buffer on the given noise stream. Only the
/// generator is invoked.
pub fn rollout(
    model: &ModelBundle,
    history: &mut HistoryBuffer,
    schedule: &HiSchedule,
    seed: u64,
    stream: u64,
) -> Result<GeneratedLifecycle> {
    schedule.validate()?;
    let series = rollout_prefix(model, history, schedule, seed, stream, schedule.length, |_, _| {})?;
    Ok(GeneratedLifecycle {
        series,
        schedule: schedule.clone(),
        provenance: Provenance { checkpoint: checkpoint_id(model), seed, stream },
    })
}

/// First `steps` steps of a rollout. `observe` sees the buffer after every step.
pub fn rollout_prefix(
    model: &ModelBundle,
    history: &mut HistoryBuffer,
    schedule: &HiSchedule,
    seed: u64,
    stream: u64,
    steps: usize,
    mut observe: impl FnMut(usize, &HistoryBuffer),
) -> Result<Vec<Vec<f64>>> {
    let cfg = &model.cfg;
    if history.k() != cfg.k || history.rows[0].len() != CHANNELS * cfg.n_feature {
        return Err(Error::Shape(format!(
            "buffer is {}x{}, model expects {}x{}",
            history.k(),
            history.rows[0].len(),
            cfg.k,
            CHANNELS * cfg.n_feature
        )));
    }
    if steps > schedule.classes.len() {
        return Err(Error::Schedule(format!("{steps} steps from a schedule of {}", schedule.classes.len())));
    }
    let mut series = Vec::with_capacity(steps);
    for t in 0..steps {
        let z = Tensor::new(vec![1, cfg.latent_dim], step_noise(seed, stream, t as u64, cfg.latent_dim))?;
        let cond = model
            .variant
            .is_conditional()
            .then(|| ConditionBundle::new(vec![schedule.classes[t]], Some(history.to_tensor())));
        let out = model.generate_eval(&z, cond.as_ref())?;
        if !out.is_finite() {
            return Err(Error::Numerical(format!("non-finite output at step {t}")));
        }
        let row = out.into_data();
        history.push(row.clone())?;
        observe(t, history);
        series.push(row);
    }
    Ok(series)
}

/// One signal per window, conditioned on the real history and class. Window
/// `(l, t)` uses step `t - k` of noise stream `l`, so lifecycle `l` lines up
/// with a rollout on stream `l`.
pub fn nar_generate(model: &ModelBundle, windows: &WindowSet, seed: u64, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    if windows.k != model.cfg.k || windows.n_feature() != model.cfg.n_feature {
        return Err(Error::Shape("window geometry does not match the model".into()));
    }
    let latent = model.cfg.latent_dim;
    let ids: Vec<usize> = (0..windows.len()).collect();
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(batch_size.max(1)) {
        let batch = windows.gather(chunk, None);
        let z: Vec<f64> = chunk
            .iter()
            .flat_map(|&i| {
                let (l, t) = windows.position(i);
                step_noise(seed, l as u64, (t - windows.k) as u64, latent)
            })
            .collect();
        let z = Tensor::new(vec![chunk.len(), latent], z)?;
        let cond = model.variant.is_conditional().then(|| {
            let h = model.variant.uses_history().then_some(batch.history);
            ConditionBundle::new(batch.classes, h)
        });
        let g = model.generate_eval(&z, cond.as_ref())?;
        if !g.is_finite() {
            return Err(Error::Numerical("non-finite output in non-autoregressive generation".into()));
        }
        out.extend((0..chunk.len()).map(|i| g.row(i).to_vec()));
    }
    Ok(out)
}

/// Per-step RMS of each channel, `[t][channel]`.
pub fn rms_profile(series: &[Vec<f64>]) -> Vec<[f64; CHANNELS]> {
    series
        .iter()
        .map(|row| {
            let n = row.len() / CHANNELS;
            let mut r = [0.0; CHANNELS];
            for (c, v) in r.iter_mut().enumerate() {
                *v = (row[c * n..(c + 1) * n].iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
            }
            r
        })
        .collect()
}
