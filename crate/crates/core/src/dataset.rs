//! Run-to-failure recordings: ingestion, scaling, pooling, health labels and
//! sliding-window sample construction.

use std::fs;
use std::path::{Path, PathBuf};

use autograd::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};

/// Points per channel in one raw snapshot (0.1 s at 25.6 kHz).
pub const FRAME_LEN: usize = 2560;
pub const CHANNELS: usize = 2;
pub const SAMPLE_PERIOD_S: f64 = 10.0;
pub const N_CLASSES: usize = 32;
pub const DEFAULT_N_FEATURE: usize = 512;
pub const DEFAULT_K: usize = 15;

/// First-prediction time and full life (both in seconds) of the seven
/// condition-1 bearings of the PHM 2012 challenge set.
pub const PHM2012_CONDITION1: [(&str, u32, u32); 7] = [
    ("Bearing1_1", 11_420, 28_030),
    ("Bearing1_2", 8_220, 8_710),
    ("Bearing1_3", 9_600, 23_750),
    ("Bearing1_4", 10_180, 14_280),
    ("Bearing1_5", 24_070, 24_630),
    ("Bearing1_6", 16_270, 24_480),
    ("Bearing1_7", 22_040, 22_590),
];

/// `(fpt_index, snapshot_count)` for a known condition-1 bearing.
pub fn phm2012_schedule(bearing_id: &str) -> Option<(usize, usize)> {
    let norm = bearing_id.replace('-', "_");
    PHM2012_CONDITION1.iter().find(|(id, _, _)| *id == norm).map(|&(_, fpt, life)| {
        ((fpt as f64 / SAMPLE_PERIOD_S) as usize, (life as f64 / SAMPLE_PERIOD_S) as usize)
    })
}

/// Raw two-channel snapshots of one bearing.
///
/// Each snapshot is channel-major: `FRAME_LEN` horizontal points followed by
/// `FRAME_LEN` vertical points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecording {
    pub bearing_id: String,
    pub condition: u8,
    pub snapshots: Vec<Vec<f64>>,
    pub sample_period_s: f64,
}

impl RawRecording {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn channel(&self, t: usize, c: usize) -> &[f64] {
        &self.snapshots[t][c * FRAME_LEN..(c + 1) * FRAME_LEN]
    }
}

/// Per-channel min/max used for `[0, 1]` scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: [f64; CHANNELS],
    pub max: [f64; CHANNELS],
}

impl NormStats {
    /// The identity scaling (`min = 0`, `max = 1`).
    pub fn identity() -> Self {
        Self { min: [0.0; CHANNELS], max: [1.0; CHANNELS] }
    }

    /// Scale one value; anything outside the fitted range is clamped.
    pub fn apply(&self, channel: usize, v: f64) -> f64 {
        let lo = self.min[channel];
        let hi = self.max[channel];
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    pub fn apply_recording(&self, rec: &RawRecording) -> RawRecording {
        let snapshots = rec
            .snapshots
            .iter()
            .map(|frame| {
                frame
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| self.apply(i / FRAME_LEN, v))
                    .collect()
            })
            .collect();
        RawRecording { snapshots, ..rec.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiMode {
    Linear,
    Piecewise,
}

/// Pooled, labelled lifecycle of one bearing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BearingLifecycle {
    pub bearing_id: String,
    /// One `2 * n_feature` channel-major row per snapshot.
    pub series: Vec<Vec<f64>>,
    pub fpt_index: usize,
    pub hi: Vec<f64>,
    pub hi_class: Vec<usize>,
    pub norm_stats: NormStats,
    pub n_feature: usize,
}

impl BearingLifecycle {
    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.series.len();
        if self.hi.len() != n || self.hi_class.len() != n {
            return Err(Error::Shape(format!(
                "{}: {} rows, {} hi values, {} classes",
                self.bearing_id,
                n,
                self.hi.len(),
                self.hi_class.len()
            )));
        }
        if n == 0 || self.fpt_index >= n {
            return Err(Error::Size(format!("{}: fpt {} for {} rows", self.bearing_id, self.fpt_index, n)));
        }
        if let Some(r) = self.series.iter().find(|r| r.len() != CHANNELS * self.n_feature) {
            return Err(Error::Shape(format!("{}: row of {} values", self.bearing_id, r.len())));
        }
        if self.hi.iter().any(|h| !(0.0..=1.0).contains(h)) || self.hi.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Range(format!("{}: hi not a non-increasing [0,1] sequence", self.bearing_id)));
        }
        if self.hi_class.iter().any(|&c| c >= N_CLASSES) {
            return Err(Error::Range(format!("{}: class outside 0..32", self.bearing_id)));
        }
        Ok(())
    }
}

/// One training unit: `k` history rows, the current row and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub x: Vec<f64>,
    pub x2: Vec<Vec<f64>>,
    pub hi: f64,
    pub hi_class: usize,
}

/// Parameters of a synthetic run-to-failure recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub bearing_id: String,
    pub n: usize,
    pub fpt_index: usize,
    pub base_mean: [f64; CHANNELS],
    pub noise_scale: f64,
    pub growth_exponent: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fpt_index == 0 || self.fpt_index >= self.n {
            return Err(Error::Config(format!(
                "synthetic spec needs 0 < fpt_index < n, got fpt {} with n {}",
                self.fpt_index, self.n
            )));
        }
        if !(self.noise_scale > 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::Config(format!("noise_scale must be > 0, got {}", self.noise_scale)));
        }
        if !self.growth_exponent.is_finite() || self.growth_exponent <= 0.0 {
            return Err(Error::Config(format!("growth_exponent must be > 0, got {}", self.growth_exponent)));
        }
        Ok(())
    }

    /// Degradation amplitude in `[0, 1]`: zero up to the FPT, then a power ramp.
    pub fn amplitude(&self, t: usize) -> f64 {
        if t <= self.fpt_index {
            0.0
        } else {
            let span = (self.n - 1 - self.fpt_index) as f64;
            ((t - self.fpt_index) as f64 / span).powf(self.growth_exponent).clamp(0.0, 1.0)
        }
    }
}

fn snapshot_index(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    digits.chars().rev().collect::<String>().parse().ok()
}

fn parse_frame(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != FRAME_LEN {
        return Err(Error::MalformedFrame { file: path.to_path_buf(), expected: FRAME_LEN, found: rows.len() });
    }
    let mut frame = vec![0.0; CHANNELS * FRAME_LEN];
    for (row, line) in rows.iter().enumerate() {
        let fields: Vec<&str> = line.split([',', ';']).map(str::trim).collect();
        if fields.len() < 6 {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                row,
                msg: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        for c in 0..CHANNELS {
            let cell = fields[4 + c];
            frame[c * FRAME_LEN + row] = cell.parse().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                row,
                msg: format!("non-numeric acceleration {cell:?}"),
            })?;
        }
    }
    Ok(frame)
}

/// Read one bearing directory: one delimited text file per snapshot, rows of
/// `(h, m, s, us, horizontal, vertical)`, ordered by the trailing file index.
///
/// Only `acc*` files are read when the directory has any (PHM layouts also
/// carry temperature files).
pub fn ingest_bearing(dir: &Path, bearing_id: &str) -> Result<RawRecording> {
    if !dir.is_dir() {
        return Err(Error::MissingData(format!("directory {} does not exist", dir.display())));
    }
    let mut files: Vec<(u64, PathBuf)> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter_map(|p| snapshot_index(&p).map(|i| (i, p)))
        .collect();
    if files.iter().any(|(_, p)| file_name_starts_with(p, "acc")) {
        files.retain(|(_, p)| file_name_starts_with(p, "acc"));
    }
    if files.is_empty() {
        return Err(Error::MissingData(format!("no snapshot files in {}", dir.display())));
    }
    files.sort();
    let snapshots = files.iter().map(|(_, p)| parse_frame(p)).collect::<Result<Vec<_>>>()?;
    Ok(RawRecording {
        bearing_id: bearing_id.to_string(),
        condition: 1,
        snapshots,
        sample_period_s: SAMPLE_PERIOD_S,
    })
}

fn file_name_starts_with(p: &Path, prefix: &str) -> bool {
    p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(prefix))
}

/// Average-pool a channel-major `2 x FRAME_LEN` frame into `2 x n_feature` bins.
pub fn pool_features(frame: &[f64], n_feature: usize) -> Result<Vec<f64>> {
    if n_feature == 0 || FRAME_LEN % n_feature != 0 {
        return Err(Error::Config(format!("n_feature {n_feature} does not divide {FRAME_LEN}")));
    }
    if frame.len() != CHANNELS * FRAME_LEN {
        return Err(Error::Shape(format!("frame of {} values, expected {}", frame.len(), CHANNELS * FRAME_LEN)));
    }
    let width = FRAME_LEN / n_feature;
    Ok(frame.chunks_exact(width).map(|c| c.iter().sum::<f64>() / width as f64).collect())
}

/// Fit global per-channel min/max over every snapshot of every recording.
pub fn fit_norm_stats(recordings: &[RawRecording]) -> Result<NormStats> {
    if recordings.iter().all(|r| r.is_empty()) {
        return Err(Error::MissingData("normalisation needs at least one recording".into()));
    }
    let mut stats = NormStats { min: [f64::INFINITY; CHANNELS], max: [f64::NEG_INFINITY; CHANNELS] };
    for rec in recordings {
        for t in 0..rec.len() {
            for c in 0..CHANNELS {
                for &v in rec.channel(t, c) {
                    stats.min[c] = stats.min[c].min(v);
                    stats.max[c] = stats.max[c].max(v);
                }
            }
        }
    }
    for c in 0..CHANNELS {
        if !(stats.max[c] > stats.min[c]) {
            return Err(Error::DegenerateScale { channel: c, value: stats.min[c] });
        }
    }
    Ok(stats)
}

/// Global min-max scaling of all recordings to `[0, 1]`.
pub fn normalize(recordings: &[RawRecording]) -> Result<(Vec<RawRecording>, NormStats)> {
    let stats = fit_norm_stats(recordings)?;
    Ok((recordings.iter().map(|r| stats.apply_recording(r)).collect(), stats))
}

/// Health indicator sequence of length `n`, `1` at the start and `0` at the end.
pub fn compute_hi(n: usize, fpt_index: usize, mode: HiMode) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Size(format!("need at least 2 snapshots, got {n}")));
    }
    let last = (n - 1) as f64;
    match mode {
        HiMode::Linear => Ok((0..n).map(|t| (n - 1 - t) as f64 / last).collect()),
        HiMode::Piecewise => {
            if fpt_index >= n - 1 {
                return Err(Error::Schedule(format!("fpt_index {fpt_index} leaves no decay region in {n} steps")));
            }
            let span = (n - 1 - fpt_index) as f64;
            Ok((0..n)
                .map(|t| if t <= fpt_index { 1.0 } else { (n - 1 - t) as f64 / span })
                .collect())
        }
    }
}

/// Map a health indicator in `[0, 1]` onto one of 32 equal-width classes.
pub fn quantize_hi(hi: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&hi) {
        return Err(Error::Range(format!("hi {hi} outside [0, 1]")));
    }
    Ok(((hi * N_CLASSES as f64).floor() as usize).min(N_CLASSES - 1))
}

/// Pool and label an already scaled recording.
pub fn build_lifecycle(
    rec: &RawRecording,
    fpt_index: usize,
    mode: HiMode,
    n_feature: usize,
    norm_stats: NormStats,
) -> Result<BearingLifecycle> {
    let series = rec.snapshots.iter().map(|f| pool_features(f, n_feature)).collect::<Result<Vec<_>>>()?;
    let hi = compute_hi(series.len(), fpt_index, mode)?;
    let hi_class = hi.iter().map(|&h| quantize_hi(h)).collect::<Result<Vec<_>>>()?;
    let lc = BearingLifecycle {
        bearing_id: rec.bearing_id.clone(),
        series,
        fpt_index,
        hi,
        hi_class,
        norm_stats,
        n_feature,
    };
    lc.validate()?;
    Ok(lc)
}

/// All `n - k` labelled windows of a lifecycle.
pub fn build_windows(lc: &BearingLifecycle, k: usize) -> Result<Vec<WindowSample>> {
    let n = lc.len();
    if k == 0 || n <= k {
        return Err(Error::InsufficientData(format!(
            "{}: {} snapshots cannot fill a window of {} plus a label",
            lc.bearing_id, n, k
        )));
    }
    Ok((0..n - k)
        .map(|j| WindowSample {
            x: lc.series[j + k].clone(),
            x2: lc.series[j..j + k].to_vec(),
            hi: lc.hi[j + k],
            hi_class: lc.hi_class[j + k],
        })
        .collect())
}

/// Raw 2 x 2560 synthetic snapshots with post-FPT noise growth.
pub fn synthesize_recording(spec: &SyntheticSpec) -> Result<RawRecording> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let snapshots = (0..spec.n)
        .map(|t| {
            let gain = spec.noise_scale * (1.0 + spec.amplitude(t));
            let mut frame = Vec::with_capacity(CHANNELS * FRAME_LEN);
            for c in 0..CHANNELS {
                for _ in 0..FRAME_LEN {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    frame.push(spec.base_mean[c] + gain * xi);
                }
            }
            frame
        })
        .collect();
    Ok(RawRecording {
        bearing_id: spec.bearing_id.clone(),
        condition: 1,
        snapshots,
        sample_period_s: SAMPLE_PERIOD_S,
    })
}

/// Unscaled synthetic lifecycle, pooled to `n_feature` bins with piecewise labels.
pub fn synthesize_lifecycle(spec: &SyntheticSpec, n_feature: usize) -> Result<BearingLifecycle> {
    let rec = synthesize_recording(spec)?;
    build_lifecycle(&rec, spec.fpt_index, HiMode::Piecewise, n_feature, NormStats::identity())
}

/// SHA-256 of one lifecycle's identifier, rows and labels.
pub fn lifecycle_digest(lc: &BearingLifecycle) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(lc.bearing_id.as_bytes());
    h.update((lc.fpt_index as u64).to_le_bytes());
    for row in &lc.series {
        h.update(row_digest(row));
    }
    for (&z, &c) in lc.hi.iter().zip(&lc.hi_class) {
        h.update(z.to_le_bytes());
        h.update((c as u64).to_le_bytes());
    }
    h.finalize().into()
}

/// SHA-256 of one pooled row's bit pattern.
pub fn row_digest(row: &[f64]) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in row {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

/// Every window of a set of lifecycles, addressed by `(lifecycle, position)`
/// without materialising the overlapping history blocks.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub lifecycles: Vec<BearingLifecycle>,
    pub k: usize,
    index: Vec<(usize, usize)>,
}

/// Dense batch tensors drawn from a [`WindowSet`].
#[derive(Debug, Clone)]
pub struct WindowBatch {
    /// `[B, 2, n_feature]`
    pub x: Tensor,
    /// `[B, k, 2, n_feature]`
    pub history: Tensor,
    pub classes: Vec<usize>,
    pub hi: Vec<f64>,
}

impl WindowSet {
    pub fn new(lifecycles: Vec<BearingLifecycle>, k: usize) -> Result<Self> {
        if lifecycles.is_empty() {
            return Err(Error::InsufficientData("no lifecycles".into()));
        }
        let n_feature = lifecycles[0].n_feature;
        let mut index = Vec::new();
        for (l, lc) in lifecycles.iter().enumerate() {
            lc.validate()?;
            if lc.n_feature != n_feature {
                return Err(Error::Shape(format!(
                    "{} has n_feature {}, expected {}",
                    lc.bearing_id, lc.n_feature, n_feature
                )));
            }
            if k == 0 || lc.len() <= k {
                return Err(Error::InsufficientData(format!(
                    "{}: {} snapshots for window {}",
                    lc.bearing_id,
                    lc.len(),
                    k
                )));
            }
            index.extend((k..lc.len()).map(|t| (l, t)));
        }
        Ok(Self { lifecycles, k, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn n_feature(&self) -> usize {
        self.lifecycles[0].n_feature
    }

    /// SHA-256 over `k` and every lifecycle's rows and labels.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.k as u64).to_le_bytes());
        for lc in &self.lifecycles {
            h.update(lifecycle_digest(lc));
        }
        hex::encode(h.finalize())
    }

    /// `(lifecycle, labelled position)` of window `i`.
    pub fn position(&self, i: usize) -> (usize, usize) {
        self.index[i]
    }

    pub fn sample(&self, i: usize) -> WindowSample {
        let (l, t) = self.index[i];
        let lc = &self.lifecycles[l];
        WindowSample {
            x: lc.series[t].clone(),
            x2: lc.series[t - self.k..t].to_vec(),
            hi: lc.hi[t],
            hi_class: lc.hi_class[t],
        }
    }

    /// Gather a batch. `histories`, when given, replaces the real rows: it is
    /// indexed `[lifecycle][position]` and must cover every history row used.
    pub fn gather(&self, ids: &[usize], histories: Option<&[Vec<Vec<f64>>]>) -> WindowBatch {
        let nf = self.n_feature();
        let row = CHANNELS * nf;
        let mut x = Vec::with_capacity(ids.len() * row);
        let mut h = Vec::with_capacity(ids.len() * self.k * row);
        let mut classes = Vec::with_capacity(ids.len());
        let mut hi = Vec::with_capacity(ids.len());
        for &i in ids {
            let (l, t) = self.index[i];
            let lc = &self.lifecycles[l];
            x.extend_from_slice(&lc.series[t]);
            let src = histories.map_or(&lc.series, |hs| &hs[l]);
            for r in &src[t - self.k..t] {
                h.extend_from_slice(r);
            }
            classes.push(lc.hi_class[t]);
            hi.push(lc.hi[t]);
        }
        let b = ids.len();
        WindowBatch {
            x: Tensor::new(vec![b, CHANNELS, nf], x).expect("batch shape"),
            history: Tensor::new(vec![b, self.k, CHANNELS, nf], h).expect("batch shape"),
            classes,
            hi,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lifecycle(n: usize, fpt: usize, nf: usize) -> BearingLifecycle {
        let hi = compute_hi(n, fpt, HiMode::Piecewise).unwrap();
        BearingLifecycle {
            bearing_id: "t".into(),
            series: (0..n).map(|t| vec![t as f64; 2 * nf]).collect(),
            fpt_index: fpt,
            hi_class: hi.iter().map(|&h| quantize_hi(h).unwrap()).collect(),
            hi,
            norm_stats: NormStats::identity(),
            n_feature: nf,
        }
    }

    #[test]
    fn pooling_examples() {
        let ones = vec![1.0; 2 * FRAME_LEN];
        assert!(pool_features(&ones, 512).unwrap().iter().all(|&v| v == 1.0));
        let ramp: Vec<f64> = (0..2).flat_map(|_| (0..FRAME_LEN).map(|i| i as f64)).collect();
        let pooled = pool_features(&ramp, 512).unwrap();
        for c in 0..2 {
            for i in 0..512 {
                assert_eq!(pooled[c * 512 + i], 5.0 * i as f64 + 2.0);
            }
        }
        assert!(matches!(pool_features(&ones, 500), Err(Error::Config(_))));
    }

    #[test]
    fn hi_examples() {
        assert_eq!(compute_hi(5, 0, HiMode::Linear).unwrap(), vec![1.0, 0.75, 0.5, 0.25, 0.0]);
        let hi = compute_hi(2803, 1142, HiMode::Piecewise).unwrap();
        assert!(hi[..=1142].iter().all(|&h| h == 1.0));
        assert_eq!(hi[2802], 0.0);
        let hi = compute_hi(4, 0, HiMode::Piecewise).unwrap();
        for (a, b) in hi.iter().zip([1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(compute_hi(1, 0, HiMode::Linear), Err(Error::Size(_))));
        assert!(matches!(compute_hi(5, 4, HiMode::Piecewise), Err(Error::Schedule(_))));
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_hi(0.0).unwrap(), 0);
        assert_eq!(quantize_hi(1.0).unwrap(), 31);
        assert_eq!(quantize_hi(0.5).unwrap(), 16);
        assert!(quantize_hi(1.0001).is_err());
        assert!(quantize_hi(-0.1).is_err());
        assert!(quantize_hi(f64::NAN).is_err());
    }

    #[test]
    fn phm_bearing_constants() {
        assert_eq!(phm2012_schedule("Bearing1-1"), Some((1142, 2803)));
        assert_eq!(phm2012_schedule("Bearing1_3"), Some((960, 2375)));
        assert_eq!(phm2012_schedule("Bearing2_1"), None);
    }

    #[test]
    fn window_examples() {
        let lc = lifecycle(100, 40, 4);
        assert_eq!(build_windows(&lc, 15).unwrap().len(), 85);
        let lc16 = lifecycle(16, 5, 4);
        let w = build_windows(&lc16, 15).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].x, lc16.series[15]);
        let lc15 = lifecycle(15, 5, 4);
        assert!(matches!(build_windows(&lc15, 15), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn window_set_matches_build_windows() {
        let lc = lifecycle(30, 10, 4);
        let ws = WindowSet::new(vec![lc.clone()], 5).unwrap();
        let direct = build_windows(&lc, 5).unwrap();
        assert_eq!(ws.len(), direct.len());
        for (i, d) in direct.iter().enumerate() {
            assert_eq!(&ws.sample(i), d);
        }
        let b = ws.gather(&[0, 3], None);
        assert_eq!(b.x.shape(), &[2, 2, 4]);
        assert_eq!(b.history.shape(), &[2, 5, 2, 4]);
        assert_eq!(b.x.row(1), &direct[3].x[..]);
    }

    #[test]
    fn normalization_examples() {
        let mut frame = vec![0.0; 2 * FRAME_LEN];
        frame[0] = -20.0;
        frame[1] = 20.0;
        frame[FRAME_LEN] = 1.0;
        let rec = RawRecording { bearing_id: "a".into(), condition: 1, snapshots: vec![frame], sample_period_s: 10.0 };
        let (scaled, stats) = normalize(std::slice::from_ref(&rec)).unwrap();
        assert_eq!(scaled[0].snapshots[0][0], 0.0);
        assert_eq!(scaled[0].snapshots[0][1], 1.0);

        let mut other = rec.clone();
        other.snapshots[0][1] = 40.0;
        let (_, both) = normalize(&[rec.clone(), other]).unwrap();
        assert_eq!(both.max[0], 40.0);
        assert_eq!(both.apply(0, 40.0), 1.0);
        assert_eq!(both.apply(0, 20.0), 40.0 / 60.0);
        assert_eq!(stats.apply(0, 100.0), 1.0, "held-out values clamp");

        let flat = RawRecording { snapshots: vec![vec![3.0; 2 * FRAME_LEN]], ..rec };
        assert!(matches!(normalize(&[flat]), Err(Error::DegenerateScale { channel: 0, .. })));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec {
            bearing_id: "s".into(),
            n: 12,
            fpt_index: 5,
            base_mean: [0.5, -0.2],
            noise_scale: 0.3,
            growth_exponent: 1.0,
            seed: 99,
        };
        assert_eq!(synthesize_lifecycle(&spec, 64).unwrap(), synthesize_lifecycle(&spec, 64).unwrap());
        let bad = SyntheticSpec { fpt_index: 0, ..spec.clone() };
        assert!(bad.validate().is_err());
        let bad = SyntheticSpec { noise_scale: 0.0, ..spec };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tiny_noise_is_constant_before_fpt() {
        let spec = SyntheticSpec {
            bearing_id: "s".into(),
            n: 10,
            fpt_index: 6,
            base_mean: [0.25, 0.75],
            noise_scale: 1e-300,
            growth_exponent: 2.0,
            seed: 3,
        };
        let lc = synthesize_lifecycle(&spec, 128).unwrap();
        for row in &lc.series[..=6] {
            assert!(row[..128].iter().all(|&v| v == 0.25));
            assert!(row[128..].iter().all(|&v| v == 0.75));
        }
    }
}
