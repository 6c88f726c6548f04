//! Generation quality metrics and RUL scores.

use autograd::{apply_bn_updates, AdamW, AdamWConfig, Graph, Tensor};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{BearingLifecycle, CHANNELS};
use crate::error::{Error, Result};
use crate::nets::SnapshotClassifier;

pub const PCA_DIMS: usize = 64;
/// Relative tolerance for negative eigenvalues in the FID square root.
const EIG_TOL: f64 = 1e-6;

fn channel(row: &[f64], c: usize) -> &[f64] {
    let n = row.len() / CHANNELS;
    &row[c * n..(c + 1) * n]
}

/// Principal axes of one channel, fitted on real signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjector {
    pub channel: usize,
    pub mean: Vec<f64>,
    /// `dims` orthonormal axes, strongest first.
    pub axes: Vec<Vec<f64>>,
    /// Variance captured by each axis.
    pub variances: Vec<f64>,
}

/// Fit a projector to channel `channel` of `real` (rows are channel-major).
pub fn fit_pca(real: &[Vec<f64>], channel_idx: usize, dims: usize) -> Result<PcaProjector> {
    if channel_idx >= CHANNELS {
        return Err(Error::Range(format!("channel {channel_idx}")));
    }
    if dims == 0 || real.len() < dims {
        return Err(Error::InsufficientData(format!("{} samples for {dims} components", real.len())));
    }
    let n = real[0].len() / CHANNELS;
    if dims > n {
        return Err(Error::Size(format!("{dims} components from {n}-point signals")));
    }
    if real.iter().any(|r| r.len() != CHANNELS * n) {
        return Err(Error::Shape("ragged signal rows".into()));
    }
    let m = real.len();
    let mut mean = vec![0.0; n];
    for r in real {
        for (a, v) in mean.iter_mut().zip(channel(r, channel_idx)) {
            *a += v / m as f64;
        }
    }
    let centered = DMatrix::from_fn(m, n, |i, j| channel(&real[i], channel_idx)[j] - mean[j]);
    let cov = centered.transpose() * &centered / m as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axes = order[..dims].iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
    let variances = order[..dims].iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    Ok(PcaProjector { channel: channel_idx, mean, axes, variances })
}

impl PcaProjector {
    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    /// Coordinates of this projector's channel of `row`.
    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        let x = channel(row, self.channel);
        self.axes
            .iter()
            .map(|a| a.iter().zip(x).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect()
    }

    /// Back to signal space.
    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (a, c) in self.axes.iter().zip(coords) {
            for (o, v) in out.iter_mut().zip(a) {
                *o += c * v;
            }
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_kernel(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: f64) -> f64 {
    let mut s = 0.0;
    for x in a {
        for y in b {
            s += (-sq_dist(x, y) / bandwidth).exp();
        }
    }
    s / (a.len() * b.len()) as f64
}

/// Biased (V-statistic) MMD with kernel `exp(-|x - y|^2 / bandwidth)`.
pub fn mmd_vectors(gen: &[Vec<f64>], real: &[Vec<f64>], bandwidth: f64) -> Result<f64> {
    if gen.is_empty() || real.is_empty() {
        return Err(Error::InsufficientData("empty sample set".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::Config(format!("bandwidth {bandwidth}")));
    }
    Ok(mean_kernel(gen, gen, bandwidth) - 2.0 * mean_kernel(gen, real, bandwidth) + mean_kernel(real, real, bandwidth))
}

/// MMD of one channel after projection with the real-fitted `projector`.
pub fn mmd(gen: &[Vec<f64>], real: &[Vec<f64>], projector: &PcaProjector, bandwidth: f64) -> Result<f64> {
    let g: Vec<Vec<f64>> = gen.iter().map(|r| projector.project(r)).collect();
    let r: Vec<Vec<f64>> = real.iter().map(|r| projector.project(r)).collect();
    mmd_vectors(&g, &r, bandwidth)
}

fn moments(features: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = features.len();
    let d = features[0].len();
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mu = DVector::from_fn(d, |j, _| x.column(j).mean());
    let c = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    (mu, c.transpose() * c / denom)
}

/// Square root of a symmetric positive semi-definite matrix.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, 1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("eigendecomposition did not converge".into()))?;
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -EIG_TOL * scale {
            return Err(Error::Numerical(format!("matrix square root of an indefinite matrix (eigenvalue {v})")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Fréchet distance between the Gaussian moments of two feature sets.
pub fn fid_features(gen: &[Vec<f64>], real: &[Vec<f64>]) -> Result<f64> {
    if gen.is_empty() || real.is_empty() {
        return Err(Error::InsufficientData("empty feature set".into()));
    }
    if gen[0].len() != real[0].len() {
        return Err(Error::Shape("feature widths differ".into()));
    }
    let (mg, sg) = moments(gen);
    let (mr, sr) = moments(real);
    let root_g = psd_sqrt(&sg)?;
    let cross = psd_sqrt(&(&root_g * &sr * &root_g))?;
    let fid = (&mg - &mr).norm_squared() + sg.trace() + sr.trace() - 2.0 * cross.trace();
    if !fid.is_finite() {
        return Err(Error::Numerical("non-finite Fréchet distance".into()));
    }
    Ok(fid.max(0.0))
}

/// Trained snapshot classifier whose pooled features feed the Fréchet distance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub classifier: SnapshotClassifier,
    pub trained_epochs: usize,
}

impl FeatureExtractor {
    pub fn n_feature(&self) -> usize {
        self.classifier.cfg.n_feature
    }

    /// Hex fingerprint of the parameters, for report provenance.
    pub fn fingerprint(&self) -> String {
        format!("{:016x}", self.classifier.net.params.fingerprint())
    }

    /// Evaluation-mode pooled features, one vector per signal.
    pub fn features(&self, signals: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let nf = self.n_feature();
        let mut out = Vec::with_capacity(signals.len());
        for chunk in signals.chunks(256) {
            let mut data = Vec::with_capacity(chunk.len() * CHANNELS * nf);
            for s in chunk {
                if s.len() != CHANNELS * nf {
                    return Err(Error::Shape(format!("signal of {} values, extractor expects {}", s.len(), CHANNELS * nf)));
                }
                data.extend_from_slice(s);
            }
            let mut g = Graph::eval();
            let x = g.input(Tensor::new(vec![chunk.len(), CHANNELS, nf], data)?);
            let (_, f) = self.classifier.forward(&mut g, x)?;
            let f = g.value(f);
            if !f.is_finite() {
                return Err(Error::Numerical("non-finite extractor features".into()));
            }
            out.extend((0..chunk.len()).map(|i| f.row(i).to_vec()));
        }
        Ok(out)
    }

    /// Fraction of snapshots whose class is predicted exactly.
    pub fn accuracy(&self, signals: &[Vec<f64>], classes: &[usize]) -> Result<f64> {
        let nf = self.n_feature();
        let mut hits = 0;
        for (chunk, labels) in signals.chunks(256).zip(classes.chunks(256)) {
            let data: Vec<f64> = chunk.iter().flatten().copied().collect();
            let mut g = Graph::eval();
            let x = g.input(Tensor::new(vec![chunk.len(), CHANNELS, nf], data)?);
            let (logits, _) = self.classifier.forward(&mut g, x)?;
            let l = g.value(logits);
            for (i, &y) in labels.iter().enumerate() {
                let row = l.row(i);
                let arg = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
                hits += usize::from(arg == y);
            }
        }
        Ok(hits as f64 / signals.len().max(1) as f64)
    }
}

/// Train the feature classifier to predict HI classes of real snapshots.
pub fn train_feature_extractor(
    lifecycles: &[BearingLifecycle],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<FeatureExtractor> {
    let first = lifecycles.first().ok_or_else(|| Error::InsufficientData("no lifecycles".into()))?;
    let nf = first.n_feature;
    let mut clf = SnapshotClassifier::new(nf, seed)?;
    let rows: Vec<(&[f64], usize)> = lifecycles
        .iter()
        .flat_map(|lc| lc.series.iter().map(Vec::as_slice).zip(lc.hi_class.iter().copied()))
        .collect();
    let mut opt = AdamW::new(&clf.net.params, AdamWConfig::with_lr(lr));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..rows.len()).collect();
    let mut step = 0u64;
    for _ in 0..epochs {
        ids.shuffle(&mut rng);
        for chunk in ids.chunks(batch_size.max(2)) {
            if chunk.len() < 2 {
                continue;
            }
            let data: Vec<f64> = chunk.iter().flat_map(|&i| rows[i].0.iter().copied()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| rows[i].1).collect();
            step += 1;
            let mut g = Graph::train(seed ^ step);
            let x = g.input(Tensor::new(vec![chunk.len(), CHANNELS, nf], data)?);
            let (logits, _) = clf.forward(&mut g, x)?;
            let loss = g.softmax_cross_entropy(logits, &labels)?;
            if !g.value(loss).item().is_finite() {
                return Err(Error::Numerical("non-finite extractor loss".into()));
            }
            let grads = g.backward(loss)?;
            let gs = grads.for_set(&clf.net.params);
            opt.step(&mut clf.net.params, &gs);
            apply_bn_updates(&mut clf.net.params, g.bn_updates(), 0.1);
        }
    }
    Ok(FeatureExtractor { classifier: clf, trained_epochs: epochs })
}

/// Fréchet distance in the extractor's feature space.
pub fn fid(gen: &[Vec<f64>], real: &[Vec<f64>], extractor: &FeatureExtractor) -> Result<f64> {
    fid_features(&extractor.features(gen)?, &extractor.features(real)?)
}

/// Per-channel mean absolute difference of per-signal means over the masked
/// (normal phase) pairs.
pub fn mad(gen: &[Vec<f64>], real: &[Vec<f64>], mask: &[bool]) -> Result<[f64; CHANNELS]> {
    if gen.len() != real.len() || mask.len() != real.len() {
        return Err(Error::Size(format!("{} generated, {} real, {} mask entries", gen.len(), real.len(), mask.len())));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::InsufficientData("empty normal-phase mask".into()));
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let mut out = [0.0; CHANNELS];
    for ((g, r), _) in gen.iter().zip(real).zip(mask).filter(|(_, &m)| m) {
        for (c, o) in out.iter_mut().enumerate() {
            *o += (mean(channel(g, c)) - mean(channel(r, c))).abs() / n as f64;
        }
    }
    Ok(out)
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Size(format!("lengths {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// Mean squared error between predictions and labels.
pub fn mse(pred: &[f64], labels: &[f64]) -> Result<f64> {
    same_len(pred, labels)?;
    Ok(pred.iter().zip(labels).map(|(p, y)| (y - p) * (y - p)).sum::<f64>() / pred.len() as f64)
}

/// Mean absolute difference between adjacent predictions.
pub fn mtd(pred: &[f64]) -> Result<f64> {
    if pred.len() < 2 {
        return Err(Error::InsufficientData("need two predictions".into()));
    }
    Ok(pred.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (pred.len() - 1) as f64)
}

/// Mean over sliding windows of length `k` of the within-window variance.
pub fn mv(pred: &[f64], k: usize) -> Result<f64> {
    if k == 0 || pred.len() < k {
        return Err(Error::InsufficientData(format!("{} predictions for window {k}", pred.len())));
    }
    let windows = pred.windows(k);
    let n = windows.len();
    Ok(windows
        .map(|w| {
            let m = w.iter().sum::<f64>() / k as f64;
            w.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / k as f64
        })
        .sum::<f64>()
        / n as f64)
}

/// Peak signal to noise ratio and the peak used. The ratio is `None` when the
/// sets coincide.
pub fn psnr(gen: &[Vec<f64>], real: &[Vec<f64>]) -> Result<(Option<f64>, f64)> {
    if gen.len() != real.len() || gen.is_empty() {
        return Err(Error::Size(format!("{} generated vs {} real signals", gen.len(), real.len())));
    }
    let max_i = gen.iter().chain(real).flatten().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let mut e = 0.0;
    let mut count = 0usize;
    for (g, r) in gen.iter().zip(real) {
        if g.len() != r.len() {
            return Err(Error::Shape("signal lengths differ".into()));
        }
        e += sq_dist(g, r);
        count += g.len();
    }
    Ok((psnr_from_error(max_i, e / count as f64), max_i))
}

pub fn psnr_from_error(max_i: f64, e: f64) -> Option<f64> {
    (e > 0.0).then(|| 10.0 * (max_i * max_i / e).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RulScores {
    pub rmse: f64,
    pub mae: f64,
    pub score: f64,
}

/// Asymmetric penalty for one error `truth - pred`.
pub fn score_term(e: f64) -> f64 {
    if e <= 0.0 {
        (-e / 13.0).exp() - 1.0
    } else {
        (e / 10.0).exp() - 1.0
    }
}

pub fn rul_scores(pred: &[f64], truth: &[f64]) -> Result<RulScores> {
    same_len(pred, truth)?;
    let n = pred.len() as f64;
    let err: Vec<f64> = truth.iter().zip(pred).map(|(t, p)| t - p).collect();
    Ok(RulScores {
        rmse: (err.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        mae: err.iter().map(|e| e.abs()).sum::<f64>() / n,
        score: err.iter().map(|&e| score_term(e)).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub pca_dims: usize,
    pub projector: String,
    pub bandwidth: f64,
    pub extractor: Option<String>,
    pub generator: Option<String>,
}

/// Undefined values are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub horizontal_mmd: f64,
    pub vertical_mmd: f64,
    pub fid: Option<f64>,
    pub mad_h: Option<f64>,
    pub mad_v: Option<f64>,
    pub mse: Option<f64>,
    pub mtd: Option<f64>,
    pub mv: Option<f64>,
    pub psnr: Option<f64>,
    pub max_i: Option<f64>,
    pub n_generated: usize,
    pub n_real: usize,
    pub provenance: ReportProvenance,
}

/// Evaluators shared by every report that should be comparable.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub projectors: [PcaProjector; CHANNELS],
    pub extractor: Option<FeatureExtractor>,
    pub bandwidth: f64,
}

impl Evaluator {
    pub fn fit(real: &[Vec<f64>], dims: usize, extractor: Option<FeatureExtractor>) -> Result<Self> {
        Ok(Self { projectors: [fit_pca(real, 0, dims)?, fit_pca(real, 1, dims)?], extractor, bandwidth: 1.0 })
    }

    /// Hex digest of both projectors.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.projectors {
            h.update((p.channel as u64).to_le_bytes());
            for v in p.mean.iter().chain(p.axes.iter().flatten()) {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Distribution metrics, plus paired metrics when the sets align.
    pub fn report(&self, gen: &[Vec<f64>], real: &[Vec<f64>], normal_mask: Option<&[bool]>) -> Result<MetricReport> {
        let fid = match &self.extractor {
            Some(e) => Some(fid(gen, real, e)?),
            None => None,
        };
        let paired = gen.len() == real.len();
        let (psnr, max_i) = if paired {
            let (p, m) = psnr(gen, real)?;
            (p, Some(m))
        } else {
            (None, None)
        };
        let madv = match normal_mask {
            Some(m) if paired => Some(mad(gen, real, m)?),
            _ => None,
        };
        Ok(MetricReport {
            horizontal_mmd: mmd(gen, real, &self.projectors[0], self.bandwidth)?,
            vertical_mmd: mmd(gen, real, &self.projectors[1], self.bandwidth)?,
            fid,
            mad_h: madv.map(|m| m[0]),
            mad_v: madv.map(|m| m[1]),
            mse: None,
            mtd: None,
            mv: None,
            psnr,
            max_i,
            n_generated: gen.len(),
            n_real: real.len(),
            provenance: ReportProvenance {
                pca_dims: self.projectors[0].dims(),
                projector: self.fingerprint(),
                bandwidth: self.bandwidth,
                extractor: self.extractor.as_ref().map(FeatureExtractor::fingerprint),
                generator: None,
            },
        })
    }
}

impl MetricReport {
    /// Fill the predictor-based rows from predictions on the generated series.
    pub fn with_predictions(mut self, pred: &[f64], labels: &[f64], window: usize) -> Result<Self> {
        self.mse = Some(mse(pred, labels)?);
        self.mtd = Some(mtd(pred)?);
        self.mv = Some(mv(pred, window)?);
        Ok(self)
    }

    fn rows(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("horizontal_mmd", Some(self.horizontal_mmd)),
            ("vertical_mmd", Some(self.vertical_mmd)),
            ("fid", self.fid),
            ("mad_h", self.mad_h),
            ("mad_v", self.mad_v),
            ("mse", self.mse),
            ("mtd", self.mtd),
            ("mv", self.mv),
            ("psnr", self.psnr),
            ("max_i", self.max_i),
        ]
    }

    /// `metric<TAB>value` lines; undefined values print as `undefined`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("metric\tvalue\n");
        for (k, v) in self.rows() {
            match v {
                Some(v) => s.push_str(&format!("{k}\t{v}\n")),
                None => s.push_str(&format!("{k}\tundefined\n")),
            }
        }
        s.push_str(&format!("n_generated\t{}\nn_real\t{}\n", self.n_generated, self.n_real));
        s
    }
}
