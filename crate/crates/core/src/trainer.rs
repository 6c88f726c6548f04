//! Training regimes, early stopping, seed aggregation and the initial
//! generator.

use std::collections::BTreeMap;
use std::time::Instant;

use autograd::{apply_bn_updates, AdamW, AdamWConfig, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::argen::step_noise;
use crate::dataset::{BearingLifecycle, WindowSet, CHANNELS};
use crate::error::{Error, Result};
use crate::losses::{weighted_sum, ClassCenterState, LossConfig, LossInputs, LossTerm, TermId};
use crate::nets::{build_model, reparameterize, ConditionBundle, ModelBundle, NetConfig, Part, Variant};

pub const DEFAULT_SEEDS: [u64; 5] = [15, 25, 35, 45, 55];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    NonAr,
    Ar,
    ArFinetuneFull,
    ArFinetuneNoC,
    ArFinetuneNoDc,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::NonAr => "non_ar",
            TrainMode::Ar => "ar",
            TrainMode::ArFinetuneFull => "ar_finetune_full",
            TrainMode::ArFinetuneNoC => "ar_finetune_no_C",
            TrainMode::ArFinetuneNoDc => "ar_finetune_no_DC",
        }
    }

    pub fn is_finetune(self) -> bool {
        matches!(self, TrainMode::ArFinetuneFull | TrainMode::ArFinetuneNoC | TrainMode::ArFinetuneNoDc)
    }

    fn finetune_frozen(self) -> &'static [Part] {
        match self {
            TrainMode::ArFinetuneNoC => &[Part::Classifier],
            TrainMode::ArFinetuneNoDc => &[Part::Discriminator, Part::Classifier],
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPlan {
    pub mode: TrainMode,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub lr_gen: f64,
    pub lr_dc: f64,
    pub seed: u64,
    pub finetune_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub val_fraction: f64,
    pub bn_momentum: f64,
    pub center_decay: f64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            mode: TrainMode::NonAr,
            epochs: 100,
            early_stop_patience: 30,
            batch_size: 1024,
            lr_gen: 6e-4,
            lr_dc: 2e-4,
            seed: 15,
            finetune_epochs: 1,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            clip_norm: None,
            val_fraction: 0.1,
            bn_momentum: 0.1,
            center_decay: 0.9,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr_gen > 0.0 && self.lr_dc > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        if self.mode.is_finetune() && self.finetune_epochs == 0 {
            return Err(Error::Config("finetune modes need finetune_epochs >= 1".into()));
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamWConfig {
        AdamWConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: String,
    /// Mean over the epoch's batches of every evaluated term and step total.
    pub train: BTreeMap<String, f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub variant: Variant,
    pub plan: TrainPlan,
    pub loss_config: String,
    pub loss_terms: String,
    pub dataset_fingerprint: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub early_stop_epoch: Option<usize>,
    pub checkpoint_paths: Vec<String>,
    pub wall_clock_s: f64,
    pub status: String,
}

impl RunManifest {
    /// Delimited loss trace, one row per epoch.
    pub fn loss_trace_tsv(&self) -> String {
        let mut keys: Vec<&String> = self.epochs.iter().flat_map(|e| e.train.keys()).collect();
        keys.sort();
        keys.dedup();
        let mut out = String::from("epoch\tphase");
        for k in &keys {
            out.push('\t');
            out.push_str(k);
        }
        out.push_str("\tval_loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{}\t{}", e.epoch, e.phase));
            for k in &keys {
                match e.train.get(*k) {
                    Some(v) => out.push_str(&format!("\t{v}")),
                    None => out.push('\t'),
                }
            }
            match e.val_loss {
                Some(v) => out.push_str(&format!("\t{v}\n")),
                None => out.push_str("\t\n"),
            }
        }
        out
    }
}

/// A training run that stopped on a numerical failure, with its manifest so far.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub manifest: Box<RunManifest>,
}

impl From<TrainFailure> for Error {
    fn from(f: TrainFailure) -> Self {
        f.error
    }
}

/// One assembled training batch.
struct StepBatch {
    x: Tensor,
    history: Option<Tensor>,
    classes: Vec<usize>,
}

/// Anything the loop can draw batches from.
trait Source {
    fn len(&self) -> usize;
    fn batch(&self, ids: &[usize], histories: Option<&[Vec<Vec<f64>>]>) -> StepBatch;
}

impl Source for WindowSet {
    fn len(&self) -> usize {
        WindowSet::len(self)
    }

    fn batch(&self, ids: &[usize], histories: Option<&[Vec<Vec<f64>>]>) -> StepBatch {
        let b = self.gather(ids, histories);
        StepBatch { x: b.x, history: Some(b.history), classes: b.classes }
    }
}

/// Whole `k`-row windows from the normal phase, flattened to `2k` channels.
struct NormalWindows {
    rows: Vec<Vec<f64>>,
    channels: usize,
    n_feature: usize,
}

impl Source for NormalWindows {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn batch(&self, ids: &[usize], _: Option<&[Vec<Vec<f64>>]>) -> StepBatch {
        let mut data = Vec::with_capacity(ids.len() * self.channels * self.n_feature);
        for &i in ids {
            data.extend_from_slice(&self.rows[i]);
        }
        StepBatch {
            x: Tensor::new(vec![ids.len(), self.channels, self.n_feature], data).expect("window shape"),
            history: None,
            classes: vec![0; ids.len()],
        }
    }
}

fn conditions(variant: Variant, batch: &StepBatch) -> Option<ConditionBundle> {
    variant.is_conditional().then(|| {
        let history = if variant.uses_history() { batch.history.clone() } else { None };
        ConditionBundle::new(batch.classes.clone(), history)
    })
}

fn history_mean(history: &Tensor) -> Result<Tensor> {
    let s = history.shape();
    let (b, k, inner) = (s[0], s[1], s[2] * s[3]);
    let mut out = vec![0.0; b * inner];
    for bi in 0..b {
        for ki in 0..k {
            let src = &history.data()[(bi * k + ki) * inner..(bi * k + ki + 1) * inner];
            for (o, v) in out[bi * inner..(bi + 1) * inner].iter_mut().zip(src) {
                *o += v / k as f64;
            }
        }
    }
    Ok(Tensor::new(vec![b, s[2], s[3]], out)?)
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// What the generator-side objective needs, derived from its terms.
#[derive(Debug, Clone, Copy, Default)]
struct Needs {
    prior: bool,
    d_real: bool,
    d_hat: bool,
    d_prior: bool,
    c_real: bool,
    c_hat: bool,
    c_prior: bool,
    history_mean: bool,
}

fn needs(terms: &[LossTerm]) -> Needs {
    let mut n = Needs::default();
    for t in terms {
        match t.id {
            TermId::Feature => {
                n.d_real = true;
                n.d_hat = true;
                n.c_real = true;
                n.c_hat = true;
            }
            TermId::He => n.history_mean = true,
            TermId::Hp => {
                n.history_mean = true;
                n.prior = true;
            }
            TermId::Mf => {
                n.d_real = true;
                n.d_prior = true;
                n.prior = true;
            }
            TermId::Mc => {
                n.c_prior = true;
                n.prior = true;
            }
            TermId::L1 => n.d_hat = true,
            TermId::D => {
                n.d_real = true;
                n.d_prior = true;
                n.prior = true;
            }
            TermId::Bin => {
                n.d_hat = true;
                n.c_hat = true;
            }
            TermId::C => n.c_real = true,
            TermId::Recon | TermId::Kl => {}
        }
    }
    n
}

/// Builds the generator-side forward pass and returns the weighted objective.
#[allow(clippy::too_many_arguments)]
fn vae_objective(
    g: &mut Graph,
    model: &ModelBundle,
    cfg: &LossConfig,
    batch: &StepBatch,
    z_prior: &Tensor,
    eps: &Tensor,
    centers: Option<&ClassCenterState>,
) -> Result<(Var, Vec<(TermId, f64)>)> {
    let cond = conditions(model.variant, batch);
    let cond = cond.as_ref();
    let n = needs(&cfg.vae_terms);
    let x = g.input(batch.x.clone());
    let zp = g.input(z_prior.clone());
    let mut inp = LossInputs { x: Some(x), labels: Some(&batch.classes), centers, ..Default::default() };
    if model.encoder.is_some() {
        let (mu, lv) = model.encode(g, x, cond)?;
        let e = g.input(eps.clone());
        let z = reparameterize(g, mu, lv, e)?;
        inp.mu = Some(mu);
        inp.logvar = Some(lv);
        inp.x_hat = Some(model.generate(g, z, cond)?);
        if n.prior {
            inp.prior = Some(model.generate(g, zp, cond)?);
        }
    } else {
        let p = model.generate(g, zp, cond)?;
        inp.x_hat = Some(p);
        inp.prior = Some(p);
    }
    if n.history_mean {
        let h = batch
            .history
            .as_ref()
            .ok_or_else(|| Error::Contract("history terms need a history block".into()))?;
        inp.history_mean = Some(g.input(history_mean(h)?));
    }
    let xh = inp.x_hat.expect("set above");
    if model.discriminator.is_some() {
        if n.d_real {
            inp.d_real = Some(model.discriminate(g, x, cond)?);
        }
        if n.d_hat {
            inp.d_hat = Some(model.discriminate(g, xh, cond)?);
        }
        if n.d_prior {
            let p = inp.prior.expect("prior requested");
            inp.d_prior = Some(if Some(p) == inp.x_hat { inp.d_hat.unwrap_or(model.discriminate(g, p, cond)?) } else { model.discriminate(g, p, cond)? });
        }
    }
    if model.classifier.is_some() {
        if n.c_real {
            inp.c_real = Some(model.classify(g, x, cond)?);
        }
        if n.c_hat {
            inp.c_hat = Some(model.classify(g, xh, cond)?);
        }
        if n.c_prior {
            let p = inp.prior.expect("prior requested");
            inp.c_prior = Some(model.classify(g, p, cond)?);
        }
    }
    weighted_sum(g, &cfg.vae_terms, &inp)
}

struct Optimizers {
    opts: BTreeMap<u8, AdamW>,
}

fn part_key(p: Part) -> u8 {
    match p {
        Part::Encoder => 0,
        Part::Generator => 1,
        Part::Discriminator => 2,
        Part::Classifier => 3,
    }
}

impl Optimizers {
    fn new(model: &ModelBundle, plan: &TrainPlan) -> Self {
        let mut opts = BTreeMap::new();
        for p in model.parts() {
            let lr = if matches!(p, Part::Encoder | Part::Generator) { plan.lr_gen } else { plan.lr_dc };
            opts.insert(part_key(p), AdamW::new(model.params(p).expect("part"), plan.adam(lr)));
        }
        Self { opts }
    }

    /// Apply gradients and batch-norm updates from `g` to `parts`.
    fn apply(&mut self, model: &mut ModelBundle, g: &Graph, root: Var, parts: &[Part], momentum: f64) -> Result<()> {
        let grads = g.backward(root)?;
        for &p in parts {
            let set = model.params_mut(p).expect("part");
            let gs = grads.for_set(set);
            if gs.iter().flatten().any(|t| !t.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient in {p:?}")));
            }
            self.opts.get_mut(&part_key(p)).expect("optimizer").step(set, &gs);
            apply_bn_updates(set, g.bn_updates(), momentum);
        }
        Ok(())
    }
}

struct Trainer<'a> {
    model: ModelBundle,
    cfg: LossConfig,
    plan: &'a TrainPlan,
    opts: Optimizers,
    centers: Option<ClassCenterState>,
    rng: ChaCha8Rng,
    steps: u64,
}

fn check_finite(v: f64, what: &str, epoch: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite {what} loss at epoch {epoch}")))
    }
}

impl Trainer<'_> {
    fn graph_seed(&mut self) -> u64 {
        self.steps += 1;
        self.plan.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ self.steps
    }

    fn step(&mut self, batch: &StepBatch, frozen: &[Part], epoch: usize, acc: &mut BTreeMap<String, f64>) -> Result<()> {
        let b = batch.classes.len();
        let latent = self.model.cfg.latent_dim;
        let z_prior = normal(&[b, latent], &mut self.rng);
        let eps = normal(&[b, latent], &mut self.rng);
        let cond = conditions(self.model.variant, batch);
        let cond = cond.as_ref();
        let momentum = self.plan.bn_momentum;

        if self.model.discriminator.is_some() && !frozen.contains(&Part::Discriminator) && !self.cfg.disc_terms.is_empty() {
            let mut g = Graph::train(self.graph_seed());
            self.model.freeze_except(&mut g, &[Part::Discriminator]);
            let x = g.input(batch.x.clone());
            let zp = g.input(z_prior.clone());
            let prior = self.model.generate(&mut g, zp, cond)?;
            let mut inp = LossInputs { x: Some(x), prior: Some(prior), labels: Some(&batch.classes), ..Default::default() };
            inp.d_real = Some(self.model.discriminate(&mut g, x, cond)?);
            inp.d_prior = Some(self.model.discriminate(&mut g, prior, cond)?);
            if self.cfg.has_disc(TermId::L1) {
                let xh = if self.model.encoder.is_some() {
                    let (mu, lv) = self.model.encode(&mut g, x, cond)?;
                    let e = g.input(eps.clone());
                    let z = reparameterize(&mut g, mu, lv, e)?;
                    self.model.generate(&mut g, z, cond)?
                } else {
                    prior
                };
                inp.d_hat = Some(self.model.discriminate(&mut g, xh, cond)?);
            }
            let (loss, parts) = weighted_sum(&mut g, &self.cfg.disc_terms, &inp)?;
            let v = g.value(loss).item();
            check_finite(v, "discriminator", epoch)?;
            *acc.entry("disc_total".into()).or_default() += v;
            for (id, pv) in parts {
                *acc.entry(format!("disc.{id}")).or_default() += pv;
            }
            self.opts.apply(&mut self.model, &g, loss, &[Part::Discriminator], momentum)?;
        }

        if self.model.classifier.is_some() && self.cfg.classifier_term_enabled {
            let train_c = !frozen.contains(&Part::Classifier);
            let mut g = if train_c { Graph::train(self.graph_seed()) } else { Graph::eval() };
            self.model.freeze_except(&mut g, if train_c { &[Part::Classifier] } else { &[] });
            let x = g.input(batch.x.clone());
            let (logits, feat) = self.model.classify(&mut g, x, cond)?;
            let loss = g.softmax_cross_entropy(logits, &batch.classes)?;
            let v = g.value(loss).item();
            check_finite(v, "classifier", epoch)?;
            *acc.entry("classifier.C".into()).or_default() += v;
            if let Some(c) = self.centers.as_mut() {
                c.update(g.value(feat), &batch.classes)?;
            }
            if train_c {
                self.opts.apply(&mut self.model, &g, loss, &[Part::Classifier], momentum)?;
            }
        }

        let trainable: Vec<Part> =
            [Part::Encoder, Part::Generator].into_iter().filter(|&p| self.model.has(p) && !frozen.contains(&p)).collect();
        if !trainable.is_empty() {
            let mut g = Graph::train(self.graph_seed());
            self.model.freeze_except(&mut g, &trainable);
            let (loss, parts) = vae_objective(&mut g, &self.model, &self.cfg, batch, &z_prior, &eps, self.centers.as_ref())?;
            let v = g.value(loss).item();
            check_finite(v, "generator", epoch)?;
            *acc.entry("vae_total".into()).or_default() += v;
            for (id, pv) in parts {
                *acc.entry(format!("vae.{id}")).or_default() += pv;
            }
            self.opts.apply(&mut self.model, &g, loss, &trainable, momentum)?;
        }
        Ok(())
    }

    /// Deterministic validation objective: evaluation-mode networks and a
    /// fixed noise stream.
    fn validate(&self, src: &dyn Source, ids: &[usize]) -> Result<Option<f64>> {
        if ids.is_empty() {
            return Ok(None);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.plan.seed);
        rng.set_stream(7);
        let latent = self.model.cfg.latent_dim;
        let mut total = 0.0;
        for chunk in ids.chunks(self.plan.batch_size) {
            let batch = src.batch(chunk, None);
            let z = normal(&[chunk.len(), latent], &mut rng);
            let e = normal(&[chunk.len(), latent], &mut rng);
            let mut g = Graph::eval();
            let (loss, _) = vae_objective(&mut g, &self.model, &self.cfg, &batch, &z, &e, self.centers.as_ref())?;
            total += g.value(loss).item() * chunk.len() as f64;
        }
        Ok(Some(total / ids.len() as f64))
    }

    fn epoch(
        &mut self,
        src: &dyn Source,
        train_ids: &mut [usize],
        histories: Option<&[Vec<Vec<f64>>]>,
        frozen: &[Part],
        epoch: usize,
    ) -> Result<BTreeMap<String, f64>> {
        train_ids.shuffle(&mut self.rng);
        let mut acc = BTreeMap::new();
        let mut n = 0;
        for chunk in train_ids.chunks(self.plan.batch_size) {
            let batch = src.batch(chunk, histories);
            self.step(&batch, frozen, epoch, &mut acc)?;
            n += 1;
        }
        acc.values_mut().for_each(|v| *v /= n as f64);
        Ok(acc)
    }
}

/// Split indices into (train, validation) with a seeded shuffle.
fn split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    ids.shuffle(&mut rng);
    let n_val = if n >= 2 && fraction > 0.0 { ((n as f64 * fraction).round() as usize).clamp(1, n - 1) } else { 0 };
    let val = ids.split_off(n - n_val);
    (ids, val)
}

/// Self-generated histories: each lifecycle starts from its real first `k`
/// rows and every later row is the model's own output.
pub fn rollout_histories(model: &ModelBundle, windows: &WindowSet, seed: u64) -> Result<Vec<Vec<Vec<f64>>>> {
    let k = windows.k;
    let nf = windows.n_feature();
    let row = CHANNELS * nf;
    let mut hist: Vec<Vec<Vec<f64>>> = windows.lifecycles.iter().map(|lc| lc.series[..k].to_vec()).collect();
    let longest = windows.lifecycles.iter().map(BearingLifecycle::len).max().unwrap_or(0);
    for t in k..longest {
        let active: Vec<usize> = (0..windows.lifecycles.len()).filter(|&l| t < windows.lifecycles[l].len()).collect();
        let mut h = Vec::with_capacity(active.len() * k * row);
        let mut z = Vec::with_capacity(active.len() * model.cfg.latent_dim);
        let mut classes = Vec::with_capacity(active.len());
        for &l in &active {
            for r in &hist[l][t - k..t] {
                h.extend_from_slice(r);
            }
            z.extend(step_noise(seed, l as u64, t as u64, model.cfg.latent_dim));
            classes.push(windows.lifecycles[l].hi_class[t]);
        }
        let b = active.len();
        let cond = ConditionBundle::new(classes, Some(Tensor::new(vec![b, k, CHANNELS, nf], h)?));
        let out = model.generate_eval(&Tensor::new(vec![b, model.cfg.latent_dim], z)?, Some(&cond))?;
        if !out.is_finite() {
            return Err(Error::Numerical(format!("non-finite rollout output at step {t}")));
        }
        for (i, &l) in active.iter().enumerate() {
            hist[l].push(out.row(i).to_vec());
        }
    }
    Ok(hist)
}

fn new_manifest(model: &ModelBundle, cfg: &LossConfig, plan: &TrainPlan, fingerprint: String) -> RunManifest {
    RunManifest {
        variant: model.variant,
        plan: plan.clone(),
        loss_config: cfg.name.clone(),
        loss_terms: cfg.describe(),
        dataset_fingerprint: fingerprint,
        epochs: Vec::new(),
        best_epoch: None,
        best_val_loss: None,
        early_stop_epoch: None,
        checkpoint_paths: Vec::new(),
        wall_clock_s: 0.0,
        status: "running".into(),
    }
}

/// Train `model` on `windows` under `plan`. The best validation checkpoint of
/// the main phase is restored before any finetuning.
pub fn train(
    model: ModelBundle,
    windows: &WindowSet,
    config: &LossConfig,
    plan: &TrainPlan,
) -> std::result::Result<(ModelBundle, RunManifest), TrainFailure> {
    let fingerprint = windows.fingerprint();
    run(model, windows, config, plan, fingerprint)
}

fn run(
    model: ModelBundle,
    src: &dyn SourceWithWindows,
    config: &LossConfig,
    plan: &TrainPlan,
    fingerprint: String,
) -> std::result::Result<(ModelBundle, RunManifest), TrainFailure> {
    let start = Instant::now();
    let cfg = config.restricted(model.encoder.is_some(), model.discriminator.is_some());
    let mut manifest = new_manifest(&model, &cfg, plan, fingerprint);
    let fail = |error: Error, mut manifest: RunManifest| {
        manifest.status = format!("aborted: {error}");
        manifest.wall_clock_s = start.elapsed().as_secs_f64();
        TrainFailure { error, manifest: Box::new(manifest) }
    };
    if let Err(e) = preflight(&model, src, &cfg, plan) {
        return Err(fail(e, manifest));
    }
    let centers = model.classifier.as_ref().map(|c| ClassCenterState::new(c.feature_dim(), plan.center_decay).expect("decay checked"));
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(1);
    let mut tr = Trainer { opts: Optimizers::new(&model, plan), model, cfg, plan, centers, rng, steps: 0 };
    match main_loop(&mut tr, src, &mut manifest) {
        Ok(()) => {
            manifest.status = "completed".into();
            manifest.wall_clock_s = start.elapsed().as_secs_f64();
            Ok((tr.model, manifest))
        }
        Err(e) => Err(fail(e, manifest)),
    }
}

/// A batch source that may also carry lifecycles for autoregressive rollouts.
trait SourceWithWindows: Source {
    fn windows(&self) -> Option<&WindowSet>;
}

impl SourceWithWindows for WindowSet {
    fn windows(&self) -> Option<&WindowSet> {
        Some(self)
    }
}

impl SourceWithWindows for NormalWindows {
    fn windows(&self) -> Option<&WindowSet> {
        None
    }
}

fn preflight(model: &ModelBundle, src: &dyn SourceWithWindows, cfg: &LossConfig, plan: &TrainPlan) -> Result<()> {
    plan.validate()?;
    cfg.validate_restricted()?;
    if src.len() == 0 {
        return Err(Error::InsufficientData("no training windows".into()));
    }
    let ar = plan.mode != TrainMode::NonAr;
    if ar && (!model.variant.uses_history() || src.windows().is_none()) {
        return Err(Error::Contract(format!(
            "mode {} needs a history-conditioned variant, got {}",
            plan.mode.name(),
            model.variant
        )));
    }
    if let Some(w) = src.windows() {
        if w.k != model.cfg.k || w.n_feature() != model.cfg.n_feature {
            return Err(Error::Shape(format!(
                "windows have k={} n_feature={}, model expects k={} n_feature={}",
                w.k,
                w.n_feature(),
                model.cfg.k,
                model.cfg.n_feature
            )));
        }
    }
    Ok(())
}

fn main_loop(tr: &mut Trainer, src: &dyn SourceWithWindows, manifest: &mut RunManifest) -> Result<()> {
    let plan = tr.plan;
    let (mut train_ids, val_ids) = split(src.len(), plan.val_fraction, plan.seed);
    if train_ids.is_empty() {
        return Err(Error::InsufficientData("validation split left no training windows".into()));
    }
    let main_ar = plan.mode == TrainMode::Ar;
    let mut best: Option<(f64, usize, ModelBundle, Option<ClassCenterState>)> = None;
    for epoch in 0..plan.epochs {
        let histories = if main_ar {
            Some(rollout_histories(&tr.model, src.windows().expect("checked"), epoch_seed(plan.seed, epoch))?)
        } else {
            None
        };
        let train = tr.epoch(src, &mut train_ids, histories.as_deref(), &[], epoch)?;
        let val = tr.validate(src, &val_ids)?;
        if let Some(v) = val {
            check_finite(v, "validation", epoch)?;
        }
        let monitored = val.unwrap_or_else(|| train.get("vae_total").copied().unwrap_or(0.0));
        manifest.epochs.push(EpochRecord { epoch, phase: plan.mode.name().into(), train, val_loss: val });
        if best.as_ref().is_none_or(|b| monitored < b.0) {
            best = Some((monitored, epoch, tr.model.clone(), tr.centers.clone()));
        }
        let best_epoch = best.as_ref().expect("set").1;
        if epoch - best_epoch >= plan.early_stop_patience {
            manifest.early_stop_epoch = Some(epoch);
            break;
        }
    }
    let (value, epoch, model, centers) = best.expect("at least one epoch");
    manifest.best_epoch = Some(epoch);
    manifest.best_val_loss = Some(value);
    restore(tr, model);
    tr.centers = centers;

    if plan.mode.is_finetune() {
        let frozen = plan.mode.finetune_frozen();
        let w = src.windows().expect("checked");
        for i in 0..plan.finetune_epochs {
            let epoch = manifest.epochs.len();
            let histories = rollout_histories(&tr.model, w, epoch_seed(plan.seed, epoch))?;
            let train = tr.epoch(src, &mut train_ids, Some(&histories), frozen, epoch)?;
            let val = tr.validate(src, &val_ids)?;
            manifest.epochs.push(EpochRecord { epoch, phase: format!("{}#{}", plan.mode.name(), i), train, val_loss: val });
        }
    }
    Ok(())
}

/// Swap in restored parameters while keeping optimizer state bound to the
/// live parameter sets.
fn restore(tr: &mut Trainer, best: ModelBundle) {
    for p in tr.model.parts() {
        tr.model
            .params_mut(p)
            .expect("part")
            .load_from(best.params(p).expect("part"))
            .expect("identical layout");
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64 + 1)
}

impl LossConfig {
    fn validate_restricted(&self) -> Result<()> {
        if self.vae_terms.iter().any(|t| t.id.is_disc_side() || t.id == TermId::C)
            || self.disc_terms.iter().any(|t| !t.id.is_disc_side())
        {
            return Err(Error::Config(format!("loss configuration {} mixes sides", self.name)));
        }
        Ok(())
    }
}

/// Unconditional model over whole normal-phase windows, used to seed
/// autoregressive rollouts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialGenerator {
    pub model: ModelBundle,
    pub k: usize,
    pub trained_epochs: usize,
}

impl InitialGenerator {
    /// Build an untrained initial generator.
    pub fn new(k: usize, n_feature: usize, seed: u64) -> Result<Self> {
        let mut cfg = NetConfig::new(Variant::Vae, k, n_feature);
        cfg.signal_channels = CHANNELS * k;
        Ok(Self { model: build_model(Variant::Vae, cfg, seed)?, k, trained_epochs: 0 })
    }

    /// One `[k, 2, n_feature]` window drawn with noise from `seed`.
    pub fn sample(&self, seed: u64) -> Result<Tensor> {
        let z = Tensor::new(vec![1, self.model.cfg.latent_dim], step_noise(seed, u64::MAX, 0, self.model.cfg.latent_dim))?;
        let out = self.model.generate_eval(&z, None)?;
        Ok(out.reshape(&[self.k, CHANNELS, self.model.cfg.n_feature])?)
    }
}

/// Train the initial generator on every `k`-row window that lies entirely
/// at or before a lifecycle's FPT.
pub fn train_initial_generator(
    lifecycles: &[BearingLifecycle],
    k: usize,
    plan: &TrainPlan,
) -> std::result::Result<(InitialGenerator, RunManifest), TrainFailure> {
    let n_feature = lifecycles.first().map_or(0, |l| l.n_feature);
    let init = InitialGenerator::new(k, n_feature, plan.seed);
    let mut rows = Vec::new();
    for lc in lifecycles {
        for s in 0..lc.len().saturating_sub(k - 1) {
            if s + k - 1 > lc.fpt_index {
                break;
            }
            rows.push(lc.series[s..s + k].concat());
        }
    }
    let plan = TrainPlan { mode: TrainMode::NonAr, ..plan.clone() };
    let init = match init {
        Ok(i) => i,
        Err(error) => {
            let manifest = RunManifest {
                variant: Variant::Vae,
                plan: plan.clone(),
                loss_config: "initial".into(),
                loss_terms: String::new(),
                dataset_fingerprint: String::new(),
                epochs: Vec::new(),
                best_epoch: None,
                best_val_loss: None,
                early_stop_epoch: None,
                checkpoint_paths: Vec::new(),
                wall_clock_s: 0.0,
                status: format!("aborted: {error}"),
            };
            return Err(TrainFailure { error, manifest: Box::new(manifest) });
        }
    };
    let mut fp = Sha256::new();
    for lc in lifecycles {
        fp.update(crate::dataset::lifecycle_digest(lc));
    }
    let fingerprint = hex::encode(fp.finalize());
    if rows.is_empty() {
        let mut manifest = new_manifest(&init.model, &initial_config(), &plan, fingerprint);
        manifest.status = "aborted: no pre-FPT window".into();
        return Err(TrainFailure {
            error: Error::InsufficientData(format!("no normal-phase segment of length {k}")),
            manifest: Box::new(manifest),
        });
    }
    let src = NormalWindows { rows, channels: CHANNELS * k, n_feature };
    let (model, manifest) = run(init.model, &src, &initial_config(), &plan, fingerprint)?;
    let trained_epochs = manifest.epochs.len();
    Ok((InitialGenerator { model, k, trained_epochs }, manifest))
}

fn initial_config() -> LossConfig {
    LossConfig::custom("initial", &[], &[]).expect("mandatory terms only")
}

/// Per-seed outcomes of a repeated task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport<T> {
    pub values: Vec<(u64, T)>,
    pub failures: Vec<(u64, String)>,
}

impl<T> SeedReport<T> {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

impl SeedReport<f64> {
    /// Mean over seeds; `None` when any seed failed.
    pub fn mean(&self) -> Option<f64> {
        if self.is_partial() || self.values.is_empty() {
            return None;
        }
        Some(self.values.iter().map(|v| v.1).sum::<f64>() / self.values.len() as f64)
    }
}

/// Run `task` once per seed, in seed order.
pub fn run_seeds<T>(seeds: &[u64], mut task: impl FnMut(u64) -> Result<T>) -> SeedReport<T> {
    let mut report = SeedReport { values: Vec::new(), failures: Vec::new() };
    for &s in seeds {
        match task(s) {
            Ok(v) => report.values.push((s, v)),
            Err(e) => report.failures.push((s, e.to_string())),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize_lifecycle, SyntheticSpec};
    use crate::losses::compose_config;

    fn windows(n_lc: usize, n: usize, k: usize) -> WindowSet {
        let lcs = (0..n_lc)
            .map(|i| {
                synthesize_lifecycle(
                    &SyntheticSpec {
                        bearing_id: format!("s{i}"),
                        n,
                        fpt_index: n / 2,
                        base_mean: [0.4 + 0.05 * i as f64, 0.5],
                        noise_scale: 0.05,
                        growth_exponent: 1.0,
                        seed: i as u64,
                    },
                    64,
                )
                .unwrap()
            })
            .collect();
        WindowSet::new(lcs, k).unwrap()
    }

    fn small_plan(mode: TrainMode) -> TrainPlan {
        TrainPlan { mode, epochs: 2, batch_size: 16, early_stop_patience: 5, ..TrainPlan::default() }
    }

    #[test]
    fn seed_aggregation() {
        let r = run_seeds(&DEFAULT_SEEDS, |_| Ok(1.0));
        assert_eq!(r.mean(), Some(1.0));
        assert_eq!(r.values.len(), 5);
        let r = run_seeds(&DEFAULT_SEEDS, |s| Ok(s as f64));
        assert_eq!(r.mean(), Some(35.0));
        let r = run_seeds(&DEFAULT_SEEDS, |s| if s == 35 { Err(Error::Numerical("boom".into())) } else { Ok(s as f64) });
        assert!(r.is_partial());
        assert_eq!(r.values.len(), 4);
        assert_eq!(r.failures[0].0, 35);
        assert_eq!(r.mean(), None);
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let (t, v) = split(50, 0.1, 3);
        assert_eq!(v.len(), 5);
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn smoke_run_is_finite_and_deterministic() {
        let w = windows(2, 40, 5);
        let cfg = compose_config("conf9").unwrap();
        let plan = small_plan(TrainMode::NonAr);
        let m = build_model(Variant::Cvgan, NetConfig::new(Variant::Cvgan, 5, 64), plan.seed).unwrap();
        let (_, a) = train(m.clone(), &w, &cfg, &plan).unwrap();
        let (_, b) = train(m, &w, &cfg, &plan).unwrap();
        assert_eq!(a.epochs.len(), 2);
        assert_eq!(a.epochs, b.epochs);
        assert!(a.epochs.iter().all(|e| e.train.values().all(|v| v.is_finite())));
    }

    #[test]
    fn ar_mode_rejects_history_free_variants() {
        let w = windows(1, 30, 5);
        let m = build_model(Variant::CvganNoH, NetConfig::new(Variant::CvganNoH, 5, 64), 1).unwrap();
        let err = train(m, &w, &compose_config("conf9").unwrap(), &small_plan(TrainMode::Ar)).unwrap_err();
        assert!(matches!(err.error, Error::Contract(_)));
    }

    #[test]
    fn finetune_without_critics_keeps_them_fixed() {
        let w = windows(2, 30, 4);
        let cfg = compose_config("conf9").unwrap();
        let m = build_model(Variant::Cvgan, NetConfig::new(Variant::Cvgan, 4, 64), 5).unwrap();
        let (base, _) = train(m.clone(), &w, &cfg, &small_plan(TrainMode::NonAr)).unwrap();
        let (tuned, man) = train(m, &w, &cfg, &small_plan(TrainMode::ArFinetuneNoDc)).unwrap();
        assert_eq!(man.epochs.len(), 3);
        for p in [Part::Discriminator, Part::Classifier] {
            assert_eq!(tuned.fingerprint(p), base.fingerprint(p));
        }
        assert_ne!(tuned.fingerprint(Part::Generator), base.fingerprint(Part::Generator));
    }

    #[test]
    fn ar_training_runs_and_stops_within_patience() {
        let w = windows(2, 30, 4);
        let cfg = compose_config("conf3").unwrap();
        let m = build_model(Variant::Cvgan, NetConfig::new(Variant::Cvgan, 4, 64), 5).unwrap();
        let plan = TrainPlan { epochs: 6, early_stop_patience: 1, lr_gen: 0.5, ..small_plan(TrainMode::Ar) };
        let (_, man) = train(m, &w, &cfg, &plan).unwrap();
        let best = man.best_epoch.unwrap();
        assert!(man.epochs.len() <= best + plan.early_stop_patience + 1);
        let vals: Vec<f64> = man.epochs.iter().filter_map(|e| e.val_loss).collect();
        assert!(vals.iter().all(|v| *v >= man.best_val_loss.unwrap()));
    }

    #[test]
    fn initial_generator_samples() {
        let w = windows(2, 40, 5);
        let plan = TrainPlan { epochs: 1, batch_size: 8, ..TrainPlan::default() };
        let (ig, _) = train_initial_generator(&w.lifecycles, 5, &plan).unwrap();
        let a = ig.sample(1).unwrap();
        assert_eq!(a.shape(), &[5, 2, 64]);
        assert_eq!(a, ig.sample(1).unwrap());
        assert_ne!(a, ig.sample(2).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
