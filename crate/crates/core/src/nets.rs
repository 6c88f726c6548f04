//! Encoder, generator, discriminator and classifier networks, their
//! condition adapters, and the ablation variants.

use std::fmt;
use std::str::FromStr;

use autograd::layers::{BatchNorm1d, Conv1d, ConvTranspose1d, Embedding, Linear};
use autograd::{Graph, ParamSet, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{CHANNELS, N_CLASSES};
use crate::error::{Error, Result};

pub const LATENT_DIM: usize = 32;
const KERNEL: usize = 3;
const ENC_CHANNELS: [usize; 5] = [16, 32, 64, 128, 32];
const ENC_STRIDES: [usize; 5] = [2, 2, 2, 2, 1];
const CLASSIFIER_LAST: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "CVGAN")]
    Cvgan,
    #[serde(rename = "CVAE")]
    Cvae,
    #[serde(rename = "CGAN")]
    Cgan,
    #[serde(rename = "GAN")]
    Gan,
    #[serde(rename = "VAE")]
    Vae,
    #[serde(rename = "VGAN")]
    Vgan,
    #[serde(rename = "CVGAN_no_H")]
    CvganNoH,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Cvgan,
        Variant::Cvae,
        Variant::Cgan,
        Variant::Gan,
        Variant::Vae,
        Variant::Vgan,
        Variant::CvganNoH,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cvgan => "CVGAN",
            Variant::Cvae => "CVAE",
            Variant::Cgan => "CGAN",
            Variant::Gan => "GAN",
            Variant::Vae => "VAE",
            Variant::Vgan => "VGAN",
            Variant::CvganNoH => "CVGAN_no_H",
        }
    }

    pub fn has_encoder(self) -> bool {
        !matches!(self, Variant::Cgan | Variant::Gan)
    }

    pub fn has_critics(self) -> bool {
        !matches!(self, Variant::Cvae | Variant::Vae)
    }

    pub fn is_conditional(self) -> bool {
        matches!(self, Variant::Cvgan | Variant::Cvae | Variant::Cgan | Variant::CvganNoH)
    }

    pub fn uses_history(self) -> bool {
        matches!(self, Variant::Cvgan | Variant::Cvae | Variant::Cgan)
    }

    pub fn default_channel_scale(self) -> f64 {
        if self.is_conditional() { 1.0 } else { 0.5 }
    }

    fn cond_mode(self) -> CondMode {
        if self.uses_history() {
            CondMode::ClassHistory
        } else if self.is_conditional() {
            CondMode::Class
        } else {
            CondMode::None
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum CondMode {
    None,
    Class,
    ClassHistory,
}

/// Architecture hyperparameters shared by every sub-network of a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub k: usize,
    pub n_feature: usize,
    pub latent_dim: usize,
    pub n_classes: usize,
    pub channel_scale: f64,
    pub slope: f64,
    pub dropout: f64,
    /// Channels of the modelled signal (2 for snapshots, `2k` for the
    /// initial generator's whole windows).
    pub signal_channels: usize,
}

impl NetConfig {
    pub fn new(variant: Variant, k: usize, n_feature: usize) -> Self {
        Self {
            k,
            n_feature,
            latent_dim: LATENT_DIM,
            n_classes: N_CLASSES,
            channel_scale: variant.default_channel_scale(),
            slope: 0.2,
            dropout: 0.5,
            signal_channels: CHANNELS,
        }
    }

    fn ch(&self, base: usize) -> usize {
        ((base as f64 * self.channel_scale).round() as usize).max(1)
    }

    /// Number of stride-2 upsampling blocks in the generator.
    pub fn upsample_blocks(&self) -> usize {
        (self.n_feature / self.latent_dim).trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.latent_dim == 0
            || self.n_feature % self.latent_dim != 0
            || !(self.n_feature / self.latent_dim).is_power_of_two()
        {
            return Err(Error::Config(format!(
                "n_feature {} must be latent_dim {} times a power of two",
                self.n_feature, self.latent_dim
            )));
        }
        if self.n_feature % 16 != 0 {
            return Err(Error::Config(format!("n_feature {} must be a multiple of 16", self.n_feature)));
        }
        if !(self.channel_scale > 0.0) || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("channel_scale must be > 0 and dropout in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Conditions for a batch: one class per row plus optional history
/// `[B, k, 2, n_feature]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBundle {
    pub hi_class: Vec<usize>,
    pub history: Option<Tensor>,
}

impl ConditionBundle {
    pub fn new(hi_class: Vec<usize>, history: Option<Tensor>) -> Self {
        Self { hi_class, history }
    }

    pub fn batch(&self) -> usize {
        self.hi_class.len()
    }
}

/// Encoder output with the reparameterised sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub mu: Tensor,
    pub logvar: Tensor,
    pub z: Tensor,
}

/// Critic outputs for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutputs {
    pub disc_logit: Tensor,
    pub disc_features: Tensor,
    pub class_logits: Tensor,
    pub class_features: Tensor,
}

/// Graph-level condition inputs after validation.
struct CondVars {
    classes: Vec<usize>,
    /// `[B, 2k, n_feature]`
    history: Option<Var>,
}

fn cond_vars(
    g: &mut Graph,
    mode: CondMode,
    cond: Option<&ConditionBundle>,
    cfg: &NetConfig,
    batch: usize,
    who: &str,
) -> Result<CondVars> {
    match (mode, cond) {
        (CondMode::None, None) => Ok(CondVars { classes: Vec::new(), history: None }),
        (CondMode::None, Some(_)) => Err(Error::Contract(format!("{who} is unconditional but received conditions"))),
        (_, None) => Err(Error::Contract(format!("{who} requires conditions"))),
        (mode, Some(c)) => {
            if c.hi_class.len() != batch {
                return Err(Error::Shape(format!("{} classes for batch {batch}", c.hi_class.len())));
            }
            if let Some(&bad) = c.hi_class.iter().find(|&&y| y >= cfg.n_classes) {
                return Err(Error::Range(format!("class {bad} outside 0..{}", cfg.n_classes)));
            }
            let history = if mode == CondMode::ClassHistory {
                let h = c
                    .history
                    .as_ref()
                    .ok_or_else(|| Error::Contract(format!("{who} requires a history block")))?;
                let want = [batch, cfg.k, CHANNELS, cfg.n_feature];
                if h.shape() != want {
                    return Err(Error::Shape(format!("history {:?}, expected {:?}", h.shape(), want)));
                }
                let h = h.clone().reshape(&[batch, cfg.k * CHANNELS, cfg.n_feature])?;
                Some(g.input(h))
            } else {
                None
            };
            Ok(CondVars { classes: c.hi_class.clone(), history })
        }
    }
}

/// `[B, width]` embedding rows reshaped into a `[B, 1, width]` channel.
fn embed_channel(g: &mut Graph, emb: &Embedding, set: &ParamSet, classes: &[usize]) -> Result<Var> {
    let rows = emb.forward(g, set, classes)?;
    Ok(g.reshape(rows, &[classes.len(), 1, emb.width])?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConvBlock {
    conv: Conv1d,
    bn: BatchNorm1d,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Backbone {
    blocks: Vec<ConvBlock>,
    slope: f64,
    out_channels: usize,
}

impl Backbone {
    fn new(set: &mut ParamSet, c_in: usize, channels: &[usize], strides: &[usize], slope: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut blocks = Vec::new();
        let mut prev = c_in;
        for (i, (&c, &s)) in channels.iter().zip(strides).enumerate() {
            blocks.push(ConvBlock {
                conv: Conv1d::new(set, &format!("block{i}.conv"), prev, c, KERNEL, s, 1, rng),
                bn: BatchNorm1d::new(set, &format!("block{i}.bn"), c),
            });
            prev = c;
        }
        Self { blocks, slope, out_channels: prev }
    }

    fn forward(&self, g: &mut Graph, set: &ParamSet, mut x: Var) -> Result<Var> {
        for b in &self.blocks {
            x = b.conv.forward(g, set, x)?;
            x = b.bn.forward(g, set, x)?;
            x = g.leaky_relu(x, self.slope);
        }
        Ok(x)
    }
}

fn out_len(n_feature: usize, strides: &[usize]) -> usize {
    strides.iter().fold(n_feature, |l, &s| (l + 2 - KERNEL) / s + 1)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Encoder {
    pub params: ParamSet,
    mode: CondMode,
    embed: Option<Embedding>,
    backbone: Backbone,
    mu: Linear,
    logvar: Linear,
}

impl Encoder {
    fn new(cfg: &NetConfig, mode: CondMode, rng: &mut ChaCha8Rng) -> Self {
        let mut set = ParamSet::new();
        let cond_ch = cond_channels(cfg, mode);
        let embed = (mode != CondMode::None).then(|| Embedding::new(&mut set, "embed", cfg.n_classes, cfg.n_feature, rng));
        let channels: Vec<usize> = ENC_CHANNELS.iter().map(|&c| cfg.ch(c)).collect();
        let backbone = Backbone::new(&mut set, cfg.signal_channels + cond_ch, &channels, &ENC_STRIDES, cfg.slope, rng);
        let flat = backbone.out_channels * out_len(cfg.n_feature, &ENC_STRIDES);
        let mu = Linear::new(&mut set, "mu", flat, cfg.latent_dim, rng);
        let logvar = Linear::new(&mut set, "logvar", flat, cfg.latent_dim, rng);
        Self { params: set, mode, embed, backbone, mu, logvar }
    }

    fn forward(&self, g: &mut Graph, cfg: &NetConfig, x: Var, cond: Option<&ConditionBundle>) -> Result<(Var, Var)> {
        let batch = g.shape(x)[0];
        let cv = cond_vars(g, self.mode, cond, cfg, batch, "encoder")?;
        let mut parts = vec![x];
        if let Some(h) = cv.history {
            parts.push(h);
        }
        if let Some(e) = &self.embed {
            parts.push(embed_channel(g, e, &self.params, &cv.classes)?);
        }
        let inp = g.concat(&parts)?;
        let f = self.backbone.forward(g, &self.params, inp)?;
        let f = g.sigmoid(f);
        let flat_len = g.value(f).len() / batch;
        let flat = g.reshape(f, &[batch, flat_len])?;
        let mu = self.mu.forward(g, &self.params, flat)?;
        let logvar = self.logvar.forward(g, &self.params, flat)?;
        Ok((mu, logvar))
    }
}

fn cond_channels(cfg: &NetConfig, mode: CondMode) -> usize {
    match mode {
        CondMode::None => 0,
        CondMode::Class => 1,
        CondMode::ClassHistory => CHANNELS * cfg.k + 1,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UpBlock {
    conv: ConvTranspose1d,
    bn: BatchNorm1d,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generator {
    pub params: ParamSet,
    mode: CondMode,
    embed: Option<Embedding>,
    blocks: Vec<UpBlock>,
    head: ConvTranspose1d,
    slope: f64,
}

impl Generator {
    fn new(cfg: &NetConfig, mode: CondMode, rng: &mut ChaCha8Rng) -> Self {
        let mut set = ParamSet::new();
        let embed = (mode != CondMode::None).then(|| Embedding::new(&mut set, "embed", cfg.n_classes, cfg.latent_dim, rng));
        let ups = cfg.upsample_blocks();
        let c_in = cond_channels(cfg, mode) + 1;
        let mut blocks = Vec::new();
        let mut prev = c_in;
        for i in 0..=ups {
            let c = cfg.ch(16 << (ups - i));
            let (stride, out_pad) = if i == 0 { (1, 0) } else { (2, 1) };
            blocks.push(UpBlock {
                conv: ConvTranspose1d::new(&mut set, &format!("block{i}.conv"), prev, c, KERNEL, stride, 1, out_pad, rng),
                bn: BatchNorm1d::new(&mut set, &format!("block{i}.bn"), c),
            });
            prev = c;
        }
        let head = ConvTranspose1d::new(&mut set, "head", prev, cfg.signal_channels, KERNEL, 1, 1, 0, rng);
        Self { params: set, mode, embed, blocks, head, slope: cfg.slope }
    }

    fn forward(&self, g: &mut Graph, cfg: &NetConfig, z: Var, cond: Option<&ConditionBundle>) -> Result<Var> {
        let zs = g.shape(z).to_vec();
        if zs.len() != 2 || zs[1] != cfg.latent_dim {
            return Err(Error::Shape(format!("latent {:?}, expected [B, {}]", zs, cfg.latent_dim)));
        }
        let batch = zs[0];
        let cv = cond_vars(g, self.mode, cond, cfg, batch, "generator")?;
        let mut parts = Vec::new();
        if let Some(h) = cv.history {
            parts.push(g.avg_pool(h, cfg.n_feature / cfg.latent_dim)?);
        }
        if let Some(e) = &self.embed {
            parts.push(embed_channel(g, e, &self.params, &cv.classes)?);
        }
        parts.push(g.reshape(z, &[batch, 1, cfg.latent_dim])?);
        let mut x = g.concat(&parts)?;
        for b in &self.blocks {
            x = b.conv.forward(g, &self.params, x)?;
            x = b.bn.forward(g, &self.params, x)?;
            x = g.leaky_relu(x, self.slope);
        }
        let y = self.head.forward(g, &self.params, x)?;
        Ok(g.sigmoid(y))
    }
}

/// Discriminator or classifier: convolutional backbone, global average pool,
/// dropout and a linear head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Critic {
    pub params: ParamSet,
    mode: CondMode,
    embed: Option<Embedding>,
    backbone: Backbone,
    head: Linear,
    dropout: f64,
    class_input: bool,
}

impl Critic {
    fn new(cfg: &NetConfig, mode: CondMode, last: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut set = ParamSet::new();
        let embed = matches!(mode, CondMode::Class | CondMode::ClassHistory)
            .then(|| Embedding::new(&mut set, "embed", cfg.n_classes, cfg.n_feature, rng));
        let mut channels: Vec<usize> = ENC_CHANNELS.iter().map(|&c| cfg.ch(c)).collect();
        channels[4] = cfg.ch(last);
        let c_in = cfg.signal_channels + cond_channels(cfg, mode);
        let backbone = Backbone::new(&mut set, c_in, &channels, &ENC_STRIDES, cfg.slope, rng);
        let head = Linear::new(&mut set, "head", backbone.out_channels, outputs, rng);
        Self { params: set, mode, embed, backbone, head, dropout: cfg.dropout, class_input: true }
    }

    /// History-only critic (no class channel): the classifier predicts the
    /// class, so it cannot be shown it.
    fn history_only(cfg: &NetConfig, with_history: bool, last: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut set = ParamSet::new();
        let mut channels: Vec<usize> = ENC_CHANNELS.iter().map(|&c| cfg.ch(c)).collect();
        channels[4] = cfg.ch(last);
        let extra = if with_history { CHANNELS * cfg.k } else { 0 };
        let backbone = Backbone::new(&mut set, cfg.signal_channels + extra, &channels, &ENC_STRIDES, cfg.slope, rng);
        let head = Linear::new(&mut set, "head", backbone.out_channels, outputs, rng);
        let mode = if with_history { CondMode::ClassHistory } else { CondMode::None };
        Self { params: set, mode, embed: None, backbone, head, dropout: cfg.dropout, class_input: false }
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.out_channels
    }

    /// Returns `(head output [B, outputs], pooled features [B, m])`.
    fn forward(&self, g: &mut Graph, cfg: &NetConfig, x: Var, cond: Option<&ConditionBundle>, who: &str) -> Result<(Var, Var)> {
        let batch = g.shape(x)[0];
        let mut parts = vec![x];
        if !self.class_input {
            if self.mode == CondMode::ClassHistory {
                let cv = cond_vars(g, CondMode::ClassHistory, cond, cfg, batch, who)?;
                parts.extend(cv.history);
            }
        } else {
            let cv = cond_vars(g, self.mode, cond, cfg, batch, who)?;
            parts.extend(cv.history);
            if let Some(e) = &self.embed {
                parts.push(embed_channel(g, e, &self.params, &cv.classes)?);
            }
        }
        let inp = if parts.len() == 1 { parts[0] } else { g.concat(&parts)? };
        let f = self.backbone.forward(g, &self.params, inp)?;
        let feat = g.mean_axis(f, 2)?;
        let d = g.dropout(feat, self.dropout)?;
        let out = self.head.forward(g, &self.params, d)?;
        Ok((out, feat))
    }
}

/// Unconditional classifier over single snapshots, used as the feature
/// function for the Fréchet distance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotClassifier {
    pub cfg: NetConfig,
    pub net: Critic,
}

impl SnapshotClassifier {
    pub fn new(n_feature: usize, seed: u64) -> Result<Self> {
        let cfg = NetConfig::new(Variant::Cvgan, 1, n_feature);
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Critic::new(&cfg, CondMode::None, CLASSIFIER_LAST, cfg.n_classes, &mut rng);
        Ok(Self { cfg, net })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        self.net.forward(g, &self.cfg, x, None, "feature classifier")
    }
}

/// Sub-network selector used for freezing and update bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Part {
    Encoder,
    Generator,
    Discriminator,
    Classifier,
}

/// All sub-networks of one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBundle {
    pub variant: Variant,
    pub cfg: NetConfig,
    pub encoder: Option<Encoder>,
    pub generator: Generator,
    pub discriminator: Option<Critic>,
    pub classifier: Option<Critic>,
    pub init_seed: u64,
}

/// Construct the sub-networks a variant needs, with parameters drawn from `seed`.
pub fn build_model(variant: Variant, cfg: NetConfig, seed: u64) -> Result<ModelBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode = variant.cond_mode();
    let encoder = variant.has_encoder().then(|| Encoder::new(&cfg, mode, &mut rng));
    let generator = Generator::new(&cfg, mode, &mut rng);
    let (discriminator, classifier) = if variant.has_critics() {
        let d = Critic::new(&cfg, mode, ENC_CHANNELS[4], 1, &mut rng);
        let c = Critic::history_only(&cfg, variant.uses_history(), CLASSIFIER_LAST, cfg.n_classes, &mut rng);
        (Some(d), Some(c))
    } else {
        (None, None)
    };
    Ok(ModelBundle { variant, cfg, encoder, generator, discriminator, classifier, init_seed: seed })
}

/// `z = mu + exp(logvar / 2) * noise` on the graph.
pub fn reparameterize(g: &mut Graph, mu: Var, logvar: Var, noise: Var) -> Result<Var> {
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let s = g.mul(std, noise)?;
    Ok(g.add(mu, s)?)
}

fn missing(variant: Variant, part: &str) -> Error {
    Error::Contract(format!("{variant} has no {part}"))
}

impl ModelBundle {
    pub fn has(&self, part: Part) -> bool {
        match part {
            Part::Encoder => self.encoder.is_some(),
            Part::Generator => true,
            Part::Discriminator => self.discriminator.is_some(),
            Part::Classifier => self.classifier.is_some(),
        }
    }

    pub fn params(&self, part: Part) -> Option<&ParamSet> {
        match part {
            Part::Encoder => self.encoder.as_ref().map(|e| &e.params),
            Part::Generator => Some(&self.generator.params),
            Part::Discriminator => self.discriminator.as_ref().map(|d| &d.params),
            Part::Classifier => self.classifier.as_ref().map(|c| &c.params),
        }
    }

    pub fn params_mut(&mut self, part: Part) -> Option<&mut ParamSet> {
        match part {
            Part::Encoder => self.encoder.as_mut().map(|e| &mut e.params),
            Part::Generator => Some(&mut self.generator.params),
            Part::Discriminator => self.discriminator.as_mut().map(|d| &mut d.params),
            Part::Classifier => self.classifier.as_mut().map(|c| &mut c.params),
        }
    }

    pub fn parts(&self) -> Vec<Part> {
        [Part::Encoder, Part::Generator, Part::Discriminator, Part::Classifier]
            .into_iter()
            .filter(|&p| self.has(p))
            .collect()
    }

    /// Freeze every sub-network except `trainable` on `g`.
    pub fn freeze_except(&self, g: &mut Graph, trainable: &[Part]) {
        for p in self.parts() {
            if !trainable.contains(&p) {
                g.freeze(self.params(p).expect("part exists"));
            }
        }
    }

    /// Fingerprint over all sub-network parameters of `part`.
    pub fn fingerprint(&self, part: Part) -> Option<u64> {
        self.params(part).map(ParamSet::fingerprint)
    }

    pub fn feature_dims(&self) -> (Option<usize>, Option<usize>) {
        (
            self.discriminator.as_ref().map(Critic::feature_dim),
            self.classifier.as_ref().map(Critic::feature_dim),
        )
    }

    /// Learned condition row: `n_feature` wide for the encoder (or
    /// discriminator when there is no encoder), `latent_dim` wide for the generator.
    pub fn adapter_embed(&self, hi_class: usize, target_len: usize) -> Result<Vec<f64>> {
        if hi_class >= self.cfg.n_classes {
            return Err(Error::Range(format!("class {hi_class} outside 0..{}", self.cfg.n_classes)));
        }
        let table = if target_len == self.cfg.latent_dim {
            self.generator.embed.as_ref().map(|e| (e, &self.generator.params))
        } else if target_len == self.cfg.n_feature {
            self.encoder
                .as_ref()
                .and_then(|e| e.embed.as_ref().map(|t| (t, &e.params)))
                .or_else(|| self.discriminator.as_ref().and_then(|d| d.embed.as_ref().map(|t| (t, &d.params))))
        } else {
            return Err(Error::Shape(format!(
                "target length {target_len} is neither n_feature {} nor latent_dim {}",
                self.cfg.n_feature, self.cfg.latent_dim
            )));
        };
        let (emb, set) = table.ok_or_else(|| missing(self.variant, "class adapter"))?;
        Ok(emb.row(set, hi_class).to_vec())
    }

    pub fn encode(&self, g: &mut Graph, x: Var, cond: Option<&ConditionBundle>) -> Result<(Var, Var)> {
        let enc = self.encoder.as_ref().ok_or_else(|| missing(self.variant, "encoder"))?;
        self.check_signal(g, x)?;
        enc.forward(g, &self.cfg, x, cond)
    }

    pub fn generate(&self, g: &mut Graph, z: Var, cond: Option<&ConditionBundle>) -> Result<Var> {
        self.generator.forward(g, &self.cfg, z, cond)
    }

    pub fn discriminate(&self, g: &mut Graph, x: Var, cond: Option<&ConditionBundle>) -> Result<(Var, Var)> {
        let d = self.discriminator.as_ref().ok_or_else(|| missing(self.variant, "discriminator"))?;
        self.check_signal(g, x)?;
        let (logit, feat) = d.forward(g, &self.cfg, x, cond, "discriminator")?;
        let b = g.shape(logit)[0];
        Ok((g.reshape(logit, &[b])?, feat))
    }

    pub fn classify(&self, g: &mut Graph, x: Var, cond: Option<&ConditionBundle>) -> Result<(Var, Var)> {
        let c = self.classifier.as_ref().ok_or_else(|| missing(self.variant, "classifier"))?;
        self.check_conditions(cond)?;
        self.check_signal(g, x)?;
        c.forward(g, &self.cfg, x, cond, "classifier")
    }

    /// Conditional variants need conditions, unconditional ones refuse them.
    pub fn check_conditions(&self, cond: Option<&ConditionBundle>) -> Result<()> {
        match (self.variant.is_conditional(), cond.is_some()) {
            (true, false) => Err(Error::Contract(format!("{} requires conditions", self.variant))),
            (false, true) => Err(Error::Contract(format!("{} is unconditional but received conditions", self.variant))),
            _ => Ok(()),
        }
    }

    fn check_signal(&self, g: &Graph, x: Var) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 3 || s[1] != self.cfg.signal_channels || s[2] != self.cfg.n_feature {
            return Err(Error::Shape(format!(
                "signal {:?}, expected [B, {}, {}]",
                s, self.cfg.signal_channels, self.cfg.n_feature
            )));
        }
        Ok(())
    }

    /// Evaluation-mode encoding with a supplied reparameterisation noise.
    pub fn encode_eval(&self, x: &Tensor, cond: Option<&ConditionBundle>, noise: &Tensor) -> Result<LatentCode> {
        let mut g = Graph::eval();
        let xv = g.input(x.clone());
        let (mu, logvar) = self.encode(&mut g, xv, cond)?;
        let nv = g.input(noise.clone());
        let z = reparameterize(&mut g, mu, logvar, nv)?;
        Ok(LatentCode { mu: g.value(mu).clone(), logvar: g.value(logvar).clone(), z: g.value(z).clone() })
    }

    /// Evaluation-mode generation: `z [B, latent_dim]` to `[B, signal_channels, n_feature]`.
    pub fn generate_eval(&self, z: &Tensor, cond: Option<&ConditionBundle>) -> Result<Tensor> {
        let mut g = Graph::eval();
        let zv = g.input(z.clone());
        let y = self.generate(&mut g, zv, cond)?;
        Ok(g.value(y).clone())
    }

    /// Evaluation-mode critic outputs for a batch.
    pub fn critics_eval(&self, x: &Tensor, cond: Option<&ConditionBundle>) -> Result<NetOutputs> {
        let mut g = Graph::eval();
        let xv = g.input(x.clone());
        let (dl, df) = self.discriminate(&mut g, xv, cond)?;
        let (cl, cf) = self.classify(&mut g, xv, cond)?;
        Ok(NetOutputs {
            disc_logit: g.value(dl).clone(),
            disc_features: g.value(df).clone(),
            class_logits: g.value(cl).clone(),
            class_features: g.value(cf).clone(),
        })
    }
}
