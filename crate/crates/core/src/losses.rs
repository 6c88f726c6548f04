//! Loss-term ledger and the named loss configurations.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use autograd::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::dataset::N_CLASSES;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TermId {
    Recon,
    #[serde(rename = "KL")]
    Kl,
    Feature,
    #[serde(rename = "he")]
    He,
    #[serde(rename = "hp")]
    Hp,
    #[serde(rename = "mf")]
    Mf,
    #[serde(rename = "mc")]
    Mc,
    L1,
    C,
    #[serde(rename = "d")]
    D,
    Bin,
}

impl TermId {
    pub const ALL: [TermId; 11] = [
        TermId::Recon,
        TermId::Kl,
        TermId::Feature,
        TermId::He,
        TermId::Hp,
        TermId::Mf,
        TermId::Mc,
        TermId::L1,
        TermId::C,
        TermId::D,
        TermId::Bin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TermId::Recon => "Recon",
            TermId::Kl => "KL",
            TermId::Feature => "Feature",
            TermId::He => "he",
            TermId::Hp => "hp",
            TermId::Mf => "mf",
            TermId::Mc => "mc",
            TermId::L1 => "L1",
            TermId::C => "C",
            TermId::D => "d",
            TermId::Bin => "Bin",
        }
    }

    /// Ledger index of the term.
    pub fn ledger_id(self) -> usize {
        match self {
            TermId::Recon => 1,
            TermId::He => 2,
            TermId::Mf => 3,
            TermId::L1 => 4,
            TermId::C => 5,
            TermId::D => 6,
            TermId::Kl => 7,
            TermId::Feature => 8,
            TermId::Hp => 9,
            TermId::Bin => 10,
            TermId::Mc => 11,
        }
    }

    /// Terms optimised by the discriminator rather than the encoder/generator.
    pub fn is_disc_side(self) -> bool {
        matches!(self, TermId::D | TermId::L1)
    }

    /// Whether the term reads discriminator or classifier outputs.
    pub fn needs_critics(self) -> bool {
        matches!(self, TermId::Feature | TermId::Mf | TermId::Mc | TermId::L1 | TermId::C | TermId::D | TermId::Bin)
    }

    /// Whether the term reads the encoder's reconstruction or latent code.
    pub fn needs_encoder(self) -> bool {
        matches!(self, TermId::Recon | TermId::Kl)
    }
}

impl fmt::Display for TermId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TermId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TermId::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown loss term {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub id: TermId,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl LossTerm {
    pub fn new(id: TermId) -> Self {
        Self { id, weight: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub name: String,
    pub vae_terms: Vec<LossTerm>,
    pub disc_terms: Vec<LossTerm>,
    pub classifier_term_enabled: bool,
}

/// `(vae extra terms, discriminator extra terms)` for conf1..conf14.
const TABLE: [(&[TermId], &[TermId]); 14] = {
    use TermId::*;
    [
        (&[Bin], &[]),
        (&[Feature, Mc, Hp], &[]),
        (&[Bin], &[L1]),
        (&[Feature, Mc, Hp, He], &[]),
        (&[Bin, Mc], &[L1]),
        (&[Bin, Mc, Mf, He], &[]),
        (&[Bin, Mc, Mf], &[L1]),
        (&[Feature, Mc, Mf], &[L1]),
        (&[Feature], &[]),
        (&[Bin, Mc, Mf], &[]),
        (&[Bin, Mc, Mf, Hp], &[]),
        (&[Bin, Mc], &[]),
        (&[Bin, Mc, Hp], &[]),
        (&[Feature, Mc], &[]),
    ]
};

pub const DEFAULT_CONFIG: &str = "conf9";

/// The named configuration, with Recon and KL always on the VAE side and
/// `d` always on the discriminator side.
pub fn compose_config(name: &str) -> Result<LossConfig> {
    let idx: usize = name
        .strip_prefix("conf")
        .and_then(|n| n.parse().ok())
        .filter(|n| (1..=14).contains(n))
        .ok_or_else(|| Error::Config(format!("unknown loss configuration {name:?}")))?;
    let (vae, disc) = TABLE[idx - 1];
    let vae_terms = [TermId::Recon, TermId::Kl].iter().chain(vae).map(|&t| LossTerm::new(t)).collect();
    let disc_terms = [TermId::D].iter().chain(disc).map(|&t| LossTerm::new(t)).collect();
    Ok(LossConfig { name: name.to_string(), vae_terms, disc_terms, classifier_term_enabled: true })
}

impl LossConfig {
    /// A custom configuration from explicit term lists; missing mandatory
    /// terms are added with weight 1.
    pub fn custom(name: &str, vae: &[LossTerm], disc: &[LossTerm]) -> Result<Self> {
        let mut cfg = LossConfig {
            name: name.to_string(),
            vae_terms: vae.to_vec(),
            disc_terms: disc.to_vec(),
            classifier_term_enabled: true,
        };
        for t in [TermId::Kl, TermId::Recon] {
            if !cfg.has_vae(t) {
                cfg.vae_terms.insert(0, LossTerm::new(t));
            }
        }
        if !cfg.has_disc(TermId::D) {
            cfg.disc_terms.insert(0, LossTerm::new(TermId::D));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.vae_terms.iter().find(|t| t.id.is_disc_side() || t.id == TermId::C) {
            return Err(Error::Config(format!("{} cannot be a generator-side term", t.id)));
        }
        if let Some(t) = self.disc_terms.iter().find(|t| !t.id.is_disc_side()) {
            return Err(Error::Config(format!("{} cannot be a discriminator-side term", t.id)));
        }
        if !self.has_vae(TermId::Recon) || !self.has_vae(TermId::Kl) || !self.has_disc(TermId::D) {
            return Err(Error::Config("configurations always carry Recon, KL and d".into()));
        }
        let all: Vec<_> = self.vae_terms.iter().chain(&self.disc_terms).collect();
        if all.iter().map(|t| t.id).collect::<BTreeSet<_>>().len() != all.len() {
            return Err(Error::Config("duplicate loss term".into()));
        }
        if all.iter().any(|t| !t.weight.is_finite() || t.weight < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn has_vae(&self, id: TermId) -> bool {
        self.vae_terms.iter().any(|t| t.id == id)
    }

    pub fn has_disc(&self, id: TermId) -> bool {
        self.disc_terms.iter().any(|t| t.id == id)
    }

    /// Drop the terms a model cannot evaluate: encoder terms without an
    /// encoder, critic terms without critics.
    pub fn restricted(&self, has_encoder: bool, has_critics: bool) -> LossConfig {
        let keep = |t: &&LossTerm| (has_encoder || !t.id.needs_encoder()) && (has_critics || !t.id.needs_critics());
        LossConfig {
            name: self.name.clone(),
            vae_terms: self.vae_terms.iter().filter(keep).copied().collect(),
            disc_terms: self.disc_terms.iter().filter(keep).copied().collect(),
            classifier_term_enabled: self.classifier_term_enabled && has_critics,
        }
    }

    /// Human-readable resolved term list, e.g. `VAE: Recon+KL+Feature; D: d`.
    pub fn describe(&self) -> String {
        let join = |ts: &[LossTerm]| {
            ts.iter()
                .map(|t| if t.weight == 1.0 { t.id.to_string() } else { format!("{}*{}", t.weight, t.id) })
                .collect::<Vec<_>>()
                .join("+")
        };
        format!("VAE: {}; D: {}", join(&self.vae_terms), join(&self.disc_terms))
    }
}

/// Exponential moving averages of classifier features per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCenterState {
    pub centers: Vec<Vec<f64>>,
    pub decay: f64,
    pub counts: Vec<u64>,
}

impl ClassCenterState {
    pub fn new(width: usize, decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Config(format!("center decay {decay} outside (0, 1)")));
        }
        Ok(Self { centers: vec![vec![0.0; width]; N_CLASSES], decay, counts: vec![0; N_CLASSES] })
    }

    pub fn width(&self) -> usize {
        self.centers[0].len()
    }

    pub fn center(&self, class: usize) -> Option<&[f64]> {
        (self.counts[class] > 0).then(|| &self.centers[class][..])
    }

    /// Fold one batch of `[B, m]` features into the per-class averages.
    pub fn update(&mut self, features: &Tensor, labels: &[usize]) -> Result<()> {
        let s = features.shape();
        if s.len() != 2 || s[1] != self.width() || s[0] != labels.len() {
            return Err(Error::Shape(format!(
                "features {:?} for {} labels and width {}",
                s,
                labels.len(),
                self.width()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= N_CLASSES) {
            return Err(Error::Range(format!("class {bad} outside 0..{N_CLASSES}")));
        }
        for (class, rows) in group_rows(labels) {
            let mean = row_mean(features, &rows);
            let c = &mut self.centers[class];
            if self.counts[class] == 0 {
                c.copy_from_slice(&mean);
            } else {
                for (cv, m) in c.iter_mut().zip(&mean) {
                    *cv = self.decay * *cv + (1.0 - self.decay) * m;
                }
            }
            self.counts[class] += 1;
        }
        Ok(())
    }
}

fn group_rows(labels: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut seen = [usize::MAX; N_CLASSES];
    for (i, &y) in labels.iter().enumerate() {
        if seen[y] == usize::MAX {
            seen[y] = groups.len();
            groups.push((y, Vec::new()));
        }
        groups[seen[y]].1.push(i);
    }
    groups.sort_by_key(|g| g.0);
    groups
}

fn row_mean(t: &Tensor, rows: &[usize]) -> Vec<f64> {
    let mut m = vec![0.0; t.dim(1)];
    for &r in rows {
        for (a, b) in m.iter_mut().zip(t.row(r)) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|v| *v /= rows.len() as f64);
    m
}

/// Graph handles a loss term may read. `x_hat` is the reconstruction (or the
/// prior sample for encoder-less models), `prior` is `G(z|y)` with `z ~ N(0, I)`.
#[derive(Debug, Default, Clone)]
pub struct LossInputs<'a> {
    pub x: Option<Var>,
    pub x_hat: Option<Var>,
    pub prior: Option<Var>,
    /// Mean of the history rows, `[B, 2, n_feature]`.
    pub history_mean: Option<Var>,
    pub mu: Option<Var>,
    pub logvar: Option<Var>,
    pub labels: Option<&'a [usize]>,
    pub d_real: Option<(Var, Var)>,
    pub d_hat: Option<(Var, Var)>,
    pub d_prior: Option<(Var, Var)>,
    pub c_real: Option<(Var, Var)>,
    pub c_hat: Option<(Var, Var)>,
    pub c_prior: Option<(Var, Var)>,
    pub centers: Option<&'a ClassCenterState>,
}

fn need<T>(v: Option<T>, id: TermId, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::Contract(format!("loss term {id} needs {what}")))
}

fn mse(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let s = g.square(d);
    Ok(g.mean(s))
}

/// `0.5 * sum_f (mean_b a - mean_b b)^2`
fn mean_gap(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let ma = g.mean_axis(a, 0)?;
    let mb = g.mean_axis(b, 0)?;
    let d = g.sub(ma, mb)?;
    let s = g.square(d);
    let t = g.sum(s);
    Ok(g.scale(t, 0.5))
}

/// Evaluate one term on the graph.
pub fn loss_term(g: &mut Graph, id: TermId, inp: &LossInputs) -> Result<Var> {
    match id {
        TermId::Recon => {
            let x = need(inp.x, id, "x")?;
            let xh = need(inp.x_hat, id, "x_hat")?;
            mse(g, x, xh)
        }
        TermId::Kl => {
            let mu = need(inp.mu, id, "mu")?;
            let lv = need(inp.logvar, id, "logvar")?;
            let batch = g.shape(mu)[0] as f64;
            let m2 = g.square(mu);
            let e = g.exp(lv);
            let a = g.add(m2, e)?;
            let b = g.sub(a, lv)?;
            let c = g.add_scalar(b, -1.0);
            let s = g.sum(c);
            Ok(g.scale(s, 0.5 / batch))
        }
        TermId::Feature => {
            let (_, fc) = need(inp.c_real, id, "classifier features of x")?;
            let (_, fch) = need(inp.c_hat, id, "classifier features of x_hat")?;
            let (_, fd) = need(inp.d_real, id, "discriminator features of x")?;
            let (_, fdh) = need(inp.d_hat, id, "discriminator features of x_hat")?;
            let a = mse(g, fc, fch)?;
            let b = mse(g, fd, fdh)?;
            Ok(g.add(a, b)?)
        }
        TermId::He | TermId::Hp => {
            let hm = need(inp.history_mean, id, "history")?;
            let target = if id == TermId::He { need(inp.x_hat, id, "x_hat")? } else { need(inp.prior, id, "G(z|y)")? };
            let m = mse(g, hm, target)?;
            Ok(g.scale(m, 0.5))
        }
        TermId::Mf => {
            let (_, fr) = need(inp.d_real, id, "discriminator features of x")?;
            let (_, fp) = need(inp.d_prior, id, "discriminator features of G(z|y)")?;
            mean_gap(g, fr, fp)
        }
        TermId::Mc => {
            let (_, fp) = need(inp.c_prior, id, "classifier features of G(z|y)")?;
            let labels = need(inp.labels, id, "labels")?;
            let centers = need(inp.centers, id, "class centers")?;
            if g.shape(fp)[1] != centers.width() {
                return Err(Error::Shape(format!(
                    "class features of width {} against centers of width {}",
                    g.shape(fp)[1],
                    centers.width()
                )));
            }
            let mut total: Option<Var> = None;
            for (class, rows) in group_rows(labels) {
                let Some(center) = centers.center(class) else { continue };
                let sel = g.select_rows(fp, &rows)?;
                let m = g.mean_axis(sel, 0)?;
                let c = g.input(Tensor::new(vec![center.len()], center.to_vec())?);
                let d = g.sub(c, m)?;
                let s = g.square(d);
                let s = g.sum(s);
                total = Some(match total {
                    Some(t) => g.add(t, s)?,
                    None => s,
                });
            }
            match total {
                Some(t) => Ok(g.scale(t, 0.5)),
                None => Ok(g.input(Tensor::scalar(0.0))),
            }
        }
        TermId::L1 => {
            let (l, _) = need(inp.d_hat, id, "discriminator logit of x_hat")?;
            let s = g.softplus(l);
            Ok(g.mean(s))
        }
        TermId::C => {
            let (logits, _) = need(inp.c_real, id, "classifier logits of x")?;
            let labels = need(inp.labels, id, "labels")?;
            Ok(g.softmax_cross_entropy(logits, labels)?)
        }
        TermId::D => {
            let (lr, _) = need(inp.d_real, id, "discriminator logit of x")?;
            let (lp, _) = need(inp.d_prior, id, "discriminator logit of G(z|y)")?;
            let nr = g.scale(lr, -1.0);
            let a = g.softplus(nr);
            let a = g.mean(a);
            let b = g.softplus(lp);
            let b = g.mean(b);
            Ok(g.add(a, b)?)
        }
        TermId::Bin => {
            let (l, _) = need(inp.d_hat, id, "discriminator logit of x_hat")?;
            let (logits, _) = need(inp.c_hat, id, "classifier logits of x_hat")?;
            let labels = need(inp.labels, id, "labels")?;
            let nl = g.scale(l, -1.0);
            let a = g.softplus(nl);
            let a = g.mean(a);
            let b = g.softmax_cross_entropy(logits, labels)?;
            Ok(g.add(a, b)?)
        }
    }
}

/// Weighted sum of `terms`, with the unweighted value of each term.
pub fn weighted_sum(g: &mut Graph, terms: &[LossTerm], inp: &LossInputs) -> Result<(Var, Vec<(TermId, f64)>)> {
    let mut total: Option<Var> = None;
    let mut parts = Vec::with_capacity(terms.len());
    for t in terms {
        let v = loss_term(g, t.id, inp)?;
        parts.push((t.id, g.value(v).item()));
        let w = g.scale(v, t.weight);
        total = Some(match total {
            Some(acc) => g.add(acc, w)?,
            None => w,
        });
    }
    let total = total.unwrap_or_else(|| g.input(Tensor::scalar(0.0)));
    Ok((total, parts))
}

/// Per-component objectives of one configuration.
#[derive(Debug, Clone, Copy)]
pub struct TotalLosses {
    pub vae: Var,
    pub disc: Var,
    pub classifier: Option<Var>,
}

pub fn total_losses(g: &mut Graph, cfg: &LossConfig, inp: &LossInputs) -> Result<TotalLosses> {
    let (vae, _) = weighted_sum(g, &cfg.vae_terms, inp)?;
    let (disc, _) = weighted_sum(g, &cfg.disc_terms, inp)?;
    let classifier = if cfg.classifier_term_enabled { Some(loss_term(g, TermId::C, inp)?) } else { None };
    Ok(TotalLosses { vae, disc, classifier })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn kl_spot_values() {
        let mut g = Graph::eval();
        let mu = g.input(Tensor::zeros(&[1, 32]));
        let lv = g.input(Tensor::zeros(&[1, 32]));
        let inp = LossInputs { mu: Some(mu), logvar: Some(lv), ..Default::default() };
        let v = loss_term(&mut g, TermId::Kl, &inp).unwrap();
        assert_eq!(g.value(v).item(), 0.0);
        let mut e1 = vec![0.0; 32];
        e1[0] = 1.0;
        let mu = g.input(t(&[1, 32], &e1));
        let inp = LossInputs { mu: Some(mu), logvar: Some(lv), ..Default::default() };
        let v = loss_term(&mut g, TermId::Kl, &inp).unwrap();
        assert!((g.value(v).item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn recon_and_history_vanish_on_equal_inputs() {
        let mut g = Graph::eval();
        let x = g.input(t(&[2, 2, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]));
        let inp = LossInputs { x: Some(x), x_hat: Some(x), history_mean: Some(x), prior: Some(x), ..Default::default() };
        for id in [TermId::Recon, TermId::He, TermId::Hp] {
            let v = loss_term(&mut g, id, &inp).unwrap();
            assert_eq!(g.value(v).item(), 0.0, "{id}");
        }
    }

    #[test]
    fn mf_matches_batch_means() {
        let mut g = Graph::eval();
        let a = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 9.0]);
        let b = t(&[2, 2], &[0.0, 1.0, 2.0, 1.0]);
        let (av, bv) = (g.input(a), g.input(b));
        let inp = LossInputs { d_real: Some((av, av)), d_prior: Some((bv, bv)), ..Default::default() };
        let v = loss_term(&mut g, TermId::Mf, &inp).unwrap();
        // means (3, 5) and (1, 1)
        assert!((g.value(v).item() - 0.5 * (4.0 + 16.0)).abs() < 1e-12);
        let inp = LossInputs { d_real: Some((av, av)), d_prior: Some((av, av)), ..Default::default() };
        let v = loss_term(&mut g, TermId::Mf, &inp).unwrap();
        assert_eq!(g.value(v).item(), 0.0);
    }

    #[test]
    fn center_updates() {
        let mut s = ClassCenterState::new(1, 0.9).unwrap();
        s.update(&t(&[1, 1], &[1.0]), &[3]).unwrap();
        assert_eq!(s.centers[3], vec![1.0]);
        s.update(&t(&[1, 1], &[0.0]), &[3]).unwrap();
        assert!((s.centers[3][0] - 0.9).abs() < 1e-15);
        let before = s.centers[7].clone();
        s.update(&t(&[2, 1], &[5.0, 6.0]), &[1, 2]).unwrap();
        assert_eq!(s.centers[7], before);
        assert!(s.center(7).is_none());
        assert!(matches!(s.update(&t(&[1, 2], &[0.0, 0.0]), &[1]), Err(Error::Shape(_))));
    }

    #[test]
    fn mc_skips_unseen_classes() {
        let mut s = ClassCenterState::new(2, 0.9).unwrap();
        s.update(&t(&[1, 2], &[1.0, 1.0]), &[0]).unwrap();
        let mut g = Graph::eval();
        let f = g.input(t(&[3, 2], &[0.0, 1.0, 2.0, 1.0, 7.0, 7.0]));
        let labels = [0, 0, 5];
        let inp = LossInputs { c_prior: Some((f, f)), labels: Some(&labels), centers: Some(&s), ..Default::default() };
        let v = loss_term(&mut g, TermId::Mc, &inp).unwrap();
        // class 0 fake mean (1, 1) equals its center; class 5 has no center
        assert_eq!(g.value(v).item(), 0.0);
    }

    #[test]
    fn table_configs() {
        let c9 = compose_config("conf9").unwrap();
        let ids = |ts: &[LossTerm]| ts.iter().map(|t| t.id).collect::<Vec<_>>();
        assert_eq!(ids(&c9.vae_terms), vec![TermId::Recon, TermId::Kl, TermId::Feature]);
        assert_eq!(ids(&c9.disc_terms), vec![TermId::D]);
        let c1 = compose_config("conf1").unwrap();
        assert_eq!(ids(&c1.vae_terms), vec![TermId::Recon, TermId::Kl, TermId::Bin]);
        let c3 = compose_config("conf3").unwrap();
        assert_eq!(ids(&c3.disc_terms), vec![TermId::D, TermId::L1]);
        assert!(compose_config("conf15").is_err());
        assert!(compose_config("conf0").is_err());
        for i in 1..=14 {
            let c = compose_config(&format!("conf{i}")).unwrap();
            c.validate().unwrap();
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(serde_json::from_str::<LossConfig>(&json).unwrap(), c);
        }
    }

    #[test]
    fn restriction_drops_unavailable_terms() {
        let c = compose_config("conf2").unwrap();
        let cvae = c.restricted(true, false);
        assert_eq!(cvae.vae_terms.iter().map(|t| t.id).collect::<Vec<_>>(), vec![TermId::Recon, TermId::Kl, TermId::Hp]);
        assert!(cvae.disc_terms.is_empty());
        assert!(!cvae.classifier_term_enabled);
        let gan = c.restricted(false, true);
        assert!(!gan.has_vae(TermId::Recon));
    }

    #[test]
    fn custom_configs_gain_mandatory_terms() {
        let c = LossConfig::custom("mine", &[LossTerm { id: TermId::Mf, weight: 2.0 }], &[]).unwrap();
        assert!(c.has_vae(TermId::Recon) && c.has_vae(TermId::Kl) && c.has_disc(TermId::D));
        assert!(LossConfig::custom("bad", &[LossTerm::new(TermId::D)], &[]).is_err());
        assert_eq!(c.describe(), "VAE: Recon+KL+2*mf; D: d");
    }
}
