//! Versioned on-disk containers for datasets and parameter checkpoints.
//!
//! Layout: 8 magic bytes, a little-endian `u64` header length, a JSON header
//! and a payload of little-endian `f64` arrays described by the header.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use autograd::{ParamSet, Tensor};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dataset::{BearingLifecycle, NormStats, SyntheticSpec, CHANNELS};
use crate::error::{io_err, Error, Result};
use crate::metrics::FeatureExtractor;
use crate::nets::{build_model, ModelBundle, NetConfig, Part, SnapshotClassifier, Variant};
use crate::rulpred::{build_predictor, Predictor, PredictorSpec};
use crate::trainer::InitialGenerator;

pub const MAGIC: &[u8; 8] = b"CVGANCT\0";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    kind: String,
    meta: Value,
    arrays: Vec<ArrayEntry>,
}

/// Typed metadata plus named arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Value,
    pub arrays: BTreeMap<String, Tensor>,
}

impl Container {
    pub fn new(kind: &str, meta: &impl Serialize) -> Result<Self> {
        let meta = serde_json::to_value(meta).map_err(|e| Error::Container(e.to_string()))?;
        Ok(Self { kind: kind.into(), meta, arrays: BTreeMap::new() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut arrays = Vec::with_capacity(self.arrays.len());
        let mut offset = 0;
        for (name, t) in &self.arrays {
            arrays.push(ArrayEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
            offset += t.len();
        }
        let header = Header { schema_version: SCHEMA_VERSION, kind: self.kind.clone(), meta: self.meta.clone(), arrays };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.arrays.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Container(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a container (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::Container(format!("header: {e}")))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::Container(format!(
                "schema version {} (supported: {SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        let payload = &bytes[16 + hlen..];
        if payload.len() % 8 != 0 {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let n_values = payload.len() / 8;
        let mut arrays = BTreeMap::new();
        for a in header.arrays {
            let len: usize = a.shape.iter().product();
            if a.offset + len > n_values {
                return Err(Error::Container(format!("array {} overruns the payload", a.name)));
            }
            let data = payload[a.offset * 8..(a.offset + len) * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.insert(a.name, Tensor::new(a.shape, data)?);
        }
        Ok(Self { kind: header.kind, meta: header.meta, arrays })
    }

    /// Hex SHA-256 of the serialized bytes.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingData(format!("{} does not exist", path.display())));
        }
        Self::from_bytes(&fs::read(path).map_err(io_err(path))?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Container(format!("expected a {kind} container, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn meta<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.meta.clone()).map_err(|e| Error::Container(format!("{} metadata: {e}", self.kind)))
    }

    fn take(&mut self, name: &str) -> Result<Tensor> {
        self.arrays.remove(name).ok_or_else(|| Error::Container(format!("missing array {name}")))
    }

    fn put_set(&mut self, prefix: &str, set: &ParamSet) {
        for e in set.entries() {
            self.arrays.insert(format!("{prefix}/{}", e.name), e.value.clone());
        }
    }

    /// Fill `set` from arrays under `prefix`; every name and shape must match.
    fn take_set(&mut self, prefix: &str, set: &mut ParamSet) -> Result<()> {
        let names: Vec<String> = set.entries().iter().map(|e| e.name.clone()).collect();
        for name in names {
            let t = self.take(&format!("{prefix}/{name}"))?;
            let id = set.index_of(&name).expect("listed");
            if set.get(id).shape() != t.shape() {
                return Err(Error::Container(format!(
                    "{prefix}/{name}: stored shape {:?}, model expects {:?}",
                    t.shape(),
                    set.get(id).shape()
                )));
            }
            *set.get_mut(id) = t;
        }
        Ok(())
    }

    fn ensure_consumed(&self) -> Result<()> {
        match self.arrays.keys().next() {
            Some(k) => Err(Error::Container(format!("unexpected array {k}"))),
            None => Ok(()),
        }
    }
}

/// Where a lifecycle came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataProvenance {
    Recording { path: String },
    Synthetic { spec: SyntheticSpec },
    Generated { checkpoint: String, seed: u64, stream: u64, length: usize, fpt_step: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub lifecycle: BearingLifecycle,
    pub synthetic: bool,
    pub provenance: DataProvenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordMeta {
    bearing_id: String,
    fpt_index: usize,
    hi_class: Vec<usize>,
    norm_stats: NormStats,
    n_feature: usize,
    synthetic: bool,
    provenance: DataProvenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetMeta {
    k: Option<usize>,
    records: Vec<RecordMeta>,
}

pub fn dataset_container(records: &[DatasetRecord], k: Option<usize>) -> Result<Container> {
    let meta = DatasetMeta {
        k,
        records: records
            .iter()
            .map(|r| RecordMeta {
                bearing_id: r.lifecycle.bearing_id.clone(),
                fpt_index: r.lifecycle.fpt_index,
                hi_class: r.lifecycle.hi_class.clone(),
                norm_stats: r.lifecycle.norm_stats,
                n_feature: r.lifecycle.n_feature,
                synthetic: r.synthetic,
                provenance: r.provenance.clone(),
            })
            .collect(),
    };
    let mut c = Container::new("dataset", &meta)?;
    for (i, r) in records.iter().enumerate() {
        let lc = &r.lifecycle;
        lc.validate()?;
        let series = lc.series.concat();
        c.arrays.insert(format!("{i:04}/series"), Tensor::new(vec![lc.len(), CHANNELS * lc.n_feature], series)?);
        c.arrays.insert(format!("{i:04}/hi"), Tensor::new(vec![lc.len()], lc.hi.clone())?);
    }
    Ok(c)
}

/// Records and the window length they were prepared for.
pub fn read_dataset(mut c: Container) -> Result<(Vec<DatasetRecord>, Option<usize>)> {
    c.expect_kind("dataset")?;
    let meta: DatasetMeta = c.meta()?;
    let mut out = Vec::with_capacity(meta.records.len());
    for (i, m) in meta.records.into_iter().enumerate() {
        let series = c.take(&format!("{i:04}/series"))?;
        let hi = c.take(&format!("{i:04}/hi"))?;
        let width = series.shape().get(1).copied().unwrap_or(0);
        if width != CHANNELS * m.n_feature {
            return Err(Error::Container(format!("{}: rows of {width} values", m.bearing_id)));
        }
        let lifecycle = BearingLifecycle {
            bearing_id: m.bearing_id,
            series: series.data().chunks(width).map(<[f64]>::to_vec).collect(),
            fpt_index: m.fpt_index,
            hi: hi.into_data(),
            hi_class: m.hi_class,
            norm_stats: m.norm_stats,
            n_feature: m.n_feature,
        };
        lifecycle.validate()?;
        out.push(DatasetRecord { lifecycle, synthetic: m.synthetic, provenance: m.provenance });
    }
    c.ensure_consumed()?;
    Ok((out, meta.k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub variant: Variant,
    pub cfg: NetConfig,
    pub init_seed: u64,
    /// Seeds of every run that produced these parameters, oldest first.
    pub seed_lineage: Vec<u64>,
}

fn part_prefix(p: Part) -> &'static str {
    match p {
        Part::Encoder => "encoder",
        Part::Generator => "generator",
        Part::Discriminator => "discriminator",
        Part::Classifier => "classifier",
    }
}

pub fn checkpoint_container(model: &ModelBundle, seed_lineage: &[u64]) -> Result<Container> {
    let meta = CheckpointMeta {
        variant: model.variant,
        cfg: model.cfg,
        init_seed: model.init_seed,
        seed_lineage: seed_lineage.to_vec(),
    };
    let mut c = Container::new("checkpoint", &meta)?;
    for p in model.parts() {
        c.put_set(part_prefix(p), model.params(p).expect("part"));
    }
    Ok(c)
}

/// Rebuild the model. With `expected`, any hyperparameter difference is an error.
pub fn read_checkpoint(mut c: Container, expected: Option<&NetConfig>) -> Result<(ModelBundle, CheckpointMeta)> {
    c.expect_kind("checkpoint")?;
    let meta: CheckpointMeta = c.meta()?;
    if let Some(e) = expected {
        if *e != meta.cfg {
            return Err(Error::Container(format!("checkpoint hyperparameters {:?} differ from {:?}", meta.cfg, e)));
        }
    }
    let mut model = build_model(meta.variant, meta.cfg, meta.init_seed)?;
    for p in model.parts() {
        c.take_set(part_prefix(p), model.params_mut(p).expect("part"))?;
    }
    c.ensure_consumed()?;
    Ok((model, meta))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InitMeta {
    k: usize,
    trained_epochs: usize,
    checkpoint: CheckpointMeta,
}

pub fn initial_generator_container(init: &InitialGenerator, seed_lineage: &[u64]) -> Result<Container> {
    let inner = checkpoint_container(&init.model, seed_lineage)?;
    let meta = InitMeta { k: init.k, trained_epochs: init.trained_epochs, checkpoint: inner.meta()? };
    let mut c = Container::new("initial_generator", &meta)?;
    c.arrays = inner.arrays;
    Ok(c)
}

pub fn read_initial_generator(c: Container) -> Result<InitialGenerator> {
    c.expect_kind("initial_generator")?;
    let meta: InitMeta = c.meta()?;
    let inner = Container { kind: "checkpoint".into(), meta: serde_json::to_value(&meta.checkpoint).expect("meta"), arrays: c.arrays };
    let (model, _) = read_checkpoint(inner, None)?;
    Ok(InitialGenerator { model, k: meta.k, trained_epochs: meta.trained_epochs })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExtractorMeta {
    n_feature: usize,
    trained_epochs: usize,
}

pub fn extractor_container(e: &FeatureExtractor) -> Result<Container> {
    let mut c = Container::new("feature_extractor", &ExtractorMeta { n_feature: e.n_feature(), trained_epochs: e.trained_epochs })?;
    c.put_set("classifier", &e.classifier.net.params);
    Ok(c)
}

pub fn read_extractor(mut c: Container) -> Result<FeatureExtractor> {
    c.expect_kind("feature_extractor")?;
    let meta: ExtractorMeta = c.meta()?;
    let mut classifier = SnapshotClassifier::new(meta.n_feature, 0)?;
    c.take_set("classifier", &mut classifier.net.params)?;
    c.ensure_consumed()?;
    Ok(FeatureExtractor { classifier, trained_epochs: meta.trained_epochs })
}

pub fn predictor_container(p: &Predictor) -> Result<Container> {
    let mut c = Container::new("predictor", &p.spec)?;
    c.put_set("predictor", &p.params);
    Ok(c)
}

pub fn read_predictor(mut c: Container) -> Result<Predictor> {
    c.expect_kind("predictor")?;
    let spec: PredictorSpec = c.meta()?;
    let mut p = build_predictor(spec, 0)?;
    c.take_set("predictor", &mut p.params)?;
    c.ensure_consumed()?;
    Ok(p)
}
