use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use cvgan::argen::{init_history, nar_generate, plan_hi_schedule, rms_profile, rollout};
use cvgan::container::{
    checkpoint_container, dataset_container, extractor_container, initial_generator_container, read_checkpoint,
    read_dataset, read_initial_generator, Container, DataProvenance, DatasetRecord,
};
use cvgan::dataset::{
    build_lifecycle, ingest_bearing, normalize, phm2012_schedule, synthesize_recording, BearingLifecycle, NormStats,
    WindowSet,
};
use cvgan::metrics::{train_feature_extractor, Evaluator, MetricReport};
use cvgan::nets::{build_model, Part};
use cvgan::rulpred::{augmentation_experiment, ExperimentPlan, ExperimentReport};
use cvgan::trainer::{train, train_initial_generator, RunManifest, TrainMode};
use cvgan::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{DatasetSection, EvalMode, Metric, RunConfig};
use crate::CliError;

/// Resolved configuration plus the text it was read from.
pub struct Invocation {
    pub config: RunConfig,
    pub text: String,
    pub out: PathBuf,
}

fn short_hash(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).expect("serialisable key");
    hex::encode(&Sha256::digest(&bytes)[..5])
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| Error::Io { path: path.into(), source })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io { path: path.into(), source })
}

/// Held while a command writes into its run directory.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> std::result::Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.into(), source })?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Busy(dir.into())),
            Err(source) => Err(Error::Io { path, source }.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

struct Run {
    dir: PathBuf,
    command: &'static str,
    outputs: BTreeMap<String, String>,
    _lock: RunLock,
}

impl Run {
    fn open(inv: &Invocation, command: &'static str, label: &str, key: &impl Serialize) -> std::result::Result<Self, CliError> {
        let dir = run_dir(inv, command, label, key);
        let lock = RunLock::acquire(&dir)?;
        Ok(Run { dir, command, outputs: BTreeMap::new(), _lock: lock })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn put(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        write(&path, contents)?;
        self.outputs.insert(name.into(), sha256_file(&path)?);
        Ok(())
    }

    fn put_container(&mut self, name: &str, c: &Container) -> Result<()> {
        self.put(name, c.to_bytes())
    }

    fn finish(self, inv: &Invocation, details: Value) -> Result<PathBuf> {
        let manifest = json!({
            "command": self.command,
            "config": inv.config,
            "config_text": inv.text,
            "outputs": self.outputs,
            "details": details,
        });
        write(&self.path("manifest.json"), serde_json::to_string_pretty(&manifest).expect("json") + "\n")?;
        println!("run directory: {}", self.dir.display());
        Ok(self.dir.clone())
    }
}

fn run_dir(inv: &Invocation, command: &str, label: &str, key: &impl Serialize) -> PathBuf {
    inv.out.join(command).join(format!("{label}-{}", short_hash(key)))
}

fn train_label(cfg: &RunConfig) -> Result<String> {
    Ok(format!("{}_{}_{}_s{}", cfg.model.variant.name(), cfg.loss.resolve()?.name, cfg.train.mode.name(), cfg.train.seed))
}

fn train_key(cfg: &RunConfig) -> Value {
    json!([cfg.dataset, cfg.model, cfg.loss, cfg.train])
}

fn init_label(cfg: &RunConfig) -> String {
    format!("init_k{}_s{}", cfg.dataset.k, cfg.train.seed)
}

fn init_plan(cfg: &RunConfig) -> cvgan::trainer::TrainPlan {
    cvgan::trainer::TrainPlan { mode: TrainMode::NonAr, ..cfg.train.clone() }
}

fn init_key(cfg: &RunConfig) -> Value {
    json!([cfg.dataset, init_plan(cfg)])
}

fn checkpoint_path(inv: &Invocation) -> Result<PathBuf> {
    let cfg = &inv.config;
    Ok(match &cfg.generate.checkpoint {
        Some(p) => p.clone(),
        None => run_dir(inv, "train", &train_label(cfg)?, &train_key(cfg)).join("checkpoint.cvg"),
    })
}

fn initial_path(inv: &Invocation) -> PathBuf {
    let cfg = &inv.config;
    match &cfg.generate.initial {
        Some(p) => p.clone(),
        None => run_dir(inv, "train-init", &init_label(cfg), &init_key(cfg)).join("initial.cvg"),
    }
}

fn generate_key(inv: &Invocation) -> Result<Value> {
    let cfg = &inv.config;
    Ok(json!([train_key(cfg), init_key(cfg), cfg.generate, checkpoint_path(inv)?, initial_path(inv)]))
}

fn generated_path(inv: &Invocation) -> Result<PathBuf> {
    Ok(run_dir(inv, "generate", &train_label(&inv.config)?, &generate_key(inv)?).join("generated.cvg"))
}

/// Lifecycles described by the dataset section, built in memory.
pub fn build_records(d: &DatasetSection) -> Result<Vec<DatasetRecord>> {
    if let Some(p) = &d.container {
        return Ok(read_dataset(Container::load(p)?)?.0);
    }
    if d.bearings.is_empty() && d.synthetic.is_empty() {
        return Err(Error::MissingData("dataset section names no bearings and no synthetic specs".into()));
    }
    let mut raw = Vec::new();
    let mut fpts = Vec::new();
    let mut sources = Vec::new();
    if !d.bearings.is_empty() {
        let root = d.path.as_ref().ok_or_else(|| Error::Config("dataset.bearings needs dataset.path".into()))?;
        for b in &d.bearings {
            let dir = root.join(b);
            raw.push(ingest_bearing(&dir, b)?);
            let fpt = d
                .fpt
                .get(b)
                .copied()
                .or_else(|| phm2012_schedule(b).map(|s| s.0))
                .ok_or_else(|| Error::Config(format!("no FPT known for {b}; set dataset.fpt.{b}")))?;
            fpts.push(fpt);
            sources.push(DataProvenance::Recording { path: dir.display().to_string() });
        }
    }
    for spec in &d.synthetic {
        raw.push(synthesize_recording(spec)?);
        fpts.push(spec.fpt_index);
        sources.push(DataProvenance::Synthetic { spec: spec.clone() });
    }
    let (scaled, stats) = if d.normalize { normalize(&raw)? } else { (raw, NormStats::identity()) };
    scaled
        .iter()
        .zip(fpts)
        .zip(sources)
        .map(|((rec, fpt), provenance)| {
            let lifecycle = build_lifecycle(rec, fpt, d.hi_mode, d.n_feature, stats)?;
            let synthetic = matches!(provenance, DataProvenance::Synthetic { .. });
            Ok(DatasetRecord { lifecycle, synthetic, provenance })
        })
        .collect()
}

fn lifecycles(d: &DatasetSection) -> Result<Vec<BearingLifecycle>> {
    Ok(build_records(d)?.into_iter().map(|r| r.lifecycle).collect())
}

pub fn prepare(inv: &Invocation) -> std::result::Result<PathBuf, CliError> {
    let d = &inv.config.dataset;
    let records = build_records(d)?;
    let mut report = String::from("bearing\tsnapshots\tfpt_index\twindows\n");
    let mut total = 0;
    for r in &records {
        let n = r.lifecycle.len();
        let w = n.saturating_sub(d.k);
        total += w;
        writeln!(report, "{}\t{n}\t{}\t{w}", r.lifecycle.bearing_id, r.lifecycle.fpt_index).unwrap();
    }
    writeln!(report, "total\t{}\t\t{total}", records.iter().map(|r| r.lifecycle.len()).sum::<usize>()).unwrap();
    WindowSet::new(records.iter().map(|r| r.lifecycle.clone()).collect(), d.k)?;
    let container = dataset_container(&records, Some(d.k))?;
    let mut run = Run::open(inv, "prepare", "dataset", &json!([d]))?;
    run.put_container("dataset.cvg", &container)?;
    run.put("report.tsv", &report)?;
    print!("{report}");
    println!("dataset digest: {}", container.digest());
    Ok(run.finish(inv, json!({ "windows": total, "digest": container.digest() }))?)
}

fn train_outputs(run: &mut Run, manifest: &RunManifest) -> Result<()> {
    let mut stable = manifest.clone();
    stable.wall_clock_s = 0.0;
    run.put("train_manifest.json", serde_json::to_string_pretty(&stable).expect("json") + "\n")?;
    run.put("loss_trace.tsv", manifest.loss_trace_tsv())?;
    write(&run.path("timing.json"), json!({ "wall_clock_s": manifest.wall_clock_s }).to_string())
}

pub fn train_cmd(inv: &Invocation) -> std::result::Result<PathBuf, CliError> {
    let cfg = &inv.config;
    cfg.train.validate()?;
    let loss = cfg.loss.resolve()?;
    let windows = WindowSet::new(lifecycles(&cfg.dataset)?, cfg.dataset.k)?;
    let net = cfg.model.net_config(cfg.dataset.k, cfg.dataset.n_feature);
    let (model, mut lineage) = match &cfg.model.resume {
        Some(p) => {
            let (m, meta) = read_checkpoint(Container::load(p)?, Some(&net))?;
            (m, meta.seed_lineage)
        }
        None => (build_model(cfg.model.variant, net, cfg.train.seed)?, Vec::new()),
    };
    lineage.push(cfg.train.seed);
    let mut run = Run::open(inv, "train", &train_label(cfg)?, &train_key(cfg))?;
    match train(model, &windows, &loss, &cfg.train) {
        Ok((model, manifest)) => {
            train_outputs(&mut run, &manifest)?;
            run.put_container("checkpoint.cvg", &checkpoint_container(&model, &lineage)?)?;
            let fingerprints: BTreeMap<String, String> = model
                .parts()
                .into_iter()
                .filter_map(|p| model.fingerprint(p).map(|f| (format!("{p:?}"), format!("{f:016x}"))))
                .collect();
            println!(
                "trained {} epochs, best epoch {:?}, best validation loss {:?}",
                manifest.epochs.len(),
                manifest.best_epoch,
                manifest.best_val_loss
            );
            Ok(run.finish(inv, json!({ "status": manifest.status, "parameters": fingerprints }))?)
        }
        Err(f) => {
            train_outputs(&mut run, &f.manifest)?;
            run.finish(inv, json!({ "status": f.manifest.status, "error": f.error.to_string() }))?;
            Err(f.error.into())
        }
    }
}

pub fn train_init(inv: &Invocation) -> std::result::Result<PathBuf, CliError> {
    let cfg = &inv.config;
    let plan = init_plan(cfg);
    plan.validate()?;
    let lcs = lifecycles(&cfg.dataset)?;
    let mut run = Run::open(inv, "train-init", &init_label(cfg), &init_key(cfg))?;
    match train_initial_generator(&lcs, cfg.dataset.k, &plan) {
        Ok((init, manifest)) => {
            train_outputs(&mut run, &manifest)?;
            run.put_container("initial.cvg", &initial_generator_container(&init, &[plan.seed])?)?;
            println!("initial generator trained for {} epochs", init.trained_epochs);
            Ok(run.finish(inv, json!({ "status": manifest.status, "trained_epochs": init.trained_epochs }))?)
        }
        Err(f) => {
            train_outputs(&mut run, &f.manifest)?;
            run.finish(inv, json!({ "status": f.manifest.status, "error": f.error.to_string() }))?;
            Err(f.error.into())
        }
    }
}

pub fn generate(inv: &Invocation) -> std::result::Result<PathBuf, CliError> {
    let cfg = &inv.config;
    let g = &cfg.generate;
    if g.seeds.is_empty() || g.lifecycles == 0 {
        return Err(Error::Config("generate needs at least one seed and one lifecycle".into()).into());
    }
    let schedule = plan_hi_schedule(g.length, g.fpt_step)?;
    let ckpt = checkpoint_path(inv)?;
    let (model, _) = read_checkpoint(Container::load(&ckpt)?, None)?;
    let init = read_initial_generator(Container::load(&initial_path(inv))?)?;
    if init.k != model.cfg.k || init.model.cfg.n_feature != model.cfg.n_feature {
        return Err(Error::Contract(format!(
            "initial generator shape (k {}, n_feature {}) does not match the model (k {}, n_feature {})",
            init.k, init.model.cfg.n_feature, model.cfg.k, model.cfg.n_feature
        ))
        .into());
    }
    let mut records = Vec::new();
    let mut rms = String::from("seed\tstream\tstep\thi\trms_h\trms_v\n");
    let mut report = String::from("bearing\tseed\tstream\tsteps\tfpt_step\n");
    for &seed in &g.seeds {
        for stream in 0..g.lifecycles as u64 {
            let mut buf = init_history(&init, seed ^ stream)?;
            let out = rollout(&model, &mut buf, &schedule, seed, stream)?;
            let id = format!("generated_s{seed}_{stream}");
            for (t, r) in rms_profile(&out.series).iter().enumerate() {
                writeln!(rms, "{seed}\t{stream}\t{t}\t{}\t{}\t{}", schedule.hi[t], r[0], r[1]).unwrap();
            }
            writeln!(report, "{id}\t{seed}\t{stream}\t{}\t{}", out.series.len(), schedule.fpt_step).unwrap();
            records.push(DatasetRecord {
                lifecycle: out.to_lifecycle(&id, model.cfg.n_feature)?,
                synthetic: true,
                provenance: DataProvenance::Generated {
                    checkpoint: out.provenance.checkpoint.clone(),
                    seed,
                    stream,
                    length: g.length,
                    fpt_step: g.fpt_step,
                },
            });
        }
    }
    let mut run = Run::open(inv, "generate", &train_label(cfg)?, &generate_key(inv)?)?;
    run.put_container("generated.cvg", &dataset_container(&records, Some(model.cfg.k))?)?;
    run.put("rms_profile.tsv", &rms)?;
    run.put("report.tsv", &report)?;
    print!("{report}");
    Ok(run.finish(inv, json!({ "checkpoint": ckpt, "checkpoint_sha256": sha256_file(&ckpt)? }))?)
}

pub const EVAL_HEADER: &str =
    "model\tmode\thorizontal_mmd\tvertical_mmd\tfid\tmad_h\tmad_v\tpsnr\tn_generated\tn_real\tprojector\textractor";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |v| v.to_string())
}

fn eval_row(model: &str, mode: &str, r: &MetricReport) -> String {
    format!(
        "{model}\t{mode}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.horizontal_mmd,
        r.vertical_mmd,
        cell(r.fid),
        cell(r.mad_h),
        cell(r.mad_v),
        cell(r.psnr),
        r.n_generated,
        r.n_real,
        r.provenance.projector,
        r.provenance.extractor.as_deref().unwrap_or("none")
    )
}

fn all_rows(lcs: &[BearingLifecycle]) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rows = Vec::new();
    let mut normal = Vec::new();
    for lc in lcs {
        for (t, r) in lc.series.iter().enumerate() {
            rows.push(r.clone());
            normal.push(t <= lc.fpt_index);
        }
    }
    (rows, normal)
}

fn keep(mut r: MetricReport, metrics: &[Metric]) -> MetricReport {
    if !metrics.contains(&Metric::Mad) {
        r.mad_h = None;
        r.mad_v = None;
    }
    if !metrics.contains(&Metric::Psnr) {
        r.psnr = None;
        r.max_i = None;
    }
    r
}

pub fn evaluate(inv: &Invocation) -> std::result::Result<PathBuf, CliError> {
    let cfg = &inv.config;
    let e = &cfg.evaluate;
    let real_lcs = lifecycles(&cfg.dataset)?;
    let windows = WindowSet::new(real_lcs.clone(), cfg.dataset.k)?;
    let window_rows: Vec<Vec<f64>> = (0..windows.len()).map(|i| windows.sample(i).x).collect();
    let (real_rows, normal) = all_rows(&real_lcs);
    let extractor = if e.metrics.contains(&Metric::Fid) {
        Some(train_feature_extractor(&real_lcs, e.extractor_epochs, e.extractor_batch, e.extractor_lr, cfg.train.seed)?)
    } else {
        None
    };
    let mut evaluator = Evaluator::fit(&window_rows, e.pca_dims.min(cfg.dataset.n_feature), extractor)?;
    evaluator.bandwidth = e.bandwidth;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let key;
    let label;
    if let Some(path) = &e.generated {
        let (gen, _) = read_dataset(Container::load(path)?)?;
        let gen_lcs: Vec<_> = gen.into_iter().map(|r| r.lifecycle).collect();
        let (gen_rows, _) = all_rows(&gen_lcs);
        let r = keep(evaluator.report(&gen_rows, &real_rows, Some(&normal))?, &e.metrics);
        rows.push(eval_row("dataset", "dataset", &r));
        reports.push(json!({ "model": "dataset", "mode": "dataset", "report": r }));
        key = json!([cfg.dataset, e, sha256_file(path)?]);
        label = "dataset".to_string();
    } else {
        let ckpt = checkpoint_path(inv)?;
        let (model, _) = read_checkpoint(Container::load(&ckpt)?, None)?;
        let name = model.variant.name();
        for mode in &e.modes {
            let (tag, r) = match mode {
                EvalMode::Nar => {
                    let gen = nar_generate(&model, &windows, cfg.train.seed, 256)?;
                    ("NAR", evaluator.report(&gen, &window_rows, None)?)
                }
                EvalMode::Ar => {
                    let (gen, _) = read_dataset(Container::load(&generated_path(inv)?)?)?;
                    let gen_lcs: Vec<_> = gen.into_iter().map(|r| r.lifecycle).collect();
                    ("AR", evaluator.report(&all_rows(&gen_lcs).0, &real_rows, None)?)
                }
            };
            let mut r = keep(r, &e.metrics);
            r.provenance.generator = Some(format!("{:016x}", model.fingerprint(Part::Generator).unwrap_or(0)));
            rows.push(eval_row(name, tag, &r));
            reports.push(json!({ "model": name, "mode": tag, "report": r }));
        }
        key = json!([generate_key(inv)?, e, sha256_file(&ckpt)?]);
        label = train_label(cfg)?;
    }
    let mut run = Run::open(inv, "evaluate", &label, &key)?;
    let table = format!("{EVAL_HEADER}\n{}\n", rows.join("\n"));
    run.put("report.tsv", &table)?;
    run.put("report.json", serde_json::to_string_pretty(&reports).expect("json") + "\n")?;
    if let Some(x) = &evaluator.extractor {
        run.put_container("extractor.cvg", &extractor_container(x)?)?;
    }
    print!("{table}");
    Ok(run.finish(inv, json!({ "projector": evaluator.fingerprint() }))?)
}

pub fn rul(inv: &Invocation) -> std::result::Result<PathBuf, CliError> {
    let cfg = &inv.config;
    let r = &cfg.rul;
    let lcs = lifecycles(&cfg.dataset)?;
    let test_id = r.test.clone().or_else(|| lcs.first().map(|l| l.bearing_id.clone())).unwrap_or_default();
    let test = lcs
        .iter()
        .find(|l| l.bearing_id == test_id)
        .cloned()
        .ok_or_else(|| Error::MissingData(format!("test bearing {test_id} is not in the dataset")))?;
    let train: Vec<BearingLifecycle> = if r.train.is_empty() {
        lcs.iter().filter(|l| l.bearing_id != test_id).cloned().collect()
    } else {
        r.train
            .iter()
            .map(|id| {
                lcs.iter()
                    .find(|l| &l.bearing_id == id)
                    .cloned()
                    .ok_or_else(|| Error::MissingData(format!("training bearing {id} is not in the dataset")))
            })
            .collect::<Result<_>>()?
    };
    let (augmentation, source) = match r.augmentation.as_str() {
        "none" => (None, None),
        "checkpoint" => (Some("checkpoint".to_string()), Some(generated_path(inv)?)),
        p => (Some(p.to_string()), Some(PathBuf::from(p))),
    };
    let generated = match &source {
        Some(p) => read_dataset(Container::load(p)?)?.0.into_iter().map(|r| r.lifecycle).collect(),
        None => Vec::new(),
    };
    let source_digest = source.as_deref().map(sha256_file).transpose()?;
    let plan = ExperimentPlan {
        test,
        train,
        augmentation,
        generated,
        kind: r.kind,
        k: cfg.dataset.k,
        seeds: r.seeds.clone(),
        predictor: r.predictor.clone(),
    };
    let report = augmentation_experiment(&plan)?;
    let label = format!("{}_{}_{}", r.kind, report.test_bearing, if source.is_some() { "augmented" } else { "real" });
    let mut run = Run::open(inv, "rul", &label, &json!([cfg.dataset, r, source_digest]))?;
    let table = format!("{}\n{}\n", ExperimentReport::TSV_HEADER, report.tsv_row());
    run.put("report.tsv", &table)?;
    run.put("report.json", serde_json::to_string_pretty(&report).expect("json") + "\n")?;
    print!("{table}");
    let failures: Vec<String> = report.per_seed.failures.iter().map(|(s, e)| format!("seed {s}: {e}")).collect();
    Ok(run.finish(inv, json!({ "generated_sha256": source_digest, "failures": failures }))?)
}
