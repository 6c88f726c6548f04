use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SYNTHETIC: &str = r#"
[dataset]
k = 15
n_feature = 64
[[dataset.synthetic]]
bearing_id = "syn_a"
n = 100
fpt_index = 40
base_mean = [0.3, 0.6]
noise_scale = 0.2
growth_exponent = 1.5
seed = 1
"#;

const PIPELINE: &str = r#"
[dataset]
k = 3
n_feature = 64
[[dataset.synthetic]]
bearing_id = "syn_a"
n = 40
fpt_index = 15
base_mean = [0.3, 0.6]
noise_scale = 0.2
growth_exponent = 1.5
seed = 1
[[dataset.synthetic]]
bearing_id = "syn_b"
n = 36
fpt_index = 12
base_mean = [0.4, 0.5]
noise_scale = 0.2
growth_exponent = 2.0
seed = 2
[[dataset.synthetic]]
bearing_id = "syn_c"
n = 44
fpt_index = 20
base_mean = [0.35, 0.55]
noise_scale = 0.2
growth_exponent = 1.0
seed = 3
[model]
variant = "CVGAN"
[train]
epochs = 1
batch_size = 32
[generate]
length = 1000
fpt_step = 300
[evaluate]
extractor_epochs = 1
[rul]
test = "syn_a"
seeds = [15]
[rul.predictor]
epochs = 1
batch_size = 64
"#;

fn cvgan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvgan")).current_dir(dir).args(args).output().expect("spawn cvgan")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "stdout:\n{}\nstderr:\n{}", stdout(&o), stderr(&o));
    o
}

fn run_dir(o: &Output) -> PathBuf {
    let s = stdout(o);
    let line = s.lines().rev().find_map(|l| l.strip_prefix("run directory: ")).expect("run directory line");
    PathBuf::from(line)
}

fn setup(config: &str) -> TempDir {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("run.toml"), config).unwrap();
    tmp
}

fn tsv_value(table: &str, row: usize, column: &str) -> String {
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let i = header.iter().position(|c| *c == column).unwrap();
    lines.nth(row).unwrap().split('\t').nth(i).unwrap().to_string()
}

#[test]
fn prepare_reports_windows_and_is_byte_identical() {
    let tmp = setup(SYNTHETIC);
    let first = ok(cvgan(tmp.path(), &["prepare", "--config", "run.toml"]));
    assert!(stdout(&first).contains("syn_a\t100\t40\t85"), "{}", stdout(&first));
    let dir = tmp.path().join(run_dir(&first));
    let bytes = fs::read(dir.join("dataset.cvg")).unwrap();
    let second = ok(cvgan(tmp.path(), &["prepare", "--config", "run.toml"]));
    assert_eq!(run_dir(&first), run_dir(&second));
    assert_eq!(fs::read(dir.join("dataset.cvg")).unwrap(), bytes);
    let manifest = fs::read_to_string(dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("bearing_id = \\\"syn_a\\\""), "config text is echoed");
}

#[test]
fn missing_data_path_is_named() {
    let tmp = setup("[dataset]\npath = \"no/such/root\"\nbearings = [\"Bearing1_1\"]\n");
    let o = cvgan(tmp.path(), &["prepare", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error kind=data code=3 reason="), "{err}");
    assert!(err.contains("no/such/root/Bearing1_1"), "{err}");
}

#[test]
fn config_errors_have_their_own_exit_code() {
    let tmp = setup("[train]\nepochz = 3\n");
    let o = cvgan(tmp.path(), &["prepare", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kind=config"));
    let o = cvgan(tmp.path(), &["prepare", "--config", "missing.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.toml"));
}

#[test]
fn evaluating_a_dataset_against_itself_scores_zero() {
    let tmp = setup(SYNTHETIC);
    let prep = ok(cvgan(tmp.path(), &["prepare", "--config", "run.toml"]));
    let container = tmp.path().join(run_dir(&prep)).join("dataset.cvg");
    let config = format!(
        "{SYNTHETIC}\n[evaluate]\nextractor_epochs = 1\ngenerated = {:?}\n",
        container.display().to_string()
    );
    fs::write(tmp.path().join("run.toml"), config).unwrap();
    let o = ok(cvgan(tmp.path(), &["evaluate", "--config", "run.toml"]));
    let table = fs::read_to_string(tmp.path().join(run_dir(&o)).join("report.tsv")).unwrap();
    for col in ["horizontal_mmd", "vertical_mmd"] {
        assert_eq!(tsv_value(&table, 0, col).parse::<f64>().unwrap().abs(), 0.0, "{col}");
    }
    assert!(tsv_value(&table, 0, "fid").parse::<f64>().unwrap().abs() <= 1e-6);
}

#[test]
fn report_refuses_mismatched_projectors() {
    let tmp = TempDir::new().unwrap();
    let mk = |name: &str, projector: &str| {
        let d = tmp.path().join(name);
        fs::create_dir_all(&d).unwrap();
        let manifest = format!("{{\"command\":\"evaluate\",\"details\":{{\"projector\":\"{projector}\"}}}}");
        fs::write(d.join("manifest.json"), manifest).unwrap();
        fs::write(d.join("report.tsv"), format!("model\tmode\thorizontal_mmd\n{name}\tNAR\t0.1\n")).unwrap();
        d
    };
    let a = mk("a", "aaaa");
    let b = mk("b", "bbbb");
    let c = mk("c", "aaaa");
    let out = tmp.path().join("out");
    let o = cvgan(tmp.path(), &["report", "--out", out.to_str().unwrap(), a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(6));
    assert!(stderr(&o).contains("aaaa") && stderr(&o).contains("bbbb"), "{}", stderr(&o));

    let o = ok(cvgan(tmp.path(), &["report", "--out", out.to_str().unwrap(), a.to_str().unwrap()]));
    assert!(stdout(&o).contains("model\tmode\thorizontal_mmd\na\tNAR\t0.1\n"));
    let o = ok(cvgan(tmp.path(), &["report", "--out", out.to_str().unwrap(), a.to_str().unwrap(), c.to_str().unwrap()]));
    assert!(stdout(&o).contains("a\tNAR\t0.1\nc\tNAR\t0.1\n"));
}

#[test]
fn a_locked_run_directory_is_refused() {
    let tmp = setup(SYNTHETIC);
    let first = ok(cvgan(tmp.path(), &["prepare", "--config", "run.toml"]));
    let dir = tmp.path().join(run_dir(&first));
    fs::write(dir.join(".lock"), "").unwrap();
    let o = cvgan(tmp.path(), &["prepare", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn full_pipeline() {
    let tmp = setup(PIPELINE);
    let cfg = ["--config", "run.toml"];
    let train = ok(cvgan(tmp.path(), &[&["train"][..], &cfg].concat()));
    let train_dir = tmp.path().join(run_dir(&train));
    assert!(train_dir.file_name().unwrap().to_str().unwrap().starts_with("CVGAN_conf9_non_ar_s15-"));
    assert!(train_dir.join("loss_trace.tsv").exists());
    ok(cvgan(tmp.path(), &[&["train-init"][..], &cfg].concat()));

    let gen = ok(cvgan(tmp.path(), &[&["generate"][..], &cfg].concat()));
    let gen_dir = tmp.path().join(run_dir(&gen));
    let report = fs::read_to_string(gen_dir.join("report.tsv")).unwrap();
    assert_eq!(tsv_value(&report, 0, "steps"), "1000");
    assert_eq!(fs::read_to_string(gen_dir.join("rms_profile.tsv")).unwrap().lines().count(), 1001);

    let eval = ok(cvgan(tmp.path(), &[&["evaluate"][..], &cfg].concat()));
    let eval_dir = tmp.path().join(run_dir(&eval));
    let table = fs::read_to_string(eval_dir.join("report.tsv")).unwrap();
    assert_eq!(tsv_value(&table, 0, "mode"), "NAR");
    assert_eq!(tsv_value(&table, 1, "mode"), "AR");

    let real = ok(cvgan(tmp.path(), &[&["rul"][..], &cfg].concat()));
    fs::write(tmp.path().join("run.toml"), PIPELINE.replace("[rul]\n", "[rul]\naugmentation = \"checkpoint\"\n")).unwrap();
    let aug = ok(cvgan(tmp.path(), &[&["rul"][..], &cfg].concat()));
    let real_dir = tmp.path().join(run_dir(&real));
    let aug_dir = tmp.path().join(run_dir(&aug));
    let a = fs::read_to_string(real_dir.join("report.tsv")).unwrap();
    let b = fs::read_to_string(aug_dir.join("report.tsv")).unwrap();
    assert_eq!(tsv_value(&a, 0, "augmentation"), "none");
    assert_eq!(tsv_value(&b, 0, "augmentation"), "checkpoint");

    let merged = ok(cvgan(
        tmp.path(),
        &[
            "report",
            "--plot",
            real_dir.to_str().unwrap(),
            aug_dir.to_str().unwrap(),
            train_dir.to_str().unwrap(),
            gen_dir.to_str().unwrap(),
        ],
    ));
    let s = stdout(&merged);
    assert_eq!(s.matches("\tsyn_a\t").count(), 2, "{s}");
    assert!(s.contains("_loss.svg") && s.contains("_rms.svg"), "{s}");
}
