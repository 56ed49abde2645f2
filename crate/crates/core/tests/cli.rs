use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cpg::experiment::{self, Summary};

const TINY: &str = r#"
method = "cpg"
seeds = [0, 1]

[dataset]
num_classes = 3
n_max = 20
m_max = 60
gamma_l = 4.0
gamma_u = 4.0
labeled_shape = "long_tailed"
unlabeled_shape = "arbitrary"
feature_dim = 4
test_per_class = 10

[train]
warmup_epochs = 1
total_epochs = 3
steps_per_epoch = 4
tau = 0.5

[train.model]
hidden_dims = [8]
"#;

fn cpg(args: &[&str], root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cpg"));
    cmd.args(args).env_remove(experiment::OUTPUT_ROOT_ENV);
    if let Some(root) = root {
        cmd.env(experiment::OUTPUT_ROOT_ENV, root);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_outputs_and_prints_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    let o = cpg(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--emit-plot-data"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["summary.json", "resolved_config.toml", "plot_data.csv", "timings.json", "seed_0/metrics.jsonl", "seed_1/registry.json"] {
        assert!(out.join(f).exists(), "{f}");
        assert!(stdout(&o).contains(out.join(f).to_str().unwrap()), "{f} not printed");
    }
    let summary = Summary::load(&out).unwrap();
    assert_eq!(summary.seeds, vec![0, 1]);
    let line = fs::read_to_string(out.join("seed_0/metrics.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    for key in ["epoch", "acc", "macro_f1", "per_class_acc", "err_rate", "util_rate", "kl", "O_t", "eps_t", "loss_total"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let plot = fs::read_to_string(out.join("plot_data.csv")).unwrap();
    assert!(plot.starts_with("method,seed,epoch,metric,value\n"));
}

#[test]
fn missing_field_exits_2_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &TINY.replace("num_classes = 3\n", ""));
    let o = cpg(&["run", "--config", &cfg], Some(tmp.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("num_classes"), "{}", stderr(&o));
}

#[test]
fn unknown_method_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let o = cpg(&["run", "--config", &cfg, "--method", "fixmatch"], Some(tmp.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("method"));
}

#[test]
fn divergence_exits_3_naming_seed_and_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{TINY}\n[train.optimizer]\nbase_lr = 1e200\nmomentum = 0.0\n");
    let cfg = write_config(tmp.path(), &text);
    let o = cpg(&["run", "--config", &cfg, "--seeds", "4"], Some(tmp.path()));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("seed 4") && err.contains("epoch 1"), "{err}");
}

#[test]
fn output_root_override_and_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("out_dir = \"nested/run\"\n{TINY}"));
    let o = cpg(&["run", "--config", &cfg, "--seeds", "3", "--method", "supervised_la"], Some(tmp.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = tmp.path().join("nested/run");
    let summary = Summary::load(&dir).unwrap();
    assert_eq!(summary.seeds, vec![3]);
    assert_eq!(summary.method, cpg::trainer::Method::SupervisedLa);
    assert!(dir.join("seed_3/metrics.jsonl").exists());
    assert!(!dir.join("seed_3/registry.json").exists());
}

#[test]
fn compare_contracts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let two = tmp.path().join("two");
    let one = tmp.path().join("one");
    assert!(cpg(&["run", "--config", &cfg, "--out", two.to_str().unwrap()], None).status.success());
    assert!(cpg(&["run", "--config", &cfg, "--out", one.to_str().unwrap(), "--seeds", "0"], None).status.success());

    let same = cpg(&["compare", two.to_str().unwrap(), two.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()], None);
    assert!(same.status.success(), "{}", stderr(&same));
    let text = stdout(&same);
    assert!(text.contains("accuracy") && !text.contains("Win") && !text.contains("Loss"), "{text}");
    assert!(tmp.path().join("comparison.json").exists());

    let mismatched = cpg(&["compare", two.to_str().unwrap(), one.to_str().unwrap()], None);
    assert!(!mismatched.status.success());
    assert!(stderr(&mismatched).contains("seed counts differ"));

    let single = cpg(&["compare", one.to_str().unwrap(), one.to_str().unwrap()], None);
    assert!(!single.status.success());
    assert!(stderr(&single).contains("variance is undefined"));
}

#[test]
fn ablate_emits_five_rows_and_none_matches_supervised_la() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("ablation");
    let o = cpg(&["ablate", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "row,consistent,inverse,arbitrary,average");
    assert_eq!(lines.len(), 6);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 5));
    let rows: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["none", "AB", "AB+CAA", "AB+CSOC", "AB+CSOC+CAA"]);

    let matrix: experiment::AblationMatrix =
        serde_json::from_str(&fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    let la = tmp.path().join("la");
    let o = cpg(&["run", "--config", &cfg, "--method", "supervised_la", "--out", la.to_str().unwrap()], None);
    assert!(o.status.success());
    // arbitrary is the config's own scenario
    let la_acc = &Summary::load(&la).unwrap().metrics["accuracy"].values;
    assert_eq!(&matrix.row("none").unwrap().values[2], la_acc);
}

#[test]
fn gen_data_and_inspect() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let data = tmp.path().join("data");
    let o = cpg(&["gen-data", "--config", &cfg, "--out", data.to_str().unwrap(), "--seeds", "7"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["labeled.csv", "unlabeled.csv", "test.csv", "split.json"] {
        assert!(data.join("seed_7").join(f).exists(), "{f}");
    }
    let loaded = cpg::data::SplitBundle::load(&data.join("seed_7")).unwrap();
    assert_eq!(loaded.spec.seed, 7);

    let run = tmp.path().join("run");
    assert!(cpg(&["run", "--config", &cfg, "--out", run.to_str().unwrap(), "--seeds", "0"], None).status.success());
    let o = cpg(&["inspect", run.join("seed_0/registry.json").to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("class  resolved  votes"));
}
