use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use feddrop::checkpoint::Checkpoint;
use feddrop::config::RunConfig;
use feddrop::metrics::CSV_COLUMNS;
use feddrop_core::data::{generate, Batch};
use feddrop_core::feddrop::make_table3_arch;
use feddrop_core::nn;
use feddrop_core::presets;
use serde_json::Value;
use tempfile::TempDir;

fn feddrop(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_feddrop"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("FEDDROP_THREADS", t);
    }
    cmd.output().expect("failed to launch feddrop")
}

fn run_ok(args: &[&str]) -> Output {
    let out = feddrop(args, None);
    assert!(out.status.success(), "feddrop {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_GEN: &str = r#"
[data.generator]
num_domains = 3
num_clients = 24
examples_per_client = 10
eval_examples_per_domain = 50
input_dim = 4
num_classes = 3
modes_per_class = 2
class_separation = 1.5
class_skew = 0.5
domain_shift = 2.0
seed = 5
"#;

fn train_config(rounds: usize, extra: &str) -> String {
    format!(
        r#"
experiment = "scratch"
target_error = 0.5
{extra}
[arch]
input_dim = 4
model_dim = 6
hidden_dim = 10
num_blocks = 2
num_classes = 3

[federated]
rounds = {rounds}
clients_per_round = 8
client_lr = 0.1
local_steps = 2
batch_size = 6
seed = 3
server_optimizer = {{ kind = "adam" }}
dropout = {{ rates = [0.3, 0.3], scheme = "pcpr", seed = 3 }}
{SMALL_GEN}"#
    )
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_data_counts_and_determinism() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "gen.toml", SMALL_GEN);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&["generate-data", "--config", s(&cfg), "--out", s(&a)]);
    run_ok(&["generate-data", "--config", s(&cfg), "--out", s(&b)]);
    let text = fs::read_to_string(a.join("dataset.data")).unwrap();
    assert_eq!(text, fs::read_to_string(b.join("dataset.data")).unwrap());
    assert_eq!(text.lines().filter(|l| l.starts_with("[eval domain=")).count(), 3);
    let client_records =
        text.lines().skip_while(|l| *l != "[clients]").skip(1).take_while(|l| !l.starts_with('[')).count();
    assert_eq!(client_records, 24 * 10);

    run_ok(&["generate-data", "--config", s(&cfg), "--out", s(&b), "--seed", "6"]);
    assert_ne!(text, fs::read_to_string(b.join("dataset.data")).unwrap());
}

#[test]
fn standard_dataset_has_expected_record_count() {
    let dir = TempDir::new().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/generate.toml");
    run_ok(&["generate-data", "--config", s(&cfg), "--out", s(dir.path())]);
    let text = fs::read_to_string(dir.path().join("dataset.data")).unwrap();
    let records = text.lines().filter(|l| !l.starts_with('#') && !l.starts_with('[')).count();
    assert_eq!(records, 300 * 32 + 3 * 2000);
}

#[test]
fn train_writes_csv_summary_and_checkpoint() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "train.toml", &train_config(2, ""));
    let out = dir.path().join("run");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&out)]);

    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    for (i, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 7);
        assert_eq!(fields[0], (i + 1).to_string());
        let err: f64 = fields[1].parse().unwrap();
        assert!((0.0..=1.0).contains(&err));
        let params: u64 = fields[4].parse().unwrap();
        assert_eq!(fields[5].parse::<u64>().unwrap(), 8 * 8 * params);
        assert_eq!(fields[5], fields[6]);
    }

    let summary = json(&out.join("summary.json"));
    for key in [
        "experiment",
        "arch",
        "rounds",
        "final_error",
        "best_error",
        "target_error",
        "rounds_to_target",
        "dropout",
        "size_reduction",
        "full_param_count",
        "client_param_count",
        "final_round_mappings",
    ] {
        assert!(summary.get(key).is_some(), "summary lacks {key}");
    }
    assert_eq!(summary["experiment"], "scratch");
    assert_eq!(summary["rounds"], 2);
    assert_eq!(summary["dropout"]["scheme"], "pcpr");
    let mappings = summary["final_round_mappings"].as_array().unwrap();
    assert_eq!(mappings.len(), 8);
    assert_eq!(mappings[0].as_array().unwrap().len(), 2);
    assert_eq!(mappings[0][0].as_array().unwrap().len(), 7);

    let ck = Checkpoint::read(&out.join("checkpoint.bin")).unwrap();
    assert_eq!(ck.arch.hidden_dim, 10);
    assert_ne!(ck.params, ck.init);
}

#[test]
fn reruns_and_thread_counts_give_identical_bytes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "train.toml", &train_config(3, ""));
    let runs = [("a", "1"), ("b", "1"), ("c", "4")];
    for (name, threads) in runs {
        let out = dir.path().join(name);
        let o = feddrop(&["train", "--config", s(&cfg), "--out", s(&out)], Some(threads));
        assert!(o.status.success());
    }
    for file in ["metrics.csv", "summary.json", "checkpoint.bin"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        for other in ["b", "c"] {
            assert_eq!(a, fs::read(dir.path().join(other).join(file)).unwrap(), "{file} differs in run {other}");
        }
    }
}

#[test]
fn out_dir_comes_from_config_relative_to_it() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "train.toml", &train_config(1, "out_dir = \"nested/run\"\n"));
    run_ok(&["train", "--config", s(&cfg)]);
    assert!(dir.path().join("nested/run/metrics.csv").exists());
}

#[test]
fn streaming_share_at_forty_percent_reports_22_percent() {
    let arch = make_table3_arch(0.55, 20_000).unwrap();
    let text = format!(
        r#"
[arch]
input_dim = {}
model_dim = {}
hidden_dim = {}
num_blocks = {}
num_classes = {}

[federated]
rounds = 1
clients_per_round = 2
client_lr = 0.05
local_steps = 1
batch_size = 4
seed = 1
server_optimizer = {{ kind = "sgd", lr = 1.0 }}
dropout = {{ rates = [0.4, 0.4], scheme = "pr", seed = 1 }}

[data.generator]
num_domains = 1
num_clients = 3
examples_per_client = 4
eval_examples_per_domain = 10
input_dim = {}
num_classes = 2
modes_per_class = 1
class_separation = 1.0
class_skew = 1.0
domain_shift = 0.0
seed = 2
"#,
        arch.input_dim, arch.model_dim, arch.hidden_dim, arch.num_blocks, arch.num_classes, arch.input_dim
    );
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "t.toml", &text);
    run_ok(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    let reduction = json(&dir.path().join("summary.json"))["size_reduction"].as_f64().unwrap();
    assert!((reduction - 0.22).abs() <= 0.005, "size_reduction {reduction}");
}

#[test]
fn size_report_ladder() {
    let dir = TempDir::new().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/size_report.toml");
    run_ok(&["size-report", "--config", s(&cfg), "--out", s(dir.path())]);
    let report = json(&dir.path().join("size_report.json"));
    let pct: Vec<f64> =
        report["rows"].as_array().unwrap().iter().map(|r| r["size_reduction_pct"].as_f64().unwrap()).collect();
    for (got, want) in pct.iter().zip([5.5, 11.0, 16.5, 22.0]) {
        assert!((got - want).abs() < 0.05, "{pct:?}");
    }
}

fn trained_checkpoint(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, "train.toml", &train_config(3, ""));
    let out = dir.join("trained");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    out.join("checkpoint.bin")
}

#[test]
fn submodels_at_rate_zero_have_no_spread() {
    let dir = TempDir::new().unwrap();
    let ck = trained_checkpoint(dir.path());
    let text = format!(
        "experiment = \"submodels\"\n[submodels]\ncheckpoint = \"{}\"\nrate = 0.0\nn = 5\nseed = 1\n{SMALL_GEN}",
        ck.display()
    );
    let cfg = write_config(dir.path(), "sub.toml", &text);
    run_ok(&["submodels", "--config", s(&cfg), "--out", s(dir.path())]);
    let report = json(&dir.path().join("submodels.json"));
    assert_eq!(report["report"]["std"].as_f64().unwrap(), 0.0);
    assert_eq!(report["report"]["mean"], report["full_model_error"]);
    assert_eq!(report["report"]["errors"].as_array().unwrap().len(), 5);
}

#[test]
fn ablate_ranking_matches_brute_force() {
    let dir = TempDir::new().unwrap();
    let ck_path = trained_checkpoint(dir.path());
    let text = format!(
        "experiment = \"ablate\"\n[ablate]\ncheckpoint = \"{}\"\nbase_rate = 0.1\nextra = [0.3]\n{SMALL_GEN}",
        ck_path.display()
    );
    let cfg = write_config(dir.path(), "ablate.toml", &text);
    run_ok(&["ablate", "--config", s(&cfg), "--out", s(dir.path())]);
    let report = json(&dir.path().join("ablation.json"));

    let ck = Checkpoint::read(&ck_path).unwrap();
    let ds = RunConfig::load(&cfg).unwrap().data.unwrap().generator.unwrap();
    let ds = generate(&ds).unwrap();
    let eval = Batch::from_examples(&ds.all_eval()).unwrap();
    let err = |p: &nn::ModelParams| nn::evaluate(p, &eval.features, &eval.labels).unwrap().error;
    let base = err(&ck.params);
    let deg: Vec<f64> = (0..2)
        .map(|b| {
            let mut p = ck.params.clone();
            p.blocks[b] = ck.init.blocks[b].clone();
            err(&p) - base
        })
        .collect();
    let order = if deg[1] < deg[0] { [1, 0] } else { [0, 1] };
    let got: Vec<u64> = report["ranking"]["order"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(got, order.map(|v| v as u64));
    let rates: Vec<f64> = report["assigned_rates"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((rates[order[0]] - 0.4).abs() < 1e-12);
    assert_eq!(rates[order[1]], 0.1);
    assert!(report["assigned_size_reduction"].as_f64() >= report["flat_size_reduction"].as_f64());
}

#[test]
fn missing_or_corrupt_checkpoint_fails() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.bin");
    let corrupt = dir.path().join("corrupt.bin");
    fs::write(&corrupt, b"FDROPCKP\x01\x00\x00\x00garbage").unwrap();
    for ck in [&missing, &corrupt] {
        let text = format!(
            "experiment = \"submodels\"\n[submodels]\ncheckpoint = \"{}\"\nrate = 0.5\nn = 5\nseed = 1\n{SMALL_GEN}",
            ck.display()
        );
        let cfg = write_config(dir.path(), "sub.toml", &text);
        let o = feddrop(&["submodels", "--config", s(&cfg), "--out", s(dir.path())], None);
        assert!(!o.status.success());
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
        assert!(!dir.path().join("submodels.json").exists());
    }
}

#[test]
fn invalid_configs_fail_with_message() {
    let dir = TempDir::new().unwrap();
    let cases = [
        train_config(2, "learning_rate = 1.0\n"),
        train_config(2, "").replace("client_lr = 0.1", "client_lr = -0.1"),
        train_config(2, "").replace("rates = [0.3, 0.3]", "rates = [0.3]"),
        train_config(2, "").replace("clients_per_round = 8", "clients_per_round = 100"),
        train_config(2, "").replace("input_dim = 4\nmodel_dim", "input_dim = 5\nmodel_dim"),
        train_config(2, "").replace("experiment = \"scratch\"", "experiment = \"adapt\""),
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), "bad.toml", text);
        let out = dir.path().join(format!("out{i}"));
        let o = feddrop(&["train", "--config", s(&cfg), "--out", s(&out)], None);
        assert!(!o.status.success(), "case {i} succeeded");
        assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
        assert!(!out.join("metrics.csv").exists());
    }
    let o = feddrop(&["train", "--config", s(&dir.path().join("absent.toml"))], None);
    assert!(!o.status.success());
    let o = feddrop(&["train", "--config", s(&write_config(dir.path(), "t.toml", &train_config(1, "")))], Some("zero"));
    assert!(!o.status.success());
}

#[test]
fn shipped_configs_parse_and_match_presets() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
    let scratch = RunConfig::load(&root.join("scratch.toml")).unwrap();
    assert_eq!(scratch.arch, Some(presets::standard_arch()));
    assert_eq!(scratch.data.as_ref().unwrap().generator, Some(presets::standard_generator()));
    assert_eq!(scratch.federated, Some(presets::standard_federated(&[0.2; 3], 1)));
    let adapt = RunConfig::load(&root.join("adapt.toml")).unwrap();
    assert_eq!(adapt.federated, Some(presets::standard_adapt(&[0.1; 3], 1)));
    let section = adapt.adapt.unwrap();
    assert_eq!(section.pretrain, presets::standard_pretrain(1));
    assert_eq!(section.holdout_domain, presets::STANDARD_HOLDOUT_DOMAIN);
}

#[test]
fn adapt_writes_baseline_and_adapted_checkpoints() {
    let text = train_config(2, "")
        .replace("experiment = \"scratch\"", "experiment = \"adapt\"")
        .replace("clients_per_round = 8", "clients_per_round = 4")
        + "\n[adapt]\nholdout_domain = 1\n[adapt.pretrain]\nsteps = 20\nbatch_size = 16\nseed = 2\noptimizer = {}\n";
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "adapt.toml", &text);
    run_ok(&["adapt", "--config", s(&cfg), "--out", s(dir.path())]);
    let summary = json(&dir.path().join("summary.json"));
    assert_eq!(summary["experiment"], "adapt");
    assert!(summary["baseline_holdout_error"].as_f64().is_some());
    let adapted = Checkpoint::read(&dir.path().join("checkpoint.bin")).unwrap();
    let baseline = Checkpoint::read(&dir.path().join("baseline.bin")).unwrap();
    assert_eq!(adapted.init, baseline.init);
    assert_ne!(adapted.params, baseline.params);
    assert_eq!(fs::read_to_string(dir.path().join("metrics.csv")).unwrap().lines().count(), 3);
}
