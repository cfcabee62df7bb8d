use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn foltr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foltr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, extra: &str) -> String {
    let text = format!(
        r#"
name = "{name}"
output_dir = "runs"
seeds = [1, 2]

[data]
kind = "letor"
feature_count = 6
folds = [{{ train = "data/Fold1/train.txt", test = "data/Fold1/test.txt" }}]

[partition]
clients = 5
{extra}

[federation]
rounds = 8

[eval]
checkpoint_stride = 4
"#
    );
    let path = dir.join(format!("{name}.toml"));
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn synth(dir: &Path) {
    let out = dir.join("data");
    let o = foltr(&[
        "synth",
        "--queries",
        "30",
        "--docs",
        "12",
        "--features",
        "6",
        "--seed",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn synth_then_run_partition_eval_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    assert!(dir.join("data/Fold1/train.txt").is_file());

    let iid = write_config(dir, "iid", "");
    let skew = write_config(dir, "skew", "scheme = \"label-skew\"");
    for c in [&iid, &skew] {
        let o = foltr(&["run", c, "--workers", "2"]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o).lines().count(), 2);
    }
    let run = dir.join("runs/iid/fold0_seed1");
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("round,offline_ndcg,online_cumulative,client_0"));

    let plan = dir.join("plan.json");
    let o = foltr(&[
        "partition",
        &skew,
        "--seed",
        "3",
        "--out",
        plan.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&plan).unwrap();
    assert!(text.contains("\"label-skew\"") && text.contains("\"pairs\""));

    let ckpt = run.join("checkpoints/round_000008.ckpt");
    let test = dir.join("data/Fold1/test.txt");
    let o = foltr(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        test.to_str().unwrap(),
        "--feature-count",
        "6",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let value: f64 = stdout(&o)
        .trim()
        .split(' ')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&value));

    let out = dir.join("report");
    let o = foltr(&[
        "report",
        dir.join("runs").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--baseline",
        "iid",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(out.join("curves.csv").is_file());
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let cfg = write_config(dir, "det", "");
    assert!(foltr(&["run", &cfg, "--workers", "4"]).status.success());
    let run = dir.join("runs/det/fold0_seed2");
    let again = dir.join("again");
    let o = foltr(&[
        "run",
        "--manifest",
        run.join("manifest.json").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
        "--workers",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(run.join("metrics.csv")).unwrap(),
        fs::read(again.join("metrics.csv")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let bad_key = write_config(dir, "bad", "clientz = 3");
    let o = foltr(&["run", &bad_key]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("clientz"), "{}", stderr(&o));

    let no_data = write_config(dir, "nodata", "");
    assert_eq!(foltr(&["run", &no_data]).status.code(), Some(2));

    synth(dir);
    fs::write(
        dir.join("runs"),
        "a file where the output directory should go",
    )
    .unwrap();
    let blocked = write_config(dir, "blocked", "");
    assert_eq!(foltr(&["run", &blocked]).status.code(), Some(3));

    assert_eq!(foltr(&["run"]).status.code(), Some(1));
    assert_eq!(foltr(&["--help"]).status.code(), Some(0));
}

#[test]
fn click_probe_prints_analytic_probabilities() {
    let o = foltr(&["click-probe", "--grades", "0,4,2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<String> = stdout(&o).lines().skip(2).map(str::to_string).collect();
    assert_eq!(rows[0], "1,0,0");
    assert_eq!(rows[1], "2,4,1");

    let o = foltr(&[
        "click-probe",
        "--family",
        "pbm",
        "--eta",
        "2",
        "--grades",
        "4,4",
    ]);
    assert!(o.status.success());
    let p2: f64 = stdout(&o)
        .lines()
        .nth(3)
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!((p2 - 0.25).abs() < 1e-12);

    let o = foltr(&["click-probe", "--instantiation", "curious", "--grades", "1"]);
    assert_eq!(o.status.code(), Some(1));
}
