use std::path::Path;
use std::process::{Command, Output};

const TINY: [&str; 21] = [
    "data.n_train=1200",
    "flow.blocks=2",
    "flow.units=8",
    "flow.epochs=2",
    "flow.batch_size=400",
    "classifier.hidden_layers=2",
    "classifier.units=8",
    "classifier.epochs=2",
    "classifier.batch_size=400",
    "refiner.hidden_layers=2",
    "refiner.units=8",
    "refiner.epochs=2",
    "refiner.batch_size=400",
    "hmc.chains=4",
    "hmc.burn_in=5",
    "hmc.keep=25",
    "hmc.eps=0.05",
    "hmc.steps=5",
    "scoring.samples=500",
    "scoring.bins=8",
    "scoring.b0_bins=8",
];

fn laser(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_laser"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run laser binary")
}

fn tiny_args<'a>(sub: &'a str, dir: &'a Path, extra: &[&'a str]) -> Vec<String> {
    let mut v = vec![sub.to_string(), "--preset".into(), "desk".into(), "--output-dir".into(), dir.display().to_string()];
    for kv in TINY.iter().chain(extra) {
        v.push("--set".into());
        v.push(kv.to_string());
    }
    v
}

fn run(args: &[String]) -> Output {
    laser(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn stages_run_individually_then_resume() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&tiny_args("train-flow", dir.path(), &[]));
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(dir.path().join("flow.ckpt").exists());
    assert!(!dir.path().join("classifier.ckpt").exists());

    let out = run(&tiny_args("run-all", dir.path(), &[]));
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("flow        reused"), "{stdout}");
    assert!(stdout.contains("refiner     done"), "{stdout}");
    for f in ["scores.csv", "scores.txt", "manifest.json", "truth.png", "latent_weighted.png", "hmc_latent.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    assert!(csv.starts_with("method,emd,emd_err,jsd,jsd_err\n"));
    for m in ["baseline", "hmc", "laser", "dctr", "truth"] {
        assert!(csv.contains(&format!("\n{m},")), "{csv}");
    }
}

#[test]
fn failing_stage_exits_nonzero_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&tiny_args("sample-hmc", dir.path(), &["hmc.eps=50", "hmc.steps=20"]));
    assert!(!out.status.success());
    let err = text(&out.stderr);
    assert!(err.contains("stage 'hmc' failed"), "{err}");
    let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"failed_stage\": \"hmc\""), "{manifest}");
}

#[test]
fn bad_configuration_is_rejected() {
    let out = laser(&["show-config", "--set", "flow.nonsense=1"]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("flow.nonsense"));
    let out = laser(&["show-config", "--dataset", "spirals"]);
    assert!(!out.status.success());
}

#[test]
fn config_file_round_trip_through_show_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = laser(&["show-config", "--preset", "desk", "--dataset", "rings", "--set", "hmc.eps=0.01"]);
    assert!(out.status.success());
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, &out.stdout).unwrap();
    let again = laser(&["show-config", "--config", cfg.to_str().unwrap()]);
    assert!(again.status.success(), "{}", text(&again.stderr));
    assert_eq!(out.stdout, again.stdout);
    let shown = text(&out.stdout);
    assert!(shown.contains("dataset = rings") && shown.contains("eps = 0.01") && shown.contains("blocks = 20"));
}

#[test]
fn render_file_and_compare_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&tiny_args("run-all", dir.path(), &[]));
    assert!(out.status.success(), "{}", text(&out.stderr));

    let png = dir.path().join("dctr_again.png");
    let out = laser(&[
        "render",
        "--dataset",
        "gaussians",
        "--input",
        dir.path().join("dctr.csv").to_str().unwrap(),
        "--output",
        png.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(std::fs::metadata(&png).unwrap().len() > 0);

    let m = dir.path().join("manifest.json");
    let m = m.to_str().unwrap();
    let table_path = dir.path().join("table.txt");
    let out = laser(&["compare", &format!("a={m}"), &format!("b={m}"), "--output", table_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let table = text(&out.stdout);
    assert_eq!(table, std::fs::read_to_string(&table_path).unwrap());
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].contains(" a ") && lines[0].contains(" b "), "{table}");
    for method in ["Baseline", "HMC", "LaSeR", "DCTR"] {
        let row = lines.iter().find(|l| l.starts_with(method)).unwrap();
        let cells: Vec<&str> = row.split('|').skip(1).map(str::trim).collect();
        assert_eq!(cells[0], cells[1], "{row}");
    }
    assert!(table.contains('*'));
}
