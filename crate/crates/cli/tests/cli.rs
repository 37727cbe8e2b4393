use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use polarfuse_core::io::read_pft;
use polarfuse_core::simulate::{capture_file, read_manifest};

fn polarfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polarfuse"))
        .args(args)
        .env_remove("POLARFUSE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = polarfuse(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, scenes: usize, res: usize, seed: u64) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "simulate",
        "--scenes",
        &scenes.to_string(),
        "--resolution",
        &res.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&data),
    ]);
    data
}

#[test]
fn truncated_capture_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 1, 16, 0);
    let bytes = fs::read(data.join(capture_file(0))).unwrap();
    let cut = dir.path().join("cut.pft");
    fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let intr = data.join("intrinsics.txt");
    let out = polarfuse(&["decode", "--input", s(&cut), "--intrinsics", s(&intr), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("payload"));

    // a header cut inside the dims names that field instead
    fs::write(&cut, &bytes[..8]).unwrap();
    let out = polarfuse(&["decode", "--input", s(&cut), "--intrinsics", s(&intr), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dims"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn decoded_capture_satisfies_state_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 2, 16, 5);
    let out = dir.path().join("dec");
    ok(&["decode", "--input", s(&data.join(capture_file(1))), "--out", s(&out)]);
    let aolp = read_pft(out.join("aolp.pft")).unwrap();
    let dolp = read_pft(out.join("dolp.pft")).unwrap();
    let intensity = read_pft(out.join("intensity.pft")).unwrap();
    assert_eq!(aolp.dims(), &[16, 16]);
    assert!(aolp.data().iter().all(|&p| (0.0..std::f64::consts::PI).contains(&p)));
    assert!(dolp.data().iter().all(|&r| (0.0..=1.0).contains(&r)));
    assert!(intensity.data().iter().all(|&i| i >= 0.0));
    assert_eq!(read_pft(out.join("guidance.pft")).unwrap().dims(), &[6, 16, 16]);
}

#[test]
fn exit_codes_for_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("o");
    assert_eq!(polarfuse(&["simulate", "--scenes", "0", "--out", s(&o)]).status.code(), Some(4));
    assert_eq!(polarfuse(&["simulate", "--degradation", "fog", "--out", s(&o)]).status.code(), Some(4));
    assert_eq!(polarfuse(&["simulate", "--scenes", "2"]).status.code(), Some(4));
    assert_eq!(polarfuse(&["train", "--frobnicate", "--out", s(&o)]).status.code(), Some(4));
    let cfg = dir.path().join("bad.txt");
    fs::write(&cfg, "colour=blue\n").unwrap();
    assert_eq!(polarfuse(&["simulate", "--config", s(&cfg), "--out", s(&o)]).status.code(), Some(4));
    let threads = Command::new(env!("CARGO_BIN_EXE_polarfuse"))
        .args(["simulate", "--scenes", "1", "--out", s(&o)])
        .env("POLARFUSE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(4));
    // a missing dataset is bad input
    let missing = dir.path().join("nowhere");
    assert_eq!(polarfuse(&["train", "--data", s(&missing), "--out", s(&o)]).status.code(), Some(2));
}

#[test]
fn flags_override_config_file_and_settings_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.txt");
    fs::write(&cfg, "scenes=3\nresolution=16\nseed=9\nsteps=77\n").unwrap();
    let out = dir.path().join("data");
    ok(&["simulate", "--config", s(&cfg), "--seed", "4", "--out", s(&out)]);
    let echoed = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echoed.contains("seed=4\n") && echoed.contains("scenes=3\n") && echoed.contains("resolution=16\n"));
    assert!(echoed.contains("degradation=mixed\n"));
    assert!(!echoed.contains("steps"));
    let rows = read_manifest(&out).unwrap();
    assert_eq!(rows.len(), 3);
}

#[test]
fn simulate_is_deterministic_under_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(&dir.path().join("a"), 4, 16, 21);
    let b = simulate(&dir.path().join("b"), 4, 16, 21);
    let c = simulate(&dir.path().join("c"), 4, 16, 22);
    let files = |d: &Path| {
        let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    let fa = files(&a);
    assert_eq!(fa.len(), 4 * 5 + 3);
    assert_eq!(fa, files(&b));
    assert_ne!(
        fs::read(a.join(capture_file(0))).unwrap(),
        fs::read(c.join(capture_file(0))).unwrap()
    );
}

#[test]
fn eval_of_ground_truth_predictions_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 3, 16, 2);
    let preds = dir.path().join("preds");
    fs::create_dir_all(&preds).unwrap();
    for row in read_manifest(&data).unwrap() {
        fs::copy(data.join(&row.gt), preds.join(format!("pred_{:05}.pft", row.index))).unwrap();
    }
    let out = dir.path().join("eval");
    ok(&["eval", "--data", s(&data), "--predictions", s(&preds), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "mode,samples,pixels,rmse_mm,mae_mm,delta1,delta2,delta3");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("All,3,"));
    for line in &lines[1..] {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(&f[3..], ["0.000000", "0.000000", "1.000000", "1.000000", "1.000000"], "{line}");
    }
    // both sources at once is ambiguous
    let ck = dir.path().join("x.pwa");
    let both = polarfuse(&["eval", "--data", s(&data), "--predictions", s(&preds), "--checkpoint", s(&ck), "--out", s(&out)]);
    assert_eq!(both.status.code(), Some(4));
}

#[test]
fn paired_ablation_runs_and_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 4, 16, 8);
    let mut csvs = Vec::new();
    for mode in ["ppft", "no-ppft"] {
        let run = dir.path().join(mode);
        ok(&["train", "--data", s(&data), "--ablation", mode, "--stages", "2", "--steps", "3", "--out", s(&run)]);
        let ev = dir.path().join(format!("{mode}-eval"));
        ok(&[
            "eval", "--config", s(&run.join("config.txt")), "--checkpoint", s(&run.join("checkpoint.pwa")), "--out", s(&ev),
        ]);
        let log = fs::read_to_string(run.join("loss.csv")).unwrap();
        assert_eq!(log.lines().count(), 4);
        assert_eq!(log.lines().next(), Some("step,loss,rmse,mae"));
        csvs.push(fs::read_to_string(ev.join("metrics.csv")).unwrap());
    }
    assert_ne!(csvs[0], csvs[1]);
    // a ppft checkpoint does not fit a no-ppft model
    let out = polarfuse(&[
        "eval", "--data", s(&data), "--checkpoint", s(&dir.path().join("ppft/checkpoint.pwa")), "--ablation", "no-ppft",
        "--stages", "2", "--out", s(&dir.path().join("bad")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_pipeline_smoke_fits_the_time_budget() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let data = simulate(dir.path(), 16, 64, 1);
    let run = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--steps", "200", "--seed", "1", "--out", s(&run)]);
    let ev = dir.path().join("eval");
    let table = ok(&["eval", "--data", s(&data), "--checkpoint", s(&run.join("checkpoint.pwa")), "--out", s(&ev)]);
    let pc = dir.path().join("pc");
    ok(&["pointcloud", "--data", s(&data), "--checkpoint", s(&run.join("checkpoint.pwa")), "--index", "3", "--out", s(&pc)]);
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(300), "pipeline took {elapsed:?}");
    assert!(table.contains("All"));
    for f in ["sensor.ply", "gt.ply", "pred.ply"] {
        assert!(fs::read_to_string(pc.join(f)).unwrap().starts_with("ply\n"));
    }
}
