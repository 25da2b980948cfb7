//! End-to-end CLI pipeline on a scaled-down run configuration:
//! gen-data -> train -> eval -> sweep-gallery -> inspect-se -> selftest,
//! checking the advertised artifacts and their determinism.

use std::process::Command;

fn mgts(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mgts"))
        .args(args)
        .output()
        .expect("failed to launch mgts")
}

fn run_ok(args: &[&str]) -> String {
    let out = mgts(args);
    assert!(
        out.status.success(),
        "mgts {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SMALL_CFG: &str = "\
dataset.num_identities = 6
dataset.num_scenes = 24
dataset.num_probes = 6
dataset.gallery_sizes = 4,8
model.channel_plan = 4,8
model.embed_dim = 8
model.input_h = 16
model.input_w = 8
train.epochs = 2
";

#[test]
fn full_pipeline_produces_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, SMALL_CFG).unwrap();
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();

    run_ok(&["gen-data", "--config", cfg, "--seed", "7", "--out", out_s]);
    assert!(out.join("dataset/manifest.txt").is_file());
    assert!(out.join("config.txt").is_file());

    run_ok(&["train", "--config", cfg, "--seed", "7", "--out", out_s]);
    let ckpt = out.join("model.ckpt");
    assert!(ckpt.is_file());
    assert!(out.join("train_loss.csv").is_file());

    run_ok(&["eval", "--config", cfg, "--seed", "7", "--out", out_s]);
    let eval_csv = std::fs::read(out.join("eval.csv")).unwrap();
    assert!(out.join("probe_ap.csv").is_file());

    // same seed, fresh output dir -> byte-identical checkpoint and eval csv
    let out2 = dir.path().join("out2");
    let out2_s = out2.to_str().unwrap();
    run_ok(&["train", "--config", cfg, "--seed", "7", "--out", out2_s]);
    run_ok(&["eval", "--config", cfg, "--seed", "7", "--out", out2_s]);
    assert_eq!(
        std::fs::read(&ckpt).unwrap(),
        std::fs::read(out2.join("model.ckpt")).unwrap(),
        "checkpoints differ between identical runs"
    );
    assert_eq!(
        eval_csv,
        std::fs::read(out2.join("eval.csv")).unwrap(),
        "eval CSVs differ between identical runs"
    );

    run_ok(&[
        "sweep-gallery",
        "--config",
        cfg,
        "--seed",
        "7",
        "--out",
        out_s,
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert!(out.join("gallery_sweep.csv").is_file());
    assert!(out.join("gallery_sweep.svg").is_file());

    let se_out = run_ok(&[
        "inspect-se",
        "--config",
        cfg,
        "--seed",
        "7",
        "--out",
        out_s,
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert!(se_out.contains("Avg(F) > Avg(O)"), "unexpected: {se_out}");
    assert!(out.join("se_stats.csv").is_file());
    assert!(out.join("se_histogram.svg").is_file());

    run_ok(&["ablate", "--config", cfg, "--seed", "7", "--out", out_s]);
    let ablate = std::fs::read_to_string(out.join("ablate.csv")).unwrap();
    for variant in ["O", "F", "B", "O+E", "B+E", "O+F+E"] {
        assert!(
            ablate.lines().any(|l| l.starts_with(&format!("{variant},"))),
            "ablate.csv missing row {variant}:\n{ablate}"
        );
    }

    run_ok(&[
        "sweep-gamma",
        "--config",
        cfg,
        "--seed",
        "7",
        "--out",
        out_s,
        "--gamma",
        "1.1,1.3",
    ]);
    assert!(out.join("gamma_sweep.csv").is_file());
    assert!(out.join("gamma_sweep.svg").is_file());

    // a checkpoint trained under one architecture is rejected by another
    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, SMALL_CFG.replace("embed_dim = 8", "embed_dim = 16")).unwrap();
    let bad = mgts(&[
        "eval",
        "--config",
        bad_cfg.to_str().unwrap(),
        "--seed",
        "7",
        "--out",
        out_s,
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert!(!bad.status.success(), "architecture mismatch was accepted");

    // echoed config round-trips through the strict parser
    let echoed = std::fs::read_to_string(out.join("config.txt")).unwrap();
    let tmp = dir.path().join("echo.cfg");
    std::fs::write(&tmp, &echoed).unwrap();
    run_ok(&["gen-data", "--config", tmp.to_str().unwrap(), "--out",
        dir.path().join("out3").to_str().unwrap()]);
}

#[test]
fn selftest_reports_all_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(&["selftest", "--out", dir.path().join("o").to_str().unwrap()]);
    let ok_lines = out.lines().filter(|l| l.starts_with("ok")).count();
    assert!(ok_lines >= 7, "expected >= 7 selftest checks, got:\n{out}");
}
