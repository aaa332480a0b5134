//! End-to-end checks of the `glyphnet` binary: one desk-scale pipeline run
//! plus the fixed output contracts of the single-shot subcommands.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_glyphnet"))
}

fn workspace_domains() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/top_domains_10k.txt")
}

fn run(args: &[&str], workdir: &Path) -> Output {
    let out = bin()
        .args(args)
        .arg("--workdir")
        .arg(workdir)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "glyphnet {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn desk_scale_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path();
    let domains = workspace_domains();
    let domains = domains.to_str().unwrap();

    let out = run(
        &[
            "--seed",
            "9",
            "generate",
            "--domains",
            domains,
            "--limit",
            "40",
        ],
        work,
    );
    assert!(stdout(&out).contains("40 real + 40 homoglyph"));
    assert!(work.join("corpus.csv").is_file());

    run(&["--seed", "9", "split"], work);
    assert!(work.join("manifest.csv").is_file());

    run(
        &[
            "--seed",
            "9",
            "render",
            "--width",
            "48",
            "--height",
            "48",
            "--font-px",
            "12",
        ],
        work,
    );
    for split in ["train", "val", "test"] {
        assert!(work.join("images").join(split).join("index.csv").is_file());
    }

    let out = run(
        &[
            "--seed",
            "9",
            "train",
            "--batch-size",
            "16",
            "--max-epochs",
            "1",
        ],
        work,
    );
    assert!(stdout(&out).contains("epoch 1:"));
    assert!(work.join("model.glyf").is_file());
    assert!(work.join("model.json").is_file());
    let history = std::fs::read_to_string(work.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,train_acc,val_loss,val_acc"));

    let out = run(&["--seed", "9", "eval", "--whitelist", domains], work);
    let table = stdout(&out);
    assert!(table.contains("attention-cnn") && table.contains("edit-distance"));
    assert!(work.join("report.txt").is_file());
    assert!(work.join("report.csv").is_file());
    assert!(work.join("report_baseline.csv").is_file());
    let csv = std::fs::read_to_string(work.join("report.csv")).unwrap();
    assert!(csv.starts_with("metric,value"));

    let out = run(&["predict", "--domain", "go0gle.com"], work);
    let line = stdout(&out);
    let mut parts = line.split_whitespace();
    let label = parts.next().unwrap();
    assert!(label == "real" || label == "homoglyph", "{line}");
    let p: f64 = parts.next().unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&p), "{line}");
}

#[test]
fn baseline_reports_the_known_distance() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "baseline",
            "--domain",
            "go0gle.com",
            "--whitelist",
            workspace_domains().to_str().unwrap(),
            "--threshold",
            "2",
        ],
        dir.path(),
    );
    assert_eq!(stdout(&out).trim(), "homoglyph distance=1");
}

#[test]
fn config_file_drives_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path();
    let conf = work.join("pipeline.conf");
    std::fs::write(
        &conf,
        format!(
            "seed=3\npaths.domains={}\nrender.width=48\nrender.height=48\nrender.font_px=12\n",
            workspace_domains().display()
        ),
    )
    .unwrap();
    let conf = conf.to_str().unwrap();
    run(&["--config", conf, "generate", "--limit", "10"], work);
    run(&["--config", conf, "split"], work);
    run(&["--config", conf, "render"], work);
    let index = std::fs::read_to_string(work.join("images/train/index.csv")).unwrap();
    let first = index
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .to_string();
    let img = std::fs::read(work.join("images/train").join(first)).unwrap();
    assert!(img.starts_with(b"P5\n48 48\n255\n"));
}

#[test]
fn same_seed_reruns_are_byte_identical() {
    let mk = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        run(
            &[
                "--seed",
                seed,
                "generate",
                "--domains",
                workspace_domains().to_str().unwrap(),
                "--limit",
                "25",
            ],
            dir.path(),
        );
        let bytes = std::fs::read(dir.path().join("corpus.csv")).unwrap();
        bytes
    };
    assert_eq!(mk("17"), mk("17"));
    assert_ne!(mk("17"), mk("18"));
}

#[test]
fn unknown_config_key_fails_with_one_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "render.depth=3\n").unwrap();
    let out = bin()
        .args(["--config", conf.to_str().unwrap(), "split"])
        .arg("--workdir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(
        err.starts_with("error:") && err.contains("render.depth"),
        "{err}"
    );
}

#[test]
fn missing_input_fails_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["split", "--corpus", "/definitely/not/here.csv"])
        .arg("--workdir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
