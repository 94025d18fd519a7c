use std::path::Path;
use std::process::{Command, Output};

use mitocount::pipeline::{workload_slides, WorkloadSpec};

fn mitocount(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mitocount"))
        .args(args)
        .env_remove("MITOCOUNT_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

#[test]
fn generate_postprocess_validate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let spec = configs().join("synthetic.toml");
    let stdout = ok(&mitocount(&["gen-synthetic", "--spec", spec.to_str().unwrap(), "--out", out, "--with-masks"]));
    assert_eq!(stdout.lines().count(), 2);

    let masks = dir.path().join("demo-count/masks");
    let xml = dir.path().join("demo.xml");
    let stdout = ok(&mitocount(&[
        "postprocess",
        "--masks",
        masks.to_str().unwrap(),
        "--mpp",
        "0.25",
        "--out",
        xml.to_str().unwrap(),
    ]));
    // 10 figures, one merged 10 um pair, one 20 um pair counted twice
    assert!(stdout.starts_with("13 figures"), "{stdout}");
    let stdout = ok(&mitocount(&["validate-xml", xml.to_str().unwrap()]));
    assert!(stdout.contains("slide demo-count, 13 figures"), "{stdout}");

    let map = dir.path().join("map.png");
    let slide = dir.path().join("demo-count");
    ok(&mitocount(&["tissue-map", "--slide", slide.to_str().unwrap(), "--out", map.to_str().unwrap()]));
    assert!(map.is_file());
}

#[test]
fn validate_rejects_corrupt_file() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.xml");
    std::fs::write(
        &bad,
        r#"<annotation slide_id="x" mpp="0.25"><hpf x="1" y="1" side_px="5" count="1"><member id="4"/></hpf></annotation>"#,
    )
    .unwrap();
    let out = mitocount(&["validate-xml", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("<member>"));
    let missing = mitocount(&["validate-xml", dir.path().join("none.xml").to_str().unwrap()]);
    assert!(!missing.status.success());
}

#[test]
fn bench_hpf_writes_one_row_per_size() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    ok(&mitocount(&["bench-hpf", "--n", "1,240,500,750,959", "--seed", "42", "--out", csv.to_str().unwrap()]));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert_eq!(r[1], r[3], "brute and k-d counts differ");
        if r[0] >= 240.0 {
            assert!(r[4] < r[2], "k-d slower than brute at n={}", r[0]);
        }
    }
}

#[test]
fn run_pipeline_reports_the_blank_slide() {
    let dir = tempfile::tempdir().unwrap();
    // pick a seed whose 10-slide draw holds exactly one blank slide
    let base = WorkloadSpec {
        slides: 10,
        count_ratio: 0.9,
        tiles_per_slide: 4,
        figures_per_slide: 3,
        specks_per_slide: 1,
        pairs_per_slide: 0,
        ..WorkloadSpec::default()
    };
    let seed = (0..)
        .find(|&s| {
            let w = WorkloadSpec { seed: s, ..base.clone() };
            workload_slides(&w).unwrap().iter().filter(|x| x.blank).count() == 1
        })
        .unwrap();
    let workload = dir.path().join("workload.toml");
    std::fs::write(
        &workload,
        format!(
            "slides = 10\ncount_ratio = 0.9\ntiles_per_slide = 4\nfigures_per_slide = 3\nspecks_per_slide = 1\npairs_per_slide = 0\nseed = {seed}\n"
        ),
    )
    .unwrap();
    let config = configs().join("pipeline.toml");
    let out = dir.path().join("run");
    let stdout = ok(&mitocount(&[
        "run-pipeline",
        "--config",
        config.to_str().unwrap(),
        "--workload",
        workload.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert!(stdout.contains("slides: 10 submitted, 9 counted, 1 no-count, 0 failed"), "{stdout}");
    assert!(out.join("metrics/jobs.csv").is_file());
    assert_eq!(std::fs::read_dir(out.join("annotations")).unwrap().count(), 9);
}

#[test]
fn output_dir_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let workload = dir.path().join("w.toml");
    std::fs::write(&workload, "slides = 1\ncount_ratio = 1.0\ntiles_per_slide = 1\nfigures_per_slide = 1\nspecks_per_slide = 0\npairs_per_slide = 0\n").unwrap();
    let config = configs().join("pipeline.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_mitocount"))
        .args(["run-pipeline", "--config", config.to_str().unwrap(), "--workload", workload.to_str().unwrap()])
        .env("MITOCOUNT_OUT_DIR", dir.path().join("env-out"))
        .env("MITOCOUNT_INFERENCE_WORKERS", "3")
        .output()
        .unwrap();
    let stdout = ok(&out);
    assert!(stdout.contains("inference    workers  3"), "{stdout}");
    assert!(dir.path().join("env-out/results.jsonl").is_file());

    let bad = mitocount(&["run-pipeline", "--config", config.to_str().unwrap(), "--workload", workload.to_str().unwrap()]);
    assert!(!bad.status.success());
}

#[test]
fn bad_arguments_exit_nonzero() {
    assert!(!mitocount(&["bench-hpf", "--n", "x", "--out", "/dev/null"]).status.success());
    assert!(!mitocount(&["nope"]).status.success());
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[detector]\nid = \"unet\"\n").unwrap();
    let out = mitocount(&["run-pipeline", "--config", cfg.to_str().unwrap(), "--workload", cfg.to_str().unwrap(), "--out", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown detector id"));
}
