//! End-to-end smoke tests driving the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

fn svfd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svfd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Tiny-but-complete pipeline: synth fixtures, a 2-epoch training run, code
/// inference, generation, geodesic export, and metrics.
#[test]
fn full_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // fixtures
    let sphere = root.join("sphere");
    let ellipsoid = root.join("ellipsoid");
    let blob = root.join("blob");
    assert_ok(
        &svfd(&["synth", "--kind", "sphere", "--radius", "1.0", "--resolution", "320", "--out", path_str(&sphere)]),
        "synth sphere",
    );
    assert_ok(
        &svfd(&["synth", "--kind", "ellipsoid", "--semi-axes", "1.2,1.0,0.8", "--resolution", "320", "--out", path_str(&ellipsoid)]),
        "synth ellipsoid",
    );
    assert_ok(
        &svfd(&["synth", "--kind", "ellipsoid", "--semi-axes", "0.9,1.1,1.0", "--resolution", "320", "--out", path_str(&blob)]),
        "synth blob",
    );

    // 2-epoch smoke training on two shapes with a small architecture
    let out = root.join("run");
    let train_out = svfd(&[
        "train",
        "--template", path_str(&sphere.with_extension("ply")),
        "--sources", path_str(&ellipsoid.with_extension("ply")), path_str(&blob.with_extension("ply")),
        "--out", path_str(&out),
        "--epochs", "2",
        "--set", "arch.w_fa=8", "--set", "arch.l_fa=1", "--set", "arch.w_df=16",
        "--set", "arch.l_df=2", "--set", "arch.n_e=1", "--set", "arch.n_z=16",
        "--set", "train.sample_points=100",
        "--seed", "3",
    ]);
    assert_ok(&train_out, "train");
    assert!(out.join("model.ckpt").exists());
    assert!(out.join("summary.json").exists());
    let csv = std::fs::read_to_string(out.join("loss_history.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "header plus one row per epoch");
    let effective = std::fs::read_to_string(out.join("effective_config.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&effective).unwrap();
    assert_eq!(parsed["train.epochs"]["value"], 2);
    assert_eq!(parsed["train.epochs"]["provenance"], "flag");
    assert_eq!(parsed["train.steps"]["value"], 10);
    assert_eq!(parsed["train.steps"]["provenance"], "default");

    // inference against the frozen checkpoint
    let infer_out = root.join("infer");
    assert_ok(
        &svfd(&[
            "infer",
            "--checkpoint", path_str(&out.join("model.ckpt")),
            "--shape", path_str(&ellipsoid.with_extension("ply")),
            "--out", path_str(&infer_out),
            "--set", "infer.adam_epochs=3", "--set", "infer.lbfgs_epochs=1",
            "--set", "train.sample_points=100",
        ]),
        "infer",
    );
    assert!(infer_out.join("code.json").exists());
    assert!(infer_out.join("mapped_direct.ply").exists());
    assert!(infer_out.join("mapped_inverse.ply").exists());
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(infer_out.join("diagnostics.json")).unwrap())
            .unwrap();
    assert!(diag["local_distances"]["unit_cube"]["direct"]["fld_max"].is_number());
    assert!(diag["local_distances"]["physical"]["inverse"]["bld_mean"].is_number());

    // generation: interpolate between the two training codes
    let gen_out = root.join("gen");
    assert_ok(
        &svfd(&[
            "generate",
            "--checkpoint", path_str(&out.join("model.ckpt")),
            "--mode", "interpolate",
            "--ids", "ellipsoid", "blob",
            "--out", path_str(&gen_out),
        ]),
        "generate interpolate",
    );
    assert!(gen_out.join("interp_0.50.ply").exists());
    assert!(gen_out.join("latent_scatter.csv").exists());
    assert!(gen_out.join("latent_scatter.svg").exists());

    // gaussian generation with n = 0 still emits the scatter
    let gen0 = root.join("gen0");
    assert_ok(
        &svfd(&[
            "generate",
            "--checkpoint", path_str(&out.join("model.ckpt")),
            "--mode", "gaussian", "--n", "0",
            "--out", path_str(&gen0),
        ]),
        "generate n=0",
    );
    assert!(gen0.join("latent_scatter.csv").exists());
    assert!(!gen0.join("sample_000.ply").exists());

    // geodesic snapshots of a training shape
    let geo = root.join("geo");
    assert_ok(
        &svfd(&[
            "geodesic",
            "--checkpoint", path_str(&out.join("model.ckpt")),
            "--shape", path_str(&ellipsoid.with_extension("ply")),
            "--id", "ellipsoid",
            "--out", path_str(&geo),
        ]),
        "geodesic",
    );
    assert!(geo.join("forward_00.ply").exists());
    assert!(geo.join("forward_10.ply").exists());
    assert!(geo.join("backward_00.ply").exists());

    // metrics between two fixtures
    let metrics = svfd(&[
        "metrics",
        "--a", path_str(&sphere.with_extension("ply")),
        "--b", path_str(&ellipsoid.with_extension("ply")),
        "--w-n", "0.01",
    ]);
    assert_ok(&metrics, "metrics");
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&metrics.stdout)).unwrap();
    assert!(report["cd"].as_f64().unwrap() > 0.0);
    assert!(report["ncd"].as_f64().unwrap() >= report["cd"].as_f64().unwrap());
    assert!(report["fld"]["fld_max"].is_number());
}

#[test]
fn identical_clouds_score_zero_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let shape = dir.path().join("tube");
    assert_ok(
        &svfd(&["synth", "--kind", "tube", "--out", path_str(&shape)]),
        "synth",
    );
    let metrics = svfd(&[
        "metrics",
        "--a", path_str(&shape.with_extension("ply")),
        "--b", path_str(&shape.with_extension("ply")),
    ]);
    assert_ok(&metrics, "metrics");
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&metrics.stdout)).unwrap();
    assert_eq!(report["cd"].as_f64().unwrap(), 0.0);
    assert_eq!(report["cdw"].as_f64().unwrap(), 0.0);
    assert_eq!(report["pcd"].as_f64().unwrap(), 0.0);
}

#[test]
fn missing_normals_requesting_ncd_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    // a bare point cloud PLY without normals
    let cloud = dir.path().join("cloud.ply");
    std::fs::write(
        &cloud,
        "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n",
    )
    .unwrap();
    let out = svfd(&[
        "metrics",
        "--a", path_str(&cloud),
        "--b", path_str(&cloud),
        "--measure", "ncd",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("normals"), "stderr: {stderr}");
}

#[test]
fn missing_template_is_a_validation_error() {
    let out = svfd(&["train", "--sources", "a.ply", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--template"), "stderr: {stderr}");
}

#[test]
fn corrupted_checkpoint_is_invalid_container() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"not a checkpoint at all").unwrap();
    let out = svfd(&[
        "infer",
        "--checkpoint", path_str(&bad),
        "--shape", "whatever.ply",
        "--out", path_str(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("invalid container"), "stderr: {stderr}");
}

#[test]
fn augment_two_tubes() {
    let dir = tempfile::tempdir().unwrap();
    let models = dir.path().join("models");
    std::fs::create_dir_all(&models).unwrap();
    for (name, radius) in [("thin", "0.08"), ("thick", "0.12")] {
        assert_ok(
            &svfd(&[
                "synth", "--kind", "tube", "--radius", radius, "--resolution", "640",
                "--out", path_str(&models.join(name)),
            ]),
            "synth tube",
        );
    }
    let out = dir.path().join("aug");
    let result = svfd(&[
        "augment",
        "--models", path_str(&models),
        "--n", "1",
        "--out", path_str(&out),
        "--seed", "4",
    ]);
    assert_ok(&result, "augment");
    assert!(out.join("aug_000.ply").exists());
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let header = report.lines().next().unwrap();
    assert!(header.contains("bottom_decile_mean"));
    assert!(report.lines().count() >= 2);
}

#[test]
fn dump_config_reports_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train.steps": 5}"#).unwrap();
    let out = svfd(&[
        "metrics",
        "--a", "x", "--b", "y", // ignored: dump exits first
        "--config", path_str(&cfg),
        "--set", "train.epochs=7",
        "--dump-config",
    ]);
    assert_ok(&out, "dump-config");
    let parsed: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(parsed["train.steps"]["value"], 5);
    assert_eq!(parsed["train.steps"]["provenance"], "file");
    assert_eq!(parsed["train.epochs"]["value"], 7);
    assert_eq!(parsed["train.epochs"]["provenance"], "flag");
    assert_eq!(parsed["train.batch_size"]["value"], 8);
    assert_eq!(parsed["train.batch_size"]["provenance"], "default");
    // paper-pinned defaults visible in the dump
    assert_eq!(parsed["train.sample_points"]["value"], 2000);
    assert_eq!(parsed["train.epochs"]["value"], 7);
}

#[test]
fn unknown_config_key_rejected() {
    let out = svfd(&["metrics", "--a", "x", "--b", "y", "--set", "nope.key=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key"));
}
