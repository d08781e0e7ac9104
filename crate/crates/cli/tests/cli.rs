use std::path::Path;
use std::process::{Command, Output};

use pics::imagecore::{load_raster, save_raster, RasterImage, Units};
use pics::qpi::{synthesize_frames, StackMeta};
use pics::seg::SegmentationMap;

fn pics(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pics"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = pics(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synth_writes_four_images_per_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ds");
    ok(&["synth", "--n", "3", "--size", "64", "--seed", "5", "--out", s(&out)]);
    for i in 0..3 {
        for ch in ["phase", "tau", "map2", "dapi"] {
            assert!(out.join(format!("f{i:03}_{ch}.tif")).is_file(), "f{i:03}_{ch}");
        }
    }
    let rec: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("run_record.json")).unwrap()).unwrap();
    assert_eq!(rec["stage"], "synth");
    assert_eq!(rec["seed"], 5);
    assert_eq!(rec["config"]["phantom"]["seed"], 5);
    assert_eq!(rec["config_sha256"].as_str().unwrap().len(), 64);

    // the same seed reproduces the same bytes
    let again = tmp.path().join("ds2");
    ok(&["synth", "--n", "3", "--size", "64", "--seed", "5", "--out", s(&again)]);
    assert_eq!(
        std::fs::read(out.join("f001_map2.tif")).unwrap(),
        std::fs::read(again.join("f001_map2.tif")).unwrap()
    );
}

#[test]
fn bad_invocations_exit_one_with_a_single_error_line() {
    let o = pics(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("ERROR cli: unrecognized subcommand 'frobnicate'"), "{err}");

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"epoch": 3}}"#).unwrap();
    let o = pics(&["--config", s(&cfg), "synth", "--n", "1", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERROR synth:"), "{}", stderr(&o));

    let o = pics(&["train", "--manifest", "/nonexistent/m.json", "--channel", "tau", "--out", "x.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERROR train:"), "{}", stderr(&o));

    let o = pics(&["--version"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("config schema 1"));
}

#[test]
fn reconstruct_recovers_the_phase() {
    let tmp = tempfile::tempdir().unwrap();
    // periodic phase with no energy at zero frequency along the shear axis
    let tau = 2.0 * std::f64::consts::PI / 64.0;
    let phase = &RasterImage::from_fn(64, 64, Units::Radians, |r, c| {
        let (y, x) = (r as f64, c as f64);
        0.3 * (tau * (8.0 * x + 2.0 * y)).sin() + 0.2 * (tau * (12.0 * x - 3.0 * y)).cos()
    });
    let (h, w) = phase.dims();
    let stack = synthesize_frames(phase, 2.0, 1.0, StackMeta::default()).unwrap();
    let frames = tmp.path().join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    for (k, f) in stack.frames().iter().enumerate() {
        save_raster(f, frames.join(format!("cell_{k}.tif"))).unwrap();
    }
    let out = tmp.path().join("phase.tif");
    ok(&["reconstruct", "--frames", s(&frames), "--out", s(&out)]);
    let got = load_raster(&out).unwrap();
    assert_eq!(got.dims(), (h, w));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mg, mp) = (mean(got.pixels()), mean(phase.pixels()));
    let rms = (got
        .pixels()
        .iter()
        .zip(phase.pixels())
        .map(|(a, b)| ((a - mg) - (b - mp)).powi(2))
        .sum::<f64>()
        / (h * w) as f64)
        .sqrt();
    assert!(rms < 1e-3, "rms {rms}");

    std::fs::remove_file(frames.join("cell_3.tif")).unwrap();
    let o = pics(&["reconstruct", "--frames", s(&frames), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_infer_segment_analyze_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let t = |p: &str| tmp.path().join(p);
    ok(&["synth", "--n", "6", "--size", "64", "--seed", "2", "--hold-out", "1", "--out", s(&t("ds"))]);
    let manifest = t("ds/manifest.json");
    for (ch, loss) in [("tau", "l1+pearson"), ("map2", "l1+gan")] {
        ok(&[
            "train", "--manifest", s(&manifest), "--channel", ch, "--loss", loss, "--epochs", "1", "--depth", "2",
            "--base-channels", "4", "--patch-size", "32", "--lr", "1e-3", "--out", s(&t(&format!("{ch}.json"))),
        ]);
        assert!(t(&format!("{ch}.history.csv")).is_file());
        assert!(t(&format!("{ch}.test.json")).is_file());
    }

    ok(&["synth", "--n", "2", "--size", "64", "--frames", "3", "--wells", "2", "--seed", "9", "--out", s(&t("seq"))]);
    ok(&[
        "infer", "--ckpt", s(&t("tau.json")), "--ckpt2", s(&t("map2.json")), "--in", s(&t("seq")), "--overlay",
        "--out", s(&t("pred")),
    ]);
    for k in 0..3 {
        for suffix in ["tau", "map2", "overlay"] {
            assert!(t(&format!("pred/f001_t{k}_{suffix}.tif")).is_file(), "f001_t{k}_{suffix}");
        }
    }
    assert!(t("pred/f000_overlay_scaling.json").is_file());

    ok(&["segment", "--stains", s(&t("pred")), "--method", "otsu", "--out", s(&t("segs"))]);
    let seg = SegmentationMap::load(t("segs/f000_t2_seg.tif")).unwrap();
    assert_eq!(seg.dims(), (64, 64));

    let o = pics(&["analyze", "--seq", s(&t("seq")), "--segs", s(&t("segs")), "--out", s(&t("report"))]);
    assert_eq!(o.status.code(), Some(1), "optics are required");
    assert!(stderr(&o).contains("--lambda-um"), "{}", stderr(&o));

    ok(&[
        "analyze", "--seq", s(&t("seq")), "--segs", s(&t("segs")), "--lambda-um", "0.55", "--gamma", "0.2",
        "--pixel-area-um2", "0.1", "--window-h", "1", "--out", s(&t("report")),
    ]);
    for f in ["growth.csv", "report.json", "confluence.svg", "dry_mass_norm.svg", "neurite_vs_nucleus.svg"] {
        assert!(t(&format!("report/{f}")).is_file(), "{f}");
    }
    let rows = pics::analysis::read_growth_csv(&t("report/growth.csv")).unwrap();
    // 2 fields x 3 frames x 4 classes
    assert_eq!(rows.len(), 24);
    assert!(rows.iter().any(|r| r.well_id == "W1"));
}
