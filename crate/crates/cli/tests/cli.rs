use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use linepyr::filter_bank::FeatureSequence;
use linepyr::raster::{load_image, save_image, RasterImage};

fn linepyr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linepyr"))
        .args(args)
        .output()
        .expect("spawn linepyr")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stripes(w: usize, h: usize) -> RasterImage {
    let data = (0..w * h).map(|i| ((i % w) / 8 % 2) as f64).collect();
    RasterImage::new(w, h, 1, data).unwrap()
}

fn synth(dir: &Path, lines: &str) -> PathBuf {
    let out = linepyr(&[
        "synth", "--out-dir", s(dir), "--glyph-count", "4", "--lines", lines,
        "--line-length", "2,3", "--seed", "5",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("MANIFEST.tsv")
}

#[test]
fn pyramid_writes_one_file_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("line.pgm");
    save_image(&input, &stripes(512, 64)).unwrap();
    let before = fs::read(&input).unwrap();
    let out_dir = dir.path().join("p");
    let out = linepyr(&["pyramid", "--in", s(&input), "--out-dir", s(&out_dir), "--levels", "6", "--min-height", "2"]);
    assert_eq!(code(&out), 0);
    for (k, h) in [64, 32, 16, 8, 4, 2].into_iter().enumerate() {
        let level = load_image(out_dir.join(format!("line.L{k}.pgm"))).unwrap();
        assert_eq!(level.height(), h);
        assert_eq!(level.width(), 512 >> k);
    }
    assert!(!out_dir.join("line.L6.pgm").exists());
    assert!(out_dir.join("config.resolved.txt").exists());
    assert_eq!(fs::read(&input).unwrap(), before, "input untouched");
}

#[test]
fn color_levels_are_written_as_ppm() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("c.ppm");
    let img = RasterImage::new(8, 8, 3, (0..192).map(|i| (i % 7) as f64 / 6.0).collect()).unwrap();
    save_image(&input, &img).unwrap();
    let out = linepyr(&["pyramid", "--in", s(&input), "--out-dir", s(dir.path()), "--min-height", "2"]);
    assert_eq!(code(&out), 0);
    assert_eq!(load_image(dir.path().join("c.L2.ppm")).unwrap().channels(), 3);
}

#[test]
fn featurize_writes_sequences_per_level_and_whole() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("corpus"), "3");
    let per = dir.path().join("per");
    let out = linepyr(&["featurize", "--manifest", s(&manifest), "--out-dir", s(&per), "--xheight", "12", "--min-height", "10"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // Height 40 with a floor of 10 gives levels of height 40, 20 and 10.
    let mut widths = Vec::new();
    for k in 0..3 {
        let bytes = fs::read(per.join(format!("line_0000.L{k}.fseq"))).unwrap();
        let seq = FeatureSequence::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(seq.frame_dim(), 7 * 12);
        widths.push(seq.frame_count());
    }
    // Every level is resampled to the same xheight, so coarser levels keep
    // the aspect ratio with roughly the same frame count.
    assert!(widths.iter().all(|&w| w > 0 && w.abs_diff(widths[0]) <= 2), "{widths:?}");
    assert!(!per.join("line_0000.L3.fseq").exists());

    let whole = dir.path().join("whole");
    let out = linepyr(&[
        "featurize", "--manifest", s(&manifest), "--out-dir", s(&whole), "--xheight", "12",
        "--min-height", "10", "--mode", "whole",
    ]);
    assert_eq!(code(&out), 0);
    let bytes = fs::read(whole.join("line_0001.whole.fseq")).unwrap();
    let seq = FeatureSequence::read_from(&mut bytes.as_slice()).unwrap();
    assert_eq!(seq.frame_dim(), 3 * 7 * 12);
    assert!(whole.join("config.resolved.txt").exists());
}

#[test]
fn train_eval_recognize_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("corpus"), "10");
    let models = dir.path().join("models");
    let out = linepyr(&[
        "train", "--manifest", s(&manifest), "--out-dir", s(&models), "--xheight", "10",
        "--hidden-units", "6", "--seeds", "1,2", "--max-epochs", "2", "--min-height", "20",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["model.L0.seed1.ptxm", "model.L1.seed2.ptxm", "train.L0.seed1.csv", "config.resolved.txt"] {
        assert!(models.join(name).exists(), "{name}");
    }

    let report = dir.path().join("report/levels.csv");
    let out = linepyr(&["eval", "--models", s(&models), "--out", s(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("level,accuracy_mean,accuracy_std,precision,recall,f_measure"));
    assert_eq!(lines.count(), 2);
    assert!(report.with_extension("txt").exists());
    assert!(dir.path().join("report/config.resolved.txt").exists());

    let image = dir.path().join("corpus/images/line_0000.pgm");
    let out = linepyr(&["recognize", "--model", s(&models.join("model.L0.seed1.ptxm")), "--image", s(&image)]);
    assert_eq!(code(&out), 0);
}

#[test]
fn whole_mode_trains_a_single_fused_model() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("corpus"), "10");
    let models = dir.path().join("models");
    let out = linepyr(&[
        "train", "--manifest", s(&manifest), "--out-dir", s(&models), "--xheight", "8",
        "--hidden-units", "4", "--seeds", "3", "--max-epochs", "1", "--min-height", "20",
        "--mode", "whole", "--kind", "mdlstm_2d",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(models.join("model.whole.seed3.ptxm").exists());
    let image = dir.path().join("corpus/images/line_0002.pgm");
    let out = linepyr(&["recognize", "--model", s(&models.join("model.whole.seed3.ptxm")), "--image", s(&image)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes() {
    assert_eq!(code(&linepyr(&[])), 1);
    assert_eq!(code(&linepyr(&["bogus"])), 1);
    assert_eq!(code(&linepyr(&["pyramid", "--in", "x.pgm", "--out-dir", "o", "--no-such-flag"])), 1);
    assert_eq!(code(&linepyr(&["--help"])), 0);
    assert_eq!(code(&linepyr(&["--version"])), 0);
    assert_eq!(code(&linepyr(&["train", "--out-dir", "o", "--xheight", "tall"])), 1);
    assert_eq!(code(&linepyr(&["train", "--out-dir", "o", "--set", "colour=red"])), 1);
    assert_eq!(code(&linepyr(&["eval", "--models", "m", "--out", "o.csv", "--split", "dev"])), 1);

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.pgm");
    let out = linepyr(&["pyramid", "--in", s(&missing), "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.pgm"));

    let bad = dir.path().join("bad.pgm");
    fs::write(&bad, b"P5\n0 4\n255\n").unwrap();
    assert_eq!(code(&linepyr(&["pyramid", "--in", s(&bad), "--out-dir", s(dir.path())])), 2);

    let manifest = dir.path().join("m.tsv");
    fs::write(&manifest, "no tab here\n").unwrap();
    let out = linepyr(&["train", "--manifest", s(&manifest), "--out-dir", s(&dir.path().join("t"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains(":1:"));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("corpus"), "10");
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "manifest=corpus/MANIFEST.tsv\nxheight=9\nhidden_units=3\nseeds=4\nmax_epochs=1\ntrain_levels=0\n").unwrap();
    let models = dir.path().join("m");
    let out = linepyr(&["train", "--config", s(&cfg), "--out-dir", s(&models), "--set", "hidden_units=5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let resolved = fs::read_to_string(models.join("config.resolved.txt")).unwrap();
    assert!(resolved.contains("\nxheight=9\n"));
    assert!(resolved.contains("\nhidden_units=5\n"));
    assert!(resolved.contains(&format!("manifest={}", fs::canonicalize(&manifest).unwrap().display())));
    // The resolved file alone reproduces the run.
    let again = dir.path().join("m2");
    let out = linepyr(&["train", "--config", s(&models.join("config.resolved.txt")), "--out-dir", s(&again)]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read(models.join("model.L0.seed4.ptxm")).unwrap(),
        fs::read(again.join("model.L0.seed4.ptxm")).unwrap()
    );
}
