use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use samreg_core::grid::{DisplacementField, Dims};
use samreg_core::io::{parse_report_value, write_grid, GridFile, PAIRS_HEADER};

fn samreg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_samreg"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn samreg")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = samreg(args, dir);
    assert!(
        out.status.success(),
        "samreg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Small synthetic case: three blobs on a 64x64 grid.
fn synth(dir: &Path, amplitude: &str) -> PathBuf {
    let case = dir.join("case");
    ok(
        &[
            "synth", "case", "--size", "64", "--blobs", "3", "--radius-min", "6", "--radius-max", "8",
            "--amplitude", amplitude, "--sigma-d", "12", "--seed", "5",
        ],
        dir,
    );
    case
}

fn segment(dir: &Path, image: &str, out: &str) {
    ok(&["segment", image, out, "--min-area", "40"], dir);
}

fn manifest_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(PAIRS_HEADER));
    lines.map(|l| l.split('\t').map(str::to_owned).collect()).collect()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(samreg(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(samreg(&["segment"], dir.path()).status.code(), Some(2));
    assert_eq!(samreg(&["segment", "missing.rgrd", "out"], dir.path()).status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn truncated_payload_is_rejected_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let case = synth(dir.path(), "0");
    let bytes = fs::read(case.join("moving.rgrd")).unwrap();
    fs::write(dir.path().join("cut.rgrd"), &bytes[..bytes.len() - 7]).unwrap();
    let out = samreg(&["segment", "cut.rgrd", "masks"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert!(!dir.path().join("masks").exists());

    let warped = samreg(&["warp", "cut.rgrd", "cut.rgrd", "-o", "w.rgrd"], dir.path());
    assert_eq!(warped.status.code(), Some(2));
    assert!(!dir.path().join("w.rgrd").exists());
}

#[test]
fn segment_writes_one_file_per_blob() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "0");
    segment(dir.path(), "case/moving.rgrd", "masks");
    let files: Vec<_> = fs::read_dir(dir.path().join("masks"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".rgrd"))
        .collect();
    assert_eq!(files.len(), 3);
    let manifest = fs::read_to_string(dir.path().join("masks/masks.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 4);
}

#[test]
fn self_match_and_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "0");
    segment(dir.path(), "case/moving.rgrd", "masks");
    let d = dir.path();
    ok(&["match", "masks", "masks", "case/moving.rgrd", "case/moving.rgrd", "-o", "pairs.txt"], d);
    let rows = manifest_rows(&d.join("pairs.txt"));
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r[0], r[1]);
        assert_eq!(r[4], "1.000000");
    }

    let out = samreg(&["match", "masks", "masks", "case/moving.rgrd", "case/moving.rgrd", "-o", "none.txt", "--epsilon", "1.0"], d);
    assert_eq!(out.status.code(), Some(0));
    assert!(manifest_rows(&d.join("none.txt")).is_empty());
    let fit = samreg(&["fit", "none.txt", "-o", "ddf.rgrd"], d);
    assert_eq!(fit.status.code(), Some(3));
    assert!(!d.join("ddf.rgrd").exists());

    // identity evaluation
    let zero = DisplacementField::zeros(Dims::new(&[64, 64]).unwrap(), "zero");
    write_grid(&d.join("zero.rgrd"), &GridFile::from_field(&zero, &[1.0, 1.0]).unwrap()).unwrap();
    let table = ok(&["eval", "pairs.txt", "zero.rgrd"], d);
    for line in table.lines().skip(1).take(3) {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(&cols[1..], ["1.000000", "0.000000"]);
    }
}

#[test]
fn zero_field_warp_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let case = synth(dir.path(), "3");
    let zero = DisplacementField::zeros(Dims::new(&[64, 64]).unwrap(), "zero");
    write_grid(&dir.path().join("zero.rgrd"), &GridFile::from_field(&zero, &[1.0, 1.0]).unwrap()).unwrap();
    for name in ["moving.rgrd", "moving_masks/m_0_1.rgrd"] {
        let src = case.join(name);
        let src = src.to_str().unwrap();
        ok(&["warp", src, "zero.rgrd", "-o", "out.rgrd"], dir.path());
        assert_eq!(fs::read(dir.path().join("out.rgrd")).unwrap(), fs::read(src).unwrap());
    }
}

#[test]
fn regularization_weight_orders_smoothness() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3");
    let d = dir.path();
    let smooth = |lambda: &str, report: &str| {
        ok(
            &["fit", "case/pairs.txt", "-o", "ddf.rgrd", "--report", report, "--lambda", lambda, "--iters", "100", "--levels", "1"],
            d,
        );
        let text = fs::read_to_string(d.join(report)).unwrap();
        parse_report_value(&text, "smoothness_loss").unwrap()
    };
    let loose = smooth("0", "loose.txt");
    let stiff = smooth("1e6", "stiff.txt");
    assert!(loose > 0.0);
    assert!(stiff <= loose);
}

#[test]
fn synthetic_pipeline_recovers_the_pairing() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3");
    let d = dir.path();
    segment(d, "case/moving.rgrd", "mm");
    segment(d, "case/fixed.rgrd", "fm");
    ok(&["match", "mm", "fm", "case/moving.rgrd", "case/fixed.rgrd", "-o", "pred.txt"], d);
    assert_eq!(manifest_rows(&d.join("pred.txt")).len(), 3);
    assert_eq!(ok(&["score", "pred.txt", "case/pairs.txt"], d).trim(), "1.000000");
}

#[test]
fn shifted_volume_pairs_land_on_the_shifted_slice() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &[
            "synth", "vol", "--size", "48", "--blobs", "2", "--radius-min", "6", "--radius-max", "8",
            "--depth", "5", "--slice-shift", "1", "--seed", "2",
        ],
        d,
    );
    segment(d, "vol/moving.rgrd", "mm");
    segment(d, "vol/fixed.rgrd", "fm");
    ok(&["match", "mm", "fm", "vol/moving.rgrd", "vol/fixed.rgrd", "-o", "pred.txt", "--slice-range", "2"], d);
    let rows = manifest_rows(&d.join("pred.txt"));
    assert!(!rows.is_empty());
    for r in &rows {
        let (ms, fs_): (usize, usize) = (r[2].parse().unwrap(), r[3].parse().unwrap());
        assert_eq!(fs_, ms + 1);
    }
}
