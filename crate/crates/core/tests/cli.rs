//! End-to-end runs of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

use deblur_mfi::sequence::{read_sequence, write_sequence, FrameSequence};
use deblur_mfi::Tensor;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deblur-mfi"))
        .args(args)
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_frames(dir: &Path, n: usize, size: usize) {
    let frames = (0..n)
        .map(|i| {
            Tensor::from_fn([1, 3, size, size], |_, c, y, x| {
                (((x + 2 * i) * 5 + y * 3 + c * 7) % 17) as f32 / 16.0
            })
        })
        .collect();
    write_sequence(&FrameSequence::new(frames, 30.0).unwrap(), dir).unwrap();
}

fn pngs(dir: &Path) -> Vec<Vec<u8>> {
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    names.sort();
    names.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

#[test]
fn synth_blur_writes_complete_windows() {
    let dir = tempfile::tempdir().unwrap();
    let (sharp, blurry) = (dir.path().join("sharp"), dir.path().join("blurry"));
    write_frames(&sharp, 33, 8);
    let out = bin(&[
        "synth-blur",
        "--in",
        path(&sharp),
        "--out",
        path(&blurry),
        "--k",
        "8",
        "--tau",
        "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let seq = read_sequence(&blurry).unwrap();
    assert_eq!(seq.len(), 3);
    assert_eq!(seq.fps(), 30.0 / 8.0);

    let short = dir.path().join("short");
    write_frames(&short, 10, 8);
    let out = bin(&["synth-blur", "--in", path(&short), "--out", path(&blurry)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 14"));
}

#[test]
fn init_infer_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("rb.dmfi");
    let (input, out1, out2) = (dir.path().join("in"), dir.path().join("o1"), dir.path().join("o2"));
    write_frames(&input, 4, 16);

    let init = bin(&[
        "init-weights",
        "--arch",
        "rb",
        "--seed",
        "3",
        "--preset",
        "tiny",
        "--out",
        path(&weights),
    ]);
    assert!(init.status.success(), "{}", String::from_utf8_lossy(&init.stderr));

    for out in [&out1, &out2] {
        let r = bin(&[
            "infer",
            "--weights",
            path(&weights),
            "--in",
            path(&input),
            "--out",
            path(out),
            "--n-tst",
            "2",
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let seq = read_sequence(&out1).unwrap();
    assert_eq!(seq.len(), 9);
    assert_eq!(seq.size(), (16, 16));
    assert_eq!(seq.fps(), 240.0);
    assert_eq!(pngs(&out1), pngs(&out2));

    let bs = dir.path().join("bs");
    let r = bin(&[
        "infer",
        "--weights",
        path(&weights),
        "--in",
        path(&input),
        "--out",
        path(&bs),
        "--stage",
        "bs",
        "--t-list",
        "1/2",
    ]);
    assert!(r.status.success());
    assert_eq!(read_sequence(&bs).unwrap().len(), 3);

    let report = dir.path().join("report.tsv");
    let r = bin(&[
        "eval",
        "--pred",
        path(&out1),
        "--gt",
        path(&out2),
        "--metrics",
        "psnr,ssim",
        "--report",
        path(&report),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 9 + 9 + 2);
    assert!(text.contains("psnr\tmean\t100.000000"));
    assert!(text.contains("ssim\tmean\t1.000000"));
}

#[test]
fn gradcheck_reports_success() {
    let r = bin(&["gradcheck", "--op", "warp", "--seed", "1", "--instances", "3"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stdout));
    assert!(String::from_utf8_lossy(&r.stdout).contains("max relative error"));
    let r = bin(&["gradcheck", "--op", "fac", "--seed", "1", "--instances", "2"]);
    assert!(r.status.success());
    assert!(String::from_utf8_lossy(&r.stdout).contains("flow gradient exactly zero: true"));
}

#[test]
fn exit_codes_separate_validation_from_io() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = dir.path().join("out");
    assert_eq!(
        bin(&["synth-blur", "--in", path(&missing), "--out", path(&out)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));

    let weights = dir.path().join("w.dmfi");
    std::fs::write(&weights, b"not a weight file").unwrap();
    let input = dir.path().join("in");
    write_frames(&input, 4, 8);
    let args = |t: &'static str| {
        [
            "infer",
            "--weights",
            path(&weights),
            "--in",
            path(&input),
            "--out",
            path(&out),
            "--t-list",
            t,
        ]
        .map(String::from)
    };
    assert_eq!(
        Command::new(env!("CARGO_BIN_EXE_deblur-mfi"))
            .args(args("1/2"))
            .status()
            .unwrap()
            .code(),
        Some(1)
    );
    assert_eq!(
        Command::new(env!("CARGO_BIN_EXE_deblur-mfi"))
            .args(args("9/8"))
            .status()
            .unwrap()
            .code(),
        Some(1)
    );
    std::fs::remove_file(&weights).unwrap();
    assert_eq!(
        Command::new(env!("CARGO_BIN_EXE_deblur-mfi"))
            .args(args("1/2"))
            .status()
            .unwrap()
            .code(),
        Some(2)
    );
}
