use std::path::Path;
use std::process::{Command, Output};

use kgin::kspace::load_dataset;

const TINY: &str = "nx = 16\nwidth = 16\ndepth = 3\ncases = 3\nprior_epochs = 2\nbatch = 0\n\
max_iters = 20\ncs_iters = 20\naccels = 4\ndisc_width = 8\ndisc_layers = 1\n";

fn kgin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgin"))
        .current_dir(dir)
        .env_remove("KGIN_SEED")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn kgin")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = kgin(dir, args);
    assert!(
        out.status.success(),
        "kgin {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Exit code and the single `kgin: error` line.
fn fails(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = kgin(dir, args);
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("kgin: error")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    (out.status.code().unwrap(), lines[0].to_string())
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    dir
}

#[test]
fn undersampling_484_spokes_at_3x_keeps_161() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "tiny.cfg", "--spokes", "484", "--coils", "1", "simulate", "--out", "full.kgd"]);
    ok(
        d,
        &["--config", "tiny.cfg", "--spokes", "484", "--coils", "1", "undersample", "--input", "full.kgd", "--out", "r3.kgd", "--accel", "3"],
    );
    assert_eq!(load_dataset(&d.join("full.kgd")).unwrap().len(), 484 * 16);
    assert_eq!(load_dataset(&d.join("r3.kgd")).unwrap().len(), 161 * 16);
}

#[test]
fn evaluate_against_itself() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "tiny.cfg", "gen-phantom", "--out", "p.pgm"]);
    let out = ok(d, &["evaluate", "--image", "p.pgm", "--truth", "p.pgm"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "ssim=1 rmse=0 psnr_db=inf\n");
}

#[test]
fn usage_errors_exit_1() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(fails(d, &["--no-such-flag"]).0, 1);
    std::fs::write(d.join("bad.cfg"), "nx = 16\ncolour = blue\n").unwrap();
    let (code, line) = fails(d, &["--config", "bad.cfg", "gen-phantom", "--out", "p.pgm"]);
    assert_eq!(code, 1);
    assert!(line.contains("kind=usage") && line.contains("colour"), "{line}");
    let out = Command::new(env!("CARGO_BIN_EXE_kgin"))
        .current_dir(d)
        .env("KGIN_SEED", "minus one")
        .args(["gen-phantom", "--out", "p.pgm"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("p.pgm").exists());
}

#[test]
fn data_errors_exit_2() {
    let dir = setup();
    let d = dir.path();
    let (code, line) = fails(d, &["evaluate", "--image", "nope.pgm", "--truth", "nope.pgm"]);
    assert_eq!(code, 2);
    assert!(line.contains("kind=io"), "{line}");

    std::fs::write(d.join("junk.kgd"), b"not a dataset at all").unwrap();
    let (code, line) = fails(d, &["--config", "tiny.cfg", "recon-zf", "--input", "junk.kgd", "--out", "z.pgm"]);
    assert_eq!(code, 2);
    assert!(line.contains("kind=format"), "{line}");

    // a dataset that does not fit the configured geometry
    ok(d, &["--config", "tiny.cfg", "simulate", "--out", "full.kgd"]);
    let (code, _) = fails(d, &["--config", "tiny.cfg", "--coils", "2", "recon-zf", "--input", "full.kgd", "--out", "z.pgm"]);
    assert_eq!(code, 2);
    let (code, _) = fails(d, &["--config", "tiny.cfg", "recon-zf", "--input", "full.kgd", "--out", "missing/z.pgm"]);
    assert_eq!(code, 2);
}

#[test]
fn flags_beat_environment_beats_files() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("r.cfg"), format!("{TINY}phantom = random\nseed = 1\n")).unwrap();
    let run = |env: Option<&str>, extra: &[&str], out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_kgin"));
        c.current_dir(d).env_remove("KGIN_SEED");
        if let Some(v) = env {
            c.env("KGIN_SEED", v);
        }
        let mut args = vec!["--config", "r.cfg"];
        args.extend(extra);
        args.extend(["gen-phantom", "--out", out]);
        assert!(c.args(args).status().unwrap().success());
        std::fs::read(d.join(out)).unwrap()
    };
    let file = run(None, &[], "a.pgm");
    let env = run(Some("2"), &[], "b.pgm");
    let flag = run(Some("2"), &["--seed", "3"], "c.pgm");
    assert_ne!(file, env);
    assert_eq!(env, run(None, &["--seed", "2"], "d.pgm"));
    assert_eq!(flag, run(None, &["--seed", "3"], "e.pgm"));
}

#[test]
fn pipeline_is_idempotent_and_reports_every_cell() {
    let dir = setup();
    let d = dir.path();
    let cfg = ["--config", "tiny.cfg"];
    let with = |rest: &[&str]| -> Vec<String> { cfg.iter().chain(rest).map(|s| s.to_string()).collect() };
    let run = |rest: &[&str]| {
        let args = with(rest);
        ok(d, &args.iter().map(String::as_str).collect::<Vec<_>>());
    };
    run(&["make-cohort", "--out-dir", "c1"]);
    run(&["make-cohort", "--out-dir", "c2"]);
    for f in ["manifest.txt", "case_000.kgd", "case_002.pgm"] {
        assert_eq!(std::fs::read(d.join("c1").join(f)).unwrap(), std::fs::read(d.join("c2").join(f)).unwrap(), "{f}");
    }
    run(&["simulate", "--out", "full.kgd", "--truth-out", "truth.pgm"]);
    run(&["train-prior", "--manifest", "c1/manifest.txt", "--out", "p1.kgw", "--validation", "full.kgd"]);
    run(&["train-prior", "--manifest", "c2/manifest.txt", "--out", "p2.kgw"]);
    assert_eq!(std::fs::read(d.join("p1.kgw")).unwrap(), std::fs::read(d.join("p2.kgw")).unwrap());
    assert!(d.join("p1.trace.csv").exists());
    let tau = std::fs::read_to_string(d.join("p1.tau-x4.cfg")).unwrap();
    assert!(tau.lines().any(|l| l.starts_with("tau = ")), "{tau}");

    for r in ["2", "4"] {
        let kgd = format!("r{r}.kgd");
        run(&["undersample", "--input", "full.kgd", "--out", &kgd, "--accel", r]);
        let common = ["--input", kgd.as_str(), "--truth", "truth.pgm", "--metrics", "m.csv", "--accel", r];
        let mut inr = vec!["--config", "p1.tau-x4.cfg", "recon-inr", "--prior", "p1.kgw", "--out"];
        let name = format!("inr{r}.pgm");
        inr.push(&name);
        inr.extend(common);
        run(&inr);
        for (cmd, out) in [("recon-cs", "cs.pgm"), ("recon-zf", "zf.pgm")] {
            let mut a = vec![cmd, "--out", out];
            a.extend(common);
            run(&a);
        }
    }
    // same inputs, same image
    run(&["--config", "p1.tau-x4.cfg", "recon-inr", "--prior", "p1.kgw", "--input", "r4.kgd", "--out", "again.pgm"]);
    assert_eq!(std::fs::read(d.join("inr4.pgm")).unwrap(), std::fs::read(d.join("again.pgm")).unwrap());

    let metrics = std::fs::read_to_string(d.join("m.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 6);
    ok(d, &["report", "--metrics", "m.csv", "--out", "s.csv", "--image", "inr4.pgm", "cs.pgm", "truth.pgm", "--profiles", "prof.csv"]);
    let summary = std::fs::read_to_string(d.join("s.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 3 * 2, "{summary}");
    assert!(rows[0].starts_with("zero-filled,2,1,"));
    let prof = std::fs::read_to_string(d.join("prof.csv")).unwrap();
    assert_eq!(prof.lines().next(), Some("x,inr4,cs,truth"));
    assert_eq!(prof.lines().count(), 17);

    // a hole in the grid is an error, not a shorter table
    std::fs::write(d.join("holey.csv"), metrics.lines().take(5).collect::<Vec<_>>().join("\n")).unwrap();
    let (code, line) = fails(d, &["report", "--metrics", "holey.csv", "--out", "s2.csv"]);
    assert_eq!(code, 2);
    assert!(line.contains("kind=data"), "{line}");
}
