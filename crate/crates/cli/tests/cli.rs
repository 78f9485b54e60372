use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tas(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tas")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tas(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    tas(dir, args).status.code().expect("exit code")
}

fn field(line: &str, key: &str) -> f64 {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in {line}"))
        .parse()
        .unwrap()
}

#[test]
fn gen_writes_labeled_file_deterministically() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "--kind", "split-plane", "--n", "2048", "--parts", "2", "--seed", "7", "--out", "a"]);
    ok(d.path(), &["gen", "--kind", "split-plane", "--n", "2048", "--parts", "2", "--seed", "7", "--out", "b"]);
    let a = fs::read_to_string(d.path().join("a.xyz")).unwrap();
    assert_eq!(a.lines().count(), 2048);
    assert!(a.lines().all(|l| l.split_whitespace().count() == 4));
    assert_eq!(a, fs::read_to_string(d.path().join("b.xyz")).unwrap());
    assert_eq!(code(d.path(), &["gen", "--kind", "split-plane", "--parts", "0"]), 1);
}

#[test]
fn gen_companion_files() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "--kind", "keypoint", "--n", "400", "--out", "k"]);
    assert!(d.path().join("k.keys").exists());
    ok(d.path(), &["gen", "--kind", "partial-complete", "--n", "300", "--count", "2", "--out", "pc"]);
    for name in ["pc-0.partial.xyz", "pc-0.complete.xyz", "pc-1.partial.xyz", "pc-1.complete.xyz"] {
        assert!(d.path().join(name).exists(), "{name}");
    }
    assert_eq!(code(d.path(), &["gen", "--kind", "partial-complete", "--view", "0,0,0"]), 1);
}

#[test]
fn edge_fps_oversamples_the_seam() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "--kind", "split-plane", "--n", "2048", "--seed", "7", "--out", "s"]);
    let plain = ok(d.path(), &["sample", "s.xyz", "--sampler", "fps", "--m", "256"]);
    let edge = ok(d.path(), &["sample", "s.xyz", "--sampler", "edge-fps", "--m", "256", "--lambda", "3.5", "--beta", "0.75"]);
    assert!(field(&edge, "boundary_fraction") > field(&plain, "boundary_fraction"), "{edge} vs {plain}");
    assert_eq!(field(&edge, "m"), 256.0);
    assert!(d.path().join("s.xyz.edge-fps.xyz").exists());
}

#[test]
fn full_fps_is_a_permutation() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "--kind", "multi-part", "--n", "300", "--parts", "3", "--out", "m"]);
    ok(d.path(), &["sample", "m.xyz", "--sampler", "fps", "--m", "300", "--out", "p.xyz"]);
    let mut a: Vec<String> = fs::read_to_string(d.path().join("m.xyz")).unwrap().lines().map(String::from).collect();
    let mut b: Vec<String> = fs::read_to_string(d.path().join("p.xyz")).unwrap().lines().map(String::from).collect();
    assert_ne!(a, b);
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn sample_rejects_bad_requests() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("u.xyz"), "0 0 0\n1 0 0\n0 1 0\n").unwrap();
    assert_eq!(code(d.path(), &["sample", "u.xyz", "--m", "0"]), 1);
    assert_eq!(code(d.path(), &["sample", "u.xyz", "--sampler", "edge-fps", "--m", "2"]), 1);
    assert_eq!(code(d.path(), &["sample", "u.xyz", "--sampler", "grid"]), 1);
    assert_eq!(ok(d.path(), &["sample", "u.xyz", "--m", "2"]).trim(), "m=2");
    assert_eq!(code(d.path(), &["sample", "missing.xyz", "--m", "2"]), 3);
}

#[test]
fn boundary_flags_file() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "--kind", "split-plane", "--n", "1024", "--out", "s"]);
    let line = ok(d.path(), &["boundary", "s.xyz", "--out", "b.xyz"]);
    let flagged = field(&line, "flagged") as usize;
    assert!(flagged > 0 && flagged < 1024);
    let ones = fs::read_to_string(d.path().join("b.xyz")).unwrap().lines().filter(|l| l.ends_with(" 1")).count();
    assert_eq!(ones, flagged);
}

#[test]
fn metric_hand_cases() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    fs::write(p.join("a.xyz"), "0 0 0\n1 0 0\n").unwrap();
    fs::write(p.join("b.xyz"), "0 0 0\n2 0 0\n").unwrap();
    fs::write(p.join("c.xyz"), "0 0 0\n").unwrap();
    fs::write(p.join("pred.xyz"), "0 0 0 0\n1 0 0 1\n2 0 0 1\n3 0 0 1\n").unwrap();
    fs::write(p.join("gt.xyz"), "0 0 0 0\n1 0 0 0\n2 0 0 1\n3 0 0 1\n").unwrap();
    assert!(ok(p, &["metric", "cd", "a.xyz", "a.xyz"]).starts_with("metric=cd value=0.000000000\n"));
    assert_eq!(ok(p, &["metric", "emd", "a.xyz", "b.xyz"]), "metric=emd value=1.000000000\n");
    assert_eq!(
        ok(p, &["metric", "miou", "pred.xyz", "gt.xyz", "--parts", "2"]),
        "metric=shape_miou value=0.583333333\nmetric=part_miou value=0.583333333\nmetric=oa value=0.750000000\n"
    );
    assert_eq!(ok(p, &["metric", "emd-star", "a.xyz", "a.xyz", "--init", "a.xyz"]), "metric=emd_star value=0.000000000\n");
    assert_eq!(ok(p, &["metric", "ap", "c.xyz", "c.xyz"]), "metric=ap value=1.000000000\n");
    assert_eq!(code(p, &["metric", "emd", "a.xyz", "c.xyz"]), 1);
    assert_eq!(code(p, &["metric", "emd-star", "a.xyz", "b.xyz"]), 1);
}

#[test]
fn train_zero_epochs_writes_header_only() {
    let d = tempfile::tempdir().unwrap();
    let line = ok(d.path(), &["train", "--epochs", "0", "--n", "256", "--count", "1", "--sample-counts", "64,16"]);
    assert_eq!(line.trim(), "epochs=0");
    assert_eq!(
        fs::read_to_string(d.path().join("train.csv")).unwrap(),
        "epoch,task_loss,disp_loss,total_loss,metric,alpha,boundary_fraction\n"
    );
    assert!(fs::read(d.path().join("dispnet.ckpt")).unwrap().starts_with(b"DISPNET1"));
}

#[test]
fn displacement_losses_give_distinct_runs() {
    let d = tempfile::tempdir().unwrap();
    let common = ["train", "--n", "512", "--count", "2", "--sample-counts", "128,32", "--epochs", "4", "--seed", "1"];
    let mut a = common.to_vec();
    a.extend(["--disp-loss", "cd", "--csv", "cd.csv"]);
    let mut b = common.to_vec();
    b.extend(["--disp-loss", "emd-star", "--csv", "emd.csv"]);
    ok(d.path(), &a);
    ok(d.path(), &b);
    let cd = fs::read_to_string(d.path().join("cd.csv")).unwrap();
    let emd = fs::read_to_string(d.path().join("emd.csv")).unwrap();
    assert_eq!(cd.lines().count(), 5);
    assert_eq!(emd.lines().count(), 5);
    assert_ne!(cd, emd);
}

#[test]
fn flags_override_config_file() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("run.cfg"),
        "# toy run\nepochs = 5\nn = 256\ncount = 1\nsample_counts = 64,16\nsupervision = fps\n",
    )
    .unwrap();
    ok(d.path(), &["train", "--config", "run.cfg", "--epochs", "2"]);
    assert_eq!(fs::read_to_string(d.path().join("train.csv")).unwrap().lines().count(), 3);
    fs::write(d.path().join("bad.cfg"), "colour = blue\n").unwrap();
    assert_eq!(code(d.path(), &["train", "--config", "bad.cfg"]), 1);
    assert_eq!(code(d.path(), &["train", "--config", "absent.cfg"]), 3);
}

#[test]
fn train_reads_point_files() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "--kind", "keypoint", "--n", "300", "--count", "2", "--out", "k"]);
    let line = ok(
        d.path(),
        &["train", "--task", "keypoint", "--data", "k-0.xyz", "k-1.xyz", "--epochs", "2", "--sample-counts", "64,16"],
    );
    assert_eq!(field(&line, "epochs"), 2.0);
    ok(d.path(), &["gen", "--kind", "partial-complete", "--n", "300", "--count", "2", "--out", "pc"]);
    ok(
        d.path(),
        &["train", "--task", "completion", "--data", "pc-0.partial.xyz", "pc-1.partial.xyz", "--epochs", "1"],
    );
    assert_eq!(code(d.path(), &["train", "--task", "completion", "--data", "k-0.xyz", "--epochs", "1"]), 1);
}

#[test]
fn io_and_usage_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(d.path(), &["gen", "--kind", "split-plane", "--out", "no/such/dir/x"]), 3);
    assert_eq!(code(d.path(), &["frobnicate"]), 1);
    assert_eq!(code(d.path(), &["--help"]), 0);
    let out = Command::new(env!("CARGO_BIN_EXE_tas"))
        .current_dir(d.path())
        .env("TAS_THREADS", "zero")
        .args(["gen", "--kind", "split-plane"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn sweep_emits_one_row_per_cell() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(
        d.path(),
        &[
            "sweep", "--n", "256", "--count", "1", "--sample-counts", "64,16", "--epochs", "1", "--lambdas", "2,3",
            "--betas", "0.5,0.75",
        ],
    );
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "sampler,lambda,beta,boundary_fraction,shape_miou,part_miou,oa");
    assert_eq!(lines.len(), 1 + 1 + 4);
    assert!(lines[1].starts_with("fps,,,"));
    assert!(lines[2].starts_with("edge-fps,2,0.5,"));
    assert_eq!(code(d.path(), &["sweep", "--task", "keypoint", "--epochs", "1"]), 1);
}
