use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use sfd_core::archive::Archive;
use sfd_core::image::ImageTensor;
use sfd_core::training::synth_image;

const TOY_CONFIG: &str = r#"
total_steps = 3
batch_size = 2
patch_size = 32
checkpoint_interval = 0
output_dir = "run"

[data]
corpus_dir = "corpus"

[generator]
num_blocks = 1
num_features = 8
growth_channels = 8
"#;

fn sfd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON result")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    checkpoint: PathBuf,
}

/// One short training run shared by every test in this file.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let res = stdout_json(&sfd(&["synth-corpus", s(&root.join("corpus")), "--count", "4", "--size", "48"]));
        assert_eq!(res["artifacts"].as_array().unwrap().len(), 4);
        std::fs::write(root.join("run.toml"), TOY_CONFIG).unwrap();
        let res = stdout_json(&sfd(&["train", s(&root.join("run.toml"))]));
        let checkpoint = PathBuf::from(res["summary"]["final_checkpoint"].as_str().unwrap());
        assert!(checkpoint.exists());
        assert_eq!(res["summary"]["last"]["step"], 3);
        Fixture {
            _dir: dir,
            root,
            checkpoint,
        }
    })
}

fn write_images(dir: &Path, n: usize, size: usize, seed: u64) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    (0..n)
        .map(|i| {
            let p = dir.join(format!("img_{i:02}.png"));
            synth_image(size, seed + i as u64).save_png(&p).unwrap();
            p
        })
        .collect()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (headers, rows)
}

#[test]
fn train_writes_checkpoint_and_log() {
    let f = fixture();
    assert!(f.root.join("run/train_log.ndjson").exists());
    assert!(f.checkpoint.starts_with(f.root.join("run")));
}

#[test]
fn train_overrides_apply() {
    let f = fixture();
    let cfg = f.root.join("override.toml");
    std::fs::write(&cfg, TOY_CONFIG.replace("output_dir = \"run\"", "output_dir = \"run_override\"")).unwrap();
    let res = stdout_json(&sfd(&["train", s(&cfg), "--seed", "9", "--steps-override", "2"]));
    assert_eq!(res["summary"]["last"]["step"], 2);
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, TOY_CONFIG.replace("num_blocks", "num_blockz")).unwrap();
    let out = sfd(&["train", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("generator") && err.contains("num_blockz"), "{err}");
}

#[test]
fn missing_resume_checkpoint_is_an_io_error() {
    let f = fixture();
    let missing = f.root.join("nope.sfd");
    let out = sfd(&["train", s(&f.root.join("run.toml")), "--resume", s(&missing)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.sfd"));
}

#[test]
fn missing_corpus_fails_validation_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, TOY_CONFIG).unwrap();
    let out = sfd(&["train", s(&cfg)]);
    assert_ne!(out.status.code(), Some(0));
    assert!(!dir.path().join("run/train_log.ndjson").exists());
}

#[test]
fn eval_sr_scores_pairs_and_counts_unpaired() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (lr_dir, hr_dir) = (dir.path().join("lr"), dir.path().join("hr"));
    std::fs::create_dir_all(&lr_dir).unwrap();
    for hr in write_images(&hr_dir, 5, 32, 100) {
        let img = ImageTensor::load(&hr).unwrap();
        let lr = sfd_core::degrade::degrade(&img, &Default::default(), 4).unwrap();
        lr.save_png(&lr_dir.join(hr.file_name().unwrap())).unwrap();
    }
    let out = dir.path().join("sr.csv");
    let res = stdout_json(&sfd(&["eval-sr", s(&f.checkpoint), s(&lr_dir), s(&hr_dir), "--out", s(&out)]));
    assert_eq!(res["warnings"], 0);
    let (headers, rows) = csv_rows(&out);
    assert_eq!(headers, ["image", "psnr_db", "exact_match", "ssim", "d_score"]);
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[5][0], "mean");
    let mean: f64 = rows[..5].iter().map(|r| r[1].parse::<f64>().unwrap()).sum::<f64>() / 5.0;
    assert!((mean - rows[5][1].parse::<f64>().unwrap()).abs() < 1e-9);

    std::fs::remove_file(hr_dir.join("img_02.png")).unwrap();
    let res = stdout_json(&sfd(&["eval-sr", s(&f.checkpoint), s(&lr_dir), s(&hr_dir), "--out", s(&out)]));
    assert_eq!(res["warnings"], 1);
    assert_eq!(csv_rows(&out).1.len(), 5);
}

#[test]
fn score_iqa_rows_and_correlation() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let imgs = write_images(&dir.path().join("imgs"), 10, 48, 200);
    let out = dir.path().join("scores.csv");
    let res = stdout_json(&sfd(&["score-iqa", s(&f.checkpoint), s(&dir.path().join("imgs")), "--out", s(&out)]));
    assert_eq!(res["summary"]["images"], 10);
    let (headers, rows) = csv_rows(&out);
    assert_eq!(headers, ["image", "s_d", "s_o", "s_lp", "s_aver", "mean_sigmoid"]);
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r[2].is_empty()), "no text embedder: s_o is empty");

    let opinions = dir.path().join("mos.csv");
    let mut body = String::from("image,opinion\n");
    for (i, p) in imgs.iter().enumerate() {
        body.push_str(&format!("{},{}\n", p.file_name().unwrap().to_str().unwrap(), i % 4));
    }
    std::fs::write(&opinions, body).unwrap();
    let res = stdout_json(&sfd(&[
        "score-iqa",
        s(&f.checkpoint),
        s(&dir.path().join("imgs")),
        "--out",
        s(&out),
        "--opinions",
        s(&opinions),
    ]));
    assert_eq!(res["summary"]["correlation"]["n"], 10);
    let (headers, rows) = csv_rows(&dir.path().join("scores_correlation.csv"));
    assert_eq!(headers, ["n", "plcc", "srcc", "krcc"]);
    assert_eq!(rows.len(), 1);
}

#[test]
fn score_iqa_skips_unreadable_images() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    write_images(dir.path(), 3, 32, 300);
    std::fs::write(dir.path().join("broken.png"), b"not a png").unwrap();
    let out = dir.path().join("scores.csv");
    let res = stdout_json(&sfd(&["score-iqa", s(&f.checkpoint), s(dir.path()), "--out", s(&out)]));
    assert_eq!(res["warnings"], 1);
    assert_eq!(csv_rows(&out).1.len(), 3);
}

#[test]
fn score_iqa_rejects_zero_alphas() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    write_images(dir.path(), 1, 32, 0);
    let out = sfd(&[
        "score-iqa",
        s(&f.checkpoint),
        s(dir.path()),
        "--out",
        s(&dir.path().join("o.csv")),
        "--alpha1",
        "0",
        "--alpha2",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha1 + alpha2"));
}

#[test]
fn dump_features_archive_is_named_and_deterministic() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    write_images(&dir.path().join("imgs"), 8, 32, 400);
    let imgs = dir.path().join("imgs");
    let (a, b) = (dir.path().join("a.sfd"), dir.path().join("b.sfd"));
    for out in [&a, &b] {
        stdout_json(&sfd(&["dump-features", s(&f.checkpoint), s(&imgs), "--tap", "feat-d-upsample-3", "--out", s(out)]));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let archive = Archive::load(&a).unwrap();
    assert_eq!(archive.meta["tap"], "feat-d-upsample-3");
    let names: Vec<_> = archive.with_prefix("").map(|(n, t)| (n.to_string(), t.ndim())).collect();
    assert_eq!(names.len(), 8);
    assert!(names.iter().all(|(_, d)| *d == 1));
    assert_eq!(names[0].0, "0000:img_00.png");
}

#[test]
fn dump_features_unknown_tap_lists_taps() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    write_images(dir.path(), 1, 32, 0);
    let out = sfd(&["dump-features", s(&f.checkpoint), s(dir.path()), "--tap", "nope", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope") && err.contains("feat-d-upsample-3") && err.contains("encoder/global"), "{err}");
    let res = stdout_json(&sfd(&["dump-features", s(&f.checkpoint), "--list-taps"]));
    assert!(res["summary"]["taps"].as_array().unwrap().len() >= 7);
}

#[test]
fn correlate_reports_all_three() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    std::fs::write(&p, "a,b\n1,1\n2,3\n3,2\n4,4\n").unwrap();
    let res = stdout_json(&sfd(&["correlate", s(&p), "--x", "a", "--y", "b"]));
    assert_eq!(res["summary"]["n"], 4);
    assert!((res["summary"]["srcc"].as_f64().unwrap() - 0.8).abs() < 1e-12);
}

#[test]
fn usage_errors_exit_with_validation_code() {
    assert_eq!(sfd(&["train"]).status.code(), Some(1));
    assert_eq!(sfd(&["no-such-command"]).status.code(), Some(1));
}
