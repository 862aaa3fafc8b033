use std::path::Path;
use std::process::{Command, Output};

use nca_core::{CheckpointMeta, ModelCheckpoint, NcaParams, RgbImage, RngStream};

fn nca(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nca"))
        .args(args)
        .current_dir(dir)
        .env_remove("NCA_LOG")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stdout);
    serde_json::from_str(text.lines().last().expect("stdout line")).expect("json on stdout")
}

fn checker(dir: &Path, name: &str, size: usize) {
    RgbImage::from_fn(size, size, |i, j| {
        if (i / 4 + j / 4) % 2 == 0 {
            [90, 13, 13]
        } else {
            [13, 13, 90]
        }
    })
    .write_png(dir.join(name))
    .unwrap();
}

fn frozen_model(path: &Path) {
    // Freshly initialized parameters have W2 = 0: the identity dynamics.
    let params = NcaParams::<f32>::init(4, 8, &mut RngStream::new(1));
    ModelCheckpoint::new(
        params,
        CheckpointMeta {
            seed: 1,
            train_steps: 0,
        },
    )
    .save(path)
    .unwrap();
}

#[test]
fn help_documents_protocol_defaults() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["train", "rollout", "measure", "sweep", "report"] {
        let o = nca(dir.path(), &[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
    }
    let help = String::from_utf8(nca(dir.path(), &["rollout", "--help"]).stdout).unwrap();
    assert!(help.contains("T = 32") && help.contains("[default: 32]"));
    assert!(help.contains("[default: 100]"));
    let help = String::from_utf8(nca(dir.path(), &["train", "--help"]).stdout).unwrap();
    assert!(help.contains("[default: 6000]"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    checker(dir.path(), "t.png", 8);
    let o = nca(
        dir.path(),
        &["train", "--target", "t.png", "--channels", "4"],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--hidden"));

    let o = nca(
        dir.path(),
        &[
            "train",
            "--target",
            "t.png",
            "--channels",
            "0",
            "--hidden",
            "8",
        ],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("channels must be ≥ 1"));

    let o = nca(
        dir.path(),
        &[
            "train",
            "--target",
            "t.png",
            "--channels",
            "4",
            "--hidden",
            "8",
            "--bogus",
        ],
    );
    assert_eq!(code(&o), 2);

    frozen_model(&dir.path().join("m.nca"));
    assert_eq!(
        code(&nca(
            dir.path(),
            &["rollout", "--model", "m.nca", "--frames", "0"]
        )),
        2
    );
    assert_eq!(code(&nca(dir.path(), &["measure"])), 2);
    let both = nca(
        dir.path(),
        &["measure", "--model", "m.nca", "--frames-dir", "."],
    );
    assert_eq!(code(&both), 2);
}

#[test]
fn io_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = nca(
        dir.path(),
        &[
            "train",
            "--target",
            "missing.png",
            "--channels",
            "4",
            "--hidden",
            "8",
        ],
    );
    assert_eq!(code(&o), 3);

    std::fs::write(dir.path().join("junk.nca"), b"garbage").unwrap();
    assert_eq!(
        code(&nca(
            dir.path(),
            &["rollout", "--model", "junk.nca", "--frames", "2"]
        )),
        5
    );

    std::fs::write(
        dir.path().join("two.csv"),
        "target,C,D,diff,ratio,psi,final_loss,seed,epochs,wall_ms,status\n\
         t,8,16,8,2,0.5,0.1,1,10,0,ok\n\
         t,8,32,24,4,0.9,0.1,2,10,0,ok\n",
    )
    .unwrap();
    let o = nca(dir.path(), &["report", "--csv", "two.csv"]);
    assert_eq!(code(&o), 5);
    assert!(String::from_utf8_lossy(&o.stderr).contains("insufficient data"));
}

#[test]
fn frozen_model_renders_identical_frames() {
    let dir = tempfile::tempdir().unwrap();
    frozen_model(&dir.path().join("m.nca"));
    let o = nca(
        dir.path(),
        &[
            "rollout",
            "--model",
            "m.nca",
            "--frames",
            "3",
            "--warmup-frames",
            "1",
            "--steps-per-frame",
            "4",
            "--size",
            "8x8",
        ],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["frames"], 4);
    let frames: Vec<Vec<u8>> = (0..4)
        .map(|i| std::fs::read(dir.path().join(format!("frames/frame_{i:06}.png"))).unwrap())
        .collect();
    assert!(frames.windows(2).all(|w| w[0] == w[1]));

    let o = nca(dir.path(), &["measure", "--frames-dir", "frames"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["mean_psi"], 0.0);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("psi.json")).unwrap())
            .unwrap();
    assert_eq!(summary["mean_psi"], 0.0);
    assert_eq!(summary["frames"], 4);
}

#[test]
fn train_rollout_measure_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    checker(dir.path(), "t.png", 16);
    let train = |out: &str| {
        let o = nca(
            dir.path(),
            &[
                "train",
                "--target",
                "t.png",
                "--channels",
                "4",
                "--hidden",
                "16",
                "--epochs",
                "15",
                "--loss",
                "mse",
                "--t-min",
                "4",
                "--t-max",
                "8",
                "--pool-size",
                "8",
                "--seed",
                "3",
                "--out",
                out,
            ],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        stdout_json(&o)
    };
    let first = train("a.nca");
    train("b.nca");
    assert!(first["final_loss"].as_f64().unwrap().is_finite());
    let a = std::fs::read(dir.path().join("a.nca")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.nca")).unwrap());
    assert!(dir.path().join("a.nca.loss.csv").exists());

    let protocol = [
        "--warmup-frames",
        "2",
        "--steps-per-frame",
        "8",
        "--size",
        "16x16",
        "--seed",
        "9",
    ];
    let mut args = vec!["rollout", "--model", "a.nca", "--frames", "3"];
    args.extend(protocol);
    assert_eq!(code(&nca(dir.path(), &args)), 0);
    let offline = nca(
        dir.path(),
        &[
            "measure",
            "--frames-dir",
            "frames",
            "--out-csv",
            "f.csv",
            "--out-json",
            "f.json",
        ],
    );
    let mut args = vec![
        "measure",
        "--model",
        "a.nca",
        "--measured-frames",
        "3",
        "--out-csv",
        "m.csv",
        "--out-json",
        "m.json",
    ];
    args.extend(protocol);
    let direct = nca(dir.path(), &args);
    assert_eq!(code(&direct), 0);
    assert_eq!(
        stdout_json(&offline)["mean_psi"],
        stdout_json(&direct)["mean_psi"]
    );
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("f.csv"), read("m.csv"));
}

#[test]
fn sweep_plan_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("full.json"),
        r#"{"targets": ["bubbly.png", "chequered.png", "interlaced.png", "cracked.png"]}"#,
    )
    .unwrap();
    let o = nca(
        dir.path(),
        &[
            "sweep",
            "--config",
            "full.json",
            "--out",
            "s.csv",
            "--plan-only",
        ],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["planned"], 512);

    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"targets": ["a.png"], "measure": {"alpha": "x"}}"#,
    )
    .unwrap();
    let o = nca(
        dir.path(),
        &["sweep", "--config", "bad.json", "--out", "s.csv"],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("measure.alpha"));
}

#[test]
fn small_sweep_and_report() {
    let dir = tempfile::tempdir().unwrap();
    checker(dir.path(), "t.png", 8);
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{
            "c_values": [3, 4], "d_values": [6, 8], "targets": ["t.png"], "master_seed": 5,
            "train": {"height": 8, "width": 8, "loss": "mse", "epochs": 4, "t_min": 2, "t_max": 4,
                      "batch_size": 2, "pool_size": 4},
            "measure": {"steps_per_frame": 2, "warmup_frames": 1, "measured_frames": 3, "iterations": 20}
        }"#,
    )
    .unwrap();
    let o = nca(
        dir.path(),
        &[
            "sweep", "--config", "cfg.json", "--out", "s1.csv", "--jobs", "1",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["ok"], 4);
    let o = nca(
        dir.path(),
        &[
            "sweep", "--config", "cfg.json", "--out", "s2.csv", "--jobs", "4",
        ],
    );
    assert_eq!(code(&o), 0);
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("s1.csv"), read("s2.csv"));

    let report = |seed: &str| {
        let o = nca(
            dir.path(),
            &[
                "report", "--csv", "s1.csv", "--perms", "500", "--seed", seed,
            ],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("estimator"));
        o.stdout
    };
    let out = report("1");
    assert_eq!(out, report("1"));
    let json: serde_json::Value = serde_json::from_slice(&out).unwrap();
    assert_eq!(json["n"], 4);
    assert_eq!(json["n_perm"], 500);
    let r = json["r_ratio"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&r));
}
