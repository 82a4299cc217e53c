//! End-to-end checks of the `mmc` binary: exit codes, artifact layout,
//! config precedence, and run-to-run determinism, all through real process
//! invocations on tiny recipes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmc"))
        .args(args)
        .output()
        .expect("spawn mmc")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn assert_ok(out: &Output) {
    assert_eq!(
        code(out),
        0,
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Overrides shrinking the model and run enough for test speed.
const TINY: &[&str] = &[
    "train.steps=2",
    "train.batch_size=2",
    "encoder.depth=1",
    "encoder.embed_dim=32",
    "encoder.heads=2",
];

fn synth_tiny(dir: &Path) {
    let out = mmc(&[
        "synth",
        "--n-train",
        "6",
        "--n-test",
        "4",
        "--seed",
        "3",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
}

fn train_tiny(data: &Path, run: &Path, extra: &[&str]) {
    let mut args = vec![
        "train",
        "--variant",
        "rgb",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--seed",
        "3",
    ];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    assert_ok(&mmc(&args));
}

#[test]
fn exit_codes_follow_the_contract() {
    // Success paths that need no files.
    assert_eq!(code(&mmc(&["--help"])), 0);
    assert_eq!(code(&mmc(&["--version"])), 0);
    assert_eq!(code(&mmc(&["train", "--help"])), 0);

    // Usage errors: malformed invocations exit 2.
    assert_eq!(code(&mmc(&["conjure"])), 2, "unknown subcommand");
    assert_eq!(code(&mmc(&["eval", "--frobnicate"])), 2, "unknown flag");
    assert_eq!(code(&mmc(&[])), 2, "missing subcommand");
    assert_eq!(code(&mmc(&["train", "--data", "x"])), 2, "missing --out");
    assert_eq!(code(&mmc(&["synth"])), 2, "missing --out");
    assert_eq!(code(&mmc(&["eval"])), 2, "no model source");
    assert_eq!(
        code(&mmc(&["eval", "--split", "dusk"])),
        2,
        "invalid split name"
    );
    assert_eq!(
        code(&mmc(&["corrupt", "--severity", "9"])),
        2,
        "severity out of range"
    );
    assert_eq!(
        code(&mmc(&["attack", "--eps-grid", "a,b"])),
        2,
        "non-numeric eps grid"
    );
    assert_eq!(code(&mmc(&["report"])), 2, "report needs inputs");
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("o");
    assert_eq!(
        code(&mmc(&[
            "synth",
            "--out",
            out_dir.to_str().unwrap(),
            "data,n_train=4"
        ])),
        2,
        "malformed KEY=VALUE override"
    );

    // Runtime errors: well-formed command lines that fail while running.
    assert_eq!(
        code(&mmc(&[
            "train",
            "--data",
            "/definitely/not/here",
            "--out",
            out_dir.to_str().unwrap()
        ])),
        1,
        "missing dataset"
    );
    assert_eq!(
        code(&mmc(&["report", "/definitely/not/here.csv"])),
        1,
        "missing report input"
    );
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "[train]\nlearning_rate = 1\n").unwrap();
    let synth_args = [
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ];
    assert_eq!(code(&mmc(&synth_args)), 1, "unknown config key");
}

#[test]
fn synth_split_counts_match_the_recipe() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    let out = mmc(&[
        "synth",
        "--n-train",
        "200",
        "--n-test",
        "80",
        "--day-fraction",
        "0.6",
        "--seed",
        "1",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let manifest = fs::read_to_string(dir.join("manifest.tsv")).unwrap();
    let mut train_day = 0;
    let mut train_night = 0;
    let mut test_rows = 0;
    for line in manifest.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        match (fields[1], fields[2]) {
            ("train", "day") => train_day += 1,
            ("train", "night") => train_night += 1,
            ("test", _) => test_rows += 1,
            other => panic!("unexpected split/domain {other:?}"),
        }
    }
    assert_eq!(train_day, 120);
    assert_eq!(train_night, 80);
    assert_eq!(test_rows, 80);
    // The dataset directory is self-describing too.
    assert!(dir.join("manifest.txt").is_file());
    assert!(dir.join("config.txt").is_file());
}

#[test]
fn train_runs_are_self_describing_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_tiny(&data);

    let run1 = tmp.path().join("run1");
    train_tiny(&data, &run1, &[]);
    for f in ["losses.csv", "model.mmck", "manifest.txt", "config.txt"] {
        assert!(run1.join(f).is_file(), "missing {f}");
    }
    let losses = fs::read_to_string(run1.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 3, "header + one row per step");
    assert!(losses.starts_with("step,variant,network,"));

    // Same recipe, second directory: byte-identical checkpoint and log.
    let run2 = tmp.path().join("run2");
    train_tiny(&data, &run2, &[]);
    assert_eq!(
        fs::read(run1.join("model.mmck")).unwrap(),
        fs::read(run2.join("model.mmck")).unwrap(),
        "checkpoint bytes diverged between identical runs"
    );
    assert_eq!(
        fs::read(run1.join("losses.csv")).unwrap(),
        fs::read(run2.join("losses.csv")).unwrap()
    );

    // Eval through the manifest and through explicit paths agree.
    let e1 = tmp.path().join("e1");
    assert_ok(&mmc(&[
        "eval",
        "--manifest",
        run1.to_str().unwrap(),
        "--out",
        e1.to_str().unwrap(),
    ]));
    let e2 = tmp.path().join("e2");
    assert_ok(&mmc(&[
        "eval",
        "--ckpt",
        run1.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        e2.to_str().unwrap(),
    ]));
    let csv1 = fs::read_to_string(e1.join("eval.csv")).unwrap();
    let csv2 = fs::read_to_string(e2.join("eval.csv")).unwrap();
    assert_eq!(csv1, csv2);
    assert!(csv1.starts_with("run_id,variant,split,class,ap,f1,n_gt,n_det"));
    assert!(csv1.contains("rgb-seed3,rgb,all,"), "{csv1}");

    // Without --out the table lands on stdout instead.
    let stdout_eval = mmc(&["eval", "--manifest", run1.to_str().unwrap()]);
    assert_ok(&stdout_eval);
    assert_eq!(String::from_utf8_lossy(&stdout_eval.stdout), csv1);

    // --split filters the emitted rows.
    let night = mmc(&[
        "eval",
        "--manifest",
        run1.to_str().unwrap(),
        "--split",
        "night",
    ]);
    assert_ok(&night);
    let night_csv = String::from_utf8_lossy(&night.stdout).to_string();
    for line in night_csv.lines().skip(1) {
        assert!(line.split(',').nth(2) == Some("night"), "{line}");
    }
}

#[test]
fn config_file_loses_to_command_line_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_tiny(&data);
    let cfg = tmp.path().join("exp.cfg");
    fs::write(
        &cfg,
        "[train]\nsteps = 9\nbatch_size = 2\n\n[encoder]\ndepth = 1\nembed_dim = 32\nheads = 2\n",
    )
    .unwrap();
    let run = tmp.path().join("run");
    assert_ok(&mmc(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--variant",
        "rgb",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--seed",
        "3",
        "train.steps=2",
    ]));
    let losses = fs::read_to_string(run.join("losses.csv")).unwrap();
    assert_eq!(
        losses.lines().count(),
        3,
        "override train.steps=2 must beat the file's steps = 9"
    );
    // The effective snapshot records the winning values.
    let snapshot = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(snapshot.contains("steps = 2"), "{snapshot}");
    assert!(snapshot.contains("seed = 3"), "{snapshot}");
}

#[test]
fn corrupt_and_attack_emit_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_tiny(&data);
    let run = tmp.path().join("run");
    train_tiny(&data, &run, &[]);

    let c = tmp.path().join("c");
    assert_ok(&mmc(&[
        "corrupt",
        "--manifest",
        run.to_str().unwrap(),
        "--severity",
        "1",
        "--out",
        c.to_str().unwrap(),
    ]));
    let sweep = fs::read_to_string(c.join("corrupt.csv")).unwrap();
    assert!(sweep.starts_with("run_id,corruption,severity,split,map,f1"));
    // clean + 15 corruptions, three split rows each.
    assert_eq!(sweep.lines().count(), 1 + 16 * 3);
    assert!(sweep.contains(",clean,0,"));
    assert!(sweep.contains(",gaussian_noise,1,"));

    let a = tmp.path().join("a");
    assert_ok(&mmc(&[
        "attack",
        "--manifest",
        run.to_str().unwrap(),
        "--hide",
        "1",
        "--eps-grid",
        "0,8",
        "--out",
        a.to_str().unwrap(),
    ]));
    let attack = fs::read_to_string(a.join("attack.csv")).unwrap();
    assert!(attack.starts_with("run_id,hidden_class,epsilon,map,hidden_class_recall"));
    assert_eq!(attack.lines().count(), 3, "{attack}");
}

#[test]
fn report_joins_eval_tables_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let header = "run_id,variant,split,class,ap,f1,n_gt,n_det";
    let a = tmp.path().join("a.csv");
    fs::write(
        &a,
        format!(
            "{header}\nrgb-seed1,rgb,all,person,0.4,0.3,5,6\nrgb-seed1,rgb,all,mean,0.5,0.4,10,12\n"
        ),
    )
    .unwrap();
    let b = tmp.path().join("b.csv");
    fs::write(&b, format!("{header}\nrgb-seed2,rgb,all,mean,0.7,0.6,10,11\n")).unwrap();
    let out = mmc(&["report", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_ok(&out);
    let table = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        table,
        "variant,split,map,f1,runs\nrgb,all,0.600000,0.500000,2\n"
    );
}
