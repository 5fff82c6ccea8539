use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use datadyn::io::{
    parse_config, parse_data_config, read_corpus, read_metrics, read_trajectory, Strictness,
};
use datadyn::Error;
use datadyn_cli::{exit_code, val_path_for};

fn bin(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dataflex-cli"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cfg(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

#[test]
fn every_error_variant_has_its_own_code() {
    let io = || std::io::Error::new(std::io::ErrorKind::NotFound, "x");
    let s = String::new;
    let all = vec![
        Error::UnknownTrainType(s()),
        Error::BadSimplex(s()),
        Error::BadSchedule {
            update_step: 0,
            update_times: 1,
        },
        Error::InvalidConfig {
            field: s(),
            reason: s(),
        },
        Error::InvalidCorpus(s()),
        Error::TooShort { id: 0, len: 1 },
        Error::TokenOutOfRange {
            id: 0,
            token: 0,
            vocab_size: 0,
        },
        Error::LengthMismatch {
            expected: 0,
            got: 1,
        },
        Error::NegativeWeight {
            index: 0,
            value: -1.0,
        },
        Error::EmptyBatch,
        Error::NotAdam,
        Error::ColdOptimizer,
        Error::EmptyValidation,
        Error::NonFiniteMetric(f64::NAN),
        Error::NonFinite(s()),
        Error::NegativeLoss {
            index: 0,
            value: -1.0,
        },
        Error::BadParams(s()),
        Error::KTooLarge { k: 2, pool: 1 },
        Error::EmptyDomainWithMass { domain: 0 },
        Error::BadProportions(s()),
        Error::BadMode(s()),
        Error::DuplicateName {
            kind: s(),
            name: s(),
        },
        Error::UnknownComponent {
            kind: s(),
            name: s(),
        },
        Error::ComponentMutatedModel(s()),
        Error::Parse {
            line: 1,
            message: s(),
        },
        Error::UnknownKey { key: s(), line: 1 },
        Error::Checkpoint(s()),
        Error::Io {
            path: PathBuf::new(),
            source: io(),
        },
    ];
    let codes: BTreeSet<u8> = all.iter().map(exit_code).collect();
    assert_eq!(codes.len(), all.len());
    assert!(!codes.contains(&0) && !codes.contains(&2));
    let help = String::from_utf8(bin(&["--help"], Path::new(".")).stdout).unwrap();
    for code in codes {
        assert!(
            help.lines()
                .any(|l| l.trim_start().starts_with(&format!("{code} "))),
            "code {code} missing from --help"
        );
    }
}

#[test]
fn example_configs_parse() {
    for name in [
        "select_less.yaml",
        "mix_odm.yaml",
        "mix_doremi.yaml",
        "weight_loss.yaml",
        "doremi_toy.yaml",
        "odm_toy.yaml",
    ] {
        parse_config(&configs().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let data = parse_data_config(&configs().join("gen_skewed.yaml")).unwrap();
    assert_eq!(data.data.generate.unwrap().n, 1000);
    assert!(parse_config(&configs().join("gen_skewed.yaml")).is_err());
}

#[test]
fn gen_data_writes_corpus_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(
        &["gen-data", &cfg("gen_skewed.yaml"), "pool.jsonl"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let corpus = read_corpus(&dir.path().join("pool.jsonl"), None, Strictness::Strict)
        .unwrap()
        .corpus;
    assert_eq!(corpus.len(), 1000);
    assert_eq!(corpus.domain_ids(0).len(), 700);
    let val_path = val_path_for(&dir.path().join("pool.jsonl"));
    assert_eq!(val_path.file_name().unwrap(), "pool.val.jsonl");
    let val = read_corpus(&val_path, Some(corpus.domain_names()), Strictness::Strict)
        .unwrap()
        .corpus;
    assert_eq!(val.len(), 200);
    assert!(val.samples()[0].id >= 1000);

    let again = bin(
        &["gen-data", &cfg("gen_skewed.yaml"), "again.jsonl"],
        dir.path(),
    );
    assert!(again.status.success());
    let a = std::fs::read(dir.path().join("pool.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("again.jsonl")).unwrap());
    let reseeded = bin(
        &[
            "gen-data",
            &cfg("gen_skewed.yaml"),
            "other.jsonl",
            "--seed",
            "8",
        ],
        dir.path(),
    );
    assert!(reseeded.status.success());
    assert_ne!(a, std::fs::read(dir.path().join("other.jsonl")).unwrap());
}

#[test]
fn train_writes_outputs_and_honors_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(
        &[
            "train",
            &cfg("mix_odm.yaml"),
            "--max-steps",
            "120",
            "--eval-interval",
            "40",
            "--out-dir",
            "run",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = dir.path().join("run");
    let metrics = read_metrics(&run.join("metrics.jsonl")).unwrap();
    assert_eq!(
        metrics.iter().map(|m| m.step).collect::<Vec<_>>(),
        vec![40, 80, 120]
    );
    let traj = read_trajectory(&run.join("trajectory.jsonl")).unwrap();
    assert_eq!(
        traj.iter().map(|r| r.step).collect::<Vec<_>>(),
        vec![0, 20, 40, 60, 80, 100, 120]
    );
    assert!(run.join("checkpoint.json").exists());
    assert!(run.join("selections.jsonl").exists());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("120 steps"), "{stdout}");
}

#[test]
fn score_dumps_one_line_per_pool_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(
        &[
            "score",
            &cfg("select_less.yaml"),
            "scores.jsonl",
            "--seed",
            "1",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("scores.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 2000);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["method"], "less");
    assert_eq!(first["id"], 0);
}

#[test]
fn mix_sim_replays_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["mix-sim", &cfg("doremi_toy.yaml"), "d.jsonl"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let traj = read_trajectory(&dir.path().join("d.jsonl")).unwrap();
    assert_eq!(traj.len(), 3);
    // eta 1, epsilon 0.1, lambda (1, 0) from uniform
    let e = 1f64.exp();
    let want = 0.9 * e / (e + 1.0) + 0.05;
    assert!((traj[0].weights[0] - want).abs() < 1e-12);
    assert!((traj[1].signal[1].unwrap() - 0.1).abs() < 1e-12);

    let out = bin(&["mix-sim", &cfg("odm_toy.yaml"), "o.jsonl"], dir.path());
    assert!(out.status.success());
    let traj = read_trajectory(&dir.path().join("o.jsonl")).unwrap();
    assert!((traj[0].weights[0] - 0.51).abs() < 1e-5);
    assert!(traj.iter().all(|r| r.weights.iter().all(|&w| w >= 0.1)));
}

#[test]
fn failures_give_one_line_and_a_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["train", "missing.yaml"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("error: "));

    std::fs::write(
        dir.path().join("trace.yaml"),
        "dataflex:\n  train_type: dynamic_mix\n  component_name: odm\n",
    )
    .unwrap();
    let out = bin(&["mix-sim", "trace.yaml", "o.jsonl"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(exit_code(&Error::InvalidConfig {
            field: String::new(),
            reason: String::new()
        }) as i32)
    );

    std::fs::write(
        dir.path().join("t.jsonl"),
        "{\"losses\":[1.0]}\n{\"losses\":[1.0\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("bad_trace.yaml"),
        "data:\n  loss_trace: t.jsonl\ndataflex:\n  train_type: dynamic_mix\n  component_name: odm\n",
    )
    .unwrap();
    let out = bin(&["mix-sim", "bad_trace.yaml", "o.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("last good line is 1"));

    let out = bin(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
