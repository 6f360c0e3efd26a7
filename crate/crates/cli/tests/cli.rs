use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use a2pit::mixkit::{audio_file_name, load_utterance, read_manifest, FileRole, MANIFEST_FILE};
use a2pit::wav::write_wav;

fn a2pit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_a2pit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "synth",
        "--out",
        p(dir),
        "--seconds",
        "0.5",
        "--sample-rate",
        "8000",
    ];
    args.extend_from_slice(extra);
    a2pit(&args)
}

/// Writes estimates equal to the true sources followed by mixture copies.
fn oracle_estimates(data: &Path, n_outputs: usize) {
    for entry in read_manifest(&data.join(MANIFEST_FILE)).unwrap() {
        let u = load_utterance(&entry, data).unwrap();
        for k in 0..n_outputs {
            let w = u.sources.get(k).unwrap_or(&u.mixture);
            write_wav(
                &data.join(audio_file_name(entry.index, FileRole::Est, k)),
                w,
            )
            .unwrap();
        }
    }
}

#[test]
fn synth_writes_dataset_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = synth(
            dir,
            &[
                "--count",
                "10",
                "--speakers",
                "2,3",
                "--noisy",
                "--seed",
                "7",
            ],
        );
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let manifest = fs::read(a.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest, fs::read(b.join(MANIFEST_FILE)).unwrap());
    let entries = read_manifest(&a.join(MANIFEST_FILE)).unwrap();
    assert_eq!(entries.len(), 10);
    assert!(entries.iter().all(|e| (2..=3).contains(&e.m) && e.noisy));
    assert!(a.join("utt000009_mix0.wav").is_file());
    assert!(a.join("utt000000_noise0.wav").is_file());
}

#[test]
fn synth_rejects_five_speakers_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("d");
    let out = synth(&dir, &["--count", "2", "--speakers", "5"]);
    assert_eq!(code(&out), 2);
    assert!(!dir.exists());
}

#[test]
fn synth_reads_toml_config_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("synth.toml");
    fs::write(
        &cfg,
        "speaker_counts = [3]\nseed = 5\nutterance_seconds = 0.25\n",
    )
    .unwrap();
    let dir = tmp.path().join("d");
    let out = a2pit(&[
        "synth",
        "--count",
        "3",
        "--config",
        p(&cfg),
        "--sample-rate",
        "8000",
        "--out",
        p(&dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let entries = read_manifest(&dir.join(MANIFEST_FILE)).unwrap();
    assert!(entries
        .iter()
        .all(|e| e.m == 3 && e.seed == 5 && e.num_samples == 2000));

    let dir2 = tmp.path().join("d2");
    let out = a2pit(&[
        "synth",
        "--count",
        "3",
        "--config",
        p(&cfg),
        "--speakers",
        "1",
        "--sample-rate",
        "8000",
        "--out",
        p(&dir2),
    ]);
    assert_eq!(code(&out), 0);
    assert!(read_manifest(&dir2.join(MANIFEST_FILE))
        .unwrap()
        .iter()
        .all(|e| e.m == 1));
}

#[test]
fn detect_presets_and_threshold_override() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    assert_eq!(
        code(&synth(
            &data,
            &["--count", "4", "--speakers", "2,3", "--seed", "1"]
        )),
        0
    );
    oracle_estimates(&data, 4);
    let d = p(&data);
    for (flags, expected) in [
        (vec!["--preset", "clean"], 20.0),
        (vec!["--preset", "noisy-1234"], 8.0),
        (vec!["--preset", "noisy-23"], 12.0),
        (vec!["--preset", "clean", "--threshold", "15"], 15.0),
    ] {
        let mut args = vec!["detect", "--est-dir", d, "--mix-dir", d];
        args.extend(flags);
        let out = a2pit(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
        assert_eq!(json["threshold_db"].as_f64(), Some(expected));
        let utts = json["utterances"].as_array().unwrap();
        assert_eq!(utts.len(), 4);
    }
    let out = a2pit(&["detect", "--est-dir", d, "--mix-dir", d, "--hop", "1000"]);
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let entries = read_manifest(&data.join(MANIFEST_FILE)).unwrap();
    for (u, e) in json["utterances"].as_array().unwrap().iter().zip(&entries) {
        assert_eq!(u["predicted_count"].as_u64(), Some(e.m as u64));
        assert_eq!(u["frame_scores_db"][0].as_array().unwrap().len(), 4);
    }
}

#[test]
fn detect_rejects_unknown_preset() {
    let out = a2pit(&[
        "detect",
        "--est-dir",
        "nowhere",
        "--mix-dir",
        "nowhere",
        "--preset",
        "noisy",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_writes_reports_for_oracle_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    assert_eq!(code(&synth(&data, &["--count", "8", "--seed", "3"])), 0);
    oracle_estimates(&data, 4);
    let report = tmp.path().join("r");
    let manifest = data.join(MANIFEST_FILE);
    let out = a2pit(&[
        "eval",
        "--est-dir",
        p(&data),
        "--manifest",
        p(&manifest),
        "--out",
        p(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let entries = read_manifest(&manifest).unwrap();
    let confusion = fs::read_to_string(report.join("confusion.csv")).unwrap();
    let mut lines = confusion.lines();
    assert_eq!(lines.next(), Some("prediction,1 spk,2 spk,3 spk,4 spk"));
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let pred: usize = cells[0].trim_end_matches(" spk").parse().unwrap();
        for (o, cell) in cells[1..].iter().enumerate() {
            let oracle = o + 1;
            let n = entries.iter().filter(|e| e.m == oracle).count();
            match *cell {
                "--" => assert_eq!(n, 0),
                c => {
                    let c: usize = c.parse().unwrap();
                    // single-speaker clean mixtures equal their source, so they count as zero
                    let expected_pred = if oracle == 1 { 0 } else { oracle };
                    assert_eq!(c, if pred == expected_pred { n } else { 0 }, "{confusion}");
                }
            }
        }
    }

    let separation = fs::read_to_string(report.join("separation.csv")).unwrap();
    assert!(
        separation.starts_with("m,selection,metric,mean_db_per_source,n_sources,n_utterances\n")
    );
    assert!(separation.lines().any(|l| l.contains(",oracle,")));
    assert!(separation.lines().any(|l| l.contains(",predicted,")));
    for line in separation.lines().skip(1) {
        let m: usize = line.split(',').next().unwrap().parse().unwrap();
        assert_eq!(
            line.split(',').nth(2),
            Some(if m == 1 { "si_sdr" } else { "si_sdri" })
        );
    }
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report.join("eval.json")).unwrap()).unwrap();
    assert_eq!(sidecar["utterances"].as_array().unwrap().len(), 16);
}

#[test]
fn eval_fails_on_missing_estimates() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    assert_eq!(code(&synth(&data, &["--count", "2", "--seed", "3"])), 0);
    oracle_estimates(&data, 4);
    fs::remove_file(data.join("utt000001_est0.wav")).unwrap();
    let manifest = data.join(MANIFEST_FILE);
    let out = a2pit(&[
        "eval",
        "--est-dir",
        p(&data),
        "--manifest",
        p(&manifest),
        "--out",
        p(&tmp.path().join("r")),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("utt000001"));
}

#[test]
fn eval_missing_manifest_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("none.jsonl");
    let out = a2pit(&[
        "eval",
        "--est-dir",
        p(tmp.path()),
        "--manifest",
        p(&manifest),
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn hist_counts_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    assert_eq!(code(&synth(&data, &["--count", "5", "--seed", "9"])), 0);
    oracle_estimates(&data, 4);
    let dir = tmp.path().join("h");
    let manifest = data.join(MANIFEST_FILE);
    let out = a2pit(&[
        "hist",
        "--est-dir",
        p(&data),
        "--manifest",
        p(&manifest),
        "--bin",
        "2",
        "--out",
        p(&dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("hist.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("bin_lo,bin_hi,count"));
    let total: u64 = lines
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 20);

    let out = a2pit(&[
        "hist",
        "--est-dir",
        p(&data),
        "--manifest",
        p(&manifest),
        "--bin",
        "0",
        "--out",
        p(&dir),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_toy_is_deterministic_and_emits_a_scorable_test_set() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let out = a2pit(&[
            "train-toy",
            "--steps",
            "20",
            "--train-count",
            "8",
            "--test-count",
            "4",
            "--frame-len",
            "16",
            "--seed",
            "4",
            "--emit-test",
            "--out",
            p(&dir),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        dir
    };
    let (a, b) = (run("a"), run("b"));
    let loss = fs::read_to_string(a.join("loss.csv")).unwrap();
    assert!(loss.starts_with("step,l_obj,l_sep,l_ae\n"));
    assert_eq!(loss.lines().count(), 21);
    assert_eq!(loss, fs::read_to_string(b.join("loss.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("weights.bin")).unwrap(),
        fs::read(b.join("weights.bin")).unwrap()
    );
    let (model, header) = a2pit::toytrain::ToyModel::load(&a.join("weights.bin")).unwrap();
    assert_eq!(
        (model.n_outputs(), model.frame_len(), header.seed),
        (3, 16, 4)
    );

    let test = a.join("test");
    let out = a2pit(&[
        "eval",
        "--est-dir",
        p(&test),
        "--manifest",
        p(&test.join(MANIFEST_FILE)),
        "--out",
        p(&tmp.path().join("r")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_toy_validates_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("t");
    for bad in [["--lr", "0"], ["--steps", "0"], ["--n-outputs", "1"]] {
        let out = a2pit(&["train-toy", bad[0], bad[1], "--out", p(&dir)]);
        assert_eq!(code(&out), 2);
        assert!(!dir.exists());
    }
}
