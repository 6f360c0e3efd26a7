use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use a2pit::detector::{self, frame_scores, DetectionConfig, DetectionResult};
use a2pit::evalkit::{
    default_hist_range, eval_utterance, histogram, utterance_seed, ConfusionMatrix, Reference,
    SeparationReport, UtteranceEval,
};
use a2pit::mixkit::{
    audio_file_name, file_scale, read_manifest, utterance_id, write_dataset, write_manifest,
    AudioPool, FileRole, ManifestEntry, SynthesisConfig, MANIFEST_FILE,
};
use a2pit::signal::sisdr;
use a2pit::toytrain::{evaluate, toy_dataset, train, ToyDataConfig, ToyModel, TrainConfig};
use a2pit::wav::{read_wav, write_wav};
use a2pit::Waveform;
use serde::Serialize;

use crate::args::{DetectArgs, EvalArgs, HistArgs, SynthArgs, TrainToyArgs};
use crate::error::{CliError, CliResult};

const SPEECH_POOL_SIZE: usize = 64;
const NOISE_POOL_SIZE: usize = 16;
const SPEECH_BAND_HZ: (f64, f64) = (100.0, 3000.0);

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    write_text(path, &(text + "\n"))
}

/// Prints to standard output; a reader that went away is not an error.
fn emit(text: &str) -> CliResult<()> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => {
            Err(CliError::io(Path::new("<stdout>"), e))
        }
        _ => Ok(()),
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn synth(args: SynthArgs) -> CliResult<()> {
    if args.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    if let Some(s) = args.seconds {
        if !(s.is_finite() && s > 0.0) {
            return Err(usage(format!("--seconds must be positive, got {s}")));
        }
    }
    if args.sample_rate == Some(0) {
        return Err(usage("--sample-rate must be positive"));
    }

    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => SynthesisConfig::default(),
    };
    if let Some(s) = &args.speakers {
        cfg.speaker_counts = s.iter().map(|&m| m as usize).collect();
    }
    if args.noisy {
        cfg.noisy = true;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(s) = args.seconds {
        cfg.utterance_seconds = s;
    }
    if let Some(r) = args.sample_rate {
        cfg.sample_rate = r;
    }
    cfg.validate()?;

    let speech = match &args.source_dir {
        Some(dir) => AudioPool::from_dir(dir, cfg.sample_rate)?,
        None => AudioPool::synthetic_speech(
            SPEECH_POOL_SIZE,
            cfg.sample_rate,
            cfg.utterance_seconds,
            SPEECH_BAND_HZ,
            cfg.seed,
        ),
    };
    let noise = match &args.noise_dir {
        Some(dir) => AudioPool::from_dir(dir, cfg.sample_rate)?,
        None => AudioPool::synthetic_noise(
            NOISE_POOL_SIZE,
            cfg.sample_rate,
            cfg.utterance_seconds,
            cfg.seed,
        ),
    };
    let entries = write_dataset(&cfg, args.count, &speech, &noise, &args.out)?;
    emit(&format!(
        "wrote {} utterances to {}\n",
        entries.len(),
        args.out.join(MANIFEST_FILE).display()
    ))
}

/// Index of an utterance from its mixture file name.
fn mixture_index(name: &str) -> Option<u64> {
    let rest = name.strip_prefix("utt")?.strip_suffix("_mix0.wav")?;
    rest.parse().ok()
}

/// Every `uttNNNNNN_estK.wav` for one utterance, in output order.
fn load_estimates(dir: &Path, index: u64) -> CliResult<Vec<Waveform>> {
    let mut outputs = Vec::new();
    loop {
        let path = dir.join(audio_file_name(index, FileRole::Est, outputs.len()));
        if !path.is_file() {
            break;
        }
        outputs.push(read_wav(&path)?);
    }
    if outputs.is_empty() {
        return Err(CliError::Data(format!(
            "no estimates for {} in {} (expected {})",
            utterance_id(index),
            dir.display(),
            audio_file_name(index, FileRole::Est, 0)
        )));
    }
    Ok(outputs)
}

#[derive(Serialize)]
struct DetectReport {
    threshold_db: f64,
    mode: a2pit::detector::DetectionMode,
    frame_hop: Option<usize>,
    utterances: Vec<DetectEntry>,
}

#[derive(Serialize)]
struct DetectEntry {
    id: String,
    #[serde(flatten)]
    result: DetectionResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    frame_scores_db: Option<Vec<Vec<f64>>>,
}

pub fn detect(args: DetectArgs) -> CliResult<()> {
    if args.hop == Some(0) {
        return Err(usage("--hop must be at least 1"));
    }
    let cfg = args.detection.config(args.hop)?;
    let listing = fs::read_dir(&args.mix_dir).map_err(|e| CliError::io(&args.mix_dir, e))?;
    let mut indices = Vec::new();
    for entry in listing {
        let entry = entry.map_err(|e| CliError::io(&args.mix_dir, e))?;
        if let Some(i) = entry.file_name().to_str().and_then(mixture_index) {
            indices.push(i);
        }
    }
    if indices.is_empty() {
        return Err(CliError::Data(format!(
            "no uttNNNNNN_mix0.wav mixtures in {}",
            args.mix_dir.display()
        )));
    }
    indices.sort_unstable();

    let mut utterances = Vec::with_capacity(indices.len());
    for index in indices {
        let mixture = read_wav(&args.mix_dir.join(audio_file_name(index, FileRole::Mix, 0)))?;
        let outputs = load_estimates(&args.est_dir, index)?;
        let result = detector::detect(&outputs, &mixture, &cfg)?;
        let frames = match args.hop {
            Some(_) => Some(frame_scores(&outputs, &mixture, &cfg)?),
            None => None,
        };
        utterances.push(DetectEntry {
            id: utterance_id(index),
            result,
            frame_scores_db: frames,
        });
    }
    let report = DetectReport {
        threshold_db: cfg.threshold_db,
        mode: cfg.mode,
        frame_hop: args.hop,
        utterances,
    };
    match &args.out {
        Some(path) => write_json(path, &report),
        None => emit(&(serde_json::to_string_pretty(&report).expect("reports serialize") + "\n")),
    }
}

/// Directory the audio paths of a manifest are relative to.
fn manifest_dir(manifest: &Path) -> PathBuf {
    match manifest.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

#[derive(Serialize)]
struct EvalSidecar<'a> {
    manifest: &'a Path,
    est_dir: &'a Path,
    threshold_db: f64,
    seed: u64,
    speaker_count_accuracy: f64,
    utterances: Vec<EvalRecord>,
}

#[derive(Serialize)]
struct EvalRecord {
    id: String,
    m: usize,
    #[serde(flatten)]
    eval: UtteranceEval,
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let cfg = args.detection.config(None)?;
    let entries = read_manifest(&args.manifest)?;
    if entries.is_empty() {
        return Err(CliError::Data(format!(
            "{} lists no utterances",
            args.manifest.display()
        )));
    }
    let audio_dir = manifest_dir(&args.manifest);
    let modes = args.selection.modes();

    let mut report = SeparationReport::new();
    let mut confusion = ConfusionMatrix::new();
    let mut records = Vec::new();
    for entry in &entries {
        let stored = a2pit::mixkit::load_utterance(entry, &audio_dir)?;
        let outputs = load_estimates(&args.est_dir, entry.index)?;
        let reference = Reference {
            mixture: &stored.mixture,
            sources: &stored.sources,
            noisy: entry.noisy,
        };
        for &mode in &modes {
            let eval = eval_utterance(
                &outputs,
                reference,
                &cfg,
                mode,
                utterance_seed(args.seed, entry.index),
            )?;
            report.add(&eval);
            if mode == modes[0] {
                confusion.record(eval.predicted_count(), entry.m);
            }
            records.push(EvalRecord {
                id: entry.id.clone(),
                m: entry.m,
                eval,
            });
        }
    }

    create_dir(&args.out)?;
    write_text(&args.out.join("confusion.csv"), &confusion.to_csv())?;
    write_text(&args.out.join("separation.csv"), &report.to_csv())?;
    write_json(
        &args.out.join("eval.json"),
        &EvalSidecar {
            manifest: &args.manifest,
            est_dir: &args.est_dir,
            threshold_db: cfg.threshold_db,
            seed: args.seed,
            speaker_count_accuracy: confusion.accuracy(),
            utterances: records,
        },
    )?;
    emit(&format!(
        "{}speaker counting accuracy {:.4}\n",
        report.to_csv(),
        confusion.accuracy()
    ))
}

pub fn hist(args: HistArgs) -> CliResult<()> {
    if !(args.bin.is_finite() && args.bin > 0.0) {
        return Err(usage(format!("--bin must be positive, got {}", args.bin)));
    }
    let (default_lo, default_hi) = default_hist_range();
    let range = (args.lo.unwrap_or(default_lo), args.hi.unwrap_or(default_hi));
    if range.0.partial_cmp(&range.1) != Some(std::cmp::Ordering::Less) {
        return Err(usage(format!(
            "empty histogram range [{}, {}]",
            range.0, range.1
        )));
    }
    let entries = read_manifest(&args.manifest)?;
    let audio_dir = manifest_dir(&args.manifest);
    let mut scores = Vec::new();
    for entry in &entries {
        let mixture = read_wav(&audio_dir.join(&entry.files.mixture))?;
        for out in load_estimates(&args.est_dir, entry.index)? {
            scores.push(sisdr(&mixture, &out)?);
        }
    }
    let h = histogram(&scores, args.bin, range)?;
    create_dir(&args.out)?;
    write_text(&args.out.join("hist.csv"), &h.to_csv())?;
    emit(&format!(
        "binned {} scores into {}\n",
        h.total(),
        args.out.join("hist.csv").display()
    ))
}

#[derive(Serialize)]
struct TrainSummary {
    config: TrainConfig,
    frame_len: usize,
    n_outputs: usize,
    train_count: usize,
    test_count: usize,
    final_loss: Option<a2pit::toytrain::StepLoss>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<TestSummary>,
}

#[derive(Serialize)]
struct TestSummary {
    mean_valid_sisdr_db: f64,
    min_valid_sisdr_db: f64,
    mean_aux_autoencoding_db: f64,
    min_aux_autoencoding_db: f64,
    speaker_count_accuracy: f64,
}

pub fn train_toy(args: TrainToyArgs) -> CliResult<()> {
    if args.steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    if !(args.lr.is_finite() && args.lr > 0.0) {
        return Err(usage(format!("--lr must be positive, got {}", args.lr)));
    }
    if args.n_outputs < 2 {
        return Err(usage(
            "the toy corpus has two speakers; --n-outputs must be at least 2",
        ));
    }
    if args.batch == 0 || args.train_count == 0 {
        return Err(usage("--batch and --train-count must be at least 1"));
    }
    if args.frame_len == 0 {
        return Err(usage("--frame-len must be at least 1"));
    }
    if args.emit_test && args.test_count == 0 {
        return Err(usage("--emit-test needs --test-count above 0"));
    }

    let config = TrainConfig {
        steps: args.steps,
        learning_rate: args.lr,
        batch: args.batch,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let data = ToyDataConfig::default();
    let train_set = toy_dataset(&data, args.train_count, args.seed)?;
    let init = ToyModel::random(args.n_outputs, args.frame_len, 1, 1.0, args.seed)?;
    let (model, curve) = train(init, &train_set, &config)?;

    create_dir(&args.out)?;
    model.save(&args.out.join("weights.bin"), args.seed)?;
    write_text(&args.out.join("loss.csv"), &curve.to_csv())?;

    let test = if args.test_count > 0 {
        let test_set = toy_dataset(&data, args.test_count, args.seed.wrapping_add(1))?;
        let ev = evaluate(&model, &test_set, &DetectionConfig::default())?;
        if args.emit_test {
            emit_test_set(&model, &test_set, &args.out.join("test"))?;
        }
        Some(TestSummary {
            mean_valid_sisdr_db: ev.mean_valid_sisdr,
            min_valid_sisdr_db: ev.min_valid_sisdr,
            mean_aux_autoencoding_db: ev.mean_aux_autoencoding,
            min_aux_autoencoding_db: ev.min_aux_autoencoding,
            speaker_count_accuracy: ev.confusion.accuracy(),
        })
    } else {
        None
    };
    let summary = TrainSummary {
        frame_len: args.frame_len,
        n_outputs: args.n_outputs,
        train_count: args.train_count,
        test_count: args.test_count,
        final_loss: curve.points.last().map(|p| p.loss),
        test,
        config,
    };
    write_json(&args.out.join("train.json"), &summary)?;
    match &summary.test {
        Some(t) => emit(&format!(
            "valid SI-SDR {:.2} dB, auxiliary autoencoding {:.2} dB, speaker counting accuracy {:.4}\n",
            t.mean_valid_sisdr_db, t.mean_aux_autoencoding_db, t.speaker_count_accuracy
        )),
        None => emit(&format!("trained {} steps into {}\n", summary.config.steps, args.out.display())),
    }
}

/// Writes the held-out toy utterances as a dataset plus the model's
/// outputs, ready for `eval` and `hist`.
fn emit_test_set(
    model: &ToyModel,
    records: &[a2pit::mixkit::UtteranceRecord],
    dir: &Path,
) -> CliResult<()> {
    create_dir(dir)?;
    let mut entries = Vec::with_capacity(records.len());
    for rec in records {
        let scale = file_scale(rec);
        let entry = ManifestEntry::from_record(rec, scale);
        let mixture = rec.mixture.scaled(scale);
        write_wav(&dir.join(&entry.files.mixture), &mixture)?;
        for (w, name) in rec.sources.iter().zip(&entry.files.sources) {
            write_wav(&dir.join(name), &w.scaled(scale))?;
        }
        for (k, out) in model.forward(&mixture)?.iter().enumerate() {
            write_wav(&dir.join(audio_file_name(rec.index, FileRole::Est, k)), out)?;
        }
        entries.push(entry);
    }
    write_manifest(&dir.join(MANIFEST_FILE), &entries)?;
    Ok(())
}
