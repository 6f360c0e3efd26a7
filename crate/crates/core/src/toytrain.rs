//! A linear separator trained by plain gradient descent on the combined
//! separation + autoencoding objective.
//!
//! The mixture is cut into frames of `frame_len` samples advanced by `hop`.
//! Each frame is mapped by a `hop x frame_len` matrix per output to `hop`
//! output samples, so with `hop = 1` every output is an FIR filter of the
//! mixture. The model is small enough for exact gradients and fast training,
//! which is all it needs to exercise the loss, assignment and detection
//! machinery end to end.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detector::{detect, DetectionConfig};
use crate::error::{Error, Result};
use crate::evalkit::{eval_utterance, ConfusionMatrix, Reference, SelectionMode};
use crate::mixkit::{render_utterance, sample_spec, AudioPool, SynthesisConfig, UtteranceRecord};
use crate::pit::{a2pit_grad_slices, build_targets, A2pitConfig, Reduction};
use crate::rng::{keyed, Field};
use crate::signal::{sisdr, Waveform};

const WEIGHTS_MAGIC: &[u8; 4] = b"A2PW";

/// FIR length used by the toy separator.
pub const TOY_FRAME_LEN: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    n_outputs: usize,
    frame_len: usize,
    hop: usize,
    /// `[output][hop position][frame tap]`, row-major.
    weights: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(n_outputs: usize, frame_len: usize, hop: usize) -> Result<Self> {
        if n_outputs == 0 || hop == 0 || frame_len < hop {
            return Err(Error::Parameter(format!(
                "need n_outputs >= 1 and frame_len >= hop >= 1, got N={n_outputs}, frame={frame_len}, hop={hop}"
            )));
        }
        Ok(Self {
            n_outputs,
            frame_len,
            hop,
            weights: vec![0.0; n_outputs * hop * frame_len],
        })
    }

    /// Gaussian weights with standard deviation `scale / sqrt(frame_len)`.
    pub fn random(
        n_outputs: usize,
        frame_len: usize,
        hop: usize,
        scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeros(n_outputs, frame_len, hop)?;
        let normal = Normal::new(0.0, scale / (frame_len as f64).sqrt())
            .map_err(|e| Error::Parameter(e.to_string()))?;
        let mut rng = keyed(seed, 0, Field::Init);
        for w in &mut model.weights {
            *w = normal.sample(&mut rng);
        }
        Ok(model)
    }

    /// Every output reproduces the mixture.
    pub fn copy_operator(n_outputs: usize, frame_len: usize, hop: usize) -> Result<Self> {
        let mut model = Self::zeros(n_outputs, frame_len, hop)?;
        let pad = model.pad();
        for n in 0..n_outputs {
            for k in 0..hop {
                let idx = model.index(n, k, pad + k);
                model.weights[idx] = 1.0;
            }
        }
        Ok(model)
    }

    pub fn from_weights(
        n_outputs: usize,
        frame_len: usize,
        hop: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let mut model = Self::zeros(n_outputs, frame_len, hop)?;
        if weights.len() != model.weights.len() {
            return Err(Error::Dimension(format!(
                "expected {} weights, got {}",
                model.weights.len(),
                weights.len()
            )));
        }
        model.weights = weights;
        Ok(model)
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Frame `t` covers mixture samples `[t hop - pad, t hop - pad + frame_len)`.
    fn pad(&self) -> usize {
        (self.frame_len - self.hop) / 2
    }

    #[inline]
    fn index(&self, output: usize, k: usize, tap: usize) -> usize {
        (output * self.hop + k) * self.frame_len + tap
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == 0 || !len.is_multiple_of(self.hop) {
            return Err(Error::Dimension(format!(
                "mixture length {len} is not a positive multiple of hop {}",
                self.hop
            )));
        }
        Ok(())
    }

    /// Taps of frame `t` that fall inside the signal: `(first tap, first
    /// sample)` and the number of taps.
    #[inline]
    fn frame_span(&self, t: usize, len: usize) -> (usize, usize, usize) {
        let start = (t * self.hop) as isize - self.pad() as isize;
        let first_tap = (-start).max(0) as usize;
        let first_sample = start.max(0) as usize;
        let end = (start + self.frame_len as isize).min(len as isize);
        let taps = (end - first_sample as isize).max(0) as usize;
        (first_tap, first_sample, taps)
    }

    pub fn forward_samples(&self, mixture: &[f64]) -> Result<Vec<Vec<f64>>> {
        let len = mixture.len();
        self.check_len(len)?;
        let mut outs = vec![vec![0.0; len]; self.n_outputs];
        for t in 0..len / self.hop {
            let (tap0, s0, taps) = self.frame_span(t, len);
            let frame = &mixture[s0..s0 + taps];
            for (n, out) in outs.iter_mut().enumerate() {
                for k in 0..self.hop {
                    let row = &self.weights[self.index(n, k, tap0)..self.index(n, k, tap0) + taps];
                    out[t * self.hop + k] = row.iter().zip(frame).map(|(w, x)| w * x).sum();
                }
            }
        }
        Ok(outs)
    }

    pub fn forward(&self, mixture: &Waveform) -> Result<Vec<Waveform>> {
        self.forward_samples(mixture)?
            .into_iter()
            .map(|o| Waveform::new(o, mixture.sample_rate()))
            .collect()
    }

    /// Accumulates `dL/dW` into `grad` given `dL/d output` for every output.
    fn backward(&self, mixture: &[f64], output_grads: &[Vec<f64>], scale: f64, grad: &mut [f64]) {
        let len = mixture.len();
        for t in 0..len / self.hop {
            let (tap0, s0, taps) = self.frame_span(t, len);
            let frame = &mixture[s0..s0 + taps];
            for (n, g) in output_grads.iter().enumerate() {
                for k in 0..self.hop {
                    let go = g[t * self.hop + k] * scale;
                    if go == 0.0 {
                        continue;
                    }
                    let base = self.index(n, k, tap0);
                    for (w, x) in grad[base..base + taps].iter_mut().zip(frame) {
                        *w += go * x;
                    }
                }
            }
        }
    }

    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        let header = WeightsHeader {
            format: "a2pit-toy-weights".into(),
            version: 1,
            dtype: "f64le".into(),
            shape: [self.n_outputs, self.hop, self.frame_len],
            frame_len: self.frame_len,
            hop: self.hop,
            seed,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(WEIGHTS_MAGIC).map_err(io)?;
        w.write_all(&(json.len() as u32).to_le_bytes())
            .map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for v in &self.weights {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<(Self, WeightsHeader)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
        if bytes.len() < 8 || &bytes[..4] != WEIGHTS_MAGIC {
            return Err(bad("not a weights file"));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes
            .get(8..8 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let header: WeightsHeader =
            serde_json::from_slice(body).map_err(|e| bad(&format!("bad header: {e}")))?;
        let data = &bytes[8 + hlen..];
        if data.len() % 8 != 0 {
            return Err(bad("weight payload is not a whole number of f64"));
        }
        let weights = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let [n, hop, frame] = header.shape;
        let model = Self::from_weights(n, frame, hop, weights)?;
        Ok((model, header))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsHeader {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    /// `[n_outputs, hop, frame_len]`
    pub shape: [usize; 3],
    pub frame_len: usize,
    pub hop: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    /// Plain gradient descent step. On the toy corpus with unit-scale
    /// signals, rates up to about 1e-3 give a monotone loss on a fixed batch;
    /// 1e-2 trains faster and still converges.
    pub learning_rate: f64,
    pub alpha_ae: f64,
    pub alpha_sep: f64,
    pub single_speaker_alpha: f64,
    pub reduction: Reduction,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 0.01,
            alpha_ae: 0.3,
            alpha_sep: 0.0,
            single_speaker_alpha: 0.3,
            reduction: Reduction::Mean,
            batch: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config(
                "batch must hold at least one utterance".into(),
            ));
        }
        Ok(())
    }

    pub fn loss_config(&self, n_outputs: usize) -> A2pitConfig {
        A2pitConfig {
            n_outputs,
            alpha_ae: self.alpha_ae,
            alpha_sep: self.alpha_sep,
            single_speaker_alpha: self.single_speaker_alpha,
            reduction: self.reduction,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub l_obj: f64,
    pub l_sep: f64,
    pub l_ae: f64,
}

/// Batch-mean objective and its gradient with respect to the weights.
pub fn loss_and_grad(
    model: &ToyModel,
    batch: &[&UtteranceRecord],
    config: &TrainConfig,
) -> Result<(StepLoss, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let loss_cfg = config.loss_config(model.n_outputs);
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; model.weights.len()];
    let mut loss = StepLoss {
        l_obj: 0.0,
        l_sep: 0.0,
        l_ae: 0.0,
    };
    for rec in batch {
        let outs = model.forward_samples(&rec.mixture)?;
        let targets = build_targets(&rec.sources, &rec.mixture, &loss_cfg)?;
        let rows: Vec<&[f64]> = outs.iter().map(Vec::as_slice).collect();
        let (out_grads, result) = a2pit_grad_slices(&rows, &targets, &loss_cfg)?;
        model.backward(&rec.mixture, &out_grads, scale, &mut grad);
        loss.l_obj += result.total_loss * scale;
        loss.l_sep += result.l_sep * scale;
        loss.l_ae += result.l_ae * scale;
    }
    Ok((loss, grad))
}

/// Batch-mean objective only.
pub fn batch_loss(
    model: &ToyModel,
    batch: &[&UtteranceRecord],
    config: &TrainConfig,
) -> Result<StepLoss> {
    Ok(loss_and_grad(model, batch, config)?.0)
}

/// One gradient descent update. Returns the loss before the update.
pub fn train_step(
    model: &mut ToyModel,
    batch: &[&UtteranceRecord],
    config: &TrainConfig,
) -> Result<StepLoss> {
    config.validate()?;
    let (loss, grad) = loss_and_grad(model, batch, config)?;
    if config.learning_rate > 0.0 {
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= config.learning_rate * g;
        }
    }
    Ok(loss)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    #[serde(flatten)]
    pub loss: StepLoss,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub points: Vec<LossPoint>,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,l_obj,l_sep,l_ae\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.step, p.loss.l_obj, p.loss.l_sep, p.loss.l_ae
            ));
        }
        out
    }
}

impl Default for StepLoss {
    fn default() -> Self {
        Self {
            l_obj: 0.0,
            l_sep: 0.0,
            l_ae: 0.0,
        }
    }
}

/// Runs `config.steps` updates on seeded batches drawn from `dataset`.
pub fn train(
    mut model: ToyModel,
    dataset: &[UtteranceRecord],
    config: &TrainConfig,
) -> Result<(ToyModel, LossCurve)> {
    config.validate()?;
    if config.steps > 0 && dataset.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut curve = LossCurve::default();
    for step in 0..config.steps {
        let mut rng = keyed(config.seed, step as u64, Field::Batch);
        let batch: Vec<&UtteranceRecord> = (0..config.batch)
            .map(|_| &dataset[rng.random_range(0..dataset.len())])
            .collect();
        let loss = train_step(&mut model, &batch, config)?;
        curve.points.push(LossPoint { step, loss });
    }
    Ok((model, curve))
}

/// Built-in two-speaker toy corpus: one source drawn from a low tone band
/// and one from a high band, so a linear filter bank can separate them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyDataConfig {
    pub sample_rate: u32,
    pub utterance_seconds: f64,
    pub low_band_hz: (f64, f64),
    pub high_band_hz: (f64, f64),
    pub clips_per_band: usize,
}

impl Default for ToyDataConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            utterance_seconds: 1.0,
            low_band_hz: (150.0, 900.0),
            high_band_hz: (1800.0, 3400.0),
            clips_per_band: 128,
        }
    }
}

pub fn toy_dataset(data: &ToyDataConfig, count: usize, seed: u64) -> Result<Vec<UtteranceRecord>> {
    let synth = SynthesisConfig {
        utterance_seconds: data.utterance_seconds,
        sample_rate: data.sample_rate,
        speaker_counts: vec![2],
        noisy: false,
        seed,
        ..SynthesisConfig::default()
    };
    let pools = [
        AudioPool::synthetic_speech(
            data.clips_per_band,
            data.sample_rate,
            data.utterance_seconds,
            data.low_band_hz,
            seed,
        ),
        AudioPool::synthetic_speech(
            data.clips_per_band,
            data.sample_rate,
            data.utterance_seconds,
            data.high_band_hz,
            seed.wrapping_add(0x5eed),
        ),
    ];
    (0..count as u64)
        .map(|index| {
            let mut params = sample_spec(&synth, index, data.clips_per_band, 0)?;
            let mut rng = keyed(seed, index, Field::SourcePicks);
            params.source_picks = vec![
                rng.random_range(0..data.clips_per_band),
                rng.random_range(0..data.clips_per_band),
            ];
            let clips = [
                &pools[0].entries[params.source_picks[0]],
                &pools[1].entries[params.source_picks[1]],
            ];
            render_utterance(&synth, index, &params, &clips, None)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ToyEvaluation {
    /// Mean SI-SDR of oracle-matched outputs against their sources.
    pub mean_valid_sisdr: f64,
    /// Mean SI-SDR against the mixture of outputs left unmatched.
    pub mean_aux_autoencoding: f64,
    pub min_valid_sisdr: f64,
    pub min_aux_autoencoding: f64,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(
    model: &ToyModel,
    records: &[UtteranceRecord],
    detection: &DetectionConfig,
) -> Result<ToyEvaluation> {
    let mut valid = Vec::new();
    let mut aux = Vec::new();
    let mut confusion = ConfusionMatrix::new();
    for rec in records {
        let outs = model.forward(&rec.mixture)?;
        let e = eval_utterance(
            &outs,
            Reference::from(rec),
            detection,
            SelectionMode::Oracle,
            0,
        )?;
        for (j, &i) in e.matched_outputs.iter().enumerate() {
            valid.push(sisdr(&rec.sources[j], &outs[i])?);
        }
        let det = detect(&outs, &rec.mixture, detection)?;
        for i in (0..outs.len()).filter(|i| !e.matched_outputs.contains(i)) {
            aux.push(det.scores_db[i]);
        }
        confusion.record(det.predicted_count, rec.m);
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ToyEvaluation {
        mean_valid_sisdr: mean(&valid),
        mean_aux_autoencoding: mean(&aux),
        min_valid_sisdr: min(&valid),
        min_aux_autoencoding: min(&aux),
        confusion,
    })
}
