//! Deterministic synthesis of clean and noisy multi-speaker mixtures.
//!
//! Recipe per utterance: draw the speaker count, an overlap ratio, one
//! gain per source and (for noisy sets) a noise gain; crop each source to
//! the span it occupies after shifting, rescale it to its gain, place it;
//! tile the noise to the utterance length and rescale it; sum.
//!
//! Every draw comes from a stream keyed by `(seed, index, field)`, so any
//! utterance can be regenerated on its own.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{keyed, Field};
use crate::signal::{energy_gain, mix, Waveform};
use crate::wav::{read_wav, write_wav};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// How gains in the manifest are to be read.
pub const ENERGY_REFERENCE: &str = "mean-square power re 1.0 full scale";

/// Peak level written files are normalized to when a signal would clip.
const FILE_PEAK: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub utterance_seconds: f64,
    pub sample_rate: u32,
    pub speaker_counts: Vec<usize>,
    pub speech_db_range: (f64, f64),
    pub noise_db_range: (f64, f64),
    pub overlap_range: (f64, f64),
    pub noisy: bool,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            utterance_seconds: 6.0,
            sample_rate: 16000,
            speaker_counts: vec![1, 2, 3, 4],
            speech_db_range: (-2.5, 2.5),
            noise_db_range: (-20.0, -10.0),
            overlap_range: (0.0, 1.0),
            noisy: false,
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.utterance_seconds.is_finite() && self.utterance_seconds > 0.0) {
            return Err(Error::Config(format!(
                "utterance_seconds must be positive, got {}",
                self.utterance_seconds
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if self.total_len() == 0 {
            return Err(Error::Config("utterance is shorter than one sample".into()));
        }
        if self.speaker_counts.is_empty() || self.speaker_counts.contains(&0) {
            return Err(Error::Config(format!(
                "speaker counts must be non-empty and positive, got {:?}",
                self.speaker_counts
            )));
        }
        for (name, (lo, hi)) in [
            ("speech_db_range", self.speech_db_range),
            ("noise_db_range", self.noise_db_range),
            ("overlap_range", self.overlap_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("{name} [{lo}, {hi}] is not ordered")));
            }
        }
        let (lo, hi) = self.overlap_range;
        if lo < 0.0 || hi > 1.0 {
            return Err(Error::Config(format!(
                "overlap_range [{lo}, {hi}] must lie in [0, 1]"
            )));
        }
        Ok(())
    }

    pub fn total_len(&self) -> usize {
        (self.utterance_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn max_speakers(&self) -> usize {
        self.speaker_counts.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    pub id: String,
    pub wave: Waveform,
}

/// A list of audio clips to draw sources or noise from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AudioPool {
    pub entries: Vec<PoolEntry>,
}

impl AudioPool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Loads every `.wav` file in `dir`, sorted by file name.
    pub fn from_dir(dir: &Path, sample_rate: u32) -> Result<Self> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        paths.sort();
        let entries = paths
            .into_iter()
            .map(|p| {
                let wave = read_wav(&p)?;
                if wave.sample_rate() != sample_rate {
                    return Err(Error::Format(format!(
                        "{} is {} Hz, expected {} Hz",
                        p.display(),
                        wave.sample_rate(),
                        sample_rate
                    )));
                }
                let id = p
                    .file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned();
                Ok(PoolEntry { id, wave })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    /// Speech stand-ins: sums of a few sinusoids with a slow syllabic
    /// envelope and raised-cosine edges. Frequencies lie in `band_hz`.
    pub fn synthetic_speech(
        count: usize,
        sample_rate: u32,
        seconds: f64,
        band_hz: (f64, f64),
        seed: u64,
    ) -> Self {
        let len = ((seconds * sample_rate as f64).round() as usize).max(1);
        let fs = sample_rate as f64;
        let entries = (0..count)
            .map(|k| {
                let mut rng = keyed(seed, k as u64, Field::PoolAudio);
                let tones: Vec<(f64, f64, f64)> = (0..rng.random_range(2..=4))
                    .map(|_| {
                        (
                            rng.random_range(band_hz.0..band_hz.1),
                            rng.random_range(0.3..1.0),
                            rng.random_range(0.0..std::f64::consts::TAU),
                        )
                    })
                    .collect();
                let rate = rng.random_range(2.0..5.0);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let mut samples: Vec<f64> = (0..len)
                    .map(|n| {
                        let t = n as f64 / fs;
                        let env = 0.6 + 0.4 * (std::f64::consts::TAU * rate * t + phase).sin();
                        let s: f64 = tones
                            .iter()
                            .map(|(f, a, p)| a * (std::f64::consts::TAU * f * t + p).sin())
                            .sum();
                        env * s
                    })
                    .collect();
                apply_edge_ramps(&mut samples, (fs * 0.02) as usize);
                PoolEntry {
                    id: format!("tone{k:04}"),
                    wave: Waveform::new(samples, sample_rate).expect("finite synthetic audio"),
                }
            })
            .collect();
        Self { entries }
    }

    /// Noise stand-ins: white noise through a random one-pole low-pass.
    pub fn synthetic_noise(count: usize, sample_rate: u32, seconds: f64, seed: u64) -> Self {
        let len = ((seconds * sample_rate as f64).round() as usize).max(1);
        let entries = (0..count)
            .map(|k| {
                let mut rng = keyed(seed ^ 0x6e6f_6973_6500_0000, k as u64, Field::PoolAudio);
                let pole: f64 = rng.random_range(0.0..0.95);
                let mut state = 0.0;
                let samples = (0..len)
                    .map(|_| {
                        let w: f64 = rng.random_range(-1.0..1.0);
                        state = pole * state + (1.0 - pole) * w;
                        state
                    })
                    .collect();
                PoolEntry {
                    id: format!("noise{k:04}"),
                    wave: Waveform::new(samples, sample_rate).expect("finite synthetic audio"),
                }
            })
            .collect();
        Self { entries }
    }
}

/// Raised-cosine fade-in and fade-out of `ramp` samples each.
pub fn apply_edge_ramps(samples: &mut [f64], ramp: usize) {
    let ramp = ramp.min(samples.len() / 2);
    let n = samples.len();
    for i in 0..ramp {
        let g = 0.5 - 0.5 * (std::f64::consts::PI * (i as f64 + 0.5) / ramp as f64).cos();
        samples[i] *= g;
        samples[n - 1 - i] *= g;
    }
}

/// Randomized parameters of one utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisParams {
    pub m: usize,
    pub overlap_ratio: f64,
    pub gains_db: Vec<f64>,
    pub noise_db: Option<f64>,
    pub source_picks: Vec<usize>,
    pub noise_pick: Option<usize>,
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Speaker count of utterance `index`.
///
/// Indices are grouped into consecutive blocks of `speaker_counts.len()`;
/// each block is a seeded shuffle of the allowed counts. Every index is
/// marginally uniform and any prefix of the dataset is balanced to within
/// one utterance per count.
pub fn speaker_count(config: &SynthesisConfig, index: u64) -> usize {
    let k = config.speaker_counts.len() as u64;
    let mut block = config.speaker_counts.clone();
    block.shuffle(&mut keyed(config.seed, index / k, Field::SpeakerCount));
    block[(index % k) as usize]
}

pub fn sample_spec(
    config: &SynthesisConfig,
    index: u64,
    source_pool_len: usize,
    noise_pool_len: usize,
) -> Result<SynthesisParams> {
    config.validate()?;
    if source_pool_len == 0 {
        return Err(Error::Config("source pool is empty".into()));
    }
    if config.noisy && noise_pool_len == 0 {
        return Err(Error::Config("noise pool is empty".into()));
    }
    if source_pool_len < config.max_speakers() {
        return Err(Error::Config(format!(
            "source pool has {source_pool_len} clips, need at least {} distinct speakers",
            config.max_speakers()
        )));
    }
    let seed = config.seed;
    let m = speaker_count(config, index);
    let overlap_ratio = uniform(
        &mut keyed(seed, index, Field::Overlap),
        config.overlap_range,
    );
    let mut gain_rng = keyed(seed, index, Field::SourceGains);
    let gains_db = (0..m)
        .map(|_| uniform(&mut gain_rng, config.speech_db_range))
        .collect();
    let source_picks = rand::seq::index::sample(
        &mut keyed(seed, index, Field::SourcePicks),
        source_pool_len,
        m,
    )
    .into_vec();
    let (noise_db, noise_pick) = if config.noisy {
        (
            Some(uniform(
                &mut keyed(seed, index, Field::NoiseGain),
                config.noise_db_range,
            )),
            Some(keyed(seed, index, Field::NoisePick).random_range(0..noise_pool_len)),
        )
    } else {
        (None, None)
    };
    Ok(SynthesisParams {
        m,
        overlap_ratio,
        gains_db,
        noise_db,
        source_picks,
        noise_pick,
    })
}

/// Start offsets of `m` sources: `round(k (1 - overlap) total_len / m)`.
pub fn placement_offsets(m: usize, overlap_ratio: f64, total_len: usize) -> Result<Vec<usize>> {
    if total_len == 0 {
        return Err(Error::Parameter("total length must be positive".into()));
    }
    if !(0.0..=1.0).contains(&overlap_ratio) {
        return Err(Error::Parameter(format!(
            "overlap ratio {overlap_ratio} outside [0, 1]"
        )));
    }
    if m == 0 {
        return Err(Error::Parameter("no sources to place".into()));
    }
    Ok((0..m)
        .map(|k| {
            let off = (k as f64 * (1.0 - overlap_ratio) * total_len as f64 / m as f64).round();
            (off as usize).min(total_len - 1)
        })
        .collect())
}

/// Shifts each source to its offset and truncates / zero-pads it to
/// `total_len`.
pub fn place_with_overlap(
    sources: &[Waveform],
    overlap_ratio: f64,
    total_len: usize,
) -> Result<Vec<Waveform>> {
    let offsets = placement_offsets(sources.len(), overlap_ratio, total_len)?;
    sources
        .iter()
        .zip(offsets)
        .map(|(s, off)| place_at_rate(s, off, total_len, s.sample_rate()))
        .collect()
}

fn place_at_rate(source: &[f64], offset: usize, total_len: usize, rate: u32) -> Result<Waveform> {
    if source.is_empty() {
        return Err(Error::Parameter("cannot place an empty source".into()));
    }
    let mut out = vec![0.0; total_len];
    let n = source.len().min(total_len - offset);
    out[offset..offset + n].copy_from_slice(&source[..n]);
    Waveform::new(out, rate)
}

/// Repeats `noise` until it covers `total_len` samples.
pub fn tile(noise: &[f64], total_len: usize) -> Vec<f64> {
    noise.iter().copied().cycle().take(total_len).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub index: u64,
    pub seed: u64,
    pub mixture: Waveform,
    /// Full-length, post-gain, post-shift sources.
    pub sources: Vec<Waveform>,
    pub noise: Option<Waveform>,
    pub m: usize,
    pub overlap_ratio: f64,
    pub gains_db: Vec<f64>,
    pub noise_db: Option<f64>,
    pub offsets: Vec<usize>,
    /// Samples of each source that fall inside the utterance.
    pub active_lens: Vec<usize>,
    pub source_ids: Vec<String>,
    pub noise_id: Option<String>,
}

impl UtteranceRecord {
    pub fn id(&self) -> String {
        utterance_id(self.index)
    }

    pub fn is_noisy(&self) -> bool {
        self.noise.is_some()
    }

    /// Region of source `k` that carries signal.
    pub fn active_region(&self, k: usize) -> &[f64] {
        &self.sources[k][self.offsets[k]..self.offsets[k] + self.active_lens[k]]
    }
}

pub fn utterance_id(index: u64) -> String {
    format!("utt{index:06}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileRole {
    Mix,
    Src,
    Noise,
    Est,
}

impl FileRole {
    fn tag(self) -> &'static str {
        match self {
            FileRole::Mix => "mix",
            FileRole::Src => "src",
            FileRole::Noise => "noise",
            FileRole::Est => "est",
        }
    }
}

/// `utt{index:06}_{role}{k}.wav`
pub fn audio_file_name(index: u64, role: FileRole, k: usize) -> String {
    format!("utt{index:06}_{}{k}.wav", role.tag())
}

pub fn synth_utterance(
    config: &SynthesisConfig,
    index: u64,
    source_pool: &AudioPool,
    noise_pool: &AudioPool,
) -> Result<UtteranceRecord> {
    let params = sample_spec(config, index, source_pool.len(), noise_pool.len())?;
    let clips: Vec<&PoolEntry> = params
        .source_picks
        .iter()
        .map(|&k| &source_pool.entries[k])
        .collect();
    let noise = params.noise_pick.map(|k| &noise_pool.entries[k]);
    render_utterance(config, index, &params, &clips, noise)
}

/// Builds an utterance from already drawn parameters and the chosen clips.
pub fn render_utterance(
    config: &SynthesisConfig,
    index: u64,
    params: &SynthesisParams,
    source_clips: &[&PoolEntry],
    noise_clip: Option<&PoolEntry>,
) -> Result<UtteranceRecord> {
    if source_clips.len() != params.m || params.gains_db.len() != params.m {
        return Err(Error::Dimension(format!(
            "{} clips and {} gains for {} speakers",
            source_clips.len(),
            params.gains_db.len(),
            params.m
        )));
    }
    let rate = config.sample_rate;
    let total_len = config.total_len();
    let offsets = placement_offsets(params.m, params.overlap_ratio, total_len)?;

    let mut sources = Vec::with_capacity(params.m);
    let mut active_lens = Vec::with_capacity(params.m);
    let mut source_ids = Vec::with_capacity(params.m);
    for ((entry, &gain_db), &off) in source_clips.iter().zip(&params.gains_db).zip(&offsets) {
        check_rate(&entry.id, &entry.wave, rate)?;
        let active = entry.wave.len().min(total_len - off);
        let segment = &entry.wave[..active];
        let gain = energy_gain(segment, gain_db)
            .map_err(|_| Error::DegenerateSignal(format!("source clip {} is silent", entry.id)))?;
        let scaled: Vec<f64> = segment.iter().map(|s| s * gain).collect();
        sources.push(place_at_rate(&scaled, off, total_len, rate)?);
        active_lens.push(active);
        source_ids.push(entry.id.clone());
    }

    let (noise, noise_id) = match (noise_clip, params.noise_db) {
        (Some(entry), Some(db)) => {
            check_rate(&entry.id, &entry.wave, rate)?;
            let tiled = tile(&entry.wave, total_len);
            let gain = energy_gain(&tiled, db).map_err(|_| {
                Error::DegenerateSignal(format!("noise clip {} is silent", entry.id))
            })?;
            let scaled = tiled.iter().map(|s| s * gain).collect();
            (Some(Waveform::new(scaled, rate)?), Some(entry.id.clone()))
        }
        _ => (None, None),
    };

    let mixture = mix(&sources, noise.as_ref())?;
    Ok(UtteranceRecord {
        index,
        seed: config.seed,
        mixture,
        sources,
        noise,
        m: params.m,
        overlap_ratio: params.overlap_ratio,
        gains_db: params.gains_db.clone(),
        noise_db: params.noise_db,
        offsets,
        active_lens,
        source_ids,
        noise_id,
    })
}

fn check_rate(id: &str, wave: &Waveform, rate: u32) -> Result<()> {
    if wave.sample_rate() != rate {
        return Err(Error::Format(format!(
            "clip {id} is {} Hz, synthesis runs at {rate} Hz",
            wave.sample_rate()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFiles {
    pub mixture: String,
    pub sources: Vec<String>,
    pub noise: Option<String>,
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub index: u64,
    pub seed: u64,
    pub m: usize,
    pub noisy: bool,
    pub sample_rate: u32,
    pub num_samples: usize,
    pub overlap_ratio: f64,
    pub gains_db: Vec<f64>,
    pub noise_db: Option<f64>,
    pub offsets: Vec<usize>,
    pub active_lens: Vec<usize>,
    pub source_ids: Vec<String>,
    pub noise_id: Option<String>,
    pub energy_reference: String,
    /// Common factor applied to every file of the utterance to stay below
    /// full scale. Gains above refer to the unscaled signals.
    pub file_scale: f64,
    pub files: ManifestFiles,
}

/// Scale keeping the loudest signal of `record` at or below the file peak.
pub fn file_scale(record: &UtteranceRecord) -> f64 {
    let peak = record
        .sources
        .iter()
        .chain(record.noise.as_ref())
        .chain(std::iter::once(&record.mixture))
        .flat_map(|w| w.iter())
        .fold(0.0f64, |p, s| p.max(s.abs()));
    if peak > FILE_PEAK {
        FILE_PEAK / peak
    } else {
        1.0
    }
}

impl ManifestEntry {
    pub fn from_record(record: &UtteranceRecord, scale: f64) -> Self {
        let idx = record.index;
        Self {
            id: record.id(),
            index: idx,
            seed: record.seed,
            m: record.m,
            noisy: record.is_noisy(),
            sample_rate: record.mixture.sample_rate(),
            num_samples: record.mixture.len(),
            overlap_ratio: record.overlap_ratio,
            gains_db: record.gains_db.clone(),
            noise_db: record.noise_db,
            offsets: record.offsets.clone(),
            active_lens: record.active_lens.clone(),
            source_ids: record.source_ids.clone(),
            noise_id: record.noise_id.clone(),
            energy_reference: ENERGY_REFERENCE.to_string(),
            file_scale: scale,
            files: ManifestFiles {
                mixture: audio_file_name(idx, FileRole::Mix, 0),
                sources: (0..record.m)
                    .map(|k| audio_file_name(idx, FileRole::Src, k))
                    .collect(),
                noise: record
                    .noise
                    .as_ref()
                    .map(|_| audio_file_name(idx, FileRole::Noise, 0)),
            },
        }
    }
}

/// Synthesizes `count` utterances into `out_dir` and writes the manifest.
pub fn write_dataset(
    config: &SynthesisConfig,
    count: usize,
    source_pool: &AudioPool,
    noise_pool: &AudioPool,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(count);
    for index in 0..count as u64 {
        let record = synth_utterance(config, index, source_pool, noise_pool)?;
        let scale = file_scale(&record);
        let entry = ManifestEntry::from_record(&record, scale);
        write_wav(
            &out_dir.join(&entry.files.mixture),
            &record.mixture.scaled(scale),
        )?;
        for (w, name) in record.sources.iter().zip(&entry.files.sources) {
            write_wav(&out_dir.join(name), &w.scaled(scale))?;
        }
        if let (Some(w), Some(name)) = (&record.noise, &entry.files.noise) {
            write_wav(&out_dir.join(name), &w.scaled(scale))?;
        }
        entries.push(entry);
    }
    write_manifest(&out_dir.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut sorted: Vec<&ManifestEntry> = entries.iter().collect();
    sorted.sort_by_key(|e| e.index);
    for e in sorted {
        let line = serde_json::to_string(e).expect("manifest entries serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(n, line)| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

/// Audio of one manifest entry as stored on disk (file scale included).
#[derive(Clone, Debug, PartialEq)]
pub struct StoredUtterance {
    pub mixture: Waveform,
    pub sources: Vec<Waveform>,
    pub noise: Option<Waveform>,
}

pub fn load_utterance(entry: &ManifestEntry, dir: &Path) -> Result<StoredUtterance> {
    let mixture = read_wav(&dir.join(&entry.files.mixture))?;
    let sources = entry
        .files
        .sources
        .iter()
        .map(|f| read_wav(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let noise = entry
        .files
        .noise
        .as_ref()
        .map(|f| read_wav(&dir.join(f)))
        .transpose()?;
    Ok(StoredUtterance {
        mixture,
        sources,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::power_db;

    fn pools(rate: u32) -> (AudioPool, AudioPool) {
        (
            AudioPool::synthetic_speech(8, rate, 0.8, (100.0, 1500.0), 1),
            AudioPool::synthetic_noise(3, rate, 0.3, 2),
        )
    }

    fn small_config() -> SynthesisConfig {
        SynthesisConfig {
            utterance_seconds: 0.5,
            sample_rate: 4000,
            noisy: true,
            seed: 17,
            ..Default::default()
        }
    }

    #[test]
    fn spec_is_deterministic() {
        let cfg = small_config();
        assert_eq!(
            sample_spec(&cfg, 5, 8, 3).unwrap(),
            sample_spec(&cfg, 5, 8, 3).unwrap()
        );
    }

    #[test]
    fn speaker_counts_are_uniform() {
        let cfg = small_config();
        let mut hist = [0usize; 5];
        for i in 0..10_000 {
            hist[sample_spec(&cfg, i, 8, 3).unwrap().m] += 1;
        }
        for &c in &hist[1..] {
            assert!((c as f64 / 10_000.0 - 0.25).abs() < 0.03);
        }
    }

    #[test]
    fn speaker_count_marginal_is_uniform_across_seeds() {
        // a single index over many seeds: tests the shuffle, not the blocking
        let mut hist = [0usize; 5];
        for seed in 0..4000 {
            let cfg = SynthesisConfig {
                seed,
                ..small_config()
            };
            hist[speaker_count(&cfg, 2)] += 1;
        }
        for &c in &hist[1..] {
            assert!((c as f64 / 4000.0 - 0.25).abs() < 0.03);
        }
    }

    #[test]
    fn overlap_draws_stay_in_range() {
        let cfg = small_config();
        let draws: Vec<f64> = (0..2000)
            .map(|i| sample_spec(&cfg, i, 8, 3).unwrap().overlap_ratio)
            .collect();
        assert!(draws.iter().all(|&o| (0.0..=1.0).contains(&o)));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.05);
    }

    #[test]
    fn empty_pools_are_rejected() {
        let cfg = small_config();
        assert!(matches!(sample_spec(&cfg, 0, 0, 3), Err(Error::Config(_))));
        assert!(matches!(sample_spec(&cfg, 0, 8, 0), Err(Error::Config(_))));
        let clean = SynthesisConfig {
            noisy: false,
            ..cfg
        };
        assert!(sample_spec(&clean, 0, 8, 0).is_ok());
    }

    #[test]
    fn placement_examples() {
        assert_eq!(placement_offsets(3, 1.0, 100).unwrap(), vec![0, 0, 0]);
        assert_eq!(placement_offsets(1, 0.0, 100).unwrap(), vec![0]);
        assert_eq!(placement_offsets(1, 0.37, 100).unwrap(), vec![0]);
        assert_eq!(placement_offsets(2, 0.5, 16).unwrap(), vec![0, 4]);
        assert_eq!(placement_offsets(4, 0.0, 16).unwrap(), vec![0, 4, 8, 12]);
        assert!(placement_offsets(2, 0.5, 0).is_err());

        let s = Waveform::new(vec![1.0; 10], 8).unwrap();
        let placed = place_with_overlap(&[s.clone(), s], 0.5, 16).unwrap();
        assert_eq!(placed[1].iter().position(|&v| v != 0.0), Some(4));
        assert_eq!(placed[1].iter().filter(|&&v| v != 0.0).count(), 10);
        assert_eq!(placed[0].len(), 16);
    }

    #[test]
    fn clean_record_has_no_noise() {
        let (sp, np) = pools(4000);
        let cfg = SynthesisConfig {
            noisy: false,
            ..small_config()
        };
        let r = synth_utterance(&cfg, 3, &sp, &np).unwrap();
        assert!(r.noise.is_none());
        assert_eq!(r.mixture, mix(&r.sources, None).unwrap());
    }

    #[test]
    fn record_invariants() {
        let (sp, np) = pools(4000);
        let cfg = small_config();
        for i in 0..40 {
            let r = synth_utterance(&cfg, i, &sp, &np).unwrap();
            assert_eq!(r.sources.len(), r.m);
            let expect = mix(&r.sources, r.noise.as_ref()).unwrap();
            assert_eq!(r.mixture, expect);
            for k in 0..r.m {
                assert_eq!(r.sources[k].len(), cfg.total_len());
                assert!((power_db(r.active_region(k)) - r.gains_db[k]).abs() < 0.01);
                assert!(r.offsets[k] + r.active_lens[k] <= cfg.total_len());
            }
            let noise = r.noise.as_ref().unwrap();
            assert_eq!(noise.len(), cfg.total_len());
            assert!((power_db(noise) - r.noise_db.unwrap()).abs() < 0.01);
        }
    }

    #[test]
    fn rate_mismatch_is_format_error() {
        let (sp, np) = pools(8000);
        assert!(matches!(
            synth_utterance(&small_config(), 0, &sp, &np),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn silent_clip_is_degenerate() {
        let silent = AudioPool {
            entries: (0..4)
                .map(|k| PoolEntry {
                    id: format!("s{k}"),
                    wave: Waveform::zeros(100, 4000).unwrap(),
                })
                .collect(),
        };
        let cfg = SynthesisConfig {
            noisy: false,
            ..small_config()
        };
        assert!(matches!(
            synth_utterance(&cfg, 0, &silent, &AudioPool::default()),
            Err(Error::DegenerateSignal(_))
        ));
    }

    #[test]
    fn tiling_repeats() {
        assert_eq!(
            tile(&[1.0, 2.0, 3.0], 7),
            vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]
        );
    }

    #[test]
    fn file_names() {
        assert_eq!(audio_file_name(12, FileRole::Src, 2), "utt000012_src2.wav");
        assert_eq!(audio_file_name(0, FileRole::Mix, 0), "utt000000_mix0.wav");
    }

    #[test]
    fn config_validation() {
        let bad = SynthesisConfig {
            speech_db_range: (3.0, -3.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthesisConfig {
            utterance_seconds: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(SynthesisConfig::default().validate().is_ok());
    }
}
