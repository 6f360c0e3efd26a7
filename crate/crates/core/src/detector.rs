//! Invalid output detection and speaker counting.
//!
//! An output whose SI-SDR against the input mixture (its "autoencoding
//! score") exceeds a threshold is treated as a copy of the mixture rather
//! than a separated source. The remaining outputs are the valid ones, and
//! their number is the predicted speaker count.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{keyed, Field};
use crate::signal::{check_same_len, power, sisdr, sisdr_floor, SimilarityStats, Waveform};

/// Default streaming hop: 10 ms at 16 kHz.
pub const DEFAULT_FRAME_HOP: usize = 160;

/// Thresholds read off training-set autoencoding histograms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdPreset {
    /// Any clean model.
    #[serde(rename = "clean")]
    Clean,
    /// Noisy, trained on 2 and 3 speaker mixtures.
    #[serde(rename = "noisy-23")]
    Noisy23,
    /// Noisy, trained on 2 to 4 speaker mixtures.
    #[serde(rename = "noisy-234")]
    Noisy234,
    /// Noisy, trained on 1 to 4 speaker mixtures.
    #[serde(rename = "noisy-1234")]
    Noisy1234,
}

impl ThresholdPreset {
    pub const ALL: [ThresholdPreset; 4] = [
        ThresholdPreset::Clean,
        ThresholdPreset::Noisy23,
        ThresholdPreset::Noisy234,
        ThresholdPreset::Noisy1234,
    ];

    pub fn threshold_db(self) -> f64 {
        match self {
            ThresholdPreset::Clean => 20.0,
            ThresholdPreset::Noisy23 | ThresholdPreset::Noisy234 => 12.0,
            ThresholdPreset::Noisy1234 => 8.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ThresholdPreset::Clean => "clean",
            ThresholdPreset::Noisy23 => "noisy-23",
            ThresholdPreset::Noisy234 => "noisy-234",
            ThresholdPreset::Noisy1234 => "noisy-1234",
        }
    }
}

impl fmt::Display for ThresholdPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ThresholdPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "unknown preset {s:?}; expected one of clean, noisy-23, noisy-234, noisy-1234"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    /// Invalid when the SI-SDR against the mixture exceeds the threshold.
    #[default]
    Autoencoding,
    /// Invalid when the output power falls below an energy threshold.
    EnergyBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub threshold_db: f64,
    pub mode: DetectionMode,
    pub energy_threshold_db: f64,
    pub frame_hop: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self::from_preset(ThresholdPreset::Clean)
    }
}

impl DetectionConfig {
    pub fn from_preset(preset: ThresholdPreset) -> Self {
        Self::with_threshold(preset.threshold_db())
    }

    pub fn with_threshold(threshold_db: f64) -> Self {
        Self {
            threshold_db,
            mode: DetectionMode::Autoencoding,
            energy_threshold_db: -40.0,
            frame_hop: DEFAULT_FRAME_HOP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold_db.is_nan() {
            return Err(Error::Parameter("threshold is NaN".into()));
        }
        if self.mode == DetectionMode::EnergyBaseline && !self.energy_threshold_db.is_finite() {
            return Err(Error::Parameter("energy threshold must be finite".into()));
        }
        if self.frame_hop == 0 {
            return Err(Error::Parameter("frame hop must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    /// SI-SDR of each output against the mixture.
    pub scores_db: Vec<f64>,
    pub valid_mask: Vec<bool>,
    pub predicted_count: usize,
    pub threshold_db: f64,
    pub mode: DetectionMode,
    /// Output powers, only reported in energy baseline mode.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub energies_db: Option<Vec<f64>>,
}

impl DetectionResult {
    /// Applies the autoencoding rule: a score equal to the threshold is
    /// still valid.
    pub fn from_scores(scores_db: Vec<f64>, threshold_db: f64) -> Self {
        let valid_mask: Vec<bool> = scores_db.iter().map(|&s| s <= threshold_db).collect();
        Self::from_parts(
            scores_db,
            valid_mask,
            threshold_db,
            DetectionMode::Autoencoding,
            None,
        )
    }

    fn from_parts(
        scores_db: Vec<f64>,
        valid_mask: Vec<bool>,
        threshold_db: f64,
        mode: DetectionMode,
        energies_db: Option<Vec<f64>>,
    ) -> Self {
        let predicted_count = valid_mask.iter().filter(|v| **v).count();
        Self {
            scores_db,
            valid_mask,
            predicted_count,
            threshold_db,
            mode,
            energies_db,
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.valid_mask.len()
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        self.indices_where(true)
    }

    pub fn invalid_indices(&self) -> Vec<usize> {
        self.indices_where(false)
    }

    fn indices_where(&self, flag: bool) -> Vec<usize> {
        self.valid_mask
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == flag)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Output power in dB, floored at -200 dB so silence stays finite.
fn floored_power_db(x: &[f64]) -> f64 {
    10.0 * power(x).max(1e-20).log10()
}

pub fn detect(
    outputs: &[Waveform],
    mixture: &Waveform,
    config: &DetectionConfig,
) -> Result<DetectionResult> {
    config.validate()?;
    let scores = outputs
        .iter()
        .map(|o| sisdr(mixture, o))
        .collect::<Result<Vec<_>>>()?;
    match config.mode {
        DetectionMode::Autoencoding => {
            Ok(DetectionResult::from_scores(scores, config.threshold_db))
        }
        DetectionMode::EnergyBaseline => {
            let energies: Vec<f64> = outputs.iter().map(|o| floored_power_db(o)).collect();
            let mask = energies
                .iter()
                .map(|&e| e >= config.energy_threshold_db)
                .collect();
            Ok(DetectionResult::from_parts(
                scores,
                mask,
                config.energy_threshold_db,
                DetectionMode::EnergyBaseline,
                Some(energies),
            ))
        }
    }
}

pub fn count_speakers(
    outputs: &[Waveform],
    mixture: &Waveform,
    config: &DetectionConfig,
) -> Result<usize> {
    Ok(detect(outputs, mixture, config)?.predicted_count)
}

/// Picks exactly `required_m` outputs given a detection result.
///
/// Too few valid outputs: all of them plus a seeded uniform draw from the
/// invalid ones. Too many: a seeded uniform draw of `required_m` valid ones.
/// Indices are returned in ascending order.
pub fn select_outputs(
    result: &DetectionResult,
    required_m: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = result.n_outputs();
    if required_m > n {
        return Err(Error::Capacity {
            sources: required_m,
            outputs: n,
        });
    }
    let valid = result.valid_indices();
    let k = valid.len();
    let mut rng = keyed(seed, 0, Field::Selection);
    let mut chosen = if k == required_m {
        valid
    } else if k < required_m {
        let invalid = result.invalid_indices();
        let mut picked = valid;
        picked.extend(
            sample(&mut rng, invalid.len(), required_m - k)
                .into_iter()
                .map(|i| invalid[i]),
        );
        picked
    } else {
        sample(&mut rng, k, required_m)
            .into_iter()
            .map(|i| valid[i])
            .collect()
    };
    chosen.sort_unstable();
    Ok(chosen)
}

/// Cumulative autoencoding score of one output, updated sample by sample.
#[derive(Clone, Debug, Default)]
pub struct StreamingScorer {
    stats: SimilarityStats,
}

impl StreamingScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, mixture_sample: f64, output_sample: f64) {
        self.stats.push(mixture_sample, output_sample);
    }

    pub fn samples_seen(&self) -> usize {
        self.stats.len()
    }

    /// SI-SDR over everything pushed so far. While both signals are still
    /// all-zero the score is the SI-SDR floor.
    pub fn score(&self) -> f64 {
        match self.stats.sisdr() {
            Ok(v) => v,
            Err(_) => sisdr_floor(),
        }
    }
}

/// Per-output cumulative scores over prefixes `[0, min((t + 1) hop, L))`.
pub fn frame_scores(
    outputs: &[Waveform],
    mixture: &Waveform,
    config: &DetectionConfig,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let hop = config.frame_hop;
    outputs
        .iter()
        .map(|out| {
            check_same_len(mixture, out)?;
            let mut scorer = StreamingScorer::new();
            let mut series = Vec::with_capacity(out.len().div_ceil(hop));
            for (mix_block, out_block) in mixture.chunks(hop).zip(out.chunks(hop)) {
                for (&x, &y) in mix_block.iter().zip(out_block) {
                    scorer.push(x, y);
                }
                series.push(scorer.score());
            }
            Ok(series)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::sisdr_ceiling;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone(freq: f64, n: usize) -> Waveform {
        Waveform::new(
            (0..n)
                .map(|i| (std::f64::consts::TAU * freq * i as f64 / n as f64).sin())
                .collect(),
            8000,
        )
        .unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Waveform {
        Waveform::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), 8000).unwrap()
    }

    #[test]
    fn threshold_rule() {
        let r = DetectionResult::from_scores(vec![25.0, 3.0, 22.0], 20.0);
        assert_eq!(r.valid_mask, vec![false, true, false]);
        assert_eq!(r.predicted_count, 1);
        // equal to the threshold counts as valid
        let r = DetectionResult::from_scores(vec![20.0], 20.0);
        assert_eq!(r.predicted_count, 1);
    }

    #[test]
    fn presets() {
        assert_eq!(ThresholdPreset::Clean.threshold_db(), 20.0);
        assert_eq!(ThresholdPreset::Noisy23.threshold_db(), 12.0);
        assert_eq!(ThresholdPreset::Noisy234.threshold_db(), 12.0);
        assert_eq!(ThresholdPreset::Noisy1234.threshold_db(), 8.0);
        assert_eq!(
            "noisy-1234".parse::<ThresholdPreset>().unwrap(),
            ThresholdPreset::Noisy1234
        );
        assert!("noisy".parse::<ThresholdPreset>().is_err());
    }

    #[test]
    fn all_mixture_outputs_count_zero() {
        let mix = tone(3.0, 256);
        let outs = vec![mix.clone(); 3];
        let r = detect(&outs, &mix, &DetectionConfig::default()).unwrap();
        assert_eq!(r.predicted_count, 0);
        assert!(r.scores_db.iter().all(|&s| s == sisdr_ceiling()));

        let vacuous = DetectionConfig::with_threshold(sisdr_ceiling());
        assert_eq!(count_speakers(&outs, &mix, &vacuous).unwrap(), 3);
    }

    #[test]
    fn counts_constructed_outputs() {
        let s1 = tone(3.0, 512);
        let s2 = tone(7.0, 512);
        let mix = crate::signal::mix(&[s1.clone(), s2.clone()], None).unwrap();
        let outs = vec![s1, mix.clone(), s2];
        let cfg = DetectionConfig::default();
        assert_eq!(count_speakers(&outs, &mix, &cfg).unwrap(), 2);

        // orthogonal to the mixture
        let ortho = vec![tone(11.0, 512), tone(13.0, 512), tone(17.0, 512)];
        assert_eq!(count_speakers(&ortho, &mix, &cfg).unwrap(), 3);
    }

    #[test]
    fn energy_baseline_uses_power() {
        let mix = tone(3.0, 256);
        let quiet = mix.scaled(1e-4);
        let silent = Waveform::zeros(256, 8000).unwrap();
        let cfg = DetectionConfig {
            mode: DetectionMode::EnergyBaseline,
            energy_threshold_db: -40.0,
            ..DetectionConfig::default()
        };
        let r = detect(&[mix.clone(), quiet, silent], &mix, &cfg).unwrap();
        assert_eq!(r.valid_mask, vec![true, false, false]);
        assert_eq!(r.energies_db.as_ref().unwrap()[2], -200.0);
    }

    #[test]
    fn selection_rules() {
        let exact = DetectionResult::from_scores(vec![30.0, 1.0, 2.0], 20.0);
        assert_eq!(select_outputs(&exact, 2, 0).unwrap(), vec![1, 2]);

        let under = DetectionResult::from_scores(vec![30.0, 1.0, 25.0], 20.0);
        let pick = select_outputs(&under, 2, 99).unwrap();
        assert!(pick.contains(&1) && pick.len() == 2);
        assert_eq!(pick, select_outputs(&under, 2, 99).unwrap());

        let over = DetectionResult::from_scores(vec![1.0, 2.0, 3.0], 20.0);
        let pick = select_outputs(&over, 1, 5).unwrap();
        assert_eq!(pick.len(), 1);
        assert_eq!(pick, select_outputs(&over, 1, 5).unwrap());

        assert!(matches!(
            select_outputs(&over, 4, 0),
            Err(Error::Capacity { .. })
        ));
        assert!(select_outputs(&over, 0, 0).unwrap().is_empty());
    }

    #[test]
    fn selection_draws_cover_choices() {
        let under = DetectionResult::from_scores(vec![30.0, 1.0, 25.0], 20.0);
        let mut seen = [false; 3];
        for seed in 0..64 {
            for i in select_outputs(&under, 2, seed).unwrap() {
                seen[i] = true;
            }
        }
        assert_eq!(seen, [true, true, true]);
    }

    #[test]
    fn streaming_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mix = random(&mut rng, 1000);
        let out = random(&mut rng, 1000);

        let whole = DetectionConfig {
            frame_hop: 1000,
            ..Default::default()
        };
        let s = frame_scores(std::slice::from_ref(&out), &mix, &whole).unwrap();
        assert_eq!(s[0], vec![sisdr(&mix, &out).unwrap()]);

        let s = frame_scores(
            std::slice::from_ref(&mix),
            &mix,
            &DetectionConfig::default(),
        )
        .unwrap();
        assert_eq!(s[0].len(), 7);
        assert!(s[0].iter().all(|&v| v == sisdr_ceiling()));

        let cfg = DetectionConfig {
            frame_hop: 160,
            ..Default::default()
        };
        let s = frame_scores(std::slice::from_ref(&out), &mix, &cfg).unwrap();
        for (t, &v) in s[0].iter().enumerate() {
            let end = ((t + 1) * 160).min(1000);
            assert!((v - sisdr(&mix[..end], &out[..end]).unwrap()).abs() < 1e-9);
        }

        let bad = DetectionConfig {
            frame_hop: 0,
            ..Default::default()
        };
        assert!(frame_scores(&[out], &mix, &bad).is_err());
    }

    #[test]
    fn silent_prefix_scores_floor() {
        let mut samples = vec![0.0; 10];
        samples.extend((0..10).map(|i| i as f64));
        let mix = Waveform::new(samples, 8000).unwrap();
        let cfg = DetectionConfig {
            frame_hop: 5,
            ..Default::default()
        };
        let s = frame_scores(std::slice::from_ref(&mix), &mix, &cfg).unwrap();
        assert_eq!(s[0][0], sisdr_floor());
        assert_eq!(s[0][3], sisdr_ceiling());
    }

    proptest! {
        #[test]
        fn count_is_monotone_in_threshold(scores in prop::collection::vec(-50.0f64..130.0, 1..6), t1 in -60.0f64..130.0, dt in 0.0f64..50.0) {
            let lo = DetectionResult::from_scores(scores.clone(), t1).predicted_count;
            let hi = DetectionResult::from_scores(scores, t1 + dt).predicted_count;
            prop_assert!(lo <= hi);
        }

        #[test]
        fn selection_has_required_size(mask in prop::collection::vec(any::<bool>(), 1..6), req in 0usize..6, seed in any::<u64>()) {
            prop_assume!(req <= mask.len());
            let scores = mask.iter().map(|&v| if v { 0.0 } else { 50.0 }).collect();
            let r = DetectionResult::from_scores(scores, 20.0);
            let pick = select_outputs(&r, req, seed).unwrap();
            prop_assert_eq!(pick.len(), req);
            prop_assert!(pick.windows(2).all(|w| w[0] < w[1]));
            if r.predicted_count <= req {
                for v in r.valid_indices() {
                    prop_assert!(pick.contains(&v));
                }
            } else {
                prop_assert!(pick.iter().all(|&i| mask[i]));
            }
        }
    }
}
