//! Scalar signal math: cosine similarity, SI-SDR and its skewed variant,
//! analytic gradients, energy rescaling and mixing.
//!
//! All functions take plain sample slices; [`Waveform`] dereferences to
//! `[f64]` so it can be passed directly. Every reduction over samples goes
//! through [`SimilarityStats`] / [`CompensatedSum`], which add in index order
//! with Neumaier compensation. Batch and streaming evaluation therefore share
//! one summation order and agree bit-for-bit on the same prefix.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to the target and estimate energies before they are used
/// as denominators.
pub const ENERGY_FLOOR: f64 = 1e-8;

/// Lower clamp on the squared cosine similarity.
pub const COS2_MIN: f64 = 1e-12;

/// Upper clamp on the squared cosine similarity.
pub const COS2_MAX: f64 = 1.0 - 1e-12;

const DB_PER_NEPER_POWER: f64 = 10.0 / std::f64::consts::LN_10;

/// Largest value [`sisdr`] can return (about 120 dB).
pub fn sisdr_ceiling() -> f64 {
    skewed_db(COS2_MAX, 0.0)
}

/// Smallest value [`sisdr`] can return (about -120 dB).
pub fn sisdr_floor() -> f64 {
    skewed_db(COS2_MIN, 0.0)
}

/// Mono sample buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Value("waveform has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Value("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Value(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Returns a copy with every sample multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

impl Deref for Waveform {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.samples
    }
}

impl AsRef<[f64]> for Waveform {
    fn as_ref(&self) -> &[f64] {
        &self.samples
    }
}

/// Running sum with Neumaier compensation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Inner products between a target `x` and an estimate `xhat`:
/// `a = x·x`, `b = xhat·x`, `c2 = xhat·xhat`.
///
/// Doubles as the O(1)-update accumulator used for streaming scores.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SimilarityStats {
    a: CompensatedSum,
    b: CompensatedSum,
    c2: CompensatedSum,
    len: usize,
}

impl SimilarityStats {
    pub fn from_signals(x: &[f64], xhat: &[f64]) -> Result<Self> {
        check_same_len(x, xhat)?;
        let mut stats = Self::default();
        for (&t, &e) in x.iter().zip(xhat) {
            stats.push(t, e);
        }
        Ok(stats)
    }

    #[inline]
    pub fn push(&mut self, target: f64, estimate: f64) {
        self.a.add(target * target);
        self.b.add(estimate * target);
        self.c2.add(estimate * estimate);
        self.len += 1;
    }

    pub fn a(&self) -> f64 {
        self.a.value()
    }

    pub fn b(&self) -> f64 {
        self.b.value()
    }

    pub fn c2(&self) -> f64 {
        self.c2.value()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Cosine similarity with floored energies, clamped to [-1, 1].
    pub fn cosine(&self) -> Result<f64> {
        let (a, b, c2) = (self.a(), self.b(), self.c2());
        if !(a.is_finite() && b.is_finite() && c2.is_finite()) {
            return Err(Error::Value("non-finite signal energy".into()));
        }
        if a == 0.0 && c2 == 0.0 {
            return Err(Error::DegenerateSignal(
                "target and estimate are both all-zero".into(),
            ));
        }
        let denom = (a.max(ENERGY_FLOOR) * c2.max(ENERGY_FLOOR)).sqrt();
        Ok((b / denom).clamp(-1.0, 1.0))
    }

    /// Squared cosine similarity, clamped to `[COS2_MIN, COS2_MAX]`.
    pub fn clamped_cos2(&self) -> Result<f64> {
        let c = self.cosine()?;
        Ok((c * c).clamp(COS2_MIN, COS2_MAX))
    }

    pub fn sisdr(&self) -> Result<f64> {
        Ok(skewed_db(self.clamped_cos2()?, 0.0))
    }

    pub fn alpha_sisdr(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        Ok(skewed_db(self.clamped_cos2()?, alpha))
    }
}

#[inline]
fn skewed_db(cos2: f64, alpha: f64) -> f64 {
    DB_PER_NEPER_POWER * (cos2.ln() - (1.0 + alpha - cos2).ln())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::Parameter(format!(
            "skew alpha must be finite and non-negative, got {alpha}"
        )));
    }
    Ok(())
}

pub(crate) fn check_same_len(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "signal lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::Dimension("signals are empty".into()));
    }
    Ok(())
}

pub fn cosine_sim(x: &[f64], xhat: &[f64]) -> Result<f64> {
    SimilarityStats::from_signals(x, xhat)?.cosine()
}

/// Scale-invariant SDR of `xhat` against the target `x`, in dB.
pub fn sisdr(x: &[f64], xhat: &[f64]) -> Result<f64> {
    SimilarityStats::from_signals(x, xhat)?.sisdr()
}

/// Skewed SI-SDR `10 log10(c² / (1 + alpha - c²))`. With `alpha > 0` the
/// value is bounded above by `10 log10(1 / alpha)`.
pub fn alpha_sisdr(x: &[f64], xhat: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    SimilarityStats::from_signals(x, xhat)?.alpha_sisdr(alpha)
}

/// Gradient of [`alpha_sisdr`] with respect to every sample of `xhat`.
///
/// Zero wherever the squared cosine sits on (or beyond) either clamp.
pub fn alpha_sisdr_grad(x: &[f64], xhat: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let stats = SimilarityStats::from_signals(x, xhat)?;
    // validates energies and the degenerate case
    stats.cosine()?;

    let (a, b, c2) = (stats.a(), stats.b(), stats.c2());
    let a_f = a.max(ENERGY_FLOOR);
    let c2_f = c2.max(ENERGY_FLOOR);
    let cos2 = b * b / (a_f * c2_f);
    if !(cos2 > COS2_MIN && cos2 < COS2_MAX) {
        return Ok(vec![0.0; xhat.len()]);
    }

    let d_db = DB_PER_NEPER_POWER * (1.0 / cos2 + 1.0 / (1.0 + alpha - cos2));
    let scale = d_db * 2.0 * b / (a_f * c2_f);
    // the floored estimate energy is a constant
    let proj = if c2 > ENERGY_FLOOR { b / c2_f } else { 0.0 };
    Ok(x.iter()
        .zip(xhat)
        .map(|(&t, &e)| scale * (t - proj * e))
        .collect())
}

pub fn sisdr_grad(x: &[f64], xhat: &[f64]) -> Result<Vec<f64>> {
    alpha_sisdr_grad(x, xhat, 0.0)
}

/// Mean-square power.
pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|s| s * s).collect::<CompensatedSum>().value() / x.len() as f64
}

/// Mean-square power in dB relative to unit full scale. `-inf` for silence.
pub fn power_db(x: &[f64]) -> f64 {
    10.0 * power(x).log10()
}

/// Gain that brings `x` to the requested mean-square power.
pub fn energy_gain(x: &[f64], target_db: f64) -> Result<f64> {
    if !target_db.is_finite() {
        return Err(Error::Parameter(format!("target energy {target_db} dB")));
    }
    let p = power(x);
    if p == 0.0 {
        return Err(Error::DegenerateSignal(
            "cannot rescale an all-zero signal".into(),
        ));
    }
    Ok(10f64.powf((target_db - 10.0 * p.log10()) / 20.0))
}

pub fn rescale_to_energy(x: &Waveform, target_db: f64) -> Result<Waveform> {
    Ok(x.scaled(energy_gain(x, target_db)?))
}

/// Sample-wise sum of `sources` plus optional `noise`, added left to right.
pub fn mix(sources: &[Waveform], noise: Option<&Waveform>) -> Result<Waveform> {
    let first = sources
        .first()
        .ok_or_else(|| Error::Dimension("nothing to mix".into()))?;
    let len = first.len();
    let rate = first.sample_rate();
    for w in sources.iter().chain(noise) {
        if w.len() != len || w.sample_rate() != rate {
            return Err(Error::Dimension(format!(
                "cannot mix {} samples @ {} Hz with {} samples @ {} Hz",
                w.len(),
                w.sample_rate(),
                len,
                rate
            )));
        }
    }
    let mut out = first.samples().to_vec();
    for w in sources[1..].iter().chain(noise) {
        for (o, s) in out.iter_mut().zip(w.samples()) {
            *o += s;
        }
    }
    Waveform::new(out, rate)
}
