//! Evaluation: SI-SDR improvement under oracle or predicted output
//! selection, speaker counting confusion matrices, and histograms of
//! autoencoding scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{detect, select_outputs, DetectionConfig, DetectionResult};
use crate::error::{Error, Result};
use crate::mixkit::UtteranceRecord;
use crate::pit::BRUTE_FORCE_MAX;
use crate::rng::{keyed, Field};
use crate::signal::{sisdr, sisdr_ceiling, Waveform};

pub const DEFAULT_BIN_WIDTH: f64 = 1.0;
pub const DEFAULT_HIST_LO: f64 = -40.0;

/// SI-SDR improvement of `est` over the unprocessed `mixture`.
pub fn sisdri(est: &[f64], target: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(sisdr(target, est)? - sisdr(target, mixture)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Oracle,
    Predicted,
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMode::Oracle => "oracle",
            SelectionMode::Predicted => "predicted",
        })
    }
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(SelectionMode::Oracle),
            "predicted" => Ok(SelectionMode::Predicted),
            _ => Err(Error::Parameter(format!(
                "unknown selection mode {s:?}; expected oracle or predicted"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Improvement over the mixture.
    SiSdri,
    /// Raw SI-SDR, used for clean single-speaker input where the mixture is
    /// already the target.
    SiSdr,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::SiSdri => "si_sdri",
            Metric::SiSdr => "si_sdr",
        }
    }
}

/// Ground truth needed to score one utterance.
#[derive(Clone, Copy, Debug)]
pub struct Reference<'a> {
    pub mixture: &'a Waveform,
    pub sources: &'a [Waveform],
    pub noisy: bool,
}

impl<'a> From<&'a UtteranceRecord> for Reference<'a> {
    fn from(r: &'a UtteranceRecord) -> Self {
        Self {
            mixture: &r.mixture,
            sources: &r.sources,
            noisy: r.is_noisy(),
        }
    }
}

impl Reference<'_> {
    pub fn m(&self) -> usize {
        self.sources.len()
    }

    pub fn metric(&self) -> Metric {
        if self.m() == 1 && !self.noisy {
            Metric::SiSdr
        } else {
            Metric::SiSdri
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceEval {
    pub selection: SelectionMode,
    pub metric: Metric,
    /// One value per ground-truth source, in source order.
    pub per_source_db: Vec<f64>,
    /// Output index matched to each source.
    pub matched_outputs: Vec<usize>,
    pub detection: DetectionResult,
}

impl UtteranceEval {
    pub fn predicted_count(&self) -> usize {
        self.detection.predicted_count
    }

    pub fn mean_db(&self) -> f64 {
        self.per_source_db.iter().sum::<f64>() / self.per_source_db.len() as f64
    }
}

/// Per-utterance selection seed derived from a run seed.
pub fn utterance_seed(seed: u64, index: u64) -> u64 {
    keyed(seed, index, Field::Selection).random()
}

pub fn eval_utterance(
    outputs: &[Waveform],
    reference: Reference<'_>,
    detection: &DetectionConfig,
    selection: SelectionMode,
    seed: u64,
) -> Result<UtteranceEval> {
    let m = reference.m();
    let n = outputs.len();
    if m == 0 {
        return Err(Error::EmptyTargets);
    }
    if m > n {
        return Err(Error::Capacity {
            sources: m,
            outputs: n,
        });
    }
    if n > BRUTE_FORCE_MAX {
        return Err(Error::Size {
            n,
            max: BRUTE_FORCE_MAX,
        });
    }
    let det = detect(outputs, reference.mixture, detection)?;

    // scores[i][j] = SI-SDR of output i against source j
    let scores = outputs
        .iter()
        .map(|o| {
            reference
                .sources
                .iter()
                .map(|s| sisdr(s, o))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let candidates: Vec<usize> = match selection {
        SelectionMode::Oracle => (0..n).collect(),
        SelectionMode::Predicted => select_outputs(&det, m, seed)?,
    };
    let matched = best_matching(&scores, &candidates, m);

    let metric = reference.metric();
    let per_source_db = matched
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            let raw = scores[i][j];
            Ok(match metric {
                Metric::SiSdr => raw,
                Metric::SiSdri => raw - sisdr(&reference.sources[j], reference.mixture)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(UtteranceEval {
        selection,
        metric,
        per_source_db,
        matched_outputs: matched,
        detection: det,
    })
}

/// Injective map from the `m` sources into `candidates` maximizing the
/// summed SI-SDR; the first maximizer in lexicographic order wins ties.
fn best_matching(scores: &[Vec<f64>], candidates: &[usize], m: usize) -> Vec<usize> {
    let mut best = Vec::new();
    let mut best_total = f64::NEG_INFINITY;
    let mut current = Vec::with_capacity(m);
    let mut used = vec![false; candidates.len()];
    search(
        scores,
        candidates,
        m,
        &mut current,
        &mut used,
        0.0,
        &mut best,
        &mut best_total,
    );
    best
}

#[allow(clippy::too_many_arguments)]
fn search(
    scores: &[Vec<f64>],
    candidates: &[usize],
    m: usize,
    current: &mut Vec<usize>,
    used: &mut [bool],
    total: f64,
    best: &mut Vec<usize>,
    best_total: &mut f64,
) {
    let j = current.len();
    if j == m {
        if total > *best_total {
            *best_total = total;
            best.clone_from(current);
        }
        return;
    }
    for (c, &out) in candidates.iter().enumerate() {
        if used[c] {
            continue;
        }
        used[c] = true;
        current.push(out);
        search(
            scores,
            candidates,
            m,
            current,
            used,
            total + scores[out][j],
            best,
            best_total,
        );
        current.pop();
        used[c] = false;
    }
}

/// Predicted speaker count (rows) against true count (columns).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: BTreeMap<(usize, usize), u64>,
    oracle_domain: BTreeSet<usize>,
    predicted_domain: BTreeSet<usize>,
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares an oracle count that exists in the test set even if no
    /// utterance has been recorded for it yet.
    pub fn with_oracle_domain(domain: impl IntoIterator<Item = usize>) -> Self {
        Self {
            oracle_domain: domain.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn record(&mut self, predicted: usize, oracle: usize) {
        *self.counts.entry((predicted, oracle)).or_insert(0) += 1;
        self.oracle_domain.insert(oracle);
        self.predicted_domain.insert(predicted);
    }

    pub fn get(&self, predicted: usize, oracle: usize) -> u64 {
        self.counts.get(&(predicted, oracle)).copied().unwrap_or(0)
    }

    pub fn oracle_domain(&self) -> &BTreeSet<usize> {
        &self.oracle_domain
    }

    pub fn predicted_domain(&self) -> &BTreeSet<usize> {
        &self.predicted_domain
    }

    pub fn column_total(&self, oracle: usize) -> u64 {
        self.counts
            .iter()
            .filter(|((_, o), _)| *o == oracle)
            .map(|(_, c)| c)
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn diagonal(&self) -> u64 {
        self.counts
            .iter()
            .filter(|((p, o), _)| p == o)
            .map(|(_, c)| c)
            .sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.diagonal() as f64 / t as f64,
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (&k, &c) in &other.counts {
            *self.counts.entry(k).or_insert(0) += c;
        }
        self.oracle_domain.extend(&other.oracle_domain);
        self.predicted_domain.extend(&other.predicted_domain);
    }

    /// Grid with one row per predicted count and oracle columns 1 to at
    /// least 4. Oracle counts absent from the test set print as `--`.
    pub fn to_csv(&self) -> String {
        let max_oracle = self.oracle_domain.iter().copied().max().unwrap_or(0).max(4);
        let rows: BTreeSet<usize> = self
            .predicted_domain
            .union(&self.oracle_domain)
            .copied()
            .collect();
        let mut out = String::from("prediction");
        for o in 1..=max_oracle {
            write!(out, ",{o} spk").unwrap();
        }
        out.push('\n');
        for p in rows {
            write!(out, "{p} spk").unwrap();
            for o in 1..=max_oracle {
                if self.oracle_domain.contains(&o) {
                    write!(out, ",{}", self.get(p, o)).unwrap();
                } else {
                    out.push_str(",--");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// One utterance's contribution to a confusion matrix.
#[derive(Clone, Copy, Debug)]
pub struct CountingItem<'a> {
    pub id: &'a str,
    pub oracle_m: usize,
    pub mixture: &'a Waveform,
    pub outputs: Option<&'a [Waveform]>,
}

pub fn confusion<'a>(
    items: impl IntoIterator<Item = CountingItem<'a>>,
    detection: &DetectionConfig,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new();
    for item in items {
        let outputs = item
            .outputs
            .ok_or_else(|| Error::Data(format!("no outputs for utterance {}", item.id)))?;
        let det = detect(outputs, item.mixture, detection)?;
        cm.record(det.predicted_count, item.oracle_m);
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationRow {
    pub m: usize,
    pub selection: SelectionMode,
    pub metric: Metric,
    pub mean_db: f64,
    /// Number of sources averaged (the mean is per source).
    pub n_sources: usize,
    pub n_utterances: usize,
}

/// Per-source mean SI-SDRi (or SI-SDR) grouped by true speaker count and
/// selection mode.
#[derive(Clone, Debug, Default)]
pub struct SeparationReport {
    groups: BTreeMap<(usize, SelectionMode, Metric), (f64, usize, usize)>,
}

impl SeparationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, eval: &UtteranceEval) {
        let key = (eval.per_source_db.len(), eval.selection, eval.metric);
        let g = self.groups.entry(key).or_insert((0.0, 0, 0));
        g.0 += eval.per_source_db.iter().sum::<f64>();
        g.1 += eval.per_source_db.len();
        g.2 += 1;
    }

    pub fn rows(&self) -> Vec<SeparationRow> {
        self.groups
            .iter()
            .map(|(&(m, selection, metric), &(sum, n, u))| SeparationRow {
                m,
                selection,
                metric,
                mean_db: sum / n as f64,
                n_sources: n,
                n_utterances: u,
            })
            .collect()
    }

    pub fn mean(&self, m: usize, selection: SelectionMode) -> Option<f64> {
        self.rows()
            .into_iter()
            .find(|r| r.m == m && r.selection == selection)
            .map(|r| r.mean_db)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("m,selection,metric,mean_db_per_source,n_sources,n_utterances\n");
        for r in self.rows() {
            writeln!(
                out,
                "{},{},{},{:.4},{},{}",
                r.m,
                r.selection,
                r.metric.name(),
                r.mean_db,
                r.n_sources,
                r.n_utterances
            )
            .unwrap();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for b in &self.bins {
            writeln!(out, "{},{},{}", b.lo, b.hi, b.count).unwrap();
        }
        out
    }
}

const BOUNDARY_SLACK: f64 = 1e-9;

/// Default histogram range: -40 dB up to the SI-SDR ceiling.
pub fn default_hist_range() -> (f64, f64) {
    (DEFAULT_HIST_LO, sisdr_ceiling())
}

/// Fixed-width histogram over `[lo, hi]`. Bins are right-open except the
/// last; scores outside the range are clamped into the end bins. No input
/// gives no bins.
pub fn histogram(scores: &[f64], bin_width: f64, (lo, hi): (f64, f64)) -> Result<Histogram> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::Parameter(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Parameter(format!(
            "histogram range [{lo}, {hi}] is empty"
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Value(format!("cannot bin score {s}")));
    }
    if scores.is_empty() {
        return Ok(Histogram::default());
    }
    let n_bins = ((hi - lo) / bin_width).ceil().max(1.0) as usize;
    let edge = |k: usize| lo + k as f64 * bin_width;
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|k| HistogramBin {
            lo: edge(k),
            hi: edge(k + 1).min(hi),
            count: 0,
        })
        .collect();
    for &s in scores {
        let s = s.clamp(lo, hi);
        // a score sitting on an edge up to rounding belongs to the bin it opens
        let k = (((s - lo) / bin_width + BOUNDARY_SLACK).floor() as usize).min(n_bins - 1);
        bins[k].count += 1;
    }
    Ok(Histogram { bins })
}
