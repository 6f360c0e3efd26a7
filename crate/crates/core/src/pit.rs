//! Permutation invariant loss with mixture-copy auxiliary targets.
//!
//! A model with `N` outputs is trained on an utterance with `M <= N`
//! sources. The `N - M` spare outputs get the input mixture itself as their
//! target, and the output-to-target permutation minimizing the combined
//! objective `l_sep + l_ae` is chosen per utterance.
//!
//! Losses are negative (skewed) SI-SDR values in dB, so lower is better.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{alpha_sisdr, alpha_sisdr_grad, check_same_len, Waveform};

/// Largest `N` accepted by [`assign_brute_force`].
pub const BRUTE_FORCE_MAX: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Mean within the valid and the auxiliary group, then the sum of both.
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A2pitConfig {
    pub n_outputs: usize,
    /// Skew applied to outputs matched with a mixture copy.
    pub alpha_ae: f64,
    /// Skew applied to outputs matched with a true source.
    pub alpha_sep: f64,
    /// Skew for the lone source of a single-speaker utterance, which is
    /// (nearly) the mixture itself.
    pub single_speaker_alpha: f64,
    pub reduction: Reduction,
}

impl A2pitConfig {
    pub fn new(n_outputs: usize) -> Self {
        Self {
            n_outputs,
            alpha_ae: 0.3,
            alpha_sep: 0.0,
            single_speaker_alpha: 0.3,
            reduction: Reduction::Mean,
        }
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_outputs == 0 {
            return Err(Error::Config("n_outputs must be at least 1".into()));
        }
        for (name, a) in [
            ("alpha_ae", self.alpha_ae),
            ("alpha_sep", self.alpha_sep),
            ("single_speaker_alpha", self.single_speaker_alpha),
        ] {
            if !a.is_finite() || a < 0.0 {
                return Err(Error::Config(format!("{name} must be >= 0, got {a}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    ValidSource,
    AuxiliaryMixture,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub waveforms: Vec<Waveform>,
    pub kinds: Vec<TargetKind>,
}

impl Targets {
    pub fn len(&self) -> usize {
        self.waveforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waveforms.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.kinds
            .iter()
            .filter(|k| **k == TargetKind::ValidSource)
            .count()
    }
}

/// Pads `sources` with copies of `mixture` up to `config.n_outputs` targets.
pub fn build_targets(
    sources: &[Waveform],
    mixture: &Waveform,
    config: &A2pitConfig,
) -> Result<Targets> {
    config.validate()?;
    let m = sources.len();
    let n = config.n_outputs;
    if m == 0 {
        return Err(Error::EmptyTargets);
    }
    if m > n {
        return Err(Error::Capacity {
            sources: m,
            outputs: n,
        });
    }
    for s in sources {
        check_same_len(s, mixture)?;
    }
    let mut waveforms = sources.to_vec();
    waveforms.extend(std::iter::repeat_n(mixture.clone(), n - m));
    let mut kinds = vec![TargetKind::ValidSource; m];
    kinds.extend(std::iter::repeat_n(TargetKind::AuxiliaryMixture, n - m));
    Ok(Targets { waveforms, kinds })
}

/// Square loss matrix; entry `(i, j)` is the loss of output `i` against
/// target `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseLossMatrix {
    n: usize,
    entries: Vec<f64>,
    kinds: Vec<TargetKind>,
    alphas: Vec<f64>,
    reduction: Reduction,
}

impl PairwiseLossMatrix {
    /// Builds a matrix from row-major `entries`.
    pub fn from_entries(
        entries: Vec<Vec<f64>>,
        kinds: Vec<TargetKind>,
        reduction: Reduction,
    ) -> Result<Self> {
        let n = entries.len();
        if n == 0 {
            return Err(Error::Dimension("empty loss matrix".into()));
        }
        if entries.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("loss matrix is not square".into()));
        }
        if kinds.len() != n {
            return Err(Error::Dimension(format!(
                "{} target kinds for {n} columns",
                kinds.len()
            )));
        }
        Ok(Self {
            n,
            entries: entries.into_iter().flatten().collect(),
            kinds,
            alphas: vec![f64::NAN; n],
            reduction,
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, output: usize, target: usize) -> f64 {
        self.entries[output * self.n + target]
    }

    pub fn kinds(&self) -> &[TargetKind] {
        &self.kinds
    }

    /// Skew used for each target column (NaN when built from raw entries).
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks(self.n)
    }

    /// Weight of target column `j` in the total loss under the reduction.
    pub fn column_weight(&self, j: usize) -> f64 {
        match self.reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => {
                let kind = self.kinds[j];
                1.0 / self.kinds.iter().filter(|k| **k == kind).count() as f64
            }
        }
    }

    fn weighted(&self) -> Vec<f64> {
        let w: Vec<f64> = (0..self.n).map(|j| self.column_weight(j)).collect();
        self.entries
            .iter()
            .enumerate()
            .map(|(k, e)| e * w[k % self.n])
            .collect()
    }

    fn check_finite(&self) -> Result<()> {
        match self.entries.iter().position(|e| !e.is_finite()) {
            Some(k) => Err(Error::Value(format!(
                "non-finite loss at ({}, {})",
                k / self.n,
                k % self.n
            ))),
            None => Ok(()),
        }
    }

    /// Scores a given output-to-target permutation.
    pub fn evaluate(&self, permutation: &[usize]) -> Result<AssignmentResult> {
        if !is_bijection(permutation, self.n) {
            return Err(Error::Value(format!(
                "{permutation:?} is not a permutation of 0..{}",
                self.n
            )));
        }
        let mut l_sep = 0.0;
        let mut l_ae = 0.0;
        for (i, &j) in permutation.iter().enumerate() {
            let term = self.get(i, j) * self.column_weight(j);
            match self.kinds[j] {
                TargetKind::ValidSource => l_sep += term,
                TargetKind::AuxiliaryMixture => l_ae += term,
            }
        }
        Ok(AssignmentResult {
            permutation: permutation.to_vec(),
            total_loss: l_sep + l_ae,
            l_sep,
            l_ae,
        })
    }

    /// Among permutations that only reorder columns with identical
    /// contents, picks the lexicographically smallest.
    fn canonicalize(&self, perm: &mut [usize]) {
        let n = self.n;
        let mut visited = vec![false; n];
        for j in 0..n {
            if visited[j] {
                continue;
            }
            let class: Vec<usize> = (j..n)
                .filter(|&k| {
                    !visited[k]
                        && self.kinds[k] == self.kinds[j]
                        && (0..n).all(|i| self.get(i, k) == self.get(i, j))
                })
                .collect();
            for &k in &class {
                visited[k] = true;
            }
            if class.len() < 2 {
                continue;
            }
            let mut rows: Vec<usize> = (0..n).filter(|&i| class.contains(&perm[i])).collect();
            rows.sort_unstable();
            for (row, &col) in rows.iter().zip(&class) {
                perm[*row] = col;
            }
        }
    }
}

fn is_bijection(perm: &[usize], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    perm.iter()
        .all(|&j| j < n && !std::mem::replace(&mut seen[j], true))
}

/// Loss of every output against every target.
pub fn pairwise_matrix(
    outputs: &[Waveform],
    targets: &Targets,
    config: &A2pitConfig,
) -> Result<PairwiseLossMatrix> {
    let rows = outputs.iter().map(|o| o.samples()).collect::<Vec<_>>();
    pairwise_matrix_slices(&rows, targets, config)
}

pub(crate) fn pairwise_matrix_slices(
    outputs: &[&[f64]],
    targets: &Targets,
    config: &A2pitConfig,
) -> Result<PairwiseLossMatrix> {
    config.validate()?;
    let n = targets.len();
    if outputs.len() != n || targets.kinds.len() != n {
        return Err(Error::Dimension(format!(
            "{} outputs for {} targets",
            outputs.len(),
            n
        )));
    }
    let alphas = column_alphas(&targets.kinds, config);
    let mut entries = Vec::with_capacity(n * n);
    for out in outputs {
        for (target, &alpha) in targets.waveforms.iter().zip(&alphas) {
            entries.push(-alpha_sisdr(target, out, alpha)?);
        }
    }
    Ok(PairwiseLossMatrix {
        n,
        entries,
        kinds: targets.kinds.clone(),
        alphas,
        reduction: config.reduction,
    })
}

fn column_alphas(kinds: &[TargetKind], config: &A2pitConfig) -> Vec<f64> {
    let single = kinds
        .iter()
        .filter(|k| **k == TargetKind::ValidSource)
        .count()
        == 1;
    kinds
        .iter()
        .map(|k| match k {
            TargetKind::AuxiliaryMixture => config.alpha_ae,
            TargetKind::ValidSource if single => config.single_speaker_alpha,
            TargetKind::ValidSource => config.alpha_sep,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    /// `permutation[i]` is the target assigned to output `i`.
    pub permutation: Vec<usize>,
    pub total_loss: f64,
    pub l_sep: f64,
    pub l_ae: f64,
}

/// Exhaustive search over all `N!` permutations.
///
/// Ties resolve to the lexicographically smallest permutation.
pub fn assign_brute_force(matrix: &PairwiseLossMatrix) -> Result<AssignmentResult> {
    let n = matrix.size();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::Size {
            n,
            max: BRUTE_FORCE_MAX,
        });
    }
    matrix.check_finite()?;
    let weighted = matrix.weighted();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    loop {
        let cost: f64 = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| weighted[i * n + j])
            .sum();
        if cost < best_cost {
            best_cost = cost;
            best.copy_from_slice(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    matrix.evaluate(&best)
}

/// Advances `perm` to the next permutation in lexicographic order.
pub(crate) fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// O(N³) minimum-cost assignment (shortest augmenting path with
/// potentials).
pub fn assign_hungarian(matrix: &PairwiseLossMatrix) -> Result<AssignmentResult> {
    matrix.check_finite()?;
    let n = matrix.size();
    let mut perm = hungarian(&matrix.weighted(), n);
    matrix.canonicalize(&mut perm);
    matrix.evaluate(&perm)
}

/// Row-to-column assignment minimizing the sum of a dense `n x n` cost
/// matrix given in row-major order.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    debug_assert_eq!(cost.len(), n * n);
    // 1-based potentials; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// `L_obj = l_sep + l_ae` under the best output permutation.
pub fn a2pit_loss(
    outputs: &[Waveform],
    sources: &[Waveform],
    mixture: &Waveform,
    config: &A2pitConfig,
) -> Result<AssignmentResult> {
    let targets = build_targets(sources, mixture, config)?;
    let matrix = pairwise_matrix(outputs, &targets, config)?;
    assign_hungarian(&matrix)
}

/// Gradient of the objective with respect to every output sample, holding
/// the minimizing permutation fixed.
pub fn a2pit_loss_grad(
    outputs: &[Waveform],
    sources: &[Waveform],
    mixture: &Waveform,
    config: &A2pitConfig,
) -> Result<(Vec<Vec<f64>>, AssignmentResult)> {
    let rows = outputs.iter().map(|o| o.samples()).collect::<Vec<_>>();
    let targets = build_targets(sources, mixture, config)?;
    a2pit_grad_slices(&rows, &targets, config)
}

pub(crate) fn a2pit_grad_slices(
    outputs: &[&[f64]],
    targets: &Targets,
    config: &A2pitConfig,
) -> Result<(Vec<Vec<f64>>, AssignmentResult)> {
    let matrix = pairwise_matrix_slices(outputs, targets, config)?;
    let result = assign_hungarian(&matrix)?;
    let grads = outputs
        .iter()
        .zip(&result.permutation)
        .map(|(out, &j)| {
            let w = matrix.column_weight(j);
            let mut g = alpha_sisdr_grad(&targets.waveforms[j], out, matrix.alphas[j])?;
            for v in &mut g {
                *v *= -w;
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((grads, result))
}
