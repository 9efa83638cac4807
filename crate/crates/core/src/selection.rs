//! Frame selection: uniform sampling, relevance top-k, greedy DPP MAP
//! inference and the two-stage relevance-pool-then-diversity recipe.
//!
//! The diversity objective picks the subset `S` (|S| = K) maximizing
//! `det(L_S)` for the kernel `L_pq = exp(i_p · i_q)`. Exact maximization is
//! NP-hard; [`greedy_dpp_map`] grows `S` one frame at a time, choosing the
//! frame with the largest marginal gain. The gain of frame `i` given `S` is
//! the squared Cholesky pivot `d_i² = det(L_{S∪{i}}) / det(L_S)`, maintained
//! incrementally so each round costs one short inner product per candidate
//! and the whole run costs `O(K²T)` time and `O(KT)` extra space.
//!
//! Every argmax breaks ties toward the lowest index, so results are
//! reproducible bit-for-bit.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::embedding::{common_dim, relevance_scores, Embedding, SimilarityKernel};
use crate::error::{Error, Result};
use crate::linalg::determinant;

pub const DEFAULT_POOL_MULTIPLIER: usize = 4;
pub const DEFAULT_EPSILON: f64 = 1e-5;
/// Largest subset count [`brute_force_map`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Number of frames to keep.
    pub k: usize,
    /// Relevance pool holds `pool_multiplier * k` frames before diversity pruning.
    pub pool_multiplier: usize,
    /// Greedy stops once the best remaining pivot `d²` falls below this.
    pub epsilon: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            k: 16,
            pool_multiplier: DEFAULT_POOL_MULTIPLIER,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl SelectionConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.pool_multiplier == 0 {
            return Err(Error::InvalidConfig("pool multiplier must be at least 1".into()));
        }
        check_epsilon(self.epsilon)
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Selected indices in the order they were picked.
    pub indices: Vec<usize>,
    /// Pivot `d_j²` of each pick at the moment it was selected.
    pub gains: Vec<f64>,
    /// `Σ ln(gain)`, the log-determinant of the selected principal submatrix.
    pub log_det: f64,
    /// `indices` sorted ascending (temporal order).
    pub presented_indices: Vec<usize>,
}

impl SelectionResult {
    fn from_picks(indices: Vec<usize>, gains: Vec<f64>) -> Self {
        let log_det = gains.iter().map(|g| g.ln()).sum();
        let mut presented_indices = indices.clone();
        presented_indices.sort_unstable();
        Self {
            indices,
            gains,
            log_det,
            presented_indices,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Presented indices topped up to `min(k, total)` with uniformly spaced
    /// frames that were not already selected. The result stays ascending.
    pub fn pad_uniform(&self, total: usize, k: usize) -> Vec<usize> {
        let target = k.min(total);
        let mut out = self.presented_indices.clone();
        if out.len() >= target {
            return out;
        }
        let mut taken = vec![false; total];
        for &i in &out {
            taken[i] = true;
        }
        for i in uniform_sample(total, target) {
            if out.len() == target {
                break;
            }
            if !taken[i] {
                taken[i] = true;
                out.push(i);
            }
        }
        for (i, t) in taken.iter_mut().enumerate() {
            if out.len() == target {
                break;
            }
            if !*t {
                *t = true;
                out.push(i);
            }
        }
        out.sort_unstable();
        out
    }
}

/// Evenly spaced indices including both endpoints:
/// `round(j · (T−1) / (K−1))` for `j = 0..K`. `K` is clamped to `T`; a single
/// pick takes the middle frame.
pub fn uniform_sample(total: usize, k: usize) -> Vec<usize> {
    let k = k.min(total);
    match k {
        0 => Vec::new(),
        // round((T-1)/2) with halves rounding up
        1 => vec![total / 2],
        _ => {
            let (span, steps) = ((total - 1) as u128, (k - 1) as u128);
            let ideal = (0..k as u128).map(|j| ((2 * j * span + steps) / (2 * steps)) as usize);
            let mut taken = vec![false; total];
            let mut out = Vec::with_capacity(k);
            for p in ideal {
                let pick = nearest_free(&taken, p);
                taken[pick] = true;
                out.push(pick);
            }
            out.sort_unstable();
            out
        }
    }
}

fn nearest_free(taken: &[bool], p: usize) -> usize {
    (0..taken.len())
        .flat_map(|off| [p.checked_sub(off), p.checked_add(off)])
        .flatten()
        .find(|&i| i < taken.len() && !taken[i])
        .expect("fewer picks than frames")
}

/// Indices of the `k` frames most similar to the query, by descending score
/// then ascending index. Returns every index when `k >= T`.
pub fn top_k_relevance(query: &Embedding, frames: &[Embedding], k: usize) -> Result<Vec<usize>> {
    let scores = relevance_scores(query, frames)?;
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Work counters and pivot snapshots from one greedy run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GreedyDiagnostics {
    /// Multiply-accumulates spent in the candidate update loop.
    pub mac_ops: u64,
    /// `d²` of every item after each update round; `None` once selected.
    pub pivot_rounds: Vec<Vec<Option<f64>>>,
}

/// Fast greedy MAP inference for a DPP kernel.
///
/// Starts from `d_i² = L_ii`, repeatedly selects the largest pivot, and
/// updates every remaining candidate with
/// `e_i = (L_ji − ⟨c_j, c_i⟩) / d_j`, `c_i ← [c_i, e_i]`, `d_i² ← d_i² − e_i²`.
/// Stops after `k` picks, or early (returning fewer) once the best remaining
/// pivot drops below `epsilon`.
pub fn greedy_dpp_map(kernel: &SimilarityKernel, k: usize, epsilon: f64) -> Result<SelectionResult> {
    run_greedy(kernel, k, epsilon, false).map(|(r, _)| r)
}

/// [`greedy_dpp_map`] that also returns operation counts and pivot history.
pub fn greedy_dpp_map_traced(
    kernel: &SimilarityKernel,
    k: usize,
    epsilon: f64,
) -> Result<(SelectionResult, GreedyDiagnostics)> {
    run_greedy(kernel, k, epsilon, true)
}

fn run_greedy(
    kernel: &SimilarityKernel,
    k: usize,
    epsilon: f64,
    record: bool,
) -> Result<(SelectionResult, GreedyDiagnostics)> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    check_epsilon(epsilon)?;
    let n = kernel.size();
    let k = k.min(n);
    let mut diag = GreedyDiagnostics::default();

    let mut d2: Vec<f64> = (0..n).map(|i| kernel.get(i, i)).collect();
    let mut selected = vec![false; n];
    // c_i for every item, stride k; only the first |S|-1 slots are live.
    let mut c = vec![0.0; n * k];
    let mut indices = Vec::with_capacity(k);
    let mut gains = Vec::with_capacity(k);

    let Some(mut j) = argmax_free(&d2, &selected).filter(|&j| d2[j] >= epsilon) else {
        return Ok((SelectionResult::from_picks(indices, gains), diag));
    };
    selected[j] = true;
    indices.push(j);
    gains.push(d2[j]);

    while indices.len() < k {
        let m = indices.len() - 1;
        let dj = d2[j].sqrt();
        let cj: Vec<f64> = c[j * k..j * k + m].to_vec();
        let lj = kernel.row(j);
        for i in 0..n {
            if selected[i] {
                continue;
            }
            let ci = &mut c[i * k..i * k + m + 1];
            let inner: f64 = cj.iter().zip(&ci[..m]).map(|(a, b)| a * b).sum();
            let e = (lj[i] - inner) / dj;
            ci[m] = e;
            d2[i] -= e * e;
            diag.mac_ops += m as u64 + 1;
        }
        if record {
            diag.pivot_rounds.push(
                d2.iter()
                    .zip(&selected)
                    .map(|(&v, &s)| (!s).then_some(v))
                    .collect(),
            );
        }
        match argmax_free(&d2, &selected) {
            Some(next) if d2[next] >= epsilon => {
                j = next;
                selected[j] = true;
                indices.push(j);
                gains.push(d2[j]);
            }
            _ => break,
        }
    }
    Ok((SelectionResult::from_picks(indices, gains), diag))
}

fn argmax_free(values: &[f64], taken: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if taken[i] {
            continue;
        }
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Output of [`naive_greedy_reference`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSelection {
    pub indices: Vec<usize>,
    /// `det(L_S)` after each pick.
    pub determinants: Vec<f64>,
    /// Gap between the best and runner-up determinant ratio at each pick
    /// (`+∞` when the step had no runner-up).
    pub margins: Vec<f64>,
    /// Smallest entry of `margins`, `+∞` if empty.
    pub min_margin: f64,
}

impl ReferenceSelection {
    /// Smallest margin from the second pick on. The first pick compares raw
    /// diagonal entries, which every route reads identically.
    pub fn min_margin_after_first(&self) -> f64 {
        self.margins.iter().skip(1).copied().fold(f64::INFINITY, f64::min)
    }
}

/// Greedy selection by direct determinants: each step evaluates
/// `det(L_{S∪{i}})` for every candidate from scratch. Stops early when the
/// best ratio `det(L_{S∪{i}}) / det(L_S)` is below `epsilon`.
///
/// Cost is `O(T K⁴)`; this exists to check [`greedy_dpp_map`].
pub fn naive_greedy_reference(
    kernel: &SimilarityKernel,
    k: usize,
    epsilon: f64,
) -> Result<ReferenceSelection> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    check_epsilon(epsilon)?;
    let n = kernel.size();
    let mut indices: Vec<usize> = Vec::new();
    let mut determinants = Vec::new();
    let mut current = 1.0;
    let mut margins = Vec::new();
    while indices.len() < k.min(n) {
        let mut best: Option<(usize, f64)> = None;
        let mut runner_up = f64::NEG_INFINITY;
        for i in (0..n).filter(|i| !indices.contains(i)) {
            let mut subset = indices.clone();
            subset.push(i);
            let m = subset.len();
            let ratio = determinant(kernel.restrict(&subset)?.entries(), m) / current;
            match best {
                Some((_, b)) if ratio <= b => runner_up = runner_up.max(ratio),
                Some((_, b)) => {
                    runner_up = b;
                    best = Some((i, ratio));
                }
                None => best = Some((i, ratio)),
            }
        }
        let Some((i, ratio)) = best else { break };
        if ratio < epsilon {
            break;
        }
        margins.push(if runner_up.is_finite() { ratio - runner_up } else { f64::INFINITY });
        indices.push(i);
        current *= ratio;
        determinants.push(current);
    }
    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ReferenceSelection {
        indices,
        determinants,
        margins,
        min_margin,
    })
}

/// Exhaustive `argmax det(L_S)` over all `|S| = k` subsets. Ties (within
/// `1e-12` relative) keep the lexicographically smallest subset.
pub fn brute_force_map(kernel: &SimilarityKernel, k: usize) -> Result<(Vec<usize>, f64)> {
    let n = kernel.size();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("k must be in 1..={n}, got {k}")));
    }
    if binomial(n, k) > BRUTE_FORCE_LIMIT as u128 {
        return Err(Error::TooLarge {
            n,
            k,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for subset in (0..n).combinations(k) {
        let det = determinant(kernel.restrict(&subset)?.entries(), k);
        let better = match &best {
            None => true,
            Some((_, b)) => det - b > 1e-12 * b.abs().max(1.0),
        };
        if better {
            best = Some((subset, det));
        }
    }
    Ok(best.expect("at least one subset"))
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k) as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n as u128 - i) / (i + 1);
        if acc > u64::MAX as u128 {
            return acc;
        }
    }
    acc
}

/// Relevance pool of `pool_multiplier · K` frames, then greedy DPP down to
/// `K`. Indices in the result refer to the original frame numbering.
pub fn select_frames(
    query: &Embedding,
    frames: &[Embedding],
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    cfg.validate()?;
    let d = common_dim(frames)?;
    if query.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: query.dim(),
        });
    }
    let pool_size = cfg.k.saturating_mul(cfg.pool_multiplier);
    let pool: Vec<usize> = if frames.len() <= pool_size {
        (0..frames.len()).collect()
    } else {
        let mut p = top_k_relevance(query, frames, pool_size)?;
        p.sort_unstable();
        p
    };
    let kernel = SimilarityKernel::from_embeddings(frames)?.restrict(&pool)?;
    let local = greedy_dpp_map(&kernel, cfg.k, cfg.epsilon)?;
    Ok(SelectionResult::from_picks(
        local.indices.iter().map(|&i| pool[i]).collect(),
        local.gains,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn unit(v: &[f64]) -> Embedding {
        Embedding::normalize(v).unwrap()
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_sample(10, 10), (0..10).collect::<Vec<_>>());
        assert_eq!(uniform_sample(9, 3), vec![0, 4, 8]);
        assert_eq!(uniform_sample(3, 5), vec![0, 1, 2]);
        assert_eq!(uniform_sample(7, 1), vec![3]);
        assert_eq!(uniform_sample(1, 1), vec![0]);
        assert!(uniform_sample(5, 0).is_empty());
    }

    #[test]
    fn uniform_matches_float_formula() {
        let oracle: Vec<usize> = (0..8).map(|j| (j as f64 * 99.0 / 7.0).round() as usize).collect();
        assert_eq!(uniform_sample(100, 8), oracle);
    }

    #[test]
    fn top_k_examples() {
        let frames: Vec<_> = (0..8)
            .map(|i| unit(&[1.0, i as f64 * 0.3, (i % 3) as f64]))
            .collect();
        let top = top_k_relevance(&frames[5], &frames, 3).unwrap();
        assert_eq!(top[0], 5);
        let same = vec![unit(&[1.0, 2.0]); 6];
        assert_eq!(top_k_relevance(&same[0], &same, 4).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(top_k_relevance(&same[0], &same, 10).unwrap().len(), 6);
    }

    #[test]
    fn greedy_single_pick_prefers_lowest_index() {
        let frames: Vec<_> = (0..5).map(|i| unit(&[1.0, i as f64])).collect();
        let l = SimilarityKernel::from_embeddings(&frames).unwrap();
        let r = greedy_dpp_map(&l, 1, DEFAULT_EPSILON).unwrap();
        assert_eq!(r.indices, vec![0]);
        assert!((r.gains[0] - E).abs() < 1e-12);
        assert!((r.log_det - 1.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_duplicates_stop_early() {
        let v = unit(&[0.3, 0.7, -0.2]);
        let l = SimilarityKernel::from_embeddings(&[v.clone(), v]).unwrap();
        let r = greedy_dpp_map(&l, 2, DEFAULT_EPSILON).unwrap();
        assert_eq!(r.indices, vec![0]);
    }

    #[test]
    fn greedy_rejects_bad_arguments() {
        let l = SimilarityKernel::from_dense(1, vec![1.0]).unwrap();
        assert!(greedy_dpp_map(&l, 0, 1e-5).is_err());
        assert!(greedy_dpp_map(&l, 1, 0.0).is_err());
        assert!(greedy_dpp_map(&l, 1, f64::NAN).is_err());
    }

    #[test]
    fn greedy_degenerate_kernel_selects_nothing() {
        let l = SimilarityKernel::from_dense(2, vec![1e-9, 0.0, 0.0, 1e-9]).unwrap();
        assert!(greedy_dpp_map(&l, 2, 1e-5).unwrap().is_empty());
    }

    #[test]
    fn naive_full_set_matches_det() {
        let frames: Vec<_> = (0..4).map(|i| unit(&[1.0, i as f64, (i * i) as f64 * 0.1])).collect();
        let l = SimilarityKernel::from_embeddings(&frames).unwrap();
        let r = naive_greedy_reference(&l, 4, 1e-12).unwrap();
        let mut sorted = r.indices.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        let full = determinant(l.entries(), 4);
        assert!((r.determinants[3] - full).abs() <= 1e-9 * full.abs());
    }

    #[test]
    fn brute_force_examples() {
        let frames: Vec<_> = (0..3).map(|i| unit(&[1.0, i as f64])).collect();
        let l = SimilarityKernel::from_embeddings(&frames).unwrap();
        let (s, det) = brute_force_map(&l, 3).unwrap();
        assert_eq!(s, vec![0, 1, 2]);
        assert!((det - determinant(l.entries(), 3)).abs() < 1e-12);

        let same = vec![unit(&[1.0, 1.0]); 4];
        let l = SimilarityKernel::from_embeddings(&same).unwrap();
        let (s, det) = brute_force_map(&l, 2).unwrap();
        assert_eq!(s, vec![0, 1]);
        assert!(det.abs() < 1e-12);
    }

    #[test]
    fn brute_force_too_large() {
        let l = SimilarityKernel::from_dense(40, {
            let mut m = vec![0.0; 1600];
            for i in 0..40 {
                m[i * 40 + i] = 1.0;
            }
            m
        })
        .unwrap();
        assert!(matches!(brute_force_map(&l, 10), Err(Error::TooLarge { .. })));
        assert!(brute_force_map(&l, 3).is_ok());
    }

    #[test]
    fn select_small_input_takes_everything() {
        let frames: Vec<_> = (0..3).map(|i| unit(&[1.0, i as f64, 0.5])).collect();
        let r = select_frames(&frames[0], &frames, &SelectionConfig::new(5)).unwrap();
        assert_eq!(r.presented_indices, vec![0, 1, 2]);
    }

    #[test]
    fn select_checks_query_dimension() {
        let frames = vec![unit(&[1.0, 0.0])];
        let r = select_frames(&unit(&[1.0, 0.0, 0.0]), &frames, &SelectionConfig::new(1));
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn pad_uniform_fills_gaps() {
        let r = SelectionResult::from_picks(vec![4], vec![E]);
        assert_eq!(r.pad_uniform(9, 3), vec![0, 4, 8]);
        let r = SelectionResult::from_picks(vec![0], vec![E]);
        assert_eq!(r.pad_uniform(3, 3), vec![0, 1, 2]);
        assert_eq!(r.pad_uniform(9, 1), vec![0]);
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(10, 3), 120);
        assert_eq!(binomial(5, 5), 1);
        assert_eq!(binomial(64, 32), 1_832_624_140_942_590_534);
    }
}
