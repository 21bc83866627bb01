//! Dynamic model pruning: sparse mask initialization, PQ-Index
//! compressibility, per-layer prune quotas, plateau voting, the pruning
//! time schedule, and sparse-momentum prune/regrow.
//!
//! Masks cover every parameter but biases are never pruned: weight
//! positions carry the sparsity while bias bits stay on. All policy
//! accounting (active counts, PQ index, quotas, regrowth) therefore
//! runs over weight positions only.

use crate::nn::{
    read_segment_header, write_segment_header, CheckpointError, LayerShape, MomentumState,
    ParamVector, Scalar,
};
use crate::seed::stream;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PruningError {
    #[error("target sparsity must lie in [0, 1), got {0}")]
    BadSparsity(f64),
    #[error("invalid prune hyperparameters: {0}")]
    BadHyperparams(String),
    #[error("mask layout does not match parameter vector")]
    LayoutMismatch,
}

// ---------------------------------------------------------------------------
// Mask
// ---------------------------------------------------------------------------

/// Binary mask aligned to a [`ParamVector`] layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    segments: Vec<LayerShape>,
    offsets: Vec<usize>,
    bits: Vec<bool>,
}

impl Mask {
    /// All-ones mask for the given layout.
    pub fn all_ones(segments: Vec<LayerShape>) -> Self {
        let mut offsets = Vec::with_capacity(segments.len() + 1);
        let mut acc = 0usize;
        offsets.push(0);
        for s in &segments {
            acc += s.param_count();
            offsets.push(acc);
        }
        Self {
            segments,
            offsets,
            bits: vec![true; acc],
        }
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn segments(&self) -> &[LayerShape] {
        &self.segments
    }

    #[inline]
    pub fn num_layers(&self) -> usize {
        self.segments.len()
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, on: bool) {
        self.bits[i] = on;
    }

    /// Weight range of layer `l` in the flat layout.
    pub fn layer_weight_range(&self, l: usize) -> std::ops::Range<usize> {
        let start = self.offsets[l];
        start..start + self.segments[l].weight_count()
    }

    /// Total active count (ones), biases included.
    pub fn active_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Active ones per layer (weights and biases).
    pub fn per_layer_counts(&self) -> Vec<usize> {
        (0..self.segments.len())
            .map(|l| {
                self.bits[self.offsets[l]..self.offsets[l + 1]]
                    .iter()
                    .filter(|&&b| b)
                    .count()
            })
            .collect()
    }

    /// Active WEIGHT count of layer `l` (policy-side d_l).
    pub fn active_weights(&self, l: usize) -> usize {
        self.bits[self.layer_weight_range(l)]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    pub fn active_fraction(&self) -> f64 {
        self.active_count() as f64 / self.bits.len() as f64
    }

    /// Sparsity mu = 1 - active fraction.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.active_fraction()
    }

    pub fn matches_layout<F: Scalar>(&self, params: &ParamVector<F>) -> bool {
        self.segments.as_slice() == params.segments() && self.bits.len() == params.len()
    }
}

/// model <- model (*) mask, elementwise; idempotent.
pub fn apply_mask<F: Scalar>(model: &mut ParamVector<F>, mask: &Mask) {
    debug_assert!(mask.matches_layout(model));
    for (v, &on) in model.values_mut().iter_mut().zip(mask.bits.iter()) {
        if !on {
            *v = F::zero();
        }
    }
}

// ---------------------------------------------------------------------------
// Sparse initialization
// ---------------------------------------------------------------------------

/// Sparse mask initialization with ERK-style per-layer densities
/// proportional to (in + out + k^2) / (in * out * k^2), scaled so the
/// global density is 1 - target_sparsity. Weight positions are sampled
/// uniformly per layer under the seed; biases are never masked.
///
/// Returns the mask and the list of layers floored at one active weight
/// (non-empty only at extreme sparsity).
pub fn init_mask_sfn(
    shapes: &[LayerShape],
    target_sparsity: f64,
    seed: u64,
) -> Result<(Mask, Vec<usize>), PruningError> {
    if !(0.0..1.0).contains(&target_sparsity) {
        return Err(PruningError::BadSparsity(target_sparsity));
    }
    let mut mask = Mask::all_ones(shapes.to_vec());
    if target_sparsity == 0.0 {
        return Ok((mask, Vec::new()));
    }

    let total: usize = shapes.iter().map(|s| s.param_count()).sum();
    let bias_total: usize = shapes.iter().map(|s| s.bias_count()).sum();
    let weight_counts: Vec<usize> = shapes.iter().map(|s| s.weight_count()).collect();
    let weight_total: usize = weight_counts.iter().sum();

    let target_ones = ((1.0 - target_sparsity) * total as f64).ceil() as usize;
    let weight_target = target_ones.saturating_sub(bias_total).min(weight_total);

    // ERK score per layer.
    let scores: Vec<f64> = shapes
        .iter()
        .map(|s| {
            let k2 = (s.kernel * s.kernel) as f64;
            (s.in_channels as f64 + s.out_channels as f64 + k2)
                / (s.in_channels as f64 * s.out_channels as f64 * k2)
        })
        .collect();

    // Waterfill the density scale, capping layers at density 1.
    let n_layers = shapes.len();
    let mut capped = vec![false; n_layers];
    let mut densities = vec![0.0f64; n_layers];
    loop {
        let capped_weights: f64 = (0..n_layers)
            .filter(|&l| capped[l])
            .map(|l| weight_counts[l] as f64)
            .sum();
        let denom: f64 = (0..n_layers)
            .filter(|&l| !capped[l])
            .map(|l| scores[l] * weight_counts[l] as f64)
            .sum();
        if denom == 0.0 {
            for l in 0..n_layers {
                densities[l] = 1.0;
            }
            break;
        }
        let eps = (weight_target as f64 - capped_weights) / denom;
        let mut newly_capped = false;
        for l in 0..n_layers {
            if !capped[l] && eps * scores[l] >= 1.0 {
                capped[l] = true;
                newly_capped = true;
            }
        }
        if !newly_capped {
            for l in 0..n_layers {
                densities[l] = if capped[l] {
                    1.0
                } else {
                    (eps * scores[l]).max(0.0)
                };
            }
            break;
        }
    }

    // Integer counts by largest remainder, then floor each layer at one.
    let quotas: Vec<f64> = (0..n_layers)
        .map(|l| densities[l] * weight_counts[l] as f64)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remainder = weight_target.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..n_layers).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &l in order.iter().cycle().take(n_layers * 2) {
        if remainder == 0 {
            break;
        }
        if counts[l] < weight_counts[l] {
            counts[l] += 1;
            remainder -= 1;
        }
    }

    let mut floored = Vec::new();
    for l in 0..n_layers {
        if counts[l] == 0 && weight_counts[l] > 0 {
            counts[l] = 1;
            floored.push(l);
        }
    }

    // Sample active weight positions uniformly per layer.
    let mut rng = stream(seed, "sfn-mask", 0);
    for l in 0..n_layers {
        let range = mask.layer_weight_range(l);
        let w = weight_counts[l];
        let mut indices: Vec<usize> = (0..w).collect();
        for i in 0..counts[l].min(w) {
            let pick = rng.gen_range(i..w);
            indices.swap(i, pick);
        }
        for bit in &mut mask.bits[range.clone()] {
            *bit = false;
        }
        for &idx in indices.iter().take(counts[l].min(w)) {
            mask.bits[range.start + idx] = true;
        }
    }
    Ok((mask, floored))
}

// ---------------------------------------------------------------------------
// PQ Index and quotas
// ---------------------------------------------------------------------------

/// Exponent convention for the PQ Index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PqExponent {
    /// I = 1 - d^(1/j - 1/s) * |w|_s / |w|_j. Zero for uniform vectors,
    /// increasing with compressibility.
    Corrected,
    /// Literal printed form with the exponent sign flipped; kept for
    /// comparison runs. Negative and unbounded for uniform vectors.
    AsPrinted,
}

/// PQ-Index of the active entries of a layer, in the corrected
/// convention. Scale-invariant; all-zero input maps to the maximal
/// value 1 - d^(1/j - 1/s).
pub fn pq_index(values: &[f64], s: f64, j: f64) -> f64 {
    pq_index_with(values, s, j, PqExponent::Corrected)
}

pub fn pq_index_with(values: &[f64], s: f64, j: f64, exponent: PqExponent) -> f64 {
    let d = values.len();
    assert!(d >= 1, "pq_index needs at least one entry");
    assert!(s > 0.0 && j > s, "pq_index needs 0 < s < j");
    let d = d as f64;
    let factor = match exponent {
        PqExponent::Corrected => d.powf(1.0 / j - 1.0 / s),
        PqExponent::AsPrinted => d.powf(1.0 / s - 1.0 / j),
    };
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        // maximally compressible by convention
        return 1.0 - factor * 1.0;
    }
    let mut sum_s = 0.0f64;
    let mut sum_j = 0.0f64;
    for v in values {
        let a = v.abs() / max;
        sum_s += a.powf(s);
        sum_j += a.powf(j);
    }
    let ratio = sum_s.powf(1.0 / s) / sum_j.powf(1.0 / j);
    let index = 1.0 - factor * ratio;
    if exponent == PqExponent::Corrected && index < 0.0 && index > -1e-9 {
        0.0
    } else {
        index
    }
}

/// Per-layer prune quota derived from the PQ Index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerQuota {
    pub layer: usize,
    /// Active weight count d_l the quota was computed from.
    pub active_weights: usize,
    pub pq_index: f64,
    /// Lower bound r_l on retained parameters.
    pub lower_bound: f64,
    /// Number of weights to prune this event, c_l.
    pub prune_count: usize,
}

/// r_l = d (1 + eta)^(-j/(j-s)) (1 - I)^(j/(j-s));
/// c_l = floor(d * min(delta (1 - r_l/d), zeta)).
pub fn prune_quota(
    layer: usize,
    active_weights: usize,
    pq: f64,
    hyper: &PruneHyperparams,
) -> LayerQuota {
    let d = active_weights as f64;
    let expo = hyper.norm_j / (hyper.norm_j - hyper.norm_s);
    let lower_bound = d * (1.0 + hyper.compression).powf(-expo) * (1.0 - pq).powf(expo);
    let frac = (hyper.scaling_factor * (1.0 - lower_bound / d)).min(hyper.prune_threshold);
    let prune_count = ((d * frac).floor() as usize).min(active_weights);
    LayerQuota {
        layer,
        active_weights,
        pq_index: pq,
        lower_bound,
        prune_count,
    }
}

// ---------------------------------------------------------------------------
// Voting and schedule
// ---------------------------------------------------------------------------

/// Direction of the initial-pruning-time vote comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VoteComparison {
    /// Trigger at the first round with mean vote < epsilon_v (literal
    /// reading; fires as soon as early rounds report rapid change).
    Below,
    /// Trigger at the first round with mean vote >= epsilon_v (pruning
    /// starts once enough satellites report a plateau).
    Above,
}

/// Plateau vote: 1 iff the change of squared distance to the initial
/// model, normalized by the first step, stays below epsilon_c.
/// A zero first step means training is stationary and votes 1.
pub fn vote<F: Scalar>(
    current: &ParamVector<F>,
    previous: &ParamVector<F>,
    first: &ParamVector<F>,
    initial: &ParamVector<F>,
    epsilon_c: f64,
) -> u8 {
    vote_from_distances(
        current.l2_distance_sq(initial),
        previous.l2_distance_sq(initial),
        first.l2_distance_sq(initial),
        epsilon_c,
    )
}

/// [`vote`] in terms of the squared distances to the initial model.
pub fn vote_from_distances(
    dist_current: f64,
    dist_previous: f64,
    dist_first: f64,
    epsilon_c: f64,
) -> u8 {
    if dist_first == 0.0 {
        return 1;
    }
    u8::from(((dist_current - dist_previous) / dist_first).abs() < epsilon_c)
}

/// First round (1-based) whose mean vote crosses epsilon_v, or
/// `total_rounds` when the condition is never met (no pruning).
pub fn initial_prune_time(
    votes_per_round: &[Vec<u8>],
    epsilon_v: f64,
    total_rounds: usize,
    comparison: VoteComparison,
) -> usize {
    for (idx, votes) in votes_per_round.iter().enumerate() {
        if votes.is_empty() {
            continue;
        }
        let mean = votes.iter().map(|&v| v as f64).sum::<f64>() / votes.len() as f64;
        let crossed = match comparison {
            VoteComparison::Below => mean < epsilon_v,
            VoteComparison::Above => mean >= epsilon_v,
        };
        if crossed {
            return idx + 1;
        }
    }
    total_rounds
}

/// Pruning frequency p_f(r) = floor((t_hat + beta)^alpha / gamma^(r-1) + 0.5).
pub fn prune_frequency(t_hat: usize, alpha: f64, beta: f64, gamma: f64, r: usize) -> u64 {
    assert!(gamma > 1.0, "schedule gamma must exceed 1");
    assert!(r >= 1);
    let base = (t_hat as f64 + beta).powf(alpha);
    let value = base / gamma.powi(r as i32 - 1) + 0.5;
    value.floor().max(0.0) as u64
}

/// Sorted pruning times t_chi = sum of p_f(1..=chi) kept inside
/// (t_hat, total_rounds); accumulation stops at the first zero frequency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PruneSchedule {
    pub initial_time: usize,
    pub times: Vec<usize>,
}

impl PruneSchedule {
    pub fn contains(&self, round: usize) -> bool {
        self.times.binary_search(&round).is_ok()
    }
}

pub fn prune_schedule(
    t_hat: usize,
    alpha: f64,
    beta: f64,
    gamma: f64,
    total_rounds: usize,
) -> PruneSchedule {
    let mut times = Vec::new();
    let mut acc = 0u64;
    let mut r = 1usize;
    loop {
        let pf = prune_frequency(t_hat, alpha, beta, gamma, r);
        if pf == 0 {
            break;
        }
        acc += pf;
        if acc >= total_rounds as u64 {
            break;
        }
        if acc > t_hat as u64 {
            times.push(acc as usize);
        }
        r += 1;
    }
    PruneSchedule {
        initial_time: t_hat,
        times,
    }
}

// ---------------------------------------------------------------------------
// Hyperparameters
// ---------------------------------------------------------------------------

/// How the regrowth budget Omega is computed at a prune event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegrowthBudget {
    /// Omega = total weights pruned this event; keeps the active count
    /// conserved up to per-layer floor rounding.
    MatchedToPruned,
    /// Omega = count of active weights with |w| < p_m before pruning.
    BelowPruneRate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneHyperparams {
    /// Small norm s, 0 < s <= 1.
    pub norm_s: f64,
    /// Large norm j, s < j.
    pub norm_j: f64,
    /// Compression eta_m.
    pub compression: f64,
    /// Scaling factor delta in (0, 1].
    pub scaling_factor: f64,
    /// Prune threshold zeta: per-event cap as a fraction of a layer.
    pub prune_threshold: f64,
    /// Prune rate p_m; halved after every prune event.
    pub prune_rate: f64,
    /// Target sparsity mu-hat in [0, 1).
    pub target_sparsity: f64,
    /// Vote threshold epsilon_c.
    pub vote_threshold: f64,
    /// Voting ratio threshold epsilon_v in (0, 1).
    pub vote_ratio: f64,
    pub schedule_alpha: f64,
    pub schedule_beta: f64,
    /// Schedule decay gamma > 1.
    pub schedule_gamma: f64,
    pub vote_comparison: VoteComparison,
    pub pq_exponent: PqExponent,
    pub regrowth: RegrowthBudget,
}

impl Default for PruneHyperparams {
    fn default() -> Self {
        Self {
            norm_s: 0.5,
            norm_j: 1.0,
            compression: 1.0,
            scaling_factor: 0.9,
            prune_threshold: 0.3,
            prune_rate: 0.01,
            target_sparsity: 0.6,
            vote_threshold: 0.02,
            vote_ratio: 0.5,
            schedule_alpha: 1.0,
            schedule_beta: 2.0,
            schedule_gamma: 2.0,
            vote_comparison: VoteComparison::Below,
            pq_exponent: PqExponent::Corrected,
            regrowth: RegrowthBudget::MatchedToPruned,
        }
    }
}

impl PruneHyperparams {
    pub fn validate(&self) -> Result<(), PruningError> {
        let bad = |msg: String| Err(PruningError::BadHyperparams(msg));
        if !(self.norm_s > 0.0 && self.norm_s <= 1.0) {
            return bad(format!("norm s must lie in (0, 1], got {}", self.norm_s));
        }
        if !(self.norm_j >= 1.0 && self.norm_j > self.norm_s) {
            return bad(format!(
                "norm j must satisfy 1 <= j and s < j, got s={} j={}",
                self.norm_s, self.norm_j
            ));
        }
        if self.compression < 0.0 {
            return bad(format!("compression must be >= 0, got {}", self.compression));
        }
        if !(self.scaling_factor > 0.0 && self.scaling_factor <= 1.0) {
            return bad(format!(
                "scaling factor must lie in (0, 1], got {}",
                self.scaling_factor
            ));
        }
        if !(0.0..=1.0).contains(&self.prune_threshold) {
            return bad(format!(
                "prune threshold must lie in [0, 1], got {}",
                self.prune_threshold
            ));
        }
        if !(0.0..1.0).contains(&self.target_sparsity) {
            return bad(format!(
                "target sparsity must lie in [0, 1), got {}",
                self.target_sparsity
            ));
        }
        if !(self.vote_ratio > 0.0 && self.vote_ratio < 1.0) {
            return bad(format!(
                "vote ratio must lie in (0, 1), got {}",
                self.vote_ratio
            ));
        }
        if self.schedule_gamma <= 1.0 {
            return bad(format!(
                "schedule gamma must exceed 1, got {}",
                self.schedule_gamma
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Prune / regrow
// ---------------------------------------------------------------------------

/// Per-layer record of one prune event (also the prune-log CSV row).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerEvent {
    pub layer: usize,
    pub active_before: usize,
    pub pq_index: f64,
    pub lower_bound: f64,
    pub pruned: usize,
    pub regrown: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PruneOutcome {
    pub pruned: usize,
    pub regrown: usize,
    pub layers: Vec<LayerEvent>,
}

/// One prune/regrow event over all layers.
///
/// Pruning zeroes the c_l smallest-magnitude active weights per layer
/// (never below one active weight). The regrowth budget Omega is split
/// across layers by momentum mass m_l = |M_l (*) active|_1 / M_total
/// (computed over the pre-prune mask); each layer reactivates its
/// floor(m_l * Omega) inactive weights of largest momentum magnitude
/// (ties to the lowest index), initialized to zero. The model is
/// re-masked before returning.
pub fn prune_and_regrow<F: Scalar>(
    model: &mut ParamVector<F>,
    mask: &mut Mask,
    momentum: &MomentumState<F>,
    quotas: &[LayerQuota],
    budget: Option<usize>,
) -> PruneOutcome {
    debug_assert!(mask.matches_layout(model));
    debug_assert_eq!(momentum.len(), model.len());

    // Momentum mass per layer over the pre-prune mask, weights only.
    let n_layers = mask.num_layers();
    let mut mass = vec![0.0f64; n_layers];
    for l in 0..n_layers {
        let range = mask.layer_weight_range(l);
        let mut acc = 0.0f64;
        for i in range {
            if mask.bits[i] {
                acc += momentum.values()[i].as_f64().abs();
            }
        }
        mass[l] = acc;
    }
    let total_mass: f64 = mass.iter().sum();

    // Prune.
    let mut outcome = PruneOutcome::default();
    let mut per_layer_pruned = vec![0usize; n_layers];
    for quota in quotas {
        let l = quota.layer;
        let range = mask.layer_weight_range(l);
        let mut active: Vec<(f64, usize)> = range
            .clone()
            .filter(|&i| mask.bits[i])
            .map(|i| (model.values()[i].as_f64().abs(), i))
            .collect();
        let removable = active.len().saturating_sub(1);
        let count = quota.prune_count.min(removable);
        active.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, i) in active.iter().take(count) {
            mask.bits[i] = false;
            model.values_mut()[i] = F::zero();
        }
        per_layer_pruned[l] = count;
        outcome.pruned += count;
    }

    // Regrow.
    let omega = budget.unwrap_or(outcome.pruned);
    for quota in quotas {
        let l = quota.layer;
        let share = if total_mass > 0.0 {
            mass[l] / total_mass
        } else {
            0.0
        };
        let grow_target = (share * omega as f64).floor() as usize;
        let range = mask.layer_weight_range(l);
        let mut inactive: Vec<(f64, usize)> = range
            .clone()
            .filter(|&i| !mask.bits[i])
            .map(|i| (momentum.values()[i].as_f64().abs(), i))
            .collect();
        inactive.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let grown = grow_target.min(inactive.len());
        for &(_, i) in inactive.iter().take(grown) {
            mask.bits[i] = true;
            model.values_mut()[i] = F::zero();
        }
        outcome.regrown += grown;
        outcome.layers.push(LayerEvent {
            layer: l,
            active_before: quota.active_weights,
            pq_index: quota.pq_index,
            lower_bound: quota.lower_bound,
            pruned: per_layer_pruned[l],
            regrown: grown,
        });
    }

    apply_mask(model, mask);
    outcome
}

/// Regrowth budget under [`RegrowthBudget::BelowPruneRate`]: active
/// weights with |w| < p_m, over the whole model.
pub fn below_threshold_count<F: Scalar>(model: &ParamVector<F>, mask: &Mask, p_m: f64) -> usize {
    let mut count = 0usize;
    for l in 0..mask.num_layers() {
        for i in mask.layer_weight_range(l) {
            if mask.bits[i] && model.values()[i].as_f64().abs() < p_m {
                count += 1;
            }
        }
    }
    count
}

// ---------------------------------------------------------------------------
// Mask checkpoint IO (OFL1 header + bit-packed payload)
// ---------------------------------------------------------------------------

/// Writes a mask: OFL1 segment header then LSB-first bit-packed bits.
pub fn write_mask<W: Write>(w: &mut W, mask: &Mask) -> Result<(), CheckpointError> {
    write_segment_header(w, &mask.segments)?;
    let mut packed = vec![0u8; mask.bits.len().div_ceil(8)];
    for (i, &bit) in mask.bits.iter().enumerate() {
        if bit {
            packed[i / 8] |= 1 << (i % 8);
        }
    }
    w.write_all(&packed)?;
    Ok(())
}

pub fn read_mask<R: Read>(r: &mut R) -> Result<Mask, CheckpointError> {
    let segments = read_segment_header(r)?;
    let total: usize = segments.iter().map(|s| s.param_count()).sum();
    let mut packed = vec![0u8; total.div_ceil(8)];
    r.read_exact(&mut packed)?;
    let mut mask = Mask::all_ones(segments);
    for i in 0..total {
        mask.bits[i] = packed[i / 8] & (1 << (i % 8)) != 0;
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerKind;

    fn shapes(widths: &[(usize, usize, usize)]) -> Vec<LayerShape> {
        widths
            .iter()
            .enumerate()
            .map(|(layer_id, &(i, o, k))| LayerShape {
                layer_id,
                kind: if k == 1 { LayerKind::Dense } else { LayerKind::Conv },
                in_channels: i,
                out_channels: o,
                kernel: k,
            })
            .collect()
    }

    // -- init_mask_sfn ------------------------------------------------------

    #[test]
    fn zero_sparsity_gives_all_ones() {
        let (mask, floored) = init_mask_sfn(&shapes(&[(3, 8, 3), (8, 10, 1)]), 0.0, 1).unwrap();
        assert!(mask.bits().iter().all(|&b| b));
        assert!(floored.is_empty());
    }

    #[test]
    fn table_sparsity_hits_global_density() {
        let segs = shapes(&[(3, 8, 3), (8, 16, 3), (16, 16, 3), (16, 32, 3), (32, 10, 1)]);
        let total: usize = segs.iter().map(|s| s.param_count()).sum();
        let (mask, floored) = init_mask_sfn(&segs, 0.6, 9).unwrap();
        assert!(floored.is_empty());
        let target = ((0.4 * total as f64).ceil()) as usize;
        assert_eq!(mask.active_count(), target);
        assert!((mask.active_fraction() - 0.4).abs() < 1e-3);
        // biases stay on
        for (l, s) in segs.iter().enumerate() {
            let bias_on = mask.per_layer_counts()[l] - mask.active_weights(l);
            assert_eq!(bias_on, s.bias_count());
        }
    }

    #[test]
    fn identical_layers_get_equal_densities() {
        let segs = shapes(&[(8, 8, 3), (8, 8, 3)]);
        let (mask, _) = init_mask_sfn(&segs, 0.5, 11).unwrap();
        let a = mask.active_weights(0) as i64;
        let b = mask.active_weights(1) as i64;
        assert!((a - b).abs() <= 1, "densities {a} vs {b}");
    }

    #[test]
    fn extreme_sparsity_floors_layers_at_one_weight() {
        let segs = shapes(&[(1, 2, 3), (2, 2, 1)]);
        let (mask, floored) = init_mask_sfn(&segs, 0.99, 3).unwrap();
        assert!(mask.active_weights(0) >= 1);
        assert!(mask.active_weights(1) >= 1);
        assert!(!floored.is_empty());
    }

    #[test]
    fn rejects_sparsity_of_one() {
        assert!(init_mask_sfn(&shapes(&[(1, 1, 3)]), 1.0, 0).is_err());
    }

    // -- pq_index -----------------------------------------------------------

    #[test]
    fn uniform_vector_has_zero_pq_index() {
        let i = pq_index(&[1.0, 1.0, 1.0, 1.0], 0.5, 1.0);
        assert!(i.abs() < 1e-12);
    }

    #[test]
    fn one_sparse_vector_has_pq_three_quarters() {
        let i = pq_index(&[1.0, 0.0, 0.0, 0.0], 0.5, 1.0);
        assert!((i - 0.75).abs() < 1e-12);
    }

    #[test]
    fn all_zero_vector_is_maximally_compressible() {
        let i = pq_index(&[0.0, 0.0, 0.0, 0.0], 0.5, 1.0);
        assert!((i - 0.75).abs() < 1e-12);
    }

    #[test]
    fn printed_exponent_goes_negative_on_uniform_vectors() {
        let i = pq_index_with(&[1.0, 1.0, 1.0, 1.0], 0.5, 1.0, PqExponent::AsPrinted);
        assert!((i - (1.0 - 16.0)).abs() < 1e-9);
    }

    #[test]
    fn pq_matches_direct_high_precision_oracle() {
        let mut rng = stream(77, "pq-oracle", 0);
        let values: Vec<f64> = (0..64).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (s, j) = (0.5, 1.0);
        // direct unnormalized norms
        let norm_s: f64 = values
            .iter()
            .map(|v| v.abs().powf(s))
            .sum::<f64>()
            .powf(1.0 / s);
        let norm_j: f64 = values
            .iter()
            .map(|v| v.abs().powf(j))
            .sum::<f64>()
            .powf(1.0 / j);
        let expected = 1.0 - (64.0f64).powf(1.0 / j - 1.0 / s) * norm_s / norm_j;
        assert!((pq_index(&values, s, j) - expected).abs() < 1e-9);
    }

    // -- prune_quota --------------------------------------------------------

    #[test]
    fn quota_matches_worked_example() {
        let hyper = PruneHyperparams::default();
        let q = prune_quota(0, 4, 0.0, &hyper);
        assert!((q.lower_bound - 1.0).abs() < 1e-12);
        assert_eq!(q.prune_count, 1);
    }

    #[test]
    fn fully_compressible_layer_prunes_at_the_cap() {
        let hyper = PruneHyperparams::default();
        let q = prune_quota(0, 100, 1.0 - 1e-12, &hyper);
        assert!(q.lower_bound < 1e-6);
        assert_eq!(q.prune_count, (100.0 * 0.3) as usize);
    }

    // -- vote ---------------------------------------------------------------

    fn vec_with_first(segs: &[LayerShape], v: f64) -> ParamVector<f64> {
        let mut p = ParamVector::zeros(segs.to_vec());
        p.values_mut()[0] = v;
        p
    }

    #[test]
    fn identical_models_vote_one() {
        let segs = shapes(&[(2, 2, 1)]);
        let init = vec_with_first(&segs, 0.0);
        let first = vec_with_first(&segs, 1.0);
        let current = vec_with_first(&segs, 2.0);
        assert_eq!(vote(&current, &current, &first, &init, 0.02), 1);
    }

    #[test]
    fn vote_matches_worked_arithmetic() {
        let segs = shapes(&[(2, 2, 1)]);
        let init = vec_with_first(&segs, 0.0);
        let first = vec_with_first(&segs, 1.0); // |w1 - w0|^2 = 1
        let current = vec_with_first(&segs, 10.0f64.sqrt()); // squared 10
        let previous = vec_with_first(&segs, 3.0); // squared 9
        assert_eq!(vote(&current, &previous, &first, &init, 0.02), 0);
        assert_eq!(vote(&current, &previous, &first, &init, 1.5), 1);
    }

    #[test]
    fn stationary_training_votes_one() {
        let segs = shapes(&[(2, 2, 1)]);
        let init = vec_with_first(&segs, 0.0);
        assert_eq!(vote(&init, &init, &init, &init, 0.02), 1);
    }

    // -- initial_prune_time --------------------------------------------------

    #[test]
    fn all_ones_votes_never_trigger() {
        let votes = vec![vec![1, 1, 1, 1]; 10];
        assert_eq!(initial_prune_time(&votes, 0.5, 100, VoteComparison::Below), 100);
    }

    #[test]
    fn trigger_at_first_mean_below_threshold() {
        let votes = vec![vec![1, 1, 1, 1], vec![1, 1, 0, 0], vec![0, 0, 0, 1]];
        assert_eq!(initial_prune_time(&votes, 0.5, 100, VoteComparison::Below), 3);
    }

    #[test]
    fn threshold_one_triggers_on_any_zero_vote() {
        let votes = vec![vec![1, 0, 1, 1], vec![1, 1, 1, 1]];
        assert_eq!(initial_prune_time(&votes, 1.0, 100, VoteComparison::Below), 1);
    }

    #[test]
    fn above_comparison_inverts_the_trigger() {
        let votes = vec![vec![0, 0, 0, 0], vec![1, 1, 0, 0]];
        assert_eq!(initial_prune_time(&votes, 0.5, 100, VoteComparison::Above), 2);
    }

    // -- schedule -------------------------------------------------------------

    #[test]
    fn schedule_matches_worked_trace() {
        let sched = prune_schedule(10, 1.0, 2.0, 2.0, 100);
        assert_eq!(sched.times, vec![12, 18, 21, 23, 24]);
        assert_eq!(
            (1..=6)
                .map(|r| prune_frequency(10, 1.0, 2.0, 2.0, r))
                .collect::<Vec<_>>(),
            vec![12, 6, 3, 2, 1, 0]
        );
    }

    #[test]
    fn huge_gamma_gives_single_event() {
        let sched = prune_schedule(10, 1.0, 2.0, 1e12, 100);
        assert_eq!(sched.times, vec![12]);
    }

    #[test]
    fn empty_window_gives_empty_schedule() {
        let sched = prune_schedule(99, 1.0, 2.0, 2.0, 100);
        assert!(sched.times.is_empty());
    }

    // -- prune_and_regrow -----------------------------------------------------

    fn quotas_for<F: Scalar>(
        model: &ParamVector<F>,
        mask: &Mask,
        hyper: &PruneHyperparams,
    ) -> Vec<LayerQuota> {
        (0..mask.num_layers())
            .map(|l| {
                let active: Vec<f64> = mask
                    .layer_weight_range(l)
                    .filter(|&i| mask.get(i))
                    .map(|i| model.values()[i].as_f64())
                    .collect();
                let pq = pq_index(&active, hyper.norm_s, hyper.norm_j);
                prune_quota(l, active.len(), pq, hyper)
            })
            .collect()
    }

    #[test]
    fn zero_momentum_means_no_regrowth() {
        let segs = shapes(&[(2, 2, 3), (2, 2, 1)]);
        let mut model = ParamVector::<f32>::zeros(segs.clone());
        for (i, v) in model.values_mut().iter_mut().enumerate() {
            *v = (i as f32 + 1.0) * 0.01;
        }
        let mut mask = Mask::all_ones(segs.clone());
        let momentum = MomentumState::zeros(model.len(), 0.9);
        let hyper = PruneHyperparams::default();
        let quotas = quotas_for(&model, &mask, &hyper);
        let expected_pruned: usize = quotas.iter().map(|q| q.prune_count).sum();
        let before = mask.active_count();
        let out = prune_and_regrow(&mut model, &mut mask, &momentum, &quotas, None);
        assert_eq!(out.regrown, 0);
        assert_eq!(out.pruned, expected_pruned);
        assert_eq!(mask.active_count(), before - expected_pruned);
    }

    #[test]
    fn single_layer_with_all_momentum_receives_all_regrowth() {
        let segs = shapes(&[(2, 2, 3), (2, 2, 1)]);
        let mut model = ParamVector::<f32>::zeros(segs.clone());
        for (i, v) in model.values_mut().iter_mut().enumerate() {
            *v = (i as f32 + 1.0) * 0.01;
        }
        // start sparse so regrowth has room
        let (mut mask, _) = init_mask_sfn(&segs, 0.5, 5).unwrap();
        apply_mask(&mut model, &mask);
        let mut momentum = MomentumState::zeros(model.len(), 0.9);
        let grad: Vec<f32> = (0..model.len())
            .map(|i| if i < segs[0].weight_count() { 1.0 } else { 0.0 })
            .collect();
        momentum.update(&grad);
        let hyper = PruneHyperparams::default();
        let quotas = quotas_for(&model, &mask, &hyper);
        let out = prune_and_regrow(&mut model, &mut mask, &momentum, &quotas, None);
        assert!(out.pruned > 0);
        let layer0 = &out.layers[0];
        assert_eq!(layer0.regrown, out.regrown);
        assert_eq!(out.regrown, out.pruned); // m_0 = 1 exactly
    }

    #[test]
    fn conservation_and_masked_zeros_hold() {
        let segs = shapes(&[(3, 4, 3), (4, 5, 1)]);
        let mut rng = stream(3, "prg", 0);
        let mut model = ParamVector::<f32>::zeros(segs.clone());
        for v in model.values_mut() {
            *v = rng.gen_range(-1.0f32..1.0);
        }
        let (mut mask, _) = init_mask_sfn(&segs, 0.4, 8).unwrap();
        apply_mask(&mut model, &mask);
        let mut momentum = MomentumState::zeros(model.len(), 0.9);
        let grad: Vec<f32> = (0..model.len()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        momentum.update(&grad);
        let hyper = PruneHyperparams::default();
        let quotas = quotas_for(&model, &mask, &hyper);
        let before = mask.active_count();
        let out = prune_and_regrow(&mut model, &mut mask, &momentum, &quotas, None);
        assert_eq!(mask.active_count(), before - out.pruned + out.regrown);
        assert!(out.regrown <= out.pruned);
        for (v, &on) in model.values().iter().zip(mask.bits()) {
            if !on {
                assert_eq!(*v, 0.0);
            }
        }
    }

    /// Brute-force reference: independent full-sort implementation.
    #[test]
    fn matches_sort_based_reference_exactly() {
        let segs = shapes(&[(2, 3, 3), (3, 4, 1)]);
        let mut rng = stream(1234, "prg-oracle", 0);
        let mut model = ParamVector::<f32>::zeros(segs.clone());
        for v in model.values_mut() {
            *v = rng.gen_range(-1.0f32..1.0);
        }
        let (mut mask, _) = init_mask_sfn(&segs, 0.3, 21).unwrap();
        apply_mask(&mut model, &mask);
        let mut momentum = MomentumState::zeros(model.len(), 0.9);
        let grad: Vec<f32> = (0..model.len()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        momentum.update(&grad);
        let hyper = PruneHyperparams::default();
        let quotas = quotas_for(&model, &mask, &hyper);

        // reference state
        let mut ref_bits: Vec<bool> = mask.bits().to_vec();
        let mut ref_vals: Vec<f32> = model.values().to_vec();
        let wranges: Vec<_> = (0..segs.len()).map(|l| mask.layer_weight_range(l)).collect();
        let mut mass = vec![0.0f64; segs.len()];
        for (l, r) in wranges.iter().enumerate() {
            for i in r.clone() {
                if ref_bits[i] {
                    mass[l] += momentum.values()[i].abs() as f64;
                }
            }
        }
        let mtot: f64 = mass.iter().sum();
        let mut total_pruned = 0usize;
        for (l, r) in wranges.iter().enumerate() {
            let mut act: Vec<usize> = r.clone().filter(|&i| ref_bits[i]).collect();
            act.sort_by(|&a, &b| {
                (ref_vals[a].abs())
                    .total_cmp(&ref_vals[b].abs())
                    .then(a.cmp(&b))
            });
            let c = quotas[l].prune_count.min(act.len().saturating_sub(1));
            for &i in act.iter().take(c) {
                ref_bits[i] = false;
                ref_vals[i] = 0.0;
            }
            total_pruned += c;
        }
        for (l, r) in wranges.iter().enumerate() {
            let share = if mtot > 0.0 { mass[l] / mtot } else { 0.0 };
            let budget = (share * total_pruned as f64).floor() as usize;
            let mut inact: Vec<usize> = r.clone().filter(|&i| !ref_bits[i]).collect();
            inact.sort_by(|&a, &b| {
                (momentum.values()[b].abs())
                    .total_cmp(&momentum.values()[a].abs())
                    .then(a.cmp(&b))
            });
            for &i in inact.iter().take(budget) {
                ref_bits[i] = true;
                ref_vals[i] = 0.0;
            }
        }
        prune_and_regrow(&mut model, &mut mask, &momentum, &quotas, None);
        assert_eq!(mask.bits(), ref_bits.as_slice());
        assert_eq!(model.values(), ref_vals.as_slice());
    }

    // -- apply_mask ------------------------------------------------------------

    #[test]
    fn apply_mask_identity_zero_and_idempotent() {
        let segs = shapes(&[(2, 2, 1)]);
        let mut model = ParamVector::<f32>::zeros(segs.clone());
        for (i, v) in model.values_mut().iter_mut().enumerate() {
            *v = i as f32 + 1.0;
        }
        let ones = Mask::all_ones(segs.clone());
        let mut m = model.clone();
        apply_mask(&mut m, &ones);
        assert_eq!(m, model);

        let mut zeros_mask = Mask::all_ones(segs);
        for i in 0..zeros_mask.len() {
            zeros_mask.set(i, false);
        }
        apply_mask(&mut m, &zeros_mask);
        assert!(m.values().iter().all(|&v| v == 0.0));
        let snapshot = m.clone();
        apply_mask(&mut m, &zeros_mask);
        assert_eq!(m, snapshot);
    }

    // -- mask io -----------------------------------------------------------------

    #[test]
    fn mask_round_trips_through_ofl1() {
        let segs = shapes(&[(3, 4, 3), (4, 5, 1)]);
        let (mask, _) = init_mask_sfn(&segs, 0.55, 99).unwrap();
        let mut buf = Vec::new();
        write_mask(&mut buf, &mask).unwrap();
        let back = read_mask(&mut buf.as_slice()).unwrap();
        assert_eq!(mask, back);
    }

    #[test]
    fn below_threshold_count_counts_small_active_weights() {
        let segs = shapes(&[(1, 1, 3)]);
        let mut model = ParamVector::<f32>::zeros(segs.clone());
        let mut mask = Mask::all_ones(segs);
        // weights: 9 values; set three small, rest large
        for (i, v) in model.values_mut().iter_mut().enumerate().take(9) {
            *v = if i < 3 { 0.001 } else { 1.0 };
        }
        mask.set(0, false); // one small weight inactive
        assert_eq!(below_threshold_count(&model, &mask, 0.01), 2);
    }
}
