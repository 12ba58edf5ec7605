//! The four concept-to-neuron similarity functions.
//!
//! Each function scores one concept `t_m` against one neuron's activation
//! vector `q_k` over the probe set:
//!
//! - **cos**: cosine between `q_k` and the concept column `P[:, m]`.
//! - **rank reorder**: `-||q'_k - q_k||_p`, where `q'_k` holds the values of
//!   `q_k` rearranged into the rank order of `P[:, m]`.
//! - **wpmi**: `log p(t_m | B_k) - λ log p(t_m)` with `B_k` the `bk_size` most
//!   highly activating images and `p(t_m)` averaged over the neurons of the
//!   batch.
//! - **soft wpmi**: the same with a rank-based membership probability
//!   `p(x ∈ B_k)`, giving `log E[p(t_m | B_k)] = Σ log(1 + p(x ∈ B_k)(p(t_m|x) - 1))`.
//!
//! Everything probabilistic is evaluated in the log domain. Ties in activation
//! or concept rank are broken toward the lower image index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::concept_space::ConceptProbabilities;
use crate::error::{Error, Result};
use crate::numeric::{self, log_sum_exp, top_indices};

pub const WPMI_TEMPERATURE: f64 = 2.0;
pub const WPMI_LAMBDA: f64 = 0.6;
pub const WPMI_BK_SIZE: usize = 28;
pub const SOFT_WPMI_TEMPERATURE: f64 = 10.0;
pub const SOFT_WPMI_LAMBDA: f64 = 1.0;
pub const RANK_TOP_FRACTION: f64 = 0.05;
pub const RANK_P_NORM: f64 = 3.0;
pub const SCHEDULE_START: f64 = 0.998;
pub const SCHEDULE_END: f64 = 0.97;
pub const SCHEDULE_CUTOFF: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Cos,
    RankReorder,
    Wpmi,
    SoftWpmi,
}

impl SimilarityKind {
    pub const ALL: [SimilarityKind; 4] = [
        SimilarityKind::Cos,
        SimilarityKind::RankReorder,
        SimilarityKind::Wpmi,
        SimilarityKind::SoftWpmi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityKind::Cos => "cos",
            SimilarityKind::RankReorder => "rank_reorder",
            SimilarityKind::Wpmi => "wpmi",
            SimilarityKind::SoftWpmi => "soft_wpmi",
        }
    }

    pub fn uses_probabilities(self) -> bool {
        matches!(self, SimilarityKind::Wpmi | SimilarityKind::SoftWpmi)
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "cos" | "cosine" => Ok(SimilarityKind::Cos),
            "rank" | "rank_reorder" => Ok(SimilarityKind::RankReorder),
            "wpmi" => Ok(SimilarityKind::Wpmi),
            "softwpmi" | "soft_wpmi" => Ok(SimilarityKind::SoftWpmi),
            other => Err(Error::InvalidParameter(format!(
                "unknown similarity {other:?} (expected cos, rank, wpmi or softwpmi)"
            ))),
        }
    }
}

/// Probability that the image at a given activation rank belongs to `B_k`.
/// Index 0 is the most highly activating image; ranks past the end have
/// membership 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipSchedule {
    by_rank: Vec<f64>,
}

impl Default for MembershipSchedule {
    /// 0.998 at rank 1 falling linearly to 0.97 at rank 100, zero afterwards.
    fn default() -> Self {
        Self::linear(SCHEDULE_START, SCHEDULE_END, SCHEDULE_CUTOFF)
            .expect("default schedule is valid")
    }
}

impl MembershipSchedule {
    pub fn linear(start: f64, end: f64, cutoff: usize) -> Result<Self> {
        if cutoff == 0 {
            return Err(Error::InvalidParameter(
                "membership cutoff must be at least 1".into(),
            ));
        }
        let by_rank = if cutoff == 1 {
            vec![start]
        } else {
            let step = (end - start) / (cutoff - 1) as f64;
            (0..cutoff).map(|r| start + step * r as f64).collect()
        };
        Self::from_probabilities(by_rank)
    }

    /// Hard membership: the `size` top-ranked images belong with probability 1.
    pub fn binary(size: usize) -> Result<Self> {
        Self::from_probabilities(vec![1.0; size])
    }

    pub fn from_probabilities(by_rank: Vec<f64>) -> Result<Self> {
        if by_rank.is_empty() {
            return Err(Error::InvalidParameter(
                "membership schedule must cover at least one rank".into(),
            ));
        }
        if by_rank.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter(
                "membership probabilities must lie in [0, 1]".into(),
            ));
        }
        if by_rank.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter(
                "membership probabilities must be non-increasing in rank".into(),
            ));
        }
        Ok(Self { by_rank })
    }

    pub fn rank_cutoff(&self) -> usize {
        self.by_rank.len()
    }

    /// Membership at a zero-based rank.
    pub fn at(&self, rank: usize) -> f64 {
        self.by_rank.get(rank).copied().unwrap_or(0.0)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.by_rank
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub kind: SimilarityKind,
    /// Softmax temperature `a`.
    pub temperature: f64,
    pub lambda: f64,
    pub top_fraction: f64,
    pub p_norm: f64,
    pub bk_size: usize,
    pub schedule: MembershipSchedule,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self::new(SimilarityKind::SoftWpmi)
    }
}

impl SimilarityConfig {
    /// Reported hyperparameters for `kind`. Temperature and λ depend on the
    /// kind; they are unused by cos and rank reorder.
    pub fn new(kind: SimilarityKind) -> Self {
        let (temperature, lambda) = match kind {
            SimilarityKind::Wpmi => (WPMI_TEMPERATURE, WPMI_LAMBDA),
            _ => (SOFT_WPMI_TEMPERATURE, SOFT_WPMI_LAMBDA),
        };
        Self {
            kind,
            temperature,
            lambda,
            top_fraction: RANK_TOP_FRACTION,
            p_norm: RANK_P_NORM,
            bk_size: WPMI_BK_SIZE,
            schedule: MembershipSchedule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return bad(format!(
                "top_fraction must lie in (0, 1], got {}",
                self.top_fraction
            ));
        }
        if !(self.p_norm > 0.0 && self.p_norm.is_finite()) {
            return bad(format!("p_norm must be positive, got {}", self.p_norm));
        }
        if self.bk_size == 0 {
            return bad("bk_size must be positive".into());
        }
        Ok(())
    }
}

/// A neuron whose activation vector is constant carries no ranking
/// information and is never labeled.
pub fn is_degenerate(q: &[f32]) -> bool {
    match q.first() {
        None => true,
        Some(&first) => q.iter().all(|&v| v == first),
    }
}

fn check_lengths(q: &[f32], p_col: &[f32]) -> Result<()> {
    if q.len() != p_col.len() {
        return Err(Error::Shape(format!(
            "activation vector has length {} but concept column has {}",
            q.len(),
            p_col.len()
        )));
    }
    Ok(())
}

pub fn sim_cos(q: &[f32], p_col: &[f32]) -> Result<f64> {
    check_lengths(q, p_col)?;
    if numeric::norm(q) == 0.0 {
        return Err(Error::DegenerateNeuron);
    }
    numeric::cosine(p_col, q).ok_or_else(|| Error::ZeroNorm {
        what: "concept column".into(),
        row: 0,
    })
}

/// Number of positions the rank-reorder norm is restricted to.
pub fn rank_selection_size(n: usize, top_fraction: f64) -> usize {
    // Guard against 0.05 * 200 landing a hair above 10.
    (((top_fraction * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

/// Rank of every position under descending order, ties to the lower index.
pub fn column_ranks(values: &[f32]) -> Vec<usize> {
    let order = top_indices(values, values.len());
    let mut ranks = vec![0; values.len()];
    for (rank, &pos) in order.iter().enumerate() {
        ranks[pos] = rank;
    }
    ranks
}

/// Per-neuron state for rank reorder: `q` sorted descending and the positions
/// of its top entries.
#[derive(Debug, Clone)]
pub struct RankProfile {
    sorted_desc: Vec<f32>,
    selected: Vec<usize>,
}

impl RankProfile {
    pub fn new(q: &[f32], top_fraction: f64) -> Self {
        let order = top_indices(q, q.len());
        let sorted_desc = order.iter().map(|&i| q[i]).collect();
        let selected = order[..rank_selection_size(q.len(), top_fraction)].to_vec();
        Self {
            sorted_desc,
            selected,
        }
    }

    /// `-(Σ_{i ∈ selected} |q'_i - q_i|^p)^(1/p)` where `q'_i` is the value of
    /// `q` whose rank equals the concept-column rank of position `i`.
    pub fn score(&self, q: &[f32], column_ranks: &[usize], p_norm: f64) -> f64 {
        let integral = p_norm.fract() == 0.0 && p_norm <= 16.0;
        let mut acc = 0.0f64;
        for &i in &self.selected {
            let diff = (f64::from(self.sorted_desc[column_ranks[i]]) - f64::from(q[i])).abs();
            acc += if integral {
                diff.powi(p_norm as i32)
            } else {
                diff.powf(p_norm)
            };
        }
        if acc == 0.0 {
            0.0
        } else {
            -acc.powf(p_norm.recip())
        }
    }
}

pub fn sim_rank_reorder(q: &[f32], p_col: &[f32], top_fraction: f64, p_norm: f64) -> Result<f64> {
    check_lengths(q, p_col)?;
    if q.len() < 2 {
        return Err(Error::InvalidParameter(
            "rank reorder needs at least two probe images".into(),
        ));
    }
    if !(top_fraction > 0.0 && top_fraction <= 1.0) || p_norm.is_nan() || p_norm <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "rank reorder needs top_fraction in (0, 1] and p > 0, got {top_fraction} and {p_norm}"
        )));
    }
    Ok(RankProfile::new(q, top_fraction).score(q, &column_ranks(p_col), p_norm))
}

/// Sparse `p(x_i ∈ B_k)` over the probe images; images not listed have
/// membership 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    entries: Vec<(usize, f64)>,
}

impl Membership {
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    /// `B_k`: the `bk_size` most highly activating images.
    pub fn hard(q: &[f32], bk_size: usize) -> Result<Self> {
        if bk_size == 0 || bk_size > q.len() {
            return Err(Error::InvalidParameter(format!(
                "bk_size {bk_size} must lie in 1..={}",
                q.len()
            )));
        }
        let entries = top_indices(q, bk_size)
            .into_iter()
            .map(|i| (i, 1.0))
            .collect();
        Ok(Self { entries })
    }

    /// Rank-based soft membership from a schedule.
    pub fn soft(q: &[f32], schedule: &MembershipSchedule) -> Self {
        let entries = top_indices(q, schedule.rank_cutoff())
            .into_iter()
            .enumerate()
            .map(|(rank, i)| (i, schedule.at(rank)))
            .filter(|&(_, w)| w > 0.0)
            .collect();
        Self { entries }
    }

    pub fn for_config(q: &[f32], cfg: &SimilarityConfig) -> Result<Self> {
        match cfg.kind {
            SimilarityKind::Wpmi => Self::hard(q, cfg.bk_size),
            _ => Ok(Self::soft(q, &cfg.schedule)),
        }
    }
}

/// `log E[p(t|x)^X]` for one image: `log(1 + w (p - 1))`, exact at `w = 1`.
#[inline]
pub fn soft_log_factor(weight: f64, prob: f64, log_prob: f64) -> f64 {
    if weight == 1.0 {
        log_prob
    } else {
        ((1.0 - weight) + weight * prob).ln()
    }
}

/// `log E[p(t_m | B)] = Σ_i log(1 + p(x_i ∈ B)(p(t_m|x_i) - 1))`. With binary
/// membership this is `Σ_{x ∈ B} log p(t_m | x)`.
pub fn log_set_likelihood(
    probs: &ConceptProbabilities,
    concept: usize,
    membership: &Membership,
) -> f64 {
    membership
        .entries
        .iter()
        .map(|&(i, w)| soft_log_factor(w, probs.prob(i, concept), probs.log_prob(i, concept)))
        .sum()
}

/// `log p(t_m)` approximated by the mean of `E[p(t_m | B_j)]` over the
/// neurons `j` of the context.
pub fn log_concept_prior(
    probs: &ConceptProbabilities,
    concept: usize,
    context: &[Membership],
) -> Result<f64> {
    if context.is_empty() {
        return Err(Error::InvalidParameter(
            "the neuron context must contain at least one neuron".into(),
        ));
    }
    let terms: Vec<f64> = context
        .iter()
        .map(|m| log_set_likelihood(probs, concept, m))
        .collect();
    Ok(log_sum_exp(terms.iter().copied()) - (context.len() as f64).ln())
}

fn check_probe(q: &[f32], probs: &ConceptProbabilities, concept: usize) -> Result<()> {
    if q.len() != probs.images() {
        return Err(Error::Shape(format!(
            "activation vector has length {} but there are {} probe images",
            q.len(),
            probs.images()
        )));
    }
    if concept >= probs.concepts() {
        return Err(Error::InvalidParameter(format!(
            "concept index {concept} out of range for {} concepts",
            probs.concepts()
        )));
    }
    if is_degenerate(q) {
        return Err(Error::DegenerateNeuron);
    }
    Ok(())
}

/// `wpmi(t_m, q_k) = Σ_{x ∈ B_k} log p(t_m|x) − λ log Σ_{j ∈ C} Π_{x ∈ B_j} p(t_m|x) + λ log |C|`.
///
/// `context` holds the hard memberships of every neuron in the batch.
pub fn sim_wpmi(
    q: &[f32],
    probs: &ConceptProbabilities,
    concept: usize,
    context: &[Membership],
    bk_size: usize,
    lambda: f64,
) -> Result<f64> {
    check_probe(q, probs, concept)?;
    let own = Membership::hard(q, bk_size)?;
    let prior = log_concept_prior(probs, concept, context)?;
    Ok(log_set_likelihood(probs, concept, &own) - lambda * prior)
}

/// Soft WPMI with rank-based membership; `context` holds the soft
/// memberships of every neuron in the batch.
pub fn sim_soft_wpmi(
    q: &[f32],
    probs: &ConceptProbabilities,
    concept: usize,
    context: &[Membership],
    schedule: &MembershipSchedule,
    lambda: f64,
) -> Result<f64> {
    check_probe(q, probs, concept)?;
    let own = Membership::soft(q, schedule);
    let prior = log_concept_prior(probs, concept, context)?;
    Ok(log_set_likelihood(probs, concept, &own) - lambda * prior)
}
