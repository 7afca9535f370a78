//! Batch selection: GP-UCB-PE and the baselines it is compared against.
//!
//! Selection runs on a [`CandidatePosterior`], so every score is a lookup and
//! every hallucination is one `O(m n)` sweep. Ties are broken by the lowest
//! candidate index everywhere.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{CandidatePosterior, PosteriorState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    UcbPe,
    GpBucb,
    SequentialUcb,
    Random,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::UcbPe, Policy::GpBucb, Policy::SequentialUcb, Policy::Random];

    pub fn name(self) -> &'static str {
        match self {
            Policy::UcbPe => "ucb_pe",
            Policy::GpBucb => "gp_bucb",
            Policy::SequentialUcb => "sequential_ucb",
            Policy::Random => "random",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown strategy '{s}' (expected ucb_pe, gp_bucb, sequential_ucb or random)")))
    }
}

/// How pure-exploration picks treat points already in the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeRule {
    /// Argmax of the hallucinated deviation over the whole relevant region.
    /// A point may be picked twice when its reduced deviation still wins.
    #[default]
    Literal,
    /// Picked points leave the pool. An exhausted pool falls back to the
    /// unmasked deviation argmax.
    Distinct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub policy: Policy,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub pe_rule: PeRule,
    #[serde(default)]
    pub random_with_replacement: bool,
}

fn default_batch_size() -> usize {
    10
}

impl StrategyConfig {
    pub fn new(policy: Policy, batch_size: usize) -> Self {
        StrategyConfig {
            policy,
            batch_size,
            pe_rule: PeRule::default(),
            random_with_replacement: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Init,
    Ucb,
    Pe,
    Fallback,
    Random,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Init => "init",
            Role::Ucb => "ucb",
            Role::Pe => "pe",
            Role::Fallback => "fallback",
            Role::Random => "random",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Role::Init, Role::Ucb, Role::Pe, Role::Fallback, Role::Random]
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown role '{s}'")))
    }
}

/// One selected point. `sigma` is the deviation at the pick under the
/// posterior hallucinated on the batch's earlier picks.
#[derive(Debug, Clone, PartialEq)]
pub struct Pick {
    pub index: usize,
    pub point: Vec<f64>,
    pub role: Role,
    pub sigma: f64,
}

/// The relevant region over a candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub mask: Vec<bool>,
    /// Best lower confidence bound over the candidates.
    pub y_bullet: f64,
    /// Index attaining `y_bullet`.
    pub x_bullet: usize,
}

impl Region {
    pub fn size(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// One iteration's batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTrace {
    pub picks: Vec<Pick>,
    pub beta_t: f64,
    pub beta_t_plus_1: Option<f64>,
    pub region: Option<Region>,
}

impl SelectionTrace {
    pub fn len(&self) -> usize {
        self.picks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.picks.is_empty()
    }

    pub fn ucb_point(&self) -> Option<&Pick> {
        self.picks.first()
    }

    pub fn pe_points(&self) -> &[Pick] {
        self.picks.get(1..).unwrap_or(&[])
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.picks.iter().map(|p| p.point.clone()).collect()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.picks.iter().map(|p| p.index).collect()
    }

    /// `σ_t^0`
    pub fn sigma0(&self) -> Option<f64> {
        self.picks.first().map(|p| p.sigma)
    }

    /// `σ_t^{K−1}`
    pub fn sigma_last(&self) -> Option<f64> {
        self.picks.last().map(|p| p.sigma)
    }

    pub fn y_bullet(&self) -> Option<f64> {
        self.region.as_ref().map(|r| r.y_bullet)
    }

    pub fn fallback_count(&self) -> usize {
        self.picks.iter().filter(|p| p.role == Role::Fallback).count()
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta >= 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::arg(format!("beta must be finite and nonnegative, got {beta}")))
    }
}

fn check_nonempty(post: &CandidatePosterior) -> Result<()> {
    if post.is_empty() {
        Err(Error::arg("candidate set is empty"))
    } else {
        Ok(())
    }
}

/// First index attaining the maximum of `score` over `pool`.
fn argmax(pool: impl Iterator<Item = usize>, score: impl Fn(usize) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in pool {
        let s = score(i);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Index of the candidate maximizing `μ + √β σ`.
pub fn ucb_point(post: &CandidatePosterior, beta_t: f64) -> Result<usize> {
    check_nonempty(post)?;
    check_beta(beta_t)?;
    Ok(argmax(0..post.len(), |i| post.upper(i, beta_t)).expect("nonempty"))
}

/// Candidates whose `μ + 2√β_{t+1} σ` reaches the best lower bound
/// `max μ − √β_t σ`.
pub fn relevant_region(post: &CandidatePosterior, beta_t: f64, beta_t_plus_1: f64) -> Result<Region> {
    check_nonempty(post)?;
    check_beta(beta_t)?;
    check_beta(beta_t_plus_1)?;
    let x_bullet = argmax(0..post.len(), |i| post.lower(i, beta_t)).expect("nonempty");
    let y_bullet = post.lower(x_bullet, beta_t);
    let width = 2.0 * beta_t_plus_1.sqrt();
    let mask = (0..post.len())
        .map(|i| post.mean(i) + width * post.std_dev(i) >= y_bullet)
        .collect();
    Ok(Region {
        mask,
        y_bullet,
        x_bullet,
    })
}

/// GP-UCB-PE: one UCB pick, then `K − 1` deviation maximizers over the
/// relevant region, each hallucinated before the next.
pub fn select_batch_ucbpe(
    post: &CandidatePosterior,
    batch_size: usize,
    beta_t: f64,
    beta_t_plus_1: f64,
    rule: PeRule,
) -> Result<SelectionTrace> {
    if batch_size == 0 {
        return Err(Error::arg("batch size must be at least 1"));
    }
    let x0 = ucb_point(post, beta_t)?;
    let region = relevant_region(post, beta_t, beta_t_plus_1)?;
    let mut picks = vec![Pick {
        index: x0,
        point: post.candidate(x0).to_vec(),
        role: Role::Ucb,
        sigma: post.std_dev(x0),
    }];
    if batch_size > 1 {
        let mut work = post.clone();
        let mut picked = vec![false; post.len()];
        picked[x0] = true;
        work.hallucinate_candidate(x0)?;
        for k in 1..batch_size {
            let (idx, role) = pe_pick(&work, &region.mask, &picked, rule);
            picks.push(Pick {
                index: idx,
                point: work.candidate(idx).to_vec(),
                role,
                sigma: work.std_dev(idx),
            });
            picked[idx] = true;
            if k + 1 < batch_size {
                work.hallucinate_candidate(idx)?;
            }
        }
    }
    Ok(SelectionTrace {
        picks,
        beta_t,
        beta_t_plus_1: Some(beta_t_plus_1),
        region: Some(region),
    })
}

fn pe_pick(work: &CandidatePosterior, mask: &[bool], picked: &[bool], rule: PeRule) -> (usize, Role) {
    let m = work.len();
    let sd = |i: usize| work.std_dev(i);
    match rule {
        PeRule::Literal => (argmax((0..m).filter(|&i| mask[i]), sd).expect("region holds x_bullet"), Role::Pe),
        PeRule::Distinct => {
            if let Some(i) = argmax((0..m).filter(|&i| mask[i] && !picked[i]), sd) {
                (i, Role::Pe)
            } else if let Some(i) = argmax((0..m).filter(|&i| !picked[i]), sd) {
                (i, Role::Fallback)
            } else {
                (argmax(0..m, sd).expect("nonempty"), Role::Fallback)
            }
        }
    }
}

/// Hallucinated batch UCB: every pick maximizes the batch-start mean plus
/// `√β_t` times the hallucination-updated deviation.
pub fn select_batch_gpbucb(post: &CandidatePosterior, batch_size: usize, beta_t: f64) -> Result<SelectionTrace> {
    check_nonempty(post)?;
    check_beta(beta_t)?;
    let mut work = post.clone();
    let mut picks = Vec::with_capacity(batch_size);
    for j in 0..batch_size {
        let idx = ucb_point(&work, beta_t)?;
        picks.push(Pick {
            index: idx,
            point: work.candidate(idx).to_vec(),
            role: Role::Ucb,
            sigma: work.std_dev(idx),
        });
        if j + 1 < batch_size {
            work.hallucinate_candidate(idx)?;
        }
    }
    Ok(SelectionTrace {
        picks,
        beta_t,
        beta_t_plus_1: None,
        region: None,
    })
}

/// Uniform candidate indices from `rng`.
pub fn select_batch_random<R: Rng + ?Sized>(
    candidate_count: usize,
    batch_size: usize,
    with_replacement: bool,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Ok(Vec::new());
    }
    if candidate_count == 0 {
        return Err(Error::arg("candidate set is empty"));
    }
    if with_replacement {
        Ok((0..batch_size).map(|_| rng.random_range(0..candidate_count)).collect())
    } else if batch_size > candidate_count {
        Err(Error::arg(format!(
            "cannot draw {batch_size} distinct points from {candidate_count} candidates"
        )))
    } else {
        Ok(rand::seq::index::sample(rng, candidate_count, batch_size).into_vec())
    }
}

/// Wraps random indices as a trace, recording the hallucinated deviation of
/// each pick so that deviation sums are comparable across policies.
pub fn random_trace(post: &CandidatePosterior, indices: &[usize]) -> Result<SelectionTrace> {
    let mut work = post.clone();
    let mut picks = Vec::with_capacity(indices.len());
    for (j, &idx) in indices.iter().enumerate() {
        if idx >= post.len() {
            return Err(Error::arg(format!("candidate index {idx} out of range")));
        }
        picks.push(Pick {
            index: idx,
            point: work.candidate(idx).to_vec(),
            role: Role::Random,
            sigma: work.std_dev(idx),
        });
        if j + 1 < indices.len() {
            work.hallucinate_candidate(idx)?;
        }
    }
    Ok(SelectionTrace {
        picks,
        beta_t: f64::NAN,
        beta_t_plus_1: None,
        region: None,
    })
}

#[derive(Debug, PartialEq)]
struct Bound {
    value: f64,
    index: usize,
    stage: usize,
}

impl Eq for Bound {}

impl Ord for Bound {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// GP-UCB-PE with lazily refreshed deviations.
///
/// Deviations only shrink as points are hallucinated, so a stale value is an
/// upper bound. A max-heap of bounds is popped until the top entry is fresh
/// for the current stage; only popped candidates are re-evaluated.
pub fn select_batch_ucbpe_lazy(
    state: &PosteriorState,
    candidates: &[Vec<f64>],
    batch_size: usize,
    beta_t: f64,
    beta_t_plus_1: f64,
    rule: PeRule,
) -> Result<SelectionTrace> {
    if batch_size == 0 {
        return Err(Error::arg("batch size must be at least 1"));
    }
    if candidates.is_empty() {
        return Err(Error::arg("candidate set is empty"));
    }
    check_beta(beta_t)?;
    check_beta(beta_t_plus_1)?;
    let preds = candidates
        .iter()
        .map(|c| state.predict(c))
        .collect::<Result<Vec<_>>>()?;
    let (rb, rb1) = (beta_t.sqrt(), beta_t_plus_1.sqrt());
    let x0 = argmax(0..preds.len(), |i| preds[i].mean + rb * preds[i].std_dev()).expect("nonempty");
    let x_bullet = argmax(0..preds.len(), |i| preds[i].mean - rb * preds[i].std_dev()).expect("nonempty");
    let y_bullet = preds[x_bullet].mean - rb * preds[x_bullet].std_dev();
    let mask: Vec<bool> = preds
        .iter()
        .map(|p| p.mean + 2.0 * rb1 * p.std_dev() >= y_bullet)
        .collect();
    let mut picks = vec![Pick {
        index: x0,
        point: candidates[x0].clone(),
        role: Role::Ucb,
        sigma: preds[x0].std_dev(),
    }];
    if batch_size > 1 {
        let mut scratch = state.scratch();
        scratch.push(&candidates[x0])?;
        let mut picked = vec![false; candidates.len()];
        picked[x0] = true;
        let mut heap: BinaryHeap<Bound> = (0..candidates.len())
            .filter(|&i| mask[i] && (rule == PeRule::Literal || i != x0))
            .map(|i| Bound {
                value: preds[i].std_dev(),
                index: i,
                stage: 0,
            })
            .collect();
        for stage in 1..batch_size {
            let mut chosen = None;
            while let Some(top) = heap.pop() {
                if top.stage == stage {
                    chosen = Some(top);
                    break;
                }
                let value = scratch.variance(&candidates[top.index])?.sqrt();
                heap.push(Bound {
                    value,
                    index: top.index,
                    stage,
                });
            }
            let (idx, sigma, role) = match chosen {
                Some(b) => {
                    if rule == PeRule::Literal {
                        heap.push(Bound { ..b });
                    }
                    (b.index, b.value, Role::Pe)
                }
                None => {
                    // Distinct pool exhausted.
                    let sd = candidates
                        .iter()
                        .map(|c| scratch.variance(c).map(f64::sqrt))
                        .collect::<Result<Vec<_>>>()?;
                    let idx = argmax((0..sd.len()).filter(|&i| !picked[i]), |i| sd[i])
                        .or_else(|| argmax(0..sd.len(), |i| sd[i]))
                        .expect("nonempty");
                    (idx, sd[idx], Role::Fallback)
                }
            };
            picks.push(Pick {
                index: idx,
                point: candidates[idx].clone(),
                role,
                sigma,
            });
            picked[idx] = true;
            if stage + 1 < batch_size {
                scratch.push(&candidates[idx])?;
            }
        }
    }
    Ok(SelectionTrace {
        picks,
        beta_t,
        beta_t_plus_1: Some(beta_t_plus_1),
        region: Some(Region {
            mask,
            y_bullet,
            x_bullet,
        }),
    })
}

/// Re-derives a GP-UCB-PE trace from `post` (the pre-batch posterior) and
/// lists every violated argmax, mask or monotonicity property.
pub fn verify_ucbpe_trace(post: &CandidatePosterior, trace: &SelectionTrace, rule: PeRule, slack: f64) -> Result<Vec<String>> {
    let mut issues = Vec::new();
    let beta_t = trace.beta_t;
    let beta_t1 = trace
        .beta_t_plus_1
        .ok_or_else(|| Error::arg("trace has no one-step-ahead beta"))?;
    let Some(first) = trace.picks.first() else {
        return Err(Error::arg("empty trace"));
    };
    let best = (0..post.len()).map(|i| post.upper(i, beta_t)).fold(f64::NEG_INFINITY, f64::max);
    if post.upper(first.index, beta_t) < best - slack {
        issues.push(format!(
            "ucb pick {} scores {:.6e}, below the maximum {:.6e}",
            first.index,
            post.upper(first.index, beta_t),
            best
        ));
    }
    let region = relevant_region(post, beta_t, beta_t1)?;
    if let Some(recorded) = &trace.region {
        if recorded.mask != region.mask {
            let diff = recorded.mask.iter().zip(&region.mask).filter(|(a, b)| a != b).count();
            issues.push(format!("relevant region differs at {diff} candidates"));
        }
        if (recorded.y_bullet - region.y_bullet).abs() > slack {
            issues.push(format!("y_bullet {:.6e} vs recomputed {:.6e}", recorded.y_bullet, region.y_bullet));
        }
    }
    let mut work = post.clone();
    work.hallucinate_candidate(first.index)?;
    let mut picked = vec![false; post.len()];
    picked[first.index] = true;
    let mut prev_sigma = f64::INFINITY;
    for (k, pick) in trace.picks.iter().enumerate().skip(1) {
        let sigma = work.std_dev(pick.index);
        if (sigma - pick.sigma).abs() > slack {
            issues.push(format!("pick {k}: recorded sigma {:.6e}, recomputed {sigma:.6e}", pick.sigma));
        }
        if pick.role == Role::Pe {
            if !region.mask[pick.index] {
                issues.push(format!("pick {k} lies outside the relevant region"));
            }
            let pool_max = (0..post.len())
                .filter(|&i| region.mask[i] && (rule == PeRule::Literal || !picked[i]))
                .map(|i| work.std_dev(i))
                .fold(f64::NEG_INFINITY, f64::max);
            if sigma < pool_max - slack {
                issues.push(format!("pick {k}: sigma {sigma:.6e} below pool maximum {pool_max:.6e}"));
            }
            if sigma > prev_sigma + slack {
                issues.push(format!("pick {k}: sigma {sigma:.6e} exceeds previous {prev_sigma:.6e}"));
            }
            prev_sigma = sigma;
        }
        picked[pick.index] = true;
        if k + 1 < trace.picks.len() {
            work.hallucinate_candidate(pick.index)?;
        }
    }
    Ok(issues)
}
