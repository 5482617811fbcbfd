//! Group relative policy optimization on a slot-factorised categorical
//! policy.
//!
//! For each input a group of `G` candidates is sampled, scored, and each
//! candidate's reward is normalised against its own group:
//! `A_i = (r_i - mean) / (std + eps)` with the population standard
//! deviation. The policy then ascends
//! `(1/N) * sum_i A_i * log pi(c_i) - beta * KL(pi || pi_ref)`.

mod task;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use task::{BanditEnv, JudgmentTask, TaskInput, TraceShape};

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrpoError {
    #[error("group size must be >= 2 (got {0})")]
    GroupTooSmall(usize),
    #[error("epsilon must be finite and positive (got {0})")]
    Epsilon(f64),
    #[error("non-finite reward at position {0}")]
    NonFiniteReward(usize),
    #[error("group lists disagree in length")]
    Shape,
    #[error("input {0} out of range")]
    Input(usize),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("non-finite gradient; step aborted")]
    NonFiniteGradient,
    #[error("reward oracle failed: {0}")]
    Reward(String),
}

/// Group-relative advantages. A group whose rewards are all equal gets
/// exact zeros.
///
/// Deviations are taken from the first reward before centring, so adding a
/// constant that is exactly representable alongside the rewards leaves the
/// result bit-identical.
pub fn compute_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>, GrpoError> {
    Ok(group_stats(rewards, epsilon)?.2)
}

fn group_stats(rewards: &[f64], epsilon: f64) -> Result<(f64, f64, Vec<f64>), GrpoError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GrpoError::GroupTooSmall(g));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(GrpoError::Epsilon(epsilon));
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(GrpoError::NonFiniteReward(i));
    }
    let r0 = rewards[0];
    let d: Vec<f64> = rewards.iter().map(|r| r - r0).collect();
    let mean_d = d.iter().sum::<f64>() / g as f64;
    let mean = r0 + mean_d;
    if rewards.iter().all(|&r| r == r0) {
        return Ok((mean, 0.0, vec![0.0; g]));
    }
    let centred: Vec<f64> = d.iter().map(|x| x - mean_d).collect();
    let std = (centred.iter().map(|c| c * c).sum::<f64>() / g as f64).sqrt();
    Ok((mean, std, centred.iter().map(|c| c / (std + epsilon)).collect()))
}

/// One scored group, in the format shared with the agentic-route reward
/// export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub input_id: String,
    pub stage: String,
    pub candidates: Vec<String>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub group_mean: f64,
    pub group_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_probs: Option<Vec<f64>>,
}

impl RolloutGroup {
    pub fn new(
        input_id: impl Into<String>,
        stage: impl Into<String>,
        candidates: Vec<String>,
        rewards: Vec<f64>,
        epsilon: f64,
    ) -> Result<Self, GrpoError> {
        if candidates.len() != rewards.len() {
            return Err(GrpoError::Shape);
        }
        let (group_mean, group_std, advantages) = group_stats(&rewards, epsilon)?;
        Ok(Self {
            input_id: input_id.into(),
            stage: stage.into(),
            candidates,
            rewards,
            advantages,
            group_mean,
            group_std,
            log_probs: None,
        })
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let g = self.candidates.len();
        if self.rewards.len() != g
            || self.advantages.len() != g
            || self.log_probs.as_ref().is_some_and(|l| l.len() != g)
        {
            return Err(GrpoError::Shape);
        }
        if g < 2 {
            return Err(GrpoError::GroupTooSmall(g));
        }
        Ok(())
    }
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - lse).collect()
}

/// Logits indexed `[input][slot][option]`.
pub type Logits = Vec<Vec<Vec<f64>>>;

/// Tabular categorical policy: independent logits per (input, slot), and a
/// frozen reference copy for the KL anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub logits: Logits,
    pub reference: Logits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySample {
    pub choices: Vec<usize>,
    pub log_prob: f64,
}

impl ToyPolicy {
    /// Uniform policy for the given `[input][slot] -> option count` shape.
    pub fn uniform(shape: &[Vec<usize>]) -> Self {
        let logits: Logits = shape
            .iter()
            .map(|slots| slots.iter().map(|&n| vec![0.0; n]).collect())
            .collect();
        Self::from_logits(logits).expect("uniform logits are valid")
    }

    /// The reference is a copy of `logits`.
    pub fn from_logits(logits: Logits) -> Result<Self, GrpoError> {
        for (i, slots) in logits.iter().enumerate() {
            for (s, z) in slots.iter().enumerate() {
                if z.is_empty() {
                    return Err(GrpoError::Param(format!("input {i} slot {s} has no options")));
                }
                if z.iter().any(|x| !x.is_finite()) {
                    return Err(GrpoError::Param(format!("input {i} slot {s} has non-finite logits")));
                }
            }
        }
        Ok(Self {
            reference: logits.clone(),
            logits,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.logits.len()
    }

    pub fn shape(&self) -> Vec<Vec<usize>> {
        self.logits.iter().map(|s| s.iter().map(Vec::len).collect()).collect()
    }

    fn slots(&self, input: usize) -> Result<&Vec<Vec<f64>>, GrpoError> {
        self.logits.get(input).ok_or(GrpoError::Input(input))
    }

    pub fn probs(&self, input: usize, slot: usize) -> Vec<f64> {
        log_softmax(&self.logits[input][slot]).into_iter().map(f64::exp).collect()
    }

    pub fn reference_probs(&self, input: usize, slot: usize) -> Vec<f64> {
        log_softmax(&self.reference[input][slot]).into_iter().map(f64::exp).collect()
    }

    pub fn log_prob(&self, input: usize, choices: &[usize]) -> f64 {
        self.logits[input]
            .iter()
            .zip(choices)
            .map(|(z, &c)| log_softmax(z)[c])
            .sum()
    }

    /// `KL(pi || pi_ref)` for one input; slots are independent so the
    /// divergence is the sum over slots.
    pub fn kl(&self, input: usize) -> f64 {
        self.logits[input]
            .iter()
            .zip(&self.reference[input])
            .map(|(z, zr)| {
                let lp = log_softmax(z);
                let lq = log_softmax(zr);
                lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum::<f64>()
            })
            .sum()
    }

    /// Largest per-slot total-variation distance to the reference.
    pub fn max_tv_to_reference(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n_inputs() {
            for s in 0..self.logits[i].len() {
                let tv = self
                    .probs(i, s)
                    .iter()
                    .zip(self.reference_probs(i, s))
                    .map(|(p, q)| (p - q).abs())
                    .sum::<f64>()
                    / 2.0;
                worst = worst.max(tv);
            }
        }
        worst
    }

    /// Draws `g` i.i.d. joint samples for `input`.
    pub fn sample(&self, input: usize, g: usize, rng: &mut impl Rng) -> Result<Vec<ToySample>, GrpoError> {
        let slots = self.slots(input)?;
        let tables: Vec<Vec<f64>> = slots.iter().map(|z| log_softmax(z)).collect();
        Ok((0..g)
            .map(|_| {
                let mut choices = Vec::with_capacity(tables.len());
                let mut log_prob = 0.0;
                for lp in &tables {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut pick = lp.len() - 1;
                    for (j, l) in lp.iter().enumerate() {
                        acc += l.exp();
                        if u < acc {
                            pick = j;
                            break;
                        }
                    }
                    // Never pick an option whose probability underflowed to 0.
                    while lp[pick].exp() == 0.0 && pick > 0 {
                        pick -= 1;
                    }
                    log_prob += lp[pick];
                    choices.push(pick);
                }
                ToySample { choices, log_prob }
            })
            .collect())
    }
}

/// A scored group tied to the policy input it was sampled for.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGroup {
    pub input: usize,
    pub samples: Vec<ToySample>,
    pub rollout: RolloutGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepParams {
    pub learning_rate: f64,
    pub kl_beta: f64,
    /// PPO-style ratio clipping; off by default.
    #[serde(default)]
    pub clip_ratio: Option<f64>,
    /// Gradient passes over the same groups. Only meaningful with clipping,
    /// since the first pass is always on-policy.
    #[serde(default = "one")]
    pub epochs: usize,
}

fn one() -> usize {
    1
}

impl StepParams {
    pub fn new(learning_rate: f64, kl_beta: f64) -> Self {
        Self {
            learning_rate,
            kl_beta,
            clip_ratio: None,
            epochs: 1,
        }
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(GrpoError::Param("learning_rate must be finite and >= 0".into()));
        }
        if !(self.kl_beta.is_finite() && self.kl_beta >= 0.0) {
            return Err(GrpoError::Param("kl_beta must be finite and >= 0".into()));
        }
        if self.clip_ratio.is_some_and(|c| !(c.is_finite() && c > 0.0)) {
            return Err(GrpoError::Param("clip_ratio must be finite and positive".into()));
        }
        if self.epochs == 0 {
            return Err(GrpoError::Param("epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// The KL term has curvature up to about 1 in logit space, so plain
    /// gradient ascent with `lr * beta > 1` overshoots the reference and
    /// oscillates. The step size is capped at `1 / beta`.
    pub fn effective_lr(&self) -> f64 {
        if self.kl_beta > 0.0 {
            self.learning_rate.min(1.0 / self.kl_beta)
        } else {
            self.learning_rate
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    pub std_advantage: f64,
    /// Mean over the batch inputs of `KL(pi || pi_ref)` after the update.
    pub kl: f64,
    pub effective_lr: f64,
    pub grad_norm: f64,
}

fn distinct_inputs(groups: &[PolicyGroup]) -> Vec<usize> {
    let mut v: Vec<usize> = groups.iter().map(|g| g.input).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn check_batch(policy: &ToyPolicy, groups: &[PolicyGroup]) -> Result<(), GrpoError> {
    for g in groups {
        let slots = policy.slots(g.input)?;
        if g.samples.len() != g.rollout.advantages.len() {
            return Err(GrpoError::Shape);
        }
        for s in &g.samples {
            if s.choices.len() != slots.len() || s.choices.iter().zip(slots).any(|(&c, z)| c >= z.len()) {
                return Err(GrpoError::Shape);
            }
        }
    }
    Ok(())
}

/// Surrogate objective at the current parameters. `old_log_probs` of the
/// samples serve as the ratio denominator when clipping is on.
pub fn surrogate_objective(policy: &ToyPolicy, groups: &[PolicyGroup], kl_beta: f64, clip_ratio: Option<f64>) -> f64 {
    let n: usize = groups.iter().map(|g| g.samples.len()).sum();
    let mut pg = 0.0;
    for g in groups {
        for (s, &a) in g.samples.iter().zip(&g.rollout.advantages) {
            let lp = policy.log_prob(g.input, &s.choices);
            pg += match clip_ratio {
                None => a * lp,
                Some(eps) => {
                    let r = (lp - s.log_prob).exp();
                    (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a)
                }
            };
        }
    }
    let inputs = distinct_inputs(groups);
    let kl = inputs.iter().map(|&i| policy.kl(i)).sum::<f64>() / inputs.len().max(1) as f64;
    pg / n.max(1) as f64 - kl_beta * kl
}

/// Analytic gradient of [`surrogate_objective`] with respect to the logits.
pub fn surrogate_gradient(
    policy: &ToyPolicy,
    groups: &[PolicyGroup],
    kl_beta: f64,
    clip_ratio: Option<f64>,
) -> Result<Logits, GrpoError> {
    check_batch(policy, groups)?;
    let mut grad: Logits = policy
        .logits
        .iter()
        .map(|s| s.iter().map(|z| vec![0.0; z.len()]).collect())
        .collect();
    let n: usize = groups.iter().map(|g| g.samples.len()).sum();
    if n == 0 {
        return Ok(grad);
    }
    let mut probs_cache: HashMap<usize, Vec<Vec<f64>>> = HashMap::new();
    for g in groups {
        let probs = probs_cache
            .entry(g.input)
            .or_insert_with(|| (0..policy.logits[g.input].len()).map(|s| policy.probs(g.input, s)).collect());
        for (s, &a) in g.samples.iter().zip(&g.rollout.advantages) {
            // d/dz of the per-sample term is coef * d log pi / dz.
            let coef = match clip_ratio {
                None => a,
                Some(eps) => {
                    let r = (policy.log_prob(g.input, &s.choices) - s.log_prob).exp();
                    let clipped = (a > 0.0 && r > 1.0 + eps) || (a < 0.0 && r < 1.0 - eps);
                    if clipped {
                        0.0
                    } else {
                        a * r
                    }
                }
            };
            if coef == 0.0 {
                continue;
            }
            for (slot, &c) in s.choices.iter().enumerate() {
                let p = &probs[slot];
                let gs = &mut grad[g.input][slot];
                for j in 0..p.len() {
                    let ind = if j == c { 1.0 } else { 0.0 };
                    gs[j] += coef * (ind - p[j]) / n as f64;
                }
            }
        }
    }
    if kl_beta > 0.0 {
        let inputs = distinct_inputs(groups);
        let scale = kl_beta / inputs.len() as f64;
        for i in inputs {
            for (slot, (z, zr)) in policy.logits[i].iter().zip(&policy.reference[i]).enumerate() {
                let lp = log_softmax(z);
                let lq = log_softmax(zr);
                let kl: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
                for j in 0..z.len() {
                    grad[i][slot][j] -= scale * lp[j].exp() * (lp[j] - lq[j] - kl);
                }
            }
        }
    }
    Ok(grad)
}

/// One update: `epochs` gradient-ascent passes on the surrogate. The
/// policy is left untouched if any pass produces a non-finite gradient.
pub fn grpo_step(policy: &mut ToyPolicy, groups: &[PolicyGroup], params: &StepParams) -> Result<StepReport, GrpoError> {
    params.validate()?;
    for g in groups {
        g.rollout.validate()?;
    }
    let lr = params.effective_lr();
    let mut next = policy.clone();
    let mut grad_norm = 0.0;
    for _ in 0..params.epochs {
        let grad = surrogate_gradient(&next, groups, params.kl_beta, params.clip_ratio)?;
        let flat = || grad.iter().flatten().flatten();
        if flat().any(|x| !x.is_finite()) {
            return Err(GrpoError::NonFiniteGradient);
        }
        grad_norm = flat().map(|x| x * x).sum::<f64>().sqrt();
        for (zs, gs) in next.logits.iter_mut().flatten().zip(grad.iter().flatten()) {
            for (z, g) in zs.iter_mut().zip(gs) {
                *z += lr * g;
            }
        }
        if next.logits.iter().flatten().flatten().any(|x| !x.is_finite()) {
            return Err(GrpoError::NonFiniteGradient);
        }
    }
    *policy = next;

    let n: usize = groups.iter().map(|g| g.rollout.rewards.len()).sum::<usize>().max(1);
    let all_adv = || groups.iter().flat_map(|g| g.rollout.advantages.iter().copied());
    let mean_reward = groups.iter().flat_map(|g| g.rollout.rewards.iter()).sum::<f64>() / n as f64;
    let mean_abs_advantage = all_adv().map(f64::abs).sum::<f64>() / n as f64;
    let std_advantage = groups
        .iter()
        .map(|g| {
            let a = &g.rollout.advantages;
            let m = a.iter().sum::<f64>() / a.len() as f64;
            (a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
        })
        .sum::<f64>()
        / groups.len().max(1) as f64;
    let inputs = distinct_inputs(groups);
    let kl = inputs.iter().map(|&i| policy.kl(i)).sum::<f64>() / inputs.len().max(1) as f64;
    Ok(StepReport {
        mean_reward,
        mean_abs_advantage,
        std_advantage,
        kl,
        effective_lr: lr,
        grad_norm,
    })
}

/// A task the toy policy can be trained on: each input has a fixed number
/// of categorical slots, a joint choice renders to text, and the text is
/// scored by a reward oracle.
pub trait ToyEnv: Sync {
    fn n_inputs(&self) -> usize;
    fn input_id(&self, input: usize) -> String;
    fn slot_sizes(&self, input: usize) -> Vec<usize>;
    fn render(&self, input: usize, choices: &[usize]) -> String;
    fn reward(&self, input: usize, choices: &[usize], text: &str) -> Result<f64, GrpoError>;
    /// Best achievable reward, when known.
    fn optimum(&self) -> Option<f64> {
        None
    }
}

/// One sampled group with rendered texts.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedGroup {
    pub samples: Vec<ToySample>,
    pub texts: Vec<String>,
}

fn group_rng(seed: u64, iteration: u64, input: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration.wrapping_mul(1 << 20).wrapping_add(input));
    rng
}

/// Samples `g` candidates for `input` and renders them through `env`.
pub fn sample_group(
    policy: &ToyPolicy,
    env: &dyn ToyEnv,
    input: usize,
    g: usize,
    seed: u64,
) -> Result<RenderedGroup, GrpoError> {
    sample_group_with(policy, env, input, g, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn sample_group_with(
    policy: &ToyPolicy,
    env: &dyn ToyEnv,
    input: usize,
    g: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RenderedGroup, GrpoError> {
    if g < 2 {
        return Err(GrpoError::GroupTooSmall(g));
    }
    let samples = policy.sample(input, g, rng)?;
    let texts = samples.iter().map(|s| env.render(input, &s.choices)).collect();
    Ok(RenderedGroup { samples, texts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyTrainConfig {
    pub group_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub kl_beta: f64,
    pub epsilon: f64,
    pub seed: u64,
    #[serde(default)]
    pub clip_ratio: Option<f64>,
    #[serde(default = "one")]
    pub epochs: usize,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            group_size: 16,
            iterations: 200,
            learning_rate: 2.0,
            kl_beta: 0.05,
            epsilon: DEFAULT_EPSILON,
            seed: 7,
            clip_ratio: None,
            epochs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Mean reward of the groups sampled this iteration (before the update).
    pub mean_reward: f64,
    /// Exact expected reward under the pre-update policy, when the joint
    /// choice space is small enough to enumerate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_reward: Option<f64>,
    pub kl: f64,
    pub std_advantage: f64,
    pub mean_abs_advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub trace: Vec<TraceRecord>,
    pub policy: ToyPolicy,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("training aborted at iteration {iteration}: {cause}")]
pub struct TrainError {
    pub iteration: usize,
    pub cause: GrpoError,
    pub trace: Vec<TraceRecord>,
}

const ENUMERATION_LIMIT: usize = 4096;

struct RewardCache<'a> {
    env: &'a dyn ToyEnv,
    memo: HashMap<(usize, Vec<usize>), f64>,
}

impl RewardCache<'_> {
    fn get(&mut self, input: usize, choices: &[usize], text: Option<&str>) -> Result<f64, GrpoError> {
        if let Some(&r) = self.memo.get(&(input, choices.to_vec())) {
            return Ok(r);
        }
        let rendered;
        let text = match text {
            Some(t) => t,
            None => {
                rendered = self.env.render(input, choices);
                &rendered
            }
        };
        let r = self.env.reward(input, choices, text)?;
        self.memo.insert((input, choices.to_vec()), r);
        Ok(r)
    }

    fn expected(&mut self, policy: &ToyPolicy) -> Result<Option<f64>, GrpoError> {
        let mut total = 0.0;
        for input in 0..policy.n_inputs() {
            let sizes: Vec<usize> = policy.logits[input].iter().map(Vec::len).collect();
            if sizes.iter().product::<usize>() > ENUMERATION_LIMIT {
                return Ok(None);
            }
            let probs: Vec<Vec<f64>> = (0..sizes.len()).map(|s| policy.probs(input, s)).collect();
            let mut choices = vec![0usize; sizes.len()];
            loop {
                let p: f64 = choices.iter().enumerate().map(|(s, &c)| probs[s][c]).product();
                if p > 0.0 {
                    total += p * self.get(input, &choices, None)?;
                }
                let mut s = 0;
                while s < sizes.len() {
                    choices[s] += 1;
                    if choices[s] < sizes[s] {
                        break;
                    }
                    choices[s] = 0;
                    s += 1;
                }
                if s == sizes.len() {
                    break;
                }
            }
        }
        Ok(Some(total / policy.n_inputs().max(1) as f64))
    }
}

/// Trains a uniform policy on `env`. Each iteration samples one group per
/// input, converts rewards into group-relative advantages and takes one
/// [`grpo_step`]. Deterministic for a given seed.
pub fn train_toy(env: &dyn ToyEnv, config: &ToyTrainConfig) -> Result<TrainOutcome, TrainError> {
    let shape: Vec<Vec<usize>> = (0..env.n_inputs()).map(|i| env.slot_sizes(i)).collect();
    train_policy(ToyPolicy::uniform(&shape), env, config)
}

/// As [`train_toy`], starting from (and anchored to) `policy`.
pub fn train_policy(mut policy: ToyPolicy, env: &dyn ToyEnv, config: &ToyTrainConfig) -> Result<TrainOutcome, TrainError> {
    let mut trace = Vec::with_capacity(config.iterations);
    let fail = |iteration, cause, trace: &Vec<TraceRecord>| TrainError {
        iteration,
        cause,
        trace: trace.clone(),
    };
    let params = StepParams {
        learning_rate: config.learning_rate,
        kl_beta: config.kl_beta,
        clip_ratio: config.clip_ratio,
        epochs: config.epochs,
    };
    params.validate().map_err(|e| fail(0, e, &trace))?;
    if policy.n_inputs() != env.n_inputs() {
        return Err(fail(0, GrpoError::Param("policy and task disagree on inputs".into()), &trace));
    }
    let mut cache = RewardCache {
        env,
        memo: HashMap::new(),
    };
    for it in 0..config.iterations {
        let expected_reward = cache.expected(&policy).map_err(|e| fail(it, e, &trace))?;
        let mut groups = Vec::with_capacity(env.n_inputs());
        for input in 0..env.n_inputs() {
            let mut rng = group_rng(config.seed, it as u64, input as u64);
            let rendered = sample_group_with(&policy, env, input, config.group_size, &mut rng)
                .map_err(|e| fail(it, e, &trace))?;
            let rewards = rendered
                .samples
                .iter()
                .zip(&rendered.texts)
                .map(|(s, t)| cache.get(input, &s.choices, Some(t)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| fail(it, e, &trace))?;
            let mut rollout = RolloutGroup::new(env.input_id(input), "toy", rendered.texts, rewards, config.epsilon)
                .map_err(|e| fail(it, e, &trace))?;
            rollout.log_probs = Some(rendered.samples.iter().map(|s| s.log_prob).collect());
            groups.push(PolicyGroup {
                input,
                samples: rendered.samples,
                rollout,
            });
        }
        let report = grpo_step(&mut policy, &groups, &params).map_err(|e| fail(it, e, &trace))?;
        if !report.mean_reward.is_finite() {
            return Err(fail(it, GrpoError::NonFiniteReward(0), &trace));
        }
        trace.push(TraceRecord {
            iteration: it,
            mean_reward: report.mean_reward,
            expected_reward,
            kl: report.kl,
            std_advantage: report.std_advantage,
            mean_abs_advantage: report.mean_abs_advantage,
        });
    }
    Ok(TrainOutcome { trace, policy })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn advantage_examples() {
        let a = compute_advantages(&[1.0, 0.0, 1.0, 0.0], 1e-9).unwrap();
        assert!(close(&a, &[1.0, -1.0, 1.0, -1.0], 1e-6));
        assert_eq!(compute_advantages(&[0.7; 5], 1e-6).unwrap(), vec![0.0; 5]);
        let a = compute_advantages(&[0.9, 0.1], 1e-9).unwrap();
        assert!(close(&a, &[1.0, -1.0], 1e-6));
        assert_eq!(compute_advantages(&[1.0], 1e-6), Err(GrpoError::GroupTooSmall(1)));
        assert_eq!(compute_advantages(&[1.0, 2.0], 0.0), Err(GrpoError::Epsilon(0.0)));
    }

    #[test]
    fn reference_kl_is_zero() {
        let p = ToyPolicy::from_logits(vec![vec![vec![0.3, -1.2, 2.0], vec![5.0, 5.0]]]).unwrap();
        assert_eq!(p.kl(0), 0.0);
    }

    #[test]
    fn one_hot_policy_samples_identically() {
        let p = ToyPolicy::from_logits(vec![vec![vec![0.0, -1000.0], vec![-1000.0, 0.0, -1000.0]]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = p.sample(0, 8, &mut rng).unwrap();
        assert!(s.iter().all(|x| x.choices == vec![0, 1] && x.log_prob == 0.0));
    }

    #[test]
    fn uniform_two_way_frequency() {
        let p = ToyPolicy::uniform(&[vec![2]]);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let s = p.sample(0, 1000, &mut rng).unwrap();
        let ones = s.iter().filter(|x| x.choices[0] == 1).count() as f64 / 1000.0;
        assert!((ones - 0.5).abs() <= 0.05, "{ones}");
    }

    fn group(input: usize, choices: &[usize], adv: &[f64], policy: &ToyPolicy) -> PolicyGroup {
        let samples: Vec<ToySample> = choices
            .iter()
            .map(|&c| ToySample {
                choices: vec![c],
                log_prob: policy.log_prob(input, &[c]),
            })
            .collect();
        PolicyGroup {
            input,
            rollout: RolloutGroup {
                input_id: format!("x{input}"),
                stage: "test".into(),
                candidates: vec![String::new(); choices.len()],
                rewards: vec![0.0; choices.len()],
                advantages: adv.to_vec(),
                group_mean: 0.0,
                group_std: 0.0,
                log_probs: None,
            },
            samples,
        }
    }

    #[test]
    fn zero_advantage_zero_beta_is_a_no_op() {
        let mut p = ToyPolicy::from_logits(vec![vec![vec![0.2, -0.4]]]).unwrap();
        let before = p.clone();
        let g = group(0, &[0, 1], &[0.0, 0.0], &p);
        grpo_step(&mut p, &[g], &StepParams::new(0.5, 0.0)).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn positive_advantage_raises_probability() {
        let mut p = ToyPolicy::uniform(&[vec![2]]);
        let g = group(0, &[0, 1], &[1.0, 0.0], &p);
        grpo_step(&mut p, &[g], &StepParams::new(0.1, 0.05)).unwrap();
        assert!(p.probs(0, 0)[0] > 0.5);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = ToyPolicy {
            logits: vec![vec![vec![0.4, -0.3, 1.1]]],
            reference: vec![vec![vec![0.0, 0.2, -0.5]]],
        };
        let g = group(0, &[2, 0], &[1.0, -1.0], &p);
        let beta = 0.3;
        let grad = surrogate_gradient(&p, std::slice::from_ref(&g), beta, None).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let mut plus = p.clone();
            plus.logits[0][0][j] += h;
            let mut minus = p.clone();
            minus.logits[0][0][j] -= h;
            let fd = (surrogate_objective(&plus, std::slice::from_ref(&g), beta, None)
                - surrogate_objective(&minus, std::slice::from_ref(&g), beta, None))
                / (2.0 * h);
            assert!((fd - grad[0][0][j]).abs() < 1e-7, "{j}: {fd} vs {}", grad[0][0][j]);
        }
        let mut stepped = p.clone();
        grpo_step(&mut stepped, &[g], &StepParams::new(0.1, beta)).unwrap();
        for j in 0..3 {
            assert!((stepped.logits[0][0][j] - (p.logits[0][0][j] + 0.1 * grad[0][0][j])).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_matches_plain_on_policy() {
        let p = ToyPolicy::uniform(&[vec![3]]);
        let g = group(0, &[0, 2], &[1.0, -1.0], &p);
        let plain = surrogate_gradient(&p, std::slice::from_ref(&g), 0.1, None).unwrap();
        let clipped = surrogate_gradient(&p, &[g], 0.1, Some(0.2)).unwrap();
        assert!(close(&plain[0][0], &clipped[0][0], 1e-15));
    }

    #[test]
    fn non_finite_advantage_aborts() {
        let mut p = ToyPolicy::uniform(&[vec![2]]);
        let before = p.clone();
        let g = group(0, &[0, 1], &[f64::NAN, 0.0], &p);
        assert_eq!(
            grpo_step(&mut p, &[g], &StepParams::new(0.1, 0.0)),
            Err(GrpoError::NonFiniteGradient)
        );
        assert_eq!(p, before);
    }

    #[test]
    fn rollout_group_round_trips() {
        let g = RolloutGroup::new("c1", "query", vec!["a".into(), "b".into()], vec![1.0, 0.0], 1e-6).unwrap();
        assert_eq!(g.group_mean, 0.5);
        assert_eq!(g.group_std, 0.5);
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<RolloutGroup>(&s).unwrap(), g);
    }
}
