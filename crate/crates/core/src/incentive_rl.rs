//! Soft actor-critic controller that sets one incentive multiplier from the
//! agents' speed caps, rewarded by how balanced the following block of
//! episodes turns out.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::env::N_AGENTS;
use crate::error::{Error, Result};
use crate::incentive::{NormalizedStats, RlTarget, RoleAssignment};
use crate::maddpg::{critic_loss_grad, Tracked};
use crate::nn::{squash_with_noise, squashed_grads, Activation, AdamState, Matrix, Mlp, adam_step};
use crate::replay::ReplayBuffer;
use crate::train::{TrainConfig, Trainer};

pub const SAC_OBS_DIM: usize = N_AGENTS;

#[derive(Debug, Clone, PartialEq)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub gamma: f64,
    pub polyak: f64,
    pub batch: usize,
    pub temperature: f64,
    pub replay_capacity: usize,
    /// Gradient steps taken after each block.
    pub updates_per_block: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden: vec![64, 64],
            lr: 3e-4,
            gamma: 0.99,
            polyak: 0.005,
            batch: 256,
            temperature: 0.2,
            replay_capacity: 100_000,
            updates_per_block: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncentiveRlConfig {
    /// Episodes each chosen multiplier is held for.
    pub period: u64,
    pub alpha_max: f64,
    pub pretrain_episodes: u64,
    pub sac: SacConfig,
}

impl Default for IncentiveRlConfig {
    fn default() -> Self {
        IncentiveRlConfig {
            period: 250,
            alpha_max: 2.0,
            pretrain_episodes: 100_000,
            sac: SacConfig::default(),
        }
    }
}

impl IncentiveRlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::config("incentive_rl.period", "must be at least 1"));
        }
        if !(self.alpha_max > 0.0 && self.alpha_max.is_finite()) {
            return Err(Error::config("incentive_rl.alpha_max", "must be positive"));
        }
        let s = &self.sac;
        if !(0.0..1.0).contains(&s.gamma) {
            return Err(Error::config("sac.gamma", "must lie in [0, 1)"));
        }
        if !(s.lr > 0.0) {
            return Err(Error::config("sac.lr", "must be positive"));
        }
        if !(0.0..=1.0).contains(&s.polyak) {
            return Err(Error::config("sac.polyak", "must lie in [0, 1]"));
        }
        if s.batch == 0 || s.replay_capacity == 0 {
            return Err(Error::config("sac.batch", "batch and replay capacity must be positive"));
        }
        if s.temperature < 0.0 {
            return Err(Error::config("sac.temperature", "must be non-negative"));
        }
        if s.hidden.is_empty() || s.hidden.contains(&0) {
            return Err(Error::config("sac.hidden", "needs at least one non-zero layer"));
        }
        Ok(())
    }
}

/// Speed caps in agent order, divided by the global limit.
pub fn observe_speeds(speeds: &[f64; N_AGENTS], max_speed_limit: f64) -> [f64; SAC_OBS_DIM] {
    speeds.map(|s| s / max_speed_limit)
}

/// Maps a squashed action in `(-1, 1)` onto `(0, alpha_max)`.
pub fn action_to_alpha(a: f64, alpha_max: f64) -> f64 {
    (0.5 * (a + 1.0) * alpha_max).clamp(0.0, alpha_max)
}

/// Negative absolute gap between the strong and weak side over a block of
/// landmark counts, in normalized units.
pub fn incentive_reward(counts: &[u32; N_AGENTS], roles: &RoleAssignment, which: RlTarget) -> Result<f64> {
    let stats = NormalizedStats::from_raw(counts.map(f64::from))?;
    Ok(-match which {
        RlTarget::Team => stats.team_gap(roles),
        RlTarget::Agent => stats.agent_gap(roles),
    }
    .abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacTransition {
    pub state: [f64; SAC_OBS_DIM],
    /// Squashed action in `(-1, 1)`.
    pub action: f64,
    pub reward: f64,
    pub next_state: [f64; SAC_OBS_DIM],
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacLosses {
    pub q: [f64; 2],
    pub policy: f64,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    /// Outputs the pre-squash mean and log standard deviation.
    pub policy: Mlp,
    pub policy_opt: AdamState,
    pub q: [Tracked; 2],
    pub config: SacConfig,
    pub alpha_max: f64,
    pub replay: ReplayBuffer<SacTransition>,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(config: &SacConfig, alpha_max: f64, rng: &mut R) -> Result<Self> {
        let policy = Mlp::init_uniform(&sizes(SAC_OBS_DIM, &config.hidden, 2), Activation::Relu, Activation::Identity, rng)?;
        let mut q = Vec::with_capacity(2);
        for _ in 0..2 {
            let net = Mlp::init_uniform(&sizes(SAC_OBS_DIM + 1, &config.hidden, 1), Activation::Relu, Activation::Identity, rng)?;
            q.push(Tracked::new(net, config.lr));
        }
        let q: [Tracked; 2] = q.try_into().expect("two critics");
        Ok(SacAgent {
            policy_opt: AdamState::new(&policy, config.lr),
            policy,
            q,
            config: config.clone(),
            alpha_max,
            replay: ReplayBuffer::new(config.replay_capacity),
        })
    }

    /// Multiplier and squashed action for observation `s`; the deterministic
    /// form uses the distribution mean.
    pub fn incentive_action<R: Rng + ?Sized>(
        &self,
        s: &[f64; SAC_OBS_DIM],
        rng: &mut R,
        deterministic: bool,
    ) -> Result<(f64, f64)> {
        let out = self.policy.forward(s)?;
        let eps = if deterministic { 0.0 } else { rng.sample(StandardNormal) };
        let a = squash_with_noise(&out[..1], &out[1..], &[eps]).action[0];
        Ok((action_to_alpha(a, self.alpha_max), a))
    }

    /// A frozen copy of the policy for use inside a training run.
    pub fn frozen(&self, period: u64) -> RlPolicy {
        RlPolicy {
            policy: self.policy.clone(),
            alpha_max: self.alpha_max,
            period,
        }
    }
}

/// Deterministic incentive policy applied every `period` episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RlPolicy {
    pub policy: Mlp,
    pub alpha_max: f64,
    pub period: u64,
}

impl RlPolicy {
    pub fn alpha(&self, speeds: &[f64; N_AGENTS], max_speed_limit: f64) -> Result<f64> {
        let out = self.policy.forward(&observe_speeds(speeds, max_speed_limit))?;
        Ok(action_to_alpha(out[0].tanh(), self.alpha_max))
    }
}

fn q_inputs(states: &[[f64; SAC_OBS_DIM]], actions: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(states.len(), SAC_OBS_DIM + 1);
    for (r, (s, a)) in states.iter().zip(actions).enumerate() {
        m.row_mut(r)[..SAC_OBS_DIM].copy_from_slice(s);
        m.set(r, SAC_OBS_DIM, *a);
    }
    m
}

/// Soft TD targets `r + γ (min Q'(s', a') − temperature · log π(a'|s'))` with
/// `a'` drawn through the given noise.
pub fn sac_q_targets(
    policy: &Mlp,
    q_targets: [&Mlp; 2],
    batch: &[&SacTransition],
    noise: &[f64],
    gamma: f64,
    temperature: f64,
) -> Result<Vec<f64>> {
    let next: Vec<[f64; SAC_OBS_DIM]> = batch.iter().map(|t| t.next_state).collect();
    let out = policy.forward_batch(&Matrix::from_rows(&next)?)?;
    let mut actions = Vec::with_capacity(batch.len());
    let mut logp = Vec::with_capacity(batch.len());
    for (r, &e) in noise.iter().enumerate().take(batch.len()) {
        let s = squash_with_noise(&[out.get(r, 0)], &[out.get(r, 1)], &[e]);
        actions.push(s.action[0]);
        logp.push(s.log_prob);
    }
    let x = q_inputs(&next, &actions);
    let q1 = q_targets[0].forward_batch(&x)?;
    let q2 = q_targets[1].forward_batch(&x)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(r, t)| {
            let soft = q1.get(r, 0).min(q2.get(r, 0)) - temperature * logp[r];
            t.reward + if t.done { 0.0 } else { gamma * soft }
        })
        .collect())
}

/// Mean over states of `temperature · log π(a|s) − min(Q1, Q2)(s, a)` with
/// `a` reparameterized through `noise`, and its policy-parameter gradient.
pub fn sac_policy_loss_grad(
    policy: &Mlp,
    q: [&Mlp; 2],
    states: &[[f64; SAC_OBS_DIM]],
    noise: &[f64],
    temperature: f64,
) -> Result<(f64, crate::nn::GradientBuffer)> {
    let b = states.len();
    if noise.len() != b {
        return Err(Error::shape("sac policy noise", b, noise.len()));
    }
    let tape = policy.forward_tape(&Matrix::from_rows(states)?)?;
    let out = tape.output();
    let samples: Vec<_> = (0..b)
        .map(|r| squash_with_noise(&[out.get(r, 0)], &[out.get(r, 1)], &[noise[r]]))
        .collect();
    let x = q_inputs(states, &samples.iter().map(|s| s.action[0]).collect::<Vec<_>>());
    let t1 = q[0].forward_tape(&x)?;
    let t2 = q[1].forward_tape(&x)?;
    let mut up1 = Matrix::zeros(b, 1);
    let mut up2 = Matrix::zeros(b, 1);
    let mut loss = 0.0;
    let mut first = vec![true; b];
    for r in 0..b {
        let (v1, v2) = (t1.output().get(r, 0), t2.output().get(r, 0));
        first[r] = v1 <= v2;
        loss += temperature * samples[r].log_prob - v1.min(v2);
        if first[r] {
            up1.set(r, 0, 1.0);
        } else {
            up2.set(r, 0, 1.0);
        }
    }
    loss /= b as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("sac policy loss is {loss}")));
    }
    let (_, dx1) = q[0].backward_batch(&t1, &up1)?;
    let (_, dx2) = q[1].backward_batch(&t2, &up2)?;
    let mut dout = Matrix::zeros(b, 2);
    for r in 0..b {
        let dq_da = if first[r] { dx1.get(r, SAC_OBS_DIM) } else { dx2.get(r, SAC_OBS_DIM) };
        let g = squashed_grads(&samples[r], &[out.get(r, 1)]);
        let dmean = temperature * g.dlogp_dmean[0] - dq_da * g.daction_dmean[0];
        let dlog_std = temperature * g.dlogp_dlog_std[0] - dq_da * g.daction_dlog_std[0];
        dout.set(r, 0, dmean / b as f64);
        dout.set(r, 1, dlog_std / b as f64);
    }
    let (grads, _) = policy.backward_batch(&tape, &dout)?;
    Ok((loss, grads))
}

/// One soft actor-critic step on `batch`: both critics, then the policy,
/// then the target critics.
pub fn sac_update<R: Rng + ?Sized>(agent: &mut SacAgent, batch: &[&SacTransition], rng: &mut R) -> Result<SacLosses> {
    let cfg = agent.config.clone();
    let b = batch.len();
    let noise: Vec<f64> = (0..b).map(|_| rng.sample(StandardNormal)).collect();
    let y = sac_q_targets(
        &agent.policy,
        [&agent.q[0].target, &agent.q[1].target],
        batch,
        &noise,
        cfg.gamma,
        cfg.temperature,
    )?;
    let states: Vec<[f64; SAC_OBS_DIM]> = batch.iter().map(|t| t.state).collect();
    let x = q_inputs(&states, &batch.iter().map(|t| t.action).collect::<Vec<_>>());
    let mut q_loss = [0.0; 2];
    for (k, q) in agent.q.iter_mut().enumerate() {
        let (loss, g) = critic_loss_grad(&q.net, &x, &y)?;
        q.apply(&g)?;
        q_loss[k] = loss;
    }
    let noise: Vec<f64> = (0..b).map(|_| rng.sample(StandardNormal)).collect();
    let (policy_loss, g) = sac_policy_loss_grad(
        &agent.policy,
        [&agent.q[0].net, &agent.q[1].net],
        &states,
        &noise,
        cfg.temperature,
    )?;
    adam_step(&mut agent.policy, &g, &mut agent.policy_opt)?;
    for q in &mut agent.q {
        q.soft_update(cfg.polyak)?;
    }
    Ok(SacLosses {
        q: q_loss,
        policy: policy_loss,
    })
}

/// Bookkeeping for one held-multiplier block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockRecord {
    pub alpha: f64,
    pub reward: f64,
    pub counts: [u32; N_AGENTS],
}

impl BlockRecord {
    pub fn gap(&self) -> f64 {
        -self.reward
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub agent: SacAgent,
    pub trainer: Trainer,
    pub blocks: Vec<BlockRecord>,
}

/// Trains the incentive controller alongside a fresh run of `config`, which
/// must use one of the learned-incentive schemes.
pub fn pretrain(config: TrainConfig, rl: &IncentiveRlConfig, seed: u64) -> Result<PretrainOutcome> {
    rl.validate()?;
    let target = config.scheme.rl_target().ok_or_else(|| {
        Error::config("scheme", format!("{} has no learned incentive", config.scheme))
    })?;
    let max_speed = config.env.max_speed_limit;
    let mut trainer = Trainer::new(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut agent = SacAgent::new(&rl.sac, rl.alpha_max, &mut rng)?;
    let roles = trainer.roles();
    let mut blocks = Vec::new();
    let full_blocks = rl.pretrain_episodes / rl.period;
    for _ in 0..full_blocks {
        let s = observe_speeds(&trainer.speeds(), max_speed);
        let (alpha, a) = agent.incentive_action(&s, &mut rng, false)?;
        trainer.set_rl_alpha(alpha)?;
        trainer.run(rl.period)?;
        let mut counts = [0u32; N_AGENTS];
        for row in trainer.log().tail(rl.period as usize) {
            for (c, &l) in counts.iter_mut().zip(&row.landmark) {
                *c += u32::from(l);
            }
        }
        let reward = incentive_reward(&counts, &roles, target)?;
        agent.replay.push(SacTransition {
            state: s,
            action: a,
            reward,
            next_state: observe_speeds(&trainer.speeds(), max_speed),
            done: false,
        });
        blocks.push(BlockRecord { alpha, reward, counts });
        let batch = agent.config.batch.min(agent.replay.len());
        for _ in 0..agent.config.updates_per_block {
            let slots = agent.replay.sample_slots(batch, &mut rng).expect("non-empty replay");
            let owned: Vec<SacTransition> = slots.iter().map(|&k| *agent.replay.get(k)).collect();
            let refs: Vec<&SacTransition> = owned.iter().collect();
            sac_update(&mut agent, &refs, &mut rng)?;
        }
    }
    trainer.run(rl.pretrain_episodes % rl.period)?;
    Ok(PretrainOutcome {
        agent,
        trainer,
        blocks,
    })
}
