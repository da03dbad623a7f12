//! Deterministic actors with centralized critics: the MADDPG building blocks
//! shared by the baseline and the ensemble trainer.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{Action, ACTION_DIM, N_AGENTS, OBS_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::label::PolicyLabel;
use crate::nn::{adam_step, polyak_update, Activation, AdamState, GradientBuffer, Matrix, Mlp};
use crate::replay::Transition;

/// Critic input: global state followed by every agent's action in id order.
pub const CRITIC_INPUT_DIM: usize = STATE_DIM + N_AGENTS * ACTION_DIM;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub gamma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub polyak: f64,
    pub batch: usize,
    pub noise_std: f64,
    /// Multiplicative decay of the exploration noise per episode.
    pub noise_decay: f64,
    pub noise_floor: f64,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    /// Updates start once the buffer holds this many transitions.
    pub warmup: usize,
    /// Environment steps between updates.
    pub update_every: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            gamma: 0.95,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            polyak: 0.01,
            batch: 1024,
            noise_std: 0.3,
            noise_decay: 0.9999,
            noise_floor: 0.02,
            hidden: vec![64, 64],
            buffer_capacity: 1_000_000,
            warmup: 10 * 1024,
            update_every: 1,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("train.gamma", "must lie in [0, 1)"));
        }
        for (key, v) in [
            ("train.lr_actor", self.lr_actor),
            ("train.lr_critic", self.lr_critic),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return Err(Error::config("train.polyak", "must lie in [0, 1]"));
        }
        if self.batch == 0 {
            return Err(Error::config("train.batch", "must be positive"));
        }
        if self.noise_std < 0.0 || self.noise_floor < 0.0 {
            return Err(Error::config("train.noise_std", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.noise_decay) {
            return Err(Error::config("train.noise_decay", "must lie in [0, 1]"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("train.hidden", "needs at least one non-zero layer"));
        }
        if self.buffer_capacity < self.batch {
            return Err(Error::config("train.buffer_capacity", "must be at least the batch size"));
        }
        if self.update_every == 0 {
            return Err(Error::config("train.update_every", "must be positive"));
        }
        Ok(())
    }
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

/// A network with its delayed target copy and optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracked {
    pub net: Mlp,
    pub target: Mlp,
    pub opt: AdamState,
}

impl Tracked {
    pub fn new(net: Mlp, lr: f64) -> Self {
        let opt = AdamState::new(&net, lr);
        Tracked {
            target: net.clone(),
            net,
            opt,
        }
    }

    pub fn soft_update(&mut self, rate: f64) -> Result<()> {
        polyak_update(&mut self.target, &self.net, rate)
    }

    pub fn apply(&mut self, grads: &GradientBuffer) -> Result<()> {
        adam_step(&mut self.net, grads, &mut self.opt)
    }
}

/// Policy network: observation to a tanh-bounded 2-d force.
pub fn new_actor<R: Rng + ?Sized>(hidden: &[usize], lr: f64, rng: &mut R) -> Result<Tracked> {
    let net = Mlp::init_uniform(
        &sizes(OBS_DIM, hidden, ACTION_DIM),
        Activation::Relu,
        Activation::Tanh,
        rng,
    )?;
    Ok(Tracked::new(net, lr))
}

/// Centralized critic: global state and joint action to a scalar value.
pub fn new_critic<R: Rng + ?Sized>(hidden: &[usize], lr: f64, rng: &mut R) -> Result<Tracked> {
    let net = Mlp::init_uniform(
        &sizes(CRITIC_INPUT_DIM, hidden, 1),
        Activation::Relu,
        Activation::Identity,
        rng,
    )?;
    Ok(Tracked::new(net, lr))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaddpgAgent {
    pub actor: Tracked,
    pub critic: Tracked,
}

impl MaddpgAgent {
    pub fn new<R: Rng + ?Sized>(hyper: &TrainHyper, rng: &mut R) -> Result<Self> {
        Ok(MaddpgAgent {
            actor: new_actor(&hyper.hidden, hyper.lr_actor, rng)?,
            critic: new_critic(&hyper.hidden, hyper.lr_critic, rng)?,
        })
    }
}

/// Actor output plus Gaussian exploration noise, clamped to `[-1, 1]`.
pub fn act<R: Rng + ?Sized>(actor: &Mlp, obs: &[f64], noise_std: f64, rng: &mut R) -> Result<Action> {
    let out = actor.forward(obs)?;
    let mut a = [0.0; ACTION_DIM];
    for (k, v) in a.iter_mut().enumerate() {
        let noise = if noise_std > 0.0 {
            noise_std * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        *v = (out[k] + noise).clamp(-1.0, 1.0);
    }
    Ok(a)
}

pub fn critic_input(state: &[f64; STATE_DIM], actions: &[Action; N_AGENTS]) -> [f64; CRITIC_INPUT_DIM] {
    let mut x = [0.0; CRITIC_INPUT_DIM];
    x[..STATE_DIM].copy_from_slice(state);
    for (i, a) in actions.iter().enumerate() {
        x[STATE_DIM + ACTION_DIM * i..STATE_DIM + ACTION_DIM * (i + 1)].copy_from_slice(a);
    }
    x
}

fn action_columns(agent: usize) -> std::ops::Range<usize> {
    STATE_DIM + ACTION_DIM * agent..STATE_DIM + ACTION_DIM * (agent + 1)
}

/// A replay minibatch laid out as matrices, one row per sample.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: [Matrix; N_AGENTS],
    pub next_obs: [Matrix; N_AGENTS],
    pub next_state: Matrix,
    /// Global state and stored joint action, i.e. the critic input.
    pub critic_inputs: Matrix,
    pub rewards: Matrix,
    pub done: Vec<bool>,
    pub labels: Vec<[PolicyLabel; N_AGENTS]>,
    /// Caller-supplied identifiers of the samples (e.g. replay serials).
    pub ids: Vec<u64>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition], ids: Vec<u64>) -> Result<Self> {
        if ids.len() != ts.len() {
            return Err(Error::shape("Batch ids", ts.len(), ids.len()));
        }
        let b = ts.len();
        let gather = |pick: &dyn Fn(&Transition) -> &[f64; OBS_DIM]| {
            let mut m = Matrix::zeros(b, OBS_DIM);
            for (r, t) in ts.iter().enumerate() {
                m.row_mut(r).copy_from_slice(pick(t));
            }
            m
        };
        let obs = std::array::from_fn(|i| gather(&|t| &t.obs[i]));
        let next_obs = std::array::from_fn(|i| gather(&|t| &t.next_obs[i]));
        let mut next_state = Matrix::zeros(b, STATE_DIM);
        let mut critic_inputs = Matrix::zeros(b, CRITIC_INPUT_DIM);
        let mut rewards = Matrix::zeros(b, N_AGENTS);
        for (r, t) in ts.iter().enumerate() {
            next_state.row_mut(r).copy_from_slice(&t.next_state);
            critic_inputs
                .row_mut(r)
                .copy_from_slice(&critic_input(&t.state, &t.actions));
            rewards.row_mut(r).copy_from_slice(&t.rewards);
        }
        Ok(Batch {
            obs,
            next_obs,
            next_state,
            critic_inputs,
            rewards,
            done: ts.iter().map(|t| t.done).collect(),
            labels: ts.iter().map(|t| t.labels).collect(),
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    /// The rows `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Batch {
        Batch {
            obs: std::array::from_fn(|i| self.obs[i].select_rows(idx)),
            next_obs: std::array::from_fn(|i| self.next_obs[i].select_rows(idx)),
            next_state: self.next_state.select_rows(idx),
            critic_inputs: self.critic_inputs.select_rows(idx),
            rewards: self.rewards.select_rows(idx),
            done: idx.iter().map(|&r| self.done[r]).collect(),
            labels: idx.iter().map(|&r| self.labels[r]).collect(),
            ids: idx.iter().map(|&r| self.ids[r]).collect(),
        }
    }
}

/// Target actions `π'_j(o'_j)` for every agent, one matrix per agent.
pub fn target_actions(target_actors: [&Mlp; N_AGENTS], batch: &Batch) -> Result<[Matrix; N_AGENTS]> {
    let mut out: [Matrix; N_AGENTS] = std::array::from_fn(|_| Matrix::zeros(0, 0));
    for i in 0..N_AGENTS {
        out[i] = target_actors[i].forward_batch(&batch.next_obs[i])?;
    }
    Ok(out)
}

/// Bootstrapped critic regression targets `y = r_i + γ Q'_i(x', a')`, with the
/// bootstrap term dropped on terminal samples. Returns one vector per agent.
pub fn critic_targets(
    target_critics: [&Mlp; N_AGENTS],
    batch: &Batch,
    next_actions: &[Matrix; N_AGENTS],
    gamma: f64,
) -> Result<[Vec<f64>; N_AGENTS]> {
    let b = batch.len();
    let mut inputs = Matrix::zeros(b, CRITIC_INPUT_DIM);
    for r in 0..b {
        let row = inputs.row_mut(r);
        row[..STATE_DIM].copy_from_slice(batch.next_state.row(r));
        for (i, a) in next_actions.iter().enumerate() {
            if a.rows() != b || a.cols() != ACTION_DIM {
                return Err(Error::shape("critic_targets next actions", b * ACTION_DIM, a.rows() * a.cols()));
            }
            row[action_columns(i)].copy_from_slice(a.row(r));
        }
    }
    let mut ys: [Vec<f64>; N_AGENTS] = Default::default();
    for i in 0..N_AGENTS {
        let q = if gamma == 0.0 {
            Matrix::zeros(b, 1)
        } else {
            target_critics[i].forward_batch(&inputs)?
        };
        ys[i] = (0..b)
            .map(|r| {
                let boot = if batch.done[r] { 0.0 } else { gamma * q.get(r, 0) };
                batch.rewards.get(r, i) + boot
            })
            .collect();
    }
    Ok(ys)
}

/// Mean squared TD error and its gradient with respect to the critic parameters.
pub fn critic_loss_grad(critic: &Mlp, inputs: &Matrix, y: &[f64]) -> Result<(f64, GradientBuffer)> {
    let b = inputs.rows();
    if y.len() != b {
        return Err(Error::shape("critic_loss_grad targets", b, y.len()));
    }
    if b == 0 {
        return Ok((0.0, GradientBuffer::zeros_like(critic)));
    }
    let tape = critic.forward_tape(inputs)?;
    let q = tape.output();
    let mut up = Matrix::zeros(b, 1);
    let mut loss = 0.0;
    for r in 0..b {
        let e = q.get(r, 0) - y[r];
        loss += e * e;
        up.set(r, 0, 2.0 * e / b as f64);
    }
    loss /= b as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("critic loss is {loss}")));
    }
    let (g, _) = critic.backward_batch(&tape, &up)?;
    Ok((loss, g))
}

/// One Adam step on the critic's mean squared error. Returns the loss before the step.
pub fn critic_update(critic: &mut Tracked, inputs: &Matrix, y: &[f64]) -> Result<f64> {
    let (loss, g) = critic_loss_grad(&critic.net, inputs, y)?;
    critic.apply(&g)?;
    Ok(loss)
}

/// Mean over the batch of `Q(x, a_1..π(o_agent)..a_N)` with the other agents'
/// actions taken from `inputs`, and the gradient of its negation with respect
/// to the actor parameters (so that a descent step ascends the objective).
pub fn actor_objective_grad(
    actor: &Mlp,
    critic: &Mlp,
    agent: usize,
    obs: &Matrix,
    inputs: &Matrix,
) -> Result<(f64, GradientBuffer)> {
    let b = obs.rows();
    if inputs.rows() != b {
        return Err(Error::shape("actor_objective_grad rows", b, inputs.rows()));
    }
    if b == 0 {
        return Ok((0.0, GradientBuffer::zeros_like(actor)));
    }
    let actor_tape = actor.forward_tape(obs)?;
    let mut x = inputs.clone();
    let cols = action_columns(agent);
    for r in 0..b {
        x.row_mut(r)[cols.clone()].copy_from_slice(actor_tape.output().row(r));
    }
    let critic_tape = critic.forward_tape(&x)?;
    let objective = critic_tape.output().as_slice().iter().sum::<f64>() / b as f64;
    if !objective.is_finite() {
        return Err(Error::Numeric(format!("actor objective is {objective}")));
    }
    let up = Matrix::from_vec(b, 1, vec![-1.0 / b as f64; b])?;
    let (_, dx) = critic.backward_batch(&critic_tape, &up)?;
    let da = dx.columns(cols.start, ACTION_DIM);
    let (g, _) = actor.backward_batch(&actor_tape, &da)?;
    Ok((objective, g))
}

/// One ascent step of the deterministic policy gradient. Returns the
/// objective before the step.
pub fn actor_update(
    actor: &mut Tracked,
    critic: &Mlp,
    agent: usize,
    obs: &Matrix,
    inputs: &Matrix,
) -> Result<f64> {
    let (obj, g) = actor_objective_grad(&actor.net, critic, agent, obs, inputs)?;
    actor.apply(&g)?;
    Ok(obj)
}
