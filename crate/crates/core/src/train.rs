//! The episode loop shared by MADDPG and the controller-switched ensemble.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cmaddpg::{
    controller_update, exploration_probability, label_teams, ensemble_policy_update, ControllerNet,
    EnsembleAgent, EnsembleStep, CONTROLLER_HIDDEN,
};
use crate::env::{
    global_state, observe, reset_with_speeds, step, team_members, team_of, team_view, team_view_of_global,
    Action, EnvConfig, N_AGENTS, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::incentive::{IncentiveState, RoleAssignment, SchemeSpec};
use crate::incentive_rl::RlPolicy;
use crate::label::PolicyLabel;
use crate::maddpg::{act, critic_input, critic_targets, critic_update, Batch, TrainHyper};
use crate::eval::win_policy_usage;
use crate::metrics::{EpisodeRecord, MetricsLog};
use crate::nn::Matrix;
use crate::replay::{ReplayBuffer, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Maddpg,
    Cmaddpg,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Maddpg => "maddpg",
            Algorithm::Cmaddpg => "cmaddpg",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "maddpg" => Some(Algorithm::Maddpg),
            "cmaddpg" => Some(Algorithm::Cmaddpg),
            _ => None,
        }
    }
}

/// Settings specific to the controller-switched ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaddpgHyper {
    /// Decay constant of the exploration gate; `None` means a fifth of the
    /// planned episode count.
    pub exploration_c: Option<f64>,
    /// Episodes between controller updates.
    pub controller_interval: u64,
    pub controller_lr: f64,
    pub controller_batch: usize,
    pub controller_passes: usize,
    /// Most recent labelled states kept for the next controller update.
    pub controller_window: usize,
    pub controller_hidden: Vec<usize>,
}

impl Default for CmaddpgHyper {
    fn default() -> Self {
        CmaddpgHyper {
            exploration_c: None,
            controller_interval: 20,
            controller_lr: 1e-3,
            controller_batch: 256,
            controller_passes: 10,
            controller_window: 50_000,
            controller_hidden: CONTROLLER_HIDDEN.to_vec(),
        }
    }
}

impl CmaddpgHyper {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.exploration_c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("cmaddpg.exploration_c", "must be positive"));
            }
        }
        if self.controller_interval == 0 {
            return Err(Error::config("cmaddpg.controller_interval", "must be at least 1"));
        }
        if !(self.controller_lr > 0.0 && self.controller_lr.is_finite()) {
            return Err(Error::config("cmaddpg.controller_lr", "must be positive"));
        }
        if self.controller_batch == 0 {
            return Err(Error::config("cmaddpg.controller_batch", "must be positive"));
        }
        if self.controller_window == 0 {
            return Err(Error::config("cmaddpg.controller_window", "must be positive"));
        }
        if self.controller_hidden.is_empty() || self.controller_hidden.contains(&0) {
            return Err(Error::config("cmaddpg.controller_hidden", "needs at least one non-zero layer"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub algorithm: Algorithm,
    pub train: TrainHyper,
    pub cmaddpg: CmaddpgHyper,
    pub scheme: SchemeSpec,
    /// Weak team and agent; derived from the initial speeds when absent.
    pub roles: Option<RoleAssignment>,
    pub incentive_window: usize,
    /// Planned length of the run, used for the default exploration constant.
    pub planned_episodes: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            env: EnvConfig::default(),
            algorithm: Algorithm::Cmaddpg,
            train: TrainHyper::default(),
            cmaddpg: CmaddpgHyper::default(),
            scheme: SchemeSpec::none(),
            roles: None,
            incentive_window: 1000,
            planned_episodes: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        self.cmaddpg.validate()?;
        self.scheme.validate()?;
        if self.incentive_window == 0 {
            return Err(Error::config("incentive.window", "must be positive"));
        }
        Ok(())
    }

    pub fn exploration_c(&self) -> f64 {
        self.cmaddpg
            .exploration_c
            .unwrap_or_else(|| (self.planned_episodes as f64 / 5.0).max(1.0))
    }

    pub fn roles(&self) -> RoleAssignment {
        self.roles
            .unwrap_or_else(|| RoleAssignment::from_speeds(&self.env.initial_max_speeds))
    }
}

/// Hooks for instrumenting a run.
pub trait TrainObserver {
    /// A transition was stored under lifetime serial `serial`.
    fn transition(&mut self, _serial: u64, _t: &Transition) {}
    /// Agent `agent`'s policies were updated on the batch with ids `batch_ids`.
    fn policy_update(&mut self, _agent: usize, _batch_ids: &[u64], _step: &EnsembleStep) {}
}

impl TrainObserver for () {}

type LabelledView = ([f64; STATE_DIM], PolicyLabel);

/// Complete state of a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub(crate) config: TrainConfig,
    pub(crate) agents: Vec<EnsembleAgent>,
    pub(crate) controllers: Vec<ControllerNet>,
    pub(crate) replay: ReplayBuffer<Transition>,
    pub(crate) pending: [VecDeque<LabelledView>; 2],
    pub(crate) incentive: IncentiveState,
    pub(crate) rl_policy: Option<RlPolicy>,
    pub(crate) speeds: [f64; N_AGENTS],
    pub(crate) noise_std: f64,
    pub(crate) episode: u64,
    pub(crate) total_steps: u64,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) log: MetricsLog,
}

impl Trainer {
    pub fn new(config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ensemble = config.algorithm == Algorithm::Cmaddpg;
        let mut agents = Vec::with_capacity(N_AGENTS);
        for _ in 0..N_AGENTS {
            agents.push(EnsembleAgent::new(&config.train, ensemble, &mut rng)?);
        }
        let mut controllers = Vec::new();
        if ensemble {
            for _ in 0..2 {
                controllers.push(ControllerNet::new(
                    &config.cmaddpg.controller_hidden,
                    config.cmaddpg.controller_lr,
                    &mut rng,
                )?);
            }
        }
        let incentive = IncentiveState::new(config.scheme, config.roles(), config.incentive_window)?;
        Ok(Trainer {
            replay: ReplayBuffer::new(config.train.buffer_capacity),
            pending: Default::default(),
            incentive,
            rl_policy: None,
            speeds: config.env.initial_max_speeds,
            noise_std: config.train.noise_std,
            episode: 0,
            total_steps: 0,
            rng,
            log: MetricsLog::new(),
            agents,
            controllers,
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn agents(&self) -> &[EnsembleAgent] {
        &self.agents
    }

    pub fn controllers(&self) -> &[ControllerNet] {
        &self.controllers
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn into_log(self) -> MetricsLog {
        self.log
    }

    /// Completed episodes.
    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn speeds(&self) -> [f64; N_AGENTS] {
        self.speeds
    }

    pub fn roles(&self) -> RoleAssignment {
        self.incentive.roles
    }

    pub fn replay(&self) -> &ReplayBuffer<Transition> {
        &self.replay
    }

    pub fn incentive(&self) -> &IncentiveState {
        &self.incentive
    }

    /// Holds the externally controlled incentive multiplier at `alpha`.
    pub fn set_rl_alpha(&mut self, alpha: f64) -> Result<()> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Input(format!("incentive multiplier must be non-negative, got {alpha}")));
        }
        self.incentive.rl_alpha = alpha;
        Ok(())
    }

    /// Attaches a frozen incentive policy that picks the multiplier at the
    /// start of every block of `policy.period` episodes.
    pub fn attach_rl_policy(&mut self, policy: RlPolicy) -> Result<()> {
        if self.config.scheme.rl_target().is_none() {
            return Err(Error::Input(format!(
                "scheme {} has no learned incentive",
                self.config.scheme
            )));
        }
        self.rl_policy = Some(policy);
        Ok(())
    }

    pub fn run(&mut self, episodes: u64) -> Result<()> {
        self.run_observed(episodes, &mut ())
    }

    pub fn run_observed(&mut self, episodes: u64, observer: &mut dyn TrainObserver) -> Result<()> {
        for _ in 0..episodes {
            let episode = self.episode + 1;
            self.run_episode(observer).map_err(|e| Error::Training {
                episode,
                source: Box::new(e),
            })?;
        }
        Ok(())
    }

    fn team_labels(&self, state: &crate::env::WorldState) -> Result<[PolicyLabel; 2]> {
        if self.controllers.is_empty() {
            return Ok([PolicyLabel::Winning; 2]);
        }
        Ok([
            self.controllers[0].select(&team_view(state, 0))?,
            self.controllers[1].select(&team_view(state, 1))?,
        ])
    }

    fn run_episode(&mut self, observer: &mut dyn TrainObserver) -> Result<()> {
        let ep = self.episode + 1;
        if let Some(policy) = &self.rl_policy {
            if (ep - 1) % policy.period == 0 {
                self.incentive.rl_alpha = policy.alpha(&self.speeds, self.config.env.max_speed_limit)?;
            }
        }
        let params = self.incentive.begin_episode(&self.speeds)?;
        let env = self.config.env.clone();
        let ensemble = self.config.algorithm == Algorithm::Cmaddpg;
        let explore_p = if ensemble {
            exploration_probability(ep, self.config.exploration_c())
        } else {
            0.0
        };

        let mut state = reset_with_speeds(&env, &self.speeds, &mut self.rng)?;
        state.episode_index = ep;
        let mut returns = [0.0; N_AGENTS];
        let mut collisions = 0u64;
        let mut used: Vec<[PolicyLabel; 2]> = Vec::with_capacity(env.max_episode_len);
        let scorer = loop {
            let team_labels = self.team_labels(&state)?;
            let obs: [_; N_AGENTS] = std::array::from_fn(|i| observe(&state, i));
            let mut actions = [[0.0; 2]; N_AGENTS];
            for i in 0..N_AGENTS {
                let explore = ensemble && self.rng.random::<f64>() < explore_p;
                actions[i] = if explore {
                    self.random_action()
                } else {
                    let policy = self.agents[i].policy(team_labels[team_of(i)]);
                    act(&policy.net, &obs[i], self.noise_std, &mut self.rng)?
                };
            }
            let (next, out) = step(&state, &actions, &env)?;

            let mut rewards = out.shaping;
            if let Some(s) = out.scorer {
                for (r, t) in rewards.iter_mut().zip(self.incentive.terminal_rewards(s, env.r_l)) {
                    *r += t;
                }
            }
            let gs = global_state(&state);
            let x = critic_input(&gs, &actions);
            let mut q = [0.0; N_AGENTS];
            for (i, qi) in q.iter_mut().enumerate() {
                *qi = self.agents[i].critic.net.forward(&x)?[0];
            }
            let labels = label_teams(&q);
            let t = Transition {
                obs,
                state: gs,
                labels,
                actions,
                rewards,
                next_obs: std::array::from_fn(|i| observe(&next, i)),
                next_state: global_state(&next),
                done: out.done,
            };
            if ensemble {
                let cap = self.config.cmaddpg.controller_window;
                for (k, pending) in self.pending.iter_mut().enumerate() {
                    if pending.len() == cap {
                        pending.pop_front();
                    }
                    pending.push_back((team_view(&state, k), labels[team_members(k)[0]]));
                }
                used.push(team_labels);
            } else {
                used.push([labels[0], labels[2]]);
            }
            observer.transition(self.replay.total_pushed(), &t);
            self.replay.push(t);

            for (acc, r) in returns.iter_mut().zip(rewards) {
                *acc += r;
            }
            collisions += out.collisions.len() as u64;
            self.total_steps += 1;
            let hyper = &self.config.train;
            if self.replay.len() >= hyper.warmup.max(hyper.batch)
                && self.total_steps % hyper.update_every as u64 == 0
            {
                self.update(observer)?;
            }
            state = next;
            if out.done {
                break out.scorer;
            }
        };

        self.speeds = state.max_speeds();
        self.incentive.end_episode(scorer);
        let hyper = &self.config.train;
        self.noise_std = (self.noise_std * hyper.noise_decay).max(hyper.noise_floor.min(hyper.noise_std));
        if ensemble && ep % self.config.cmaddpg.controller_interval == 0 {
            let (batch, passes) = (self.config.cmaddpg.controller_batch, self.config.cmaddpg.controller_passes);
            for k in 0..2 {
                let pairs: Vec<LabelledView> = self.pending[k].drain(..).collect();
                controller_update(&mut self.controllers[k], &pairs, batch, passes, &mut self.rng)?;
            }
        }
        self.episode = ep;
        let team_reward = std::array::from_fn(|k| {
            let [a, b] = team_members(k);
            (returns[a] + returns[b]) / 2.0
        });
        self.log.push(EpisodeRecord {
            episode: ep,
            team_reward,
            landmark: std::array::from_fn(|i| u8::from(scorer == Some(i))),
            winpol: win_policy_usage(&used),
            speeds: self.speeds,
            incentive_team: params.alpha_team,
            incentive_agent: params.alpha_agent,
            collisions,
        });
        Ok(())
    }

    fn random_action(&mut self) -> Action {
        std::array::from_fn(|_| {
            let base: f64 = self.rng.random_range(-1.0..=1.0);
            let noise = if self.noise_std > 0.0 {
                self.noise_std * self.rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            (base + noise).clamp(-1.0, 1.0)
        })
    }

    /// Next-state actions of the target policies, chosen per sample by each
    /// team's controller.
    fn next_actions(&self, batch: &Batch) -> Result<[Matrix; N_AGENTS]> {
        let mut out: [Matrix; N_AGENTS] = std::array::from_fn(|_| Matrix::zeros(0, 0));
        for k in 0..2 {
            let choice = if self.controllers.is_empty() {
                None
            } else {
                let mut views = Matrix::zeros(batch.len(), STATE_DIM);
                for r in 0..batch.len() {
                    let g: [f64; STATE_DIM] = batch.next_state.row(r).try_into().expect("state width");
                    views.row_mut(r).copy_from_slice(&team_view_of_global(&g, k));
                }
                Some(self.controllers[k].select_batch(&views)?)
            };
            for i in team_members(k) {
                let agent = &self.agents[i];
                let win = agent.policy(PolicyLabel::Winning).target.forward_batch(&batch.next_obs[i])?;
                out[i] = match &choice {
                    Some(labels) if agent.is_ensemble() => {
                        let lose = agent.policy(PolicyLabel::Losing).target.forward_batch(&batch.next_obs[i])?;
                        let mut m = win;
                        for (r, l) in labels.iter().enumerate() {
                            if *l == PolicyLabel::Losing {
                                m.row_mut(r).copy_from_slice(lose.row(r));
                            }
                        }
                        m
                    }
                    _ => win,
                };
            }
        }
        Ok(out)
    }

    fn update(&mut self, observer: &mut dyn TrainObserver) -> Result<()> {
        let hyper = self.config.train.clone();
        let slots = self
            .replay
            .sample_slots(hyper.batch, &mut self.rng)
            .ok_or_else(|| Error::State("replay buffer not ready".into()))?;
        let ts: Vec<&Transition> = slots.iter().map(|&s| self.replay.get(s)).collect();
        let ids = slots.iter().map(|&s| self.replay.serial(s)).collect();
        let batch = Batch::from_transitions(&ts, ids)?;
        let next = self.next_actions(&batch)?;
        let targets: [&crate::nn::Mlp; N_AGENTS] = std::array::from_fn(|i| &self.agents[i].critic.target);
        let ys = critic_targets(targets, &batch, &next, hyper.gamma)?;
        for (agent, y) in self.agents.iter_mut().zip(&ys) {
            critic_update(&mut agent.critic, &batch.critic_inputs, y)?;
        }
        for (i, agent) in self.agents.iter_mut().enumerate() {
            let step = ensemble_policy_update(agent, i, &batch)?;
            observer.policy_update(i, &batch.ids, &step);
        }
        for agent in &mut self.agents {
            agent.soft_update(hyper.polyak)?;
        }
        Ok(())
    }
}

/// Trains a fresh run for `episodes` episodes from `seed`.
pub fn train(config: TrainConfig, episodes: u64, seed: u64) -> Result<Trainer> {
    let mut trainer = Trainer::new(config, seed)?;
    trainer.run(episodes)?;
    Ok(trainer)
}
