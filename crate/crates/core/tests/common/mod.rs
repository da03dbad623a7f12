//! Shared helpers for the integration and acceptance tests: independent
//! finite-difference oracles and small run configurations.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tmlab::cmaddpg::{controller_loss_grad, ControllerNet, CONTROLLER_HIDDEN};
use tmlab::env::{N_AGENTS, OBS_DIM, STATE_DIM};
use tmlab::incentive_rl::{sac_policy_loss_grad, SacAgent, SacConfig, SAC_OBS_DIM};
use tmlab::maddpg::{actor_objective_grad, critic_loss_grad, new_actor, new_critic, CRITIC_INPUT_DIM};
use tmlab::nn::{Matrix, Mlp};
use tmlab::train::{Algorithm, TrainConfig};
use tmlab::PolicyLabel;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor per unit of loss magnitude at step `FD_STEP`: central
/// differences of a loss `L` carry rounding noise of order `ε |L| / h`, so
/// derivatives below `FD_FLOOR (1 + |L|)` cannot be resolved to the
/// tolerance and are compared against the floor instead.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Central difference of `f` with step `FD_STEP`. When the estimates at a
/// step and at a tenth of it disagree, a ReLU kink lies within the step of
/// the point, and the step is refined (at most three times) until two
/// successive estimates agree. Returns the estimate, the floor matching its
/// step, and whether refinement happened.
fn central_difference(f: &dyn Fn(f64) -> f64, floor: f64) -> (f64, f64, bool) {
    let at = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    let mut h = FD_STEP;
    let mut current = at(h);
    for refinement in 0..3 {
        let finer = at(h / 10.0);
        let finer_floor = floor * FD_STEP / (h / 10.0);
        if rel_err(current, finer, finer_floor) <= FD_TOLERANCE {
            return (current, floor * FD_STEP / h, refinement > 0);
        }
        h /= 10.0;
        current = finer;
    }
    (current, floor * FD_STEP / h, true)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FdReport {
    pub worst: f64,
    pub checks: usize,
    /// Checks that fell back to the finer step because of a kink.
    pub kinks: usize,
}

impl FdReport {
    pub fn merge(self, other: FdReport) -> FdReport {
        FdReport {
            worst: self.worst.max(other.worst),
            checks: self.checks + other.checks,
            kinks: self.kinks + other.kinks,
        }
    }
}

/// Compares `analytic` (gradient of `loss` with respect to the parameters of
/// `net`) with central differences over `coords` random coordinates (all of
/// them when `coords` is `None`) and `directions` random directional
/// derivatives.
pub fn fd_check(
    net: &Mlp,
    analytic: &[f64],
    loss: &dyn Fn(&Mlp) -> f64,
    coords: Option<usize>,
    directions: usize,
    rng: &mut ChaCha8Rng,
) -> FdReport {
    let n = net.params().len();
    assert_eq!(analytic.len(), n);
    let floor = FD_FLOOR * (1.0 + loss(net).abs());
    let mut report = FdReport::default();
    let mut record = |exact: f64, (numeric, floor, kink): (f64, f64, bool)| {
        report.worst = report.worst.max(rel_err(exact, numeric, floor));
        report.checks += 1;
        report.kinks += usize::from(kink);
    };
    let picks: Vec<usize> = match coords {
        None => (0..n).collect(),
        Some(k) => (0..k).map(|_| rng.random_range(0..n)).collect(),
    };
    for k in picks {
        let shifted = |h: f64| {
            let mut p = net.clone();
            p.params_mut()[k] += h;
            loss(&p)
        };
        record(analytic[k], central_difference(&shifted, floor));
    }
    for _ in 0..directions {
        let v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let v: Vec<f64> = v.iter().map(|x| x / norm).collect();
        let shifted = |h: f64| {
            let mut p = net.clone();
            for (w, d) in p.params_mut().iter_mut().zip(&v) {
                *w += h * d;
            }
            loss(&p)
        };
        let exact: f64 = analytic.iter().zip(&v).map(|(g, d)| g * d).sum();
        record(exact, central_difference(&shifted, floor));
    }
    report
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Network families checked by the gradient oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetClass {
    Actor,
    Critic,
    Controller,
    SacPolicy,
    SacQ,
}

impl NetClass {
    pub const ALL: [NetClass; 5] = [
        NetClass::Actor,
        NetClass::Critic,
        NetClass::Controller,
        NetClass::SacPolicy,
        NetClass::SacQ,
    ];
}

/// One random draw of parameters and inputs for `class` with the given hidden
/// sizes.
pub fn gradient_draw(class: NetClass, hidden: &[usize], coords: Option<usize>, seed: u64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = 6;
    match class {
        NetClass::Actor => {
            let actor = new_actor(hidden, 1e-3, &mut rng).unwrap().net;
            let critic = new_critic(hidden, 1e-3, &mut rng).unwrap().net;
            let agent = rng.random_range(0..N_AGENTS);
            let obs = random_matrix(batch, OBS_DIM, 2.0, &mut rng);
            let inputs = random_matrix(batch, CRITIC_INPUT_DIM, 1.0, &mut rng);
            let (_, g) = actor_objective_grad(&actor, &critic, agent, &obs, &inputs).unwrap();
            // the returned gradient descends the negated objective
            let loss = |a: &Mlp| -actor_objective_grad(a, &critic, agent, &obs, &inputs).unwrap().0;
            fd_check(&actor, g.as_slice(), &loss, coords, 3, &mut rng)
        }
        NetClass::Critic => {
            let critic = new_critic(hidden, 1e-3, &mut rng).unwrap().net;
            let inputs = random_matrix(batch, CRITIC_INPUT_DIM, 1.0, &mut rng);
            let y: Vec<f64> = (0..batch).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (_, g) = critic_loss_grad(&critic, &inputs, &y).unwrap();
            let loss = |c: &Mlp| critic_loss_grad(c, &inputs, &y).unwrap().0;
            fd_check(&critic, g.as_slice(), &loss, coords, 3, &mut rng)
        }
        NetClass::Controller => {
            let net = ControllerNet::new(hidden, 1e-3, &mut rng).unwrap().net;
            let views = random_matrix(batch, STATE_DIM, 1.0, &mut rng);
            let labels: Vec<PolicyLabel> = (0..batch)
                .map(|_| if rng.random::<bool>() { PolicyLabel::Winning } else { PolicyLabel::Losing })
                .collect();
            let (_, g) = controller_loss_grad(&net, &views, &labels).unwrap();
            let loss = |c: &Mlp| controller_loss_grad(c, &views, &labels).unwrap().0;
            fd_check(&net, g.as_slice(), &loss, coords, 3, &mut rng)
        }
        NetClass::SacPolicy | NetClass::SacQ => {
            let config = SacConfig {
                hidden: hidden.to_vec(),
                ..SacConfig::default()
            };
            let agent = SacAgent::new(&config, 2.0, &mut rng).unwrap();
            let states: Vec<[f64; SAC_OBS_DIM]> =
                (0..batch).map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0))).collect();
            if class == NetClass::SacPolicy {
                let noise: Vec<f64> = (0..batch).map(|_| rng.sample(StandardNormal)).collect();
                let q = [&agent.q[0].net, &agent.q[1].net];
                let (_, g) = sac_policy_loss_grad(&agent.policy, q, &states, &noise, config.temperature).unwrap();
                let loss = |p: &Mlp| sac_policy_loss_grad(p, q, &states, &noise, config.temperature).unwrap().0;
                fd_check(&agent.policy, g.as_slice(), &loss, coords, 3, &mut rng)
            } else {
                let inputs = random_matrix(batch, SAC_OBS_DIM + 1, 1.0, &mut rng);
                let y: Vec<f64> = (0..batch).map(|_| rng.random_range(-1.0..1.0)).collect();
                let q = &agent.q[rng.random_range(0..2)].net;
                let (_, g) = critic_loss_grad(q, &inputs, &y).unwrap();
                let loss = |c: &Mlp| critic_loss_grad(c, &inputs, &y).unwrap().0;
                fd_check(q, g.as_slice(), &loss, coords, 3, &mut rng)
            }
        }
    }
}

/// Hidden sizes each class uses in training.
pub fn production_hidden(class: NetClass) -> Vec<usize> {
    match class {
        NetClass::Controller => CONTROLLER_HIDDEN.to_vec(),
        _ => vec![64, 64],
    }
}

/// All `draws` draws at production sizes, checking 24 random coordinates and
/// 3 directions per draw.
pub fn gradient_suite(class: NetClass, draws: u64) -> FdReport {
    let hidden = production_hidden(class);
    (0..draws)
        .map(|d| gradient_draw(class, &hidden, Some(24), 1000 * d + class as u64))
        .fold(FdReport::default(), FdReport::merge)
}

/// Brute-force team labels: team k wins when its best critic value is
/// strictly above the other team's.
pub fn label_oracle(q: &[f64; N_AGENTS]) -> [PolicyLabel; N_AGENTS] {
    let best0 = if q[0] > q[1] { q[0] } else { q[1] };
    let best1 = if q[2] > q[3] { q[2] } else { q[3] };
    let team = |k: usize| {
        let (mine, theirs) = if k == 0 { (best0, best1) } else { (best1, best0) };
        if mine > theirs {
            PolicyLabel::Winning
        } else {
            PolicyLabel::Losing
        }
    };
    [team(0), team(0), team(1), team(1)]
}

/// A configuration small enough to train thousands of episodes in tests.
pub fn desk_config(algorithm: Algorithm, speeds: [f64; N_AGENTS]) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.algorithm = algorithm;
    c.env.initial_max_speeds = speeds;
    c.train.hidden = vec![64, 64];
    c.train.batch = 64;
    c.train.update_every = 4;
    c.train.lr_actor = 1e-3;
    c.train.lr_critic = 1e-3;
    c.train.noise_decay = 0.999;
    c.train.warmup = 1000;
    c.train.buffer_capacity = 100_000;
    c
}

/// Tiny networks for quick plumbing tests.
pub fn tiny_config(algorithm: Algorithm) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.algorithm = algorithm;
    c.train.hidden = vec![16];
    c.train.batch = 16;
    c.train.update_every = 2;
    c.train.warmup = 32;
    c.cmaddpg.controller_hidden = vec![8];
    c.cmaddpg.controller_interval = 3;
    c.cmaddpg.controller_batch = 32;
    c.cmaddpg.controller_passes = 2;
    c
}

/// Plays `episodes` episodes of uniformly random actions with speed caps
/// carried across episodes, checking the environment invariants on every
/// step. Returns the number of steps checked.
pub fn check_env_invariants(env: &tmlab::env::EnvConfig, episodes: usize, seed: u64) -> Result<usize, String> {
    use tmlab::env::{reset_with_speeds, step, team_of};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut speeds = env.initial_max_speeds;
    let mut steps = 0;
    for ep in 0..episodes {
        let mut state = reset_with_speeds(env, &speeds, &mut rng).map_err(|e| e.to_string())?;
        loop {
            let actions: [[f64; 2]; N_AGENTS] =
                std::array::from_fn(|_| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]);
            let (next, out) = step(&state, &actions, env).map_err(|e| e.to_string())?;
            let (again, out_again) = step(&state, &actions, env).map_err(|e| e.to_string())?;
            if again != next || out_again != out {
                return Err(format!("episode {ep}: step is not deterministic"));
            }
            steps += 1;
            for (i, a) in next.agents.iter().enumerate() {
                if a.vel.norm() > a.max_speed * (1.0 + 1e-12) {
                    return Err(format!("episode {ep}: agent {i} speed {} above cap {}", a.vel.norm(), a.max_speed));
                }
                if a.max_speed > env.max_speed_limit {
                    return Err(format!("episode {ep}: agent {i} cap {} above limit", a.max_speed));
                }
                let before = state.agents[i].max_speed;
                let scored = out.scorer == Some(i);
                let grew = a.max_speed > before;
                if a.max_speed < before || (grew && !scored) || (scored && before < env.max_speed_limit && !grew) {
                    return Err(format!("episode {ep}: agent {i} cap {before} -> {} (scored {scored})", a.max_speed));
                }
            }
            let terminal: Vec<f64> = (0..N_AGENTS).map(|i| out.rewards[i] - out.shaping[i]).collect();
            match out.scorer {
                Some(s) => {
                    let sum: f64 = terminal.iter().sum();
                    if sum.abs() > 1e-9 {
                        return Err(format!("episode {ep}: terminal rewards sum to {sum}"));
                    }
                    for (i, t) in terminal.iter().enumerate() {
                        let expected = if team_of(i) == team_of(s) { env.r_l } else { -env.r_l };
                        if (t - expected).abs() > 1e-9 {
                            return Err(format!("episode {ep}: terminal reward {t} for agent {i}, scorer {s}"));
                        }
                    }
                }
                None => {
                    if terminal.iter().any(|t| t.abs() > 1e-9) {
                        return Err(format!("episode {ep}: terminal reward without a scorer"));
                    }
                }
            }
            let should_end = out.scorer.is_some() || next.step_index >= env.max_episode_len;
            if out.done != should_end || next.done != out.done {
                return Err(format!("episode {ep}: done {} at step {}", out.done, next.step_index));
            }
            state = next;
            if out.done {
                if step(&state, &actions, env).is_ok() {
                    return Err(format!("episode {ep}: step accepted after done"));
                }
                break;
            }
        }
        speeds = state.max_speeds();
    }
    Ok(steps)
}

/// Records every stored transition's labels and checks each policy update
/// against them: the two policies' consumed samples must partition the batch,
/// and each sample must go to the policy matching its stored label.
#[derive(Default)]
pub struct PartitionAudit {
    pub labels: std::collections::HashMap<u64, [PolicyLabel; N_AGENTS]>,
    pub updates: usize,
    pub consumed: [usize; 2],
    pub violations: Vec<String>,
    pub transitions: usize,
}

impl tmlab::train::TrainObserver for PartitionAudit {
    fn transition(&mut self, serial: u64, t: &tmlab::replay::Transition) {
        self.transitions += 1;
        if t.labels[0] != t.labels[1] || t.labels[2] != t.labels[3] {
            self.violations.push(format!("transition {serial}: teammates disagree {:?}", t.labels));
        }
        if t.labels[0] == PolicyLabel::Winning && t.labels[2] == PolicyLabel::Winning {
            self.violations.push(format!("transition {serial}: both teams winning"));
        }
        self.labels.insert(serial, t.labels);
    }

    fn policy_update(&mut self, agent: usize, batch_ids: &[u64], step: &tmlab::cmaddpg::EnsembleStep) {
        self.updates += 1;
        let mut all: Vec<u64> = step.consumed.iter().flatten().copied().collect();
        let mut batch = batch_ids.to_vec();
        all.sort_unstable();
        batch.sort_unstable();
        if all != batch {
            self.violations.push(format!("agent {agent}: consumed samples do not partition the batch"));
        }
        for (j, ids) in step.consumed.iter().enumerate() {
            self.consumed[j] += ids.len();
            for id in ids {
                match self.labels.get(id) {
                    Some(l) if l[agent].index() == j => {}
                    Some(l) => self.violations.push(format!("agent {agent}: sample {id} labelled {:?} used by policy {j}", l[agent])),
                    None => self.violations.push(format!("agent {agent}: sample {id} was never stored")),
                }
            }
        }
    }
}
