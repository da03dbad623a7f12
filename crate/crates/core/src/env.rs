//! The Touch-Mark game: two teams of two particles race to touch one of two
//! landmarks. The first touch ends the episode; the toucher's team collects
//! `+r_l`, the opponents `-r_l`, and the toucher's speed cap rises toward the
//! global limit.
//!
//! Agents 0 and 1 form team 0, agents 2 and 3 team 1.

use std::ops::{Add, Mul, Sub};

use rand::Rng;

use crate::error::{Error, Result};

pub const N_AGENTS: usize = 4;
pub const N_LANDMARKS: usize = 2;
pub const ACTION_DIM: usize = 2;
pub const OBS_DIM: usize = 15;
pub const STATE_DIM: usize = 20;

pub type Action = [f64; ACTION_DIM];
pub type JointAction = [Action; N_AGENTS];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self - other).norm()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

pub fn team_of(agent: usize) -> usize {
    agent / 2
}

pub fn teammate(agent: usize) -> usize {
    agent ^ 1
}

pub fn team_members(team: usize) -> [usize; 2] {
    [2 * team, 2 * team + 1]
}

/// The other three agents seen from `agent`: teammate first, then the two
/// opponents in id order. The ordering is the same for both teams, so a
/// network trained in one team slot can play in the other.
pub fn others(agent: usize) -> [usize; 3] {
    let opp = team_members(1 - team_of(agent));
    [teammate(agent), opp[0], opp[1]]
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub board_half_extent: f64,
    pub dt: f64,
    pub damping: f64,
    pub accel_scale: f64,
    pub agent_radius: f64,
    pub contact_stiffness: f64,
    pub r_l: f64,
    pub distance_penalty_scale: f64,
    pub boundary_penalty: f64,
    pub touch_radius: f64,
    /// Global speed limit (`MAX_SPEED`).
    pub max_speed_limit: f64,
    pub skill_rate: f64,
    pub max_episode_len: usize,
    pub initial_max_speeds: [f64; N_AGENTS],
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            board_half_extent: 1.5,
            dt: 0.1,
            damping: 0.25,
            accel_scale: 5.0,
            agent_radius: 0.05,
            contact_stiffness: 100.0,
            r_l: 30.0,
            distance_penalty_scale: 0.1,
            boundary_penalty: 1.0,
            touch_radius: 0.1,
            max_speed_limit: 5.0,
            skill_rate: 0.01,
            max_episode_len: 50,
            initial_max_speeds: [4.0; N_AGENTS],
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("env.board_half_extent", self.board_half_extent),
            ("env.dt", self.dt),
            ("env.damping", self.damping),
            ("env.accel_scale", self.accel_scale),
            ("env.agent_radius", self.agent_radius),
            ("env.contact_stiffness", self.contact_stiffness),
            ("env.r_l", self.r_l),
            ("env.distance_penalty_scale", self.distance_penalty_scale),
            ("env.boundary_penalty", self.boundary_penalty),
            ("env.touch_radius", self.touch_radius),
            ("env.max_speed_limit", self.max_speed_limit),
            ("env.skill_rate", self.skill_rate),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        if self.damping >= 1.0 {
            return Err(Error::config("env.damping", "must be below 1"));
        }
        if self.skill_rate > 1.0 {
            return Err(Error::config("env.skill_rate", "must not exceed 1"));
        }
        if self.touch_radius >= self.board_half_extent {
            return Err(Error::config(
                "env.touch_radius",
                "must be smaller than the board half extent",
            ));
        }
        if self.max_episode_len == 0 {
            return Err(Error::config("env.max_episode_len", "must be positive"));
        }
        validate_speeds(self, &self.initial_max_speeds)
            .map_err(|e| Error::config("env.initial_max_speeds", e.to_string()))
    }
}

fn validate_speeds(config: &EnvConfig, speeds: &[f64; N_AGENTS]) -> Result<()> {
    for &s in speeds {
        if !(s > 0.0 && s <= config.max_speed_limit) {
            return Err(Error::Input(format!(
                "max speed {s} outside (0, {}]",
                config.max_speed_limit
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: usize,
    pub team: usize,
    pub pos: Vec2,
    pub vel: Vec2,
    pub max_speed: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub agents: [AgentState; N_AGENTS],
    pub landmarks: [Vec2; N_LANDMARKS],
    pub step_index: usize,
    pub episode_index: u64,
    pub done: bool,
}

/// Starting positions of one episode, before velocities and speed caps are
/// attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialConfig {
    pub agent_pos: [Vec2; N_AGENTS],
    pub landmarks: [Vec2; N_LANDMARKS],
}

impl InitialConfig {
    pub fn sample<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> Self {
        let h = config.board_half_extent;
        let mut point = || Vec2::new(rng.random_range(-h..=h), rng.random_range(-h..=h));
        let agent_pos = [point(), point(), point(), point()];
        let landmarks = [point(), point()];
        InitialConfig {
            agent_pos,
            landmarks,
        }
    }

    /// Same landmarks, with the two teams' starting positions exchanged.
    pub fn swapped(&self) -> Self {
        let p = self.agent_pos;
        InitialConfig {
            agent_pos: [p[2], p[3], p[0], p[1]],
            landmarks: self.landmarks,
        }
    }
}

impl WorldState {
    pub fn from_initial(
        config: &EnvConfig,
        init: &InitialConfig,
        speeds: &[f64; N_AGENTS],
    ) -> Result<Self> {
        validate_speeds(config, speeds)?;
        let agents = std::array::from_fn(|i| AgentState {
            id: i,
            team: team_of(i),
            pos: init.agent_pos[i],
            vel: Vec2::ZERO,
            max_speed: speeds[i],
            radius: config.agent_radius,
        });
        Ok(WorldState {
            agents,
            landmarks: init.landmarks,
            step_index: 0,
            episode_index: 0,
            done: false,
        })
    }

    pub fn max_speeds(&self) -> [f64; N_AGENTS] {
        std::array::from_fn(|i| self.agents[i].max_speed)
    }
}

pub fn reset<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> WorldState {
    reset_with_speeds(config, &config.initial_max_speeds, rng)
        .expect("configured initial speeds are validated with the config")
}

/// Fresh episode with speed caps carried over from earlier episodes.
pub fn reset_with_speeds<R: Rng + ?Sized>(
    config: &EnvConfig,
    speeds: &[f64; N_AGENTS],
    rng: &mut R,
) -> Result<WorldState> {
    let init = InitialConfig::sample(config, rng);
    WorldState::from_initial(config, &init, speeds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Distance and boundary penalties plus the plain `±r_l` terminal reward.
    pub rewards: [f64; N_AGENTS],
    /// The per-step penalties alone, without any terminal reward.
    pub shaping: [f64; N_AGENTS],
    pub scorer: Option<usize>,
    /// Cross-team contacts, as `(lower id, higher id)`.
    pub collisions: Vec<(usize, usize)>,
    pub done: bool,
    pub boundary_violations: Vec<usize>,
}

pub fn nearest_landmark_distance(state: &WorldState, agent: usize) -> f64 {
    let p = state.agents[agent].pos;
    state
        .landmarks
        .iter()
        .map(|&l| p.dist(l))
        .fold(f64::INFINITY, f64::min)
}

/// The plain zero-sum terminal reward for a touch by `scorer`.
pub fn base_terminal_rewards(scorer: usize, r_l: f64) -> [f64; N_AGENTS] {
    std::array::from_fn(|i| {
        if team_of(i) == team_of(scorer) {
            r_l
        } else {
            -r_l
        }
    })
}

pub fn skill_update(max_speed: f64, config: &EnvConfig) -> f64 {
    max_speed + config.skill_rate * (config.max_speed_limit - max_speed)
}

pub fn step(
    state: &WorldState,
    actions: &JointAction,
    config: &EnvConfig,
) -> Result<(WorldState, StepOutcome)> {
    if state.done {
        return Err(Error::State("step called on a finished episode".into()));
    }
    for (i, a) in actions.iter().enumerate() {
        if a.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Input(format!(
                "action of agent {i} outside [-1, 1]: {a:?}"
            )));
        }
    }

    let mut next = state.clone();
    let mut collisions = Vec::new();
    for i in 0..N_AGENTS {
        for j in (i + 1)..N_AGENTS {
            let a = &state.agents[i];
            let b = &state.agents[j];
            if a.pos.dist(b.pos) < a.radius + b.radius && team_of(i) != team_of(j) {
                collisions.push((i, j));
            }
        }
    }

    for i in 0..N_AGENTS {
        let me = &state.agents[i];
        // Accumulate contact forces in the team-relative order so that the
        // two team slots are computed identically.
        let mut force = Vec2::ZERO;
        for j in others(i) {
            let other = &state.agents[j];
            let delta = me.pos - other.pos;
            let d = delta.norm();
            let reach = me.radius + other.radius;
            if d < reach && d > 0.0 {
                force = force + delta * (config.contact_stiffness * (reach - d) / d);
            }
        }
        let accel = Vec2::new(actions[i][0], actions[i][1]) * config.accel_scale + force;
        let mut vel = me.vel * (1.0 - config.damping) + accel * config.dt;
        let speed = vel.norm();
        if speed > me.max_speed {
            vel = vel * (me.max_speed / speed);
        }
        let agent = &mut next.agents[i];
        agent.vel = vel;
        agent.pos = me.pos + vel * config.dt;
    }
    next.step_index += 1;

    let h = config.board_half_extent;
    let mut shaping = [0.0; N_AGENTS];
    let mut boundary_violations = Vec::new();
    let mut scorer: Option<(usize, f64)> = None;
    for i in 0..N_AGENTS {
        let d = nearest_landmark_distance(&next, i);
        shaping[i] = -config.distance_penalty_scale * d;
        let p = next.agents[i].pos;
        if p.x.abs() > h || p.y.abs() > h {
            shaping[i] -= config.boundary_penalty;
            boundary_violations.push(i);
        }
        if d < config.touch_radius && scorer.is_none_or(|(_, best)| d < best) {
            scorer = Some((i, d));
        }
    }
    let scorer = scorer.map(|(i, _)| i);

    let mut rewards = shaping;
    if let Some(s) = scorer {
        for (r, t) in rewards.iter_mut().zip(base_terminal_rewards(s, config.r_l)) {
            *r += t;
        }
        let agent = &mut next.agents[s];
        agent.max_speed = skill_update(agent.max_speed, config);
    }
    next.done = scorer.is_some() || next.step_index >= config.max_episode_len;

    Ok((
        next.clone(),
        StepOutcome {
            rewards,
            shaping,
            scorer,
            collisions,
            done: next.done,
            boundary_violations,
        },
    ))
}

/// Per-agent observation: own position and velocity, landmarks relative to
/// self, the other agents relative to self (teammate first, then opponents
/// by id) and own speed cap.
pub fn observe(state: &WorldState, agent: usize) -> [f64; OBS_DIM] {
    let me = &state.agents[agent];
    let mut o = [0.0; OBS_DIM];
    o[0] = me.pos.x;
    o[1] = me.pos.y;
    o[2] = me.vel.x;
    o[3] = me.vel.y;
    for (k, l) in state.landmarks.iter().enumerate() {
        let r = *l - me.pos;
        o[4 + 2 * k] = r.x;
        o[5 + 2 * k] = r.y;
    }
    for (k, j) in others(agent).into_iter().enumerate() {
        let r = state.agents[j].pos - me.pos;
        o[8 + 2 * k] = r.x;
        o[9 + 2 * k] = r.y;
    }
    o[14] = me.max_speed;
    o
}

/// Global state: every agent's position and velocity in id order, then the
/// two landmark positions.
pub fn global_state(state: &WorldState) -> [f64; STATE_DIM] {
    team_view(state, 0)
}

/// The global state laid out from `team`'s perspective: that team's agents
/// first. Identical to [`global_state`] for team 0.
pub fn team_view(state: &WorldState, team: usize) -> [f64; STATE_DIM] {
    let order = if team == 0 { [0, 1, 2, 3] } else { [2, 3, 0, 1] };
    let mut g = [0.0; STATE_DIM];
    for (k, &i) in order.iter().enumerate() {
        let a = &state.agents[i];
        g[4 * k] = a.pos.x;
        g[4 * k + 1] = a.pos.y;
        g[4 * k + 2] = a.vel.x;
        g[4 * k + 3] = a.vel.y;
    }
    for (k, l) in state.landmarks.iter().enumerate() {
        g[16 + 2 * k] = l.x;
        g[17 + 2 * k] = l.y;
    }
    g
}

/// Reorders a global-state vector (agent id layout) into `team`'s view.
pub fn team_view_of_global(global: &[f64; STATE_DIM], team: usize) -> [f64; STATE_DIM] {
    if team == 0 {
        return *global;
    }
    let mut g = *global;
    g[..8].copy_from_slice(&global[8..16]);
    g[8..16].copy_from_slice(&global[..8]);
    g
}
