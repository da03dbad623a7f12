//! Flat `section.key = value` experiment configuration.

use std::path::{Path, PathBuf};

use crate::env::N_AGENTS;
use crate::error::{Error, Result};
use crate::incentive::{RoleAssignment, SchemeSpec};
use crate::incentive_rl::IncentiveRlConfig;
use crate::train::{Algorithm, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub rl: IncentiveRlConfig,
    pub seeds: Vec<u64>,
    pub episodes: u64,
    pub out_dir: PathBuf,
    /// Episodes between periodic checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    /// Whether checkpoints carry replay contents for exact resumption.
    pub checkpoint_buffers: bool,
    pub eval_configs: usize,
    pub fairness_window: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: TrainConfig::default(),
            rl: IncentiveRlConfig::default(),
            seeds: vec![0],
            episodes: 1000,
            out_dir: PathBuf::from("runs"),
            checkpoint_interval: 0,
            checkpoint_buffers: false,
            eval_configs: 500,
            fairness_window: 1000,
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::config(key, format!("cannot parse `{value}` as {what}"))
}

fn real(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| bad(key, v, "a finite number"))
}

fn count<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, v, "true or false")),
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| bad(key, v, "a comma-separated list")))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Scheme fields are resolved after all keys are read, so that parameter
/// overrides may precede or follow the scheme name.
#[derive(Default)]
struct SchemeKeys {
    name: Option<String>,
    alpha_team: Option<f64>,
    alpha_agent: Option<f64>,
    weak_team: Option<usize>,
    weak_agent: Option<usize>,
}

impl ExperimentConfig {
    /// Defaults for one of the named incentive schemes: a weak fourth agent
    /// and the scheme's own parameters.
    pub fn preset(name: &str) -> Result<Self> {
        let scheme = SchemeSpec::preset(name)
            .ok_or_else(|| Error::config("scheme", format!("unknown scheme `{name}`")))?;
        let mut c = ExperimentConfig::default();
        c.train.scheme = scheme;
        c.train.env.initial_max_speeds = [4.0, 4.0, 4.0, 2.0];
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        c.apply(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies the assignments in `text` on top of the current values.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        let mut scheme = SchemeKeys::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", n + 1), format!("expected `key = value`, found `{line}`"))
            })?;
            self.set(key.trim(), value.trim(), &mut scheme)?;
        }
        self.resolve_scheme(scheme)?;
        self.validate()
    }

    fn resolve_scheme(&mut self, keys: SchemeKeys) -> Result<()> {
        if let Some(name) = &keys.name {
            self.train.scheme = SchemeSpec::preset(name)
                .ok_or_else(|| Error::config("scheme", format!("unknown scheme `{name}`")))?;
        }
        match (&mut self.train.scheme, keys.alpha_team, keys.alpha_agent) {
            (SchemeSpec::StaticTeam { alpha_team }, t, None) => {
                if let Some(t) = t {
                    *alpha_team = t;
                }
            }
            (SchemeSpec::StaticAgent { alpha_team, alpha_agent }, t, a) => {
                if let Some(t) = t {
                    *alpha_team = t;
                }
                if let Some(a) = a {
                    *alpha_agent = a;
                }
            }
            (_, None, None) => {}
            (s, _, _) => {
                let key = if keys.alpha_agent.is_some() { "scheme.alpha_agent" } else { "scheme.alpha_team" };
                return Err(Error::config(key, format!("not a parameter of scheme {}", s.name())));
            }
        }
        match (keys.weak_team, keys.weak_agent) {
            (None, None) => {}
            (Some(t), Some(a)) => {
                self.train.roles =
                    Some(RoleAssignment::new(t, a).map_err(|e| Error::config("roles.weak_agent", e.to_string()))?)
            }
            (None, Some(_)) => return Err(Error::config("roles.weak_team", "must be given with roles.weak_agent")),
            (Some(_), None) => return Err(Error::config("roles.weak_agent", "must be given with roles.weak_team")),
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str, scheme: &mut SchemeKeys) -> Result<()> {
        let env = &mut self.train.env;
        let th = &mut self.train.train;
        let cm = &mut self.train.cmaddpg;
        let sac = &mut self.rl.sac;
        match key {
            "experiment.seeds" => {
                self.seeds = list(key, v)?;
                if self.seeds.is_empty() {
                    return Err(Error::config(key, "needs at least one seed"));
                }
            }
            "experiment.episodes" => self.episodes = count(key, v)?,
            "experiment.out" => self.out_dir = PathBuf::from(v),
            "experiment.checkpoint_interval" => self.checkpoint_interval = count(key, v)?,
            "experiment.checkpoint_buffers" => self.checkpoint_buffers = flag(key, v)?,
            "algorithm" => {
                self.train.algorithm = Algorithm::from_name(v).ok_or_else(|| bad(key, v, "maddpg or cmaddpg"))?
            }
            "scheme" => scheme.name = Some(v.to_string()),
            "scheme.alpha_team" => scheme.alpha_team = Some(real(key, v)?),
            "scheme.alpha_agent" => scheme.alpha_agent = Some(real(key, v)?),
            "roles.weak_team" => scheme.weak_team = Some(count(key, v)?),
            "roles.weak_agent" => scheme.weak_agent = Some(count(key, v)?),
            "env.board_half_extent" => env.board_half_extent = real(key, v)?,
            "env.dt" => env.dt = real(key, v)?,
            "env.damping" => env.damping = real(key, v)?,
            "env.accel_scale" => env.accel_scale = real(key, v)?,
            "env.agent_radius" => env.agent_radius = real(key, v)?,
            "env.contact_stiffness" => env.contact_stiffness = real(key, v)?,
            "env.r_l" => env.r_l = real(key, v)?,
            "env.distance_penalty_scale" => env.distance_penalty_scale = real(key, v)?,
            "env.boundary_penalty" => env.boundary_penalty = real(key, v)?,
            "env.touch_radius" => env.touch_radius = real(key, v)?,
            "env.max_speed_limit" => env.max_speed_limit = real(key, v)?,
            "env.skill_rate" => env.skill_rate = real(key, v)?,
            "env.max_episode_len" => env.max_episode_len = count(key, v)?,
            "env.initial_max_speeds" => {
                let s: Vec<f64> = list(key, v)?;
                env.initial_max_speeds = s
                    .try_into()
                    .map_err(|_| Error::config(key, format!("needs exactly {N_AGENTS} values")))?;
            }
            "train.gamma" => th.gamma = real(key, v)?,
            "train.lr_actor" => th.lr_actor = real(key, v)?,
            "train.lr_critic" => th.lr_critic = real(key, v)?,
            "train.polyak" => th.polyak = real(key, v)?,
            "train.batch" => th.batch = count(key, v)?,
            "train.noise_std" => th.noise_std = real(key, v)?,
            "train.noise_decay" => th.noise_decay = real(key, v)?,
            "train.noise_floor" => th.noise_floor = real(key, v)?,
            "train.hidden" => th.hidden = list(key, v)?,
            "train.buffer_capacity" => th.buffer_capacity = count(key, v)?,
            "train.warmup" => th.warmup = count(key, v)?,
            "train.update_every" => th.update_every = count(key, v)?,
            "train.planned_episodes" => self.train.planned_episodes = count(key, v)?,
            "cmaddpg.exploration_c" => {
                cm.exploration_c = if v == "auto" { None } else { Some(real(key, v)?) }
            }
            "cmaddpg.controller_interval" => cm.controller_interval = count(key, v)?,
            "cmaddpg.controller_lr" => cm.controller_lr = real(key, v)?,
            "cmaddpg.controller_batch" => cm.controller_batch = count(key, v)?,
            "cmaddpg.controller_passes" => cm.controller_passes = count(key, v)?,
            "cmaddpg.controller_window" => cm.controller_window = count(key, v)?,
            "cmaddpg.controller_hidden" => cm.controller_hidden = list(key, v)?,
            "incentive.window" => self.train.incentive_window = count(key, v)?,
            "incentive_rl.period" => self.rl.period = count(key, v)?,
            "incentive_rl.alpha_max" => self.rl.alpha_max = real(key, v)?,
            "incentive_rl.pretrain_episodes" => self.rl.pretrain_episodes = count(key, v)?,
            "sac.hidden" => sac.hidden = list(key, v)?,
            "sac.lr" => sac.lr = real(key, v)?,
            "sac.gamma" => sac.gamma = real(key, v)?,
            "sac.polyak" => sac.polyak = real(key, v)?,
            "sac.batch" => sac.batch = count(key, v)?,
            "sac.temperature" => sac.temperature = real(key, v)?,
            "sac.replay_capacity" => sac.replay_capacity = count(key, v)?,
            "sac.updates_per_block" => sac.updates_per_block = count(key, v)?,
            "eval.configs" => self.eval_configs = count(key, v)?,
            "eval.fairness_window" => self.fairness_window = count(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("experiment.seeds", "needs at least one seed"));
        }
        if self.eval_configs == 0 {
            return Err(Error::config("eval.configs", "must be positive"));
        }
        if self.fairness_window == 0 {
            return Err(Error::config("eval.fairness_window", "must be positive"));
        }
        self.train.validate()?;
        self.rl.validate()
    }

    /// Every setting as `(key, value)`, sorted by key. Parsing the joined
    /// pairs reproduces the configuration.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut p = self.training_pairs();
        let more = [
            ("experiment.seeds", join(&self.seeds)),
            ("experiment.episodes", self.episodes.to_string()),
            ("experiment.out", self.out_dir.display().to_string()),
            ("experiment.checkpoint_interval", self.checkpoint_interval.to_string()),
            ("experiment.checkpoint_buffers", self.checkpoint_buffers.to_string()),
            ("incentive_rl.period", self.rl.period.to_string()),
            ("incentive_rl.alpha_max", self.rl.alpha_max.to_string()),
            ("incentive_rl.pretrain_episodes", self.rl.pretrain_episodes.to_string()),
            ("sac.hidden", join(&self.rl.sac.hidden)),
            ("sac.lr", self.rl.sac.lr.to_string()),
            ("sac.gamma", self.rl.sac.gamma.to_string()),
            ("sac.polyak", self.rl.sac.polyak.to_string()),
            ("sac.batch", self.rl.sac.batch.to_string()),
            ("sac.temperature", self.rl.sac.temperature.to_string()),
            ("sac.replay_capacity", self.rl.sac.replay_capacity.to_string()),
            ("sac.updates_per_block", self.rl.sac.updates_per_block.to_string()),
            ("eval.configs", self.eval_configs.to_string()),
            ("eval.fairness_window", self.fairness_window.to_string()),
        ];
        p.extend(more.into_iter().map(|(k, v)| (k.to_string(), v)));
        p.sort();
        p
    }

    /// The settings that determine a training run.
    pub fn training_pairs(&self) -> Vec<(String, String)> {
        training_pairs(&self.train)
    }

    pub fn to_text(&self) -> String {
        pairs_to_text(&self.pairs())
    }
}

pub(crate) fn pairs_to_text(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Parses text written from [`training_pairs`] back into a training setup.
pub fn parse_training_config(text: &str) -> Result<TrainConfig> {
    let mut c = ExperimentConfig::default();
    c.apply(text)?;
    Ok(c.train)
}

pub fn training_pairs(t: &TrainConfig) -> Vec<(String, String)> {
    let env = &t.env;
    let th = &t.train;
    let cm = &t.cmaddpg;
    let mut p: Vec<(&str, String)> = vec![
        ("algorithm", t.algorithm.name().to_string()),
        ("scheme", t.scheme.name().to_string()),
        ("env.board_half_extent", env.board_half_extent.to_string()),
        ("env.dt", env.dt.to_string()),
        ("env.damping", env.damping.to_string()),
        ("env.accel_scale", env.accel_scale.to_string()),
        ("env.agent_radius", env.agent_radius.to_string()),
        ("env.contact_stiffness", env.contact_stiffness.to_string()),
        ("env.r_l", env.r_l.to_string()),
        ("env.distance_penalty_scale", env.distance_penalty_scale.to_string()),
        ("env.boundary_penalty", env.boundary_penalty.to_string()),
        ("env.touch_radius", env.touch_radius.to_string()),
        ("env.max_speed_limit", env.max_speed_limit.to_string()),
        ("env.skill_rate", env.skill_rate.to_string()),
        ("env.max_episode_len", env.max_episode_len.to_string()),
        ("env.initial_max_speeds", join(&env.initial_max_speeds)),
        ("train.gamma", th.gamma.to_string()),
        ("train.lr_actor", th.lr_actor.to_string()),
        ("train.lr_critic", th.lr_critic.to_string()),
        ("train.polyak", th.polyak.to_string()),
        ("train.batch", th.batch.to_string()),
        ("train.noise_std", th.noise_std.to_string()),
        ("train.noise_decay", th.noise_decay.to_string()),
        ("train.noise_floor", th.noise_floor.to_string()),
        ("train.hidden", join(&th.hidden)),
        ("train.buffer_capacity", th.buffer_capacity.to_string()),
        ("train.warmup", th.warmup.to_string()),
        ("train.update_every", th.update_every.to_string()),
        ("train.planned_episodes", t.planned_episodes.to_string()),
        (
            "cmaddpg.exploration_c",
            cm.exploration_c.map_or_else(|| "auto".to_string(), |c| c.to_string()),
        ),
        ("cmaddpg.controller_interval", cm.controller_interval.to_string()),
        ("cmaddpg.controller_lr", cm.controller_lr.to_string()),
        ("cmaddpg.controller_batch", cm.controller_batch.to_string()),
        ("cmaddpg.controller_passes", cm.controller_passes.to_string()),
        ("cmaddpg.controller_window", cm.controller_window.to_string()),
        ("cmaddpg.controller_hidden", join(&cm.controller_hidden)),
        ("incentive.window", t.incentive_window.to_string()),
    ];
    match t.scheme {
        SchemeSpec::StaticTeam { alpha_team } => p.push(("scheme.alpha_team", alpha_team.to_string())),
        SchemeSpec::StaticAgent { alpha_team, alpha_agent } => {
            p.push(("scheme.alpha_team", alpha_team.to_string()));
            p.push(("scheme.alpha_agent", alpha_agent.to_string()));
        }
        _ => {}
    }
    if let Some(r) = t.roles {
        p.push(("roles.weak_team", r.weak_team().to_string()));
        p.push(("roles.weak_agent", r.weak_agent().to_string()));
    }
    let mut out: Vec<(String, String)> = p.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    out.sort();
    out
}
