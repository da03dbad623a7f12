//! Frozen-policy evaluation: paired games with exchanged starting positions,
//! round-robin tournaments, fairness and seed-level confidence intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{
    observe, step, team_members, team_view, EnvConfig, InitialConfig, WorldState, N_AGENTS,
};
use crate::error::{Error, Result};
use crate::label::PolicyLabel;
use crate::maddpg::act;
use crate::metrics::MetricsLog;
use crate::cmaddpg::select_policy;
use crate::nn::Mlp;
use crate::train::Trainer;

/// Fraction of steps on which each team used its winning policy.
pub fn win_policy_usage(labels: &[[PolicyLabel; 2]]) -> [f64; 2] {
    if labels.is_empty() {
        return [0.0; 2];
    }
    std::array::from_fn(|k| {
        labels.iter().filter(|l| l[k] == PolicyLabel::Winning).count() as f64 / labels.len() as f64
    })
}

/// A trained team with learning switched off.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTeam {
    /// Per member: the winning policy, then the losing one if present.
    pub policies: [Vec<Mlp>; 2],
    pub controller: Option<Mlp>,
    pub speeds: [f64; 2],
    /// Which member (0 or 1) is the weak one.
    pub weak_member: usize,
}

impl FrozenTeam {
    /// Team `team` of a run, with the speed caps it finished training with.
    pub fn from_trainer(trainer: &Trainer, team: usize) -> Self {
        let members = team_members(team);
        let speeds = trainer.speeds();
        let roles = trainer.roles();
        let weak_member = if roles.weak_team() == team {
            members.iter().position(|&i| i == roles.weak_agent()).unwrap_or(1)
        } else if speeds[members[0]] < speeds[members[1]] {
            0
        } else {
            1
        };
        FrozenTeam {
            policies: members.map(|i| trainer.agents()[i].policies.iter().map(|p| p.net.clone()).collect()),
            controller: trainer.controllers().get(team).map(|c| c.net.clone()),
            speeds: members.map(|i| speeds[i]),
            weak_member,
        }
    }

    fn label(&self, state: &WorldState, slot: usize) -> Result<PolicyLabel> {
        match &self.controller {
            Some(c) => select_policy(c, &team_view(state, slot)),
            None => Ok(PolicyLabel::Winning),
        }
    }

    fn policy(&self, member: usize, label: PolicyLabel) -> &Mlp {
        let ps = &self.policies[member];
        &ps[label.index().min(ps.len() - 1)]
    }

    /// Noise-free actions of both members with the team playing in `slot`.
    pub fn act(&self, state: &WorldState, slot: usize) -> Result<([[f64; 2]; 2], PolicyLabel)> {
        if slot > 1 {
            return Err(Error::Input(format!("team slot must be 0 or 1, got {slot}")));
        }
        let label = self.label(state, slot)?;
        // act() draws nothing when the noise scale is zero
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let mut out = [[0.0; 2]; 2];
        for (m, &i) in team_members(slot).iter().enumerate() {
            out[m] = act(self.policy(m, label), &observe(state, i), 0.0, &mut unused)?;
        }
        Ok((out, label))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameOutcome {
    pub scorer: Option<usize>,
    pub collisions: u64,
    pub steps: usize,
    pub labels: Vec<[PolicyLabel; 2]>,
}

/// Plays one noise-free episode with `teams[k]` in team slot `k`.
pub fn play_game(teams: [&FrozenTeam; 2], init: &InitialConfig, env: &EnvConfig) -> Result<GameOutcome> {
    let speeds = [teams[0].speeds[0], teams[0].speeds[1], teams[1].speeds[0], teams[1].speeds[1]];
    let mut state = WorldState::from_initial(env, init, &speeds)?;
    let mut collisions = 0;
    let mut labels = Vec::new();
    loop {
        let (a0, l0) = teams[0].act(&state, 0)?;
        let (a1, l1) = teams[1].act(&state, 1)?;
        let l = [l0, l1];
        let actions = [a0[0], a0[1], a1[0], a1[1]];
        labels.push(l);
        let (next, out) = step(&state, &actions, env)?;
        collisions += out.collisions.len() as u64;
        state = next;
        if out.done {
            return Ok(GameOutcome {
                scorer: out.scorer,
                collisions,
                steps: state.step_index,
                labels,
            });
        }
    }
}

/// Results from the first team's point of view: index 0 is team A, index 1
/// team B, and agent entries are `[A0, A1, B0, B1]` whatever slot was played.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedEvalReport {
    pub episodes: usize,
    pub team_landmark_rate: [f64; 2],
    pub agent_landmark_rate: [f64; N_AGENTS],
    pub wins: [u64; 2],
    pub collision_rate: f64,
    pub win_policy_usage: [f64; 2],
}

impl PairedEvalReport {
    /// The same report with the two teams exchanged.
    pub fn mirrored(&self) -> Self {
        let a = self.agent_landmark_rate;
        PairedEvalReport {
            episodes: self.episodes,
            team_landmark_rate: [self.team_landmark_rate[1], self.team_landmark_rate[0]],
            agent_landmark_rate: [a[2], a[3], a[0], a[1]],
            wins: [self.wins[1], self.wins[0]],
            collision_rate: self.collision_rate,
            win_policy_usage: [self.win_policy_usage[1], self.win_policy_usage[0]],
        }
    }
}

/// Plays each of `n_configs` random starting configurations twice, the
/// second time with the teams' starting positions exchanged.
pub fn paired_eval(
    a: &FrozenTeam,
    b: &FrozenTeam,
    env: &EnvConfig,
    n_configs: usize,
    seed: u64,
) -> Result<PairedEvalReport> {
    if n_configs == 0 {
        return Err(Error::Input("paired evaluation needs at least one configuration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scored = [0u64; N_AGENTS];
    let mut collisions = 0u64;
    let mut usage_steps = 0usize;
    let mut usage = [0usize; 2];
    for _ in 0..n_configs {
        let init = InitialConfig::sample(env, &mut rng);
        // the second game puts B at A's starting positions and vice versa
        for first in [true, false] {
            let teams = if first { [a, b] } else { [b, a] };
            let g = play_game(teams, &init, env)?;
            collisions += g.collisions;
            usage_steps += g.labels.len();
            for l in &g.labels {
                for k in 0..2 {
                    let team = if first { k } else { 1 - k };
                    usage[team] += usize::from(l[k] == PolicyLabel::Winning);
                }
            }
            if let Some(s) = g.scorer {
                let idx = if first { s } else { (s + 2) % N_AGENTS };
                scored[idx] += 1;
            }
        }
    }
    let episodes = 2 * n_configs;
    let n = episodes as f64;
    let wins = [scored[0] + scored[1], scored[2] + scored[3]];
    Ok(PairedEvalReport {
        episodes,
        team_landmark_rate: wins.map(|w| w as f64 / n),
        agent_landmark_rate: scored.map(|c| c as f64 / n),
        wins,
        collision_rate: collisions as f64 / n,
        win_policy_usage: usage.map(|u| u as f64 / usage_steps as f64),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pairing {
    pub first: usize,
    pub second: usize,
    pub report: PairedEvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TournamentReport {
    pub pairings: Vec<Pairing>,
    /// Per entrant: weak member's landmark count over its team's, averaged
    /// over that entrant's matches.
    pub weak_share: Vec<f64>,
}

/// Share of a team's landmark touches made by its weak member; zero when
/// the team never scored.
pub fn weak_share(team_rate: f64, weak_rate: f64) -> f64 {
    if team_rate == 0.0 {
        0.0
    } else {
        weak_rate / team_rate
    }
}

/// Round-robin over all unordered pairs of entrants.
pub fn tournament(teams: &[FrozenTeam], env: &EnvConfig, n_configs: usize, seed: u64) -> Result<TournamentReport> {
    if teams.len() < 2 {
        return Err(Error::Input(format!("a tournament needs at least two teams, got {}", teams.len())));
    }
    let mut pairings = Vec::new();
    let mut shares = vec![Vec::new(); teams.len()];
    for i in 0..teams.len() {
        for j in (i + 1)..teams.len() {
            let report = paired_eval(&teams[i], &teams[j], env, n_configs, seed)?;
            let r = &report.agent_landmark_rate;
            shares[i].push(weak_share(report.team_landmark_rate[0], r[teams[i].weak_member]));
            shares[j].push(weak_share(report.team_landmark_rate[1], r[2 + teams[j].weak_member]));
            pairings.push(Pairing { first: i, second: j, report });
        }
    }
    Ok(TournamentReport {
        pairings,
        weak_share: shares.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect(),
    })
}

/// Per-agent landmark touches per episode over the last `window` rows.
pub fn landmark_rates(log: &MetricsLog, window: usize) -> Result<[f64; N_AGENTS]> {
    if window == 0 || log.len() < window {
        return Err(Error::Input(format!(
            "need at least {window} episodes for the window, log has {}",
            log.len()
        )));
    }
    let mut counts = [0u64; N_AGENTS];
    for row in log.tail(window) {
        for (c, &l) in counts.iter_mut().zip(&row.landmark) {
            *c += u64::from(l);
        }
    }
    Ok(counts.map(|c| c as f64 / window as f64))
}

pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Population standard deviation across agents of their landmark rates
/// over the final `window` episodes.
pub fn fairness_stddev(log: &MetricsLog, window: usize) -> Result<f64> {
    Ok(population_std(&landmark_rates(log, window)?))
}

/// Mean and 95% normal-approximation half-width `1.96 s / sqrt(n)`.
pub fn confidence_interval(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Input("a confidence interval needs at least two values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * (var / n).sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessReport {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Present when there are at least two seeds.
    pub half_width: Option<f64>,
}

pub fn fairness_across_seeds(logs: &[MetricsLog], window: usize) -> Result<FairnessReport> {
    if logs.is_empty() {
        return Err(Error::Input("no logs given".into()));
    }
    let per_seed = logs.iter().map(|l| fairness_stddev(l, window)).collect::<Result<Vec<_>>>()?;
    let (mean, half_width) = match confidence_interval(&per_seed) {
        Ok((m, h)) => (m, Some(h)),
        Err(_) => (per_seed[0], None),
    };
    Ok(FairnessReport {
        per_seed,
        mean,
        half_width,
    })
}

/// Mean per-episode team reward of uniformly random actions, with plain
/// zero-sum terminal rewards and the given speed caps.
pub fn random_policy_baseline(env: &EnvConfig, speeds: &[f64; N_AGENTS], episodes: usize, seed: u64) -> Result<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = [0.0; 2];
    for _ in 0..episodes {
        let init = InitialConfig::sample(env, &mut rng);
        let mut state = WorldState::from_initial(env, &init, speeds)?;
        loop {
            let actions = std::array::from_fn(|_| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]);
            let (next, out) = step(&state, &actions, env)?;
            for (k, t) in total.iter_mut().enumerate() {
                let [a, b] = team_members(k);
                *t += (out.rewards[a] + out.rewards[b]) / 2.0;
            }
            state = next;
            if out.done {
                break;
            }
        }
    }
    Ok(total.map(|t| t / episodes.max(1) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::EpisodeRecord;

    fn log_from_scorers(scorers: &[Option<usize>]) -> MetricsLog {
        let mut log = MetricsLog::new();
        for (k, s) in scorers.iter().enumerate() {
            log.push(EpisodeRecord {
                episode: k as u64 + 1,
                team_reward: [0.0; 2],
                landmark: std::array::from_fn(|i| u8::from(*s == Some(i))),
                winpol: [0.0; 2],
                speeds: [4.0; 4],
                incentive_team: 0.0,
                incentive_agent: 0.0,
                collisions: 0,
            });
        }
        log
    }

    #[test]
    fn fairness_examples() {
        let even = log_from_scorers(&[Some(0), Some(1), Some(2), Some(3)]);
        assert_eq!(fairness_stddev(&even, 4).unwrap(), 0.0);
        let mut scorers = vec![None; 1000];
        for (k, s) in scorers.iter_mut().take(300).enumerate() {
            *s = Some(k % 3);
        }
        let log = log_from_scorers(&scorers);
        let expected = population_std(&[0.1, 0.1, 0.1, 0.0]);
        assert_eq!(fairness_stddev(&log, 1000).unwrap(), expected);
        assert!((expected - 0.0433).abs() < 1e-4);
        assert!(fairness_stddev(&log_from_scorers(&[None; 500]), 1000).is_err());
    }

    #[test]
    fn interval_examples() {
        assert_eq!(confidence_interval(&[1.0, 3.0]).unwrap(), (2.0, 1.96));
        assert_eq!(confidence_interval(&[0.5; 4]).unwrap(), (0.5, 0.0));
        assert!(confidence_interval(&[1.0]).is_err());
    }

    #[test]
    fn usage_examples() {
        use PolicyLabel::{Losing as L, Winning as W};
        assert_eq!(win_policy_usage(&[[W, L], [L, L], [W, L], [L, L]]), [0.5, 0.0]);
        assert_eq!(win_policy_usage(&[[W, W]]), [1.0, 1.0]);
    }

    #[test]
    fn shares() {
        assert_eq!(weak_share(0.0, 0.0), 0.0);
        assert_eq!(weak_share(0.4, 0.2), 0.5);
    }
}
