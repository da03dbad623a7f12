//! Terminal-reward subsidies for an under-skilled team and its weaker member,
//! with static, statistics-driven and externally controlled multipliers.

use std::collections::VecDeque;
use std::fmt;

use crate::env::{team_members, team_of, teammate, N_AGENTS};
use crate::error::{Error, Result};

/// Which team and which of its members count as "weak" for a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoleAssignment {
    weak_team: usize,
    weak_agent: usize,
}

impl RoleAssignment {
    pub fn new(weak_team: usize, weak_agent: usize) -> Result<Self> {
        if weak_team > 1 || weak_agent >= N_AGENTS || team_of(weak_agent) != weak_team {
            return Err(Error::Input(format!(
                "weak agent {weak_agent} is not a member of team {weak_team}"
            )));
        }
        Ok(RoleAssignment {
            weak_team,
            weak_agent,
        })
    }

    /// The team with the lower speed sum is weak and its slower member is the
    /// weak agent. Ties resolve to team 1 and to that team's higher id.
    pub fn from_speeds(speeds: &[f64; N_AGENTS]) -> Self {
        let sum = |t: usize| team_members(t).iter().map(|&i| speeds[i]).sum::<f64>();
        let weak_team = if sum(0) < sum(1) { 0 } else { 1 };
        let [a, b] = team_members(weak_team);
        let weak_agent = if speeds[a] < speeds[b] { a } else { b };
        RoleAssignment {
            weak_team,
            weak_agent,
        }
    }

    pub fn weak_team(&self) -> usize {
        self.weak_team
    }

    pub fn strong_team(&self) -> usize {
        1 - self.weak_team
    }

    pub fn weak_agent(&self) -> usize {
        self.weak_agent
    }

    /// The other member of the weak team.
    pub fn weak_team_strong_member(&self) -> usize {
        teammate(self.weak_agent)
    }
}

/// Current multipliers `α_T` (team) and `α_A` (agent).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IncentiveParams {
    pub alpha_team: f64,
    pub alpha_agent: f64,
}

impl IncentiveParams {
    pub fn new(alpha_team: f64, alpha_agent: f64) -> Result<Self> {
        for (name, v) in [("alpha_team", alpha_team), ("alpha_agent", alpha_agent)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Input(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(IncentiveParams {
            alpha_team,
            alpha_agent,
        })
    }
}

/// Terminal rewards for a touch by `scorer`. The weak team's members share a
/// bonus of `α_T · r_l` (plus `α_A · r_l` when the weak agent scored); the
/// opponents always receive the plain `−r_l`.
pub fn terminal_rewards(
    params: &IncentiveParams,
    scorer: usize,
    roles: &RoleAssignment,
    r_l: f64,
) -> [f64; N_AGENTS] {
    let scoring_team = team_of(scorer);
    let multiplier = if scoring_team != roles.weak_team {
        1.0
    } else if scorer == roles.weak_agent {
        1.0 + params.alpha_team + params.alpha_agent
    } else {
        1.0 + params.alpha_team
    };
    std::array::from_fn(|i| {
        if team_of(i) == scoring_team {
            multiplier * r_l
        } else {
            -r_l
        }
    })
}

/// Sliding record of who scored in each of the last `length` episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsWindow {
    length: usize,
    history: VecDeque<Option<usize>>,
    counts: [u32; N_AGENTS],
}

impl StatsWindow {
    pub fn new(length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::config("incentive.window", "must be positive"));
        }
        Ok(StatsWindow {
            length,
            history: VecDeque::with_capacity(length),
            counts: [0; N_AGENTS],
        })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// Episodes currently held (at most `length`).
    pub fn filled(&self) -> usize {
        self.history.len()
    }

    pub fn counts(&self) -> [u32; N_AGENTS] {
        self.counts
    }

    /// Scorers from oldest to newest.
    pub fn history(&self) -> impl Iterator<Item = Option<usize>> + '_ {
        self.history.iter().copied()
    }

    /// Slides the window by one episode.
    pub fn advance(&mut self, scorer: Option<usize>) {
        if self.history.len() == self.length {
            if let Some(Some(old)) = self.history.pop_front() {
                self.counts[old] -= 1;
            }
        }
        if let Some(s) = scorer {
            self.counts[s] += 1;
        }
        self.history.push_back(scorer);
    }

    pub fn from_history(length: usize, history: impl IntoIterator<Item = Option<usize>>) -> Result<Self> {
        let mut w = StatsWindow::new(length)?;
        for s in history {
            if s.is_some_and(|i| i >= N_AGENTS) {
                return Err(Error::Input(format!("scorer {s:?} out of range")));
            }
            w.advance(s);
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatMode {
    Landmark,
    Speed,
}

/// Per-agent statistics divided by their maximum. Raw values are kept so
/// that differences can be formed before dividing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedStats {
    raw: [f64; N_AGENTS],
    scale: f64,
}

impl NormalizedStats {
    /// An all-zero input yields all-zero statistics.
    pub fn from_raw(raw: [f64; N_AGENTS]) -> Result<Self> {
        if raw.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Input(format!("statistics must be finite and non-negative: {raw:?}")));
        }
        let scale = raw.iter().copied().fold(0.0, f64::max);
        Ok(NormalizedStats { raw, scale })
    }

    fn ratio(&self, x: f64) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            x / self.scale
        }
    }

    pub fn agent(&self, i: usize) -> f64 {
        self.ratio(self.raw[i])
    }

    pub fn agents(&self) -> [f64; N_AGENTS] {
        std::array::from_fn(|i| self.agent(i))
    }

    /// Sum of the members' normalized values, in `[0, 2]`.
    pub fn team(&self, team: usize) -> f64 {
        let [a, b] = team_members(team);
        self.ratio(self.raw[a] + self.raw[b])
    }

    fn team_raw(&self, team: usize) -> f64 {
        let [a, b] = team_members(team);
        self.raw[a] + self.raw[b]
    }

    /// Strong team minus weak team.
    pub fn team_gap(&self, roles: &RoleAssignment) -> f64 {
        self.ratio(self.team_raw(roles.strong_team()) - self.team_raw(roles.weak_team()))
    }

    /// Weak team's strong member minus the weak agent.
    pub fn agent_gap(&self, roles: &RoleAssignment) -> f64 {
        self.ratio(self.raw[roles.weak_team_strong_member()] - self.raw[roles.weak_agent()])
    }
}

pub fn normalized_stats(
    window: &StatsWindow,
    speeds: &[f64; N_AGENTS],
    mode: StatMode,
) -> Result<NormalizedStats> {
    match mode {
        StatMode::Landmark => NormalizedStats::from_raw(window.counts().map(f64::from)),
        StatMode::Speed => NormalizedStats::from_raw(*speeds),
    }
}

/// Gaps between strong and weak sides, clamped at zero.
pub fn dynamic_alphas(stats: &NormalizedStats, roles: &RoleAssignment) -> IncentiveParams {
    IncentiveParams {
        alpha_team: stats.team_gap(roles).max(0.0),
        alpha_agent: stats.agent_gap(roles).max(0.0),
    }
}

/// One row of the incentive scheme table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchemeSpec {
    StaticTeam { alpha_team: f64 },
    StaticAgent { alpha_team: f64, alpha_agent: f64 },
    DynamicLandmark,
    DynamicSpeed,
    /// `α_T` from a learned controller, `α_A` from speed statistics.
    TeamRlAgentDynamic,
    /// `α_T` from speed statistics, `α_A` from a learned controller.
    TeamDynamicAgentRl,
}

/// Which multiplier an external controller drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlTarget {
    Team,
    Agent,
}

impl SchemeSpec {
    pub const NAMES: [&'static str; 7] = [
        "None",
        "StaticTeam",
        "StaticAgent",
        "DynamicLandmark",
        "DynamicSpeed",
        "TeamRLAgentDynamic",
        "TeamDynamicAgentRL",
    ];

    /// No incentive at all.
    pub fn none() -> Self {
        SchemeSpec::StaticTeam { alpha_team: 0.0 }
    }

    /// Preset by name, with the static defaults `α_T = 0.1` for the team-only
    /// scheme and `(0.3, 0.7)` for the agent-wise scheme.
    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "None" => SchemeSpec::none(),
            "StaticTeam" => SchemeSpec::StaticTeam { alpha_team: 0.1 },
            "StaticAgent" => SchemeSpec::StaticAgent {
                alpha_team: 0.3,
                alpha_agent: 0.7,
            },
            "DynamicLandmark" => SchemeSpec::DynamicLandmark,
            "DynamicSpeed" => SchemeSpec::DynamicSpeed,
            "TeamRLAgentDynamic" => SchemeSpec::TeamRlAgentDynamic,
            "TeamDynamicAgentRL" => SchemeSpec::TeamDynamicAgentRl,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchemeSpec::StaticTeam { alpha_team } if *alpha_team == 0.0 => "None",
            SchemeSpec::StaticTeam { .. } => "StaticTeam",
            SchemeSpec::StaticAgent { .. } => "StaticAgent",
            SchemeSpec::DynamicLandmark => "DynamicLandmark",
            SchemeSpec::DynamicSpeed => "DynamicSpeed",
            SchemeSpec::TeamRlAgentDynamic => "TeamRLAgentDynamic",
            SchemeSpec::TeamDynamicAgentRl => "TeamDynamicAgentRL",
        }
    }

    pub fn rl_target(&self) -> Option<RlTarget> {
        match self {
            SchemeSpec::TeamRlAgentDynamic => Some(RlTarget::Team),
            SchemeSpec::TeamDynamicAgentRl => Some(RlTarget::Agent),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SchemeSpec::StaticTeam { alpha_team } => IncentiveParams::new(alpha_team, 0.0),
            SchemeSpec::StaticAgent {
                alpha_team,
                alpha_agent,
            } => IncentiveParams::new(alpha_team, alpha_agent),
            _ => Ok(IncentiveParams::default()),
        }
        .map(|_| ())
        .map_err(|e| Error::config("scheme", e.to_string()))
    }

    /// Multipliers for the coming episode. `rl_alpha` is the value currently
    /// held by the external controller; schemes without one ignore it.
    pub fn params(
        &self,
        window: &StatsWindow,
        speeds: &[f64; N_AGENTS],
        roles: &RoleAssignment,
        rl_alpha: f64,
    ) -> Result<IncentiveParams> {
        let speed = || normalized_stats(window, speeds, StatMode::Speed).map(|s| dynamic_alphas(&s, roles));
        Ok(match *self {
            SchemeSpec::StaticTeam { alpha_team } => IncentiveParams {
                alpha_team,
                alpha_agent: 0.0,
            },
            SchemeSpec::StaticAgent {
                alpha_team,
                alpha_agent,
            } => IncentiveParams {
                alpha_team,
                alpha_agent,
            },
            SchemeSpec::DynamicLandmark => {
                dynamic_alphas(&normalized_stats(window, speeds, StatMode::Landmark)?, roles)
            }
            SchemeSpec::DynamicSpeed => speed()?,
            SchemeSpec::TeamRlAgentDynamic => IncentiveParams {
                alpha_team: rl_alpha,
                alpha_agent: speed()?.alpha_agent,
            },
            SchemeSpec::TeamDynamicAgentRl => IncentiveParams {
                alpha_team: speed()?.alpha_team,
                alpha_agent: rl_alpha,
            },
        })
    }
}

impl fmt::Display for SchemeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scheme, roles and window as owned by a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct IncentiveState {
    pub scheme: SchemeSpec,
    pub roles: RoleAssignment,
    pub window: StatsWindow,
    /// Multiplier currently chosen by an external controller.
    pub rl_alpha: f64,
    params: IncentiveParams,
}

impl IncentiveState {
    pub fn new(scheme: SchemeSpec, roles: RoleAssignment, window: usize) -> Result<Self> {
        scheme.validate()?;
        Ok(IncentiveState {
            scheme,
            roles,
            window: StatsWindow::new(window)?,
            rl_alpha: 0.0,
            params: IncentiveParams::default(),
        })
    }

    pub fn params(&self) -> IncentiveParams {
        self.params
    }

    /// Recomputes the multipliers from the current statistics.
    pub fn begin_episode(&mut self, speeds: &[f64; N_AGENTS]) -> Result<IncentiveParams> {
        self.params = self.scheme.params(&self.window, speeds, &self.roles, self.rl_alpha)?;
        Ok(self.params)
    }

    pub fn end_episode(&mut self, scorer: Option<usize>) {
        self.window.advance(scorer);
    }

    pub fn terminal_rewards(&self, scorer: usize, r_l: f64) -> [f64; N_AGENTS] {
        terminal_rewards(&self.params, scorer, &self.roles, r_l)
    }
}
