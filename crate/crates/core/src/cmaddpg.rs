//! Two-policy ensembles switched by a per-team controller.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::env::{team_members, N_AGENTS, STATE_DIM};
use crate::error::{Error, Result};
use crate::label::PolicyLabel;
use crate::maddpg::{actor_objective_grad, new_actor, new_critic, Batch, TrainHyper, Tracked};
use crate::nn::{adam_step, cross_entropy, Activation, AdamState, GradientBuffer, Matrix, Mlp};

/// A team is labelled winning when one of its members holds the strictly
/// highest critic value; otherwise (including exact ties) it is losing.
pub fn label_teams(q: &[f64; N_AGENTS]) -> [PolicyLabel; N_AGENTS] {
    let best = |t: usize| team_members(t).iter().map(|&i| q[i]).fold(f64::NEG_INFINITY, f64::max);
    let (b0, b1) = (best(0), best(1));
    let team_label = |mine: f64, theirs: f64| {
        if mine > theirs {
            PolicyLabel::Winning
        } else {
            PolicyLabel::Losing
        }
    };
    let l0 = team_label(b0, b1);
    let l1 = team_label(b1, b0);
    [l0, l0, l1, l1]
}

/// Probability that the exploration gate fires in `episode`.
pub fn exploration_probability(episode: u64, c: f64) -> f64 {
    (-(episode as f64) / c).exp()
}

pub fn exploration_gate<R: Rng + ?Sized>(episode: u64, c: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < exploration_probability(episode, c)
}

pub const CONTROLLER_HIDDEN: [usize; 2] = [64, 32];

/// Team classifier from the team-relative global state to the probability
/// that the winning policy should be used.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerNet {
    pub net: Mlp,
    pub opt: AdamState,
}

impl ControllerNet {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], lr: f64, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![STATE_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let net = Mlp::init_uniform(&sizes, Activation::Relu, Activation::Sigmoid, rng)?;
        Ok(Self::from_net(net, lr))
    }

    pub fn from_net(net: Mlp, lr: f64) -> Self {
        let opt = AdamState::new(&net, lr);
        ControllerNet { net, opt }
    }

    pub fn probability(&self, view: &[f64; STATE_DIM]) -> Result<f64> {
        Ok(self.net.forward(view)?[0])
    }

    pub fn select(&self, view: &[f64; STATE_DIM]) -> Result<PolicyLabel> {
        select_policy(&self.net, view)
    }

    /// Labels for every row of a matrix of team views.
    pub fn select_batch(&self, views: &Matrix) -> Result<Vec<PolicyLabel>> {
        let p = self.net.forward_batch(views)?;
        Ok(p.as_slice().iter().map(|&v| label_of(v)).collect())
    }
}

fn label_of(p: f64) -> PolicyLabel {
    if p >= 0.5 {
        PolicyLabel::Winning
    } else {
        PolicyLabel::Losing
    }
}

/// Winning when the classifier output is at least one half.
pub fn select_policy(controller: &Mlp, view: &[f64; STATE_DIM]) -> Result<PolicyLabel> {
    Ok(label_of(controller.forward(view)?[0]))
}

/// Mean binary cross-entropy over `(view, label)` pairs and its parameter gradient.
pub fn controller_loss_grad(net: &Mlp, views: &Matrix, labels: &[PolicyLabel]) -> Result<(f64, GradientBuffer)> {
    let b = views.rows();
    if labels.len() != b {
        return Err(Error::shape("controller labels", b, labels.len()));
    }
    if b == 0 {
        return Ok((0.0, GradientBuffer::zeros_like(net)));
    }
    let tape = net.forward_tape(views)?;
    let mut up = Matrix::zeros(b, 1);
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let (l, g) = cross_entropy(tape.output().get(r, 0), label);
        loss += l;
        up.set(r, 0, g / b as f64);
    }
    let (grads, _) = net.backward_batch(&tape, &up)?;
    Ok((loss / b as f64, grads))
}

/// Minibatch Adam passes over the pairs, shuffled each pass. Returns the
/// mean loss over all pairs before any step, or `None` when there are none.
pub fn controller_update<R: Rng + ?Sized>(
    controller: &mut ControllerNet,
    pairs: &[([f64; STATE_DIM], PolicyLabel)],
    minibatch: usize,
    passes: usize,
    rng: &mut R,
) -> Result<Option<f64>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let all = Matrix::from_rows(&pairs.iter().map(|p| p.0).collect::<Vec<_>>())?;
    let labels: Vec<PolicyLabel> = pairs.iter().map(|p| p.1).collect();
    let (before, _) = controller_loss_grad(&controller.net, &all, &labels)?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..passes {
        order.shuffle(rng);
        for chunk in order.chunks(minibatch.max(1)) {
            let views = all.select_rows(chunk);
            let ls: Vec<PolicyLabel> = chunk.iter().map(|&r| labels[r]).collect();
            let (_, g) = controller_loss_grad(&controller.net, &views, &ls)?;
            adam_step(&mut controller.net, &g, &mut controller.opt)?;
        }
    }
    Ok(Some(before))
}

/// Per-agent learner: one or two deterministic policies and a central critic.
/// A single policy gives plain MADDPG.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleAgent {
    pub policies: Vec<Tracked>,
    pub critic: Tracked,
}

impl EnsembleAgent {
    pub fn new<R: Rng + ?Sized>(hyper: &TrainHyper, ensemble: bool, rng: &mut R) -> Result<Self> {
        let n = if ensemble { 2 } else { 1 };
        let mut policies = Vec::with_capacity(n);
        for _ in 0..n {
            policies.push(new_actor(&hyper.hidden, hyper.lr_actor, rng)?);
        }
        Ok(EnsembleAgent {
            policies,
            critic: new_critic(&hyper.hidden, hyper.lr_critic, rng)?,
        })
    }

    pub fn is_ensemble(&self) -> bool {
        self.policies.len() == 2
    }

    /// The policy for `label`; a single-policy agent always uses its only one.
    pub fn policy(&self, label: PolicyLabel) -> &Tracked {
        &self.policies[label.index().min(self.policies.len() - 1)]
    }

    pub fn soft_update(&mut self, rate: f64) -> Result<()> {
        for p in &mut self.policies {
            p.soft_update(rate)?;
        }
        self.critic.soft_update(rate)
    }
}

/// Outcome of one ensemble step for one agent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnsembleStep {
    /// Pre-step objective per policy; `None` when its partition was empty.
    pub objectives: [Option<f64>; 2],
    /// Sample ids consumed by each policy.
    pub consumed: [Vec<u64>; 2],
}

/// Updates each policy of `agent` on the samples whose stored label for
/// `index` selects it. A single-policy agent trains on the whole batch.
pub fn ensemble_policy_update(agent: &mut EnsembleAgent, index: usize, batch: &Batch) -> Result<EnsembleStep> {
    let mut out = EnsembleStep::default();
    let mut parts: [Vec<usize>; 2] = Default::default();
    if agent.is_ensemble() {
        for (r, labels) in batch.labels.iter().enumerate() {
            parts[labels[index].index()].push(r);
        }
    } else {
        parts[0] = (0..batch.len()).collect();
    }
    for (j, rows) in parts.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let sub = if rows.len() == batch.len() {
            None
        } else {
            Some(batch.subset(rows))
        };
        let b = sub.as_ref().unwrap_or(batch);
        let (obj, g) = actor_objective_grad(&agent.policies[j].net, &agent.critic.net, index, &b.obs[index], &b.critic_inputs)?;
        agent.policies[j].apply(&g)?;
        out.objectives[j] = Some(obj);
        out.consumed[j] = b.ids.clone();
    }
    Ok(out)
}
