//! Binary checkpoints.
//!
//! Layout: the magic `TMLB`, a little-endian `u32` format version, then
//! sections of `[4-byte tag][u64 length][payload]`. All numbers are little
//! endian and reals are stored as raw `f64` bits, so a round trip is exact.

use std::collections::VecDeque;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cmaddpg::{ControllerNet, EnsembleAgent};
use crate::env::{ACTION_DIM, N_AGENTS, OBS_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::incentive::StatsWindow;
use crate::incentive_rl::{RlPolicy, SacAgent, SacConfig, SAC_OBS_DIM};
use crate::label::PolicyLabel;
use crate::maddpg::Tracked;
use crate::metrics::MetricsLog;
use crate::nn::{Activation, AdamState, Mlp};
use crate::replay::{ReplayBuffer, Transition};
use crate::runner::config::{pairs_to_text, parse_training_config, training_pairs};
use crate::train::Trainer;

pub const MAGIC: [u8; 4] = *b"TMLB";
pub const FORMAT_VERSION: u32 = 1;

const TAG_TRAINER: [u8; 4] = *b"TRNR";
const TAG_BUFFERS: [u8; 4] = *b"BUFS";
const TAG_SAC: [u8; 4] = *b"SACA";

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn bool(&mut self, v: bool) {
        self.u8(u8::from(v));
    }
    fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        for &x in v {
            self.f64(x);
        }
    }
    fn fixed(&mut self, v: &[f64]) {
        for &x in v {
            self.f64(x);
        }
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn mlp(&mut self, m: &Mlp) {
        self.usize(m.layer_sizes().len());
        for &s in m.layer_sizes() {
            self.usize(s);
        }
        self.u8(m.hidden_activation().code());
        self.u8(m.output_activation().code());
        self.f64s(m.params());
    }
    fn adam(&mut self, a: &AdamState) {
        self.f64(a.lr);
        self.f64(a.beta1);
        self.f64(a.beta2);
        self.f64(a.eps);
        self.u64(a.step);
        self.f64s(&a.m);
        self.f64s(&a.v);
    }
    fn tracked(&mut self, t: &Tracked) {
        self.mlp(&t.net);
        self.mlp(&t.target);
        self.adam(&t.opt);
    }
    fn rng(&mut self, r: &ChaCha8Rng) {
        self.buf.extend_from_slice(&r.get_seed());
        self.u64(r.get_stream());
        self.buf.extend_from_slice(&r.get_word_pos().to_le_bytes());
    }
    fn label(&mut self, l: PolicyLabel) {
        self.u8(l.number());
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.data.len() - self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        // every stored element occupies at least one byte
        if n > (self.data.len() - self.pos) as u64 {
            return Err(Error::Corrupt(format!("length {n} exceeds the remaining data")));
        }
        Ok(n as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Corrupt(format!("bad flag byte {v}"))),
        }
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn fixed<const N: usize>(&mut self) -> Result<[f64; N]> {
        let mut out = [0.0; N];
        for v in &mut out {
            *v = self.f64()?;
        }
        Ok(out)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupt("invalid utf-8 text".into()))
    }
    fn activation(&mut self) -> Result<Activation> {
        let c = self.u8()?;
        Activation::from_code(c).ok_or_else(|| Error::Corrupt(format!("unknown activation code {c}")))
    }
    fn mlp(&mut self) -> Result<Mlp> {
        let n = self.len()?;
        let sizes = (0..n).map(|_| self.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let hidden = self.activation()?;
        let output = self.activation()?;
        let params = self.f64s()?;
        Mlp::from_params(&sizes, hidden, output, params).map_err(|e| Error::Corrupt(format!("network: {e}")))
    }
    fn adam(&mut self, net: &Mlp) -> Result<AdamState> {
        let mut a = AdamState::new(net, self.f64()?);
        a.beta1 = self.f64()?;
        a.beta2 = self.f64()?;
        a.eps = self.f64()?;
        a.step = self.u64()?;
        a.m = self.f64s()?;
        a.v = self.f64s()?;
        let n = net.params().len();
        if a.m.len() != n || a.v.len() != n {
            return Err(Error::Corrupt("optimizer moments do not match the network".into()));
        }
        Ok(a)
    }
    fn tracked(&mut self) -> Result<Tracked> {
        let net = self.mlp()?;
        let target = self.mlp()?;
        if !net.same_shape(&target) {
            return Err(Error::Corrupt("target network shape differs".into()));
        }
        let opt = self.adam(&net)?;
        Ok(Tracked { net, target, opt })
    }
    fn rng(&mut self) -> Result<ChaCha8Rng> {
        let seed: [u8; 32] = self.array()?;
        let stream = self.u64()?;
        let word = u128::from_le_bytes(self.array()?);
        let mut r = ChaCha8Rng::from_seed(seed);
        r.set_stream(stream);
        r.set_word_pos(word);
        Ok(r)
    }
    fn label(&mut self) -> Result<PolicyLabel> {
        let n = self.u8()?;
        PolicyLabel::from_number(n).ok_or_else(|| Error::Corrupt(format!("bad policy label {n}")))
    }
    fn finish(&self, what: &str) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes in {what}", self.data.len() - self.pos)));
        }
        Ok(())
    }
}

/// Contents of a checkpoint file.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub trainer: Option<Trainer>,
    pub sac: Option<SacAgent>,
}

fn write_trainer(t: &Trainer) -> Vec<u8> {
    let mut w = Writer::default();
    w.str(&pairs_to_text(&training_pairs(&t.config)));
    w.u64(t.episode);
    w.u64(t.total_steps);
    w.f64(t.noise_std);
    w.fixed(&t.speeds);
    w.rng(&t.rng);
    w.f64(t.incentive.rl_alpha);
    w.usize(t.incentive.window.filled());
    for s in t.incentive.window.history() {
        w.u8(s.map_or(u8::MAX, |i| i as u8));
    }
    match &t.rl_policy {
        Some(p) => {
            w.bool(true);
            w.mlp(&p.policy);
            w.f64(p.alpha_max);
            w.u64(p.period);
        }
        None => w.bool(false),
    }
    w.usize(t.agents.len());
    for a in &t.agents {
        w.usize(a.policies.len());
        for p in &a.policies {
            w.tracked(p);
        }
        w.tracked(&a.critic);
    }
    w.usize(t.controllers.len());
    for c in &t.controllers {
        w.mlp(&c.net);
        w.adam(&c.opt);
    }
    w.buf
}

fn read_trainer(data: &[u8]) -> Result<Trainer> {
    let mut r = Reader::new(data);
    let config = parse_training_config(&r.str()?).map_err(|e| Error::Corrupt(format!("stored config: {e}")))?;
    // a fresh trainer supplies the buffers, then every stored field is overwritten
    let mut t = Trainer::new(config, 0).map_err(|e| Error::Corrupt(format!("stored config: {e}")))?;
    t.episode = r.u64()?;
    t.total_steps = r.u64()?;
    t.noise_std = r.f64()?;
    t.speeds = r.fixed()?;
    t.rng = r.rng()?;
    t.incentive.rl_alpha = r.f64()?;
    let n = r.len()?;
    let mut history = Vec::with_capacity(n);
    for _ in 0..n {
        let b = r.u8()?;
        history.push(if b == u8::MAX { None } else { Some(b as usize) });
    }
    t.incentive.window = StatsWindow::from_history(t.config.incentive_window, history)
        .map_err(|e| Error::Corrupt(format!("incentive window: {e}")))?;
    t.rl_policy = if r.bool()? {
        Some(RlPolicy {
            policy: r.mlp()?,
            alpha_max: r.f64()?,
            period: r.u64()?,
        })
    } else {
        None
    };
    let n = r.len()?;
    if n != N_AGENTS {
        return Err(Error::Corrupt(format!("{n} agents stored")));
    }
    let mut agents = Vec::with_capacity(n);
    for _ in 0..n {
        let k = r.len()?;
        let mut policies = Vec::with_capacity(k);
        for _ in 0..k {
            policies.push(r.tracked()?);
        }
        agents.push(EnsembleAgent {
            policies,
            critic: r.tracked()?,
        });
    }
    t.agents = agents;
    let n = r.len()?;
    let mut controllers = Vec::with_capacity(n);
    for _ in 0..n {
        let net = r.mlp()?;
        let opt = r.adam(&net)?;
        controllers.push(ControllerNet { net, opt });
    }
    t.controllers = controllers;
    r.finish("trainer section")?;
    Ok(t)
}

fn write_transition(w: &mut Writer, t: &Transition) {
    for o in &t.obs {
        w.fixed(o);
    }
    w.fixed(&t.state);
    for &l in &t.labels {
        w.label(l);
    }
    for a in &t.actions {
        w.fixed(a);
    }
    w.fixed(&t.rewards);
    for o in &t.next_obs {
        w.fixed(o);
    }
    w.fixed(&t.next_state);
    w.bool(t.done);
}

fn read_transition(r: &mut Reader) -> Result<Transition> {
    let mut obs = [[0.0; OBS_DIM]; N_AGENTS];
    for o in &mut obs {
        *o = r.fixed()?;
    }
    let state = r.fixed()?;
    let mut labels = [PolicyLabel::Winning; N_AGENTS];
    for l in &mut labels {
        *l = r.label()?;
    }
    let mut actions = [[0.0; ACTION_DIM]; N_AGENTS];
    for a in &mut actions {
        *a = r.fixed()?;
    }
    let rewards = r.fixed()?;
    let mut next_obs = [[0.0; OBS_DIM]; N_AGENTS];
    for o in &mut next_obs {
        *o = r.fixed()?;
    }
    Ok(Transition {
        obs,
        state,
        labels,
        actions,
        rewards,
        next_obs,
        next_state: r.fixed()?,
        done: r.bool()?,
    })
}

fn write_buffers(t: &Trainer) -> Vec<u8> {
    let mut w = Writer::default();
    w.usize(t.replay.capacity());
    w.usize(t.replay.cursor());
    w.u64(t.replay.total_pushed());
    w.usize(t.replay.slots().len());
    for tr in t.replay.slots() {
        write_transition(&mut w, tr);
    }
    for pending in &t.pending {
        w.usize(pending.len());
        for (view, label) in pending {
            w.fixed(view);
            w.label(*label);
        }
    }
    w.buf
}

fn read_buffers(data: &[u8], t: &mut Trainer) -> Result<()> {
    let mut r = Reader::new(data);
    let capacity = r.u64()? as usize;
    let cursor = r.u64()? as usize;
    let pushed = r.u64()?;
    let n = r.len()?;
    let mut slots = Vec::with_capacity(n);
    for _ in 0..n {
        slots.push(read_transition(&mut r)?);
    }
    t.replay = ReplayBuffer::from_parts(capacity, slots, cursor, pushed)
        .ok_or_else(|| Error::Corrupt("inconsistent replay layout".into()))?;
    for k in 0..2 {
        let n = r.len()?;
        let mut q = VecDeque::with_capacity(n);
        for _ in 0..n {
            let view: [f64; STATE_DIM] = r.fixed()?;
            q.push_back((view, r.label()?));
        }
        t.pending[k] = q;
    }
    r.finish("buffer section")
}

fn write_sac(a: &SacAgent) -> Vec<u8> {
    let mut w = Writer::default();
    let c = &a.config;
    w.usize(c.hidden.len());
    for &h in &c.hidden {
        w.usize(h);
    }
    for v in [c.lr, c.gamma, c.polyak, c.temperature, a.alpha_max] {
        w.f64(v);
    }
    w.usize(c.batch);
    w.usize(c.replay_capacity);
    w.usize(c.updates_per_block);
    w.mlp(&a.policy);
    w.adam(&a.policy_opt);
    w.tracked(&a.q[0]);
    w.tracked(&a.q[1]);
    w.buf
}

fn read_sac(data: &[u8]) -> Result<SacAgent> {
    let mut r = Reader::new(data);
    let n = r.len()?;
    let hidden = (0..n).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let [lr, gamma, polyak, temperature, alpha_max] = r.fixed()?;
    let config = SacConfig {
        hidden,
        lr,
        gamma,
        polyak,
        temperature,
        batch: r.u64()? as usize,
        replay_capacity: r.u64()? as usize,
        updates_per_block: r.u64()? as usize,
    };
    if config.replay_capacity == 0 {
        return Err(Error::Corrupt("zero SAC replay capacity".into()));
    }
    let policy = r.mlp()?;
    if policy.input_dim() != SAC_OBS_DIM {
        return Err(Error::Corrupt("SAC policy input width".into()));
    }
    let policy_opt = r.adam(&policy)?;
    let q = [r.tracked()?, r.tracked()?];
    r.finish("incentive section")?;
    Ok(SacAgent {
        policy,
        policy_opt,
        q,
        replay: ReplayBuffer::new(config.replay_capacity),
        config,
        alpha_max,
    })
}

/// Serializes whatever is given. `buffers` adds the replay contents and
/// pending controller data, which exact resumption needs.
pub fn encode(trainer: Option<&Trainer>, sac: Option<&SacAgent>, buffers: bool) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let mut section = |tag: [u8; 4], payload: Vec<u8>| {
        out.extend_from_slice(&tag);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
    };
    if let Some(t) = trainer {
        section(TAG_TRAINER, write_trainer(t));
        if buffers {
            section(TAG_BUFFERS, write_buffers(t));
        }
    }
    if let Some(a) = sac {
        section(TAG_SAC, write_sac(a));
    }
    out
}

pub fn decode(data: &[u8]) -> Result<Checkpoint> {
    if data.len() < 8 {
        if data.len() >= 4 && data[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
        }
        return Err(Error::Corrupt("file shorter than the header".into()));
    }
    if data[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
    }
    let version = u32::from_le_bytes(data[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let mut r = Reader::new(&data[8..]);
    let mut out = Checkpoint {
        trainer: None,
        sac: None,
    };
    let mut buffers = None;
    while r.pos < r.data.len() {
        let tag: [u8; 4] = r.array()?;
        let n = r.len()?;
        let payload = r.take(n)?;
        match tag {
            TAG_TRAINER => out.trainer = Some(read_trainer(payload)?),
            TAG_BUFFERS => buffers = Some(payload),
            TAG_SAC => out.sac = Some(read_sac(payload)?),
            other => {
                return Err(Error::Format(format!(
                    "unknown section tag {:?}",
                    String::from_utf8_lossy(&other)
                )))
            }
        }
    }
    if let Some(b) = buffers {
        let t = out
            .trainer
            .as_mut()
            .ok_or_else(|| Error::Corrupt("buffer section without a trainer".into()))?;
        read_buffers(b, t)?;
    }
    Ok(out)
}

pub fn save(path: &Path, trainer: Option<&Trainer>, sac: Option<&SacAgent>, buffers: bool) -> Result<()> {
    std::fs::write(path, encode(trainer, sac, buffers)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&data)
}

pub fn load_trainer(path: &Path) -> Result<Trainer> {
    load(path)?
        .trainer
        .ok_or_else(|| Error::Format(format!("{} holds no training state", path.display())))
}

pub fn load_sac(path: &Path) -> Result<SacAgent> {
    load(path)?
        .sac
        .ok_or_else(|| Error::Format(format!("{} holds no incentive controller", path.display())))
}

impl Trainer {
    /// Restores the metrics of episodes already run, e.g. from the CSV
    /// written before a checkpoint, so that a resumed run keeps one log.
    pub fn restore_log(&mut self, log: MetricsLog) -> Result<()> {
        if log.len() as u64 != self.episode {
            return Err(Error::Input(format!(
                "log has {} episodes but the checkpoint is at episode {}",
                log.len(),
                self.episode
            )));
        }
        self.log = log;
        Ok(())
    }
}
