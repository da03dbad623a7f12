//! C ABI for the tmlab environment, frozen checkpointed teams and the
//! incentive and fairness arithmetic.
//!
//! Every function returns a [`TmlabStatus`]. On failure a description is
//! kept per thread and can be read with [`tmlab_last_error`]. Handles are
//! opaque and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tmlab::env::{
    self, EnvConfig, WorldState, ACTION_DIM, N_AGENTS, OBS_DIM, STATE_DIM,
};
use tmlab::eval::{fairness_stddev, FrozenTeam};
use tmlab::incentive::{self, IncentiveParams, NormalizedStats, RoleAssignment};
use tmlab::metrics::MetricsLog;
use tmlab::runner::{checkpoint, ExperimentConfig};
use tmlab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TmlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Corrupt = 6,
    State = 7,
    Numeric = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(TmlabStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape { .. } | Error::Input(_) => TmlabStatus::InvalidInput,
            Error::Config { .. } => TmlabStatus::Config,
            Error::Io { .. } => TmlabStatus::Io,
            Error::Format(_) => TmlabStatus::Format,
            Error::Corrupt(_) => TmlabStatus::Corrupt,
            Error::State(_) => TmlabStatus::State,
            Error::Numeric(_) | Error::Training { .. } => TmlabStatus::Numeric,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(TmlabStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TmlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TmlabStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TmlabStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(TmlabStatus::InvalidInput, format!("`{what}` is not UTF-8")))
}

fn roles(weak_team: u32, weak_agent: u32) -> Result<RoleAssignment, Failure> {
    Ok(RoleAssignment::new(weak_team as usize, weak_agent as usize)?)
}

/// Message for the last failure on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tmlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tmlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A running Touch-Mark episode.
pub struct TmlabEnv {
    config: EnvConfig,
    state: WorldState,
    rng: ChaCha8Rng,
}

/// Creates an environment. `config_text` may be null for defaults, or hold
/// `section.key = value` lines in the experiment configuration format.
///
/// # Safety
/// `config_text` must be null or a valid NUL-terminated string and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tmlab_env_new(config_text: *const c_char, seed: u64, out: *mut *mut TmlabEnv) -> TmlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = if config_text.is_null() {
            EnvConfig::default()
        } else {
            ExperimentConfig::parse(text(config_text, "config_text")?)?.train.env
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = env::reset(&config, &mut rng);
        *out = Box::into_raw(Box::new(TmlabEnv { config, state, rng }));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`tmlab_env_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tmlab_env_free(handle: *mut TmlabEnv) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Starts a new episode. With `speeds` null the current speed caps carry
/// over; otherwise it points to four caps.
///
/// # Safety
/// `handle` must be a live environment and `speeds` null or four doubles.
#[no_mangle]
pub unsafe extern "C" fn tmlab_env_reset(handle: *mut TmlabEnv, speeds: *const f64) -> TmlabStatus {
    guard(|| {
        let e = handle.as_mut().ok_or_else(|| null("handle"))?;
        let caps: [f64; N_AGENTS] = if speeds.is_null() {
            e.state.max_speeds()
        } else {
            slice(speeds, N_AGENTS, "speeds")?.try_into().expect("length checked")
        };
        let episode = e.state.episode_index + 1;
        e.state = env::reset_with_speeds(&e.config, &caps, &mut e.rng)?;
        e.state.episode_index = episode;
        Ok(())
    })
}

/// Advances one step. `actions` holds four `[x, y]` pairs in agent order.
/// Any of `rewards` (four doubles), `scorer` (-1 when nobody touched) and
/// `done` may be null.
///
/// # Safety
/// Pointers must be null (where allowed) or valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn tmlab_env_step(
    handle: *mut TmlabEnv,
    actions: *const f64,
    rewards: *mut f64,
    scorer: *mut i32,
    done: *mut bool,
) -> TmlabStatus {
    guard(|| {
        let e = handle.as_mut().ok_or_else(|| null("handle"))?;
        let a = slice(actions, N_AGENTS * ACTION_DIM, "actions")?;
        let joint: [[f64; ACTION_DIM]; N_AGENTS] = std::array::from_fn(|i| [a[2 * i], a[2 * i + 1]]);
        let (next, outcome) = env::step(&e.state, &joint, &e.config)?;
        e.state = next;
        if !rewards.is_null() {
            slice_mut(rewards, N_AGENTS, "rewards")?.copy_from_slice(&outcome.rewards);
        }
        if let Some(s) = scorer.as_mut() {
            *s = outcome.scorer.map_or(-1, |i| i as i32);
        }
        if let Some(d) = done.as_mut() {
            *d = outcome.done;
        }
        Ok(())
    })
}

/// Writes the 15-value observation of `agent`.
///
/// # Safety
/// `handle` must be a live environment and `out` valid for 15 doubles.
#[no_mangle]
pub unsafe extern "C" fn tmlab_env_observe(handle: *const TmlabEnv, agent: u32, out: *mut f64) -> TmlabStatus {
    guard(|| {
        let e = handle.as_ref().ok_or_else(|| null("handle"))?;
        if agent as usize >= N_AGENTS {
            return Err(Failure(TmlabStatus::InvalidInput, format!("agent {agent} out of range")));
        }
        slice_mut(out, OBS_DIM, "out")?.copy_from_slice(&env::observe(&e.state, agent as usize));
        Ok(())
    })
}

/// Writes the 20-value global state.
///
/// # Safety
/// `handle` must be a live environment and `out` valid for 20 doubles.
#[no_mangle]
pub unsafe extern "C" fn tmlab_env_global_state(handle: *const TmlabEnv, out: *mut f64) -> TmlabStatus {
    guard(|| {
        let e = handle.as_ref().ok_or_else(|| null("handle"))?;
        slice_mut(out, STATE_DIM, "out")?.copy_from_slice(&env::global_state(&e.state));
        Ok(())
    })
}

/// Current speed caps of the four agents.
///
/// # Safety
/// `handle` must be a live environment and `out` valid for four doubles.
#[no_mangle]
pub unsafe extern "C" fn tmlab_env_speeds(handle: *const TmlabEnv, out: *mut f64) -> TmlabStatus {
    guard(|| {
        let e = handle.as_ref().ok_or_else(|| null("handle"))?;
        slice_mut(out, N_AGENTS, "out")?.copy_from_slice(&e.state.max_speeds());
        Ok(())
    })
}

/// One trained team with learning switched off.
pub struct TmlabTeam {
    team: FrozenTeam,
}

/// Loads team `team` (0 or 1) from a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tmlab_team_load(path: *const c_char, team: u32, out: *mut *mut TmlabTeam) -> TmlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if team > 1 {
            return Err(Failure(TmlabStatus::InvalidInput, format!("team must be 0 or 1, got {team}")));
        }
        let path = PathBuf::from(text(path, "path")?);
        let trainer = checkpoint::load_trainer(&path)?;
        let frozen = FrozenTeam::from_trainer(&trainer, team as usize);
        *out = Box::into_raw(Box::new(TmlabTeam { team: frozen }));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`tmlab_team_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tmlab_team_free(handle: *mut TmlabTeam) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Noise-free actions for the team playing in `slot` of `env`: two `[x, y]`
/// pairs into `actions`, and the selected policy (1 winning, 2 losing) into
/// `label` unless it is null.
///
/// # Safety
/// Handles must be live, `actions` valid for four doubles.
#[no_mangle]
pub unsafe extern "C" fn tmlab_team_act(
    handle: *const TmlabTeam,
    environment: *const TmlabEnv,
    slot: u32,
    actions: *mut f64,
    label: *mut u8,
) -> TmlabStatus {
    guard(|| {
        let t = handle.as_ref().ok_or_else(|| null("handle"))?;
        let e = environment.as_ref().ok_or_else(|| null("environment"))?;
        let (a, l) = t.team.act(&e.state, slot as usize)?;
        slice_mut(actions, 2 * ACTION_DIM, "actions")?.copy_from_slice(&[a[0][0], a[0][1], a[1][0], a[1][1]]);
        if let Some(out) = label.as_mut() {
            *out = l.number();
        }
        Ok(())
    })
}

/// Terminal rewards when `scorer` touches a landmark, with the weak team's
/// bonus multipliers.
///
/// # Safety
/// `out` must be valid for four doubles.
#[no_mangle]
pub unsafe extern "C" fn tmlab_terminal_rewards(
    scorer: u32,
    r_l: f64,
    alpha_team: f64,
    alpha_agent: f64,
    weak_team: u32,
    weak_agent: u32,
    out: *mut f64,
) -> TmlabStatus {
    guard(|| {
        if scorer as usize >= N_AGENTS {
            return Err(Failure(TmlabStatus::InvalidInput, format!("scorer {scorer} out of range")));
        }
        let params = IncentiveParams::new(alpha_team, alpha_agent)?;
        let r = incentive::terminal_rewards(&params, scorer as usize, &roles(weak_team, weak_agent)?, r_l);
        slice_mut(out, N_AGENTS, "out")?.copy_from_slice(&r);
        Ok(())
    })
}

/// Dynamic multipliers from four raw per-agent statistics (landmark counts
/// or speeds).
///
/// # Safety
/// `stats` must be valid for four doubles; the outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn tmlab_dynamic_alphas(
    stats: *const f64,
    weak_team: u32,
    weak_agent: u32,
    alpha_team: *mut f64,
    alpha_agent: *mut f64,
) -> TmlabStatus {
    guard(|| {
        let raw: [f64; N_AGENTS] = slice(stats, N_AGENTS, "stats")?.try_into().expect("length checked");
        let at = alpha_team.as_mut().ok_or_else(|| null("alpha_team"))?;
        let aa = alpha_agent.as_mut().ok_or_else(|| null("alpha_agent"))?;
        let p = incentive::dynamic_alphas(&NormalizedStats::from_raw(raw)?, &roles(weak_team, weak_agent)?);
        *at = p.alpha_team;
        *aa = p.alpha_agent;
        Ok(())
    })
}

/// Standard deviation of per-agent landmark rates over the last `window`
/// episodes of a metrics CSV.
///
/// # Safety
/// `metrics_path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tmlab_fairness(metrics_path: *const c_char, window: u64, out: *mut f64) -> TmlabStatus {
    guard(|| {
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        let log = MetricsLog::read_csv(&PathBuf::from(text(metrics_path, "metrics_path")?))?;
        *o = fairness_stddev(&log, window as usize)?;
        Ok(())
    })
}
