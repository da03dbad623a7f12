//! Experiment execution: configuration, per-seed runs, checkpoints and the
//! run manifest.

pub mod checkpoint;
pub mod config;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::incentive_rl::SacAgent;
use crate::metrics::MetricsLog;
use crate::train::Trainer;

pub use config::ExperimentConfig;

/// Hex SHA-256 of the sorted `key = value` form, so key order in the source
/// file does not matter.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let digest = Sha256::digest(config.to_text().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedArtifacts {
    pub seed: u64,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub artifact_version: String,
    pub started_at: u64,
    pub finished_at: u64,
    pub seeds: Vec<SeedArtifacts>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// A fresh trainer for `seed` with the learned incentive attached when the
/// scheme needs one.
pub fn new_trainer(config: &ExperimentConfig, seed: u64, incentive: Option<&SacAgent>) -> Result<Trainer> {
    let mut train = config.train.clone();
    train.planned_episodes = config.episodes;
    let mut t = Trainer::new(train, seed)?;
    if config.train.scheme.rl_target().is_some() {
        let sac = incentive.ok_or_else(|| {
            Error::config(
                "scheme",
                format!("{} needs a pretrained incentive checkpoint", config.train.scheme),
            )
        })?;
        t.attach_rl_policy(sac.frozen(config.rl.period))?;
    }
    Ok(t)
}

/// Runs `trainer` until it has completed `config.episodes` episodes, writing
/// the metrics CSV and checkpoints into `dir`.
pub fn run_to_completion(config: &ExperimentConfig, trainer: &mut Trainer, dir: &Path) -> Result<SeedArtifacts> {
    create_dir(dir)?;
    let metrics = dir.join("metrics.csv");
    let checkpoint = dir.join("checkpoint.tmlb");
    let save = |t: &Trainer| -> Result<()> {
        t.log().write_csv(&metrics)?;
        checkpoint::save(&checkpoint, Some(t), None, config.checkpoint_buffers)
    };
    while trainer.episode() < config.episodes {
        let left = config.episodes - trainer.episode();
        let chunk = if config.checkpoint_interval == 0 {
            left
        } else {
            left.min(config.checkpoint_interval - trainer.episode() % config.checkpoint_interval)
        };
        trainer.run(chunk)?;
        if trainer.episode() < config.episodes {
            save(trainer)?;
        }
    }
    save(trainer)?;
    Ok(SeedArtifacts {
        seed: 0,
        metrics,
        checkpoint,
    })
}

/// Loads a checkpoint together with the metrics already written next to it.
pub fn resume(checkpoint_path: &Path) -> Result<Trainer> {
    let mut t = checkpoint::load_trainer(checkpoint_path)?;
    let metrics = checkpoint_path.with_file_name("metrics.csv");
    let log = if metrics.exists() {
        let full = MetricsLog::read_csv(&metrics)?;
        let mut log = MetricsLog::new();
        for row in full.rows().iter().take(t.episode() as usize) {
            log.push(row.clone());
        }
        log
    } else {
        MetricsLog::new()
    };
    t.restore_log(log)?;
    Ok(t)
}

/// Thread cap for parallel seeds from `TMLAB_THREADS` (default 1).
pub fn thread_cap() -> usize {
    std::env::var("TMLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Trains every configured seed and writes `manifest.json` into the output
/// directory.
pub fn run_experiment(config: &ExperimentConfig, incentive: Option<&SacAgent>, threads: usize) -> Result<RunManifest> {
    config.validate()?;
    create_dir(&config.out_dir)?;
    let started_at = unix_now();
    let run_one = |seed: u64| -> Result<SeedArtifacts> {
        let mut t = new_trainer(config, seed, incentive)?;
        let mut a = run_to_completion(config, &mut t, &seed_dir(&config.out_dir, seed))?;
        a.seed = seed;
        Ok(a)
    };
    let mut seeds = Vec::with_capacity(config.seeds.len());
    for group in config.seeds.chunks(threads.max(1)) {
        let results: Vec<Result<SeedArtifacts>> = std::thread::scope(|s| {
            let handles: Vec<_> = group.iter().map(|&seed| s.spawn(move || run_one(seed))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::State("seed worker panicked".into()))))
                .collect()
        });
        for r in results {
            seeds.push(r?);
        }
    }
    let manifest = RunManifest {
        config_hash: config_hash(config),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at: unix_now(),
        seeds,
    };
    manifest.write(&config.out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_key_order() {
        let a = ExperimentConfig::parse("env.dt = 0.05\ntrain.batch = 32\n").unwrap();
        let b = ExperimentConfig::parse("train.batch = 32\nenv.dt = 0.05\n").unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        let c = ExperimentConfig::parse("train.batch = 33\nenv.dt = 0.05\n").unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
