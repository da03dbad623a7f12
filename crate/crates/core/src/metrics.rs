//! Per-episode training log and its CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::env::N_AGENTS;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: &str = "episode,team0_reward,team1_reward,lm_a0,lm_a1,lm_a2,lm_a3,\
winpol_t0,winpol_t1,speed_a0,speed_a1,speed_a2,speed_a3,incentive_team,incentive_agent,collisions";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeRecord {
    /// 1-based episode index.
    pub episode: u64,
    /// Mean episode return of each team's members.
    pub team_reward: [f64; 2],
    /// 1 for the agent that touched a landmark, else 0.
    pub landmark: [u8; N_AGENTS],
    /// Fraction of steps each team ran its winning policy.
    pub winpol: [f64; 2],
    /// Speed caps at the end of the episode.
    pub speeds: [f64; N_AGENTS],
    pub incentive_team: f64,
    pub incentive_agent: f64,
    pub collisions: u64,
}

impl EpisodeRecord {
    pub fn scorer(&self) -> Option<usize> {
        self.landmark.iter().position(|&v| v == 1)
    }

    fn write_csv_row(&self, out: &mut String) {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.team_reward[0],
            self.team_reward[1],
            self.landmark[0],
            self.landmark[1],
            self.landmark[2],
            self.landmark[3],
            self.winpol[0],
            self.winpol[1],
            self.speeds[0],
            self.speeds[1],
            self.speeds[2],
            self.speeds[3],
            self.incentive_team,
            self.incentive_agent,
            self.collisions
        );
    }

    fn parse_csv_row(line: &str, line_no: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 16 {
            return Err(Error::Input(format!(
                "metrics line {line_no}: expected 16 fields, found {}",
                fields.len()
            )));
        }
        let bad = |what: &str| Error::Input(format!("metrics line {line_no}: bad {what}"));
        let real = |k: usize| fields[k].parse::<f64>().map_err(|_| bad(CSV_HEADER.split(',').nth(k).unwrap_or("field")));
        let flag = |k: usize| match fields[k] {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            _ => Err(bad("landmark flag")),
        };
        Ok(EpisodeRecord {
            episode: fields[0].parse().map_err(|_| bad("episode"))?,
            team_reward: [real(1)?, real(2)?],
            landmark: [flag(3)?, flag(4)?, flag(5)?, flag(6)?],
            winpol: [real(7)?, real(8)?],
            speeds: [real(9)?, real(10)?, real(11)?, real(12)?],
            incentive_team: real(13)?,
            incentive_agent: real(14)?,
            collisions: fields[15].parse().map_err(|_| bad("collisions"))?,
        })
    }
}

/// Append-only sequence of episode records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    rows: Vec<EpisodeRecord>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: EpisodeRecord) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[EpisodeRecord] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// The last `n` rows (all of them if fewer).
    pub fn tail(&self, n: usize) -> &[EpisodeRecord] {
        &self.rows[self.rows.len().saturating_sub(n)..]
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# tmlab metrics schema {SCHEMA_VERSION}\n{CSV_HEADER}\n");
        for r in &self.rows {
            r.write_csv_row(&mut s);
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut log = MetricsLog::new();
        let mut header_seen = false;
        for (k, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            if !header_seen {
                if line != CSV_HEADER {
                    return Err(Error::Input(format!("metrics line {}: unexpected header", k + 1)));
                }
                header_seen = true;
                continue;
            }
            log.push(EpisodeRecord::parse_csv_row(line, k + 1)?);
        }
        if !header_seen {
            return Err(Error::Input("metrics file has no header".into()));
        }
        Ok(log)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}
