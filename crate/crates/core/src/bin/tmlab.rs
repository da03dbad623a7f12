use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tmlab::eval::{fairness_across_seeds, paired_eval, tournament, FrozenTeam, PairedEvalReport};
use tmlab::incentive_rl::pretrain;
use tmlab::metrics::MetricsLog;
use tmlab::runner::{checkpoint, config_hash, run_experiment, run_to_completion, resume, thread_cap, ExperimentConfig};
use tmlab::{Error, Result};

#[derive(Parser)]
#[command(name = "tmlab", version, about = "Touch-Mark multi-agent training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `section.key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named scheme preset, applied before the config file.
    #[arg(long)]
    scheme: Option<String>,
    /// Training runs only this seed; evaluation samples start positions with it.
    #[arg(long)]
    seed: Option<u64>,
    /// Episodes per seed, overriding `experiment.episodes`.
    #[arg(long)]
    episodes: Option<u64>,
    /// Output directory for training, or summary CSV for evaluation.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write metrics, checkpoints and a manifest.
    Train {
        #[command(flatten)]
        common: Common,
        /// Resume the run stored in this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Pretrained incentive checkpoint for the learned-incentive schemes.
        #[arg(long)]
        incentive: Option<PathBuf>,
    },
    /// Paired evaluation of two checkpointed teams (`path[:team]`).
    Eval {
        #[command(flatten)]
        common: Common,
        /// The two entrants, each `path` or `path:team`.
        #[arg(long, num_args = 2, required = true)]
        checkpoint: Vec<String>,
    },
    /// Round robin over checkpointed teams (`path[:team]`).
    Tournament {
        #[command(flatten)]
        common: Common,
        /// Two or more entrants, each `path` or `path:team`.
        #[arg(long, num_args = 2.., required = true)]
        checkpoint: Vec<String>,
    },
    /// Landmark-rate standard deviation per metrics file, with a seed-level interval.
    Fairness {
        #[arg(long, num_args = 1.., required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        window: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the learned incentive controller and write its checkpoint.
    PretrainIncentive {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.scheme {
        Some(name) => ExperimentConfig::preset(name)?,
        None => ExperimentConfig::default(),
    };
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        config.apply(&text)?;
    }
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    if let Some(n) = common.episodes {
        config.episodes = n;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

/// Splits `path[:team]`; the team defaults to 0.
fn team_arg(arg: &str) -> (PathBuf, usize) {
    match arg.rsplit_once(':') {
        Some((path, "0")) => (PathBuf::from(path), 0),
        Some((path, "1")) => (PathBuf::from(path), 1),
        _ => (PathBuf::from(arg), 0),
    }
}

fn load_teams(args: &[String]) -> Result<(Vec<FrozenTeam>, tmlab::env::EnvConfig)> {
    let mut teams = Vec::new();
    let mut env = None;
    for a in args {
        let (path, team) = team_arg(a);
        let t = checkpoint::load_trainer(&path)?;
        env.get_or_insert_with(|| t.config().env.clone());
        teams.push(FrozenTeam::from_trainer(&t, team));
    }
    let env = env.ok_or_else(|| Error::Input("no checkpoints given".into()))?;
    Ok((teams, env))
}

fn write_summary(path: Option<&Path>, text: &str) -> Result<()> {
    if let Some(p) = path {
        std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

const EVAL_HEADER: &str = "first,second,episodes,team_rate_first,team_rate_second,\
lm_first0,lm_first1,lm_second0,lm_second1,wins_first,wins_second,collision_rate,winpol_first,winpol_second";

fn eval_row(first: &str, second: &str, r: &PairedEvalReport) -> String {
    let a = r.agent_landmark_rate;
    format!(
        "{first},{second},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.episodes,
        r.team_landmark_rate[0],
        r.team_landmark_rate[1],
        a[0],
        a[1],
        a[2],
        a[3],
        r.wins[0],
        r.wins[1],
        r.collision_rate,
        r.win_policy_usage[0],
        r.win_policy_usage[1]
    )
}

fn print_eval(first: &str, second: &str, r: &PairedEvalReport) {
    println!("{first} vs {second} over {} episodes", r.episodes);
    println!("  {:<10} {:>10} {:>10} {:>10} {:>8} {:>8}", "team", "rate", "member0", "member1", "wins", "winpol");
    for (k, label) in ["first", "second"].into_iter().enumerate() {
        println!(
            "  {:<10} {:>10.4} {:>10.4} {:>10.4} {:>8} {:>8.3}",
            label,
            r.team_landmark_rate[k],
            r.agent_landmark_rate[2 * k],
            r.agent_landmark_rate[2 * k + 1],
            r.wins[k],
            r.win_policy_usage[k]
        );
    }
    println!("  collisions per episode {:.3}", r.collision_rate);
}

fn cmd_train(common: &Common, ckpt: Option<&Path>, incentive: Option<&Path>) -> Result<()> {
    if let Some(path) = ckpt {
        let mut trainer = resume(path)?;
        let mut config = match &common.config {
            Some(_) => load_config(common)?,
            None => ExperimentConfig::default(),
        };
        config.train = trainer.config().clone();
        // keep storing buffers if the checkpoint being resumed had them
        config.checkpoint_buffers |= !trainer.replay().is_empty();
        if let Some(n) = common.episodes {
            config.episodes = n;
        } else {
            config.episodes = trainer.config().planned_episodes;
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        let done = run_to_completion(&config, &mut trainer, dir)?;
        println!("resumed to episode {} in {}", trainer.episode(), done.metrics.display());
        return Ok(());
    }
    let config = load_config(common)?;
    let sac = match incentive {
        Some(p) => Some(checkpoint::load_sac(p)?),
        None => None,
    };
    let manifest = run_experiment(&config, sac.as_ref(), thread_cap())?;
    println!("config {}", config_hash(&config));
    println!("{:>8} {:>10} {:>10}  metrics", "seed", "team0", "team1");
    // team rewards are averaged over each seed's final 100 episodes
    for s in &manifest.seeds {
        let log = MetricsLog::read_csv(&s.metrics)?;
        let tail = log.tail(log.len().min(100));
        let mean = |k: usize| {
            if tail.is_empty() {
                "-".to_string()
            } else {
                format!("{:.3}", tail.iter().map(|r| r.team_reward[k]).sum::<f64>() / tail.len() as f64)
            }
        };
        println!("{:>8} {:>10} {:>10}  {}", s.seed, mean(0), mean(1), s.metrics.display());
    }
    Ok(())
}

fn cmd_eval(common: &Common, args: &[String]) -> Result<()> {
    let config = load_config(common)?;
    let (teams, env) = load_teams(args)?;
    let seed = common.seed.unwrap_or(0);
    let report = paired_eval(&teams[0], &teams[1], &env, config.eval_configs, seed)?;
    print_eval(&args[0], &args[1], &report);
    let text = format!("{EVAL_HEADER}\n{}\n", eval_row(&args[0], &args[1], &report));
    write_summary(common.out.as_deref(), &text)
}

fn cmd_tournament(common: &Common, args: &[String]) -> Result<()> {
    let config = load_config(common)?;
    let (teams, env) = load_teams(args)?;
    let report = tournament(&teams, &env, config.eval_configs, common.seed.unwrap_or(0))?;
    let mut text = format!("{EVAL_HEADER}\n");
    for p in &report.pairings {
        print_eval(&args[p.first], &args[p.second], &p.report);
        text.push_str(&eval_row(&args[p.first], &args[p.second], &p.report));
        text.push('\n');
    }
    println!("{:<40} {:>10}", "entrant", "weak share");
    for (name, s) in args.iter().zip(&report.weak_share) {
        println!("{name:<40} {s:>10.4}");
    }
    write_summary(common.out.as_deref(), &text)
}

fn cmd_fairness(metrics: &[PathBuf], window: usize, out: Option<&Path>) -> Result<()> {
    let logs = metrics.iter().map(|p| MetricsLog::read_csv(p)).collect::<Result<Vec<_>>>()?;
    let report = fairness_across_seeds(&logs, window)?;
    let mut text = String::from("metrics,stddev\n");
    println!("{:<50} {:>10}", "metrics", "stddev");
    for (p, s) in metrics.iter().zip(&report.per_seed) {
        println!("{:<50} {s:>10.4}", p.display());
        text.push_str(&format!("{},{s}\n", p.display()));
    }
    match report.half_width {
        Some(h) => println!("mean {:.4} +/- {h:.4}", report.mean),
        None => println!("mean {:.4}", report.mean),
    }
    text.push_str(&format!("mean,{}\n", report.mean));
    if let Some(h) = report.half_width {
        text.push_str(&format!("half_width,{h}\n"));
    }
    write_summary(out, &text)
}

fn cmd_pretrain(common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let seed = config.seeds[0];
    let mut rl = config.rl.clone();
    if let Some(n) = common.episodes {
        rl.pretrain_episodes = n;
    }
    let mut train = config.train.clone();
    train.planned_episodes = rl.pretrain_episodes;
    let outcome = pretrain(train, &rl, seed)?;
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::Io {
        path: config.out_dir.clone(),
        source: e,
    })?;
    let ckpt = config.out_dir.join("incentive.tmlb");
    checkpoint::save(&ckpt, Some(&outcome.trainer), Some(&outcome.agent), false)?;
    let mut text = String::from("block,alpha,reward,lm_a0,lm_a1,lm_a2,lm_a3\n");
    for (k, b) in outcome.blocks.iter().enumerate() {
        let c = b.counts;
        text.push_str(&format!("{k},{},{},{},{},{},{}\n", b.alpha, b.reward, c[0], c[1], c[2], c[3]));
    }
    write_summary(Some(&config.out_dir.join("incentive_blocks.csv")), &text)?;
    println!("{:>8} {:>10} {:>10}", "block", "alpha", "reward");
    let shown = outcome.blocks.len().saturating_sub(10);
    for (k, b) in outcome.blocks.iter().enumerate().skip(shown) {
        println!("{k:>8} {:>10.4} {:>10.4}", b.alpha, b.reward);
    }
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Input(_) => 2,
        Error::Io { .. } => 3,
        Error::Format(_) | Error::Corrupt(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train {
            common,
            checkpoint,
            incentive,
        } => cmd_train(common, checkpoint.as_deref(), incentive.as_deref()),
        Command::Eval { common, checkpoint } => cmd_eval(common, checkpoint),
        Command::Tournament { common, checkpoint } => cmd_tournament(common, checkpoint),
        Command::Fairness { metrics, window, out } => cmd_fairness(metrics, *window, out.as_deref()),
        Command::PretrainIncentive { common } => cmd_pretrain(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tmlab: error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
