use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
algorithm = cmaddpg
train.hidden = 16
train.batch = 16
train.update_every = 2
train.warmup = 32
cmaddpg.controller_hidden = 8
cmaddpg.controller_interval = 3
cmaddpg.controller_batch = 32
cmaddpg.controller_passes = 2
eval.configs = 5
";

fn tmlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmlab"))
        .args(args)
        .current_dir(cwd)
        .env("TMLAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.cfg"), format!("{TINY}{extra}")).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn zero_episodes_writes_header_only() {
    let dir = setup("");
    let o = tmlab(&["train", "--config", "c.cfg", "--episodes", "0", "--out", "run"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("run/seed_0/metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with('#'));
    assert_eq!(lines[1], tmlab::metrics::CSV_HEADER);
}

#[test]
fn reruns_are_byte_identical_and_seeds_get_their_own_files() {
    let dir = setup("experiment.seeds = 1,2,3,4\n");
    for out in ["a", "b"] {
        let o = tmlab(&["train", "--config", "c.cfg", "--episodes", "6", "--out", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for seed in 1..=4 {
        let a = std::fs::read(dir.path().join(format!("a/seed_{seed}/metrics.csv"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("b/seed_{seed}/metrics.csv"))).unwrap();
        assert_eq!(a, b, "seed {seed}");
        assert!(dir.path().join(format!("a/seed_{seed}/checkpoint.tmlb")).exists());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    let one = std::fs::read(dir.path().join("a/seed_1/metrics.csv")).unwrap();
    let two = std::fs::read(dir.path().join("a/seed_2/metrics.csv")).unwrap();
    assert_ne!(one, two);
}

#[test]
fn bad_config_names_the_key() {
    let dir = setup("train.gamma = 1.5\n");
    let o = tmlab(&["train", "--config", "c.cfg"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("train.gamma"), "{}", stderr(&o));
    let dir = setup("env.nonsense = 3\n");
    let o = tmlab(&["train", "--config", "c.cfg"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("env.nonsense"), "{}", stderr(&o));
    let o = tmlab(&["train", "--scheme", "NoSuchScheme"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("scheme"), "{}", stderr(&o));
}

#[test]
fn fairness_rejects_short_logs() {
    let dir = setup("");
    let o = tmlab(&["train", "--config", "c.cfg", "--episodes", "5", "--out", "run"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = tmlab(&["fairness", "--metrics", "run/seed_0/metrics.csv", "--window", "1000"], dir.path());
    assert!(!o.status.success());
    let o = tmlab(
        &["fairness", "--metrics", "run/seed_0/metrics.csv", "--window", "5", "--out", "f.csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
    assert!(summary.starts_with("metrics,stddev\n"));
}

fn eval_row(dir: &Path, args: &[&str]) -> Vec<String> {
    let mut full = vec!["eval", "--config", "c.cfg", "--out", "e.csv", "--checkpoint"];
    full.extend_from_slice(args);
    let o = tmlab(&full, dir);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.join("e.csv")).unwrap();
    text.lines().nth(1).unwrap().split(',').map(str::to_string).collect()
}

#[test]
fn eval_is_mirrored_and_tournament_covers_all_pairs() {
    let dir = setup("experiment.seeds = 1,2\n");
    let o = tmlab(&["train", "--config", "c.cfg", "--episodes", "4", "--out", "run"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let a = "run/seed_1/checkpoint.tmlb";
    let b = "run/seed_2/checkpoint.tmlb:1";
    let ab = eval_row(dir.path(), &[a, b]);
    let ba = eval_row(dir.path(), &[b, a]);
    // columns: names, episodes, team rates, four agent rates, wins, collisions, win-policy usage
    let swap = |r: &[String]| {
        vec![
            r[1].clone(), r[0].clone(), r[2].clone(), r[4].clone(), r[3].clone(), r[7].clone(), r[8].clone(),
            r[5].clone(), r[6].clone(), r[10].clone(), r[9].clone(), r[11].clone(), r[13].clone(), r[12].clone(),
        ]
    };
    assert_eq!(ab, swap(&ba));

    let o = tmlab(
        &[
            "tournament", "--config", "c.cfg", "--out", "t.csv", "--checkpoint",
            "run/seed_1/checkpoint.tmlb:0", "run/seed_1/checkpoint.tmlb:1",
            "run/seed_2/checkpoint.tmlb:0", "run/seed_2/checkpoint.tmlb:1",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = std::fs::read_to_string(dir.path().join("t.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 6);
}

#[test]
fn missing_checkpoint_names_the_path() {
    let dir = setup("");
    let o = tmlab(&["eval", "--checkpoint", "gone.tmlb", "also_gone.tmlb"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("gone.tmlb"), "{}", stderr(&o));
}

#[test]
fn resumed_cli_run_matches_uninterrupted() {
    // a fixed gate constant keeps the plan length out of the dynamics
    let dir = setup("experiment.checkpoint_buffers = true\nexperiment.checkpoint_interval = 3\ncmaddpg.exploration_c = 2\n");
    let o = tmlab(&["train", "--config", "c.cfg", "--episodes", "8", "--out", "full"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = tmlab(&["train", "--config", "c.cfg", "--episodes", "5", "--out", "part"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = tmlab(
        &["train", "--checkpoint", "part/seed_0/checkpoint.tmlb", "--episodes", "8"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let full = std::fs::read(dir.path().join("full/seed_0/metrics.csv")).unwrap();
    let part = std::fs::read(dir.path().join("part/seed_0/metrics.csv")).unwrap();
    assert_eq!(full, part);
}
