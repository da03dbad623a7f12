mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tmlab::cmaddpg::{label_teams, ControllerNet};
use tmlab::env::{skill_update, team_of, EnvConfig, N_AGENTS, STATE_DIM};
use tmlab::eval::{fairness_stddev, population_std};
use tmlab::incentive::{dynamic_alphas, terminal_rewards, IncentiveParams, NormalizedStats, RoleAssignment, SchemeSpec};
use tmlab::metrics::{EpisodeRecord, MetricsLog};
use tmlab::nn::{binary_cross_entropy, polyak_update, Activation, Mlp};
use tmlab::replay::ReplayBuffer;
use tmlab::runner::ExperimentConfig;
use tmlab::PolicyLabel;

fn roles() -> impl Strategy<Value = RoleAssignment> {
    (0usize..2, 0usize..2).prop_map(|(t, m)| RoleAssignment::new(t, 2 * t + m).unwrap())
}

fn q_values() -> impl Strategy<Value = [f64; 4]> {
    // a small integer grid makes ties common
    prop_oneof![
        prop::array::uniform4(-3i32..3).prop_map(|a| a.map(f64::from)),
        prop::array::uniform4(-1e3f64..1e3),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn labels_match_oracle_and_never_both_win(q in q_values()) {
        let l = label_teams(&q);
        prop_assert_eq!(l, common::label_oracle(&q));
        prop_assert_eq!(l[0], l[1]);
        prop_assert_eq!(l[2], l[3]);
        prop_assert!(!(l[0] == PolicyLabel::Winning && l[2] == PolicyLabel::Winning));
    }

    #[test]
    fn unincentivized_terminal_rewards_are_zero_sum(scorer in 0usize..4, r_l in 0.1f64..100.0, roles in roles()) {
        let r = terminal_rewards(&IncentiveParams::new(0.0, 0.0).unwrap(), scorer, &roles, r_l);
        prop_assert_eq!(r.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn incentive_surplus_goes_to_the_weak_team(
        scorer in 0usize..4,
        r_l in 0.1f64..100.0,
        at in 0.0f64..3.0,
        aa in 0.0f64..3.0,
        roles in roles(),
    ) {
        let r = terminal_rewards(&IncentiveParams::new(at, aa).unwrap(), scorer, &roles, r_l);
        let base = terminal_rewards(&IncentiveParams::new(0.0, 0.0).unwrap(), scorer, &roles, r_l);
        let surplus: f64 = r.iter().zip(&base).map(|(a, b)| a - b).sum();
        let expected = if team_of(scorer) != roles.weak_team() {
            0.0
        } else if scorer == roles.weak_agent() {
            2.0 * (at + aa) * r_l
        } else {
            2.0 * at * r_l
        };
        prop_assert!((surplus - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
        for i in 0..N_AGENTS {
            if team_of(i) != team_of(scorer) {
                prop_assert_eq!(r[i], -r_l);
            }
        }
    }

    #[test]
    fn static_team_is_static_agent_without_agent_bonus(
        at in 0.0f64..2.0,
        scorer in 0usize..4,
        roles in roles(),
    ) {
        let team = SchemeSpec::StaticTeam { alpha_team: at };
        let agent = SchemeSpec::StaticAgent { alpha_team: at, alpha_agent: 0.0 };
        let window = tmlab::incentive::StatsWindow::new(10).unwrap();
        let speeds = [4.0; 4];
        let p = team.params(&window, &speeds, &roles, 0.0).unwrap();
        let q = agent.params(&window, &speeds, &roles, 0.0).unwrap();
        prop_assert_eq!(terminal_rewards(&p, scorer, &roles, 30.0), terminal_rewards(&q, scorer, &roles, 30.0));
    }

    #[test]
    fn dynamic_alphas_are_clamped_and_scale_free(
        raw in prop::array::uniform4(0u32..500),
        k in 1u32..50,
        roles in roles(),
    ) {
        let a = dynamic_alphas(&NormalizedStats::from_raw(raw.map(f64::from)).unwrap(), &roles);
        prop_assert!(a.alpha_team >= 0.0 && a.alpha_agent >= 0.0);
        let scaled = raw.map(|c| f64::from(c * k));
        let b = dynamic_alphas(&NormalizedStats::from_raw(scaled).unwrap(), &roles);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn symmetric_statistics_give_zero_alphas(v in 0.0f64..100.0, roles in roles()) {
        let a = dynamic_alphas(&NormalizedStats::from_raw([v; 4]).unwrap(), &roles);
        prop_assert_eq!(a.alpha_team, 0.0);
        prop_assert_eq!(a.alpha_agent, 0.0);
    }

    #[test]
    fn normalized_agent_stats_lie_in_unit_interval(raw in prop::array::uniform4(0.0f64..1e6)) {
        let s = NormalizedStats::from_raw(raw).unwrap();
        for v in s.agents() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn cross_entropy_is_nonnegative(p in 0.0f64..=1.0, winning in any::<bool>()) {
        let t = if winning { 1.0 } else { 0.0 };
        let (loss, _) = binary_cross_entropy(p, t);
        prop_assert!(loss >= 0.0);
        if p == t {
            prop_assert!(loss < 1e-9);
        }
    }

    #[test]
    fn skill_update_is_monotone_with_fixed_point(s in 0.01f64..4.0, limit in 4.0f64..8.0, rate in 0.0f64..1.0) {
        let env = EnvConfig { max_speed_limit: limit, skill_rate: rate, ..EnvConfig::default() };
        let next = skill_update(s, &env);
        prop_assert!(next >= s && next <= limit);
        prop_assert_eq!(skill_update(limit, &env), limit);
    }

    #[test]
    fn replay_is_fifo_and_sampling_is_pure(cap in 1usize..40, n in 0usize..100, batch in 1usize..20, seed in any::<u64>()) {
        let mut b = ReplayBuffer::new(cap);
        for k in 0..n {
            b.push(k);
        }
        prop_assert_eq!(b.len(), n.min(cap));
        let mut kept: Vec<usize> = b.iter().copied().collect();
        kept.sort_unstable();
        let expected: Vec<usize> = (n.saturating_sub(cap)..n).collect();
        prop_assert_eq!(&kept, &expected);
        let before: Vec<usize> = b.iter().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = b.sample(batch, &mut rng);
        prop_assert_eq!(sample.is_some(), b.len() >= batch);
        let after: Vec<usize> = b.iter().copied().collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn fairness_is_permutation_invariant(rows in prop::collection::vec(prop::option::of(0usize..4), 1..60), perm in Just([0usize, 1, 2, 3]).prop_shuffle()) {
        let log = |map: &dyn Fn(usize) -> usize| {
            let mut l = MetricsLog::new();
            for (k, s) in rows.iter().enumerate() {
                let mut landmark = [0u8; 4];
                if let Some(s) = s {
                    landmark[map(*s)] = 1;
                }
                l.push(EpisodeRecord { episode: k as u64, landmark, ..EpisodeRecord::default() });
            }
            l
        };
        let a = fairness_stddev(&log(&|i| i), rows.len()).unwrap();
        let b = fairness_stddev(&log(&|i| perm[i]), rows.len()).unwrap();
        prop_assert!((a - b).abs() <= 1e-15);
        // bounded by a single scorer taking every touch
        prop_assert!(a <= population_std(&[1.0, 0.0, 0.0, 0.0]) + 1e-15);
    }

    #[test]
    fn polyak_targets_stay_in_hull_and_contract(seed in any::<u64>(), rate in 0.01f64..1.0, n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = [3, 4, 2];
        let source = Mlp::init_uniform(&sizes, Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let start = Mlp::init_uniform(&sizes, Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let mut target = start.clone();
        for _ in 0..n {
            polyak_update(&mut target, &source, rate).unwrap();
        }
        let bound = (1.0 - rate).powi(n as i32);
        for ((t, s), t0) in target.params().iter().zip(source.params()).zip(start.params()) {
            prop_assert!(*t >= s.min(*t0) - 1e-12 && *t <= s.max(*t0) + 1e-12);
            prop_assert!((t - s).abs() <= bound * (t0 - s).abs() + 1e-12);
        }
        if rate == 1.0 {
            let mut again = target.clone();
            polyak_update(&mut again, &source, 1.0).unwrap();
            prop_assert_eq!(again.params(), target.params());
        }
    }

    #[test]
    fn controller_output_is_a_probability(seed in any::<u64>(), view in prop::array::uniform20(-50.0f64..50.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = ControllerNet::new(&[16, 8], 1e-3, &mut rng).unwrap();
        let v: [f64; STATE_DIM] = view;
        let p = c.probability(&v).unwrap();
        prop_assert!((0.0..=1.0).contains(&p) && p.is_finite());
        prop_assert_eq!(p, c.probability(&v).unwrap());
    }

    #[test]
    fn config_text_round_trips(dt in 0.01f64..0.5, batch in 1usize..512, seeds in prop::collection::vec(0u64..1000, 1..5), name in prop::sample::select(SchemeSpec::NAMES.to_vec())) {
        let mut c = ExperimentConfig::preset(name).unwrap();
        c.train.env.dt = dt;
        c.train.train.batch = batch;
        c.seeds = seeds;
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        prop_assert_eq!(back, c);
    }
}

#[test]
fn environment_invariants_hold_under_random_play() {
    let mut env = EnvConfig::default();
    env.initial_max_speeds = [4.0, 3.0, 2.0, 1.0];
    let steps = common::check_env_invariants(&env, 300, 11).unwrap();
    assert!(steps > 300);
}

#[test]
fn metrics_csv_round_trips_exactly() {
    let mut log = MetricsLog::new();
    for k in 0..20u64 {
        log.push(EpisodeRecord {
            episode: k,
            team_reward: [-(k as f64) / 3.0, 0.1 * k as f64],
            landmark: [u8::from(k % 4 == 0), 0, u8::from(k % 4 == 2), 0],
            winpol: [1.0 / 7.0, 0.0],
            speeds: [4.0, 3.9999999999, 2.0 + 1e-15, 1.0],
            incentive_team: 0.3,
            incentive_agent: std::f64::consts::PI,
            collisions: k,
        });
    }
    let text = log.to_csv();
    let back = MetricsLog::from_csv(&text).unwrap();
    assert_eq!(back, log);
    assert_eq!(back.to_csv(), text);
}
