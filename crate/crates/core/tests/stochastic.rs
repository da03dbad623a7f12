//! Monte-Carlo checks of the sampling code against closed forms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tmlab::cmaddpg::{exploration_gate, exploration_probability};
use tmlab::nn::{squashed_gaussian_sample, squashed_log_density};
use tmlab::replay::ReplayBuffer;

#[test]
fn pre_squash_mean_within_three_standard_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (mean, log_std) in [(0.3, -0.5), (-1.2, 0.4), (0.0, 0.0)] {
        let n = 100_000;
        let sum: f64 = (0..n)
            .map(|_| squashed_gaussian_sample(&[mean], &[log_std], &mut rng).pre_squash[0])
            .sum();
        let se = f64::exp(log_std) / (n as f64).sqrt();
        let got = sum / n as f64;
        assert!((got - mean).abs() < 3.0 * se, "mean {mean}: got {got}, se {se}");
    }
}

#[test]
fn log_density_matches_histogram() {
    let (mean, log_std) = (0.2, -0.3);
    let n = 1_000_000;
    let bins = 100;
    let width = 2.0 / bins as f64;
    let mut counts = vec![0u64; bins];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..n {
        let a = squashed_gaussian_sample(&[mean], &[log_std], &mut rng).action[0];
        let k = (((a + 1.0) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let mut checked = 0;
    for (k, &c) in counts.iter().enumerate() {
        let lo = -1.0 + k as f64 * width;
        // density averaged over the bin by Simpson's rule in action space
        let density = |a: f64| squashed_log_density(&[mean], &[log_std], &[a.atanh()]).exp();
        let expected = width / 6.0 * (density(lo + 1e-12) + 4.0 * density(lo + width / 2.0) + density(lo + width - 1e-12));
        if expected * n as f64 >= 2000.0 {
            let empirical = c as f64 / n as f64;
            assert!((empirical / expected - 1.0).abs() < 0.05, "bin {k}: {empirical} vs {expected}");
            checked += 1;
        }
    }
    assert!(checked >= 30, "{checked}");
}

#[test]
fn exploration_gate_fires_with_probability_one_over_e_at_c() {
    let c = 400.0;
    assert!((exploration_probability(400, c) - (-1.0f64).exp()).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    let hits = (0..n).filter(|_| exploration_gate(400, c, &mut rng)).count() as f64;
    let p = (-1.0f64).exp();
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((hits / n as f64 - p).abs() < 3.0 * se);
}

#[test]
fn replay_sampling_is_uniform_by_chi_square() {
    let mut buffer = ReplayBuffer::new(10);
    for k in 0..25usize {
        buffer.push(k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut counts = [0u64; 10];
    let draws = 100_000;
    for _ in 0..draws / 10 {
        for slot in buffer.sample_slots(10, &mut rng).unwrap() {
            counts[slot] += 1;
        }
    }
    let expected = draws as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // upper 1% point of the chi-square distribution with 9 degrees of freedom
    assert!(chi2 < 21.666, "chi2 {chi2}, counts {counts:?}");
}
