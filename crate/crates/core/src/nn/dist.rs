use rand::Rng;
use rand_distr::StandardNormal;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// A reparameterized draw from a tanh-squashed diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub pre_squash: Vec<f64>,
    pub noise: Vec<f64>,
}

/// Partial derivatives of a squashed sample with the noise held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedGrads {
    pub dlogp_dmean: Vec<f64>,
    pub dlogp_dlog_std: Vec<f64>,
    pub daction_dmean: Vec<f64>,
    pub daction_dlog_std: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 - tanh(u)^2)` without cancellation for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn clamp_log_std(v: f64) -> f64 {
    v.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

/// Evaluates the squashed sample for given standard-normal `noise`.
pub fn squash_with_noise(mean: &[f64], log_std: &[f64], noise: &[f64]) -> SquashedSample {
    assert_eq!(mean.len(), log_std.len());
    assert_eq!(mean.len(), noise.len());
    let mut log_prob = 0.0;
    let mut action = Vec::with_capacity(mean.len());
    let mut pre = Vec::with_capacity(mean.len());
    for ((&m, &ls), &e) in mean.iter().zip(log_std).zip(noise) {
        let ls = clamp_log_std(ls);
        let u = m + ls.exp() * e;
        log_prob += -0.5 * e * e - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u);
        pre.push(u);
        action.push(u.tanh());
    }
    SquashedSample {
        action,
        log_prob,
        pre_squash: pre,
        noise: noise.to_vec(),
    }
}

pub fn squashed_gaussian_sample<R: Rng + ?Sized>(
    mean: &[f64],
    log_std: &[f64],
    rng: &mut R,
) -> SquashedSample {
    let noise: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
    squash_with_noise(mean, log_std, &noise)
}

/// Log-density of the squashed distribution at pre-squash point `u`.
pub fn squashed_log_density(mean: &[f64], log_std: &[f64], pre_squash: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(pre_squash)
        .map(|((&m, &ls), &u)| {
            let ls = clamp_log_std(ls);
            let z = (u - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u)
        })
        .sum()
}

/// Gradients of the log-probability and of the action with respect to the
/// distribution parameters along the reparameterization path. Components of
/// `log_std` outside the clamp range receive zero gradient.
pub fn squashed_grads(sample: &SquashedSample, log_std: &[f64]) -> SquashedGrads {
    let n = sample.action.len();
    let mut g = SquashedGrads {
        dlogp_dmean: vec![0.0; n],
        dlogp_dlog_std: vec![0.0; n],
        daction_dmean: vec![0.0; n],
        daction_dlog_std: vec![0.0; n],
    };
    for k in 0..n {
        let a = sample.action[k];
        let inside = (LOG_STD_MIN..=LOG_STD_MAX).contains(&log_std[k]);
        let sigma_eps = clamp_log_std(log_std[k]).exp() * sample.noise[k];
        let da_du = 1.0 - a * a;
        g.dlogp_dmean[k] = 2.0 * a;
        g.daction_dmean[k] = da_du;
        if inside {
            g.dlogp_dlog_std[k] = -1.0 + 2.0 * a * sigma_eps;
            g.daction_dlog_std[k] = da_du * sigma_eps;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vanishing_noise_returns_tanh_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = squashed_gaussian_sample(&[0.3, -1.2], &[-20.0, -25.0], &mut rng);
        assert!((s.action[0] - 0.3f64.tanh()).abs() < 1e-7);
        assert!((s.action[1] - (-1.2f64).tanh()).abs() < 1e-7);
    }

    #[test]
    fn log_prob_agrees_with_density_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (m, ls) = ([0.4, -0.2], [-0.5, 0.3]);
        for _ in 0..20 {
            let s = squashed_gaussian_sample(&m, &ls, &mut rng);
            let d = squashed_log_density(&m, &ls, &s.pre_squash);
            assert!((d - s.log_prob).abs() < 1e-9);
        }
    }

    #[test]
    fn grads_match_finite_differences() {
        let noise = [0.7, -1.3];
        let (m, ls) = ([0.2, -0.4], [-0.3, 0.1]);
        let s = squash_with_noise(&m, &ls, &noise);
        let g = squashed_grads(&s, &ls);
        let h = 1e-6;
        for k in 0..2 {
            let mut mp = m;
            let mut mm = m;
            mp[k] += h;
            mm[k] -= h;
            let (p, q) = (squash_with_noise(&mp, &ls, &noise), squash_with_noise(&mm, &ls, &noise));
            assert!(((p.log_prob - q.log_prob) / (2.0 * h) - g.dlogp_dmean[k]).abs() < 1e-6);
            assert!(((p.action[k] - q.action[k]) / (2.0 * h) - g.daction_dmean[k]).abs() < 1e-6);
            let mut lp = ls;
            let mut lm = ls;
            lp[k] += h;
            lm[k] -= h;
            let (p, q) = (squash_with_noise(&m, &lp, &noise), squash_with_noise(&m, &lm, &noise));
            assert!(((p.log_prob - q.log_prob) / (2.0 * h) - g.dlogp_dlog_std[k]).abs() < 1e-6);
            assert!(((p.action[k] - q.action[k]) / (2.0 * h) - g.daction_dlog_std[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn stable_for_saturated_pre_squash() {
        let s = squash_with_noise(&[40.0], &[0.0], &[0.0]);
        assert!(s.log_prob.is_finite());
        assert_eq!(s.action[0], 1.0);
    }
}
