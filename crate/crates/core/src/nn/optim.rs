use super::mlp::{GradientBuffer, Mlp};
use crate::error::{Error, Result};

/// Adam moments and hyperparameters for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub(crate) step: u64,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
}

impl AdamState {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let n = net.params().len();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

/// One bias-corrected Adam descent step.
pub fn adam_step(net: &mut Mlp, grads: &GradientBuffer, state: &mut AdamState) -> Result<()> {
    let n = net.params().len();
    if grads.len() != n {
        return Err(Error::shape("adam_step gradients", n, grads.len()));
    }
    if state.m.len() != n || state.v.len() != n {
        return Err(Error::shape("adam_step moments", n, state.m.len()));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient in adam_step".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (((p, &g), m), v) in net
        .params_mut()
        .iter_mut()
        .zip(grads.as_slice())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// `target <- (1 - rate) * target + rate * source`.
pub fn polyak_update(target: &mut Mlp, source: &Mlp, rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Input(format!("polyak rate {rate} outside [0, 1]")));
    }
    if !target.same_shape(source) {
        return Err(Error::shape(
            "polyak_update",
            target.params().len(),
            source.params().len(),
        ));
    }
    if rate == 1.0 {
        target.params_mut().copy_from_slice(source.params());
        return Ok(());
    }
    for (t, s) in target.params_mut().iter_mut().zip(source.params()) {
        *t = (1.0 - rate) * *t + rate * s;
    }
    Ok(())
}

pub const CROSS_ENTROPY_EPS: f64 = 1e-7;

/// Binary cross-entropy of `prediction` against `target` (1.0 or 0.0) and its
/// derivative with respect to the prediction. The prediction is clamped to
/// `[eps, 1 - eps]` first.
pub fn binary_cross_entropy(prediction: f64, target: f64) -> (f64, f64) {
    let p = prediction.clamp(CROSS_ENTROPY_EPS, 1.0 - CROSS_ENTROPY_EPS);
    let loss = -(target * p.ln() + (1.0 - target) * (1.0 - p).ln());
    let grad = -target / p + (1.0 - target) / (1.0 - p);
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::Activation;

    fn scalar_net(value: f64) -> Mlp {
        // 1 -> 1 linear net; its bias is the "scalar parameter" under test
        Mlp::from_params(&[1, 1], Activation::Relu, Activation::Identity, vec![0.0, value]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut net = scalar_net(1.5);
        let mut st = AdamState::new(&net, 0.1);
        let zero = GradientBuffer::zeros_like(&net);
        adam_step(&mut net, &zero, &mut st).unwrap();
        assert_eq!(net.params(), &[0.0, 1.5]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = v_hat = 1 on the first step with g = 1
        let mut net = scalar_net(0.0);
        let mut st = AdamState::new(&net, 0.1);
        adam_step(&mut net, &GradientBuffer::from_vec(vec![0.0, 1.0]), &mut st).unwrap();
        assert!((net.params()[1] + 0.1).abs() < 1e-8);
        // constant gradient keeps the bias-corrected ratio at one
        adam_step(&mut net, &GradientBuffer::from_vec(vec![0.0, 1.0]), &mut st).unwrap();
        assert!((net.params()[1] + 0.2).abs() < 1e-8);
    }

    #[test]
    fn non_finite_gradient_is_numeric_error() {
        let mut net = scalar_net(0.0);
        let mut st = AdamState::new(&net, 0.1);
        let g = GradientBuffer::from_vec(vec![f64::NAN, 0.0]);
        assert!(matches!(adam_step(&mut net, &g, &mut st), Err(Error::Numeric(_))));
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let mut a = scalar_net(0.3);
        let mut b = scalar_net(0.3);
        let mut sa = AdamState::new(&a, 0.01);
        let mut sb = AdamState::new(&b, 0.01);
        let g = GradientBuffer::from_vec(vec![0.2, -0.7]);
        for _ in 0..5 {
            adam_step(&mut a, &g, &mut sa).unwrap();
            adam_step(&mut b, &g, &mut sb).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn polyak_extremes() {
        let src = scalar_net(2.0);
        let mut t = scalar_net(-1.0);
        polyak_update(&mut t, &src, 0.0).unwrap();
        assert_eq!(t.params(), &[0.0, -1.0]);
        polyak_update(&mut t, &src, 1.0).unwrap();
        assert_eq!(t, src);
        polyak_update(&mut t, &src, 1.0).unwrap();
        assert_eq!(t, src);
        assert!(polyak_update(&mut t, &src, 1.5).is_err());
    }

    #[test]
    fn polyak_geometric_decay() {
        let src = scalar_net(1.0);
        let mut t = scalar_net(-3.0);
        let gap0 = 4.0;
        for _ in 0..1000 {
            polyak_update(&mut t, &src, 0.01).unwrap();
        }
        let gap = (t.params()[1] - 1.0).abs();
        assert!(gap <= 0.99f64.powi(1000) * gap0 * (1.0 + 1e-9));
    }

    #[test]
    fn polyak_shape_mismatch() {
        let mut t = Mlp::zeros(&[2, 1], Activation::Relu, Activation::Identity).unwrap();
        assert!(matches!(polyak_update(&mut t, &scalar_net(0.0), 0.5), Err(Error::Shape { .. })));
    }

    #[test]
    fn cross_entropy_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((binary_cross_entropy(0.5, 1.0).0 - ln2).abs() < 1e-12);
        assert!((binary_cross_entropy(0.5, 0.0).0 - ln2).abs() < 1e-12);
        assert!((binary_cross_entropy(0.9, 0.0).0 - 2.302585092994046).abs() < 1e-12);
        assert!(binary_cross_entropy(1.0, 1.0).0 < 1e-6);
        assert!(binary_cross_entropy(0.0, 0.0).0 < 1e-6);
        // derivative check
        let (_, g) = binary_cross_entropy(0.3, 1.0);
        let h = 1e-6;
        let fd = (binary_cross_entropy(0.3 + h, 1.0).0 - binary_cross_entropy(0.3 - h, 1.0).0) / (2.0 * h);
        assert!((g - fd).abs() < 1e-6);
    }
}
