//! Trainable parameters, the Adam optimizer and a finite-difference
//! gradient checker.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A named value tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Flat, insertion-ordered collection of all model parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Zeroes every gradient; called at the start of each training step.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Total number of scalar coordinates across all parameters.
    pub fn coordinate_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Adam optimizer state: hyperparameters plus per-parameter moment tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Moments sized to the store; defaults are lr 1e-4, betas 0.9/0.98,
    /// eps 1e-8.
    pub fn new(store: &ParamStore) -> Self {
        AdamState {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            step_count: 0,
            m: store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect(),
            v: store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One bias-corrected Adam update from the gradients currently in the store.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) {
    assert_eq!(
        store.len(),
        state.m.len(),
        "optimizer state sized for a different parameter store"
    );
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, p) in store.params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let grad = p.grad.data();
        let value = p.value.data_mut();
        for c in 0..grad.len() {
            let g = grad[c];
            m[c] = state.beta1 * m[c] + (1.0 - state.beta1) * g;
            v[c] = state.beta2 * v[c] + (1.0 - state.beta2) * g * g;
            let m_hat = m[c] / bc1;
            let v_hat = v[c] / bc2;
            value[c] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
}

/// Compares the analytic gradient stored for `param` against central
/// differences of `loss_fn` at the sampled coordinates. Returns the worst
/// relative error, with the denominator floored at
/// `max(|analytic|, |numeric|, 1e-8)`.
///
/// The analytic gradient must already be in the store (one backward pass);
/// `loss_fn` must be a deterministic function of the parameter values.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    param: ParamId,
    indices: &[usize],
    h: f64,
    mut loss_fn: F,
) -> Result<f64>
where
    F: FnMut(&ParamStore) -> f64,
{
    if h <= 0.0 {
        return Err(Error::Domain(format!("step size must be positive, got {h}")));
    }
    let len = store.value(param).len();
    let mut worst: f64 = 0.0;
    for &i in indices {
        if i >= len {
            return Err(Error::Index(format!(
                "coordinate {i} outside parameter of {len} values"
            )));
        }
        let analytic = store.grad(param).data()[i];
        let original = store.value(param).data()[i];

        store.value_mut(param).data_mut()[i] = original + h;
        let plus = loss_fn(store);
        store.value_mut(param).data_mut()[i] = original - h;
        let minus = loss_fn(store);
        store.value_mut(param).data_mut()[i] = original;

        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let before = store.value(id).clone();
        let mut state = AdamState::new(&store);
        for _ in 0..5 {
            adam_step(&mut store, &mut state);
        }
        assert_eq!(*store.value(id), before);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn adam_first_step_magnitude() {
        // g = 1 constant: bias-corrected first step is lr · 1/(1 + eps).
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.0));
        store.grad_mut(id).data_mut()[0] = 1.0;
        let mut state = AdamState::new(&store);
        adam_step(&mut store, &mut state);
        let expect = -1e-4 * (1.0 / (1.0 + 1e-8));
        assert!((store.value(id).item() - expect).abs() < 1e-18);
    }

    #[test]
    fn adam_identical_params_stay_identical() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::from_vec(&[2], vec![0.3, -0.9]).unwrap());
        let b = store.add("b", Tensor::from_vec(&[2], vec![0.3, -0.9]).unwrap());
        let mut state = AdamState::new(&store).with_lr(0.01);
        for step in 0..20 {
            let g = (step as f64 * 0.37).sin();
            store.zero_grads();
            store.grad_mut(a).data_mut().copy_from_slice(&[g, -g]);
            store.grad_mut(b).data_mut().copy_from_slice(&[g, -g]);
            adam_step(&mut store, &mut state);
            assert_eq!(store.value(a).data(), store.value(b).data());
        }
    }

    #[test]
    fn finite_diff_on_quadratic() {
        // loss = ½‖p‖²: gradient is p itself, exactly.
        let mut store = ParamStore::new();
        let id = store.add(
            "p",
            Tensor::from_vec(&[4], vec![0.7, -1.3, 2.1, 0.05]).unwrap(),
        );
        let analytic = store.value(id).clone();
        store.grad_mut(id).data_mut().copy_from_slice(analytic.data());
        let err = finite_diff_check(&mut store, id, &[0, 1, 2, 3], 1e-5, |s| {
            0.5 * s.value(id).data().iter().map(|v| v * v).sum::<f64>()
        })
        .unwrap();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn finite_diff_on_sum() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::from_vec(&[3], vec![0.2, 1.1, -0.8]).unwrap());
        store.grad_mut(id).fill(1.0);
        let err = finite_diff_check(&mut store, id, &[0, 1, 2], 1e-5, |s| {
            s.value(id).data().iter().sum::<f64>()
        })
        .unwrap();
        assert!(err < 1e-10, "relative error {err}");
    }

    #[test]
    fn finite_diff_agrees_with_tape_softmax_loss() {
        // A composite graph: cross-entropy over softmax-normalized logits.
        let mut store = ParamStore::new();
        let id = store.add(
            "logits",
            Tensor::from_vec(&[2, 4], vec![0.3, -0.7, 1.2, 0.1, -0.4, 0.9, 0.0, -1.5]).unwrap(),
        );
        let loss_of = |s: &ParamStore| {
            let mut tape = Tape::new();
            let l = tape.param(s, id);
            let loss = tape.cross_entropy(l, &[2, 1], &[false, false]).unwrap();
            tape.value(loss).item()
        };
        let mut tape = Tape::new();
        let l = tape.param(&store, id);
        let loss = tape.cross_entropy(l, &[2, 1], &[false, false]).unwrap();
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut store);

        let indices: Vec<usize> = (0..8).collect();
        let err = finite_diff_check(&mut store, id, &indices, 1e-5, loss_of).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }
}
