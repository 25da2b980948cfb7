//! Online instance matching loss.
//!
//! Softmax with temperature over a lookup table of labeled class centers and
//! a circular queue of unlabeled features. Centers are momentum-updated from
//! descriptors; gradients stop at the stored vectors — they are state, not
//! parameters.

use crate::error::{Error, Result};

/// Lookup table + circular queue state for the OIM loss.
#[derive(Debug, Clone, PartialEq)]
pub struct OimState {
    /// L x d class centers, zero-initialized.
    lut: Vec<Vec<f64>>,
    /// Ring buffer of up to `capacity` unlabeled feature vectors.
    queue: Vec<Vec<f64>>,
    head: usize,
    capacity: usize,
    dim: usize,
    pub tau: f64,
    pub eta: f64,
}

impl OimState {
    pub fn new(num_classes: usize, dim: usize, capacity: usize, tau: f64, eta: f64) -> Result<Self> {
        if tau <= 0.0 {
            return Err(Error::Contract(format!("tau must be > 0, got {tau}")));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Contract(format!("eta must be in [0,1], got {eta}")));
        }
        if num_classes == 0 || dim == 0 || capacity == 0 {
            return Err(Error::Contract("L, d and Q must all be positive".into()));
        }
        Ok(OimState {
            lut: vec![vec![0.0; dim]; num_classes],
            queue: Vec::new(),
            head: 0,
            capacity,
            dim,
            tau,
            eta,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.lut.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupancy(&self) -> usize {
        self.queue.len()
    }

    pub fn lut_row(&self, t: usize) -> &[f64] {
        &self.lut[t - 1]
    }

    pub fn lut_rows(&self) -> &[Vec<f64>] {
        &self.lut
    }

    pub fn set_lut_row(&mut self, t: usize, row: Vec<f64>) {
        assert_eq!(row.len(), self.dim);
        self.lut[t - 1] = row;
    }

    /// Queue contents oldest-first.
    pub fn queue_entries(&self) -> Vec<&[f64]> {
        let n = self.queue.len();
        let mut out = Vec::with_capacity(n);
        if n < self.capacity {
            for q in &self.queue {
                out.push(q.as_slice());
            }
        } else {
            for i in 0..n {
                out.push(self.queue[(self.head + i) % n].as_slice());
            }
        }
        out
    }

    pub(crate) fn head(&self) -> usize {
        self.head
    }

    pub(crate) fn raw_queue(&self) -> &[Vec<f64>] {
        &self.queue
    }

    pub(crate) fn restore(
        lut: Vec<Vec<f64>>,
        queue: Vec<Vec<f64>>,
        head: usize,
        capacity: usize,
        tau: f64,
        eta: f64,
    ) -> Self {
        let dim = lut[0].len();
        OimState {
            lut,
            queue,
            head,
            capacity,
            dim,
            tau,
            eta,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax probabilities over L lut rows followed by queue entries
/// (oldest-first), with max-subtraction for overflow safety.
pub fn oim_probs(x: &[f64], state: &OimState) -> Result<Vec<f64>> {
    if x.len() != state.dim {
        return Err(Error::Dimension(format!(
            "descriptor dim {} vs state dim {}",
            x.len(),
            state.dim
        )));
    }
    let mut logits: Vec<f64> = state.lut.iter().map(|v| dot(v, x) / state.tau).collect();
    for u in state.queue_entries() {
        logits.push(dot(u, x) / state.tau);
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Loss -log p_t and its analytic gradient w.r.t. the descriptor x.
/// Labels are 1-based.
pub fn oim_loss_and_grad(x: &[f64], label: usize, state: &OimState) -> Result<(f64, Vec<f64>)> {
    if label < 1 || label > state.num_classes() {
        return Err(Error::Contract(format!(
            "label {} outside [1, {}]",
            label,
            state.num_classes()
        )));
    }
    let probs = oim_probs(x, state)?;
    let pt = probs[label - 1];
    let loss = -pt.max(1e-300).ln();

    // dL/dx = -(v_t - sum_j p_j v_j - sum_k p_k u_k) / tau
    let mut expected = vec![0.0; state.dim];
    for (j, v) in state.lut.iter().enumerate() {
        for i in 0..state.dim {
            expected[i] += probs[j] * v[i];
        }
    }
    let l = state.num_classes();
    for (k, u) in state.queue_entries().into_iter().enumerate() {
        for i in 0..state.dim {
            expected[i] += probs[l + k] * u[i];
        }
    }
    let vt = state.lut_row(label);
    let grad: Vec<f64> = (0..state.dim)
        .map(|i| -(vt[i] - expected[i]) / state.tau)
        .collect();
    Ok((loss, grad))
}

/// Momentum update v_t <- eta * v_t + (1 - eta) * x. No re-normalization.
pub fn lut_update(state: &mut OimState, x: &[f64], label: usize) -> Result<()> {
    if label < 1 || label > state.num_classes() {
        return Err(Error::Contract(format!("invalid label {label}")));
    }
    if x.len() != state.dim {
        return Err(Error::Dimension("descriptor dim mismatch".into()));
    }
    let eta = state.eta;
    let row = &mut state.lut[label - 1];
    for (v, &xi) in row.iter_mut().zip(x) {
        *v = eta * *v + (1.0 - eta) * xi;
    }
    Ok(())
}

/// FIFO push of an unlabeled-person descriptor; overwrites the oldest entry
/// once the queue is full.
pub fn queue_push(state: &mut OimState, u: &[f64]) -> Result<()> {
    if u.len() != state.dim {
        return Err(Error::Dimension("descriptor dim mismatch".into()));
    }
    if state.queue.len() < state.capacity {
        state.queue.push(u.to_vec());
    } else {
        state.queue[state.head] = u.to_vec();
        state.head = (state.head + 1) % state.capacity;
    }
    Ok(())
}
