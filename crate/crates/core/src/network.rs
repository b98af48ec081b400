//! Variable-width vanilla recurrent network.
//!
//! Forward pass, cross-entropy loss, exact BPTT gradients, the L1 penalty on
//! outgoing weights, and a per-weight adaptive update. Every operation keeps
//! the five weight blocks consistent with a single hidden count so the
//! structural controller can resize the network between cycles.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::matrix::Mat;
use crate::tasks::VOCAB;
use crate::{Error, Result};

/// Standard deviation of freshly initialized weights.
pub const WEIGHT_INIT_STD: f64 = 0.01;

/// Per-entry gradient clip applied before the optimizer step.
pub const GRAD_CLIP: f64 = 5.0;

/// Stabilizer inside the adaptive update's square root.
pub const ADAGRAD_EPS: f64 = 1e-8;

/// All weights and biases of the network.
///
/// `w_in` is hidden x 4 (input to hidden), `w_rec` hidden x hidden, `w_out`
/// 4 x hidden. Column `j` of `w_rec` stacked with column `j` of `w_out` is
/// neuron `j`'s outgoing weight vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    pub w_in: Mat,
    pub w_rec: Mat,
    pub w_out: Mat,
    pub b_hid: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl RnnParams {
    /// Fresh network: weights i.i.d. Gaussian (std 0.01), biases zero.
    pub fn init(n_hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if n_hidden < 1 {
            return Err(Error::InvalidConfig(format!(
                "hidden size must be at least 1, got {n_hidden}"
            )));
        }
        let mut gauss = |_: usize, _: usize| -> f64 {
            let g: f64 = rng.sample(StandardNormal);
            g * WEIGHT_INIT_STD
        };
        Ok(RnnParams {
            w_in: Mat::from_fn(n_hidden, VOCAB, &mut gauss),
            w_rec: Mat::from_fn(n_hidden, n_hidden, &mut gauss),
            w_out: Mat::from_fn(VOCAB, n_hidden, &mut gauss),
            b_hid: vec![0.0; n_hidden],
            b_out: vec![0.0; VOCAB],
        })
    }

    pub fn n_hidden(&self) -> usize {
        self.w_rec.rows()
    }

    /// L1 norm of neuron `j`'s outgoing weights: column `j` of the recurrent
    /// matrix (lateral) plus column `j` of the output matrix (feedforward).
    pub fn outgoing_l1(&self, j: usize) -> f64 {
        assert!(
            j < self.n_hidden(),
            "neuron {j} out of range ({} hidden)",
            self.n_hidden()
        );
        self.w_rec.col_l1(j) + self.w_out.col_l1(j)
    }

    /// Checks that all blocks agree on one hidden count.
    pub fn shape_consistent(&self) -> bool {
        let n = self.n_hidden();
        self.w_in.rows() == n
            && self.w_in.cols() == VOCAB
            && self.w_rec.cols() == n
            && self.w_out.rows() == VOCAB
            && self.w_out.cols() == n
            && self.b_hid.len() == n
            && self.b_out.len() == VOCAB
    }
}

/// Gradients of the cycle loss, same shapes as [`RnnParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w_in: Mat,
    pub w_rec: Mat,
    pub w_out: Mat,
    pub b_hid: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &RnnParams) -> Self {
        Gradients {
            w_in: Mat::zeros(params.w_in.rows(), params.w_in.cols()),
            w_rec: Mat::zeros(params.w_rec.rows(), params.w_rec.cols()),
            w_out: Mat::zeros(params.w_out.rows(), params.w_out.cols()),
            b_hid: vec![0.0; params.b_hid.len()],
            b_out: vec![0.0; params.b_out.len()],
        }
    }

    /// Clamps every entry to [-bound, bound].
    pub fn clip(&mut self, bound: f64) {
        for block in [
            self.w_in.data_mut(),
            self.w_rec.data_mut(),
            self.w_out.data_mut(),
            &mut self.b_hid[..],
            &mut self.b_out[..],
        ] {
            for g in block {
                *g = g.clamp(-bound, bound);
            }
        }
    }
}

/// Per-entry squared-gradient accumulators, shapes mirroring [`RnnParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub w_in: Mat,
    pub w_rec: Mat,
    pub w_out: Mat,
    pub b_hid: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl OptimizerState {
    pub fn zeros_like(params: &RnnParams) -> Self {
        OptimizerState {
            w_in: Mat::zeros(params.w_in.rows(), params.w_in.cols()),
            w_rec: Mat::zeros(params.w_rec.rows(), params.w_rec.cols()),
            w_out: Mat::zeros(params.w_out.rows(), params.w_out.cols()),
            b_hid: vec![0.0; params.b_hid.len()],
            b_out: vec![0.0; params.b_out.len()],
        }
    }
}

/// Everything the backward pass needs from one cycle's forward pass.
#[derive(Clone, Debug)]
pub struct CycleTape {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    /// Hidden state entering the cycle.
    pub h_start: Vec<f64>,
    /// Hidden state after each step.
    pub hidden: Vec<Vec<f64>>,
    /// Output distribution at each step.
    pub probs: Vec<[f64; VOCAB]>,
    /// Total cross-entropy over the cycle, in nats.
    pub loss: f64,
}

impl CycleTape {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Hidden state to carry into the next cycle.
    pub fn h_final(&self) -> &[f64] {
        self.hidden.last().map_or(&self.h_start, |h| h)
    }
}

/// Runs the network over one character sequence.
///
/// Per step: `h = tanh(W_in x + W_rec h + b_hid)`, `p = softmax(W_out h +
/// b_out)`, loss accumulates `-ln p[target]`. Inputs are one-hot, passed as
/// character indices. Fails if any activation or the loss goes non-finite.
pub fn forward(
    params: &RnnParams,
    h_prev: &[f64],
    inputs: &[usize],
    targets: &[usize],
) -> Result<CycleTape> {
    let n = params.n_hidden();
    assert_eq!(h_prev.len(), n, "hidden state length mismatch");
    assert_eq!(inputs.len(), targets.len());
    assert!(!inputs.is_empty());

    let steps = inputs.len();
    let mut tape = CycleTape {
        inputs: inputs.to_vec(),
        targets: targets.to_vec(),
        h_start: h_prev.to_vec(),
        hidden: Vec::with_capacity(steps),
        probs: Vec::with_capacity(steps),
        loss: 0.0,
    };

    let mut h = h_prev.to_vec();
    let mut pre = vec![0.0; n];
    for (step, (&x, &target)) in inputs.iter().zip(targets).enumerate() {
        debug_assert!(x < VOCAB && target < VOCAB);
        params.w_rec.matvec(&h, &mut pre);
        for i in 0..n {
            h[i] = (pre[i] + params.w_in[(i, x)] + params.b_hid[i]).tanh();
        }

        let mut logits = [0.0; VOCAB];
        params.w_out.matvec(&h, &mut logits);
        for (l, b) in logits.iter_mut().zip(&params.b_out) {
            *l += b;
        }

        // softmax and -ln p[target] via log-sum-exp
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(l));
        let mut z = 0.0;
        let mut probs = [0.0; VOCAB];
        for (p, &l) in probs.iter_mut().zip(&logits) {
            *p = (l - max).exp();
            z += *p;
        }
        for p in &mut probs {
            *p /= z;
        }
        tape.loss += z.ln() + max - logits[target];

        if !tape.loss.is_finite() || h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        tape.hidden.push(h.clone());
        tape.probs.push(probs);
    }
    Ok(tape)
}

/// Exact gradients of the cycle loss via backpropagation through time.
///
/// Returns raw gradients; the caller adds the L1 subgradient and clips
/// before the optimizer step.
pub fn backward(params: &RnnParams, tape: &CycleTape) -> Gradients {
    let n = params.n_hidden();
    let mut grads = Gradients::zeros_like(params);
    let mut dh = vec![0.0; n]; // dL/dh_t flowing back from later steps
    let mut dz = vec![0.0; n];

    for t in (0..tape.len()).rev() {
        let h_t = &tape.hidden[t];
        let h_prev: &[f64] = if t == 0 {
            &tape.h_start
        } else {
            &tape.hidden[t - 1]
        };

        let mut dlogits = tape.probs[t];
        dlogits[tape.targets[t]] -= 1.0;

        grads.w_out.add_outer(&dlogits, h_t);
        for (g, d) in grads.b_out.iter_mut().zip(&dlogits) {
            *g += d;
        }

        // dh accumulates the output-path gradient on top of the recurrence
        params.w_out.matvec_t_add(&dlogits, &mut dh);
        for i in 0..n {
            dz[i] = dh[i] * (1.0 - h_t[i] * h_t[i]);
        }

        for (g, d) in grads.b_hid.iter_mut().zip(&dz) {
            *g += d;
        }
        let x = tape.inputs[t];
        for i in 0..n {
            grads.w_in[(i, x)] += dz[i];
        }
        grads.w_rec.add_outer(&dz, h_prev);

        dh.fill(0.0);
        params.w_rec.matvec_t_add(&dz, &mut dh);
    }
    grads
}

fn l1_sign(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Adds the outgoing-weight penalty subgradient `a_l1reg * sign(w)` to the
/// gradients of the recurrent and output matrices. Input weights and biases
/// are incoming from the hidden layer's point of view and are not penalized.
pub fn l1_subgradient(params: &RnnParams, a_l1reg: f64, grads: &mut Gradients) {
    debug_assert!(a_l1reg >= 0.0);
    if a_l1reg == 0.0 {
        return;
    }
    for (g, w) in grads
        .w_rec
        .data_mut()
        .iter_mut()
        .zip(params.w_rec.data())
    {
        *g += a_l1reg * l1_sign(*w);
    }
    for (g, w) in grads
        .w_out
        .data_mut()
        .iter_mut()
        .zip(params.w_out.data())
    {
        *g += a_l1reg * l1_sign(*w);
    }
}

/// EXPERIMENT: proximal shrink of outgoing weights by a_l1reg.
pub fn l1_decay(params: &mut RnnParams, a_l1reg: f64) {
    let soft = |w: &mut f64| {
        if *w > a_l1reg {
            *w -= a_l1reg;
        } else if *w < -a_l1reg {
            *w += a_l1reg;
        } else {
            *w = 0.0;
        }
    };
    params.w_rec.data_mut().iter_mut().for_each(soft);
    params.w_out.data_mut().iter_mut().for_each(soft);
}

fn adagrad(param: &mut [f64], grad: &[f64], acc: &mut [f64], lr: f64) {
    for ((p, g), m) in param.iter_mut().zip(grad).zip(acc) {
        *m += g * g;
        *p -= lr * g / (*m + ADAGRAD_EPS).sqrt();
    }
}

/// Per-weight adaptive update: `acc += g^2; w -= lr * g / sqrt(acc + 1e-8)`.
pub fn optimizer_update(
    params: &mut RnnParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    learning_rate: f64,
) {
    adagrad(
        params.w_in.data_mut(),
        grads.w_in.data(),
        state.w_in.data_mut(),
        learning_rate,
    );
    adagrad(
        params.w_rec.data_mut(),
        grads.w_rec.data(),
        state.w_rec.data_mut(),
        learning_rate,
    );
    adagrad(
        params.w_out.data_mut(),
        grads.w_out.data(),
        state.w_out.data_mut(),
        learning_rate,
    );
    adagrad(&mut params.b_hid, &grads.b_hid, &mut state.b_hid, learning_rate);
    adagrad(&mut params.b_out, &grads.b_out, &mut state.b_out, learning_rate);
}
