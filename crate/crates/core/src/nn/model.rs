//! LSTM -> dense(ReLU) -> dropout -> dense(softmax) with BPTT.
//!
//! Inputs are one-hot feature vectors, so the input projection of each step
//! is the sum of three kernel rows rather than a dense matrix product.

use std::borrow::Borrow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ModelParameters, Slot};
use crate::error::{invalid_input, Result};
use crate::ingest::Sample;
use crate::ontology::{FEATURE_DIM, NUM_CATEGORIES};

pub const DEFAULT_DROPOUT: f64 = 0.5;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dropout configuration for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub rate: f64,
    pub seed: u64,
}

/// Per-sample activations kept for the backward pass.
struct Trace {
    steps: usize,
    /// Gate activations per step: [i | f | g | o], each `hidden` wide.
    gates: Vec<f64>,
    /// Cell state after each step.
    cells: Vec<f64>,
    /// Hidden state before each step and after the last: `(steps + 1) * hidden`.
    hiddens: Vec<f64>,
    /// Dense-1 pre-activation.
    pre1: Vec<f64>,
    /// Dense-1 output after ReLU and dropout.
    act1: Vec<f64>,
    /// Dropout multiplier per dense unit (0 or 1/(1-rate)); 1 at inference.
    mask: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl Trace {
    fn new(params: &ModelParameters, steps: usize) -> Self {
        let d = params.dims();
        Self {
            steps,
            gates: vec![0.0; steps * 4 * d.hidden],
            cells: vec![0.0; steps * d.hidden],
            hiddens: vec![0.0; (steps + 1) * d.hidden],
            pre1: vec![0.0; d.dense],
            act1: vec![0.0; d.dense],
            mask: vec![1.0; d.dense],
            logits: vec![0.0; d.output],
            probs: vec![0.0; d.output],
        }
    }

    fn final_hidden(&self, hidden: usize) -> &[f64] {
        &self.hiddens[self.steps * hidden..]
    }
}

fn check_batch<S: Borrow<Sample>>(params: &ModelParameters, batch: &[S]) -> Result<usize> {
    let d = params.dims();
    if d.input != FEATURE_DIM || d.output != NUM_CATEGORIES {
        return Err(invalid_input(format!(
            "model expects {}x{} but features are {FEATURE_DIM} wide with {NUM_CATEGORIES} classes",
            d.input, d.output
        )));
    }
    let Some(first) = batch.first() else {
        return Ok(0);
    };
    let steps = first.borrow().window.len();
    if steps == 0 {
        return Err(invalid_input("empty window"));
    }
    if batch.iter().any(|s| s.borrow().window.len() != steps) {
        return Err(invalid_input("windows in a batch differ in length"));
    }
    if batch.iter().any(|s| !s.borrow().target.is_tracked()) {
        return Err(invalid_input("NOT_TRACKED target"));
    }
    Ok(steps)
}

fn dropout_masks(count: usize, width: usize, dropout: Option<Dropout>) -> Vec<f64> {
    let mut masks = vec![1.0; count * width];
    if let Some(Dropout { rate, seed }) = dropout {
        if rate > 0.0 {
            let keep_scale = 1.0 / (1.0 - rate);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for m in &mut masks {
                *m = if rng.random::<f64>() < rate { 0.0 } else { keep_scale };
            }
        }
    }
    masks
}

fn run_sample(params: &ModelParameters, sample: &Sample, mask: &[f64], tr: &mut Trace) {
    let d = params.dims();
    let (h, g4) = (d.hidden, 4 * d.hidden);
    let kernel = params.slot(Slot::LstmKernel);
    let recurrent = params.slot(Slot::LstmRecurrent);
    let bias = params.slot(Slot::LstmBias);

    let mut z = vec![0.0; g4];
    let mut c_prev = vec![0.0; h];
    tr.hiddens[..h].fill(0.0);
    for (t, fv) in sample.window.iter().enumerate() {
        z.copy_from_slice(bias);
        for k in fv.set_indices() {
            for (zj, w) in z.iter_mut().zip(&kernel[k * g4..(k + 1) * g4]) {
                *zj += w;
            }
        }
        let h_prev = &tr.hiddens[t * h..(t + 1) * h];
        for (m, &hm) in h_prev.iter().enumerate() {
            if hm != 0.0 {
                for (zj, w) in z.iter_mut().zip(&recurrent[m * g4..(m + 1) * g4]) {
                    *zj += hm * w;
                }
            }
        }
        let gates = &mut tr.gates[t * g4..(t + 1) * g4];
        for j in 0..h {
            gates[j] = sigmoid(z[j]);
            gates[h + j] = sigmoid(z[h + j]);
            gates[2 * h + j] = z[2 * h + j].tanh();
            gates[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        let cells = &mut tr.cells[t * h..(t + 1) * h];
        for j in 0..h {
            cells[j] = gates[h + j] * c_prev[j] + gates[j] * gates[2 * h + j];
        }
        c_prev.copy_from_slice(cells);
        let (_, rest) = tr.hiddens.split_at_mut((t + 1) * h);
        for j in 0..h {
            rest[j] = gates[3 * h + j] * cells[j].tanh();
        }
    }

    let w1 = params.slot(Slot::Dense1Kernel);
    let b1 = params.slot(Slot::Dense1Bias);
    tr.pre1.copy_from_slice(b1);
    let h_last = &tr.hiddens[tr.steps * h..];
    for (m, &hm) in h_last.iter().enumerate() {
        for (p, w) in tr.pre1.iter_mut().zip(&w1[m * d.dense..(m + 1) * d.dense]) {
            *p += hm * w;
        }
    }
    tr.mask.copy_from_slice(mask);
    for j in 0..d.dense {
        tr.act1[j] = tr.pre1[j].max(0.0) * tr.mask[j];
    }

    let w2 = params.slot(Slot::Dense2Kernel);
    let b2 = params.slot(Slot::Dense2Bias);
    tr.logits.copy_from_slice(b2);
    for (j, &a) in tr.act1.iter().enumerate() {
        if a != 0.0 {
            for (l, w) in tr.logits.iter_mut().zip(&w2[j * d.output..(j + 1) * d.output]) {
                *l += a * w;
            }
        }
    }
    softmax_into(&tr.logits, &mut tr.probs);
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn log_softmax_at(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[target] - max - lse
}

/// Class probabilities for every sample. Dropout applies only when
/// `training` is set, with masks drawn from `dropout_seed`.
pub fn forward<S: Borrow<Sample>>(
    params: &ModelParameters,
    batch: &[S],
    training: bool,
    dropout_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let dropout = training.then_some(Dropout {
        rate: DEFAULT_DROPOUT,
        seed: dropout_seed,
    });
    forward_with(params, batch, dropout)
}

pub fn forward_with<S: Borrow<Sample>>(
    params: &ModelParameters,
    batch: &[S],
    dropout: Option<Dropout>,
) -> Result<Vec<Vec<f64>>> {
    let steps = check_batch(params, batch)?;
    let width = params.dims().dense;
    let masks = dropout_masks(batch.len(), width, dropout);
    let mut trace = Trace::new(params, steps);
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, s)| {
            run_sample(params, s.borrow(), &masks[i * width..(i + 1) * width], &mut trace);
            trace.probs.clone()
        })
        .collect())
}

/// Predicted category index per sample, in inference mode.
pub fn predict<S: Borrow<Sample>>(params: &ModelParameters, batch: &[S]) -> Result<Vec<usize>> {
    let steps = check_batch(params, batch)?;
    let mut trace = Trace::new(params, steps);
    let mask = vec![1.0; params.dims().dense];
    Ok(batch
        .iter()
        .map(|s| {
            run_sample(params, s.borrow(), &mask, &mut trace);
            // Softmax is monotone, so the logits argmax is the probability argmax.
            crate::ontology::argmax(&trace.logits)
        })
        .collect())
}

/// Mean cross-entropy over the batch and its gradient by BPTT.
pub fn loss_and_grads<S: Borrow<Sample>>(
    params: &ModelParameters,
    batch: &[S],
    training: bool,
    dropout_seed: u64,
) -> Result<(f64, Gradients)> {
    let dropout = training.then_some(Dropout {
        rate: DEFAULT_DROPOUT,
        seed: dropout_seed,
    });
    loss_and_grads_with(params, batch, dropout)
}

pub fn loss_and_grads_with<S: Borrow<Sample>>(
    params: &ModelParameters,
    batch: &[S],
    dropout: Option<Dropout>,
) -> Result<(f64, Gradients)> {
    let steps = check_batch(params, batch)?;
    if batch.is_empty() {
        return Err(invalid_input("empty batch"));
    }
    let d = params.dims();
    let (h, g4) = (d.hidden, 4 * d.hidden);
    let masks = dropout_masks(batch.len(), d.dense, dropout);
    let scale = 1.0 / batch.len() as f64;

    let recurrent = params.slot(Slot::LstmRecurrent);
    let w1 = params.slot(Slot::Dense1Kernel);
    let w2 = params.slot(Slot::Dense2Kernel);

    let mut grads = params.zeros_like();
    let mut trace = Trace::new(params, steps);
    let mut loss = 0.0;

    let mut dlogits = vec![0.0; d.output];
    let mut dz1 = vec![0.0; d.dense];
    let mut dh = vec![0.0; h];
    let mut dh_prev = vec![0.0; h];
    let mut dc = vec![0.0; h];
    let mut dz = vec![0.0; g4];

    for (i, s) in batch.iter().enumerate() {
        let sample = s.borrow();
        run_sample(params, sample, &masks[i * d.dense..(i + 1) * d.dense], &mut trace);
        let target = sample.target.index().expect("checked tracked");
        loss -= log_softmax_at(&trace.logits, target);

        for (o, (dl, &p)) in dlogits.iter_mut().zip(&trace.probs).enumerate() {
            *dl = (p - if o == target { 1.0 } else { 0.0 }) * scale;
        }

        // Dense 2.
        {
            let gw2 = grads.slot_mut(Slot::Dense2Kernel);
            for (j, &a) in trace.act1.iter().enumerate() {
                if a != 0.0 {
                    for (g, &dl) in gw2[j * d.output..(j + 1) * d.output].iter_mut().zip(&dlogits) {
                        *g += a * dl;
                    }
                }
            }
        }
        for (g, &dl) in grads.slot_mut(Slot::Dense2Bias).iter_mut().zip(&dlogits) {
            *g += dl;
        }
        for j in 0..d.dense {
            if trace.pre1[j] > 0.0 && trace.mask[j] != 0.0 {
                let row = &w2[j * d.output..(j + 1) * d.output];
                let da: f64 = row.iter().zip(&dlogits).map(|(w, g)| w * g).sum();
                dz1[j] = da * trace.mask[j];
            } else {
                dz1[j] = 0.0;
            }
        }

        // Dense 1.
        let h_last = trace.final_hidden(h);
        {
            let gw1 = grads.slot_mut(Slot::Dense1Kernel);
            for (m, &hm) in h_last.iter().enumerate() {
                for (g, &dzj) in gw1[m * d.dense..(m + 1) * d.dense].iter_mut().zip(&dz1) {
                    *g += hm * dzj;
                }
            }
        }
        for (g, &dzj) in grads.slot_mut(Slot::Dense1Bias).iter_mut().zip(&dz1) {
            *g += dzj;
        }
        for (m, dhm) in dh.iter_mut().enumerate() {
            *dhm = w1[m * d.dense..(m + 1) * d.dense]
                .iter()
                .zip(&dz1)
                .map(|(w, g)| w * g)
                .sum();
        }

        // Back through time.
        dc.fill(0.0);
        for t in (0..steps).rev() {
            let gates = &trace.gates[t * g4..(t + 1) * g4];
            let cells = &trace.cells[t * h..(t + 1) * h];
            for j in 0..h {
                let (ig, fg, cg, og) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let c_prev = if t > 0 { trace.cells[(t - 1) * h + j] } else { 0.0 };
                let tc = cells[j].tanh();
                let d_o = dh[j] * tc;
                let dcj = dc[j] + dh[j] * og * (1.0 - tc * tc);
                dz[j] = dcj * cg * ig * (1.0 - ig);
                dz[h + j] = dcj * c_prev * fg * (1.0 - fg);
                dz[2 * h + j] = dcj * ig * (1.0 - cg * cg);
                dz[3 * h + j] = d_o * og * (1.0 - og);
                dc[j] = dcj * fg;
            }
            for (g, &v) in grads.slot_mut(Slot::LstmBias).iter_mut().zip(&dz) {
                *g += v;
            }
            {
                let gk = grads.slot_mut(Slot::LstmKernel);
                for k in sample.window[t].set_indices() {
                    for (g, &v) in gk[k * g4..(k + 1) * g4].iter_mut().zip(&dz) {
                        *g += v;
                    }
                }
            }
            let h_prev = &trace.hiddens[t * h..(t + 1) * h];
            {
                let gr = grads.slot_mut(Slot::LstmRecurrent);
                for (m, &hm) in h_prev.iter().enumerate() {
                    if hm != 0.0 {
                        for (g, &v) in gr[m * g4..(m + 1) * g4].iter_mut().zip(&dz) {
                            *g += hm * v;
                        }
                    }
                }
            }
            if t > 0 {
                for (m, dhm) in dh_prev.iter_mut().enumerate() {
                    *dhm = recurrent[m * g4..(m + 1) * g4]
                        .iter()
                        .zip(&dz)
                        .map(|(w, v)| w * v)
                        .sum();
                }
                std::mem::swap(&mut dh, &mut dh_prev);
            }
        }
    }
    Ok((loss * scale, grads))
}
