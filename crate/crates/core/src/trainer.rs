//! Local client training: E epochs of minibatch SGD from the global model.
//!
//! Supports momentum (velocity reset at the start of every call, since
//! clients are stateless between rounds) and an optional proximal term that
//! adds `prox_mu * (w - global_w)` to each minibatch gradient, penalizing
//! drift away from the global model.

use serde::Serialize;

use crate::datagen::SyntheticDataset;
use crate::error::{Error, Result};
use crate::models::{Batch, ModelSpec};
use crate::paramvec::ParamVector;
use crate::rng::stream_rng;

use rand::seq::SliceRandom;

/// Hyperparameters of one local training pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LocalConfig {
    /// Local epochs per round.
    pub epochs: usize,
    /// Minibatch size; the last partial batch of an epoch is used, not
    /// dropped.
    pub batch_size: usize,
    /// SGD step size.
    pub learning_rate: f64,
    /// Momentum coefficient in `[0, 1)`; `0` is plain SGD.
    pub momentum: f64,
    /// Proximal coefficient (`0` disables the term).
    pub prox_mu: f64,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            epochs: 5,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            prox_mu: 0.0,
        }
    }
}

impl LocalConfig {
    /// Checks invariants, reporting failures under `field_prefix`.
    pub fn validate(&self, field_prefix: &str) -> Result<()> {
        let fail = |field: &str, message: &str| -> Result<()> {
            Err(Error::config(format!("{field_prefix}.{field}"), message))
        };
        if self.epochs == 0 {
            return fail("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate", "must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum", "must be in [0, 1)");
        }
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            return fail("prox_mu", "must be non-negative and finite");
        }
        Ok(())
    }

    /// Local SGD steps a client with `num_samples` samples performs:
    /// `epochs * ceil(num_samples / batch_size)`.
    pub fn steps_for(&self, num_samples: usize) -> usize {
        self.epochs * num_samples.div_ceil(self.batch_size)
    }
}

/// Outcome of one client's local training.
#[derive(Clone, Debug)]
pub struct ClientResult {
    /// Parameters after the final local step.
    pub final_params: ParamVector,
    /// Client sample count, the FedAvg aggregation weight.
    pub num_samples: usize,
    /// Local SGD steps taken, the FedNova normalizer.
    pub steps: usize,
    /// Mean minibatch loss per epoch, for diagnostics.
    pub loss_trace: Vec<f64>,
}

/// Trains from `global_w` on the client's samples (`indices` into `ds`) and
/// returns the final parameters plus bookkeeping.
///
/// Minibatch order reshuffles every epoch from a stream seeded only by
/// `seed`, so the caller is responsible for namespacing the seed by round
/// and client. Returns a divergence error naming the client and step if the
/// loss or the parameters stop being finite.
pub fn client_update(
    spec: &ModelSpec,
    global_w: &ParamVector,
    ds: &SyntheticDataset,
    indices: &[usize],
    cfg: &LocalConfig,
    client_id: usize,
    seed: u64,
) -> Result<ClientResult> {
    assert!(!indices.is_empty(), "client_update: client has no samples");
    assert!(cfg.epochs >= 1, "client_update: epochs must be at least 1");
    assert!(
        cfg.learning_rate > 0.0,
        "client_update: learning rate must be positive"
    );
    assert!(
        (0.0..1.0).contains(&cfg.momentum),
        "client_update: momentum must be in [0, 1)"
    );
    assert_eq!(
        global_w.len(),
        spec.param_count(),
        "client_update: global parameter length mismatch"
    );

    let dim = ds.dim();
    let mut w = global_w.clone();
    let mut velocity = (cfg.momentum > 0.0).then(|| ParamVector::zeros(w.len()));
    let mut order = indices.to_vec();
    let mut rng = stream_rng(&[seed]);
    let largest_batch = cfg.batch_size.min(indices.len());
    let mut feat_buf: Vec<f64> = Vec::with_capacity(largest_batch * dim);
    let mut lab_buf: Vec<u32> = Vec::with_capacity(largest_batch);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut steps = 0usize;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            feat_buf.clear();
            lab_buf.clear();
            for &i in chunk {
                feat_buf.extend_from_slice(ds.feature_row(i));
                lab_buf.push(ds.labels()[i]);
            }
            let batch = Batch::new(&feat_buf, &lab_buf, dim);
            let (loss, mut grad) = spec.loss_and_grad(&w, &batch);
            steps += 1;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    client_id,
                    step: steps,
                    quantity: "loss",
                });
            }
            if cfg.prox_mu > 0.0 {
                let g = grad.as_mut_slice();
                for ((gi, wi), gwi) in g.iter_mut().zip(w.as_slice()).zip(global_w.as_slice()) {
                    *gi += cfg.prox_mu * (wi - gwi);
                }
            }
            match velocity.as_mut() {
                Some(v) => {
                    v.scale_in_place(cfg.momentum);
                    v.axpy_in_place(-cfg.learning_rate, &grad);
                    w.axpy_in_place(1.0, v);
                }
                None => w.axpy_in_place(-cfg.learning_rate, &grad),
            }
            epoch_loss += loss;
            batches += 1;
        }
        loss_trace.push(epoch_loss / batches as f64);
    }

    if !w.is_finite() {
        return Err(Error::Divergence {
            client_id,
            step: steps,
            quantity: "parameters",
        });
    }
    debug_assert_eq!(steps, cfg.steps_for(indices.len()));
    Ok(ClientResult {
        final_params: w,
        num_samples: indices.len(),
        steps,
        loss_trace,
    })
}
