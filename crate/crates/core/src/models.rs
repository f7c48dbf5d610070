//! Differentiable objectives with exact, hand-derived gradients.
//!
//! Three model kinds cover the simulator's needs: multinomial logistic
//! regression, a one-hidden-layer tanh MLP (both classifiers trained with
//! mean softmax cross-entropy), and a diagonal quadratic objective used as a
//! convergence oracle. Gradients are derived analytically rather than via
//! autodiff so that gradient recovery on the server is exactly testable.
//!
//! Parameters live in a single flat [`ParamVector`]. Layouts:
//!
//! - logistic: `[W (num_classes x input_dim, row-major), b (num_classes)]`
//! - mlp: `[W1 (hidden x input), b1 (hidden), W2 (classes x hidden), b2 (classes)]`
//! - quadratic: the point `w` itself (`input_dim` entries)

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::paramvec::ParamVector;
use crate::rng::{stream_rng, STREAM_INIT};

/// Smallest allowed quadratic curvature entry; keeps the objective strictly
/// convex in every coordinate.
pub const MIN_CURVATURE: f64 = 1e-6;

/// Architecture and fixed hyperparameters of a model.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Multinomial logistic regression.
    Logistic {
        input_dim: usize,
        num_classes: usize,
    },
    /// One-hidden-layer MLP with tanh activation and softmax output.
    Mlp {
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
    },
    /// Diagonal quadratic objective
    /// `loss(w; batch) = 0.5 * sum_i curvature_i * (w_i - t_i)^2`
    /// where `t = target + mean_feature(batch)`. Coupling the effective
    /// target to the batch mean gives each client a bowl centered on its own
    /// data while a zero-mean batch leaves the plain form
    /// `0.5 * sum_i a_i (w_i - target_i)^2` intact.
    Quadratic {
        curvature: Vec<f64>,
        target: Vec<f64>,
    },
}

/// Borrowed view of a labeled minibatch in row-major feature layout.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    features: &'a [f64],
    labels: &'a [u32],
    input_dim: usize,
}

impl<'a> Batch<'a> {
    /// Wraps raw slices. Panics on an empty batch or a shape mismatch.
    pub fn new(features: &'a [f64], labels: &'a [u32], input_dim: usize) -> Self {
        assert!(input_dim >= 1, "Batch: input_dim must be at least 1");
        assert!(
            !labels.is_empty(),
            "Batch: must contain at least one sample"
        );
        assert_eq!(
            features.len(),
            labels.len() * input_dim,
            "Batch: feature buffer length does not match {} samples of dim {}",
            labels.len(),
            input_dim
        );
        debug_assert!(
            features.iter().all(|v| v.is_finite()),
            "Batch: non-finite feature value"
        );
        Batch {
            features,
            labels,
            input_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn labels(&self) -> &[u32] {
        self.labels
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Per-dimension mean of the feature rows.
    pub fn feature_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.input_dim];
        for i in 0..self.len() {
            for (m, x) in mean.iter_mut().zip(self.feature_row(i)) {
                *m += x;
            }
        }
        let inv = 1.0 / self.len() as f64;
        for m in &mut mean {
            *m *= inv;
        }
        mean
    }
}

impl ModelSpec {
    /// Total number of parameters in the flat layout.
    pub fn param_count(&self) -> usize {
        match self {
            ModelSpec::Logistic {
                input_dim,
                num_classes,
            } => num_classes * input_dim + num_classes,
            ModelSpec::Mlp {
                input_dim,
                hidden_dim,
                num_classes,
            } => hidden_dim * input_dim + hidden_dim + num_classes * hidden_dim + num_classes,
            ModelSpec::Quadratic { curvature, .. } => curvature.len(),
        }
    }

    /// Feature dimension the model consumes.
    pub fn input_dim(&self) -> usize {
        match self {
            ModelSpec::Logistic { input_dim, .. } | ModelSpec::Mlp { input_dim, .. } => *input_dim,
            ModelSpec::Quadratic { curvature, .. } => curvature.len(),
        }
    }

    /// Number of output classes, or `None` for the quadratic objective.
    pub fn num_classes(&self) -> Option<usize> {
        match self {
            ModelSpec::Logistic { num_classes, .. } | ModelSpec::Mlp { num_classes, .. } => {
                Some(*num_classes)
            }
            ModelSpec::Quadratic { .. } => None,
        }
    }

    pub fn is_classifier(&self) -> bool {
        self.num_classes().is_some()
    }

    /// Checks structural invariants, reporting failures under `field_prefix`
    /// (e.g. `model`) so config errors point at the offending key.
    pub fn validate(&self, field_prefix: &str) -> Result<()> {
        let fail = |field: &str, message: String| -> Result<()> {
            Err(Error::config(format!("{field_prefix}.{field}"), message))
        };
        match self {
            ModelSpec::Logistic {
                input_dim,
                num_classes,
            } => {
                if *input_dim == 0 {
                    return fail("input_dim", "must be at least 1".into());
                }
                if *num_classes < 2 {
                    return fail("num_classes", "must be at least 2".into());
                }
            }
            ModelSpec::Mlp {
                input_dim,
                hidden_dim,
                num_classes,
            } => {
                if *input_dim == 0 {
                    return fail("input_dim", "must be at least 1".into());
                }
                if *hidden_dim == 0 {
                    return fail("hidden_dim", "must be at least 1".into());
                }
                if *num_classes < 2 {
                    return fail("num_classes", "must be at least 2".into());
                }
            }
            ModelSpec::Quadratic { curvature, target } => {
                if curvature.is_empty() {
                    return fail("curvature", "must contain at least one entry".into());
                }
                if target.len() != curvature.len() {
                    return fail(
                        "target",
                        format!(
                            "length {} does not match curvature length {}",
                            target.len(),
                            curvature.len()
                        ),
                    );
                }
                for (i, a) in curvature.iter().enumerate() {
                    if !a.is_finite() || *a < MIN_CURVATURE {
                        return fail(
                            "curvature",
                            format!("entry {i} is {a}; every entry must be finite and >= {MIN_CURVATURE}"),
                        );
                    }
                }
                if let Some((i, t)) = target.iter().enumerate().find(|(_, t)| !t.is_finite()) {
                    return fail("target", format!("entry {i} is {t}; must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Initial parameters: classifier weights uniform in `[-s, s]` with
    /// `s = sqrt(6 / (fan_in + fan_out))`, biases zero; quadratic starts at
    /// the zero vector. Deterministic in `(self, seed)`.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = stream_rng(&[seed, STREAM_INIT]);
        let mut values = vec![0.0; self.param_count()];
        match self {
            ModelSpec::Logistic {
                input_dim,
                num_classes,
            } => {
                let s = (6.0 / (input_dim + num_classes) as f64).sqrt();
                for v in values.iter_mut().take(num_classes * input_dim) {
                    *v = rng.random_range(-s..=s);
                }
            }
            ModelSpec::Mlp {
                input_dim,
                hidden_dim,
                num_classes,
            } => {
                let s1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
                let s2 = (6.0 / (hidden_dim + num_classes) as f64).sqrt();
                let w1 = hidden_dim * input_dim;
                for v in values.iter_mut().take(w1) {
                    *v = rng.random_range(-s1..=s1);
                }
                let w2_start = w1 + hidden_dim;
                for v in values[w2_start..w2_start + num_classes * hidden_dim].iter_mut() {
                    *v = rng.random_range(-s2..=s2);
                }
            }
            ModelSpec::Quadratic { .. } => {}
        }
        ParamVector::new(values)
    }

    /// Loss and its exact gradient on a batch.
    ///
    /// Classifiers return the mean softmax cross-entropy; the quadratic
    /// returns the diagonal bowl described on [`ModelSpec::Quadratic`].
    /// Panics if `w` does not match the model's parameter count or the batch
    /// dimension does not match `input_dim`.
    pub fn loss_and_grad(&self, w: &ParamVector, batch: &Batch) -> (f64, ParamVector) {
        assert_eq!(
            w.len(),
            self.param_count(),
            "loss_and_grad: parameter vector length {} does not match spec ({})",
            w.len(),
            self.param_count()
        );
        assert_eq!(
            batch.input_dim(),
            self.input_dim(),
            "loss_and_grad: batch dimension mismatch"
        );
        match self {
            ModelSpec::Logistic {
                input_dim,
                num_classes,
            } => logistic_loss_grad(w, batch, *input_dim, *num_classes),
            ModelSpec::Mlp {
                input_dim,
                hidden_dim,
                num_classes,
            } => mlp_loss_grad(w, batch, *input_dim, *hidden_dim, *num_classes),
            ModelSpec::Quadratic { curvature, target } => {
                quadratic_loss_grad(w, batch, curvature, target)
            }
        }
    }

    /// Loss only (same definition as [`ModelSpec::loss_and_grad`]).
    pub fn loss(&self, w: &ParamVector, batch: &Batch) -> f64 {
        self.loss_and_grad(w, batch).0
    }

    /// Fraction of samples whose argmax logit matches the label, ties broken
    /// toward the lowest class index. Panics on the quadratic objective.
    pub fn accuracy(&self, w: &ParamVector, batch: &Batch) -> f64 {
        let num_classes = self
            .num_classes()
            .expect("accuracy: not defined for the quadratic objective");
        assert_eq!(w.len(), self.param_count(), "accuracy: parameter mismatch");
        let mut logits = vec![0.0; num_classes];
        let mut correct = 0usize;
        for i in 0..batch.len() {
            self.logits_into(w, batch.feature_row(i), &mut logits);
            let mut best = 0usize;
            for (c, l) in logits.iter().enumerate().skip(1) {
                if *l > logits[best] {
                    best = c;
                }
            }
            if best as u32 == batch.labels()[i] {
                correct += 1;
            }
        }
        correct as f64 / batch.len() as f64
    }

    /// Writes class logits for one feature row into `out`.
    fn logits_into(&self, w: &ParamVector, x: &[f64], out: &mut [f64]) {
        let p = w.as_slice();
        match self {
            ModelSpec::Logistic {
                input_dim,
                num_classes,
            } => {
                let bias = num_classes * input_dim;
                for c in 0..*num_classes {
                    let row = &p[c * input_dim..(c + 1) * input_dim];
                    let mut acc = p[bias + c];
                    for (wj, xj) in row.iter().zip(x) {
                        acc += wj * xj;
                    }
                    out[c] = acc;
                }
            }
            ModelSpec::Mlp {
                input_dim,
                hidden_dim,
                num_classes,
            } => {
                let l = MlpLayout::new(*input_dim, *hidden_dim, *num_classes);
                let mut hidden = vec![0.0; *hidden_dim];
                l.forward_hidden(p, x, &mut hidden);
                l.forward_logits(p, &hidden, out);
            }
            ModelSpec::Quadratic { .. } => {
                unreachable!("logits are classifier-only")
            }
        }
    }
}

/// `log(sum(exp(logits)))` evaluated stably via the max trick.
fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let sum: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    m + sum.ln()
}

fn logistic_loss_grad(
    w: &ParamVector,
    batch: &Batch,
    input_dim: usize,
    num_classes: usize,
) -> (f64, ParamVector) {
    let p = w.as_slice();
    let bias = num_classes * input_dim;
    let mut grad = vec![0.0; w.len()];
    let mut logits = vec![0.0; num_classes];
    let mut loss = 0.0;
    let inv_b = 1.0 / batch.len() as f64;
    for i in 0..batch.len() {
        let x = batch.feature_row(i);
        let y = batch.labels()[i] as usize;
        debug_assert!(y < num_classes, "label {y} out of range");
        for c in 0..num_classes {
            let row = &p[c * input_dim..(c + 1) * input_dim];
            let mut acc = p[bias + c];
            for (wj, xj) in row.iter().zip(x) {
                acc += wj * xj;
            }
            logits[c] = acc;
        }
        let lse = log_sum_exp(&logits);
        loss += (lse - logits[y]) * inv_b;
        for c in 0..num_classes {
            let mut d = (logits[c] - lse).exp();
            if c == y {
                d -= 1.0;
            }
            d *= inv_b;
            let g_row = &mut grad[c * input_dim..(c + 1) * input_dim];
            for (gj, xj) in g_row.iter_mut().zip(x) {
                *gj += d * xj;
            }
            grad[bias + c] += d;
        }
    }
    (loss, ParamVector::new(grad))
}

/// Offsets into the flat MLP parameter layout.
struct MlpLayout {
    input_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl MlpLayout {
    fn new(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        let b1 = hidden_dim * input_dim;
        let w2 = b1 + hidden_dim;
        let b2 = w2 + num_classes * hidden_dim;
        MlpLayout {
            input_dim,
            hidden_dim,
            num_classes,
            b1,
            w2,
            b2,
        }
    }

    fn forward_hidden(&self, p: &[f64], x: &[f64], hidden: &mut [f64]) {
        for k in 0..self.hidden_dim {
            let row = &p[k * self.input_dim..(k + 1) * self.input_dim];
            let mut acc = p[self.b1 + k];
            for (wj, xj) in row.iter().zip(x) {
                acc += wj * xj;
            }
            hidden[k] = acc.tanh();
        }
    }

    fn forward_logits(&self, p: &[f64], hidden: &[f64], logits: &mut [f64]) {
        for c in 0..self.num_classes {
            let row = &p[self.w2 + c * self.hidden_dim..self.w2 + (c + 1) * self.hidden_dim];
            let mut acc = p[self.b2 + c];
            for (wk, zk) in row.iter().zip(hidden) {
                acc += wk * zk;
            }
            logits[c] = acc;
        }
    }
}

fn mlp_loss_grad(
    w: &ParamVector,
    batch: &Batch,
    input_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
) -> (f64, ParamVector) {
    let l = MlpLayout::new(input_dim, hidden_dim, num_classes);
    let p = w.as_slice();
    let mut grad = vec![0.0; w.len()];
    let mut hidden = vec![0.0; hidden_dim];
    let mut logits = vec![0.0; num_classes];
    let mut dlogits = vec![0.0; num_classes];
    let mut dhidden = vec![0.0; hidden_dim];
    let mut loss = 0.0;
    let inv_b = 1.0 / batch.len() as f64;
    for i in 0..batch.len() {
        let x = batch.feature_row(i);
        let y = batch.labels()[i] as usize;
        debug_assert!(y < num_classes, "label {y} out of range");
        l.forward_hidden(p, x, &mut hidden);
        l.forward_logits(p, &hidden, &mut logits);
        let lse = log_sum_exp(&logits);
        loss += (lse - logits[y]) * inv_b;
        for c in 0..num_classes {
            let mut d = (logits[c] - lse).exp();
            if c == y {
                d -= 1.0;
            }
            dlogits[c] = d * inv_b;
        }
        dhidden.fill(0.0);
        for c in 0..num_classes {
            let d = dlogits[c];
            let row = &p[l.w2 + c * hidden_dim..l.w2 + (c + 1) * hidden_dim];
            let g_row = &mut grad[l.w2 + c * hidden_dim..l.w2 + (c + 1) * hidden_dim];
            for k in 0..hidden_dim {
                g_row[k] += d * hidden[k];
                dhidden[k] += d * row[k];
            }
            grad[l.b2 + c] += d;
        }
        for k in 0..hidden_dim {
            // tanh'(a) = 1 - tanh(a)^2, and hidden[k] already holds tanh(a).
            let da = dhidden[k] * (1.0 - hidden[k] * hidden[k]);
            let g_row = &mut grad[k * input_dim..(k + 1) * input_dim];
            for (gj, xj) in g_row.iter_mut().zip(x) {
                *gj += da * xj;
            }
            grad[l.b1 + k] += da;
        }
    }
    (loss, ParamVector::new(grad))
}

fn quadratic_loss_grad(
    w: &ParamVector,
    batch: &Batch,
    curvature: &[f64],
    target: &[f64],
) -> (f64, ParamVector) {
    let mean = batch.feature_mean();
    let mut grad = vec![0.0; w.len()];
    let mut loss = 0.0;
    for i in 0..w.len() {
        let diff = w[i] - (target[i] + mean[i]);
        loss += 0.5 * curvature[i] * diff * diff;
        grad[i] = curvature[i] * diff;
    }
    (loss, ParamVector::new(grad))
}
