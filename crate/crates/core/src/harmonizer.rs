//! Server-side gradient harmonization.
//!
//! After local training the server recovers each client's aggregate update
//! direction `g_k = (w_k - w) / eta`, snapshots all of them into a frozen
//! copy, and then, for each client in id order, visits the other clients in
//! a seeded random order: whenever the client's current gradient has
//! negative dot product with another client's *frozen* gradient, the
//! conflicting component is projected out. Projections accumulate on the
//! live gradient while every comparison and every projection target comes
//! from the frozen copy; that distinction is load-bearing and tested, since
//! per-task gradient-surgery implementations often project against live,
//! already-mutated gradients instead.

use serde::Serialize;

use crate::paramvec::ParamVector;
use crate::rng::stream_rng;

use rand::seq::SliceRandom;

/// Recovered per-client gradients for one round, with their frozen
/// pre-harmonization snapshot.
#[derive(Clone, Debug)]
pub struct GradientSet {
    client_ids: Vec<usize>,
    gradients: Vec<ParamVector>,
    frozen: Vec<ParamVector>,
    eta: f64,
    modified: Vec<bool>,
}

impl GradientSet {
    /// Builds a set directly from gradient vectors, freezing them
    /// immediately. Client ids must be strictly increasing and all vectors
    /// the same length.
    pub fn from_parts(client_ids: Vec<usize>, gradients: Vec<ParamVector>, eta: f64) -> Self {
        assert!(eta > 0.0, "recovery learning rate must be positive");
        assert_eq!(
            client_ids.len(),
            gradients.len(),
            "one gradient per client id"
        );
        assert!(
            client_ids.windows(2).all(|w| w[0] < w[1]),
            "client ids must be strictly increasing"
        );
        if let Some(first) = gradients.first() {
            assert!(
                gradients.iter().all(|g| g.len() == first.len()),
                "all gradients must have the same length"
            );
        }
        let frozen = gradients.clone();
        let modified = vec![false; client_ids.len()];
        GradientSet {
            client_ids,
            gradients,
            frozen,
            eta,
            modified,
        }
    }

    pub fn len(&self) -> usize {
        self.client_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.client_ids.is_empty()
    }

    pub fn client_ids(&self) -> &[usize] {
        &self.client_ids
    }

    /// Live gradients (mutated by harmonization).
    pub fn gradients(&self) -> &[ParamVector] {
        &self.gradients
    }

    /// The pre-harmonization snapshot; never mutated.
    pub fn frozen(&self) -> &[ParamVector] {
        &self.frozen
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Which clients received at least one projection. A client whose flag
    /// is false still holds its original gradient bit-for-bit.
    pub fn modified(&self) -> &[bool] {
        &self.modified
    }
}

/// One unordered client pair's pre-harmonization cosine similarity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairSimilarity {
    pub client_a: usize,
    pub client_b: usize,
    pub similarity: f64,
}

/// Pairwise conflict statistics for one round, all computed on the frozen
/// (pre-harmonization) gradients.
#[derive(Clone, Debug)]
pub struct ConflictReport {
    pub num_clients: usize,
    /// Every unordered pair `(a, b)` with `a < b`, in id order.
    pub pair_similarities: Vec<PairSimilarity>,
    /// Pairs whose dot product is strictly negative, with the dot value.
    pub conflict_pairs: Vec<(usize, usize, f64)>,
    /// Conflicting pairs over all pairs; `0` when fewer than two clients.
    pub conflict_ratio: f64,
    /// Smallest pairwise similarity; `0` when fewer than two clients.
    pub min_similarity: f64,
    /// Projections performed by [`harmonize`]; `0` for a pure measurement.
    pub projections_applied: usize,
}

impl ConflictReport {
    /// Report for a round with no measurable pairs.
    pub fn empty(num_clients: usize) -> Self {
        ConflictReport {
            num_clients,
            pair_similarities: Vec::new(),
            conflict_pairs: Vec::new(),
            conflict_ratio: 0.0,
            min_similarity: 0.0,
            projections_applied: 0,
        }
    }

    /// Pair list sorted ascending by similarity (ties keep id order), the
    /// layout of a sorted-similarity snapshot.
    pub fn sorted_pairs(&self) -> Vec<PairSimilarity> {
        let mut pairs = self.pair_similarities.clone();
        pairs.sort_by(|a, b| {
            a.similarity
                .partial_cmp(&b.similarity)
                .expect("similarities are finite")
        });
        pairs
    }

    /// Full symmetric similarity matrix indexed by position within the
    /// round's sampled client list; diagonal fixed at 1.
    pub fn similarity_matrix(&self, client_ids: &[usize]) -> Vec<Vec<f64>> {
        let n = client_ids.len();
        let pos = |id: usize| {
            client_ids
                .iter()
                .position(|&c| c == id)
                .expect("pair ids come from the same client list")
        };
        let mut m = vec![vec![0.0; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for p in &self.pair_similarities {
            let (i, j) = (pos(p.client_a), pos(p.client_b));
            m[i][j] = p.similarity;
            m[j][i] = p.similarity;
        }
        m
    }
}

/// Recovers per-client gradients from returned parameters:
/// `g_k = (w_k - global_w) / eta`, freezing the snapshot immediately.
///
/// `clients` must be sorted by strictly increasing client id and every
/// parameter vector must match `global_w` in length. Panics if `eta <= 0`.
pub fn recover_gradients(
    global_w: &ParamVector,
    clients: &[(usize, &ParamVector)],
    eta: f64,
) -> GradientSet {
    assert!(eta > 0.0, "recovery learning rate must be positive");
    let gradients: Vec<ParamVector> = clients
        .iter()
        .map(|(_, w)| {
            assert_eq!(
                w.len(),
                global_w.len(),
                "client parameters must match the global model length"
            );
            let values = w
                .as_slice()
                .iter()
                .zip(global_w.as_slice())
                .map(|(wk, g)| (wk - g) / eta)
                .collect();
            ParamVector::new(values)
        })
        .collect();
    let ids = clients.iter().map(|(id, _)| *id).collect();
    GradientSet::from_parts(ids, gradients, eta)
}

/// Measures pairwise conflict statistics on the frozen gradients. With
/// fewer than two clients the report is empty (ratio 0).
pub fn measure_conflicts(gs: &GradientSet) -> ConflictReport {
    let n = gs.len();
    if n < 2 {
        return ConflictReport::empty(n);
    }
    let mut pair_similarities = Vec::with_capacity(n * (n - 1) / 2);
    let mut conflict_pairs = Vec::new();
    let mut min_similarity = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let a = &gs.frozen()[i];
            let b = &gs.frozen()[j];
            let similarity = a.cosine_similarity(b);
            min_similarity = min_similarity.min(similarity);
            pair_similarities.push(PairSimilarity {
                client_a: gs.client_ids()[i],
                client_b: gs.client_ids()[j],
                similarity,
            });
            let dot = a.dot(b);
            if dot < 0.0 {
                conflict_pairs.push((gs.client_ids()[i], gs.client_ids()[j], dot));
            }
        }
    }
    let total_pairs = pair_similarities.len();
    ConflictReport {
        num_clients: n,
        conflict_ratio: conflict_pairs.len() as f64 / total_pairs as f64,
        min_similarity,
        pair_similarities,
        conflict_pairs,
        projections_applied: 0,
    }
}

/// Harmonizes conflicting gradients in place and returns the mutated set
/// plus the pre-harmonization conflict report (with `projections_applied`
/// filled in).
///
/// For each client `k` in id order, the other clients are visited in a
/// random order derived from `(order_seed, k's client id)`; whenever
/// `dot(g_k, frozen_j) < 0` (and the frozen target has nonzero norm), the
/// component along `frozen_j` is projected out of `g_k`. Successive
/// projections accumulate on `g_k`; targets are always frozen.
pub fn harmonize(mut gs: GradientSet, order_seed: u64) -> (GradientSet, ConflictReport) {
    let mut report = measure_conflicts(&gs);
    let n = gs.len();
    let frozen_norms_sq: Vec<f64> = gs.frozen.iter().map(|f| f.dot(f)).collect();
    let mut projections = 0usize;
    for k in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != k).collect();
        let mut rng = stream_rng(&[order_seed, gs.client_ids[k] as u64]);
        order.shuffle(&mut rng);
        for j in order {
            if frozen_norms_sq[j] > 0.0 && gs.gradients[k].dot(&gs.frozen[j]) < 0.0 {
                gs.gradients[k] = gs.gradients[k].project_out(&gs.frozen[j]);
                gs.modified[k] = true;
                projections += 1;
            }
        }
    }
    report.projections_applied = projections;
    (gs, report)
}

/// Rebuilds client parameters from (possibly harmonized) gradients:
/// `w_k = global_w + eta * g_k`.
pub fn rebuild_models(gs: &GradientSet, global_w: &ParamVector) -> Vec<ParamVector> {
    gs.gradients()
        .iter()
        .map(|g| ParamVector::axpy(gs.eta(), g, global_w))
        .collect()
}
