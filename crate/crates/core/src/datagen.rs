//! Synthetic labeled datasets and non-IID client partitioning.
//!
//! Data is a Gaussian mixture: class `c` is an isotropic unit-variance cloud
//! centered at a deterministic unit direction scaled by `separation`. Class
//! means sit on a circle in the first two feature dimensions (opposite points
//! for two classes), so label skew across clients translates directly into
//! disagreeing update directions.
//!
//! Partitioning supports three schemes: Dirichlet label skew (smaller alpha,
//! stronger heterogeneity), class shards (each client owns an exclusive set
//! of classes), and IID (each class spread evenly over clients).
//!
//! Draw order everywhere is fixed (class-major, then sample, then dimension)
//! because reordering draws silently changes every downstream result.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::Batch;
use crate::rng::{stream_rng, STREAM_DATA, STREAM_PARTITION};

/// How the generator was configured, kept with the dataset for provenance.
#[derive(Clone, Debug, Serialize)]
pub struct DatasetMeta {
    /// Per-class mean vectors (post-standardization when applied).
    pub class_means: Vec<Vec<f64>>,
    /// Standard deviation of the isotropic noise at generation time.
    pub covariance_scale: f64,
    /// Distance of each raw class mean from the origin.
    pub separation: f64,
    /// Seed the samples were drawn from.
    pub seed: u64,
    /// Whether features were shifted/scaled to zero mean, unit variance.
    pub standardized: bool,
}

/// A fully materialized labeled dataset in row-major feature layout.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    dim: usize,
    num_classes: usize,
    features: Vec<f64>,
    labels: Vec<u32>,
    meta: DatasetMeta,
}

impl SyntheticDataset {
    /// Builds a dataset from raw parts; unit-test fixtures only.
    #[cfg(test)]
    pub(crate) fn from_raw(
        dim: usize,
        num_classes: usize,
        features: Vec<f64>,
        labels: Vec<u32>,
    ) -> Self {
        assert_eq!(features.len(), labels.len() * dim);
        SyntheticDataset {
            dim,
            num_classes,
            features,
            labels,
            meta: DatasetMeta {
                class_means: vec![vec![0.0; dim]; num_classes],
                covariance_scale: 1.0,
                separation: 1.0,
                seed: 0,
                standardized: false,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    /// The whole dataset as one batch.
    pub fn full_batch(&self) -> Batch<'_> {
        Batch::new(&self.features, &self.labels, self.dim)
    }

    /// Number of samples per class label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Per-dimension mean over all samples.
    pub fn feature_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (m, x) in mean.iter_mut().zip(self.feature_row(i)) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= self.len() as f64;
        }
        mean
    }
}

/// Deterministic unit-norm direction for class `c`: points on the unit
/// circle in the first two dimensions, or alternating signs when `dim == 1`.
fn class_direction(c: usize, num_classes: usize, dim: usize) -> Vec<f64> {
    let mut dir = vec![0.0; dim];
    if dim == 1 {
        dir[0] = if c.is_multiple_of(2) { 1.0 } else { -1.0 };
    } else {
        let theta = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
        dir[0] = theta.cos();
        dir[1] = theta.sin();
    }
    dir
}

/// Draws `per_class` unit-variance Gaussian samples around each class mean.
///
/// Features are raw (not standardized); see [`standardize`] and
/// [`MixtureConfig::generate`] for the full pipeline.
pub fn generate_gaussian_mixture(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> SyntheticDataset {
    assert!(num_classes >= 1, "need at least one class");
    assert!(per_class >= 1, "need at least one sample per class");
    assert!(dim >= 1, "need at least one feature dimension");
    assert!(
        separation > 0.0 && separation.is_finite(),
        "separation must be positive and finite"
    );

    let mut rng = stream_rng(&[seed, STREAM_DATA]);
    let noise = Normal::new(0.0, 1.0).expect("unit normal is always valid");
    let mut features = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    let mut class_means = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let mean: Vec<f64> = class_direction(c, num_classes, dim)
            .into_iter()
            .map(|u| u * separation)
            .collect();
        for _ in 0..per_class {
            for m in &mean {
                features.push(m + noise.sample(&mut rng));
            }
            labels.push(c as u32);
        }
        class_means.push(mean);
    }
    SyntheticDataset {
        dim,
        num_classes,
        features,
        labels,
        meta: DatasetMeta {
            class_means,
            covariance_scale: 1.0,
            separation,
            seed,
            standardized: false,
        },
    }
}

/// Per-dimension affine transform `x -> (x - shift) / scale`.
struct Standardizer {
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    /// Fits zero-mean unit-variance statistics on `features` (row-major,
    /// `dim` columns). Dimensions with (near-)zero variance are shifted but
    /// left unscaled.
    fn fit(features: &[f64], dim: usize) -> Self {
        let n = features.len() / dim;
        assert!(n > 0, "cannot standardize an empty dataset");
        let mut shift = vec![0.0; dim];
        for row in features.chunks_exact(dim) {
            for (s, x) in shift.iter_mut().zip(row) {
                *s += x;
            }
        }
        for s in &mut shift {
            *s /= n as f64;
        }
        let mut var = vec![0.0; dim];
        for row in features.chunks_exact(dim) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&shift) {
                let d = x - m;
                *v += d * d;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { shift, scale }
    }

    fn apply(&self, ds: &mut SyntheticDataset) {
        let dim = ds.dim;
        for row in ds.features.chunks_exact_mut(dim) {
            for ((x, m), s) in row.iter_mut().zip(&self.shift).zip(&self.scale) {
                *x = (*x - m) / s;
            }
        }
        for mean in &mut ds.meta.class_means {
            for ((x, m), s) in mean.iter_mut().zip(&self.shift).zip(&self.scale) {
                *x = (*x - m) / s;
            }
        }
        ds.meta.standardized = true;
    }
}

/// Standardizes a dataset in place to zero mean and unit variance per
/// dimension, updating the stored class means to match.
pub fn standardize(ds: &mut SyntheticDataset) {
    Standardizer::fit(&ds.features, ds.dim).apply(ds);
}

/// Full dataset pipeline: draw train and held-out test samples from the same
/// mixture, optionally standardize both with shared statistics.
#[derive(Clone, Debug, Serialize)]
pub struct MixtureConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub standardize: bool,
    /// Held-out test samples per class, as a fraction of `per_class`
    /// (at least one test sample per class).
    pub test_fraction: f64,
}

impl MixtureConfig {
    /// Generates `(train, test)`. The test split is drawn from the same
    /// class distributions, never partitioned to clients; standardization
    /// statistics are fit on train and test jointly so both live on the same
    /// scale.
    pub fn generate(&self, seed: u64) -> (SyntheticDataset, SyntheticDataset) {
        assert!(
            self.test_fraction > 0.0 && self.test_fraction <= 0.5,
            "test_fraction must be in (0, 0.5]"
        );
        let test_per_class = ((self.per_class as f64 * self.test_fraction).round() as usize).max(1);
        let combined = generate_gaussian_mixture(
            self.num_classes,
            self.per_class + test_per_class,
            self.dim,
            self.separation,
            seed,
        );
        let standardizer = self
            .standardize
            .then(|| Standardizer::fit(&combined.features, combined.dim));

        let split = |take_train: bool| -> SyntheticDataset {
            let per_class_total = self.per_class + test_per_class;
            let (offset, count) = if take_train {
                (0, self.per_class)
            } else {
                (self.per_class, test_per_class)
            };
            let mut features = Vec::with_capacity(self.num_classes * count * self.dim);
            let mut labels = Vec::with_capacity(self.num_classes * count);
            for c in 0..self.num_classes {
                let start = (c * per_class_total + offset) * self.dim;
                features.extend_from_slice(&combined.features[start..start + count * self.dim]);
                labels.extend(std::iter::repeat_n(c as u32, count));
            }
            let mut ds = SyntheticDataset {
                dim: self.dim,
                num_classes: self.num_classes,
                features,
                labels,
                meta: combined.meta.clone(),
            };
            if let Some(st) = &standardizer {
                st.apply(&mut ds);
            }
            ds
        };
        (split(true), split(false))
    }
}

/// How training samples were assigned to clients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    Dirichlet,
    ClassShard,
    Iid,
}

/// Disjoint per-client sample index lists over one dataset.
#[derive(Clone, Debug)]
pub struct Partition {
    scheme: PartitionScheme,
    alpha: Option<f64>,
    assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn scheme(&self) -> PartitionScheme {
        self.scheme
    }

    /// Dirichlet concentration, `f64::INFINITY` marking the uniform limit.
    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn client(&self, k: usize) -> &[usize] {
        &self.assignments[k]
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }
}

/// Groups sample indices by class label, each group in dataset index order.
fn indices_by_class(ds: &SyntheticDataset) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); ds.num_classes()];
    for (i, &l) in ds.labels().iter().enumerate() {
        groups[l as usize].push(i);
    }
    groups
}

/// Splits `total` into integer counts proportional to `props` using
/// largest-remainder rounding, so the counts sum to `total` exactly.
/// Remainder ties resolve toward lower client ids.
fn largest_remainder_counts(props: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = props.iter().map(|p| (p * total as f64) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = props[a] * total as f64 - counts[a] as f64;
        let rb = props[b] * total as f64 - counts[b] as f64;
        rb.partial_cmp(&ra).expect("remainders are finite")
    });
    for &k in order.iter().take(total - assigned) {
        counts[k] += 1;
    }
    counts
}

/// Even per-class counts: every client gets `floor(n/k)` with the `n % k`
/// leftovers rotated by class index so small classes still reach every
/// client over the course of the dataset.
fn even_counts(class: usize, n: usize, k: usize) -> Vec<usize> {
    let base = n / k;
    let rem = n % k;
    let start = if rem == 0 { 0 } else { (class * rem) % k };
    (0..k)
        .map(|c| base + usize::from((c + k - start) % k < rem))
        .collect()
}

/// One attempted assignment; `None` when a degenerate proportion draw must
/// be retried.
fn draw_assignment(
    ds: &SyntheticDataset,
    k: usize,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Vec<usize>>> {
    let mut assignments = vec![Vec::new(); k];
    for (class, mut indices) in indices_by_class(ds).into_iter().enumerate() {
        indices.shuffle(rng);
        let counts = if alpha.is_infinite() {
            even_counts(class, indices.len(), k)
        } else {
            let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
            let weights: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
            let sum: f64 = weights.iter().sum();
            if !sum.is_normal() {
                return None;
            }
            let props: Vec<f64> = weights.iter().map(|w| w / sum).collect();
            largest_remainder_counts(&props, indices.len())
        };
        let mut cursor = 0;
        for (client, &count) in counts.iter().enumerate() {
            assignments[client].extend_from_slice(&indices[cursor..cursor + count]);
            cursor += count;
        }
        debug_assert_eq!(cursor, indices.len(), "class samples fully assigned");
    }
    Some(assignments)
}

const MAX_PARTITION_ATTEMPTS: usize = 100;

/// Dirichlet label-skew partition: for each class, client proportions are
/// drawn from `Dirichlet(alpha, ..., alpha)` and converted to exact counts
/// by largest-remainder rounding. `alpha = INFINITY` is the uniform limit
/// (even split). If any client ends up empty the whole partition is redrawn
/// with the next seed, up to 100 attempts.
pub fn partition_dirichlet(
    ds: &SyntheticDataset,
    k: usize,
    alpha: f64,
    seed: u64,
) -> Result<Partition> {
    assert!(k >= 1, "need at least one client");
    assert!(alpha > 0.0, "alpha must be positive (INFINITY for uniform)");
    build_partition(ds, k, alpha, seed, PartitionScheme::Dirichlet, Some(alpha))
}

/// IID partition: every class split as evenly as integer division allows.
pub fn partition_iid(ds: &SyntheticDataset, k: usize, seed: u64) -> Result<Partition> {
    assert!(k >= 1, "need at least one client");
    build_partition(ds, k, f64::INFINITY, seed, PartitionScheme::Iid, None)
}

fn build_partition(
    ds: &SyntheticDataset,
    k: usize,
    alpha: f64,
    seed: u64,
    scheme: PartitionScheme,
    alpha_marker: Option<f64>,
) -> Result<Partition> {
    let mut attempts = 0;
    for attempt in 0..MAX_PARTITION_ATTEMPTS as u64 {
        attempts += 1;
        let mut rng = stream_rng(&[seed.wrapping_add(attempt), STREAM_PARTITION]);
        let Some(assignments) = draw_assignment(ds, k, alpha, &mut rng) else {
            continue;
        };
        if assignments.iter().all(|a| !a.is_empty()) {
            return Ok(Partition {
                scheme,
                alpha: alpha_marker,
                assignments,
            });
        }
        // The uniform limit draws deterministic counts; retrying cannot
        // produce a different outcome.
        if alpha.is_infinite() {
            break;
        }
    }
    Err(Error::PartitionExhausted {
        clients: k,
        attempts,
        alpha,
    })
}

/// Class-shard partition: classes are shuffled deterministically and sliced
/// into `k` equal groups; each client receives every sample of its classes.
/// Panics unless `num_classes` is divisible by `k`.
pub fn partition_class_shard(ds: &SyntheticDataset, k: usize, seed: u64) -> Partition {
    assert!(k >= 1, "need at least one client");
    assert_eq!(
        ds.num_classes() % k,
        0,
        "class_shard requires num_classes ({}) divisible by the client count ({})",
        ds.num_classes(),
        k
    );
    let mut class_order: Vec<usize> = (0..ds.num_classes()).collect();
    let mut rng = stream_rng(&[seed, STREAM_PARTITION]);
    class_order.shuffle(&mut rng);
    let per_client = ds.num_classes() / k;
    let by_class = indices_by_class(ds);
    let assignments = class_order
        .chunks_exact(per_client)
        .map(|classes| {
            let mut own: Vec<usize> = classes.iter().flat_map(|&c| by_class[c].clone()).collect();
            own.sort_unstable();
            own
        })
        .collect();
    Partition {
        scheme: PartitionScheme::ClassShard,
        alpha: None,
        assignments,
    }
}

#[derive(Serialize)]
struct ClientSummary {
    id: usize,
    size: usize,
    class_counts: Vec<usize>,
    indices: Vec<usize>,
}

#[derive(Serialize)]
struct PartitionSummary<'a> {
    scheme: PartitionScheme,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<String>,
    num_clients: usize,
    dataset: &'a DatasetMeta,
    samples: usize,
    num_classes: usize,
    clients: Vec<ClientSummary>,
}

/// Renders a dataset-plus-partition summary (metadata and index lists) as a
/// JSON document for external inspection.
pub fn partition_summary_json(ds: &SyntheticDataset, p: &Partition) -> serde_json::Value {
    let clients = p
        .assignments()
        .iter()
        .enumerate()
        .map(|(id, indices)| {
            let mut class_counts = vec![0usize; ds.num_classes()];
            for &i in indices {
                class_counts[ds.labels()[i] as usize] += 1;
            }
            ClientSummary {
                id,
                size: indices.len(),
                class_counts,
                indices: indices.clone(),
            }
        })
        .collect();
    let summary = PartitionSummary {
        scheme: p.scheme(),
        alpha: p.alpha().map(|a| {
            if a.is_infinite() {
                "inf".to_string()
            } else {
                format!("{a}")
            }
        }),
        num_clients: p.num_clients(),
        dataset: ds.meta(),
        samples: ds.len(),
        num_classes: ds.num_classes(),
        clients,
    };
    serde_json::to_value(summary).expect("partition summary serializes")
}

/// Writes [`partition_summary_json`] to a file.
pub fn write_partition_json(path: &Path, ds: &SyntheticDataset, p: &Partition) -> Result<()> {
    let io_err = |source| Error::Io {
        action: "write partition summary",
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, &partition_summary_json(ds, p))
        .map_err(|e| io_err(std::io::Error::other(e)))?;
    writer.write_all(b"\n").map_err(io_err)?;
    Ok(())
}
