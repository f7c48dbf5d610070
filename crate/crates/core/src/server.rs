//! The federated round loop: client sampling, local-update dispatch,
//! optional gradient harmonization, and aggregation.
//!
//! A [`Simulation`] owns everything one (strategy, seed) cell needs: model
//! spec, datasets, partition, local-training config, and the evolving
//! global state. Rounds are sequential; the client updates inside a round
//! run in parallel and are deterministic regardless of thread scheduling
//! because every random choice comes from a stream keyed only by the
//! experiment seed, round index, and client id.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{Partition, SyntheticDataset};
use crate::error::{Error, Result};
use crate::harmonizer::{
    harmonize, measure_conflicts, rebuild_models, recover_gradients, ConflictReport,
};
use crate::metrics::RoundRecord;
use crate::models::ModelSpec;
use crate::paramvec::ParamVector;
use crate::rng::{derive_seed, stream_rng, STREAM_HARMONIZE, STREAM_SAMPLE, STREAM_SHUFFLE};
use crate::trainer::{client_update, ClientResult, LocalConfig};

/// Server-side combination rule for the sampled clients' parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregator {
    /// Sample-count-weighted mean of client parameters.
    #[serde(rename = "fedavg")]
    FedAvg,
    /// Step-normalized averaging: each client's update is divided by its
    /// local step count before a weighted mean, then rescaled by the
    /// effective step count.
    #[serde(rename = "fednova")]
    FedNova,
}

/// One strategy cell of an experiment: how clients are sampled and how
/// their updates are combined, for how many rounds.
#[derive(Clone, Debug, Serialize)]
pub struct StrategyConfig {
    /// Label used for output directories and the final comparison table.
    pub name: String,
    pub aggregator: Aggregator,
    /// Project conflicting gradients before aggregation.
    pub harmonize: bool,
    /// Fraction of clients sampled each round, in (0, 1].
    pub client_fraction: f64,
    /// Number of communication rounds.
    pub rounds: usize,
}

impl StrategyConfig {
    /// Validates against the client count; `field_prefix` names this
    /// strategy in error paths (e.g. `strategies[1]`).
    pub fn validate(&self, num_clients: usize, field_prefix: &str) -> Result<()> {
        let field = |leaf: &str| format!("{field_prefix}.{leaf}");
        if self.name.is_empty() {
            return Err(Error::config(field("name"), "must be non-empty"));
        }
        // Strategy names become output subdirectory names.
        if self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return Err(Error::config(
                field("name"),
                format!("`{}` is not usable as a directory name", self.name),
            ));
        }
        if self.rounds == 0 {
            return Err(Error::config(field("rounds"), "must be at least 1"));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::config(
                field("client_fraction"),
                format!("must be in (0, 1], got {}", self.client_fraction),
            ));
        }
        let per_round = sample_size(num_clients, self.client_fraction);
        if self.harmonize && per_round < 2 {
            return Err(Error::config(
                field("harmonize"),
                format!(
                    "harmonization needs at least 2 sampled clients per round, \
                     but client_fraction {} of {num_clients} clients samples {per_round}",
                    self.client_fraction
                ),
            ));
        }
        Ok(())
    }
}

/// Number of clients sampled per round: `fraction * num_clients` rounded
/// half-up, floored at one.
pub fn sample_size(num_clients: usize, fraction: f64) -> usize {
    let rounded = (fraction * num_clients as f64 + 0.5).floor() as usize;
    rounded.max(1)
}

/// Uniform sample without replacement, deterministic per `(seed, round)`,
/// returned sorted by client id.
pub fn sample_clients(num_clients: usize, fraction: f64, round: usize, seed: u64) -> Vec<usize> {
    assert!(num_clients > 0, "cannot sample from zero clients");
    assert!(
        fraction > 0.0 && fraction <= 1.0,
        "client fraction must be in (0, 1], got {fraction}"
    );
    let size = sample_size(num_clients, fraction);
    let mut rng = stream_rng(&[seed, STREAM_SAMPLE, round as u64]);
    let mut ids = rand::seq::index::sample(&mut rng, num_clients, size).into_vec();
    ids.sort_unstable();
    ids
}

/// Sample-count-weighted mean of the clients' final parameters, weights
/// renormalized over the sampled set.
pub fn aggregate_fedavg(results: &[ClientResult]) -> ParamVector {
    assert!(!results.is_empty(), "aggregation needs at least one client");
    let total: usize = results.iter().map(|r| r.num_samples).sum();
    assert!(total > 0, "sampled clients hold no data");
    let mut acc = ParamVector::zeros(results[0].final_params.len());
    for r in results {
        let weight = r.num_samples as f64 / total as f64;
        acc.axpy_in_place(weight, &r.final_params);
    }
    acc
}

/// Step-normalized aggregation: with `p_k = n_k / n`, each client's update
/// is normalized to `d_k = (w_k - global) / tau_k`, and the new global is
/// `global + tau_eff * sum_k p_k d_k` where `tau_eff = sum_k p_k tau_k`.
/// Degenerates to [`aggregate_fedavg`] when all `tau_k` are equal.
pub fn aggregate_fednova(results: &[ClientResult], global_w: &ParamVector) -> ParamVector {
    assert!(!results.is_empty(), "aggregation needs at least one client");
    let total: usize = results.iter().map(|r| r.num_samples).sum();
    assert!(total > 0, "sampled clients hold no data");
    let mut tau_eff = 0.0;
    let mut mean_direction = ParamVector::zeros(global_w.len());
    for r in results {
        assert!(
            r.steps > 0,
            "step-normalized aggregation requires at least one local step per client"
        );
        let p = r.num_samples as f64 / total as f64;
        tau_eff += p * r.steps as f64;
        let delta = r.final_params.sub(global_w);
        mean_direction.axpy_in_place(p / r.steps as f64, &delta);
    }
    ParamVector::axpy(tau_eff, &mean_direction, global_w)
}

/// Mutable per-run state threaded through the rounds.
#[derive(Clone, Debug)]
pub struct GlobalState {
    /// Completed rounds so far; the next round to run.
    pub round: usize,
    pub global: ParamVector,
    pub history: Vec<RoundRecord>,
}

/// One (strategy, seed) experiment cell.
pub struct Simulation {
    spec: ModelSpec,
    train: SyntheticDataset,
    test: SyntheticDataset,
    partition: Partition,
    local: LocalConfig,
    strategy: StrategyConfig,
    seed: u64,
    state: GlobalState,
}

impl Simulation {
    /// Builds a cell and initializes the global model from the seed.
    /// All component configs are re-validated so a hand-built simulation
    /// enjoys the same guarantees as one parsed from a config file.
    pub fn new(
        spec: ModelSpec,
        train: SyntheticDataset,
        test: SyntheticDataset,
        partition: Partition,
        local: LocalConfig,
        strategy: StrategyConfig,
        seed: u64,
    ) -> Result<Self> {
        spec.validate("model")?;
        local.validate("local")?;
        strategy.validate(partition.num_clients(), "strategy")?;
        assert_eq!(
            train.dim(),
            spec.input_dim(),
            "training data dimension does not match the model input dimension"
        );
        assert_eq!(
            test.dim(),
            spec.input_dim(),
            "test data dimension does not match the model input dimension"
        );
        let max_index = partition.assignments().iter().flatten().max().copied();
        assert!(
            max_index.is_none_or(|m| m < train.len()),
            "partition references sample indices outside the training set"
        );
        let global = spec.init_params(seed);
        Ok(Simulation {
            spec,
            train,
            test,
            partition,
            local,
            strategy,
            seed,
            state: GlobalState {
                round: 0,
                global,
                history: Vec::new(),
            },
        })
    }

    pub fn state(&self) -> &GlobalState {
        &self.state
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.state.history
    }

    pub fn strategy(&self) -> &StrategyConfig {
        &self.strategy
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn global_params(&self) -> &ParamVector {
        &self.state.global
    }

    pub fn rounds_completed(&self) -> usize {
        self.state.round
    }

    pub fn rounds_planned(&self) -> usize {
        self.strategy.rounds
    }

    /// Runs one communication round and appends its record to the history.
    ///
    /// Order of operations: sample clients, run local updates in parallel,
    /// recover update directions, measure conflicts (always, so runs with
    /// harmonization off still log the same diagnostics), optionally
    /// harmonize and rebuild only the projected clients' parameters,
    /// aggregate, evaluate on the held-out test split.
    pub fn run_round(&mut self) -> Result<&RoundRecord> {
        let start = Instant::now();
        let round = self.state.round;
        let sampled = sample_clients(
            self.partition.num_clients(),
            self.strategy.client_fraction,
            round,
            self.seed,
        );

        let spec = &self.spec;
        let global = &self.state.global;
        let train = &self.train;
        let partition = &self.partition;
        let local = &self.local;
        let seed = self.seed;
        let outcomes: Vec<Result<ClientResult>> = sampled
            .par_iter()
            .map(|&k| {
                let client_seed = derive_seed(&[seed, STREAM_SHUFFLE, round as u64, k as u64]);
                client_update(
                    spec,
                    global,
                    train,
                    partition.client(k),
                    local,
                    k,
                    client_seed,
                )
            })
            .collect();
        let mut results = Vec::with_capacity(outcomes.len());
        for outcome in outcomes {
            results.push(outcome.map_err(|e| e.in_round(round))?);
        }

        let client_params: Vec<(usize, &ParamVector)> = sampled
            .iter()
            .zip(&results)
            .map(|(&k, r)| (k, &r.final_params))
            .collect();
        let gradients =
            recover_gradients(&self.state.global, &client_params, self.local.learning_rate);
        let report: ConflictReport = if self.strategy.harmonize {
            let order_seed = derive_seed(&[seed, STREAM_HARMONIZE, round as u64]);
            let (harmonized, report) = harmonize(gradients, order_seed);
            // Only clients whose gradient was actually projected get rebuilt
            // parameters; the rest keep their trained parameters bit for bit,
            // so a conflict-free round is indistinguishable from plain FedAvg.
            let rebuilt = rebuild_models(&harmonized, &self.state.global);
            for ((result, params), &was_projected) in
                results.iter_mut().zip(rebuilt).zip(harmonized.modified())
            {
                if was_projected {
                    result.final_params = params;
                }
            }
            report
        } else {
            measure_conflicts(&gradients)
        };

        let new_global = match self.strategy.aggregator {
            Aggregator::FedAvg => aggregate_fedavg(&results),
            Aggregator::FedNova => aggregate_fednova(&results, &self.state.global),
        };
        assert!(
            new_global.is_finite(),
            "aggregated global parameters became non-finite in round {round}"
        );
        self.state.global = new_global;

        let test_batch = self.test.full_batch();
        let test_loss = self.spec.loss(&self.state.global, &test_batch);
        let test_accuracy = self
            .spec
            .is_classifier()
            .then(|| self.spec.accuracy(&self.state.global, &test_batch));

        self.state.history.push(RoundRecord {
            round,
            test_loss,
            test_accuracy,
            conflict_ratio: report.conflict_ratio,
            min_similarity: report.min_similarity,
            projections_applied: report.projections_applied,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            pair_similarities: report.sorted_pairs(),
        });
        self.state.round += 1;
        Ok(self.state.history.last().expect("just pushed"))
    }

    /// Runs the remaining rounds up to the strategy's planned count.
    pub fn run_to_completion(&mut self) -> Result<()> {
        while self.state.round < self.strategy.rounds {
            self.run_round()?;
        }
        Ok(())
    }
}
