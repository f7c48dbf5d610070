//! TOML experiment configuration: parsing, defaults, and validation.
//!
//! A config document has sections `[model]`, `[data]`, `[partition]`,
//! optional `[local]`, and either one `[strategy]` table or a
//! `[[strategies]]` array; top-level keys are `rounds`, `seeds`,
//! `output_dir`, and `dump_partition`. Unknown keys anywhere are hard
//! errors, and every validation failure names the offending field path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize, Serializer};

use crate::datagen::{
    partition_class_shard, partition_dirichlet, partition_iid, MixtureConfig, Partition,
    PartitionScheme, SyntheticDataset,
};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::server::{Aggregator, StrategyConfig};
use crate::trainer::LocalConfig;

/// How training samples are split across clients.
#[derive(Clone, Debug, Serialize)]
pub struct PartitionConfig {
    pub scheme: PartitionScheme,
    /// Dirichlet concentration; `inf` means an exactly even split.
    /// `None` for the other schemes.
    #[serde(serialize_with = "serialize_alpha")]
    pub alpha: Option<f64>,
    pub clients: usize,
}

fn serialize_alpha<S: Serializer>(
    alpha: &Option<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match alpha {
        None => s.serialize_none(),
        // JSON has no infinity literal; the echo writes the string "inf".
        Some(a) if a.is_infinite() => s.serialize_str("inf"),
        Some(a) => s.serialize_f64(*a),
    }
}

/// A fully resolved and validated experiment: every default filled in,
/// every invariant checked at parse time.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub data: MixtureConfig,
    pub partition: PartitionConfig,
    pub local: LocalConfig,
    pub strategies: Vec<StrategyConfig>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Also write each run's client assignment as JSON.
    pub dump_partition: bool,
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn parse_str(text: &str) -> Result<ExperimentConfig> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::config("config", e.to_string().trim()))?;
        raw.build()
    }

    /// Reads and parses a config file.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            action: "read config",
            path: path.to_path_buf(),
            source,
        })?;
        ExperimentConfig::parse_str(&text)
    }

    /// The resolved-config echo written next to each run's metrics.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Partitions a generated training set according to this config.
    pub fn build_partition(&self, train: &SyntheticDataset, seed: u64) -> Result<Partition> {
        match self.partition.scheme {
            PartitionScheme::Dirichlet => {
                let alpha = self
                    .partition
                    .alpha
                    .expect("validated: dirichlet has alpha");
                partition_dirichlet(train, self.partition.clients, alpha, seed)
            }
            PartitionScheme::Iid => partition_iid(train, self.partition.clients, seed),
            PartitionScheme::ClassShard => {
                Ok(partition_class_shard(train, self.partition.clients, seed))
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    /// Default round count for strategies that do not set their own.
    rounds: Option<usize>,
    seeds: Vec<u64>,
    output_dir: Option<PathBuf>,
    dump_partition: Option<bool>,
    model: RawModel,
    data: RawData,
    partition: RawPartition,
    local: Option<RawLocal>,
    strategy: Option<RawStrategy>,
    strategies: Option<Vec<RawStrategy>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    kind: String,
    input_dim: Option<usize>,
    num_classes: Option<usize>,
    hidden_dim: Option<usize>,
    curvature: Option<Vec<f64>>,
    target: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    num_classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    standardize: Option<bool>,
    test_fraction: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPartition {
    scheme: String,
    clients: usize,
    alpha: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLocal {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    prox_mu: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStrategy {
    name: Option<String>,
    aggregator: Option<Aggregator>,
    harmonize: Option<bool>,
    client_fraction: Option<f64>,
    rounds: Option<usize>,
}

impl RawConfig {
    fn build(self) -> Result<ExperimentConfig> {
        let data = self.data.build()?;
        let model = self.model.build(&data)?;
        model.validate("model")?;
        let partition = self.partition.build(&data)?;
        let local = self.local.map(|l| l.build()).unwrap_or_default();
        local.validate("local")?;

        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        if let Some(0) = self.rounds {
            return Err(Error::config("rounds", "must be at least 1"));
        }

        let strategies = resolve_strategies(self.strategy, self.strategies, self.rounds)?;
        for (i, strategy) in strategies.iter().enumerate() {
            strategy.validate(partition.clients, &format!("strategies[{i}]"))?;
        }
        for (i, a) in strategies.iter().enumerate() {
            if strategies[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::config(
                    format!("strategies[{i}].name"),
                    format!("duplicate strategy name `{}`", a.name),
                ));
            }
        }

        Ok(ExperimentConfig {
            model,
            data,
            partition,
            local,
            strategies,
            seeds: self.seeds,
            output_dir: self.output_dir.unwrap_or_else(|| PathBuf::from("runs")),
            dump_partition: self.dump_partition.unwrap_or(false),
        })
    }
}

impl RawData {
    fn build(self) -> Result<MixtureConfig> {
        if self.num_classes == 0 {
            return Err(Error::config("data.num_classes", "must be at least 1"));
        }
        if self.per_class == 0 {
            return Err(Error::config("data.per_class", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(Error::config("data.dim", "must be at least 1"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::config(
                "data.separation",
                format!("must be positive and finite, got {}", self.separation),
            ));
        }
        let test_fraction = self.test_fraction.unwrap_or(0.1);
        if !(test_fraction > 0.0 && test_fraction <= 0.5) {
            return Err(Error::config(
                "data.test_fraction",
                format!("must be in (0, 0.5], got {test_fraction}"),
            ));
        }
        Ok(MixtureConfig {
            num_classes: self.num_classes,
            per_class: self.per_class,
            dim: self.dim,
            separation: self.separation,
            standardize: self.standardize.unwrap_or(true),
            test_fraction,
        })
    }
}

impl RawModel {
    /// Builds the model spec, defaulting dimensions from the data section
    /// and rejecting fields that do not belong to the chosen kind.
    fn build(self, data: &MixtureConfig) -> Result<ModelSpec> {
        let reject = |field: Option<bool>, name: &str, kind: &str| -> Result<()> {
            if field == Some(true) {
                return Err(Error::config(
                    format!("model.{name}"),
                    format!("not a `{kind}` model field"),
                ));
            }
            Ok(())
        };
        let dim_checked =
            |value: Option<usize>, name: &str, expected: usize, source: &str| match value {
                Some(v) if v != expected => Err(Error::config(
                    format!("model.{name}"),
                    format!("is {v} but {source} is {expected}; they must match"),
                )),
                _ => Ok(expected),
            };
        match self.kind.as_str() {
            "logistic" => {
                reject(self.hidden_dim.map(|_| true), "hidden_dim", "logistic")?;
                reject(self.curvature.map(|_| true), "curvature", "logistic")?;
                reject(self.target.map(|_| true), "target", "logistic")?;
                Ok(ModelSpec::Logistic {
                    input_dim: dim_checked(self.input_dim, "input_dim", data.dim, "data.dim")?,
                    num_classes: dim_checked(
                        self.num_classes,
                        "num_classes",
                        data.num_classes,
                        "data.num_classes",
                    )?,
                })
            }
            "mlp" => {
                reject(self.curvature.map(|_| true), "curvature", "mlp")?;
                reject(self.target.map(|_| true), "target", "mlp")?;
                let hidden_dim = self.hidden_dim.ok_or_else(|| {
                    Error::config("model.hidden_dim", "required for an mlp model")
                })?;
                Ok(ModelSpec::Mlp {
                    input_dim: dim_checked(self.input_dim, "input_dim", data.dim, "data.dim")?,
                    hidden_dim,
                    num_classes: dim_checked(
                        self.num_classes,
                        "num_classes",
                        data.num_classes,
                        "data.num_classes",
                    )?,
                })
            }
            "quadratic" => {
                reject(self.input_dim.map(|_| true), "input_dim", "quadratic")?;
                reject(self.num_classes.map(|_| true), "num_classes", "quadratic")?;
                reject(self.hidden_dim.map(|_| true), "hidden_dim", "quadratic")?;
                let curvature = self.curvature.ok_or_else(|| {
                    Error::config("model.curvature", "required for a quadratic model")
                })?;
                let target = self.target.ok_or_else(|| {
                    Error::config("model.target", "required for a quadratic model")
                })?;
                dim_checked(Some(curvature.len()), "curvature", data.dim, "data.dim")?;
                Ok(ModelSpec::Quadratic { curvature, target })
            }
            other => Err(Error::config(
                "model.kind",
                format!("unknown kind `{other}`, expected \"logistic\", \"mlp\", or \"quadratic\""),
            )),
        }
    }
}

impl RawPartition {
    fn build(self, data: &MixtureConfig) -> Result<PartitionConfig> {
        if self.clients == 0 {
            return Err(Error::config("partition.clients", "must be at least 1"));
        }
        let total = data.num_classes * data.per_class;
        if self.clients > total {
            return Err(Error::config(
                "partition.clients",
                format!(
                    "{} clients cannot share {total} training samples",
                    self.clients
                ),
            ));
        }
        let scheme = match self.scheme.as_str() {
            "dirichlet" => PartitionScheme::Dirichlet,
            "iid" => PartitionScheme::Iid,
            "class_shard" => PartitionScheme::ClassShard,
            other => {
                return Err(Error::config(
                    "partition.scheme",
                    format!(
                    "unknown scheme `{other}`, expected \"dirichlet\", \"iid\", or \"class_shard\""
                ),
                ))
            }
        };
        let alpha = match (scheme, self.alpha) {
            (PartitionScheme::Dirichlet, None) => {
                return Err(Error::config(
                    "partition.alpha",
                    "required for the dirichlet scheme (use `inf` for an even split)",
                ))
            }
            (PartitionScheme::Dirichlet, Some(a)) => {
                // Also rejects NaN, which fails every comparison.
                if a.is_nan() || a <= 0.0 {
                    return Err(Error::config(
                        "partition.alpha",
                        format!("must be positive, got {a}"),
                    ));
                }
                Some(a)
            }
            (_, Some(_)) => {
                return Err(Error::config(
                    "partition.alpha",
                    format!("only valid for the dirichlet scheme, not `{}`", self.scheme),
                ))
            }
            (_, None) => None,
        };
        if scheme == PartitionScheme::ClassShard && !data.num_classes.is_multiple_of(self.clients) {
            return Err(Error::config(
                "partition.clients",
                format!(
                    "class_shard needs data.num_classes ({}) divisible by clients ({})",
                    data.num_classes, self.clients
                ),
            ));
        }
        Ok(PartitionConfig {
            scheme,
            alpha,
            clients: self.clients,
        })
    }
}

impl RawLocal {
    fn build(self) -> LocalConfig {
        let defaults = LocalConfig::default();
        LocalConfig {
            epochs: self.epochs.unwrap_or(defaults.epochs),
            batch_size: self.batch_size.unwrap_or(defaults.batch_size),
            learning_rate: self.learning_rate.unwrap_or(defaults.learning_rate),
            momentum: self.momentum.unwrap_or(defaults.momentum),
            prox_mu: self.prox_mu.unwrap_or(defaults.prox_mu),
        }
    }
}

fn default_strategy_name(aggregator: Aggregator, harmonize: bool) -> String {
    let base = match aggregator {
        Aggregator::FedAvg => "fedavg",
        Aggregator::FedNova => "fednova",
    };
    if harmonize {
        format!("{base}+harmonize")
    } else {
        base.to_string()
    }
}

fn resolve_strategies(
    single: Option<RawStrategy>,
    sweep: Option<Vec<RawStrategy>>,
    top_rounds: Option<usize>,
) -> Result<Vec<StrategyConfig>> {
    let raws = match (single, sweep) {
        (Some(_), Some(_)) => {
            return Err(Error::config(
                "strategies",
                "use either a single [strategy] table or a [[strategies]] array, not both",
            ))
        }
        (Some(s), None) => vec![s],
        (None, Some(list)) => {
            if list.is_empty() {
                return Err(Error::config(
                    "strategies",
                    "must list at least one strategy",
                ));
            }
            list
        }
        (None, None) => vec![RawStrategy {
            name: None,
            aggregator: None,
            harmonize: None,
            client_fraction: None,
            rounds: None,
        }],
    };
    raws.into_iter()
        .enumerate()
        .map(|(i, raw)| {
            let rounds = raw.rounds.or(top_rounds).ok_or_else(|| {
                Error::config(
                    format!("strategies[{i}].rounds"),
                    "not set and no top-level `rounds` default exists",
                )
            })?;
            let aggregator = raw.aggregator.unwrap_or(Aggregator::FedAvg);
            let harmonize = raw.harmonize.unwrap_or(false);
            Ok(StrategyConfig {
                name: raw
                    .name
                    .unwrap_or_else(|| default_strategy_name(aggregator, harmonize)),
                aggregator,
                harmonize,
                client_fraction: raw.client_fraction.unwrap_or(1.0),
                rounds,
            })
        })
        .collect()
}
