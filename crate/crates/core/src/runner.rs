//! Experiment execution: runs every (strategy, seed) cell of a config,
//! writes the per-run artifacts, and summarizes the sweep.
//!
//! Output layout under the resolved output root:
//! - single strategy: `run_<seed>/`
//! - strategy sweep: `<strategy-name>/run_<seed>/`
//!
//! Each run directory holds `metrics.csv`, a `config.json` echo of the
//! resolved experiment, and optionally `partition.json`. Wall-time values
//! are zeroed before export so reruns of the same config are byte-identical.
//! Failed cells are recorded in `failures.log` at the root; the remaining
//! cells still run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::datagen::write_partition_json;
use crate::error::{Error, Result};
use crate::metrics::{export_csv, write_snapshot, RoundRecord};
use crate::server::Simulation;

/// CLI-level knobs that modify a config without editing the file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Replaces the config's `output_dir`.
    pub out_override: Option<PathBuf>,
    /// Runs only this seed instead of the config's seed list.
    pub seed_override: Option<u64>,
    /// Suppresses progress lines and the final table.
    pub quiet: bool,
}

/// One successfully completed (strategy, seed) cell.
#[derive(Clone, Debug)]
pub struct CellSummary {
    pub strategy: String,
    pub seed: u64,
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    /// Mean conflict ratio over the cell's rounds.
    pub mean_conflict_ratio: f64,
    pub dir: PathBuf,
}

/// One failed cell; the error text is also appended to `failures.log`.
#[derive(Clone, Debug)]
pub struct CellFailure {
    pub strategy: String,
    pub seed: u64,
    pub error: String,
}

/// Outcome of a sweep: which cells completed, which failed, and where.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub cells: Vec<CellSummary>,
    pub failures: Vec<CellFailure>,
}

impl RunSummary {
    /// True when at least one cell produced artifacts.
    pub fn any_succeeded(&self) -> bool {
        !self.cells.is_empty()
    }
}

/// Builds the simulation for one cell: generates data, partitions it, and
/// initializes the global model, all from the given seed.
pub fn build_simulation(
    cfg: &ExperimentConfig,
    strategy_index: usize,
    seed: u64,
) -> Result<Simulation> {
    let (train, test) = cfg.data.generate(seed);
    let partition = cfg.build_partition(&train, seed)?;
    Simulation::new(
        cfg.model.clone(),
        train,
        test,
        partition,
        cfg.local,
        cfg.strategies[strategy_index].clone(),
        seed,
    )
}

fn effective_seeds(cfg: &ExperimentConfig, opts: &RunOptions) -> Vec<u64> {
    match opts.seed_override {
        Some(seed) => vec![seed],
        None => cfg.seeds.clone(),
    }
}

fn cell_dir(root: &Path, cfg: &ExperimentConfig, strategy_index: usize, seed: u64) -> PathBuf {
    let run = format!("run_{seed}");
    if cfg.strategies.len() > 1 {
        root.join(&cfg.strategies[strategy_index].name).join(run)
    } else {
        root.join(run)
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        action: "create output directory",
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let io_err = |source| Error::Io {
        action: "write JSON",
        path: path.to_path_buf(),
        source,
    };
    let mut text = serde_json::to_string_pretty(value).expect("JSON value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err)
}

/// Runs one cell to completion and writes its artifacts into `dir`.
fn run_cell(
    cfg: &ExperimentConfig,
    strategy_index: usize,
    seed: u64,
    dir: &Path,
) -> Result<Vec<RoundRecord>> {
    create_dir(dir)?;
    let (train, test) = cfg.data.generate(seed);
    let partition = cfg.build_partition(&train, seed)?;
    if cfg.dump_partition {
        write_partition_json(&dir.join("partition.json"), &train, &partition)?;
    }
    let mut sim = Simulation::new(
        cfg.model.clone(),
        train,
        test,
        partition,
        cfg.local,
        cfg.strategies[strategy_index].clone(),
        seed,
    )?;
    sim.run_to_completion()?;

    // Wall time is the one non-reproducible field; zero it so identical
    // configs produce byte-identical artifacts.
    let mut history = sim.history().to_vec();
    for record in &mut history {
        record.wall_time_ms = 0.0;
    }
    export_csv(&history, &dir.join("metrics.csv"))?;
    write_json(&dir.join("config.json"), &cfg.to_json())?;
    Ok(history)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let values: Vec<f64> = values.collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn append_failures_log(root: &Path, failures: &[CellFailure]) -> Result<()> {
    let path = root.join("failures.log");
    let mut text = String::new();
    for f in failures {
        let _ = writeln!(text, "strategy={} seed={}: {}", f.strategy, f.seed, f.error);
    }
    std::fs::write(&path, text).map_err(|source| Error::Io {
        action: "write failures log",
        path,
        source,
    })
}

/// Executes every (strategy, seed) cell, writes artifacts, prints progress
/// and a final comparison table (suppressed by `quiet`), and returns the
/// sweep summary. Cell-level errors are collected, not propagated; only
/// setup-level I/O failures abort the sweep.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    let root = opts
        .out_override
        .clone()
        .unwrap_or_else(|| cfg.output_dir.clone());
    create_dir(&root)?;
    let seeds = effective_seeds(cfg, opts);

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for strategy_index in 0..cfg.strategies.len() {
        let name = cfg.strategies[strategy_index].name.clone();
        for &seed in &seeds {
            let dir = cell_dir(&root, cfg, strategy_index, seed);
            match run_cell(cfg, strategy_index, seed, &dir) {
                Ok(history) => {
                    let last = history.last().expect("completed runs have rounds");
                    let cell = CellSummary {
                        strategy: name.clone(),
                        seed,
                        final_loss: last.test_loss,
                        final_accuracy: last.test_accuracy,
                        mean_conflict_ratio: mean(history.iter().map(|r| r.conflict_ratio))
                            .expect("completed runs have rounds"),
                        dir,
                    };
                    if !opts.quiet {
                        let acc = cell
                            .final_accuracy
                            .map(|a| format!(", final_acc={a:.4}"))
                            .unwrap_or_default();
                        println!(
                            "done: strategy={name} seed={seed} rounds={} final_loss={:.6}{acc}",
                            history.len(),
                            cell.final_loss,
                        );
                    }
                    cells.push(cell);
                }
                Err(err) => {
                    let failure = CellFailure {
                        strategy: name.clone(),
                        seed,
                        error: err.to_string(),
                    };
                    eprintln!(
                        "failed: strategy={} seed={}: {}",
                        failure.strategy, failure.seed, failure.error
                    );
                    failures.push(failure);
                }
            }
        }
    }

    if !failures.is_empty() {
        append_failures_log(&root, &failures)?;
    }
    if !opts.quiet {
        print_table(cfg, &cells);
    }
    Ok(RunSummary {
        out_dir: root,
        cells,
        failures,
    })
}

/// Final comparison table: per strategy, the across-seed mean and standard
/// deviation of final accuracy (or final loss for non-classifiers) plus the
/// mean conflict ratio.
fn print_table(cfg: &ExperimentConfig, cells: &[CellSummary]) {
    let classifier = cfg.model.is_classifier();
    let metric = if classifier {
        "final_acc"
    } else {
        "final_loss"
    };
    println!();
    println!(
        "{:<24} {:>20} {:>16}",
        "strategy",
        format!("{metric} (mean+-std)"),
        "mean_conflict"
    );
    for strategy in &cfg.strategies {
        let finals: Vec<f64> = cells
            .iter()
            .filter(|c| c.strategy == strategy.name)
            .map(|c| {
                if classifier {
                    c.final_accuracy.expect("classifier cells have accuracy")
                } else {
                    c.final_loss
                }
            })
            .collect();
        if finals.is_empty() {
            println!("{:<24} {:>20} {:>16}", strategy.name, "-", "-");
            continue;
        }
        let m = finals.iter().sum::<f64>() / finals.len() as f64;
        let var = finals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / finals.len() as f64;
        let conflict = mean(
            cells
                .iter()
                .filter(|c| c.strategy == strategy.name)
                .map(|c| c.mean_conflict_ratio),
        )
        .expect("non-empty by the check above");
        println!(
            "{:<24} {:>20} {:>16.4}",
            strategy.name,
            format!("{m:.4} +- {:.4}", var.sqrt()),
            conflict,
        );
    }
}

/// Runs the first strategy only and writes one `sim_round<t>.json`
/// similarity snapshot per round (skipping rounds with fewer than two
/// sampled clients). The snapshot-only counterpart of [`run_experiment`].
pub fn run_conflict_probe(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    let root = opts
        .out_override
        .clone()
        .unwrap_or_else(|| cfg.output_dir.clone());
    create_dir(&root)?;
    let seeds = effective_seeds(cfg, opts);
    let strategy = &cfg.strategies[0];

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for &seed in &seeds {
        let dir = root.join(format!("run_{seed}"));
        let outcome = (|| -> Result<Vec<RoundRecord>> {
            create_dir(&dir)?;
            let mut sim = build_simulation(cfg, 0, seed)?;
            sim.run_to_completion()?;
            for record in sim.history() {
                if record.pair_similarities.is_empty() {
                    continue;
                }
                let mut ids = std::collections::BTreeSet::new();
                for pair in &record.pair_similarities {
                    ids.insert(pair.client_a);
                    ids.insert(pair.client_b);
                }
                write_snapshot(
                    record.round,
                    ids.len(),
                    record.conflict_ratio,
                    record.min_similarity,
                    &record.pair_similarities,
                    &dir.join(format!("sim_round{}.json", record.round)),
                )?;
            }
            Ok(sim.history().to_vec())
        })();
        match outcome {
            Ok(history) => {
                let last = history.last().expect("completed runs have rounds");
                if !opts.quiet {
                    println!(
                        "probe done: strategy={} seed={seed} rounds={}",
                        strategy.name,
                        history.len()
                    );
                }
                cells.push(CellSummary {
                    strategy: strategy.name.clone(),
                    seed,
                    final_loss: last.test_loss,
                    final_accuracy: last.test_accuracy,
                    mean_conflict_ratio: mean(history.iter().map(|r| r.conflict_ratio))
                        .expect("completed runs have rounds"),
                    dir,
                });
            }
            Err(err) => {
                let failure = CellFailure {
                    strategy: strategy.name.clone(),
                    seed,
                    error: err.to_string(),
                };
                eprintln!(
                    "probe failed: strategy={} seed={}: {}",
                    failure.strategy, failure.seed, failure.error
                );
                failures.push(failure);
            }
        }
    }
    if !failures.is_empty() {
        append_failures_log(&root, &failures)?;
    }
    Ok(RunSummary {
        out_dir: root,
        cells,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_opts(out: &Path) -> RunOptions {
        RunOptions {
            out_override: Some(out.to_path_buf()),
            seed_override: None,
            quiet: true,
        }
    }

    const QUADRATIC_SMOKE: &str = r#"
        rounds = 1
        seeds = [7]
        dump_partition = true

        [model]
        kind = "quadratic"
        curvature = [1.0, 1.0]
        target = [0.5, -0.5]

        [data]
        num_classes = 1
        per_class = 30
        dim = 2
        separation = 1.0
        standardize = false

        [partition]
        scheme = "iid"
        clients = 5

        [local]
        epochs = 1
        momentum = 0.0
    "#;

    const ANTI_PARALLEL: &str = r#"
        rounds = 3
        seeds = [3]

        [model]
        kind = "quadratic"
        curvature = [1.0, 1.0]
        target = [0.0, 0.0]

        [data]
        num_classes = 2
        per_class = 30
        dim = 2
        separation = 5.0
        standardize = false

        [partition]
        scheme = "class_shard"
        clients = 2

        [local]
        epochs = 1
        momentum = 0.0

        [strategy]
        harmonize = true
    "#;

    const LOGISTIC_SWEEP: &str = r#"
        rounds = 2
        seeds = [5]

        [model]
        kind = "logistic"

        [data]
        num_classes = 2
        per_class = 20
        dim = 2
        separation = 2.0

        [partition]
        scheme = "iid"
        clients = 4

        [local]
        epochs = 1

        [[strategies]]
        aggregator = "fedavg"

        [[strategies]]
        aggregator = "fednova"
    "#;

    #[test]
    fn single_strategy_layout_and_artifacts() {
        let cfg = ExperimentConfig::parse_str(QUADRATIC_SMOKE).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let summary = run_experiment(&cfg, &quiet_opts(tmp.path())).unwrap();
        assert!(summary.any_succeeded());
        assert!(summary.failures.is_empty());
        assert_eq!(summary.cells.len(), 1);

        let run_dir = tmp.path().join("run_7");
        assert_eq!(summary.cells[0].dir, run_dir);
        let csv = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2, "header plus one round");
        // Quadratic objective: the accuracy cell stays empty.
        assert!(csv.lines().nth(1).unwrap().contains(",,"));

        let echo: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(run_dir.join("config.json")).unwrap())
                .unwrap();
        assert_eq!(echo["model"]["kind"], serde_json::json!("quadratic"));

        let partition: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(run_dir.join("partition.json")).unwrap())
                .unwrap();
        assert_eq!(partition["num_clients"], serde_json::json!(5));
    }

    #[test]
    fn wall_time_is_zeroed_in_exported_metrics() {
        let cfg = ExperimentConfig::parse_str(QUADRATIC_SMOKE).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        run_experiment(&cfg, &quiet_opts(tmp.path())).unwrap();
        let csv = std::fs::read_to_string(tmp.path().join("run_7/metrics.csv")).unwrap();
        for line in csv.lines().skip(1) {
            assert!(line.ends_with(",0"), "wall_ms must be zeroed: {line}");
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let cfg = ExperimentConfig::parse_str(ANTI_PARALLEL).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&cfg, &quiet_opts(a.path())).unwrap();
        run_experiment(&cfg, &quiet_opts(b.path())).unwrap();
        let left = std::fs::read(a.path().join("run_3/metrics.csv")).unwrap();
        let right = std::fs::read(b.path().join("run_3/metrics.csv")).unwrap();
        assert!(!left.is_empty());
        assert_eq!(left, right);
    }

    #[test]
    fn sweep_layout_nests_by_strategy_and_matches_single_runs() {
        let sweep_cfg = ExperimentConfig::parse_str(LOGISTIC_SWEEP).unwrap();
        let sweep_dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&sweep_cfg, &quiet_opts(sweep_dir.path())).unwrap();
        assert_eq!(summary.cells.len(), 2);

        // Dropping the second strategy must not change the first one's bytes:
        // all randomness is keyed by (seed, stream, round, client), never by
        // the strategy list.
        let single_cfg = ExperimentConfig::parse_str(&LOGISTIC_SWEEP.replace(
            "\n        [[strategies]]\n        aggregator = \"fednova\"\n",
            "",
        ))
        .unwrap();
        assert_eq!(single_cfg.strategies.len(), 1);
        let single_dir = tempfile::tempdir().unwrap();
        run_experiment(&single_cfg, &quiet_opts(single_dir.path())).unwrap();

        let from_sweep = std::fs::read(sweep_dir.path().join("fedavg/run_5/metrics.csv")).unwrap();
        let standalone = std::fs::read(single_dir.path().join("run_5/metrics.csv")).unwrap();
        assert_eq!(from_sweep, standalone);
        assert!(sweep_dir.path().join("fednova/run_5/metrics.csv").exists());
    }

    #[test]
    fn failing_cells_are_logged_without_aborting_the_sweep() {
        let diverging = QUADRATIC_SMOKE
            .replace("curvature = [1.0, 1.0]", "curvature = [1e8, 1e8]")
            .replace("epochs = 1", "epochs = 30\n        batch_size = 8")
            .replace("seeds = [7]", "seeds = [7, 8]");
        let cfg = ExperimentConfig::parse_str(&diverging).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let summary = run_experiment(&cfg, &quiet_opts(tmp.path())).unwrap();
        assert!(!summary.any_succeeded());
        assert_eq!(summary.failures.len(), 2);
        assert!(summary.failures[0].error.contains("diverged"));

        let log = std::fs::read_to_string(tmp.path().join("failures.log")).unwrap();
        assert_eq!(log.lines().count(), 2);
        assert!(log.contains("seed=7") && log.contains("seed=8"));
        assert!(!tmp.path().join("run_7/metrics.csv").exists());
    }

    #[test]
    fn seed_override_runs_exactly_one_cell() {
        let cfg = ExperimentConfig::parse_str(
            &QUADRATIC_SMOKE.replace("seeds = [7]", "seeds = [7, 8, 9]"),
        )
        .unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            seed_override: Some(99),
            ..quiet_opts(tmp.path())
        };
        let summary = run_experiment(&cfg, &opts).unwrap();
        assert_eq!(summary.cells.len(), 1);
        assert_eq!(summary.cells[0].seed, 99);
        assert!(tmp.path().join("run_99/metrics.csv").exists());
        assert!(!tmp.path().join("run_7").exists());
    }

    #[test]
    fn conflict_probe_writes_one_snapshot_per_round() {
        let cfg = ExperimentConfig::parse_str(ANTI_PARALLEL).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let summary = run_conflict_probe(&cfg, &quiet_opts(tmp.path())).unwrap();
        assert!(summary.any_succeeded());
        for round in 0..3 {
            let path = tmp.path().join(format!("run_3/sim_round{round}.json"));
            let doc: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
            assert_eq!(doc["round"], serde_json::json!(round));
            assert_eq!(doc["num_clients"], serde_json::json!(2));
            assert_eq!(doc["pairs"].as_array().unwrap().len(), 1);
        }
        assert!(
            !tmp.path().join("run_3/metrics.csv").exists(),
            "probe emits snapshots only"
        );
    }

    #[test]
    fn build_simulation_respects_strategy_index() {
        let cfg = ExperimentConfig::parse_str(LOGISTIC_SWEEP).unwrap();
        let sim = build_simulation(&cfg, 1, 5).unwrap();
        assert_eq!(sim.strategy().name, "fednova");
        assert_eq!(sim.rounds_planned(), 2);
    }
}
