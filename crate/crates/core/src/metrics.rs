//! Per-round records and their file exports.
//!
//! Two artifact formats: a CSV time series of scalar metrics (one row per
//! round, floats at 6 significant digits) and JSON snapshots of the sorted
//! pairwise-similarity list behind a given round. Both exports are
//! deterministic byte-for-byte for fixed input; the CSV uses LF line
//! endings unconditionally.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harmonizer::{ConflictReport, PairSimilarity};

/// Everything the simulator records about one federated round.
#[derive(Clone, Debug)]
pub struct RoundRecord {
    /// Zero-based round index.
    pub round: usize,
    /// Global-model loss on the held-out test split after aggregation.
    pub test_loss: f64,
    /// Test accuracy; `None` for non-classification objectives.
    pub test_accuracy: Option<f64>,
    /// Fraction of sampled-client pairs with conflicting gradients.
    pub conflict_ratio: f64,
    /// Smallest pairwise gradient cosine similarity this round.
    pub min_similarity: f64,
    /// Number of projections harmonization applied (0 when disabled).
    pub projections_applied: usize,
    /// Measured wall time of the round. Not replayable, so the runner
    /// zeroes it before persisting; in-memory values are diagnostics only.
    pub wall_time_ms: f64,
    /// Pre-harmonization pair similarities, ascending.
    pub pair_similarities: Vec<PairSimilarity>,
}

/// Formats `value` with `digits` significant digits, choosing fixed or
/// exponent notation the way `%g` does and trimming trailing zeros.
pub fn format_significant(value: f64, digits: usize) -> String {
    assert!(digits >= 1, "need at least one significant digit");
    if value == 0.0 {
        return "0".to_string();
    }
    assert!(value.is_finite(), "cannot format non-finite value {value}");
    let sci = format!("{:.*e}", digits - 1, value);
    let (mantissa, exp) = sci
        .split_once('e')
        .expect("{:e} always contains an exponent");
    let exp: i32 = exp.parse().expect("{:e} exponent parses");
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{}", trim_trailing_zeros(mantissa), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_trailing_zeros(&format!("{value:.decimals$}"))
    }
}

fn trim_trailing_zeros(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

const CSV_HEADER: &str =
    "round,test_loss,test_acc,conflict_ratio,min_similarity,projections,wall_ms";

/// Writes the per-round metrics table. The accuracy cell is empty for
/// objectives without one. Panics on an empty history.
pub fn export_csv(history: &[RoundRecord], path: &Path) -> Result<()> {
    assert!(!history.is_empty(), "export_csv: history must be non-empty");
    let io_err = |source| Error::Io {
        action: "write metrics CSV",
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{CSV_HEADER}").map_err(io_err)?;
    for r in history {
        let acc = r
            .test_accuracy
            .map(|a| format_significant(a, 6))
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.round,
            format_significant(r.test_loss, 6),
            acc,
            format_significant(r.conflict_ratio, 6),
            format_significant(r.min_similarity, 6),
            r.projections_applied,
            format_significant(r.wall_time_ms, 6),
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

#[derive(Serialize)]
struct Snapshot<'a> {
    round: usize,
    num_clients: usize,
    conflict_ratio: f64,
    min_similarity: f64,
    pairs: &'a [PairSimilarity],
}

pub(crate) fn write_snapshot(
    round: usize,
    num_clients: usize,
    conflict_ratio: f64,
    min_similarity: f64,
    pairs_ascending: &[PairSimilarity],
    path: &Path,
) -> Result<()> {
    assert!(
        !pairs_ascending.is_empty(),
        "similarity snapshot requires at least one pair"
    );
    debug_assert!(
        pairs_ascending
            .windows(2)
            .all(|w| w[0].similarity <= w[1].similarity),
        "snapshot pairs must be ascending"
    );
    let io_err = |source| Error::Io {
        action: "write similarity snapshot",
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let doc = Snapshot {
        round,
        num_clients,
        conflict_ratio,
        min_similarity,
        pairs: pairs_ascending,
    };
    serde_json::to_writer_pretty(&mut w, &doc).map_err(|e| io_err(std::io::Error::other(e)))?;
    w.write_all(b"\n").map_err(io_err)?;
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Writes one round's pair-similarity list, sorted ascending by similarity,
/// as a JSON document. Panics if the report has no pairs.
pub fn export_similarity_snapshot(
    report: &ConflictReport,
    round: usize,
    path: &Path,
) -> Result<()> {
    let pairs = report.sorted_pairs();
    write_snapshot(
        round,
        report.num_clients,
        report.conflict_ratio,
        report.min_similarity,
        &pairs,
        path,
    )
}
