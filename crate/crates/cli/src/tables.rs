//! Benchmark and sweep tables. Output depends only on the inputs, never on
//! timing, so repeated invocations produce identical files.

use std::collections::BTreeMap;
use std::io::Write;

use imboost::metrics::mean_std;
use imboost::pipeline::{run_simulated, RunConfig, RunMetrics};
use serde::Serialize;

use crate::{config, CliError, Source};

/// One line of the benchmark table. Per-run rows carry a seed; summary rows
/// leave it empty and fill the standard deviation columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub dataset: String,
    pub seed: Option<u64>,
    pub round: Option<usize>,
    pub split: String,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub auc_std: Option<f64>,
    pub ap_std: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub seed: u64,
    pub auc_train: Option<f64>,
    pub ap_train: Option<f64>,
    pub auc_test: Option<f64>,
    pub ap_test: Option<f64>,
}

/// Name of the cross-dataset summary rows.
pub const AGGREGATE: &str = "average";

/// `(round, auc, ap)` per evaluated round. Falls back to the final metrics
/// when per-round evaluation is off.
fn round_points(m: &RunMetrics, final_round: usize) -> Vec<(usize, f64, f64)> {
    if !m.per_round.is_empty() {
        return m.per_round.iter().map(|r| (r.round, r.auc, r.ap)).collect();
    }
    let pair = if m.n_test > 0 { (m.auc_test, m.ap_test) } else { (m.auc_train, m.ap_train) };
    match pair {
        (Some(a), Some(p)) => vec![(final_round, a, p)],
        _ => Vec::new(),
    }
}

/// Run every source over every seed. Loading or training failures become
/// rows with a note instead of aborting the table.
pub fn bench(sources: &[Result<Source, (String, String)>], config: &RunConfig, seeds: &[u64]) -> Vec<BenchRow> {
    let final_round = config.trainer.ta;
    let mut rows = Vec::new();
    // dataset -> final-round means, for the aggregate rows
    let mut finals: Vec<(f64, f64)> = Vec::new();
    for source in sources {
        let source = match source {
            Ok(s) => s,
            Err((name, reason)) => {
                rows.push(note_row(name, None, "", format!("skipped: {reason}")));
                continue;
            }
        };
        let name = source.name();
        let mut split = "test";
        let mut by_round: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for &seed in seeds {
            let run = source
                .dataset(seed)
                .and_then(|d| run_simulated(d, &config.with_seed(seed)).map_err(CliError::from));
            let metrics = match run {
                Ok(out) => out.metrics,
                Err(e) => {
                    log::warn!("{name} seed {seed} failed: {e}");
                    rows.push(note_row(&name, Some(seed), "", format!("failed: {e}")));
                    continue;
                }
            };
            if metrics.n_test == 0 {
                split = "train";
            }
            for (round, auc, ap) in round_points(&metrics, final_round) {
                by_round.entry(round).or_default().push((auc, ap));
                rows.push(BenchRow {
                    dataset: name.clone(),
                    seed: Some(seed),
                    round: Some(round),
                    split: split.into(),
                    auc: Some(auc),
                    ap: Some(ap),
                    auc_std: None,
                    ap_std: None,
                    note: String::new(),
                });
            }
        }
        for (&round, points) in &by_round {
            let (auc, auc_std) = mean_std(&points.iter().map(|p| p.0).collect::<Vec<_>>());
            let (ap, ap_std) = mean_std(&points.iter().map(|p| p.1).collect::<Vec<_>>());
            rows.push(BenchRow {
                dataset: name.clone(),
                seed: None,
                round: Some(round),
                split: split.into(),
                auc: Some(auc),
                ap: Some(ap),
                auc_std: Some(auc_std),
                ap_std: Some(ap_std),
                note: format!("mean of {} seeds", points.len()),
            });
        }
        if let Some((_, points)) = by_round.iter().next_back() {
            let auc = mean_std(&points.iter().map(|p| p.0).collect::<Vec<_>>()).0;
            let ap = mean_std(&points.iter().map(|p| p.1).collect::<Vec<_>>()).0;
            finals.push((auc, ap));
        }
    }
    if !finals.is_empty() {
        let (auc, auc_std) = mean_std(&finals.iter().map(|p| p.0).collect::<Vec<_>>());
        let (ap, ap_std) = mean_std(&finals.iter().map(|p| p.1).collect::<Vec<_>>());
        rows.push(BenchRow {
            dataset: AGGREGATE.into(),
            seed: None,
            round: Some(final_round),
            split: String::new(),
            auc: Some(auc),
            ap: Some(ap),
            auc_std: Some(auc_std),
            ap_std: Some(ap_std),
            note: format!("mean of final-round means over {} datasets", finals.len()),
        });
    }
    rows
}

fn note_row(dataset: &str, seed: Option<u64>, split: &str, note: String) -> BenchRow {
    BenchRow {
        dataset: dataset.into(),
        seed,
        round: None,
        split: split.into(),
        auc: None,
        ap: None,
        auc_std: None,
        ap_std: None,
        note,
    }
}

/// One row per value per seed. Each value is applied over `base` and the seed
/// then overrides the run seed.
pub fn sweep(
    source: &Source,
    base: &RunConfig,
    param: &str,
    values: &[String],
    seeds: &[u64],
) -> Result<Vec<SweepRow>, CliError> {
    let mut rows = Vec::new();
    for value in values {
        let config = config::apply(base, param, value)?;
        for &seed in seeds {
            let out = run_simulated(source.dataset(seed)?, &config.with_seed(seed))?;
            let m = out.metrics;
            rows.push(SweepRow {
                param: param.into(),
                value: value.clone(),
                seed,
                auc_train: m.auc_train,
                ap_train: m.ap_train,
                auc_test: m.auc_test,
                ap_test: m.ap_test,
            });
        }
    }
    Ok(rows)
}

/// A `#` comment line followed by headered CSV.
pub(crate) fn write_table<W: Write, T: Serialize>(out: &mut W, header: &str, rows: &[T]) -> Result<(), CliError> {
    writeln!(out, "{header}")?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
