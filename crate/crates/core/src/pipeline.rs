//! End-to-end runs: split and scale a dataset, train with an oracle, score every
//! row, and evaluate against ground truth when it is available.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{split_and_normalize, Dataset, ScoreRow, Split};
use crate::error::{Error, Result};
use crate::metrics::{average_precision, auc, RoundMetric};
use crate::query::{Oracle, QueryStrategy, SimulatedOracle};
use crate::trainer::{RiskTrace, StepOutcome, Trainer, TrainerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub trainer: TrainerConfig,
    pub test_fraction: f64,
    /// Score held-out rows after every query interval to build a per-round curve.
    pub eval_rounds: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            trainer: TrainerConfig::default(),
            test_fraction: 0.3,
            eval_rounds: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!(
                "test fraction {} outside [0, 1)",
                self.test_fraction
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.trainer.seed = seed;
        c
    }
}

/// Summary written as the metrics JSON of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub strategy: QueryStrategy,
    pub auc_train: Option<f64>,
    pub auc_test: Option<f64>,
    pub ap_train: Option<f64>,
    pub ap_test: Option<f64>,
    pub per_round: Vec<RoundMetric>,
    pub n_train: usize,
    pub n_test: usize,
    pub labeled_inliers: usize,
    pub labeled_outliers: usize,
    pub elapsed_secs: f64,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub scores: Vec<ScoreRow>,
    pub train_scores: Vec<f64>,
    pub test_scores: Vec<f64>,
    pub risk: RiskTrace,
}

fn metric_pair(scores: &[f64], labels: Option<&[bool]>) -> (Option<f64>, Option<f64>) {
    match labels {
        Some(l) => (auc(scores, l).ok(), average_precision(scores, l).ok()),
        None => (None, None),
    }
}

/// Split and scale `dataset` with the run seed, then train with ground-truth answers.
pub fn run_simulated(dataset: Dataset, config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let prepared = split_and_normalize(dataset, config.test_fraction, config.trainer.seed)?;
    let truth = prepared
        .train_labels()
        .ok_or_else(|| Error::Config("a simulated oracle needs ground-truth labels".into()))?;
    let mut oracle = SimulatedOracle::new(truth);
    run_prepared(&prepared, config, &mut oracle)
}

/// Train on an already split dataset. Returns an error if the oracle defers,
/// since nothing here can deliver the answers.
pub fn run_prepared(dataset: &Dataset, config: &RunConfig, oracle: &mut dyn Oracle) -> Result<RunOutput> {
    config.validate()?;
    let started = Instant::now();
    let x_train = dataset.train_features();
    let x_test = dataset.test_features();
    let y_train = dataset.train_labels();
    let y_test = dataset.test_labels();
    let mut trainer = Trainer::new(config.trainer.clone(), x_train.clone(), y_train.clone())?;

    let (eval_x, eval_y) = if dataset.test_idx.is_empty() {
        (&x_train, y_train.as_deref())
    } else {
        (&x_test, y_test.as_deref())
    };
    let cfg = &config.trainer;
    let interval = cfg.query_schedule().interval();
    let mut per_round = Vec::new();
    loop {
        let outcome = trainer.step(oracle)?;
        if outcome == StepOutcome::NeedLabels {
            return Err(Error::Oracle("oracle deferred; use the session service for human labels".into()));
        }
        let t = trainer.t();
        if config.eval_rounds && interval > 0 && t > cfg.t1 && (t - cfg.t1).is_multiple_of(interval) {
            if let Some(labels) = eval_y {
                let scores = trainer.score(eval_x)?;
                if let (Ok(a), Ok(p)) = (auc(&scores, labels), average_precision(&scores, labels)) {
                    per_round.push(RoundMetric {
                        round: (t - cfg.t1) / interval,
                        auc: a,
                        ap: p,
                    });
                }
            }
        }
        if outcome == StepOutcome::Done {
            break;
        }
    }

    let train_scores = trainer.score(&x_train)?;
    let test_scores = if x_test.nrows() > 0 {
        trainer.score(&x_test)?
    } else {
        Vec::new()
    };
    let (auc_train, ap_train) = metric_pair(&train_scores, y_train.as_deref());
    let (auc_test, ap_test) = metric_pair(&test_scores, y_test.as_deref());

    let mut scores = Vec::with_capacity(dataset.n_rows());
    for (split, idx, s) in [
        (Split::Train, &dataset.train_idx, &train_scores),
        (Split::Test, &dataset.test_idx, &test_scores),
    ] {
        for (&row_index, &score) in idx.iter().zip(s) {
            scores.push(ScoreRow {
                row_index,
                split,
                score,
                label: dataset.labels.as_ref().map(|l| l[row_index]),
            });
        }
    }
    scores.sort_by_key(|r| r.row_index);

    let labels = trainer.labels();
    let metrics = RunMetrics {
        seed: cfg.seed,
        strategy: cfg.strategy,
        auc_train,
        auc_test,
        ap_train,
        ap_test,
        per_round,
        n_train: x_train.nrows(),
        n_test: x_test.nrows(),
        labeled_inliers: labels.inliers().len(),
        labeled_outliers: labels.outliers().len(),
        elapsed_secs: started.elapsed().as_secs_f64(),
        config: config.clone(),
    };
    Ok(RunOutput {
        metrics,
        scores,
        train_scores,
        test_scores,
        risk: trainer.state().risk.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticSpec};

    fn quick() -> RunConfig {
        let mut c = RunConfig::default();
        c.trainer.t0 = 2;
        c.trainer.t1 = 4;
        c.trainer.t2 = 4;
        c.trainer.ta = 2;
        c.trainer.hidden = vec![8, 8];
        c.trainer.score_mc = 2;
        c
    }

    #[test]
    fn simulated_run_reports_metrics_and_scores_every_row() {
        let d = make_synthetic(&SyntheticSpec { n: 200, ..SyntheticSpec::default() }).unwrap();
        let out = run_simulated(d, &quick()).unwrap();
        assert_eq!(out.scores.len(), 200);
        assert!(out.scores.iter().enumerate().all(|(i, r)| r.row_index == i));
        assert!(out.metrics.auc_test.is_some());
        assert_eq!(out.metrics.per_round.len(), 2);
        assert_eq!(out.metrics.labeled_inliers + out.metrics.labeled_outliers, 12);
        let json = serde_json::to_value(&out.metrics).unwrap();
        assert_eq!(json["strategy"], "mm");
        assert_eq!(json["config"]["t1"], 4);
    }

    #[test]
    fn unlabeled_data_cannot_use_simulated_oracle() {
        let mut d = make_synthetic(&SyntheticSpec { n: 100, ..SyntheticSpec::default() }).unwrap();
        d.labels = None;
        assert!(matches!(run_simulated(d, &quick()), Err(Error::Config(_))));
    }
}
