//! The two-phase training loop as a resumable state machine.
//!
//! Warm-up runs `T0` plain-mean steps on fixed-size batches, then `T1` trimmed
//! steps on growing batches indexed `t = 1..=T1`. Polarization continues the same
//! index for `t = T1+1..=T1+T2`; every `T2/Ta` steps a query round fires before the
//! update. When the oracle defers, [`Trainer::step`] returns
//! [`StepOutcome::NeedLabels`] and training resumes once every pending index has
//! been answered through [`Trainer::deliver`].
//!
//! All randomness comes from per-purpose, per-step streams of one seed, so the
//! checkpoint only needs the seed and the step counter to replay exactly.

mod buffers;
mod checkpoint;
mod schedule;
mod scoring;

pub use buffers::{RiskPoint, RiskTrace, Snapshot, SnapshotBuffer};
pub use checkpoint::{Checkpoint, DataFingerprint, CHECKPOINT_VERSION};
pub use schedule::{BatchSchedule, QuerySchedule};
pub use scoring::{final_scores, per_sample_losses};

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{
    default_latent_dim, loss_and_grad, AdamConfig, AdamState, LossSpec, ModelSpec, Noise, ObjectiveBatch,
    ParamStore, Rows,
};
use crate::query::{per_round_budget, select_queries, Answer, BudgetMode, LabelStore, Oracle, QueryStrategy, Reply};
use scoring::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub n0: usize,
    pub gamma: f64,
    pub t0: usize,
    pub t1: usize,
    pub t2: usize,
    pub ta: usize,
    pub seed: u64,
    pub score_mc: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub strategy: QueryStrategy,
    pub alpha: f64,
    pub budget_mode: BudgetMode,
    /// Fixed number of queries per round, overriding the size-based rule.
    pub budget_per_round: Option<usize>,
    /// Hidden widths of both networks.
    pub hidden: Vec<usize>,
    pub latent_dim: Option<usize>,
    /// Record per-class mean training losses (needs ground truth).
    pub trace_risks: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            n0: 128,
            gamma: 1.03,
            t0: 10,
            t1: 40,
            t2: 50,
            ta: 5,
            seed: 0,
            score_mc: 16,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            strategy: QueryStrategy::Mm,
            alpha: 0.4,
            budget_mode: BudgetMode::PerRound,
            budget_per_round: None,
            hidden: vec![64, 64],
            latent_dim: None,
            trace_risks: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.n0 == 0 {
            return Err(Error::Config("n0 must be positive".into()));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be at least 1, got {}", self.gamma)));
        }
        if self.ta == 0 || !self.t2.is_multiple_of(self.ta) {
            return Err(Error::Config(format!("Ta = {} must divide T2 = {}", self.ta, self.t2)));
        }
        if self.score_mc == 0 {
            return Err(Error::Config("score_mc must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} invalid", self.adam.lr)));
        }
        Ok(())
    }

    pub fn model_spec(&self, input_dim: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            latent_dim: self.latent_dim.unwrap_or_else(|| default_latent_dim(input_dim)),
            encoder_hidden: self.hidden.clone(),
            decoder_hidden: self.hidden.clone(),
            iwae_samples: self.loss.k,
            cubo_power: self.loss.v,
            ..ModelSpec::for_input_dim(input_dim)
        }
    }

    pub fn batch_schedule(&self, n_train: usize) -> BatchSchedule {
        BatchSchedule {
            n0: self.n0,
            gamma: self.gamma,
            n_train,
        }
    }

    pub fn query_schedule(&self) -> QuerySchedule {
        QuerySchedule {
            t1: self.t1,
            t2: self.t2,
            ta: self.ta,
        }
    }

    pub fn budget(&self, n_train: usize) -> usize {
        self.budget_per_round
            .unwrap_or_else(|| per_round_budget(n_train, self.ta, self.budget_mode))
    }

    pub fn total_steps(&self) -> usize {
        self.t0 + self.t1 + self.t2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Warmup,
    Polarizing,
    AwaitingLabels,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    /// Plain mean loss on a fixed-size batch.
    WarmupMean,
    /// Trimmed loss on a growing batch.
    WarmupTrimmed,
    Polarization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Gradient steps completed including this one.
    pub step: usize,
    pub kind: StepKind,
    /// Shared index of the trimmed warm-up and polarization steps.
    pub t: Option<usize>,
    pub batch_size: usize,
    pub objective: f64,
    pub trimmed: f64,
    pub tau: Option<f64>,
    pub n_kept: usize,
    pub n_inliers: usize,
    pub n_outliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub round: usize,
    pub t: usize,
    pub indices: Vec<usize>,
    pub strategy: QueryStrategy,
}

/// A query round waiting for answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingRound {
    pub round: usize,
    pub t: usize,
    pub indices: Vec<usize>,
    /// Subset of `indices` not answered yet.
    pub remaining: Vec<usize>,
    /// Ensemble loss of each queried index, aligned with `indices`.
    pub ensemble_losses: Vec<f64>,
    /// Inlier posterior of each queried index when a mixture was fitted.
    pub posteriors: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    NeedLabels,
    Done,
}

/// Everything needed to continue training, apart from the data itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub config: TrainerConfig,
    pub params: ParamStore,
    pub adam: AdamState,
    pub labels: LabelStore,
    /// Queried indices, answered or not; never offered again.
    pub reserved: Vec<bool>,
    pub pending: Option<PendingRound>,
    pub snapshots: SnapshotBuffer,
    /// Gradient steps completed.
    pub completed: usize,
    pub rounds_done: usize,
    pub history: Vec<StepRecord>,
    pub queries: Vec<QueryRecord>,
    pub risk: RiskTrace,
}

pub struct Trainer {
    state: TrainerState,
    x: Array2<f64>,
    truth: Option<Vec<bool>>,
}

impl Trainer {
    /// Fresh trainer over training rows `x`. `truth` is only used for risk tracing.
    pub fn new(config: TrainerConfig, x: Array2<f64>, truth: Option<Vec<bool>>) -> Result<Self> {
        config.validate()?;
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Empty("training rows"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { term: "training data".into() });
        }
        if let Some(t) = &truth {
            if t.len() != n {
                return Err(crate::error::shape_err("ground truth", n, t.len()));
            }
        }
        let params = ParamStore::init(config.model_spec(x.ncols()), config.seed)?;
        let adam = AdamState::new(config.adam, params.len());
        let te = config.query_schedule().interval();
        let state = TrainerState {
            snapshots: SnapshotBuffer::new(te),
            config,
            params,
            adam,
            labels: LabelStore::new(),
            reserved: vec![false; n],
            pending: None,
            completed: 0,
            rounds_done: 0,
            history: Vec::new(),
            queries: Vec::new(),
            risk: RiskTrace::default(),
        };
        Ok(Self { state, x, truth })
    }

    /// Continue from a checkpoint over the same training rows.
    pub fn resume(checkpoint: Checkpoint, x: Array2<f64>, truth: Option<Vec<bool>>) -> Result<Self> {
        checkpoint.check(&x)?;
        let state = checkpoint.state;
        state.config.validate()?;
        if state.reserved.len() != x.nrows() {
            return Err(Error::State("checkpoint does not match the training rows".into()));
        }
        Ok(Self { state, x, truth })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.x, self.state.clone())
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.state.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.state.params
    }

    pub fn labels(&self) -> &LabelStore {
        &self.state.labels
    }

    pub fn pending(&self) -> Option<&PendingRound> {
        self.state.pending.as_ref()
    }

    pub fn train_features(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn phase(&self) -> Phase {
        let c = &self.state.config;
        if self.state.pending.is_some() {
            Phase::AwaitingLabels
        } else if self.state.completed >= c.total_steps() {
            Phase::Done
        } else if self.state.completed < c.t0 + c.t1 {
            Phase::Warmup
        } else {
            Phase::Polarizing
        }
    }

    /// Index `t` of the most recently completed trimmed or polarization step;
    /// 0 during the plain-mean warm-up.
    pub fn t(&self) -> usize {
        self.state.completed.saturating_sub(self.state.config.t0)
    }

    /// Query rounds that have fired so far.
    pub fn rounds_done(&self) -> usize {
        self.state.rounds_done
    }

    /// Advance by one gradient step, running a query round first when one is due.
    pub fn step(&mut self, oracle: &mut dyn Oracle) -> Result<StepOutcome> {
        if self.state.pending.is_some() {
            return Ok(StepOutcome::NeedLabels);
        }
        let cfg = self.state.config.clone();
        if self.state.completed >= cfg.total_steps() {
            return Ok(StepOutcome::Done);
        }
        let completed = self.state.completed;
        if completed < cfg.t0 {
            self.warmup_mean_step(completed + 1)?;
        } else {
            let t = completed - cfg.t0 + 1;
            if t <= cfg.t1 {
                self.growing_step(t, StepKind::WarmupTrimmed)?;
                self.trace(t)?;
            } else {
                if self.state.snapshots.is_empty() {
                    self.take_snapshot(cfg.t1)?;
                    if self.state.risk.at(cfg.t1).is_none() {
                        self.trace(cfg.t1)?;
                    }
                }
                if let Some(round) = cfg.query_schedule().round_at(t) {
                    if self.state.rounds_done < round && self.query_round(round, t, oracle)? {
                        return Ok(StepOutcome::NeedLabels);
                    }
                }
                self.growing_step(t, StepKind::Polarization)?;
                self.take_snapshot(t)?;
                self.trace(t)?;
            }
        }
        self.state.completed += 1;
        Ok(if self.state.completed >= cfg.total_steps() {
            StepOutcome::Done
        } else {
            StepOutcome::Continue
        })
    }

    /// Step until training finishes or labels are needed.
    pub fn run(&mut self, oracle: &mut dyn Oracle) -> Result<StepOutcome> {
        loop {
            match self.step(oracle)? {
                StepOutcome::Continue => continue,
                other => return Ok(other),
            }
        }
    }

    /// Apply answers to the pending round. Every answer must name a pending,
    /// unanswered index; the batch is applied atomically.
    pub fn deliver(&mut self, answers: &[Answer]) -> Result<()> {
        let pending = self
            .state
            .pending
            .as_mut()
            .ok_or_else(|| Error::State("no query round is pending".into()))?;
        for a in answers {
            if !pending.remaining.contains(&a.index) {
                return Err(Error::LabelConflict {
                    index: a.index,
                    reason: "index is not pending".into(),
                });
            }
        }
        self.state.labels.apply(answers)?;
        pending.remaining.retain(|i| !answers.iter().any(|a| a.index == *i));
        if pending.remaining.is_empty() {
            self.state.pending = None;
        }
        Ok(())
    }

    /// Current ensemble loss over the training rows, if any snapshot exists.
    pub fn ensemble_scores(&self) -> Option<Vec<f64>> {
        self.state.snapshots.ensemble().ok()
    }

    /// Final outlier scores of arbitrary rows under the current parameters.
    pub fn score(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        final_scores(&self.state.params, x.view(), self.state.config.score_mc, self.state.config.seed)
    }

    fn noise_for<R: rand::Rng>(&self, rng: &mut R, n: usize) -> Noise {
        let spec = self.state.params.spec();
        Noise::sample(rng, n, spec.iwae_samples, spec.latent_dim)
    }

    fn warmup_mean_step(&mut self, s: usize) -> Result<()> {
        let n = self.x.nrows();
        let size = self.state.config.n0.min(n);
        let mut rng = stream_rng(self.state.config.seed, Stream::Warmup, s as u64);
        let idx = sample(&mut rng, n, size).into_vec();
        let xb = self.x.select(Axis(0), &idx);
        let noise = self.noise_for(&mut rng, size);
        let input = ObjectiveBatch {
            batch: Rows { x: xb.view(), noise: &noise },
            inliers: None,
            outliers: None,
        };
        self.apply_step(&input, &LossSpec::mean(), StepKind::WarmupMean, None, size)
    }

    fn growing_step(&mut self, t: usize, kind: StepKind) -> Result<()> {
        let cfg = &self.state.config;
        let n = self.x.nrows();
        let size = cfg.batch_schedule(n).size(t);
        let mut rng = stream_rng(cfg.seed, Stream::Batch, t as u64);
        let idx = sample(&mut rng, n, size).into_vec();
        let xb = self.x.select(Axis(0), &idx);
        let noise = self.noise_for(&mut rng, size);

        let (spec, inl, outl) = match kind {
            StepKind::Polarization => {
                let decay = if cfg.loss.decay_lambdas {
                    cfg.gamma.powi(-((t - cfg.t1 - 1) as i32))
                } else {
                    1.0
                };
                let spec = LossSpec::polarization(&cfg.loss, cfg.loss.lambda1 * decay, cfg.loss.lambda2 * decay);
                (spec, self.state.labels.inliers(), self.state.labels.outliers())
            }
            _ => (LossSpec::trimmed(cfg.loss.rho), Vec::new(), Vec::new()),
        };
        let x_in = self.x.select(Axis(0), &inl);
        let noise_in = self.noise_for(&mut rng, inl.len());
        let x_out = self.x.select(Axis(0), &outl);
        let noise_out = self.noise_for(&mut rng, outl.len());
        let input = ObjectiveBatch {
            batch: Rows { x: xb.view(), noise: &noise },
            inliers: (!inl.is_empty()).then_some(Rows { x: x_in.view(), noise: &noise_in }),
            outliers: (!outl.is_empty()).then_some(Rows { x: x_out.view(), noise: &noise_out }),
        };
        self.apply_step(&input, &spec, kind, Some(t), size)
    }

    fn apply_step(
        &mut self,
        input: &ObjectiveBatch<'_>,
        spec: &LossSpec,
        kind: StepKind,
        t: Option<usize>,
        batch_size: usize,
    ) -> Result<()> {
        let step = self.state.completed + 1;
        let at_step = |e: Error| match e {
            Error::NonFinite { term } => Error::NonFinite {
                term: format!("{term} at step {step}"),
            },
            other => other,
        };
        let eval = loss_and_grad(&self.state.params, input, spec).map_err(at_step)?;
        self.state
            .adam
            .step(&mut self.state.params, &eval.grad)
            .map_err(at_step)?;
        self.state.history.push(StepRecord {
            step,
            kind,
            t,
            batch_size,
            objective: eval.objective,
            trimmed: eval.trimmed,
            tau: eval.threshold.map(|th| th.tau),
            n_kept: eval.kept.iter().filter(|k| **k).count(),
            n_inliers: eval.inlier_losses.len(),
            n_outliers: eval.outlier_losses.len(),
        });
        Ok(())
    }

    fn take_snapshot(&mut self, t: usize) -> Result<()> {
        let mut rng = stream_rng(self.state.config.seed, Stream::Snapshot, t as u64);
        let noise = self.noise_for(&mut rng, self.x.nrows());
        let losses = per_sample_losses(&self.state.params, self.x.view(), &noise)?;
        self.state.snapshots.push(t, losses);
        Ok(())
    }

    /// Per-class mean loss under one fixed noise draw shared by all traced steps.
    fn trace(&mut self, t: usize) -> Result<()> {
        let Some(truth) = self.truth.as_ref().filter(|_| self.state.config.trace_risks) else {
            return Ok(());
        };
        let mut rng = stream_rng(self.state.config.seed, Stream::Risk, 0);
        let noise = self.noise_for(&mut rng, self.x.nrows());
        let losses = per_sample_losses(&self.state.params, self.x.view(), &noise)?;
        self.state.risk.record(t, &losses, truth);
        Ok(())
    }

    /// Run query round `round` before the update at `t`. Returns `true` when the
    /// oracle deferred and training must wait for labels.
    fn query_round(&mut self, round: usize, t: usize, oracle: &mut dyn Oracle) -> Result<bool> {
        let cfg = &self.state.config;
        let scores = self.state.snapshots.ensemble()?;
        let budget = cfg.budget(self.x.nrows());
        let mut rng = stream_rng(cfg.seed, Stream::Query, t as u64);
        let selection = select_queries(cfg.strategy, &scores, &self.state.reserved, budget, cfg.alpha, &mut rng);
        let indices = selection.indices;
        log::debug!(
            "round {round} at t={t}: {} queries via {} (window {:?})",
            indices.len(),
            selection.applied,
            self.state.snapshots.iterations()
        );

        let reply = if indices.is_empty() {
            Reply::Answered(Vec::new())
        } else {
            oracle.ask(&indices)?
        };
        let remaining = match &reply {
            Reply::Answered(answers) => {
                if let Some(a) = answers.iter().find(|a| !indices.contains(&a.index)) {
                    return Err(Error::Oracle(format!("answer for unqueried index {}", a.index)));
                }
                self.state.labels.apply(answers)?;
                indices
                    .iter()
                    .copied()
                    .filter(|i| !answers.iter().any(|a| a.index == *i))
                    .collect::<Vec<_>>()
            }
            Reply::Pending => indices.clone(),
        };
        for &i in &indices {
            self.state.reserved[i] = true;
        }
        self.state.rounds_done = round;
        self.state.queries.push(QueryRecord {
            round,
            t,
            indices: indices.clone(),
            strategy: selection.applied,
        });
        if remaining.is_empty() {
            return Ok(false);
        }
        self.state.pending = Some(PendingRound {
            round,
            t,
            ensemble_losses: indices.iter().map(|&i| scores[i]).collect(),
            posteriors: selection
                .posteriors
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
            indices,
            remaining,
        });
        Ok(true)
    }
}
