//! One training session: a worker thread that owns the trainer and a shared view
//! that handlers read without waiting on training.

use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;

use imboost::data::{Dataset, Split};
use imboost::metrics::{auc, average_precision};
use imboost::pipeline::RunConfig;
use imboost::query::{Answer, DeferredOracle};
use imboost::trainer::{Checkpoint, Phase, StepOutcome, Trainer};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use crate::store::Store;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionPhase {
    Warmup,
    Polarizing,
    AwaitingLabels,
    Done,
    Failed,
}

impl From<Phase> for SessionPhase {
    fn from(p: Phase) -> Self {
        match p {
            Phase::Warmup => SessionPhase::Warmup,
            Phase::Polarizing => SessionPhase::Polarizing,
            Phase::AwaitingLabels => SessionPhase::AwaitingLabels,
            Phase::Done => SessionPhase::Done,
        }
    }
}

/// A queried training row as shown to the annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryItem {
    /// Position in the training split; labels are posted against this index.
    pub index: usize,
    /// Row of the uploaded dataset.
    pub row_index: usize,
    /// Min-max scaled features the model sees.
    pub features: Vec<f64>,
    /// Original feature values.
    pub raw: Option<Vec<f64>>,
    pub ensemble_loss: f64,
    pub posterior_inlier: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreItem {
    pub row_index: usize,
    pub split: Split,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// Nothing to report yet: no loss snapshot exists during warm-up.
    None,
    /// Mean of the buffered per-iteration losses over the training rows.
    Ensemble,
    /// Monte-Carlo averaged losses of the final model over every row.
    Final,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub auc_train: Option<f64>,
    pub auc_test: Option<f64>,
    pub ap_train: Option<f64>,
    pub ap_test: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresView {
    pub kind: ScoreKind,
    pub scores: Vec<ScoreItem>,
    pub metrics: Option<SessionMetrics>,
}

/// Snapshot of a session as returned by the state endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub phase: SessionPhase,
    /// Index of the last completed trimmed or polarization step.
    pub t: usize,
    /// Query rounds issued so far, including a pending one.
    pub round: usize,
    pub total_rounds: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub labeled_inliers: usize,
    pub labeled_outliers: usize,
    pub pending: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub(crate) struct View {
    pub state: SessionState,
    pub queries: Vec<QueryItem>,
    pub scores: ScoresView,
}

pub(crate) enum Command {
    Deliver {
        answers: Vec<Answer>,
        reply: oneshot::Sender<imboost::Result<SessionState>>,
    },
}

pub struct Session {
    pub id: String,
    view: Arc<RwLock<View>>,
    commands: Mutex<Sender<Command>>,
}

impl Session {
    pub fn state(&self) -> SessionState {
        self.view.read().expect("view lock").state.clone()
    }

    pub fn queries(&self) -> Vec<QueryItem> {
        self.view.read().expect("view lock").queries.clone()
    }

    pub fn scores(&self) -> ScoresView {
        self.view.read().expect("view lock").scores.clone()
    }

    /// Hand answers to the worker. The reply carries the state right after the
    /// answers were applied. Returns `None` when the worker has exited.
    pub(crate) fn deliver(&self, answers: Vec<Answer>) -> Option<oneshot::Receiver<imboost::Result<SessionState>>> {
        let (reply, rx) = oneshot::channel();
        let sender = self.commands.lock().expect("command lock");
        sender.send(Command::Deliver { answers, reply }).ok()?;
        Some(rx)
    }
}

/// Everything needed to run or restore a session.
pub(crate) struct Setup {
    pub id: String,
    pub dataset: Dataset,
    pub config: RunConfig,
    pub checkpoint: Option<Checkpoint>,
    pub store: Option<Store>,
}

struct Worker {
    trainer: Trainer,
    dataset: Dataset,
    view: Arc<RwLock<View>>,
    checkpoint_path: Option<PathBuf>,
}

pub(crate) fn spawn(setup: Setup) -> imboost::Result<Arc<Session>> {
    let x = setup.dataset.train_features();
    let truth = setup.dataset.train_labels();
    let trainer = match setup.checkpoint {
        Some(c) => Trainer::resume(c, x, truth)?,
        None => Trainer::new(setup.config.trainer.clone(), x, truth)?,
    };
    let (tx, rx) = mpsc::channel();
    let view = Arc::new(RwLock::new(View {
        state: SessionState {
            id: setup.id.clone(),
            phase: trainer.phase().into(),
            t: trainer.t(),
            round: 0,
            total_rounds: setup.config.trainer.ta,
            n_train: setup.dataset.train_idx.len(),
            n_test: setup.dataset.test_idx.len(),
            labeled_inliers: 0,
            labeled_outliers: 0,
            pending: 0,
            error: None,
        },
        queries: Vec::new(),
        scores: ScoresView {
            kind: ScoreKind::None,
            scores: Vec::new(),
            metrics: None,
        },
    }));
    let checkpoint_path = setup.store.as_ref().map(|s| s.checkpoint_path(&setup.id));
    let mut worker = Worker {
        trainer,
        dataset: setup.dataset,
        view: Arc::clone(&view),
        checkpoint_path,
    };
    worker.publish();
    let session = Arc::new(Session {
        id: setup.id.clone(),
        view,
        commands: Mutex::new(tx),
    });
    thread::Builder::new()
        .name(format!("session-{}", setup.id))
        .spawn(move || worker.run(rx))?;
    Ok(session)
}

impl Worker {
    fn run(&mut self, rx: Receiver<Command>) {
        if let Err(e) = self.train(&rx) {
            log::error!("session failed: {e}");
            let mut view = self.view.write().expect("view lock");
            view.state.phase = SessionPhase::Failed;
            view.state.error = Some(e.to_string());
            view.queries.clear();
        }
    }

    fn train(&mut self, rx: &Receiver<Command>) -> imboost::Result<()> {
        loop {
            if self.trainer.pending().is_some() && !self.await_labels(rx)? {
                return Ok(());
            }
            match rx.try_recv() {
                Ok(Command::Deliver { reply, .. }) => {
                    let _ = reply.send(Err(imboost::Error::State("no query round is pending".into())));
                }
                Err(TryRecvError::Disconnected) => return Ok(()),
                Err(TryRecvError::Empty) => {}
            }
            match self.trainer.step(&mut DeferredOracle)? {
                StepOutcome::Continue => self.publish(),
                StepOutcome::NeedLabels => {
                    self.publish();
                    self.persist()?;
                    if !self.await_labels(rx)? {
                        return Ok(());
                    }
                }
                StepOutcome::Done => {
                    self.finish()?;
                    return Ok(());
                }
            }
        }
    }

    /// Block until the pending round is fully answered. Returns `false` if the
    /// session was dropped while waiting.
    fn await_labels(&mut self, rx: &Receiver<Command>) -> imboost::Result<bool> {
        while self.trainer.pending().is_some() {
            let Ok(Command::Deliver { answers, reply }) = rx.recv() else {
                return Ok(false);
            };
            let result = match self.trainer.deliver(&answers) {
                Ok(()) => {
                    self.publish();
                    self.persist()?;
                    Ok(self.view.read().expect("view lock").state.clone())
                }
                Err(e) => Err(e),
            };
            let _ = reply.send(result);
        }
        Ok(true)
    }

    fn persist(&self) -> imboost::Result<()> {
        if let Some(path) = &self.checkpoint_path {
            self.trainer.checkpoint().save(path)?;
        }
        Ok(())
    }

    fn publish(&self) {
        let trainer = &self.trainer;
        let labels = trainer.labels();
        let queries = trainer
            .pending()
            .map(|p| {
                p.indices
                    .iter()
                    .enumerate()
                    .filter(|(_, i)| p.remaining.contains(i))
                    .map(|(j, &index)| self.query_item(index, p.ensemble_losses[j], p.posteriors.as_ref().map(|v| v[j])))
                    .collect()
            })
            .unwrap_or_default();
        let scores = trainer.ensemble_scores().map(|ens| ScoresView {
            kind: ScoreKind::Ensemble,
            scores: self
                .dataset
                .train_idx
                .iter()
                .zip(ens)
                .map(|(&row_index, score)| ScoreItem {
                    row_index,
                    split: Split::Train,
                    score,
                })
                .collect(),
            metrics: None,
        });
        let mut view = self.view.write().expect("view lock");
        let s = &mut view.state;
        s.phase = trainer.phase().into();
        s.t = trainer.t();
        s.round = trainer.rounds_done();
        s.labeled_inliers = labels.inliers().len();
        s.labeled_outliers = labels.outliers().len();
        s.pending = trainer.pending().map_or(0, |p| p.remaining.len());
        view.queries = queries;
        if let Some(scores) = scores.filter(|_| view.scores.kind != ScoreKind::Final) {
            view.scores = scores;
        }
    }

    fn query_item(&self, index: usize, ensemble_loss: f64, posterior_inlier: Option<f64>) -> QueryItem {
        let row_index = self.dataset.train_idx[index];
        QueryItem {
            index,
            row_index,
            features: self.dataset.features.row(row_index).to_vec(),
            raw: self.dataset.raw.as_ref().map(|r| r.row(row_index).to_vec()),
            ensemble_loss,
            posterior_inlier,
        }
    }

    fn finish(&mut self) -> imboost::Result<()> {
        let train = self.trainer.score(&self.dataset.train_features())?;
        let test = if self.dataset.test_idx.is_empty() {
            Vec::new()
        } else {
            self.trainer.score(&self.dataset.test_features())?
        };
        let metrics = self.dataset.labels.as_ref().map(|_| {
            let pair = |s: &[f64], l: Option<Vec<bool>>| match l {
                Some(l) if !s.is_empty() => (auc(s, &l).ok(), average_precision(s, &l).ok()),
                _ => (None, None),
            };
            let (auc_train, ap_train) = pair(&train, self.dataset.train_labels());
            let (auc_test, ap_test) = pair(&test, self.dataset.test_labels());
            SessionMetrics {
                auc_train,
                auc_test,
                ap_train,
                ap_test,
            }
        });
        let mut scores: Vec<ScoreItem> = [
            (Split::Train, &self.dataset.train_idx, &train),
            (Split::Test, &self.dataset.test_idx, &test),
        ]
        .into_iter()
        .flat_map(|(split, idx, s)| {
            idx.iter().zip(s.iter()).map(move |(&row_index, &score)| ScoreItem { row_index, split, score })
        })
        .collect();
        scores.sort_by_key(|r| r.row_index);
        self.persist()?;
        self.view.write().expect("view lock").scores = ScoresView {
            kind: ScoreKind::Final,
            scores,
            metrics,
        };
        self.publish();
        Ok(())
    }
}
