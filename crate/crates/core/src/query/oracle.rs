//! Sources of answers to label queries.

use super::labels::{Answer, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Answered(Vec<Answer>),
    /// Answers will arrive later, e.g. from a human through the HTTP service.
    Pending,
}

pub trait Oracle: Send {
    fn ask(&mut self, indices: &[usize]) -> Result<Reply>;
}

/// Answers from ground-truth labels of the training rows.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    is_outlier: Vec<bool>,
}

impl SimulatedOracle {
    pub fn new(is_outlier: Vec<bool>) -> Self {
        Self { is_outlier }
    }
}

impl Oracle for SimulatedOracle {
    fn ask(&mut self, indices: &[usize]) -> Result<Reply> {
        indices
            .iter()
            .map(|&index| {
                self.is_outlier
                    .get(index)
                    .map(|&o| Answer {
                        index,
                        label: Label::from_is_outlier(o),
                    })
                    .ok_or_else(|| Error::Oracle(format!("no ground truth for index {index}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Reply::Answered)
    }
}

/// Always defers; answers are delivered separately.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeferredOracle;

impl Oracle for DeferredOracle {
    fn ask(&mut self, _indices: &[usize]) -> Result<Reply> {
        Ok(Reply::Pending)
    }
}
