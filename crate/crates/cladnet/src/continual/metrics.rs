use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `a[t][t']`: accuracy on subject `t`'s test set after training through
/// subject `t'`. Every cell is filled, including subjects not yet trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    a: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        Self {
            a: vec![vec![f64::NAN; tasks]; tasks],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let t = rows.len();
        if t == 0 || rows.iter().any(|r| r.len() != t) {
            return Err(Error::Data("accuracy matrix must be square and non-empty".into()));
        }
        if let Some(bad) = rows.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("accuracy {bad} outside [0, 1]")));
        }
        Ok(Self { a: rows })
    }

    pub fn tasks(&self) -> usize {
        self.a.len()
    }

    pub fn get(&self, t: usize, t_prime: usize) -> f64 {
        self.a[t][t_prime]
    }

    pub fn set(&mut self, t: usize, t_prime: usize, acc: f64) {
        assert!((0.0..=1.0).contains(&acc), "accuracy {acc} outside [0, 1]");
        self.a[t][t_prime] = acc;
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn is_complete(&self) -> bool {
        self.a.iter().flatten().all(|v| !v.is_nan())
    }

    /// Mean accuracy over subjects after the last task.
    pub fn final_accuracy(&self) -> f64 {
        let last = self.tasks() - 1;
        self.a.iter().map(|row| row[last]).sum::<f64>() / self.tasks() as f64
    }

    /// Mean gap between each subject's best accuracy at any point of the
    /// stream and its final accuracy.
    pub fn forgetting_measure(&self) -> f64 {
        let last = self.tasks() - 1;
        self.a
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max) - row[last])
            .sum::<f64>()
            / self.tasks() as f64
    }

    /// Mean accuracy on each subject right after training on it.
    pub fn learning_accuracy(&self) -> f64 {
        (0..self.tasks()).map(|t| self.a[t][t]).sum::<f64>() / self.tasks() as f64
    }
}
