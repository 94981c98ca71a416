//! Smoothed objective, reward and decision threshold of one flow.

use serde::Serialize;

use super::rnn::EPS_FLOOR;
use crate::error::CramError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RewardState {
    pub alpha: f64,
    pub beta: f64,
    /// Exponentially smoothed objective; `None` before the first sample.
    pub objective: Option<f64>,
    pub gamma: Option<f64>,
    pub last_reward: Option<f64>,
}

impl RewardState {
    pub fn new(alpha: f64, beta: f64) -> Self {
        RewardState { alpha, beta, objective: None, gamma: None, last_reward: None }
    }

    /// Folds a raw objective sample in and returns the reward `1 / O`.
    pub fn compute_reward(&mut self, raw: f64) -> Result<f64, CramError> {
        if !(raw > 0.0) || !raw.is_finite() {
            return Err(CramError::NonPositiveObjective(raw));
        }
        let o = match self.objective {
            None => raw,
            Some(prev) => self.alpha * prev + (1.0 - self.alpha) * raw,
        };
        self.objective = Some(o);
        let r = (1.0 / o).max(EPS_FLOOR);
        self.last_reward = Some(r);
        Ok(r)
    }

    /// Reward for an unreachable or timed-out path; leaves the smoothed
    /// objective alone.
    pub fn sentinel(&mut self) -> f64 {
        self.last_reward = Some(EPS_FLOOR);
        EPS_FLOOR
    }

    /// Moves the threshold towards `reward` and returns its new value.
    pub fn update_threshold(&mut self, reward: f64) -> f64 {
        let g = match self.gamma {
            None => reward,
            Some(prev) => self.beta * prev + (1.0 - self.beta) * reward,
        };
        self.gamma = Some(g);
        g
    }
}
