//! Per-threshold participation statistics and their upper confidence bounds.
//!
//! Each grid threshold is an arm. Pulling an arm means offering a reward and
//! signal that put the marginal client exactly at that threshold; the reward
//! is whether the client joined.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{threshold, ParticipationFn, Threshold};
use crate::model::{CostModel, ResourceBounds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub theta: f64,
    pub pulls: u64,
    pub joins: u64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EstimatorState {
    pub buckets: Vec<BucketStats>,
    pub total_rounds: u64,
    /// Sliding window length in rounds; `None` keeps all history.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    /// Observations in arrival order as `(bucket index, joined)`. Only
    /// persisted when a window is active.
    #[serde(default)]
    history: VecDeque<(usize, bool)>,
}

/// The unwindowed history is a recency buffer that is never persisted, so it
/// does not take part in equality.
impl PartialEq for EstimatorState {
    fn eq(&self, other: &Self) -> bool {
        self.buckets == other.buckets
            && self.total_rounds == other.total_rounds
            && self.window == other.window
            && (self.window.is_none() || self.history == other.history)
    }
}

impl Serialize for EstimatorState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            buckets: &'a [BucketStats],
            total_rounds: u64,
            #[serde(skip_serializing_if = "Option::is_none")]
            window: Option<usize>,
            #[serde(skip_serializing_if = "Option::is_none")]
            history: Option<&'a VecDeque<(usize, bool)>>,
        }
        Repr {
            buckets: &self.buckets,
            total_rounds: self.total_rounds,
            window: self.window,
            history: self.window.map(|_| &self.history),
        }
        .serialize(serializer)
    }
}

impl EstimatorState {
    pub fn new(theta_grid: &[f64]) -> Self {
        EstimatorState {
            buckets: theta_grid
                .iter()
                .map(|&theta| BucketStats {
                    theta,
                    pulls: 0,
                    joins: 0,
                })
                .collect(),
            total_rounds: 0,
            window: None,
            history: VecDeque::new(),
        }
    }

    pub fn from_bounds(bounds: &ResourceBounds) -> Self {
        Self::new(&bounds.theta_grid())
    }

    /// Position of `theta` in the bucket list.
    pub fn index_of(&self, theta: f64) -> Result<usize> {
        let first = self.buckets.first().ok_or(Error::UnknownBucket { theta })?.theta;
        let idx = if self.buckets.len() == 1 {
            0.0
        } else {
            let step = self.buckets[1].theta - first;
            ((theta - first) / step).round()
        };
        if idx >= 0.0 && (idx as usize) < self.buckets.len() {
            let i = idx as usize;
            if (self.buckets[i].theta - theta).abs() <= 1e-9 {
                return Ok(i);
            }
        }
        Err(Error::UnknownBucket { theta })
    }

    pub fn record(&mut self, theta_hat: f64, joined: bool) -> Result<()> {
        let idx = self.index_of(theta_hat)?;
        self.record_index(idx, joined);
        Ok(())
    }

    pub fn record_index(&mut self, idx: usize, joined: bool) {
        let b = &mut self.buckets[idx];
        b.pulls += 1;
        b.joins += joined as u64;
        self.total_rounds += 1;
        self.history.push_back((idx, joined));
        if let Some(w) = self.window {
            self.trim(w);
        } else if self.history.len() > HISTORY_CAP {
            self.history.pop_front();
        }
    }

    /// Switch the sliding window on (or off with `None`), immediately
    /// discarding statistics older than the window.
    pub fn reset(&mut self, window: Option<usize>) {
        self.window = window;
        if let Some(w) = window {
            self.trim(w);
        }
    }

    fn trim(&mut self, window: usize) {
        while self.history.len() > window {
            let (idx, joined) = self.history.pop_front().expect("non-empty");
            let b = &mut self.buckets[idx];
            b.pulls -= 1;
            b.joins -= joined as u64;
            self.total_rounds -= 1;
        }
    }

    /// Exploration bonus `sqrt(ln N / (2 n))`, with `ln N` taken as 0 for `N < 2`.
    pub fn bonus(total_rounds: u64, pulls: u64) -> f64 {
        let log_n = if total_rounds < 2 {
            0.0
        } else {
            (total_rounds as f64).ln()
        };
        (log_n / (2.0 * pulls as f64)).sqrt()
    }

    pub fn ucb_at(&self, idx: usize) -> f64 {
        let b = &self.buckets[idx];
        if b.pulls == 0 {
            return 1.0;
        }
        let mean = b.joins as f64 / b.pulls as f64;
        (mean + Self::bonus(self.total_rounds, b.pulls)).min(1.0)
    }

    pub fn ucb(&self, theta_hat: f64) -> Result<f64> {
        Ok(self.ucb_at(self.index_of(theta_hat)?))
    }

    pub fn ucb_vector(&self) -> Vec<f64> {
        (0..self.buckets.len()).map(|i| self.ucb_at(i)).collect()
    }

    pub fn total_pulls(&self) -> u64 {
        self.buckets.iter().map(|b| b.pulls).sum()
    }
}

/// History kept for window resets when no window is configured.
const HISTORY_CAP: usize = 1 << 20;

/// Optimistic participation estimate: the UCB of the grid bucket at or
/// above the induced threshold.
#[derive(Debug, Clone, Copy)]
pub struct UcbSurvival<'a> {
    pub state: &'a EstimatorState,
    pub cost: &'a CostModel,
    pub bounds: &'a ResourceBounds,
}

impl ParticipationFn for UcbSurvival<'_> {
    fn prob(&self, gamma: f64, mu: f64) -> f64 {
        match threshold(gamma, mu, self.cost, self.bounds) {
            Ok(Threshold::At(t)) => self.state.ucb_at(self.bounds.theta_ceil_index(t)),
            _ => 0.0,
        }
    }
}

pub fn estimated_survival<'a>(
    state: &'a EstimatorState,
    cost: &'a CostModel,
    bounds: &'a ResourceBounds,
) -> UcbSurvival<'a> {
    UcbSurvival {
        state,
        cost,
        bounds,
    }
}
