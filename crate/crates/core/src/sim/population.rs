use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CommPrior, ResourceBounds, SurvivalModel, SurvivalSpec};

/// Replace the computation-resource distribution from `round` onwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shift {
    pub round: u64,
    pub theta_dist: SurvivalSpec,
}

/// Arriving clients. Each distribution over theta is described by its
/// survival function and sampled through the inverse CDF.
#[derive(Debug, Clone)]
pub struct ClientPopulation {
    pub theta_dist: SurvivalModel,
    pub tau_source: CommPrior,
    pub bounds: ResourceBounds,
    /// Sorted by round.
    pub shift_schedule: Vec<(u64, SurvivalModel)>,
}

impl ClientPopulation {
    pub fn new(theta_dist: SurvivalModel, tau_source: CommPrior, bounds: ResourceBounds) -> Self {
        ClientPopulation {
            theta_dist,
            tau_source,
            bounds,
            shift_schedule: Vec::new(),
        }
    }

    pub fn with_shifts(mut self, shifts: &[Shift]) -> Result<Self> {
        let mut sched = shifts
            .iter()
            .map(|s| Ok((s.round, s.theta_dist.build(&self.bounds)?)))
            .collect::<Result<Vec<_>>>()?;
        sched.sort_by_key(|&(r, _)| r);
        if sched.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config("two shifts scheduled for the same round".into()));
        }
        self.shift_schedule = sched;
        Ok(self)
    }

    /// Distribution in force at `round` (1-based).
    pub fn active(&self, round: u64) -> &SurvivalModel {
        self.shift_schedule
            .iter()
            .rev()
            .find(|(r, _)| *r <= round)
            .map_or(&self.theta_dist, |(_, s)| s)
    }

    pub fn sample_theta<R: Rng + ?Sized>(&self, round: u64, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.active(round).quantile(u, self.bounds.theta_lo, self.bounds.theta_hi)
    }

    pub fn sample_tau<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if u < self.tau_source.mass_lo {
            self.tau_source.tau_lo
        } else {
            self.tau_source.tau_hi
        }
    }
}
