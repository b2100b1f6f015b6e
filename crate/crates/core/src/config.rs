//! Scenario configuration shared by every workflow.

use serde::{Deserialize, Serialize};

use crate::design::OracleSettings;
use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::model::{CommPrior, CostModel, CostSpec, PriorSpec, ResourceBounds, SurvivalModel, SurvivalSpec};
use crate::par::Execution;
use crate::sim::{ClientPopulation, GridRange, Policy, Shift, SimSetup, ToyConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub mu: GridRange,
    pub gamma: GridRange,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            mu: GridRange { lo: 0.1, hi: 0.9, step: 0.01 },
            gamma: GridRange { lo: 0.01, hi: 1.0, step: 0.01 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Oracle grid step; defaults to `xi / 100`.
    pub fine_step: Option<f64>,
    /// Random draws per sampled invariant.
    pub samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            fine_step: None,
            samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub bounds: ResourceBounds,
    pub cost: CostSpec,
    /// Survival function known to the server in design and verify mode.
    pub survival: SurvivalSpec,
    /// Client computation-resource distribution; defaults to `survival`.
    pub theta_dist: Option<SurvivalSpec>,
    pub tau_prior: PriorSpec,
    pub policy: Policy,
    pub rounds: u64,
    pub seed: u64,
    /// Minimum induced threshold; defaults to the lower theta bound.
    pub beta: Option<f64>,
    pub convergence_window: usize,
    pub estimator_window: Option<usize>,
    /// Reward for the fixed-reward policies; defaults to the midpoint of the reward grid.
    pub fixed_gamma: Option<f64>,
    pub shift_schedule: Vec<Shift>,
    pub toy: ToyConfig,
    pub sweep: SweepConfig,
    pub verify: VerifyConfig,
    /// Fan out sweeps, oracle searches and seed batches across threads.
    pub parallel: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            bounds: ResourceBounds::default(),
            cost: CostSpec::default(),
            survival: SurvivalSpec::default(),
            theta_dist: None,
            tau_prior: PriorSpec::default(),
            policy: Policy::Df,
            rounds: 5000,
            seed: 42,
            beta: None,
            convergence_window: 200,
            estimator_window: None,
            fixed_gamma: None,
            shift_schedule: Vec::new(),
            toy: ToyConfig::default(),
            sweep: SweepConfig::default(),
            verify: VerifyConfig::default(),
            parallel: true,
        }
    }
}

/// A validated configuration with every model built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub bounds: ResourceBounds,
    pub prior: CommPrior,
    pub cost: CostModel,
    pub survival: SurvivalModel,
    pub setup: SimSetup,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn exec(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn resolve(&self) -> Result<Scenario> {
        let bounds = self.bounds;
        bounds.validate()?;
        let prior = self.tau_prior.build(&bounds)?;
        let cost = self.cost.build(&bounds)?;
        let survival = self.survival.build(&bounds)?;
        let theta_dist = match &self.theta_dist {
            Some(spec) => spec.build(&bounds)?,
            None => survival.clone(),
        };
        let mut engine = EngineConfig::new(bounds, prior, cost.clone())?;
        if let Some(beta) = self.beta {
            if !beta.is_finite() {
                return Err(Error::Config("beta must be finite".into()));
            }
            engine.beta = beta;
        }
        engine.convergence_window = self.convergence_window;
        engine.seed = self.seed;
        engine.signaling = self.policy.signaling();
        engine.validate()?;
        if self.estimator_window == Some(0) {
            return Err(Error::Config("estimator window must be positive".into()));
        }
        let fixed_gamma = match self.fixed_gamma {
            Some(g) if (bounds.gamma_lo..=bounds.gamma_hi).contains(&g) => g,
            Some(g) => return Err(Error::Config(format!("fixed_gamma {g} outside the reward box"))),
            None => {
                let grid = &engine.reward_grid;
                let mid = 0.5 * (bounds.gamma_lo + bounds.gamma_hi);
                *grid
                    .iter()
                    .min_by(|a, b| (*a - mid).abs().total_cmp(&(*b - mid).abs()))
                    .expect("non-empty reward grid")
            }
        };
        self.toy.validate()?;
        let population = ClientPopulation::new(theta_dist, prior, bounds).with_shifts(&self.shift_schedule)?;
        if let Some(step) = self.verify.fine_step {
            if !(step > 0.0) {
                return Err(Error::Config("verify.fine_step must be positive".into()));
            }
        }
        Ok(Scenario {
            config: self.clone(),
            bounds,
            prior,
            cost,
            survival,
            setup: SimSetup {
                engine,
                population,
                toy: self.toy.clone(),
                fixed_gamma,
                estimator_window: self.estimator_window,
            },
        })
    }
}

impl Scenario {
    pub fn oracle_settings(&self) -> OracleSettings {
        OracleSettings {
            beta: self.setup.engine.beta,
            fine_step: self.config.verify.fine_step.unwrap_or(self.bounds.xi / 100.0),
            exec: self.config.exec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = ScenarioConfig::from_json("{}").unwrap();
        assert_eq!(c, ScenarioConfig::default());
        let s = c.resolve().unwrap();
        assert_eq!(s.setup.fixed_gamma, 0.5);
        assert_eq!(s.setup.engine.beta, 0.1);
        assert_eq!(s.prior.mean(), 0.5);
    }

    #[test]
    fn round_trips_through_json() {
        let mut c = ScenarioConfig::default();
        c.policy = Policy::DfBd;
        c.estimator_window = Some(500);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ScenarioConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_and_inconsistent() {
        assert!(ScenarioConfig::from_json(r#"{"roundz": 3}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"toy": {"depth": 3}}"#).is_err());
        let c = ScenarioConfig::from_json(r#"{"bounds": {"xi": 0.03}}"#).unwrap();
        assert!(c.resolve().is_err());
        let c = ScenarioConfig::from_json(r#"{"fixed_gamma": 2.0}"#).unwrap();
        assert!(c.resolve().is_err());
    }

    #[test]
    fn partial_sections_fill_in() {
        let c = ScenarioConfig::from_json(
            r#"{"bounds": {"xi": 0.05}, "tau_prior": {"form": "two_point", "mass_lo": 0.25}, "policy": "DF-D"}"#,
        )
        .unwrap();
        let s = c.resolve().unwrap();
        assert_eq!(s.setup.engine.reward_grid.len(), 21);
        assert!((s.prior.mean() - 0.7).abs() < 1e-12);
        assert!(s.setup.engine.signaling);
    }
}
