use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::population::ClientPopulation;
use super::toy::{ToyConfig, ToyTask};
use super::{client_decide, realize_signal};
use crate::design::MechanismChoice;
use crate::engine::{Engine, EngineConfig, EngineState};
use crate::error::{Error, Result};
use crate::mechanism::{threshold, SignalScheme, TrueParticipation};
use crate::par::{self, Execution};

const CLIENT_STREAM: u64 = 0;
const SIGNAL_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;
const TASK_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Policy {
    /// Adaptive pricing with signaling.
    #[default]
    #[serde(rename = "DF")]
    Df,
    /// Adaptive pricing, no signaling.
    #[serde(rename = "DF-B")]
    DfB,
    /// Fixed reward with signaling.
    #[serde(rename = "DF-D")]
    DfD,
    /// Fixed reward, no signaling.
    #[serde(rename = "DF-BD")]
    DfBd,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Df, Policy::DfB, Policy::DfD, Policy::DfBd];

    pub fn signaling(self) -> bool {
        matches!(self, Policy::Df | Policy::DfD)
    }

    pub fn adaptive(self) -> bool {
        matches!(self, Policy::Df | Policy::DfB)
    }

    pub fn name(self) -> &'static str {
        match self {
            Policy::Df => "DF",
            Policy::DfB => "DF-B",
            Policy::DfD => "DF-D",
            Policy::DfBd => "DF-BD",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?} (expected DF, DF-B, DF-D or DF-BD)")))
    }
}

/// Everything a run needs apart from the policy, horizon and seed.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub engine: EngineConfig,
    pub population: ClientPopulation,
    pub toy: ToyConfig,
    /// Reward used by the fixed-reward policies.
    pub fixed_gamma: f64,
    pub estimator_window: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub gamma: f64,
    pub realized_mu: f64,
    pub client_theta: f64,
    pub joined: bool,
    pub payment: f64,
    pub model_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub policy: Policy,
    pub seed: u64,
    pub rounds: u64,
    pub cumulative_server_cost: f64,
    pub participation_rate: f64,
    pub converged: bool,
    pub final_gamma: Option<f64>,
    pub convergence_round: Option<u64>,
    /// Mean payment per round over the final convergence window.
    pub steady_state_cost: f64,
    pub final_loss: f64,
    #[serde(skip)]
    pub gamma_trace: Vec<f64>,
    /// Threshold induced by the offer at the realized posterior; `None`
    /// when no offer was made or nobody would join.
    #[serde(skip)]
    pub theta_hat_trace: Vec<Option<f64>>,
    #[serde(skip)]
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub metrics: SimMetrics,
    pub records: Vec<RoundRecord>,
    /// Final engine state for the adaptive policies.
    pub engine: Option<EngineState>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Offer used by the fixed-reward policies.
fn fixed_offer(setup: &SimSetup, signaling: bool) -> Result<MechanismChoice> {
    let mut cfg = setup.engine.clone();
    cfg.signaling = signaling;
    let engine = Engine::new(cfg)?;
    let truth = TrueParticipation {
        cost: &engine.config.cost,
        survival: &setup.population.theta_dist,
        bounds: &engine.config.bounds,
    };
    if let Some(c) = engine.candidate(setup.fixed_gamma, &truth)? {
        return Ok(c);
    }
    // The reward cannot be bracketed (or misses beta): fall back to pooling.
    let prior = &engine.config.prior;
    let theta = threshold(setup.fixed_gamma, prior.mean(), &engine.config.cost, &engine.config.bounds)?;
    Ok(MechanismChoice {
        gamma: setup.fixed_gamma,
        scheme: SignalScheme::full_pooling(prior),
        predicted_cost: 0.0,
        threshold_by_mu: vec![(prior.mean(), theta.value().unwrap_or(f64::INFINITY))],
    })
}

/// Run one policy for `rounds` slots. Runs with the same seed see the same
/// clients, signal uniforms and data draws round by round.
pub fn run_simulation(setup: &SimSetup, policy: Policy, rounds: u64, seed: u64) -> Result<SimOutput> {
    let mut client_rng = stream(seed, CLIENT_STREAM);
    let mut signal_rng = stream(seed, SIGNAL_STREAM);
    let mut data_rng = stream(seed, DATA_STREAM);
    let mut task_rng = stream(seed, TASK_STREAM);

    let bounds = setup.engine.bounds;
    let task = ToyTask::new(setup.toy.clone(), bounds.theta_lo, bounds.theta_hi, &mut task_rng)?;
    let mut model = task.model();

    let mut engine = None;
    let mut fixed = None;
    if policy.adaptive() {
        let mut cfg = setup.engine.clone();
        cfg.signaling = policy.signaling();
        cfg.seed = seed;
        let mut e = Engine::new(cfg)?;
        e.state.estimator.reset(setup.estimator_window);
        engine = Some(e);
    } else {
        fixed = Some(fixed_offer(setup, policy.signaling())?);
    }
    let prior = setup.engine.prior;
    let cost = &setup.engine.cost;

    let n = rounds as usize;
    let mut records = Vec::with_capacity(n);
    let mut gamma_trace = Vec::with_capacity(n);
    let mut theta_hat_trace = Vec::with_capacity(n);
    let mut loss_trace = Vec::with_capacity(n);
    let mut total_cost = 0.0;
    let mut joins = 0u64;

    for round in 1..=rounds {
        let tau = setup.population.sample_tau(&mut client_rng);
        let theta = setup.population.sample_theta(round, &mut client_rng);
        let offer = match (&mut engine, &fixed) {
            (Some(e), _) => e.offer(tau)?,
            (None, Some(f)) => Some(f.clone()),
            _ => unreachable!(),
        };
        let (gamma, mu) = match &offer {
            Some(c) => (c.gamma, realize_signal(&c.scheme, tau, &prior, &mut signal_rng)),
            None => {
                // Keep the signal stream aligned with runs that made an offer.
                let _ = realize_signal(&SignalScheme::full_revelation(&prior), tau, &prior, &mut signal_rng);
                (0.0, tau)
            }
        };
        let joined = offer.is_some() && client_decide(gamma, mu, theta, cost);
        let (xs, ys) = task.batch(theta, &mut data_rng);
        if joined {
            let local = model.local_update(&xs, &ys)?;
            model.merge(&local)?;
        }
        if let Some(e) = &mut engine {
            e.observe(offer.as_ref(), mu, joined)?;
        }
        let payment = if joined { gamma } else { 0.0 };
        total_cost += payment;
        joins += joined as u64;
        let loss = task.test_loss(&model);
        let theta_hat = match &offer {
            Some(_) => threshold(gamma, mu, cost, &bounds)?.value(),
            None => None,
        };
        records.push(RoundRecord {
            round,
            gamma,
            realized_mu: mu,
            client_theta: theta,
            joined,
            payment,
            model_loss: loss,
        });
        gamma_trace.push(gamma);
        theta_hat_trace.push(theta_hat);
        loss_trace.push(loss);
    }

    let window = setup.engine.convergence_window;
    let (converged, final_gamma, convergence_round) = match &mut engine {
        Some(e) => {
            let c = e.has_converged();
            (c, e.state.converged_gamma, e.convergence_round())
        }
        None => {
            let c = n >= window && !gamma_trace.is_empty();
            (c, c.then(|| gamma_trace[n - 1]), c.then_some(1))
        }
    };
    let tail = &records[n.saturating_sub(window)..];
    let steady_state_cost = if tail.is_empty() {
        0.0
    } else {
        tail.iter().map(|r| r.payment).sum::<f64>() / tail.len() as f64
    };
    let metrics = SimMetrics {
        policy,
        seed,
        rounds,
        cumulative_server_cost: total_cost,
        participation_rate: if rounds == 0 { 0.0 } else { joins as f64 / rounds as f64 },
        converged,
        final_gamma: final_gamma.or_else(|| gamma_trace.last().copied()),
        convergence_round,
        steady_state_cost,
        final_loss: loss_trace.last().copied().unwrap_or_else(|| task.test_loss(&model)),
        gamma_trace,
        theta_hat_trace,
        loss_trace,
    };
    Ok(SimOutput {
        metrics,
        records,
        engine: engine.map(|e| e.state),
    })
}

/// Independent runs over a batch of seeds, returned in seed order.
pub fn run_seed_batch(
    setup: &SimSetup,
    policy: Policy,
    rounds: u64,
    seeds: &[u64],
    exec: Execution,
) -> Result<Vec<SimOutput>> {
    par::map(exec, seeds, |&s| run_simulation(setup, policy, rounds, s))
        .into_iter()
        .collect()
}
