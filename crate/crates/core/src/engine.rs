//! The adaptive pricing-and-signaling state machine.
//!
//! The engine first sweeps every grid threshold once with fully revealing
//! offers, then each round picks the reward on the grid whose bracketing
//! two-point scheme minimizes the optimistic expected payment.

use serde::{Deserialize, Serialize};

use crate::bandit::{estimated_survival, EstimatorState};
use crate::design::MechanismChoice;
use crate::error::{Error, Result};
use crate::mechanism::{
    build_scheme, server_cost, threshold, two_point_split, ParticipationFn, SignalScheme,
    SupportPoint, Threshold,
};
use crate::model::{CommPrior, CostModel, ResourceBounds};
use crate::par::{self, Execution};

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub bounds: ResourceBounds,
    pub prior: CommPrior,
    pub cost: CostModel,
    pub reward_grid: Vec<f64>,
    pub theta_grid: Vec<f64>,
    pub beta: f64,
    pub convergence_window: usize,
    pub seed: u64,
    /// With signaling off the engine only ever pools (posterior = prior mean).
    pub signaling: bool,
    pub exec: Execution,
}

impl EngineConfig {
    pub fn new(bounds: ResourceBounds, prior: CommPrior, cost: CostModel) -> Result<Self> {
        bounds.validate()?;
        Ok(EngineConfig {
            reward_grid: bounds.reward_grid(),
            theta_grid: bounds.theta_grid(),
            beta: bounds.theta_lo,
            convergence_window: 200,
            seed: 0,
            signaling: true,
            exec: Execution::Sequential,
            bounds,
            prior,
            cost,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        let check = |name: &str, grid: &[f64], lo: f64| -> Result<()> {
            for (i, &v) in grid.iter().enumerate() {
                if (v - (lo + i as f64 * self.bounds.xi)).abs() >= 1e-12 {
                    return Err(Error::Config(format!("{name} grid is not evenly spaced by xi at index {i}")));
                }
            }
            Ok(())
        };
        check("reward", &self.reward_grid, self.bounds.gamma_lo)?;
        check("theta", &self.theta_grid, self.bounds.theta_lo)?;
        if self.theta_grid.len() != self.bounds.theta_buckets() || self.reward_grid.is_empty() {
            return Err(Error::Config("grids do not cover the bounds".into()));
        }
        if (self.prior.tau_lo, self.prior.tau_hi) != (self.bounds.tau_lo, self.bounds.tau_hi) {
            return Err(Error::Config("prior atoms must sit at the tau bounds".into()));
        }
        if self.convergence_window == 0 {
            return Err(Error::Config("convergence window must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Init,
    Adaptive,
}

/// One row of the choice history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub round: u64,
    pub gamma: f64,
    pub mu_l: f64,
    pub mu_r: f64,
    pub w_l: f64,
    pub predicted_cost: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub phase: Phase,
    pub init_cursor: usize,
    pub estimator: EstimatorState,
    pub round: u64,
    pub choice_history: Vec<ChoiceRecord>,
    pub converged_gamma: Option<f64>,
}

/// Posterior means whose thresholds sit on the grid points around the
/// threshold at the prior mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub mu_l: f64,
    pub mu_r: f64,
    /// Integer with `(z - 1) xi <= theta_hat <= z xi`.
    pub z: i64,
    pub theta_hat: f64,
    /// Grid indices of the thresholds induced at `mu_r` and `mu_l`.
    pub lower_idx: usize,
    pub upper_idx: usize,
}

impl Bracket {
    pub fn is_degenerate(&self) -> bool {
        self.mu_l == self.mu_r
    }
}

/// Smallest `mu` in `[lo, hi]` with `c(theta, mu) <= gamma`.
fn solve_mu(gamma: f64, theta: f64, lo: f64, hi: f64, cost: &CostModel) -> Option<f64> {
    if cost.eval(theta, hi) > gamma || cost.eval(theta, lo) < gamma {
        return None;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        if b - a <= 1e-14 {
            break;
        }
        let mid = 0.5 * (a + b);
        if cost.eval(theta, mid) <= gamma {
            b = mid;
        } else {
            a = mid;
        }
    }
    Some(b)
}

pub fn bracket_mus(gamma: f64, cost: &CostModel, bounds: &ResourceBounds, prior: &CommPrior) -> Result<Bracket> {
    let mean = prior.mean();
    let theta_hat = match threshold(gamma, mean, cost, bounds)? {
        Threshold::At(t) => t,
        Threshold::NoParticipant => {
            return Err(Error::Unbracketable {
                gamma,
                reason: "no participant at the prior mean".into(),
            })
        }
    };
    let z_of = |theta: f64| (theta / bounds.xi).round() as i64;
    if let Some(i) = bounds.theta_exact_index(theta_hat) {
        return Ok(Bracket {
            mu_l: mean,
            mu_r: mean,
            z: z_of(theta_hat) + 1,
            theta_hat,
            lower_idx: i,
            upper_idx: i,
        });
    }
    let lower_idx = ((theta_hat - bounds.theta_lo) / bounds.xi).floor() as usize;
    let upper_idx = lower_idx + 1;
    let (theta_lower, theta_upper) = (bounds.theta_at(lower_idx), bounds.theta_at(upper_idx));
    let mu_r = solve_mu(gamma, theta_lower, mean, bounds.tau_hi, cost).ok_or_else(|| Error::Unbracketable {
        gamma,
        reason: format!("threshold {theta_lower} needs a posterior above tau_hi"),
    })?;
    let mu_l = solve_mu(gamma, theta_upper, bounds.tau_lo, mean, cost).ok_or_else(|| Error::Unbracketable {
        gamma,
        reason: format!("threshold {theta_upper} needs a posterior below tau_lo"),
    })?;
    Ok(Bracket {
        mu_l,
        mu_r,
        z: z_of(theta_upper),
        theta_hat,
        lower_idx,
        upper_idx,
    })
}

#[derive(Debug, Clone)]
pub struct Engine {
    pub config: EngineConfig,
    pub state: EngineState,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let state = EngineState {
            phase: Phase::Init,
            init_cursor: 0,
            estimator: EstimatorState::new(&config.theta_grid),
            round: 0,
            choice_history: Vec::new(),
            converged_gamma: None,
        };
        Ok(Engine { config, state })
    }

    pub fn from_checkpoint(config: EngineConfig, state: EngineState) -> Result<Self> {
        config.validate()?;
        if state.estimator.buckets.len() != config.theta_grid.len() {
            return Err(Error::Config("checkpoint grid does not match config".into()));
        }
        Ok(Engine { config, state })
    }

    fn grid_len(&self) -> usize {
        self.config.theta_grid.len()
    }

    /// Offer for sweep round `t` (1-based): reveal the state and price so the
    /// marginal client sits at the `t`-th grid threshold.
    pub fn init_offer(&self, t: usize, tau: f64) -> Result<MechanismChoice> {
        let cfg = &self.config;
        if t == 0 || t > self.grid_len() {
            return Err(Error::InvalidDomain(format!("sweep round {t} outside 1..={}", self.grid_len())));
        }
        let target = cfg.theta_grid[t - 1];
        let (mu, scheme) = if cfg.signaling {
            if cfg.prior.atom_index(tau).is_none() {
                return Err(Error::InvalidDomain(format!("tau {tau} is not a prior atom")));
            }
            (tau, SignalScheme::full_revelation(&cfg.prior))
        } else {
            (cfg.prior.mean(), SignalScheme::full_pooling(&cfg.prior))
        };
        let needed = cfg.cost.eval(target, mu);
        let gamma = *cfg
            .reward_grid
            .iter()
            .find(|&&g| g >= needed)
            .ok_or(Error::GridExhausted { theta: target, tau })?;
        self.priced(gamma, scheme)
    }

    fn priced(&self, gamma: f64, scheme: SignalScheme) -> Result<MechanismChoice> {
        let cfg = &self.config;
        let est = estimated_survival(&self.state.estimator, &cfg.cost, &cfg.bounds);
        let predicted_cost = server_cost(gamma, &scheme, &est, &cfg.prior);
        let threshold_by_mu = scheme
            .support
            .iter()
            .map(|p| {
                let t = threshold(gamma, p.mu, &cfg.cost, &cfg.bounds)?;
                Ok((p.mu, t.value().unwrap_or(f64::INFINITY)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MechanismChoice {
            gamma,
            scheme,
            predicted_cost,
            threshold_by_mu,
        })
    }

    /// Scheme and predicted cost for one grid reward, or `None` when the
    /// reward is skipped (unbracketable, no participant, or violates beta).
    pub fn candidate<P: ParticipationFn + ?Sized>(&self, gamma: f64, surv: &P) -> Result<Option<MechanismChoice>> {
        let cfg = &self.config;
        let mean = cfg.prior.mean();
        let support = if cfg.signaling {
            let br = match bracket_mus(gamma, &cfg.cost, &cfg.bounds, &cfg.prior) {
                Ok(b) => b,
                Err(Error::Unbracketable { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            if br.is_degenerate() {
                vec![SupportPoint { mu: mean, weight: 1.0 }]
            } else {
                let (w_l, w_r) = two_point_split(mean, br.mu_l, br.mu_r)?;
                vec![
                    SupportPoint { mu: br.mu_l, weight: w_l },
                    SupportPoint { mu: br.mu_r, weight: w_r },
                ]
            }
        } else {
            vec![SupportPoint { mu: mean, weight: 1.0 }]
        };
        let mut threshold_by_mu = Vec::with_capacity(support.len());
        for p in &support {
            match threshold(gamma, p.mu, &cfg.cost, &cfg.bounds)? {
                Threshold::At(t) if t >= cfg.beta - 1e-9 => threshold_by_mu.push((p.mu, t)),
                _ => return Ok(None),
            }
        }
        let scheme = build_scheme(&support, &cfg.prior)?;
        let predicted_cost = server_cost(gamma, &scheme, surv, &cfg.prior);
        Ok(Some(MechanismChoice {
            gamma,
            scheme,
            predicted_cost,
            threshold_by_mu,
        }))
    }

    /// Minimize predicted cost over the reward grid under `surv`; ties go to
    /// the smaller reward.
    pub fn select_with<P: ParticipationFn + ?Sized>(&self, surv: &P) -> Result<MechanismChoice> {
        let rewards = &self.config.reward_grid;
        let candidates = par::map(self.config.exec, rewards, |&g| self.candidate(g, surv));
        let mut best: Option<MechanismChoice> = None;
        for c in candidates {
            if let Some(c) = c? {
                if best.as_ref().map_or(true, |b| c.predicted_cost < b.predicted_cost) {
                    best = Some(c);
                }
            }
        }
        best.ok_or(Error::Infeasible { beta: self.config.beta })
    }

    /// Adaptive-phase choice under the optimistic survival estimate.
    pub fn select_round(&self) -> Result<MechanismChoice> {
        let cfg = &self.config;
        let est = estimated_survival(&self.state.estimator, &cfg.cost, &cfg.bounds);
        self.select_with(&est)
    }

    /// Offer for the next round. `None` means the sweep could not price the
    /// target threshold and no offer is made.
    pub fn offer(&mut self, tau: f64) -> Result<Option<MechanismChoice>> {
        match self.state.phase {
            Phase::Init => match self.init_offer(self.state.init_cursor + 1, tau) {
                Ok(c) => Ok(Some(c)),
                Err(Error::GridExhausted { .. }) => Ok(None),
                Err(e) => Err(e),
            },
            Phase::Adaptive => self.select_round().map(Some),
        }
    }

    /// Feed back the outcome of a round.
    pub fn observe(&mut self, choice: Option<&MechanismChoice>, realized_mu: f64, joined: bool) -> Result<()> {
        let cfg = &self.config;
        match self.state.phase {
            Phase::Init => {
                let idx = self.state.init_cursor;
                self.state.estimator.record_index(idx, joined && choice.is_some());
                self.state.init_cursor += 1;
            }
            Phase::Adaptive => {
                let choice = choice.ok_or_else(|| Error::InvalidDomain("adaptive rounds always carry an offer".into()))?;
                if !choice.scheme.support.iter().any(|p| p.mu == realized_mu) {
                    return Err(Error::InvalidDomain(format!("realized mean {realized_mu} not in the offered support")));
                }
                if let Threshold::At(t) = threshold(choice.gamma, realized_mu, &cfg.cost, &cfg.bounds)? {
                    let idx = cfg.bounds.theta_ceil_index(t);
                    self.state.estimator.record_index(idx, joined);
                }
            }
        }
        let (mu_l, mu_r, w_l) = choice.map_or((realized_mu, realized_mu, 1.0), |c| c.bracket());
        self.state.round += 1;
        self.state.choice_history.push(ChoiceRecord {
            round: self.state.round,
            gamma: choice.map_or(0.0, |c| c.gamma),
            mu_l,
            mu_r,
            w_l,
            predicted_cost: choice.map_or(0.0, |c| c.predicted_cost),
            converged: false,
        });
        if self.state.init_cursor >= self.grid_len() {
            self.state.phase = Phase::Adaptive;
        }
        let converged = self.has_converged();
        if let Some(last) = self.state.choice_history.last_mut() {
            last.converged = converged;
        }
        Ok(())
    }

    /// Whether the reward has been identical over the last
    /// `convergence_window` adaptive rounds. Updates `converged_gamma`.
    pub fn has_converged(&mut self) -> bool {
        let w = self.config.convergence_window;
        let hist = &self.state.choice_history;
        let adaptive = hist.len().saturating_sub(self.grid_len());
        let result = if self.state.phase == Phase::Adaptive && adaptive >= w {
            let tail = &hist[hist.len() - w..];
            let g = tail[0].gamma;
            tail.iter().all(|r| r.gamma.to_bits() == g.to_bits()).then_some(g)
        } else {
            None
        };
        self.state.converged_gamma = result;
        result.is_some()
    }

    /// Round at which the final constant-reward run began, if converged.
    pub fn convergence_round(&self) -> Option<u64> {
        let g = self.state.converged_gamma?;
        let hist = &self.state.choice_history;
        let start = hist
            .iter()
            .rposition(|r| r.gamma.to_bits() != g.to_bits())
            .map_or(0, |i| i + 1)
            .max(self.grid_len());
        hist.get(start).map(|r| r.round)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::TrueParticipation;
    use crate::model::SurvivalModel;
    use approx::assert_abs_diff_eq;

    fn engine() -> Engine {
        let b = ResourceBounds::default();
        let prior = CommPrior::two_point(0.1, 0.9, 0.5).unwrap();
        Engine::new(EngineConfig::new(b, prior, CostModel::synthetic()).unwrap()).unwrap()
    }

    #[test]
    fn init_offer_examples() {
        let e = engine();
        let first = e.init_offer(1, 0.9).unwrap();
        // c(0.1, 0.9) = 0.81 * 0.09 = 0.0729 -> next grid reward 0.08.
        assert_abs_diff_eq!(first.gamma, 0.08, epsilon = 1e-12);
        assert_eq!(first.scheme, SignalScheme::full_revelation(&e.config.prior));

        let last = e.init_offer(81, 0.1).unwrap();
        let needed = CostModel::synthetic().eval(0.9, 0.1);
        assert!(last.gamma >= needed && last.gamma - 0.01 < needed);
        assert!(e.init_offer(0, 0.1).is_err());
        assert!(e.init_offer(1, 0.5).is_err());
    }

    #[test]
    fn sweep_pulls_every_bucket_once() {
        let mut e = engine();
        for t in 0..81 {
            assert_eq!(e.state.phase, Phase::Init);
            let tau = if t % 2 == 0 { 0.1 } else { 0.9 };
            let c = e.offer(tau).unwrap();
            e.observe(c.as_ref(), tau, t % 3 == 0).unwrap();
        }
        assert_eq!(e.state.phase, Phase::Adaptive);
        assert!(e.state.estimator.buckets.iter().all(|b| b.pulls == 1));
        assert_eq!(e.state.choice_history.len(), 81);
    }

    #[test]
    fn grid_exhausted_forces_no_offer() {
        let mut b = ResourceBounds::default();
        b.gamma_hi = 0.05;
        let prior = CommPrior::two_point(0.1, 0.9, 0.5).unwrap();
        let mut e = Engine::new(EngineConfig::new(b, prior, CostModel::synthetic()).unwrap()).unwrap();
        assert!(matches!(e.init_offer(1, 0.1), Err(Error::GridExhausted { .. })));
        let offer = e.offer(0.1).unwrap();
        assert!(offer.is_none());
        e.observe(None, 0.1, true).unwrap();
        assert_eq!((e.state.estimator.buckets[0].pulls, e.state.estimator.buckets[0].joins), (1, 0));
    }

    #[test]
    fn bracket_example() {
        let e = engine();
        let br = bracket_mus(0.04, &e.config.cost, &e.config.bounds, &e.config.prior).unwrap();
        assert_abs_diff_eq!(br.theta_hat, 1.0 - 0.2 / 0.7, epsilon = 1e-8);
        assert_eq!(br.z, 72);
        assert_abs_diff_eq!(br.mu_r, 1.2 - 0.2 / 0.29, epsilon = 1e-8);
        assert_abs_diff_eq!(br.mu_l, 1.2 - 0.2 / 0.28, epsilon = 1e-8);
        assert!(br.mu_l <= 0.5 && 0.5 <= br.mu_r);
        let cfg = &e.config;
        let t_r = threshold(0.04, br.mu_r, &cfg.cost, &cfg.bounds).unwrap().value().unwrap();
        let t_l = threshold(0.04, br.mu_l, &cfg.cost, &cfg.bounds).unwrap().value().unwrap();
        assert_eq!(cfg.bounds.theta_ceil_index(t_r), br.lower_idx);
        assert_eq!(cfg.bounds.theta_ceil_index(t_l), br.upper_idx);
        assert_abs_diff_eq!(t_r, 0.71, epsilon = 1e-8);
        assert_abs_diff_eq!(t_l, 0.72, epsilon = 1e-8);
    }

    #[test]
    fn bracket_degenerate_and_unbracketable() {
        let e = engine();
        let cfg = &e.config;
        // gamma large enough that every client joins: threshold clamps to theta_lo.
        let br = bracket_mus(0.5, &cfg.cost, &cfg.bounds, &cfg.prior).unwrap();
        assert!(br.is_degenerate());
        assert_eq!(br.mu_l, 0.5);
        assert_eq!(br.theta_hat, 0.1);
        assert_abs_diff_eq!((br.z - 1) as f64 * 0.01, 0.1, epsilon = 1e-12);
        assert!(matches!(
            bracket_mus(0.001, &cfg.cost, &cfg.bounds, &cfg.prior),
            Err(Error::Unbracketable { .. })
        ));
    }

    #[test]
    fn flat_estimate_selects_smallest_feasible_reward() {
        let e = engine();
        let flat = |_: f64, _: f64| 1.0;
        let c = e.select_with(&flat).unwrap();
        // c(0.9, 0.5) = 0.0049, so 0.01 is the first reward with a participant.
        assert_abs_diff_eq!(c.gamma, 0.01, epsilon = 1e-12);
        c.scheme.validate(&e.config.prior).unwrap();
    }

    #[test]
    fn every_candidate_scheme_is_valid() {
        let e = engine();
        let s = SurvivalModel::synthetic();
        let truth = TrueParticipation {
            cost: &e.config.cost,
            survival: &s,
            bounds: &e.config.bounds,
        };
        let mut n = 0;
        for &g in &e.config.reward_grid {
            if let Some(c) = e.candidate(g, &truth).unwrap() {
                c.scheme.validate(&e.config.prior).unwrap();
                assert!(c.predicted_cost >= 0.0);
                n += 1;
            }
        }
        assert!(n > 90);
    }

    #[test]
    fn beta_excluding_everything_is_infeasible() {
        let mut e = engine();
        e.config.beta = 0.95;
        let flat = |_: f64, _: f64| 1.0;
        assert!(matches!(e.select_with(&flat), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn observe_counts_rounds() {
        let mut e = engine();
        for _ in 0..81 {
            let c = e.offer(0.9).unwrap();
            e.observe(c.as_ref(), 0.9, true).unwrap();
        }
        let before = e.state.estimator.total_rounds;
        for k in 0..1000 {
            let c = e.offer(0.9).unwrap().unwrap();
            let mu = c.scheme.support[0].mu;
            let t = threshold(c.gamma, mu, &e.config.cost, &e.config.bounds).unwrap().value().unwrap();
            let idx = e.config.bounds.theta_ceil_index(t);
            let (p0, j0) = (e.state.estimator.buckets[idx].pulls, e.state.estimator.buckets[idx].joins);
            let joined = k % 2 == 0;
            e.observe(Some(&c), mu, joined).unwrap();
            let b = &e.state.estimator.buckets[idx];
            assert_eq!((b.pulls, b.joins), (p0 + 1, j0 + joined as u64));
        }
        assert_eq!(e.state.estimator.total_rounds, before + 1000);
        assert_eq!(e.state.choice_history.len() as u64, e.state.round);
    }

    #[test]
    fn convergence_detection() {
        let mut e = engine();
        e.config.convergence_window = 50;
        e.state.phase = Phase::Adaptive;
        let rec = |round, gamma| ChoiceRecord {
            round,
            gamma,
            mu_l: 0.5,
            mu_r: 0.5,
            w_l: 1.0,
            predicted_cost: 0.0,
            converged: false,
        };
        e.state.choice_history = (1..=81).map(|r| rec(r, 0.5)).collect();
        e.state.choice_history.extend((82..=131).map(|r| rec(r, 0.23)));
        assert!(e.has_converged());
        assert_eq!(e.state.converged_gamma, Some(0.23));
        assert_eq!(e.convergence_round(), Some(82));
        e.state.choice_history.extend((132..=181).map(|r| rec(r, if r % 2 == 0 { 0.23 } else { 0.24 })));
        assert!(!e.has_converged());
        assert_eq!(e.state.converged_gamma, None);
    }
}
