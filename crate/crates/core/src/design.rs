//! Optimal mechanism when the survival function is known to the server.
//!
//! For every reward on a fine grid, the cheapest Bayes-plausible two-point
//! scheme over a fine grid of posterior means is the lower convex envelope
//! of `mu -> s(gamma, mu)` evaluated at the prior mean. The search keeps the
//! envelope exact over the grid, so it is equivalent to enumerating every
//! pair `(mu_l, mu_r)` straddling the prior mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{
    build_scheme, server_cost, threshold, thresholds_batch, two_point_split, SignalScheme,
    SupportPoint, Threshold, TrueParticipation,
};
use crate::model::{CommPrior, CostModel, ResourceBounds, SurvivalModel};
use crate::par::{self, Execution};

/// A reward together with the signal scheme offered alongside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismChoice {
    pub gamma: f64,
    pub scheme: SignalScheme,
    pub predicted_cost: f64,
    /// Induced threshold per support point, in support order.
    pub threshold_by_mu: Vec<(f64, f64)>,
}

impl MechanismChoice {
    pub fn min_threshold(&self) -> f64 {
        self.threshold_by_mu.iter().map(|&(_, t)| t).fold(f64::INFINITY, f64::min)
    }

    /// `(mu_l, mu_r, w_l)` of a scheme with at most two support points.
    pub fn bracket(&self) -> (f64, f64, f64) {
        let s = &self.scheme.support;
        match s.len() {
            1 => (s[0].mu, s[0].mu, s[0].weight),
            _ => (s[0].mu, s[s.len() - 1].mu, s[0].weight),
        }
    }
}

/// Tuning of the fine-grid search.
#[derive(Debug, Clone, Copy)]
pub struct OracleSettings {
    pub beta: f64,
    pub fine_step: f64,
    pub exec: Execution,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    gamma_idx: usize,
    spread: f64,
    mu_l: f64,
    mu_r: f64,
}

impl Candidate {
    /// Lower cost, then smaller reward, then narrower split.
    fn better_than(&self, other: &Candidate) -> bool {
        (self.cost, self.gamma_idx, self.spread) < (other.cost, other.gamma_idx, other.spread)
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Lower convex hull of points sorted by x; collinear points are kept so the
/// narrowest straddling segment can be found. Repeated x keeps the lowest y.
fn lower_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &p in points {
        if let Some(last) = hull.last_mut() {
            if last.0 == p.0 {
                if p.1 < last.1 {
                    hull.pop();
                } else {
                    continue;
                }
            }
        }
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) < 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull
}

/// Cheapest envelope point at `mean`: `(value, mu_l, mu_r)`.
fn envelope_at(points: &[(f64, f64)], mean: f64) -> Option<(f64, f64, f64)> {
    let hull = lower_hull(points);
    let k = hull.partition_point(|p| p.0 < mean);
    if k < hull.len() && hull[k].0 == mean {
        return Some((hull[k].1, mean, mean));
    }
    if k == 0 || k == hull.len() {
        return None;
    }
    let (l, r) = (hull[k - 1], hull[k]);
    let (w_l, w_r) = two_point_split(mean, l.0, r.0).ok()?;
    Some((w_l * l.1 + w_r * r.1, l.0, r.0))
}

fn mu_grid(prior: &CommPrior, step: f64) -> Vec<f64> {
    let n = (prior.span() / step + 1e-9).floor() as usize;
    (0..=n).map(|i| (prior.tau_lo + i as f64 * step).min(prior.tau_hi)).collect()
}

/// Brute-force the cost-minimizing reward and two-point scheme subject to
/// every induced threshold being at least `beta`.
pub fn optimal_design_known_s(
    cost: &CostModel,
    survival: &SurvivalModel,
    prior: &CommPrior,
    bounds: &ResourceBounds,
    settings: OracleSettings,
) -> Result<MechanismChoice> {
    if !(settings.fine_step > 0.0) {
        return Err(Error::Config("fine_step must be positive".into()));
    }
    let mean = prior.mean();
    let rewards = bounds.reward_grid_with_step(settings.fine_step);
    let mus = mu_grid(prior, settings.fine_step);
    let beta = settings.beta;

    let per_gamma: Vec<Result<Option<Candidate>>> = par::map_range(settings.exec, rewards.len(), |gi| {
        let gamma = rewards[gi];
        let thresholds = thresholds_batch(gamma, &mus, cost, bounds)?;
        let at_mean = threshold(gamma, mean, cost, bounds)?;
        let mut points = Vec::with_capacity(mus.len() + 1);
        let mut push = |mu: f64, t: Threshold| {
            if let Threshold::At(theta) = t {
                if theta >= beta - 1e-12 {
                    points.push((mu, survival.eval(theta)));
                }
            }
        };
        let split = mus.partition_point(|&m| m < mean);
        for (&mu, &t) in mus[..split].iter().zip(&thresholds[..split]) {
            push(mu, t);
        }
        push(mean, at_mean);
        for (&mu, &t) in mus[split..].iter().zip(&thresholds[split..]) {
            push(mu, t);
        }
        Ok(envelope_at(&points, mean).map(|(value, mu_l, mu_r)| Candidate {
            cost: gamma * value,
            gamma_idx: gi,
            spread: mu_r - mu_l,
            mu_l,
            mu_r,
        }))
    });

    let mut best: Option<Candidate> = None;
    for c in per_gamma {
        if let Some(c) = c? {
            if best.map_or(true, |b| c.better_than(&b)) {
                best = Some(c);
            }
        }
    }
    let best = best.ok_or(Error::Infeasible { beta })?;
    let gamma = rewards[best.gamma_idx];
    choice_from_bracket(gamma, best.mu_l, best.mu_r, cost, survival, prior, bounds)
}

/// Assemble a [`MechanismChoice`] for a two-point (or degenerate) split of
/// the prior mean, priced with the known survival function.
pub fn choice_from_bracket(
    gamma: f64,
    mu_l: f64,
    mu_r: f64,
    cost: &CostModel,
    survival: &SurvivalModel,
    prior: &CommPrior,
    bounds: &ResourceBounds,
) -> Result<MechanismChoice> {
    let mean = prior.mean();
    let support = if mu_l == mu_r {
        vec![SupportPoint { mu: mu_l, weight: 1.0 }]
    } else {
        let (w_l, w_r) = two_point_split(mean, mu_l, mu_r)?;
        vec![
            SupportPoint { mu: mu_l, weight: w_l },
            SupportPoint { mu: mu_r, weight: w_r },
        ]
    };
    let scheme = build_scheme(&support, prior)?;
    let truth = TrueParticipation {
        cost,
        survival,
        bounds,
    };
    let predicted_cost = server_cost(gamma, &scheme, &truth, prior);
    let threshold_by_mu = scheme
        .support
        .iter()
        .map(|p| {
            let t = threshold(gamma, p.mu, cost, bounds)?
                .value()
                .unwrap_or(f64::INFINITY);
            Ok((p.mu, t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MechanismChoice {
        gamma,
        scheme,
        predicted_cost,
        threshold_by_mu,
    })
}
