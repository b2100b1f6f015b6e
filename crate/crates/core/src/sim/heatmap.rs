//! Signaling gain over the (posterior mean, reward) plane.
//!
//! A cell `(mu, gamma)` fixes a two-atom prior on the tau extremes with mean
//! `mu`. The signaling scheme reveals the atom; the baseline pools at `mu`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{threshold, Threshold};
use crate::model::{CostModel, ResourceBounds, SurvivalModel};
use crate::par::{self, Execution};

/// Inclusive evenly spaced range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridRange {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.hi >= self.lo) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::Config(format!("invalid grid range {self:?}")));
        }
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.lo + i as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatCell {
    pub mu: f64,
    pub gamma: f64,
    /// `None` when some positive-weight posterior has no participant.
    pub delta_theta_hat: Option<f64>,
    pub delta_cost: Option<f64>,
    pub baseline_cost: Option<f64>,
}

impl HeatCell {
    /// Cost saving relative to the pooling baseline.
    pub fn relative_improvement(&self) -> Option<f64> {
        match (self.delta_cost, self.baseline_cost) {
            (Some(d), Some(b)) if b > 0.0 => Some(d / b),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    ThetaHat,
    Cost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub mus: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Row-major by `mu`, then `gamma`.
    pub cells: Vec<HeatCell>,
}

impl Heatmap {
    pub fn cell(&self, i: usize, j: usize) -> &HeatCell {
        &self.cells[i * self.gammas.len() + j]
    }

    /// Grid position of the largest non-missing value; ties go to the first
    /// cell in row-major order.
    pub fn argmax(&self, surface: Surface) -> Option<(usize, usize)> {
        let mut best: Option<(usize, f64)> = None;
        for (k, c) in self.cells.iter().enumerate() {
            let v = match surface {
                Surface::ThetaHat => c.delta_theta_hat,
                Surface::Cost => c.delta_cost,
            };
            if let Some(v) = v {
                if best.map_or(true, |(_, b)| v > b) {
                    best = Some((k, v));
                }
            }
        }
        best.map(|(k, _)| (k / self.gammas.len(), k % self.gammas.len()))
    }

    pub fn is_interior(&self, (i, j): (usize, usize)) -> bool {
        i > 0 && j > 0 && i + 1 < self.mus.len() && j + 1 < self.gammas.len()
    }
}

fn theta_of(t: Threshold) -> Option<f64> {
    t.value()
}

fn evaluate(mu: f64, gamma: f64, cost: &CostModel, survival: &SurvivalModel, bounds: &ResourceBounds) -> Result<HeatCell> {
    let missing = HeatCell {
        mu,
        gamma,
        delta_theta_hat: None,
        delta_cost: None,
        baseline_cost: None,
    };
    let Some(pooled) = theta_of(threshold(gamma, mu, cost, bounds)?) else {
        return Ok(missing);
    };
    let w_lo = ((bounds.tau_hi - mu) / (bounds.tau_hi - bounds.tau_lo)).clamp(0.0, 1.0);
    let mut mean_theta = 0.0;
    let mut mean_s = 0.0;
    for (tau, w) in [(bounds.tau_lo, w_lo), (bounds.tau_hi, 1.0 - w_lo)] {
        if w <= 0.0 {
            continue;
        }
        let Some(t) = theta_of(threshold(gamma, tau, cost, bounds)?) else {
            return Ok(missing);
        };
        mean_theta += w * t;
        mean_s += w * survival.eval(t);
    }
    let baseline = gamma * survival.eval(pooled);
    Ok(HeatCell {
        mu,
        gamma,
        delta_theta_hat: Some(mean_theta - pooled),
        delta_cost: Some(baseline - gamma * mean_s),
        baseline_cost: Some(baseline),
    })
}

pub fn heatmap_sweep(
    mu_range: GridRange,
    gamma_range: GridRange,
    cost: &CostModel,
    survival: &SurvivalModel,
    bounds: &ResourceBounds,
    exec: Execution,
) -> Result<Heatmap> {
    let mus = mu_range.values()?;
    let gammas = gamma_range.values()?;
    let eps = 1e-12;
    if mus.iter().any(|&m| m < bounds.tau_lo - eps || m > bounds.tau_hi + eps) {
        return Err(Error::Config("heatmap mu range leaves the tau box".into()));
    }
    if gammas.iter().any(|&g| g < bounds.gamma_lo - eps || g > bounds.gamma_hi + eps) {
        return Err(Error::Config("heatmap gamma range leaves the reward box".into()));
    }
    let ng = gammas.len();
    let cells = par::map_range(exec, mus.len() * ng, |k| {
        evaluate(mus[k / ng], gammas[k % ng], cost, survival, bounds)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Heatmap { mus, gammas, cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep(mu: GridRange, gamma: GridRange) -> Heatmap {
        heatmap_sweep(
            mu,
            gamma,
            &CostModel::synthetic(),
            &SurvivalModel::synthetic(),
            &ResourceBounds::default(),
            Execution::Sequential,
        )
        .unwrap()
    }

    fn single(v: f64) -> GridRange {
        GridRange { lo: v, hi: v, step: 0.01 }
    }

    #[test]
    fn grid_values() {
        let g = GridRange { lo: 0.1, hi: 0.9, step: 0.01 }.values().unwrap();
        assert_eq!(g.len(), 81);
        assert!((g[80] - 0.9).abs() < 1e-12);
        assert!(GridRange { lo: 0.5, hi: 0.1, step: 0.1 }.values().is_err());
        assert!(GridRange { lo: 0.1, hi: 0.5, step: 0.0 }.values().is_err());
    }

    #[test]
    fn extreme_mean_has_no_gain() {
        let h = sweep(single(0.9), single(0.3));
        let c = h.cells[0];
        assert_eq!(c.delta_theta_hat, Some(0.0));
        assert_eq!(c.delta_cost, Some(0.0));
    }

    #[test]
    fn hand_computed_cell() {
        let h = sweep(single(0.5), single(0.3));
        let c = h.cells[0];
        let cost = CostModel::synthetic();
        let s = SurvivalModel::synthetic();
        let root = |mu: f64| (1.0 - (0.3 / (1.2 - mu) / (1.2 - mu)).sqrt()).max(0.1);
        let pooled = root(0.5);
        let (lo, hi) = (root(0.1), root(0.9));
        assert!((cost.eval(pooled, 0.5) - 0.3).abs() < 1e-9);
        assert!((c.delta_theta_hat.unwrap() - (0.5 * lo + 0.5 * hi - pooled)).abs() < 1e-9);
        let expected = 0.3 * (s.eval(pooled) - 0.5 * s.eval(lo) - 0.5 * s.eval(hi));
        assert!((c.delta_cost.unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn missing_cells_stay_missing() {
        let h = sweep(GridRange { lo: 0.1, hi: 0.9, step: 0.1 }, GridRange { lo: 0.0, hi: 0.05, step: 0.01 });
        assert!(h.cells.iter().any(|c| c.delta_cost.is_none()));
        for c in &h.cells {
            assert_eq!(c.delta_cost.is_none(), c.delta_theta_hat.is_none());
        }
        // gamma = 0 never attracts anyone.
        assert!(h.cells.iter().filter(|c| c.gamma == 0.0).all(|c| c.delta_cost.is_none()));
    }

    #[test]
    fn rejects_out_of_box_grids() {
        let r = heatmap_sweep(
            GridRange { lo: 0.0, hi: 0.5, step: 0.1 },
            single(0.3),
            &CostModel::synthetic(),
            &SurvivalModel::synthetic(),
            &ResourceBounds::default(),
            Execution::Sequential,
        );
        assert!(r.is_err());
    }

    #[test]
    fn argmax_and_interior() {
        let h = Heatmap {
            mus: vec![0.1, 0.2, 0.3],
            gammas: vec![0.1, 0.2, 0.3],
            cells: (0..9)
                .map(|k| HeatCell {
                    mu: 0.0,
                    gamma: 0.0,
                    delta_theta_hat: (k != 0).then_some(if k == 4 { 2.0 } else { 1.0 }),
                    delta_cost: Some(if k == 8 { 5.0 } else { 0.0 }),
                    baseline_cost: Some(1.0),
                })
                .collect(),
        };
        assert_eq!(h.argmax(Surface::ThetaHat), Some((1, 1)));
        assert!(h.is_interior((1, 1)));
        assert_eq!(h.argmax(Surface::Cost), Some((2, 2)));
        assert!(!h.is_interior((2, 2)));
    }
}
