//! Resource domains, the public prior over communication resources, and the
//! client cost / population survival models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for "is an integer multiple of the grid step" checks.
const GRID_EPS: f64 = 1e-12;
/// Tolerance (in grid-index units) when snapping a threshold to the grid.
const SNAP_EPS: f64 = 1e-6;

/// Domain boxes for communication (tau), computation (theta) and reward
/// (gamma), plus the common grid step `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResourceBounds {
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub xi: f64,
}

impl Default for ResourceBounds {
    fn default() -> Self {
        ResourceBounds::synthetic(0.01)
    }
}

impl ResourceBounds {
    /// The synthetic experiment box: tau, theta in [0.1, 0.9], rewards in [0, 1].
    pub fn synthetic(xi: f64) -> Self {
        ResourceBounds {
            tau_lo: 0.1,
            tau_hi: 0.9,
            theta_lo: 0.1,
            theta_hi: 0.9,
            gamma_lo: 0.0,
            gamma_hi: 1.0,
            xi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.tau_lo,
            self.tau_hi,
            self.theta_lo,
            self.theta_hi,
            self.gamma_lo,
            self.gamma_hi,
            self.xi,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("bounds must be finite".into()));
        }
        if !(self.tau_lo < self.tau_hi) {
            return Err(Error::Config("tau_lo must be below tau_hi".into()));
        }
        if !(self.theta_lo < self.theta_hi) {
            return Err(Error::Config("theta_lo must be below theta_hi".into()));
        }
        if !(self.gamma_lo <= self.gamma_hi) || self.gamma_lo < 0.0 {
            return Err(Error::Config("reward range must satisfy 0 <= gamma_lo <= gamma_hi".into()));
        }
        if !(self.xi > 0.0) {
            return Err(Error::Config("xi must be positive".into()));
        }
        for (name, span) in [
            ("theta", self.theta_hi - self.theta_lo),
            ("gamma", self.gamma_hi - self.gamma_lo),
        ] {
            let steps = (span / self.xi).round();
            if (span - steps * self.xi).abs() > GRID_EPS {
                return Err(Error::Config(format!(
                    "{name} range {span} is not an integer multiple of xi = {}",
                    self.xi
                )));
            }
        }
        Ok(())
    }

    fn steps(span: f64, xi: f64) -> usize {
        (span / xi).round() as usize
    }

    /// Theta grid `{theta_lo, theta_lo + xi, ..., theta_hi}`.
    pub fn theta_grid(&self) -> Vec<f64> {
        let n = Self::steps(self.theta_hi - self.theta_lo, self.xi);
        (0..=n).map(|i| self.theta_lo + i as f64 * self.xi).collect()
    }

    /// Reward grid `{gamma_lo, gamma_lo + xi, ..., gamma_hi}`.
    pub fn reward_grid(&self) -> Vec<f64> {
        self.reward_grid_with_step(self.xi)
    }

    /// Reward grid over the same range with a custom (finer) step. The last
    /// point is `gamma_hi` when the range is a multiple of `step`.
    pub fn reward_grid_with_step(&self, step: f64) -> Vec<f64> {
        let n = ((self.gamma_hi - self.gamma_lo) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.gamma_lo + i as f64 * step).collect()
    }

    pub fn theta_buckets(&self) -> usize {
        Self::steps(self.theta_hi - self.theta_lo, self.xi) + 1
    }

    /// Index of the smallest grid point `>= theta` (ceiling to the grid).
    pub fn theta_ceil_index(&self, theta: f64) -> usize {
        let pos = (theta - self.theta_lo) / self.xi - SNAP_EPS;
        let last = self.theta_buckets() - 1;
        (pos.ceil().max(0.0) as usize).min(last)
    }

    /// Index of `theta` if it lies on the grid.
    pub fn theta_exact_index(&self, theta: f64) -> Option<usize> {
        let pos = ((theta - self.theta_lo) / self.xi).round();
        if pos < 0.0 || pos as usize >= self.theta_buckets() {
            return None;
        }
        let idx = pos as usize;
        let grid = self.theta_lo + idx as f64 * self.xi;
        ((theta - grid).abs() <= 1e-9).then_some(idx)
    }

    pub fn theta_at(&self, idx: usize) -> f64 {
        self.theta_lo + idx as f64 * self.xi
    }

    pub fn contains_tau(&self, mu: f64) -> bool {
        mu >= self.tau_lo && mu <= self.tau_hi
    }
}

/// Two-atom prior over the communication resource, with atoms at the
/// extremes `tau_lo` and `tau_hi`.
///
/// General discrete priors are reduced to the unique two-atom prior on the
/// extremes with the same mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommPrior {
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub mass_lo: f64,
    pub mass_hi: f64,
}

impl CommPrior {
    pub fn two_point(tau_lo: f64, tau_hi: f64, mass_lo: f64) -> Result<Self> {
        if !(tau_lo < tau_hi) {
            return Err(Error::Config("prior atoms must satisfy tau_lo < tau_hi".into()));
        }
        if !(0.0..=1.0).contains(&mass_lo) {
            return Err(Error::Config(format!("prior mass {mass_lo} outside [0, 1]")));
        }
        Ok(CommPrior {
            tau_lo,
            tau_hi,
            mass_lo,
            mass_hi: 1.0 - mass_lo,
        })
    }

    /// The two-atom prior on `{tau_lo, tau_hi}` whose mean is `mean`.
    pub fn with_mean(tau_lo: f64, tau_hi: f64, mean: f64) -> Result<Self> {
        if !(tau_lo <= mean && mean <= tau_hi) {
            return Err(Error::InvalidDomain(format!(
                "prior mean {mean} outside [{tau_lo}, {tau_hi}]"
            )));
        }
        CommPrior::two_point(tau_lo, tau_hi, (tau_hi - mean) / (tau_hi - tau_lo))
    }

    /// Reduce an arbitrary discrete prior to its canonical two-atom form.
    pub fn from_atoms(atoms: &[(f64, f64)], tau_lo: f64, tau_hi: f64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Config("prior needs at least one atom".into()));
        }
        let total: f64 = atoms.iter().map(|&(_, m)| m).sum();
        if (total - 1.0).abs() > 1e-12 || atoms.iter().any(|&(_, m)| !(0.0..=1.0).contains(&m)) {
            return Err(Error::Config(format!("prior masses must lie in [0,1] and sum to 1 (got {total})")));
        }
        if atoms.iter().any(|&(v, _)| v < tau_lo || v > tau_hi) {
            return Err(Error::Config("prior atom outside [tau_lo, tau_hi]".into()));
        }
        let mean = atoms.iter().map(|&(v, m)| v * m).sum::<f64>();
        CommPrior::with_mean(tau_lo, tau_hi, mean.clamp(tau_lo, tau_hi))
    }

    pub fn mean(&self) -> f64 {
        self.mass_lo * self.tau_lo + self.mass_hi * self.tau_hi
    }

    pub fn atoms(&self) -> [(f64, f64); 2] {
        [(self.tau_lo, self.mass_lo), (self.tau_hi, self.mass_hi)]
    }

    pub fn span(&self) -> f64 {
        self.tau_hi - self.tau_lo
    }

    /// Which atom `tau` is (0 = low, 1 = high).
    pub fn atom_index(&self, tau: f64) -> Option<usize> {
        if (tau - self.tau_lo).abs() <= 1e-12 {
            Some(0)
        } else if (tau - self.tau_hi).abs() <= 1e-12 {
            Some(1)
        } else {
            None
        }
    }
}

/// Prior descriptor as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Continuous uniform prior on `[lo, hi]`, reduced to its mean-equivalent two-atom form.
    Uniform { lo: f64, hi: f64 },
    TwoPoint { mass_lo: f64 },
    Discrete { atoms: Vec<(f64, f64)> },
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::Uniform { lo: 0.1, hi: 0.9 }
    }
}

impl PriorSpec {
    pub fn build(&self, bounds: &ResourceBounds) -> Result<CommPrior> {
        match *self {
            PriorSpec::Uniform { lo, hi } => {
                if !(lo <= hi) || lo < bounds.tau_lo || hi > bounds.tau_hi {
                    return Err(Error::Config(format!(
                        "uniform prior [{lo}, {hi}] must lie inside [{}, {}]",
                        bounds.tau_lo, bounds.tau_hi
                    )));
                }
                CommPrior::with_mean(bounds.tau_lo, bounds.tau_hi, 0.5 * (lo + hi))
            }
            PriorSpec::TwoPoint { mass_lo } => {
                CommPrior::two_point(bounds.tau_lo, bounds.tau_hi, mass_lo)
            }
            PriorSpec::Discrete { ref atoms } => {
                CommPrior::from_atoms(atoms, bounds.tau_lo, bounds.tau_hi)
            }
        }
    }
}

/// Client cost `c(theta, mu)` of training with computation resource `theta`
/// under (believed) communication resource `mu`.
#[derive(Debug, Clone, PartialEq)]
pub enum CostModel {
    /// `(theta_ref - theta)^2 * (mu_ref - mu)^2`.
    Quadratic { theta_ref: f64, mu_ref: f64 },
    /// Bilinear interpolation over a rectangular table, clamped at the edges.
    Table {
        thetas: Vec<f64>,
        mus: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl CostModel {
    /// The synthetic experiment cost `(1 - theta)^2 (1.2 - mu)^2`.
    pub fn synthetic() -> Self {
        CostModel::Quadratic {
            theta_ref: 1.0,
            mu_ref: 1.2,
        }
    }

    #[inline]
    pub fn eval(&self, theta: f64, mu: f64) -> f64 {
        match self {
            CostModel::Quadratic { theta_ref, mu_ref } => {
                let a = theta_ref - theta;
                let b = mu_ref - mu;
                a * a * (b * b)
            }
            CostModel::Table { thetas, mus, values } => {
                let (i, ti) = locate(thetas, theta);
                let (j, tj) = locate(mus, mu);
                let v00 = values[i][j];
                let v01 = values[i][(j + 1).min(mus.len() - 1)];
                let v10 = values[(i + 1).min(thetas.len() - 1)][j];
                let v11 = values[(i + 1).min(thetas.len() - 1)][(j + 1).min(mus.len() - 1)];
                let lo = v00 + (v01 - v00) * tj;
                let hi = v10 + (v11 - v10) * tj;
                lo + (hi - lo) * ti
            }
        }
    }

    /// Closed-form inverse in theta for the quadratic form, unclamped.
    pub fn closed_form_root(&self, gamma: f64, mu: f64) -> Option<f64> {
        match *self {
            CostModel::Quadratic { theta_ref, mu_ref } => {
                Some(theta_ref - gamma.sqrt() / (mu_ref - mu))
            }
            CostModel::Table { .. } => None,
        }
    }
}

/// Cell index and fractional offset of `x` in a sorted knot vector.
fn locate(knots: &[f64], x: f64) -> (usize, f64) {
    let n = knots.len();
    if n == 1 || x <= knots[0] {
        return (0, 0.0);
    }
    if x >= knots[n - 1] {
        return (n - 1, 0.0);
    }
    let i = knots.partition_point(|&k| k <= x) - 1;
    (i, (x - knots[i]) / (knots[i + 1] - knots[i]))
}

fn check_knots(name: &str, knots: &[f64]) -> Result<()> {
    if knots.is_empty() || knots.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config(format!("{name} knots must be non-empty and strictly increasing")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    QuadraticSynthetic {
        #[serde(default = "one")]
        theta_ref: f64,
        #[serde(default = "mu_ref_default")]
        mu_ref: f64,
    },
    Table {
        thetas: Vec<f64>,
        mus: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

fn one() -> f64 {
    1.0
}

fn mu_ref_default() -> f64 {
    1.2
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec::QuadraticSynthetic {
            theta_ref: 1.0,
            mu_ref: 1.2,
        }
    }
}

impl CostSpec {
    pub fn build(&self, bounds: &ResourceBounds) -> Result<CostModel> {
        match self {
            CostSpec::QuadraticSynthetic { theta_ref, mu_ref } => {
                if *theta_ref < bounds.theta_hi || *mu_ref < bounds.tau_hi {
                    return Err(Error::Config(
                        "quadratic cost references must dominate the domain box".into(),
                    ));
                }
                Ok(CostModel::Quadratic {
                    theta_ref: *theta_ref,
                    mu_ref: *mu_ref,
                })
            }
            CostSpec::Table { thetas, mus, values } => {
                check_knots("theta", thetas)?;
                check_knots("mu", mus)?;
                if values.len() != thetas.len() || values.iter().any(|r| r.len() != mus.len()) {
                    return Err(Error::Config("cost table shape must be |thetas| x |mus|".into()));
                }
                Ok(CostModel::Table {
                    thetas: thetas.clone(),
                    mus: mus.clone(),
                    values: values.clone(),
                })
            }
        }
    }
}

/// Population survival function `s(theta) = P(client theta >= theta)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SurvivalModel {
    /// `1 - ((theta - lo) / (hi - lo))^exponent`, clamped to `[0, 1]`.
    Power { exponent: f64, lo: f64, hi: f64 },
    Constant { value: f64 },
    /// Piecewise-linear through `(thetas[i], probs[i])`, flat outside.
    Table { thetas: Vec<f64>, probs: Vec<f64> },
}

impl SurvivalModel {
    /// The synthetic experiment survival `1 - ((theta - 0.1) / 0.8)^8`.
    pub fn synthetic() -> Self {
        SurvivalModel::Power {
            exponent: 8.0,
            lo: 0.1,
            hi: 0.9,
        }
    }

    #[inline]
    pub fn eval(&self, theta: f64) -> f64 {
        match self {
            SurvivalModel::Power { exponent, lo, hi } => {
                let x = ((theta - lo) / (hi - lo)).clamp(0.0, 1.0);
                let p = if *exponent == 8.0 {
                    let x2 = x * x;
                    let x4 = x2 * x2;
                    x4 * x4
                } else {
                    x.powf(*exponent)
                };
                1.0 - p
            }
            SurvivalModel::Constant { value } => *value,
            SurvivalModel::Table { thetas, probs } => {
                let (i, t) = locate(thetas, theta);
                let j = (i + 1).min(probs.len() - 1);
                probs[i] + (probs[j] - probs[i]) * t
            }
        }
    }

    /// Draw a computation resource from the population via its inverse CDF,
    /// given `u` uniform on `[0, 1)`. Returns `inf{theta : s(theta) <= 1 - u}`
    /// within `[theta_lo, theta_hi]`.
    pub fn quantile(&self, u: f64, theta_lo: f64, theta_hi: f64) -> f64 {
        match *self {
            SurvivalModel::Power { exponent, lo, hi } if lo == theta_lo && hi == theta_hi => {
                lo + (hi - lo) * u.powf(1.0 / exponent)
            }
            _ => {
                let target = 1.0 - u;
                if self.eval(theta_lo) <= target {
                    return theta_lo;
                }
                if self.eval(theta_hi) > target {
                    return theta_hi;
                }
                let (mut lo, mut hi) = (theta_lo, theta_hi);
                for _ in 0..200 {
                    if hi - lo <= 1e-12 {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    if self.eval(mid) <= target {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurvivalSpec {
    PowerSynthetic {
        #[serde(default = "eight")]
        exponent: f64,
    },
    Constant {
        value: f64,
    },
    Table {
        thetas: Vec<f64>,
        probs: Vec<f64>,
    },
}

fn eight() -> f64 {
    8.0
}

impl Default for SurvivalSpec {
    fn default() -> Self {
        SurvivalSpec::PowerSynthetic { exponent: 8.0 }
    }
}

impl SurvivalSpec {
    pub fn build(&self, bounds: &ResourceBounds) -> Result<SurvivalModel> {
        match self {
            SurvivalSpec::PowerSynthetic { exponent } => {
                if !(*exponent >= 1.0) {
                    return Err(Error::Config("survival exponent must be >= 1".into()));
                }
                Ok(SurvivalModel::Power {
                    exponent: *exponent,
                    lo: bounds.theta_lo,
                    hi: bounds.theta_hi,
                })
            }
            SurvivalSpec::Constant { value } => {
                if !(0.0..=1.0).contains(value) {
                    return Err(Error::Config("constant survival must lie in [0, 1]".into()));
                }
                Ok(SurvivalModel::Constant { value: *value })
            }
            SurvivalSpec::Table { thetas, probs } => {
                check_knots("theta", thetas)?;
                if probs.len() != thetas.len() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::Config("survival table needs one probability in [0,1] per knot".into()));
                }
                Ok(SurvivalModel::Table {
                    thetas: thetas.clone(),
                    probs: probs.clone(),
                })
            }
        }
    }
}

/// JSON model descriptor: `{"cost": {...}, "survival": {...}}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    #[serde(default)]
    pub cost: CostSpec,
    #[serde(default)]
    pub survival: SurvivalSpec,
}

impl ModelDescriptor {
    pub fn build(&self, bounds: &ResourceBounds) -> Result<(CostModel, SurvivalModel)> {
        Ok((self.cost.build(bounds)?, self.survival.build(bounds)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_bounds_are_valid() {
        let b = ResourceBounds::default();
        b.validate().unwrap();
        assert_eq!(b.theta_grid().len(), 81);
        assert_eq!(b.reward_grid().len(), 101);
        assert_eq!(b.theta_ceil_index(0.714286), 62);
        assert_eq!(b.theta_ceil_index(0.72 + 1e-11), 62);
        assert_eq!(b.theta_ceil_index(0.9), 80);
        assert_eq!(b.theta_exact_index(0.85), Some(75));
        assert_eq!(b.theta_exact_index(0.855), None);
    }

    #[test]
    fn off_grid_range_is_rejected() {
        let mut b = ResourceBounds::default();
        b.xi = 0.03;
        assert!(matches!(b.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn prior_reduction_preserves_mean() {
        let p = CommPrior::from_atoms(&[(0.3, 0.5), (0.5, 0.25), (0.9, 0.25)], 0.1, 0.9).unwrap();
        assert!((p.mean() - 0.5).abs() < 1e-12);
        assert!((p.mass_lo + p.mass_hi - 1.0).abs() < 1e-12);
        let u = PriorSpec::default().build(&ResourceBounds::default()).unwrap();
        assert!((u.mass_lo - 0.5).abs() < 1e-12);
    }

    #[test]
    fn table_cost_interpolates() {
        let spec = CostSpec::Table {
            thetas: vec![0.1, 0.9],
            mus: vec![0.1, 0.9],
            values: vec![vec![1.0, 0.5], vec![0.2, 0.0]],
        };
        let c = spec.build(&ResourceBounds::default()).unwrap();
        assert!((c.eval(0.5, 0.5) - 0.425).abs() < 1e-12);
        assert_eq!(c.eval(0.1, 0.1), 1.0);
        assert_eq!(c.eval(2.0, 2.0), 0.0);
    }

    #[test]
    fn power_quantile_inverts_survival() {
        let s = SurvivalModel::synthetic();
        for &u in &[0.0, 0.1, 0.5, 0.9, 0.999] {
            let theta = s.quantile(u, 0.1, 0.9);
            assert!((s.eval(theta) - (1.0 - u)).abs() < 1e-12);
        }
        let table = SurvivalModel::Table {
            thetas: vec![0.1, 0.9],
            probs: vec![1.0, 0.0],
        };
        let t = table.quantile(0.25, 0.1, 0.9);
        assert!((t - 0.3).abs() < 1e-9);
        assert_eq!(SurvivalModel::Constant { value: 1.0 }.quantile(0.5, 0.1, 0.9), 0.9);
    }

    #[test]
    fn descriptor_parses() {
        let d: ModelDescriptor = serde_json::from_str(
            r#"{"cost": {"form": "quadratic_synthetic"}, "survival": {"form": "power_synthetic", "exponent": 8}}"#,
        )
        .unwrap();
        let (c, s) = d.build(&ResourceBounds::default()).unwrap();
        assert_eq!(c, CostModel::synthetic());
        assert_eq!(s, SurvivalModel::synthetic());
        assert!(serde_json::from_str::<ModelDescriptor>(r#"{"cost": {"form": "cubic"}}"#).is_err());
    }
}
