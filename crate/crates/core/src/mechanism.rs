//! Closed-form mechanism mathematics: participation thresholds, signal
//! schemes over posterior means, and the server's expected cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CommPrior, CostModel, ResourceBounds, SurvivalModel};

/// Absolute tolerance on theta for threshold bisection.
pub const THRESHOLD_TOL: f64 = 1e-10;
const MAX_BISECTIONS: usize = 200;
/// Tolerance for probability identities.
pub const PROB_TOL: f64 = 1e-9;
/// Tolerance for identities that only involve rational arithmetic.
pub const EXACT_TOL: f64 = 1e-12;

/// Minimal computation resource at which a client joins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    At(f64),
    /// Even the best-equipped client finds the reward too small.
    NoParticipant,
}

impl Threshold {
    pub fn value(self) -> Option<f64> {
        match self {
            Threshold::At(t) => Some(t),
            Threshold::NoParticipant => None,
        }
    }
}

fn check_domain(gamma: f64, mu: f64, bounds: &ResourceBounds) -> Result<()> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::InvalidDomain(format!("reward {gamma} must be finite and >= 0")));
    }
    if !bounds.contains_tau(mu) {
        return Err(Error::InvalidDomain(format!(
            "posterior mean {mu} outside [{}, {}]",
            bounds.tau_lo, bounds.tau_hi
        )));
    }
    Ok(())
}

/// Number of halvings that take the theta box below `THRESHOLD_TOL`.
fn bisection_steps(bounds: &ResourceBounds) -> usize {
    let width = bounds.theta_hi - bounds.theta_lo;
    ((width / THRESHOLD_TOL).log2().ceil().max(0.0) as usize).min(MAX_BISECTIONS)
}

/// Least theta in the box with `c(theta, mu) <= gamma`.
///
/// Roots below `theta_lo` clamp to `theta_lo`; if even `theta_hi` is too
/// expensive the result is [`Threshold::NoParticipant`]. Relies on `c` being
/// non-increasing in theta.
pub fn threshold(gamma: f64, mu: f64, cost: &CostModel, bounds: &ResourceBounds) -> Result<Threshold> {
    check_domain(gamma, mu, bounds)?;
    if cost.eval(bounds.theta_hi, mu) > gamma {
        return Ok(Threshold::NoParticipant);
    }
    if cost.eval(bounds.theta_lo, mu) <= gamma {
        return Ok(Threshold::At(bounds.theta_lo));
    }
    let (mut lo, mut hi) = (bounds.theta_lo, bounds.theta_hi);
    for _ in 0..bisection_steps(bounds) {
        let mid = 0.5 * (lo + hi);
        if cost.eval(mid, mu) <= gamma {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Threshold::At(hi))
}

/// [`threshold`] for many posterior means at one reward. The quadratic cost
/// is inverted in closed form (agreeing with the bisection to within its
/// tolerance); other costs are bisected with the loops interchanged.
/// Participation and clamping are decided exactly as in [`threshold`].
pub fn thresholds_batch(
    gamma: f64,
    mus: &[f64],
    cost: &CostModel,
    bounds: &ResourceBounds,
) -> Result<Vec<Threshold>> {
    for &mu in mus {
        check_domain(gamma, mu, bounds)?;
    }
    let mut roots = match cost.closed_form_root(gamma, 0.0) {
        Some(_) => mus
            .iter()
            .map(|&m| cost.closed_form_root(gamma, m).expect("quadratic"))
            .collect(),
        None => bisect_batch(gamma, mus, cost, bounds),
    };
    for (r, &m) in roots.iter_mut().zip(mus) {
        *r = r.clamp(bounds.theta_lo, bounds.theta_hi);
        if cost.eval(bounds.theta_lo, m) <= gamma {
            *r = bounds.theta_lo;
        }
    }
    Ok(mus
        .iter()
        .zip(roots)
        .map(|(&m, r)| {
            if cost.eval(bounds.theta_hi, m) > gamma {
                Threshold::NoParticipant
            } else {
                Threshold::At(r)
            }
        })
        .collect())
}

fn bisect_batch(gamma: f64, mus: &[f64], cost: &CostModel, bounds: &ResourceBounds) -> Vec<f64> {
    let n = mus.len();
    let mut lo = vec![bounds.theta_lo; n];
    let mut hi = vec![bounds.theta_hi; n];
    for _ in 0..bisection_steps(bounds) {
        for ((l, h), &m) in lo.iter_mut().zip(hi.iter_mut()).zip(mus) {
            let mid = 0.5 * (*l + *h);
            if cost.eval(mid, m) <= gamma {
                *h = mid;
            } else {
                *l = mid;
            }
        }
    }
    hi
}

/// Probability that an arriving client joins: `s(threshold(gamma, mu))`,
/// zero when nobody would join.
pub fn participation_prob(
    gamma: f64,
    mu: f64,
    cost: &CostModel,
    survival: &SurvivalModel,
    bounds: &ResourceBounds,
) -> Result<f64> {
    Ok(match threshold(gamma, mu, cost, bounds)? {
        Threshold::At(t) => survival.eval(t),
        Threshold::NoParticipant => 0.0,
    })
}

/// Participation probability as a function of `(gamma, mu)`.
pub trait ParticipationFn: Sync {
    fn prob(&self, gamma: f64, mu: f64) -> f64;
}

impl<F: Fn(f64, f64) -> f64 + Sync> ParticipationFn for F {
    fn prob(&self, gamma: f64, mu: f64) -> f64 {
        self(gamma, mu)
    }
}

/// Participation under a known survival function.
#[derive(Debug, Clone, Copy)]
pub struct TrueParticipation<'a> {
    pub cost: &'a CostModel,
    pub survival: &'a SurvivalModel,
    pub bounds: &'a ResourceBounds,
}

impl ParticipationFn for TrueParticipation<'_> {
    fn prob(&self, gamma: f64, mu: f64) -> f64 {
        participation_prob(gamma, mu, self.cost, self.survival, self.bounds).unwrap_or(0.0)
    }
}

/// Split a target mean between two posterior means. Returns `(w_l, w_r)`
/// with `w_l * mu_l + w_r * mu_r = target_mean`.
pub fn two_point_split(target_mean: f64, mu_l: f64, mu_r: f64) -> Result<(f64, f64)> {
    if mu_l == mu_r {
        if mu_l == target_mean {
            return Ok((1.0, 0.0));
        }
        return Err(Error::DegenerateSplit {
            mu: mu_l,
            target: target_mean,
        });
    }
    if !(mu_l < mu_r && mu_l <= target_mean && target_mean <= mu_r) {
        return Err(Error::InvalidDomain(format!(
            "need mu_l <= target <= mu_r, got {mu_l} / {target_mean} / {mu_r}"
        )));
    }
    let w_l = (mu_r - target_mean) / (mu_r - mu_l);
    Ok((w_l, 1.0 - w_l))
}

/// Conditional probabilities `(rho(mu | tau_lo), rho(mu | tau_hi))` of the
/// signal inducing posterior mean `mu`, which carries total weight `weight`.
pub fn conditional_signals(mu: f64, weight: f64, prior: &CommPrior) -> Result<(f64, f64)> {
    if !(prior.tau_lo <= mu && mu <= prior.tau_hi) {
        return Err(Error::InvalidDomain(format!("posterior mean {mu} outside the prior support")));
    }
    for (tau, mass) in prior.atoms() {
        if mass <= 0.0 {
            return Err(Error::ZeroMassAtom { tau });
        }
    }
    let span = prior.span();
    let rho_lo = weight * (prior.tau_hi - mu) / (prior.mass_lo * span);
    let rho_hi = weight * (mu - prior.tau_lo) / (prior.mass_hi * span);
    Ok((rho_lo, rho_hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub mu: f64,
    pub weight: f64,
}

/// Finite-support distribution over posterior means together with the
/// per-state signal probabilities that generate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalScheme {
    pub support: Vec<SupportPoint>,
    /// `conditionals[a][k]` is `rho(support[k].mu | atom a)`, atoms ordered low, high.
    pub conditionals: [Vec<f64>; 2],
}

/// Residuals of every scheme identity; all zero for an exact scheme.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SchemeResiduals {
    pub weight_sum: f64,
    pub row_sum: f64,
    pub reconstruction: f64,
    pub bayes_consistency: f64,
    pub bayes_plausibility: f64,
    pub range: f64,
}

impl SchemeResiduals {
    pub fn passes(&self) -> bool {
        self.weight_sum <= PROB_TOL
            && self.row_sum <= PROB_TOL
            && self.reconstruction <= EXACT_TOL
            && self.bayes_consistency <= PROB_TOL
            && self.bayes_plausibility <= PROB_TOL
            && self.range == 0.0
    }
}

impl SignalScheme {
    /// The uninformative scheme: every state sends the same signal.
    pub fn full_pooling(prior: &CommPrior) -> Self {
        SignalScheme {
            support: vec![SupportPoint {
                mu: prior.mean(),
                weight: 1.0,
            }],
            conditionals: [vec![1.0], vec![1.0]],
        }
    }

    /// Perfect disclosure of the realized state.
    pub fn full_revelation(prior: &CommPrior) -> Self {
        SignalScheme {
            support: vec![
                SupportPoint {
                    mu: prior.tau_lo,
                    weight: prior.mass_lo,
                },
                SupportPoint {
                    mu: prior.tau_hi,
                    weight: prior.mass_hi,
                },
            ],
            conditionals: [vec![1.0, 0.0], vec![0.0, 1.0]],
        }
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().map(|p| p.weight * p.mu).sum()
    }

    pub fn residuals(&self, prior: &CommPrior) -> SchemeResiduals {
        let masses = [prior.mass_lo, prior.mass_hi];
        let taus = [prior.tau_lo, prior.tau_hi];
        let mut r = SchemeResiduals {
            weight_sum: (self.support.iter().map(|p| p.weight).sum::<f64>() - 1.0).abs(),
            bayes_plausibility: (self.mean() - prior.mean()).abs(),
            ..Default::default()
        };
        for a in 0..2 {
            if masses[a] > 0.0 {
                let row: f64 = self.conditionals[a].iter().sum();
                r.row_sum = r.row_sum.max((row - 1.0).abs());
            }
        }
        for (k, p) in self.support.iter().enumerate() {
            let joint = [masses[0] * self.conditionals[0][k], masses[1] * self.conditionals[1][k]];
            let total = joint[0] + joint[1];
            r.reconstruction = r.reconstruction.max((p.weight - total).abs());
            if total > 0.0 {
                let posterior = (joint[0] * taus[0] + joint[1] * taus[1]) / total;
                r.bayes_consistency = r.bayes_consistency.max((posterior - p.mu).abs());
            }
            let outside = (prior.tau_lo - p.mu).max(p.mu - prior.tau_hi).max(0.0);
            let bad_prob = self.conditionals.iter().any(|row| !(0.0..=1.0 + EXACT_TOL).contains(&row[k]))
                || !(0.0..=1.0 + EXACT_TOL).contains(&p.weight);
            r.range = r.range.max(outside).max(if bad_prob { 1.0 } else { 0.0 });
        }
        r
    }

    pub fn validate(&self, prior: &CommPrior) -> Result<()> {
        let r = self.residuals(prior);
        if r.passes() {
            Ok(())
        } else {
            Err(Error::InvalidScheme(format!("{r:?}")))
        }
    }

    /// Row of conditionals for a prior atom.
    pub fn row(&self, atom: usize) -> &[f64] {
        &self.conditionals[atom]
    }
}

/// Build a scheme from a Bayes-plausible support over posterior means.
pub fn build_scheme(support: &[SupportPoint], prior: &CommPrior) -> Result<SignalScheme> {
    if support.is_empty() {
        return Err(Error::InvalidScheme("empty support".into()));
    }
    let total: f64 = support.iter().map(|p| p.weight).sum();
    if (total - 1.0).abs() > PROB_TOL || support.iter().any(|p| p.weight < 0.0) {
        return Err(Error::InvalidScheme(format!("weights must be non-negative and sum to 1 (got {total})")));
    }
    let mean: f64 = support.iter().map(|p| p.weight * p.mu).sum();
    if (mean - prior.mean()).abs() > PROB_TOL {
        return Err(Error::PlausibilityViolation {
            got: mean,
            expected: prior.mean(),
        });
    }
    let mut lo = Vec::with_capacity(support.len());
    let mut hi = Vec::with_capacity(support.len());
    for p in support {
        let (a, b) = conditional_signals(p.mu, p.weight, prior)?;
        lo.push(a);
        hi.push(b);
    }
    Ok(SignalScheme {
        support: support.to_vec(),
        conditionals: [lo, hi],
    })
}

/// Expected per-round payment `gamma * sum_tau mass(tau) sum_mu rho(mu|tau) s(gamma, mu)`.
pub fn server_cost<P: ParticipationFn + ?Sized>(
    gamma: f64,
    scheme: &SignalScheme,
    surv: &P,
    prior: &CommPrior,
) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    let probs: Vec<f64> = scheme.support.iter().map(|p| surv.prob(gamma, p.mu)).collect();
    let mut total = 0.0;
    for (a, (_, mass)) in prior.atoms().into_iter().enumerate() {
        let inner: f64 = scheme.conditionals[a].iter().zip(&probs).map(|(r, s)| r * s).sum();
        total += mass * inner;
    }
    gamma * total
}

/// Signed Bayes-benefit residual: expected participation under the scheme
/// minus expected participation under full revelation. Non-negative means
/// the scheme satisfies the benefit constraint.
pub fn check_bayes_benefit<P: ParticipationFn + ?Sized>(
    scheme: &SignalScheme,
    gamma: f64,
    surv: &P,
    prior: &CommPrior,
) -> f64 {
    let with_signal: f64 = scheme.support.iter().map(|p| p.weight * surv.prob(gamma, p.mu)).sum();
    let revealed: f64 = prior.atoms().iter().map(|&(tau, m)| m * surv.prob(gamma, tau)).sum();
    with_signal - revealed
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn setup() -> (CostModel, SurvivalModel, ResourceBounds, CommPrior) {
        let b = ResourceBounds::default();
        (
            CostModel::synthetic(),
            SurvivalModel::synthetic(),
            b,
            CommPrior::two_point(0.1, 0.9, 0.5).unwrap(),
        )
    }

    /// Closed-form inverse of the synthetic cost: 1 - sqrt(gamma) / (1.2 - mu).
    fn closed_form(gamma: f64, mu: f64) -> f64 {
        1.0 - gamma.sqrt() / (1.2 - mu)
    }

    #[test]
    fn threshold_examples() {
        let (c, _, b, _) = setup();
        let t = threshold(0.04, 0.5, &c, &b).unwrap().value().unwrap();
        assert_abs_diff_eq!(t, 1.0 - 0.2 / 0.7, epsilon = 1e-8);
        assert_abs_diff_eq!(t, 0.714286, epsilon = 1e-6);
        assert_eq!(threshold(0.25, 0.7, &c, &b).unwrap(), Threshold::At(0.1));
        assert!(closed_form(0.25, 0.7) < 0.1);
        assert_eq!(threshold(0.0, 0.3, &c, &b).unwrap(), Threshold::NoParticipant);
    }

    #[test]
    fn threshold_rejects_bad_domain() {
        let (c, _, b, _) = setup();
        assert!(matches!(threshold(0.1, 0.95, &c, &b), Err(Error::InvalidDomain(_))));
        assert!(matches!(threshold(-0.1, 0.5, &c, &b), Err(Error::InvalidDomain(_))));
        assert!(matches!(threshold(f64::NAN, 0.5, &c, &b), Err(Error::InvalidDomain(_))));
    }

    #[test]
    fn participation_examples() {
        let (c, s, b, _) = setup();
        let p = participation_prob(0.04, 0.5, &c, &s, &b).unwrap();
        let theta: f64 = 1.0 - 0.2 / 0.7;
        assert_abs_diff_eq!(p, 1.0 - ((theta - 0.1) / 0.8).powi(8), epsilon = 1e-8);
        assert_abs_diff_eq!(p, 0.8792, epsilon = 1e-4);
        assert_eq!(participation_prob(0.25, 0.7, &c, &s, &b).unwrap(), 1.0);
        assert_eq!(participation_prob(0.0, 0.7, &c, &s, &b).unwrap(), 0.0);
    }

    #[test]
    fn split_examples() {
        assert_eq!(two_point_split(0.5, 0.4, 0.6).unwrap(), (0.5, 0.5));
        let (wl, wr) = two_point_split(0.5, 0.3, 0.6).unwrap();
        assert_abs_diff_eq!(wl, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wr, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wl * 0.3 + wr * 0.6, 0.5, epsilon = 1e-12);
        assert_eq!(two_point_split(0.5, 0.5, 0.7).unwrap(), (1.0, 0.0));
        assert_eq!(two_point_split(0.5, 0.5, 0.5).unwrap(), (1.0, 0.0));
        assert!(matches!(two_point_split(0.5, 0.4, 0.4), Err(Error::DegenerateSplit { .. })));
    }

    #[test]
    fn conditional_examples() {
        let (_, _, _, prior) = setup();
        let (a, b) = conditional_signals(0.5, 1.0, &prior).unwrap();
        assert_abs_diff_eq!(a, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 1.0, epsilon = 1e-12);
        let (a, _) = conditional_signals(0.9, 0.37, &prior).unwrap();
        assert_eq!(a, 0.0);
        let (a, b) = conditional_signals(0.3, 0.5, &prior).unwrap();
        assert_abs_diff_eq!(a, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(0.5 * a + 0.5 * b, 0.5, epsilon = 1e-12);
        let posterior = (0.5 * a * 0.1 + 0.5 * b * 0.9) / (0.5 * a + 0.5 * b);
        assert_abs_diff_eq!(posterior, 0.3, epsilon = 1e-12);

        let point = CommPrior::two_point(0.1, 0.9, 0.0).unwrap();
        assert!(matches!(conditional_signals(0.9, 1.0, &point), Err(Error::ZeroMassAtom { .. })));
    }

    #[test]
    fn scheme_examples() {
        let (_, _, _, prior) = setup();
        let pool = build_scheme(&[SupportPoint { mu: 0.5, weight: 1.0 }], &prior).unwrap();
        assert_eq!(pool.conditionals, [vec![1.0], vec![1.0]]);
        assert_eq!(pool, SignalScheme::full_pooling(&prior));

        let reveal = build_scheme(
            &[
                SupportPoint { mu: 0.1, weight: 0.5 },
                SupportPoint { mu: 0.9, weight: 0.5 },
            ],
            &prior,
        )
        .unwrap();
        assert_eq!(reveal.conditionals, [vec![1.0, 0.0], vec![0.0, 1.0]]);

        let two = build_scheme(
            &[
                SupportPoint { mu: 0.3, weight: 0.5 },
                SupportPoint { mu: 0.7, weight: 0.5 },
            ],
            &prior,
        )
        .unwrap();
        assert!(two.residuals(&prior).passes());

        let err = build_scheme(&[SupportPoint { mu: 0.4, weight: 1.0 }], &prior);
        assert!(matches!(err, Err(Error::PlausibilityViolation { .. })));
    }

    #[test]
    fn corrupted_scheme_fails_validation() {
        let (_, _, _, prior) = setup();
        let mut s = build_scheme(
            &[
                SupportPoint { mu: 0.3, weight: 0.5 },
                SupportPoint { mu: 0.7, weight: 0.5 },
            ],
            &prior,
        )
        .unwrap();
        s.support[0].weight = 0.6;
        assert!(s.validate(&prior).is_err());
    }

    #[test]
    fn server_cost_examples() {
        let (c, s, b, prior) = setup();
        let truth = TrueParticipation {
            cost: &c,
            survival: &s,
            bounds: &b,
        };
        let pool = SignalScheme::full_pooling(&prior);
        let cost = server_cost(0.04, &pool, &truth, &prior);
        assert_abs_diff_eq!(cost, 0.04 * truth.prob(0.04, 0.5), epsilon = 1e-15);
        assert_abs_diff_eq!(cost, 0.035168, epsilon = 1e-5);
        assert_eq!(server_cost(0.0, &pool, &truth, &prior), 0.0);

        let two = build_scheme(
            &[
                SupportPoint { mu: 0.3, weight: 0.5 },
                SupportPoint { mu: 0.7, weight: 0.5 },
            ],
            &prior,
        )
        .unwrap();
        let brute = 0.04 * (0.5 * truth.prob(0.04, 0.3) + 0.5 * truth.prob(0.04, 0.7));
        assert_abs_diff_eq!(server_cost(0.04, &two, &truth, &prior), brute, epsilon = 1e-12);
    }

    #[test]
    fn bayes_benefit_examples() {
        let (c, s, b, prior) = setup();
        let truth = TrueParticipation {
            cost: &c,
            survival: &s,
            bounds: &b,
        };
        let reveal = SignalScheme::full_revelation(&prior);
        assert_eq!(check_bayes_benefit(&reveal, 0.3, &truth, &prior), 0.0);
        // At gamma = 0.3 every posterior mean participates, where s(gamma, .) is concave.
        let pool = SignalScheme::full_pooling(&prior);
        assert!(check_bayes_benefit(&pool, 0.3, &truth, &prior) >= 0.0);
        let flat = |_: f64, _: f64| 0.42;
        let two = build_scheme(
            &[
                SupportPoint { mu: 0.3, weight: 0.5 },
                SupportPoint { mu: 0.7, weight: 0.5 },
            ],
            &prior,
        )
        .unwrap();
        assert_abs_diff_eq!(check_bayes_benefit(&two, 0.3, &flat, &prior), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn batch_matches_scalar() {
        let (c, _, b, _) = setup();
        let table = CostModel::Table {
            thetas: vec![0.1, 0.5, 0.9],
            mus: vec![0.1, 0.9],
            values: vec![vec![0.8, 0.4], vec![0.3, 0.1], vec![0.05, 0.0]],
        };
        let mus: Vec<f64> = (0..=800).map(|i| 0.1 + i as f64 * 0.001).collect();
        for &g in &[0.0, 0.003, 0.0049, 0.01, 0.04, 0.2, 0.5, 0.99] {
            let batch = thresholds_batch(g, &mus, &c, &b).unwrap();
            for (m, t) in mus.iter().zip(batch) {
                match (t, threshold(g, *m, &c, &b).unwrap()) {
                    (Threshold::At(x), Threshold::At(y)) => assert_abs_diff_eq!(x, y, epsilon = 2e-10),
                    (x, y) => assert_eq!(x, y),
                }
            }
            // Bisected costs reproduce the scalar routine exactly.
            let batch = thresholds_batch(g, &mus, &table, &b).unwrap();
            for (m, t) in mus.iter().zip(batch) {
                assert_eq!(t, threshold(g, *m, &table, &b).unwrap());
            }
        }
    }
}
