//! Oracle comparison plus sampled re-checks of the library invariants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::EstimatorState;
use crate::config::Scenario;
use crate::design::{optimal_design_known_s, MechanismChoice};
use crate::engine::Engine;
use crate::error::Result;
use crate::mechanism::{
    build_scheme, check_bayes_benefit, threshold, two_point_split, SupportPoint, Threshold, TrueParticipation,
    PROB_TOL,
};
use crate::model::{CommPrior, CostModel, ResourceBounds, SurvivalModel};
use crate::sim::{run_simulation, Policy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub xi: f64,
    pub fine_step: f64,
    pub oracle: MechanismChoice,
    pub engine: MechanismChoice,
    pub cost_gap: f64,
    pub gap_bound: f64,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

/// Grid rewards at which every posterior mean in the tau box participates
/// and `mu -> s(gamma, mu)` is numerically concave.
pub fn concave_rewards(cost: &CostModel, survival: &SurvivalModel, bounds: &ResourceBounds, step: f64) -> Result<Vec<f64>> {
    let n = ((bounds.tau_hi - bounds.tau_lo) / step).round() as usize;
    let mus: Vec<f64> = (0..=n).map(|i| bounds.tau_lo + i as f64 * step).collect();
    let mut out = Vec::new();
    'gamma: for gamma in bounds.reward_grid() {
        let mut vals = Vec::with_capacity(mus.len());
        for &mu in &mus {
            match threshold(gamma, mu.min(bounds.tau_hi), cost, bounds)? {
                Threshold::At(t) => vals.push(survival.eval(t)),
                Threshold::NoParticipant => continue 'gamma,
            }
        }
        if vals.windows(3).all(|w| w[0] + w[2] - 2.0 * w[1] <= 1e-12) {
            out.push(gamma);
        }
    }
    Ok(out)
}

/// Random Bayes-plausible support with one or two points.
pub fn random_support<R: Rng + ?Sized>(prior: &CommPrior, rng: &mut R) -> Vec<SupportPoint> {
    let m = prior.mean();
    if rng.random_bool(0.05) {
        return vec![SupportPoint { mu: m, weight: 1.0 }];
    }
    loop {
        let l = rng.random_range(prior.tau_lo..m);
        let r = rng.random_range(m..=prior.tau_hi);
        if r > l {
            let (wl, wr) = two_point_split(m, l, r).expect("distinct points");
            return vec![SupportPoint { mu: l, weight: wl }, SupportPoint { mu: r, weight: wr }];
        }
    }
}

/// Fraction of random schemes passing the identities, and the worst Bayes
/// benefit residual over rewards where `s(gamma, .)` is concave.
pub fn scheme_identity_sweep(sc: &Scenario, samples: usize, seed: u64) -> Result<(usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rewards = concave_rewards(&sc.cost, &sc.survival, &sc.bounds, 0.005)?;
    let truth = TrueParticipation {
        cost: &sc.cost,
        survival: &sc.survival,
        bounds: &sc.bounds,
    };
    let mut ok = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let support = random_support(&sc.prior, &mut rng);
        let scheme = build_scheme(&support, &sc.prior)?;
        let r = scheme.residuals(&sc.prior);
        if r.bayes_consistency <= PROB_TOL && r.bayes_plausibility <= PROB_TOL && r.passes() {
            ok += 1;
        }
        if !rewards.is_empty() {
            let gamma = rewards[rng.random_range(0..rewards.len())];
            worst = worst.min(check_bayes_benefit(&scheme, gamma, &truth, &sc.prior));
        }
    }
    Ok((ok, worst))
}

pub fn run_verification(sc: &Scenario, corrupt: bool) -> Result<VerifyReport> {
    let settings = sc.oracle_settings();
    let xi = sc.bounds.xi;
    let samples = sc.config.verify.samples;
    let seed = sc.config.seed;
    let oracle = optimal_design_known_s(&sc.cost, &sc.survival, &sc.prior, &sc.bounds, settings)?;

    let engine = Engine::new(sc.setup.engine.clone())?;
    let truth = TrueParticipation {
        cost: &sc.cost,
        survival: &sc.survival,
        bounds: &sc.bounds,
    };
    let mut choice = engine.select_with(&truth)?;
    if corrupt {
        // Negative control: break Bayes plausibility.
        choice.scheme.support[0].mu += 0.05;
    }
    let gap = choice.predicted_cost - oracle.predicted_cost;
    let bound = 2.0 * xi;
    let mut checks = Vec::new();

    checks.push(check("oracle_gap", gap <= bound + 1e-9, format!("gap {gap:e} vs bound {bound}")));
    let bracket = oracle.gamma <= choice.gamma + 1e-12 && choice.gamma <= oracle.gamma + bound + 1e-12;
    checks.push(check(
        "reward_bracket",
        bracket,
        format!("oracle {} engine {}", oracle.gamma, choice.gamma),
    ));
    let r = choice.scheme.residuals(&sc.prior);
    checks.push(check("engine_scheme", r.passes(), format!("{r:?}")));

    let mut bad = 0;
    for &g in &engine.config.reward_grid {
        if let Some(c) = engine.candidate(g, &truth)? {
            bad += usize::from(!c.scheme.residuals(&sc.prior).passes() || c.min_threshold() < engine.config.beta - 1e-9);
        }
    }
    checks.push(check("candidate_schemes", bad == 0, format!("{bad} invalid candidates")));

    let (ok, worst) = scheme_identity_sweep(sc, samples, seed)?;
    checks.push(check(
        "scheme_identities",
        ok == samples && !(worst < -1e-9),
        format!("{ok}/{samples} schemes pass; worst benefit residual {worst:e}"),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut violations = 0;
    for _ in 0..samples {
        let g = rng.random_range(sc.bounds.gamma_lo..=sc.bounds.gamma_hi);
        let dg = rng.random_range(0.0..0.1);
        let mu = rng.random_range(sc.bounds.tau_lo..=sc.bounds.tau_hi);
        let dm = rng.random_range(0.0..=sc.bounds.tau_hi - mu);
        let t = |g: f64, m: f64| threshold(g, m, &sc.cost, &sc.bounds).map(|t| t.value().unwrap_or(f64::INFINITY));
        let base = t(g, mu)?;
        if t((g + dg).min(sc.bounds.gamma_hi), mu)? > base + 1e-9 || t(g, mu + dm)? > base + 1e-9 {
            violations += 1;
        }
    }
    checks.push(check("threshold_monotone", violations == 0, format!("{violations} violations")));

    let mut est = EstimatorState::from_bounds(&sc.bounds);
    let n = est.buckets.len();
    for _ in 0..samples {
        est.record_index(rng.random_range(0..n), rng.random_bool(0.5));
    }
    let counts_ok = est.total_pulls() == est.total_rounds
        && est.buckets.iter().all(|b| b.joins <= b.pulls)
        && est.ucb_vector().iter().all(|u| (0.0..=1.0).contains(u));
    checks.push(check("estimator_counts", counts_ok, format!("{} rounds", est.total_rounds)));

    let rounds = 2 * n as u64 + 100;
    let a = run_simulation(&sc.setup, Policy::Df, rounds, seed)?;
    let b = run_simulation(&sc.setup, Policy::Df, rounds, seed)?;
    let paid: f64 = a.records.iter().map(|r| r.payment).sum();
    let ledger_ok = paid == a.metrics.cumulative_server_cost
        && a.records.iter().all(|r| r.payment == if r.joined { r.gamma } else { 0.0 });
    checks.push(check("payment_bookkeeping", ledger_ok, format!("{rounds} rounds, cost {paid}")));
    checks.push(check("seed_determinism", a.records == b.records, String::new()));

    let pop = &sc.setup.population;
    let draws = 100_000;
    let mut thetas: Vec<f64> = (0..draws).map(|_| pop.sample_theta(1, &mut rng)).collect();
    thetas.sort_by(f64::total_cmp);
    let mut sup: f64 = 0.0;
    for x in sc.bounds.theta_grid() {
        let above = draws - thetas.partition_point(|&t| t < x);
        sup = sup.max((above as f64 / draws as f64 - pop.theta_dist.eval(x)).abs());
    }
    checks.push(check("population_fidelity", sup <= 0.01, format!("sup error {sup:.5}")));

    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        xi,
        fine_step: settings.fine_step,
        oracle,
        engine: choice,
        cost_gap: gap,
        gap_bound: bound,
        checks,
        passed,
    })
}
