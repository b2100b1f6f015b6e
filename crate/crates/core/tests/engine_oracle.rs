use daringfed::config::ScenarioConfig;
use daringfed::design::{optimal_design_known_s, OracleSettings};
use daringfed::engine::{bracket_mus, Engine, EngineConfig};
use daringfed::mechanism::{threshold, TrueParticipation};
use daringfed::model::{CommPrior, CostModel, ResourceBounds, SurvivalModel};
use daringfed::par::Execution;
use proptest::prelude::*;

fn gap_for(xi: f64, mass_lo: f64, fine_step: f64) -> (f64, f64, f64) {
    let bounds = ResourceBounds::synthetic(xi);
    let prior = CommPrior::two_point(0.1, 0.9, mass_lo).unwrap();
    let cost = CostModel::synthetic();
    let s = SurvivalModel::synthetic();
    let settings = OracleSettings {
        beta: bounds.theta_lo,
        fine_step,
        exec: Execution::Sequential,
    };
    let oracle = optimal_design_known_s(&cost, &s, &prior, &bounds, settings).unwrap();
    let engine = Engine::new(EngineConfig::new(bounds, prior, cost.clone()).unwrap()).unwrap();
    let truth = TrueParticipation {
        cost: &cost,
        survival: &s,
        bounds: &bounds,
    };
    let choice = engine.select_with(&truth).unwrap();
    choice.scheme.validate(&prior).unwrap();
    (choice.predicted_cost - oracle.predicted_cost, choice.gamma, oracle.gamma)
}

#[test]
fn coarse_grid_gap_within_two_xi() {
    let (gap, engine_gamma, oracle_gamma) = gap_for(0.05, 0.5, 5e-4);
    assert!(gap <= 0.10 + 1e-9, "gap {gap}");
    assert!(gap >= -1e-9);
    assert!(oracle_gamma <= engine_gamma && engine_gamma <= oracle_gamma + 0.10 + 1e-12);
}

#[test]
fn oracle_respects_binding_beta() {
    let sc = ScenarioConfig::default().resolve().unwrap();
    let settings = OracleSettings {
        beta: 0.7,
        fine_step: 1e-3,
        exec: Execution::Sequential,
    };
    let c = optimal_design_known_s(&sc.cost, &sc.survival, &sc.prior, &sc.bounds, settings).unwrap();
    assert!(c.min_threshold() >= 0.7 - 1e-12);
    let mut engine = Engine::new(sc.setup.engine.clone()).unwrap();
    engine.config.beta = 0.7;
    let truth = TrueParticipation {
        cost: &sc.cost,
        survival: &sc.survival,
        bounds: &sc.bounds,
    };
    let e = engine.select_with(&truth).unwrap();
    assert!(e.min_threshold() >= 0.7 - 1e-9);
    assert!(e.predicted_cost - c.predicted_cost <= 0.02 + 1e-9);
}

#[test]
fn brackets_land_on_adjacent_grid_thresholds() {
    let b = ResourceBounds::default();
    let prior = CommPrior::two_point(0.1, 0.9, 0.5).unwrap();
    let cost = CostModel::synthetic();
    let mut seen = 0;
    for gamma in b.reward_grid() {
        let Ok(br) = bracket_mus(gamma, &cost, &b, &prior) else { continue };
        seen += 1;
        assert!(br.mu_l <= 0.5 && 0.5 <= br.mu_r);
        let t_l = threshold(gamma, br.mu_l, &cost, &b).unwrap().value().unwrap();
        let t_r = threshold(gamma, br.mu_r, &cost, &b).unwrap().value().unwrap();
        assert!((t_l - b.theta_at(br.upper_idx)).abs() < 1e-8, "gamma {gamma}");
        assert!((t_r - b.theta_at(br.lower_idx)).abs() < 1e-8, "gamma {gamma}");
        assert!(br.upper_idx - br.lower_idx <= 1);
    }
    assert!(seen > 90);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gap_bound_holds_for_other_priors(mass_lo in 0.15f64..0.85) {
        let (gap, _, _) = gap_for(0.01, mass_lo, 1e-3);
        prop_assert!(gap <= 0.02 + 1e-9, "gap {}", gap);
    }
}
