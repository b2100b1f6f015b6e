use daringfed::mechanism::{build_scheme, threshold, two_point_split, SupportPoint, Threshold};
use daringfed::model::{CommPrior, CostModel, ResourceBounds, SurvivalModel};
use daringfed::verify::concave_rewards;
use proptest::prelude::*;

fn theta(gamma: f64, mu: f64) -> f64 {
    let b = ResourceBounds::default();
    match threshold(gamma, mu, &CostModel::synthetic(), &b).unwrap() {
        Threshold::At(t) => t,
        Threshold::NoParticipant => f64::INFINITY,
    }
}

proptest! {
    #[test]
    fn threshold_non_increasing(g in 0.0f64..1.0, dg in 0.0f64..0.5, mu in 0.1f64..0.9, dm in 0.0f64..0.8) {
        let base = theta(g, mu);
        prop_assert!(theta((g + dg).min(1.0), mu) <= base + 1e-9);
        prop_assert!(theta(g, (mu + dm).min(0.9)) <= base + 1e-9);
    }

    #[test]
    fn participation_concave_on_verified_rewards(k in 0usize..1000, a in 0.1f64..0.9, b in 0.1f64..0.9, w in 0.0f64..=1.0) {
        let bounds = ResourceBounds::default();
        let s = SurvivalModel::synthetic();
        let rewards = concave_rewards(&CostModel::synthetic(), &s, &bounds, 0.005).unwrap();
        let g = rewards[k % rewards.len()];
        let p = |mu: f64| s.eval(theta(g, mu));
        let mid = w * a + (1.0 - w) * b;
        prop_assert!(p(mid) >= w * p(a) + (1.0 - w) * p(b) - 1e-9);
    }

    #[test]
    fn random_supports_are_plausible(mass_lo in 0.05f64..0.95, l in 0.0f64..1.0, r in 0.0f64..1.0) {
        let prior = CommPrior::two_point(0.1, 0.9, mass_lo).unwrap();
        let m = prior.mean();
        let mu_l = 0.1 + l * (m - 0.1);
        let mu_r = m + r * (0.9 - m);
        prop_assume!(mu_r > mu_l);
        let (wl, wr) = two_point_split(m, mu_l, mu_r).unwrap();
        let scheme = build_scheme(&[SupportPoint { mu: mu_l, weight: wl }, SupportPoint { mu: mu_r, weight: wr }], &prior).unwrap();
        let res = scheme.residuals(&prior);
        prop_assert!(res.passes(), "{:?}", res);
        prop_assert!(res.bayes_consistency <= 1e-9 && res.bayes_plausibility <= 1e-9);
    }
}
