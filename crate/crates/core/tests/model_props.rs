use std::collections::BTreeMap;

use cbrw_core::config::{model_hash, parse_config, to_config};
use cbrw_core::model::{classify_regime, fractional_moment_direct, fractional_moment_klar, validate_kernel, Regime};
use cbrw_core::{CbrwModel, OffspringLaw, Site};
use proptest::prelude::*;

fn nn_kernel(rate: f64) -> cbrw_core::model::JumpKernel {
    let mut raw = BTreeMap::new();
    raw.insert(Site::from(1), rate);
    raw.insert(Site::from(-1), rate);
    validate_kernel(&raw, 1).unwrap()
}

fn table_law() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 2..6).prop_filter_map("nonzero mass", |w| {
        let total: f64 = w.iter().sum();
        (total > 1e-3).then(|| w.iter().map(|x| x / total).collect())
    })
}

fn model_with(probs: Vec<f64>, alpha: f64) -> CbrwModel {
    CbrwModel::new(nn_kernel(0.5), alpha, OffspringLaw::table(probs).unwrap(), 0.5).unwrap()
}

proptest! {
    #[test]
    fn phi_is_nonnegative_monotone_and_convex(probs in table_law(), alpha in 0.05f64..0.95) {
        let m = model_with(probs, alpha);
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let vals: Vec<f64> = grid.iter().map(|&s| m.phi(s).unwrap()).collect();
        prop_assert_eq!(vals[0], 0.0);
        for w in vals.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-15);
        }
        for i in 0..=100 {
            for j in (i..=100).step_by(7) {
                let mid = m.phi(0.5 * (grid[i] + grid[j])).unwrap();
                prop_assert!(mid <= 0.5 * (vals[i] + vals[j]) + 1e-12);
            }
        }
    }

    #[test]
    fn phi_scaling_bound(probs in table_law(), kappa in 0.0f64..=1.0, s in 0.0f64..=1.0) {
        let m = model_with(probs, 0.5);
        prop_assert!(m.phi(kappa * s).unwrap() <= kappa * m.phi(s).unwrap() + 1e-14);
    }

    #[test]
    fn klar_matches_direct_series(probs in table_law(), delta in 0.1f64..0.9) {
        let m = model_with(probs, 0.5);
        let direct = fractional_moment_direct(m.offspring(), delta).unwrap();
        let klar = fractional_moment_klar(&m, delta).unwrap();
        prop_assert!((klar - direct).abs() <= 1e-6 * direct.max(1e-12), "{} vs {}", klar, direct);
    }

    #[test]
    fn config_round_trip(probs in table_law(), alpha in 0.01f64..0.99, delta in 0.01f64..=1.0, rate in 0.01f64..10.0) {
        let m = CbrwModel::new(nn_kernel(rate), alpha, OffspringLaw::table(probs).unwrap(), delta).unwrap();
        let again = parse_config(&to_config(&m)).unwrap();
        prop_assert_eq!(model_hash(&m), model_hash(&again));
        prop_assert_eq!(m, again);
    }

    #[test]
    fn regime_ignores_the_time_unit(mean in 0.01f64..2.0, c in 0.01f64..100.0) {
        let law = OffspringLaw::poisson(mean).unwrap();
        let a = CbrwModel::new(nn_kernel(0.5), 0.5, law.clone(), 0.5).unwrap();
        let b = CbrwModel::new(nn_kernel(0.5 * c), 0.5, law, 0.5).unwrap();
        prop_assert_eq!(classify_regime(&a, 0.0), classify_regime(&b, 0.0));
    }
}

#[test]
fn phi_has_zero_slope_at_the_origin() {
    let m = model_with(vec![0.55, 0.0, 0.45], 0.5);
    let h = 1e-6;
    assert!(((m.phi(h).unwrap() - m.phi(0.0).unwrap()) / h).abs() < 1e-4);
}

#[test]
fn klar_matches_direct_for_geometric_law() {
    let law = OffspringLaw::geometric(0.4).unwrap();
    let m = CbrwModel::new(nn_kernel(0.5), 0.5, law, 0.5).unwrap();
    let direct = fractional_moment_direct(m.offspring(), 0.5).unwrap();
    let klar = fractional_moment_klar(&m, 0.5).unwrap();
    assert!((klar / direct - 1.0).abs() < 1e-6, "{klar} vs {direct}");
}

#[test]
fn three_dimensional_threshold() {
    let law = OffspringLaw::table(vec![0.4, 0.0, 0.6]).unwrap();
    let mut raw = BTreeMap::new();
    for i in 0..3 {
        let mut e = vec![0i64; 3];
        e[i] = 1;
        raw.insert(Site::new(e.clone()), 1.0 / 6.0);
        e[i] = -1;
        raw.insert(Site::new(e), 1.0 / 6.0);
    }
    let m = CbrwModel::new(validate_kernel(&raw, 3).unwrap(), 0.5, law, 0.5).unwrap();
    let report = classify_regime(&m, 0.65946);
    assert_eq!(report.regime, Regime::Subcritical);
    assert!((report.threshold - 1.65946).abs() < 1e-12);
}
