use cbrw_core::config::parse_config;
use cbrw_core::montecarlo::{empty_results, merge_results, simulate_population, SimConfig};
use cbrw_core::{CbrwModel, OffspringLaw, Site};
use proptest::prelude::*;

const R1: &str = include_str!("../../../fixtures/r1.toml");

fn r1() -> CbrwModel {
    parse_config(R1).unwrap()
}

fn config(model: CbrwModel, replicates: u64, seed: u64) -> SimConfig {
    let watch = vec![Site::from(0), Site::from(1), Site::from(-2)];
    SimConfig::new(model, Site::from(0), vec![0.5, 2.0, 6.0], watch, replicates, seed)
}

fn shard(model: &CbrwModel, first: u64, count: u64, seed: u64) -> cbrw_core::montecarlo::SimEstimates {
    let mut c = config(model.clone(), count, seed);
    c.first_replicate = first;
    simulate_population(&c).unwrap()
}

#[test]
fn sharded_run_equals_single_run() {
    let model = r1();
    let whole = simulate_population(&config(model.clone(), 2000, 7)).unwrap();
    let mut pooled = empty_results(&config(model.clone(), 0, 7));
    for i in (0..10).rev() {
        pooled = merge_results(&pooled, &shard(&model, 200 * i, 200, 7)).unwrap();
    }
    assert_eq!(pooled.histograms, whole.histograms);
    assert_eq!(pooled.point(6.0, &Site::from(1)).unwrap(), whole.point(6.0, &Site::from(1)).unwrap());
}

#[test]
fn merging_with_empty_is_identity() {
    let model = r1();
    let run = simulate_population(&config(model.clone(), 300, 3)).unwrap();
    let empty = empty_results(&config(model, 0, 3));
    assert_eq!(merge_results(&run, &empty).unwrap(), run);
    assert_eq!(merge_results(&empty, &run).unwrap(), run);
}

#[test]
fn survival_frequency_never_exceeds_mean() {
    let run = simulate_population(&config(r1(), 3000, 11)).unwrap();
    for &t in &run.checkpoints.clone() {
        for y in run.watch.clone() {
            let p = run.point(t, &y).unwrap();
            assert!(p.survival <= p.mean, "t = {t}, y = {y}");
        }
    }
}

#[test]
fn larger_offspring_never_lowers_counts() {
    let model = r1();
    let richer = model.with_offspring(OffspringLaw::table(vec![0.3, 0.0, 0.7]).unwrap()).unwrap();
    let run = |m: CbrwModel| {
        let mut c = config(m, 1000, 99);
        c.keep_raw = true;
        simulate_population(&c).unwrap().raw.unwrap()
    };
    let (low, high) = (run(model), run(richer));
    assert_eq!(low.len(), high.len());
    for ((_, a), (_, b)) in low.iter().zip(&high) {
        assert_eq!((a.replicate, a.checkpoint, a.watch), (b.replicate, b.checkpoint, b.watch));
        assert!(b.count >= a.count, "{a:?} vs {b:?}");
    }
}

#[test]
fn killed_walk_has_equal_moments() {
    let model = r1().with_offspring(OffspringLaw::deterministic(0)).unwrap();
    let run = simulate_population(&config(model, 2000, 5)).unwrap();
    for y in [Site::from(0), Site::from(1)] {
        let p = run.point(2.0, &y).unwrap();
        let frac = run.fractional_moment(2.0, &y, 0.5).unwrap();
        assert!((frac.value - p.mean).abs() < 1e-15);
        assert_eq!(p.mean, p.survival);
        assert_eq!(p.factorial2, 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn merge_is_commutative_and_associative(seed in 0u64..1000, a in 1u64..40, b in 1u64..40, c in 1u64..40) {
        let model = r1();
        let x = shard(&model, 0, a, seed);
        let y = shard(&model, a, b, seed);
        let z = shard(&model, a + b, c, seed);
        prop_assert_eq!(merge_results(&x, &y).unwrap(), merge_results(&y, &x).unwrap());
        let left = merge_results(&merge_results(&x, &y).unwrap(), &z).unwrap();
        let right = merge_results(&x, &merge_results(&y, &z).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }
}
