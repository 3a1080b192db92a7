use std::collections::BTreeMap;

use cbrw_core::lattice::{
    escape_probability, first_passage_cdf, green_origin, heat_kernel_constants, passage_inequality, transition_prob,
    transition_prob_deriv, Spectral,
};
use cbrw_core::model::validate_kernel;
use cbrw_core::volterra::TimeGrid;
use cbrw_core::{JumpKernel, Site};

fn nn(d: usize, rate: f64) -> JumpKernel {
    let mut raw = BTreeMap::new();
    for i in 0..d {
        for sign in [1, -1] {
            let mut e = vec![0i64; d];
            e[i] = sign;
            raw.insert(Site::new(e), rate);
        }
    }
    validate_kernel(&raw, d).unwrap()
}

#[test]
fn chapman_kolmogorov() {
    let k = nn(1, 0.5);
    let window: Vec<Site> = (-60..=60).map(Site::from).collect();
    let (t, s) = (3.0, 4.5);
    let pt = transition_prob(&k, t, &window, 1e-15).unwrap();
    for z in [0i64, 1, 5] {
        let shifted: Vec<Site> = (-60..=60).map(|w: i64| Site::from(z - w)).collect();
        let ps = transition_prob(&k, s, &shifted, 1e-15).unwrap();
        let sum: f64 = pt.iter().zip(&ps).map(|(a, b)| a * b).sum();
        let direct = transition_prob(&k, t + s, &[Site::from(z)], 1e-15).unwrap()[0];
        assert!((sum - direct).abs() < 1e-13, "z = {z}: {sum} vs {direct}");
    }
}

#[test]
fn origin_dominates_every_pair() {
    for d in [1, 2, 3] {
        let k = nn(d, 0.5 / d as f64);
        let offsets: Vec<Site> = (0..4)
            .map(|j| {
                let mut c = vec![0i64; d];
                c[0] = j;
                c[d - 1] += j / 2;
                Site::new(c)
            })
            .collect();
        for t in [0.3, 2.0, 17.0, 90.0] {
            let p = transition_prob(&k, t, &offsets, 1e-14).unwrap();
            assert!(p.iter().all(|&v| v <= p[0] + 1e-14), "d = {d}, t = {t}");
        }
    }
}

#[test]
fn local_limit_ratios_at_large_time() {
    let k = nn(1, 0.5);
    let heat = heat_kernel_constants(&k);
    let t = 5000.0;
    let z = Site::from(1);
    let p = transition_prob(&k, t, &[Site::origin(1), z.clone()], 1e-14).unwrap();
    let dp = transition_prob_deriv(&k, t, &[Site::origin(1)], 1e-14).unwrap()[0];
    let root = t.sqrt();
    let ratios = [
        p[0] * root / heat.gamma,
        -dp * 2.0 * t * root / heat.gamma,
        (p[0] - p[1]) * t * root / heat.gamma_tilde(&z),
    ];
    for r in ratios {
        assert!((r - 1.0).abs() < 0.01, "{ratios:?}");
    }
}

#[test]
fn green_matches_laplace_transform_of_transition_probabilities() {
    let k = nn(1, 0.5);
    let offsets = [Site::origin(1), Site::from(2)];
    for lambda in [0.1, 1.0] {
        // Simpson's rule on [0, 40/λ]; the neglected tail is below e^{-40}
        let n = 40_000usize;
        let h = 40.0 / lambda / n as f64;
        let times: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
        let series = Spectral::new(&k, 1e-15).series(&times, &offsets).unwrap();
        let g = green_origin(&k, lambda, &offsets).unwrap();
        for (j, p) in series.iter().enumerate() {
            let integral: f64 = (0..=n)
                .map(|i| {
                    let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    w * (-lambda * times[i]).exp() * p[i]
                })
                .sum::<f64>()
                * h
                / 3.0;
            assert!((integral - g[j].value).abs() < 1e-6, "λ = {lambda}: {integral} vs {}", g[j].value);
        }
    }
}

#[test]
fn escape_probability_ignores_time_scale() {
    let k = nn(3, 1.0 / 6.0);
    let h = escape_probability(&k).value;
    let h_fast = escape_probability(&k.scaled(7.0).unwrap()).value;
    assert!((h - h_fast).abs() < 1e-9, "{h} vs {h_fast}");
    assert_eq!(escape_probability(&nn(2, 0.25)).value, 0.0);
}

#[test]
fn first_passage_decomposition_is_nonnegative_off_the_origin() {
    let k = nn(1, 0.5);
    let grid = TimeGrid::new(0.05, 30.0).unwrap();
    let fp = first_passage_cdf(&k, &Site::from(2), &grid, 1e-13).unwrap();
    assert!(fp.cdf.iter().all(|&h| (0.0..=1.0).contains(&h)));
    for y in [1i64, 3, -1] {
        let ineq = passage_inequality(&k, &fp, &Site::from(y), 1e-13).unwrap();
        assert!(ineq.worst_margin() >= -1e-12, "y = {y}: {}", ineq.worst_margin());
    }
}
