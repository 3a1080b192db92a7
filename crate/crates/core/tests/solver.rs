use cbrw_core::asymptotics::Asymptotics;
use cbrw_core::config::parse_config;
use cbrw_core::verify::{Lab, VerifyOptions};
use cbrw_core::volterra::{TimeGrid, VolterraSolver};
use cbrw_core::{CbrwModel, Site};

const R1: &str = include_str!("../../../fixtures/r1.toml");
const R3: &str = include_str!("../../../fixtures/r3.toml");

fn r1() -> CbrwModel {
    parse_config(R1).unwrap()
}

#[test]
fn mean_converges_at_second_order() {
    let model = r1();
    let o = Site::origin(1);
    let h = 0.1;
    let a = VolterraSolver::new(&model, TimeGrid::new(h, 20.0).unwrap()).unwrap().mean(&o, &o).unwrap();
    let b = VolterraSolver::new(&model, TimeGrid::new(h / 2.0, 20.0).unwrap()).unwrap().mean(&o, &o).unwrap();
    let n = (10.0 / h).round() as usize;
    // a.level(1) and b.level(0) are both the h/2 solution
    assert!((a.level(1)[2 * n] - b.level(0)[2 * n]).abs() < 1e-14);
    let e_h = (a.level(0)[n] - a.level(1)[2 * n]).abs();
    let e_h2 = (b.level(0)[2 * n] - b.level(1)[4 * n]).abs();
    let ratio = e_h / e_h2;
    assert!((3.2..=4.8).contains(&ratio), "ratio {ratio}");
}

#[test]
fn solved_mean_satisfies_the_backward_equation() {
    let model = r1();
    let solver = VolterraSolver::new(&model, TimeGrid::new(0.05, 30.0).unwrap()).unwrap();
    let (o, x, y) = (Site::origin(1), Site::from(2), Site::from(-1));
    let m_xy = solver.mean(&x, &y).unwrap();
    let m_0y = solver.mean(&o, &y).unwrap();
    let residual = solver.backward_residual(&m_xy, &m_0y).unwrap();
    let worst = residual.iter().fold(0.0f64, |w, r| w.max(r.abs()));
    assert!(worst < 1e-6, "backward residual {worst:e}");
}

#[test]
fn mean_at_time_zero_is_an_indicator() {
    let model = r1();
    let solver = VolterraSolver::new(&model, TimeGrid::new(0.05, 5.0).unwrap()).unwrap();
    let o = Site::origin(1);
    assert_eq!(solver.mean(&o, &o).unwrap().values[0], 1.0);
    assert_eq!(solver.mean(&Site::from(1), &o).unwrap().values[0], 0.0);
}

#[test]
fn survival_is_bounded_by_the_mean() {
    let model = r1();
    let lab = Lab::new(&model, VerifyOptions { horizon: Some(40.0), ..Default::default() }).unwrap();
    let y = Site::from(1);
    let m = lab.mean(&Site::origin(1), &y).unwrap();
    for s in [0.0, 0.3, 0.9] {
        let q = lab.survival(&y, s).unwrap();
        for (qv, mv) in q.values.iter().zip(&m.values) {
            assert!(*qv >= 0.0 && *qv <= (1.0 - s) * mv + 1e-15);
        }
    }
}

#[test]
fn survival_prediction_lies_below_mean_prediction() {
    let model = r1();
    let lab = Lab::new(&model, VerifyOptions { horizon: Some(1000.0), ..Default::default() }).unwrap();
    let o = Site::origin(1);
    let j0 = lab.j(&o, 0.0).unwrap().value();
    assert!(j0 > 0.0);
    for y in [Site::from(0), Site::from(1), Site::from(-2)] {
        let j = lab.j(&y, 0.0).unwrap().value();
        let asy = lab.asymptotics();
        let q = asy.theorem2_prediction(&o, &y, 1000.0, j).unwrap();
        let m = asy.theorem1_prediction(&o, &y, 1000.0).unwrap();
        assert!(q > 0.0 && q < m, "y = {y}: {q} vs {m}");
    }
}

#[test]
fn pgf_limit_endpoints() {
    let model = r1();
    let asy = Asymptotics::new(&model).unwrap();
    let (o, y) = (Site::origin(1), Site::from(1));
    let j0 = 0.3;
    assert!(asy.theorem3_pgf_limit(&o, &y, 0.0, j0, j0).unwrap().abs() < 1e-15);
    assert!((asy.theorem3_pgf_limit(&o, &y, 1.0, j0, 0.0).unwrap() - 1.0).abs() < 1e-15);
    assert!(asy.theorem3_pgf_limit(&o, &y, 1.5, j0, 0.0).is_err());
}

#[test]
fn transient_constants_factor_through_rho() {
    let model = parse_config(R3).unwrap();
    let asy = Asymptotics::new(&model).unwrap();
    let o = Site::origin(3);
    let sites = [Site::new(vec![1, 0, 0]), Site::new(vec![1, 1, 0]), Site::new(vec![0, 0, 2])];
    asy.prefetch_rho(&sites).unwrap();
    assert_eq!(asy.rho(&o).unwrap(), 1.0);
    for x in [o.clone(), sites[0].clone()] {
        let cx0 = asy.c_constant(&x, &o).unwrap();
        for y in &sites {
            let ratio = asy.c_constant(&x, y).unwrap() / cx0;
            let rho = asy.rho(y).unwrap();
            assert!(rho > 0.0);
            assert!((ratio / rho - 1.0).abs() < 1e-14, "x = {x}, y = {y}");
        }
    }
}

/// m(t; 0, ·) from the forward mean ODE on the box [-L, L], by RK4.
fn lattice_ode(model: &CbrwModel, t_end: f64, dt: f64) -> Vec<f64> {
    const L: usize = 60;
    let alpha = model.alpha();
    let growth = alpha * model.offspring().mean() - 1.0;
    let rhs = |m: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; m.len()];
        for (i, &mi) in m.iter().enumerate() {
            if i == L {
                // catalyst: leaves at rate 1, half of the departures to each side
                out[i] += growth * mi;
                out[i - 1] += 0.5 * (1.0 - alpha) * mi;
                out[i + 1] += 0.5 * (1.0 - alpha) * mi;
            } else {
                out[i] -= mi;
                if i > 0 {
                    out[i - 1] += 0.5 * mi;
                }
                if i + 1 < m.len() {
                    out[i + 1] += 0.5 * mi;
                }
            }
        }
        out
    };
    let mut m = vec![0.0; 2 * L + 1];
    m[L] = 1.0;
    let axpy = |m: &[f64], k: &[f64], c: f64| -> Vec<f64> { m.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    for _ in 0..(t_end / dt).round() as usize {
        let k1 = rhs(&m);
        let k2 = rhs(&axpy(&m, &k1, 0.5 * dt));
        let k3 = rhs(&axpy(&m, &k2, 0.5 * dt));
        let k4 = rhs(&axpy(&m, &k3, dt));
        for i in 0..m.len() {
            m[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    m
}

#[test]
fn short_time_mean_matches_lattice_ode() {
    let model = r1();
    let solver = VolterraSolver::new(&model, TimeGrid::new(0.05, 3.0).unwrap()).unwrap();
    let o = Site::origin(1);
    let ode = lattice_ode(&model, 3.0, 1e-3);
    for y in [0i64, 1, -1, 3] {
        let m = solver.mean(&o, &Site::from(y)).unwrap();
        let oracle = ode[(60 + y) as usize];
        assert!((m.at(3.0) - oracle).abs() < 1e-6, "y = {y}: {} vs {oracle}", m.at(3.0));
    }
}
