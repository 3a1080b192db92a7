//! Transition probabilities p(t; 0, z) of the free walk by trapezoidal
//! quadrature of the inverse Fourier integral on a uniform torus grid.
//!
//! On an N-point grid the trapezoid sum equals Σ_m p(t; z + mN) exactly,
//! so the only error is the wrap-around mass, bounded per axis with a
//! Chernoff estimate of the coordinate process.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::JumpKernel;
use crate::site::Site;

/// Default absolute tolerance for transition probabilities.
pub const DEFAULT_TOL: f64 = 1e-13;

/// Default cap on the number of torus grid points per evaluation.
pub const DEFAULT_GRID_CAP: u64 = 1 << 24;

/// Jump sizes of one coordinate of the walk: (z_i, rate) for z_i ≠ 0.
#[derive(Debug, Clone)]
struct Marginal {
    jumps: Vec<(i64, f64)>,
    max_jump: i64,
}

impl Marginal {
    fn of(kernel: &JumpKernel, axis: usize) -> Self {
        let mut acc: BTreeMap<i64, f64> = BTreeMap::new();
        for (z, r) in kernel.support() {
            let c = z.coords()[axis];
            if c != 0 {
                *acc.entry(c).or_default() += r;
            }
        }
        let max_jump = acc.keys().map(|c| c.abs()).max().unwrap_or(1);
        Marginal {
            jumps: acc.into_iter().collect(),
            max_jump,
        }
    }

    fn log_mgf(&self, theta: f64) -> f64 {
        self.jumps
            .iter()
            .map(|&(c, r)| r * ((theta * c as f64).cosh() - 1.0))
            .sum()
    }

    fn log_mgf_prime(&self, theta: f64) -> f64 {
        self.jumps
            .iter()
            .map(|&(c, r)| r * c as f64 * (theta * c as f64).sinh())
            .sum()
    }

    /// Chernoff bound on P(|X_i(t)| >= r).
    fn tail_bound(&self, t: f64, r: f64) -> f64 {
        if r <= 0.0 {
            return 1.0;
        }
        if t == 0.0 {
            return 0.0;
        }
        let theta_cap = 600.0 / self.max_jump as f64;
        let mut hi = 1e-3;
        while t * self.log_mgf_prime(hi) < r && hi < theta_cap {
            hi = (hi * 2.0).min(theta_cap);
        }
        let mut lo = 0.0;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if t * self.log_mgf_prime(mid) < r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let theta = hi;
        (2.0 * (-theta * r + t * self.log_mgf(theta)).exp()).min(1.0)
    }
}

/// Grid sizes used: 16·2^k and 24·2^k.
fn ladder_at_least(n: u64) -> u64 {
    let mut base = 16u64;
    loop {
        if base >= n {
            return base;
        }
        if base / 2 * 3 >= n {
            return base / 2 * 3;
        }
        base *= 2;
    }
}

/// One-dimensional symbol table for an axis of a separable kernel.
struct AxisTable {
    n: usize,
    symbol: Vec<f64>,
    cos: Vec<f64>,
}

impl AxisTable {
    fn new(jumps: &[(i64, f64)], n: usize) -> Self {
        let cos: Vec<f64> = (0..n).map(|k| (2.0 * PI * k as f64 / n as f64).cos()).collect();
        let sin2: Vec<f64> = (0..n)
            .map(|k| {
                let s = (PI * k as f64 / n as f64).sin();
                s * s
            })
            .collect();
        let symbol = (0..n)
            .map(|j| {
                -jumps
                    .iter()
                    .map(|&(c, r)| 2.0 * r * sin2[(c * j as i64).rem_euclid(n as i64) as usize])
                    .sum::<f64>()
            })
            .collect();
        AxisTable { n, symbol, cos }
    }

    /// Σ_m P(t; c + mN) for each requested coordinate value c.
    fn eval(&self, t: f64, coords: &[i64], out: &mut [f64]) {
        let n = self.n as i64;
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.n {
            let w = (t * self.symbol[j]).exp();
            for (o, &c) in out.iter_mut().zip(coords) {
                *o += w * self.cos[(c * j as i64).rem_euclid(n) as usize];
            }
        }
        let inv = 1.0 / self.n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Full tensor-grid table for non-separable kernels.
struct FullTable {
    n: usize,
    dimension: usize,
    symbol: Vec<f64>,
    cos: Vec<f64>,
}

impl FullTable {
    fn new(kernel: &JumpKernel, n: usize) -> Self {
        let d = kernel.dimension();
        let total = n.pow(d as u32);
        let sin2: Vec<f64> = (0..n)
            .map(|k| {
                let s = (PI * k as f64 / n as f64).sin();
                s * s
            })
            .collect();
        let support: Vec<(Vec<i64>, f64)> = kernel
            .support()
            .map(|(z, r)| (z.coords().to_vec(), r))
            .collect();
        let mut symbol = vec![0.0; total];
        let mut idx = vec![0i64; d];
        for s in symbol.iter_mut() {
            *s = -support
                .iter()
                .map(|(z, r)| {
                    let ph: i64 = z.iter().zip(&idx).map(|(a, b)| a * b).sum();
                    2.0 * r * sin2[ph.rem_euclid(n as i64) as usize]
                })
                .sum::<f64>();
            advance(&mut idx, n as i64);
        }
        let cos = (0..n).map(|k| (2.0 * PI * k as f64 / n as f64).cos()).collect();
        FullTable {
            n,
            dimension: d,
            symbol,
            cos,
        }
    }

    fn eval(&self, t: f64, offsets: &[Site], out: &mut [f64]) {
        let n = self.n as i64;
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut idx = vec![0i64; self.dimension];
        for &s in &self.symbol {
            let w = (t * s).exp();
            for (o, z) in out.iter_mut().zip(offsets) {
                let ph: i64 = z.coords().iter().zip(&idx).map(|(a, b)| a * b).sum();
                *o += w * self.cos[ph.rem_euclid(n) as usize];
            }
            advance(&mut idx, n);
        }
        let inv = 1.0 / self.symbol.len() as f64;
        out.iter_mut().for_each(|v| *v *= inv);
    }
}

fn advance(idx: &mut [i64], n: i64) {
    for v in idx.iter_mut() {
        *v += 1;
        if *v < n {
            return;
        }
        *v = 0;
    }
}

/// Evaluator for p(t; 0, z), reusing symbol tables across times.
pub struct Spectral<'a> {
    kernel: &'a JumpKernel,
    marginals: Vec<Marginal>,
    tol: f64,
    cap: u64,
}

impl<'a> Spectral<'a> {
    pub fn new(kernel: &'a JumpKernel, tol: f64) -> Self {
        Self::with_cap(kernel, tol, DEFAULT_GRID_CAP)
    }

    pub fn with_cap(kernel: &'a JumpKernel, tol: f64, cap: u64) -> Self {
        let marginals = (0..kernel.dimension())
            .map(|i| Marginal::of(kernel, i))
            .collect();
        Spectral {
            kernel,
            marginals,
            tol,
            cap,
        }
    }

    /// Per-axis grid sizes keeping the wrap-around mass below tol/2.
    fn grid_sizes(&self, t: f64, offsets: &[Site]) -> Result<Vec<u64>> {
        let d = self.kernel.dimension();
        let target = 0.5 * self.tol / d as f64;
        let mut sizes = Vec::with_capacity(d);
        for (axis, m) in self.marginals.iter().enumerate() {
            let zmax = offsets.iter().map(|z| z.coords()[axis].abs()).max().unwrap_or(0);
            let mut n = ladder_at_least((2 * zmax + 2).max(8) as u64);
            loop {
                let reach = n as f64 - zmax as f64;
                if m.tail_bound(t, reach) <= target {
                    break;
                }
                n = ladder_at_least(n + 1);
                if n > self.cap {
                    return Err(Error::ToleranceUnachievable {
                        tol: self.tol,
                        needed: n,
                        cap: self.cap,
                    });
                }
            }
            sizes.push(n);
        }
        if !self.kernel.is_axis_separable() {
            let n = *sizes.iter().max().unwrap();
            let total = n.saturating_pow(d as u32);
            if total > self.cap {
                return Err(Error::ToleranceUnachievable {
                    tol: self.tol,
                    needed: total,
                    cap: self.cap,
                });
            }
            sizes.iter_mut().for_each(|s| *s = n);
        }
        Ok(sizes)
    }

    /// p(t; 0, z) for every offset at every time; result is indexed
    /// `[offset][time]`.
    pub fn series(&self, times: &[f64], offsets: &[Site]) -> Result<Vec<Vec<f64>>> {
        for z in offsets {
            if z.dim() != self.kernel.dimension() {
                return Err(Error::DimensionMismatch {
                    expected: self.kernel.dimension(),
                    got: z.dim(),
                });
            }
        }
        if let Some(&t) = times.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
            return Err(Error::OutOfDomain {
                name: "t",
                value: t,
                domain: "[0, ∞)",
            });
        }
        let sizes: Vec<Vec<u64>> = times
            .iter()
            .map(|&t| self.grid_sizes(t, offsets))
            .collect::<Result<_>>()?;

        let per_time: Vec<Vec<f64>> = if self.kernel.is_axis_separable() {
            let d = self.kernel.dimension();
            let mut tables: HashMap<(usize, u64), AxisTable> = HashMap::new();
            for s in &sizes {
                for (axis, &n) in s.iter().enumerate() {
                    tables
                        .entry((axis, n))
                        .or_insert_with(|| AxisTable::new(&self.marginals[axis].jumps, n as usize));
                }
            }
            let coords: Vec<Vec<i64>> = (0..d)
                .map(|axis| offsets.iter().map(|z| z.coords()[axis]).collect())
                .collect();
            times
                .par_iter()
                .zip(sizes.par_iter())
                .map(|(&t, s)| {
                    let mut out = vec![1.0; offsets.len()];
                    let mut buf = vec![0.0; offsets.len()];
                    for axis in 0..d {
                        tables[&(axis, s[axis])].eval(t, &coords[axis], &mut buf);
                        out.iter_mut().zip(&buf).for_each(|(o, b)| *o *= b);
                    }
                    out
                })
                .collect()
        } else {
            let mut tables: HashMap<u64, FullTable> = HashMap::new();
            for s in &sizes {
                tables
                    .entry(s[0])
                    .or_insert_with(|| FullTable::new(self.kernel, s[0] as usize));
            }
            times
                .par_iter()
                .zip(sizes.par_iter())
                .map(|(&t, s)| {
                    let mut out = vec![0.0; offsets.len()];
                    tables[&s[0]].eval(t, offsets, &mut out);
                    out
                })
                .collect()
        };

        let mut result = vec![vec![0.0; times.len()]; offsets.len()];
        for (k, row) in per_time.into_iter().enumerate() {
            for (i, v) in row.into_iter().enumerate() {
                // roundoff can leave |v| ~ 1e-17 below zero
                result[i][k] = v.clamp(0.0, 1.0);
            }
        }
        Ok(result)
    }

    /// p'(t; 0, z) = Σ_w a(w) p(t; 0, z - w), indexed `[offset][time]`.
    pub fn derivative_series(&self, times: &[f64], offsets: &[Site]) -> Result<Vec<Vec<f64>>> {
        let (needed, plan) = kolmogorov_plan(self.kernel, offsets);
        let p = self.series(times, &needed)?;
        Ok(plan
            .iter()
            .map(|terms| {
                (0..times.len())
                    .map(|k| terms.iter().map(|&(i, r)| r * p[i][k]).sum())
                    .collect()
            })
            .collect())
    }
}

/// Offsets needed for the forward Kolmogorov identity, and for each
/// requested offset the list of (index into needed, rate).
pub(crate) fn kolmogorov_plan(
    kernel: &JumpKernel,
    offsets: &[Site],
) -> (Vec<Site>, Vec<Vec<(usize, f64)>>) {
    let mut needed: Vec<Site> = Vec::new();
    let mut index: HashMap<Site, usize> = HashMap::new();
    let mut slot = |z: Site, needed: &mut Vec<Site>| -> usize {
        *index.entry(z.clone()).or_insert_with(|| {
            needed.push(z);
            needed.len() - 1
        })
    };
    let mut plan = Vec::with_capacity(offsets.len());
    for z in offsets {
        let mut terms = vec![(slot(z.clone(), &mut needed), kernel.diagonal())];
        for (w, r) in kernel.support() {
            terms.push((slot(z - w, &mut needed), r));
        }
        plan.push(terms);
    }
    (needed, plan)
}

/// p(t; 0, z) for each offset, to absolute accuracy `tol`.
pub fn transition_prob(kernel: &JumpKernel, t: f64, offsets: &[Site], tol: f64) -> Result<Vec<f64>> {
    let s = Spectral::new(kernel, tol).series(&[t], offsets)?;
    Ok(s.into_iter().map(|v| v[0]).collect())
}

/// p'(t; 0, z) for each offset via the forward Kolmogorov equation.
pub fn transition_prob_deriv(
    kernel: &JumpKernel,
    t: f64,
    offsets: &[Site],
    tol: f64,
) -> Result<Vec<f64>> {
    let s = Spectral::new(kernel, tol).derivative_series(&[t], offsets)?;
    Ok(s.into_iter().map(|v| v[0]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_kernel;

    fn nn(d: usize) -> JumpKernel {
        let mut raw = BTreeMap::new();
        for i in 0..d {
            let e = Site::unit(d, i);
            raw.insert(-&e, 0.5 / d as f64);
            raw.insert(e, 0.5 / d as f64);
        }
        validate_kernel(&raw, d).unwrap()
    }

    #[test]
    fn initial_condition_is_an_indicator() {
        let k = nn(2);
        let zs = [Site::new(vec![0, 0]), Site::new(vec![1, 0]), Site::new(vec![2, -1])];
        let p = transition_prob(&k, 0.0, &zs, 1e-13).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!(p[1].abs() < 1e-15 && p[2].abs() < 1e-15);
    }

    #[test]
    fn generator_at_time_zero() {
        let k = nn(1);
        let p = transition_prob_deriv(&k, 0.0, &[Site::from(0), Site::from(1), Site::from(2)], 1e-13)
            .unwrap();
        assert!((p[0] + 1.0).abs() < 1e-14);
        assert!((p[1] - 0.5).abs() < 1e-14);
        assert!(p[2].abs() < 1e-14);
    }

    #[test]
    fn ladder_is_monotone() {
        assert_eq!(ladder_at_least(1), 16);
        assert_eq!(ladder_at_least(17), 24);
        assert_eq!(ladder_at_least(25), 32);
        assert_eq!(ladder_at_least(33), 48);
    }

    #[test]
    fn chernoff_bound_dominates_gaussian_tail_scale() {
        let m = Marginal::of(&nn(1), 0);
        // variance t: bound at 10 sd should be astronomically small
        assert!(m.tail_bound(100.0, 100.0) < 1e-18);
        assert_eq!(m.tail_bound(5.0, 0.0), 1.0);
    }

    #[test]
    fn separable_and_full_grid_routes_agree() {
        // a tiny diagonal jump breaks separability without changing much
        let mut raw = BTreeMap::new();
        for (z, r) in [(vec![1, 0], 0.25), (vec![0, 1], 0.2), (vec![1, 1], 0.05)] {
            raw.insert(-&Site::new(z.clone()), r);
            raw.insert(Site::new(z), r);
        }
        let k = validate_kernel(&raw, 2).unwrap();
        assert!(!k.is_axis_separable());
        let zs = [Site::new(vec![0, 0]), Site::new(vec![1, 1]), Site::new(vec![-1, 2])];
        let p = transition_prob(&k, 3.0, &zs, 1e-12).unwrap();
        // same walk evaluated by brute-force uniformization on a window
        let lam = k.total_rate();
        let r = 30i64;
        let w = (2 * r + 1) as usize;
        let mut dist = vec![0.0; w * w];
        dist[(r as usize) * w + r as usize] = 1.0;
        let mut acc = vec![0.0; w * w];
        let mut weight = (-lam * 3.0f64).exp();
        for n in 0..200 {
            for (a, d) in acc.iter_mut().zip(&dist) {
                *a += weight * d;
            }
            let mut next = vec![0.0; w * w];
            for i in 0..w as i64 {
                for j in 0..w as i64 {
                    let v = dist[(i as usize) * w + j as usize];
                    if v == 0.0 {
                        continue;
                    }
                    for (z, rate) in k.support() {
                        let (ni, nj) = (i + z.coords()[0], j + z.coords()[1]);
                        if (0..w as i64).contains(&ni) && (0..w as i64).contains(&nj) {
                            next[(ni as usize) * w + nj as usize] += v * rate / lam;
                        }
                    }
                }
            }
            dist = next;
            weight *= lam * 3.0 / (n + 1) as f64;
        }
        for (z, pz) in zs.iter().zip(&p) {
            let i = (z.coords()[0] + r) as usize;
            let j = (z.coords()[1] + r) as usize;
            assert!((acc[i * w + j] - pz).abs() < 1e-12, "{z}: {} vs {pz}", acc[i * w + j]);
        }
    }

    #[test]
    fn grid_cap_is_enforced() {
        let mut raw = BTreeMap::new();
        for z in [vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1], vec![1, 1, 1]] {
            raw.insert(-&Site::new(z.clone()), 0.2);
            raw.insert(Site::new(z), 0.2);
        }
        let k = validate_kernel(&raw, 3).unwrap();
        let s = Spectral::with_cap(&k, 1e-13, 1000);
        let err = s.series(&[50.0], &[Site::origin(3)]).unwrap_err();
        assert!(matches!(err, Error::ToleranceUnachievable { .. }));
    }
}
