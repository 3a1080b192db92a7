//! Singular torus integrals: G_λ(0,z), dG_λ/dλ and the potential-kernel
//! differences D(z).
//!
//! The integrand is split with a smooth radial cutoff χ. The part
//! (1-χ)g is smooth and periodic, so the plain trapezoid rule on an N^d
//! grid converges faster than any power of N. The part χg lives in a ball
//! around θ = 0 and is integrated in polar coordinates, where the factor
//! r^{d-1} tames the singularity, with radial panels graded geometrically
//! towards the scale √λ.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::JumpKernel;
use crate::quad::{gauss_legendre, Estimate};
use crate::site::Site;

const INNER_RADIUS: f64 = 0.4;
const OUTER_RADIUS: f64 = 3.0;

/// Relative error above which a D(z) evaluation is rejected.
const DIFFERENCE_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrand {
    /// cos(z·θ) / (λ - φ(θ))
    Green(f64),
    /// -cos(z·θ) / (λ - φ(θ))²
    GreenDerivative(f64),
    /// (1 - cos(z·θ)) / (-φ(θ))
    Difference,
}

impl Integrand {
    fn eval(self, neg_phi: f64, cosz: f64) -> f64 {
        match self {
            Integrand::Green(l) => cosz / (l + neg_phi),
            Integrand::GreenDerivative(l) => {
                let den = l + neg_phi;
                -cosz / (den * den)
            }
            Integrand::Difference => (1.0 - cosz) / neg_phi,
        }
    }

    fn lambda(self) -> f64 {
        match self {
            Integrand::Green(l) | Integrand::GreenDerivative(l) => l,
            Integrand::Difference => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Resolution {
    grid: usize,
    radial: usize,
    ts_step: f64,
    angular: usize,
}

fn full_resolution(d: usize, zmax: i64) -> Resolution {
    let grid = match d {
        1 => 2048,
        2 => 512,
        3 => 192,
        4 => 64,
        _ => 24,
    };
    let extra = (4.0 * zmax as f64 * OUTER_RADIUS).ceil() as usize;
    Resolution {
        grid: grid.max(16 * zmax as usize),
        radial: 12,
        ts_step: 1.0 / 32.0,
        angular: match d {
            1 => 1,
            2 => 96 + extra,
            3 => 48 + extra / 2,
            _ => 16 + extra / 4,
        },
    }
}

fn reduced(r: Resolution) -> Resolution {
    Resolution {
        grid: r.grid / 2,
        radial: 8,
        ts_step: 1.0 / 16.0,
        angular: (r.angular * 2).div_ceil(3),
    }
}

/// C^∞ step: 0 for x <= 0, 1 for x >= 1.
fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a / (a + b)
}

/// Radial cutoff χ(r): 1 inside INNER_RADIUS, 0 beyond OUTER_RADIUS.
fn cutoff(r: f64) -> f64 {
    1.0 - smooth_step((r - INNER_RADIUS) / (OUTER_RADIUS - INNER_RADIUS))
}

/// Unit directions with weights integrating over the sphere S^{d-1}.
fn sphere_rule(d: usize, n: usize) -> Vec<(Vec<f64>, f64)> {
    match d {
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        2 => (0..n)
            .map(|k| {
                let psi = 2.0 * PI * k as f64 / n as f64;
                (vec![psi.cos(), psi.sin()], 2.0 * PI / n as f64)
            })
            .collect(),
        _ => {
            // polar angle φ ∈ [0, π] with weight sin^{d-2} φ, then recurse
            let (x, w) = gauss_legendre(n);
            let inner = sphere_rule(d - 1, n * 2);
            let mut out = Vec::with_capacity(n * inner.len());
            for (xi, wi) in x.iter().zip(&w) {
                let phi = 0.5 * PI * (xi + 1.0);
                let (s, c) = phi.sin_cos();
                let weight = 0.5 * PI * wi * s.powi(d as i32 - 2);
                for (dir, wd) in &inner {
                    let mut v = Vec::with_capacity(d);
                    v.push(c);
                    v.extend(dir.iter().map(|u| s * u));
                    out.push((v, weight * wd));
                }
            }
            out
        }
    }
}

/// Radial quadrature on [0, OUTER_RADIUS]: Gauss–Legendre panels on
/// [0, INNER_RADIUS] graded towards `scale`, and tanh-sinh on the cutoff
/// transition, where χ is smooth but not analytic at the ends.
fn radial_rule(scale: f64, nodes: usize, ts_step: f64, zmax: i64) -> (Vec<f64>, Vec<f64>) {
    let levels = if scale > 0.0 {
        8 + (INNER_RADIUS / scale).log2().max(0.0).ceil() as usize
    } else {
        8
    };
    let levels = levels.min(80);
    let mut breaks: Vec<f64> = (0..=levels)
        .map(|k| INNER_RADIUS * 0.5f64.powi(k as i32))
        .collect();
    breaks.push(0.0);
    breaks.reverse();
    let mut r = Vec::new();
    let mut w = Vec::new();
    for pair in breaks.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let n = nodes + (zmax as f64 * (b - a)).ceil() as usize;
        let (x, wx) = gauss_legendre(n);
        for (xi, wi) in x.iter().zip(&wx) {
            r.push(0.5 * (a + b) + 0.5 * (b - a) * xi);
            w.push(0.5 * (b - a) * wi);
        }
    }
    let (a, b) = (INNER_RADIUS, OUTER_RADIUS);
    let half_width = 0.5 * (b - a);
    let step = ts_step / (1.0 + zmax as f64 * (b - a) / 8.0);
    let kmax = (3.5 / step).ceil() as i64;
    for k in -kmax..=kmax {
        let t = k as f64 * step;
        let u = 0.5 * PI * t.sinh();
        let weight = half_width * 0.5 * PI * t.cosh() / (u.cosh() * u.cosh());
        if weight < 1e-300 {
            continue;
        }
        let node = if t <= 0.0 {
            a + (b - a) / (1.0 + (-2.0 * u).exp())
        } else {
            b - (b - a) / (1.0 + (2.0 * u).exp())
        };
        r.push(node);
        w.push(step * weight);
    }
    (r, w)
}

/// Smallest eigenvalue of -B/2, the curvature of -φ at the origin.
fn min_curvature(kernel: &JumpKernel) -> f64 {
    let neg_b = -kernel.hessian().clone();
    0.5 * neg_b.symmetric_eigenvalues().min()
}

fn integrate(kernel: &JumpKernel, kind: Integrand, offsets: &[Site], res: Resolution) -> Vec<f64> {
    let d = kernel.dimension();
    let half = kernel.half_support();
    let zmax = offsets.iter().map(Site::max_abs).max().unwrap_or(0);

    // smooth outer part
    let n = res.grid;
    let nn = n as i64;
    let sin2: Vec<f64> = (0..n)
        .map(|k| {
            let s = (PI * k as f64 / n as f64).sin();
            s * s
        })
        .collect();
    let cos: Vec<f64> = (0..n).map(|k| (2.0 * PI * k as f64 / n as f64).cos()).collect();
    let theta2: Vec<f64> = (0..n)
        .map(|k| {
            let k = if k > n / 2 { k as f64 - n as f64 } else { k as f64 };
            let t = 2.0 * PI * k / n as f64;
            t * t
        })
        .collect();
    let half_z: Vec<(Vec<i64>, f64)> = half
        .iter()
        .map(|(z, r)| (z.coords().to_vec(), 4.0 * r))
        .collect();
    let off_z: Vec<&[i64]> = offsets.iter().map(Site::coords).collect();
    let r_inner2 = INNER_RADIUS * INNER_RADIUS;

    let slabs: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k0| {
            let mut acc = vec![0.0; offsets.len()];
            let mut idx = vec![0i64; d];
            idx[0] = k0 as i64;
            let count = n.pow(d as u32 - 1);
            for _ in 0..count {
                let r2: f64 = idx.iter().map(|&k| theta2[k as usize]).sum();
                if r2 > r_inner2 {
                    let weight = 1.0 - cutoff(r2.sqrt());
                    let neg_phi: f64 = half_z
                        .iter()
                        .map(|(z, r)| {
                            let m: i64 = z.iter().zip(&idx).map(|(a, b)| a * b).sum();
                            r * sin2[m.rem_euclid(nn) as usize]
                        })
                        .sum();
                    for (a, z) in acc.iter_mut().zip(&off_z) {
                        let m: i64 = z.iter().zip(&idx).map(|(a, b)| a * b).sum();
                        *a += weight * kind.eval(neg_phi, cos[m.rem_euclid(nn) as usize]);
                    }
                }
                // advance the trailing axes only
                for v in idx[1..].iter_mut() {
                    *v += 1;
                    if *v < nn {
                        break;
                    }
                    *v = 0;
                }
            }
            acc
        })
        .collect();
    let mut outer = vec![0.0; offsets.len()];
    for slab in &slabs {
        for (o, s) in outer.iter_mut().zip(slab) {
            *o += s;
        }
    }
    let norm = 1.0 / (n as f64).powi(d as i32);
    outer.iter_mut().for_each(|v| *v *= norm);

    // singular inner part in polar coordinates
    let lambda = kind.lambda();
    let scale = if lambda > 0.0 {
        (lambda / min_curvature(kernel)).sqrt()
    } else {
        0.0
    };
    let (rs, rw) = radial_rule(scale, res.radial, res.ts_step, zmax);
    let radial: Vec<(f64, f64)> = rs
        .iter()
        .zip(&rw)
        .map(|(&r, &w)| (r, w * cutoff(r) * r.powi(d as i32 - 1)))
        .collect();
    let dirs = sphere_rule(d, res.angular);
    let dir_sums: Vec<Vec<f64>> = dirs
        .par_iter()
        .map(|(omega, wo)| {
            let proj: Vec<(f64, f64)> = half
                .iter()
                .map(|(z, r)| (0.5 * z.dot(omega), 4.0 * r))
                .collect();
            let oproj: Vec<f64> = offsets.iter().map(|z| z.dot(omega)).collect();
            let mut acc = vec![0.0; offsets.len()];
            for &(r, w) in &radial {
                let neg_phi: f64 = proj
                    .iter()
                    .map(|&(p, rate)| {
                        let s = (r * p).sin();
                        rate * s * s
                    })
                    .sum();
                for (a, &p) in acc.iter_mut().zip(&oproj) {
                    *a += w * kind.eval(neg_phi, (r * p).cos());
                }
            }
            acc.iter_mut().for_each(|v| *v *= wo);
            acc
        })
        .collect();
    let inner_norm = (2.0 * PI).powi(-(d as i32));
    for sums in &dir_sums {
        for (o, s) in outer.iter_mut().zip(sums) {
            *o += inner_norm * s;
        }
    }
    outer
}

/// Torus integral (2π)^{-d} ∫ g(θ) dθ for each offset, with an error
/// estimate from a coarser evaluation.
pub fn singular_integral(kernel: &JumpKernel, kind: Integrand, offsets: &[Site]) -> Vec<Estimate> {
    let zmax = offsets.iter().map(Site::max_abs).max().unwrap_or(0);
    let res = full_resolution(kernel.dimension(), zmax);
    let fine = integrate(kernel, kind, offsets, res);
    let coarse = integrate(kernel, kind, offsets, reduced(res));
    fine.iter()
        .zip(&coarse)
        .map(|(&f, &c)| Estimate::new(f, (f - c).abs()))
        .collect()
}

/// Green's function values G_λ(x, y) for a set of point pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenData {
    pub lambda: f64,
    pub values: Vec<GreenValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreenValue {
    pub x: Site,
    pub y: Site,
    pub value: Estimate,
}

impl GreenData {
    pub fn get(&self, x: &Site, y: &Site) -> Option<Estimate> {
        self.values
            .iter()
            .find(|v| &v.x == x && &v.y == y)
            .map(|v| v.value)
    }
}

fn check_lambda(kernel: &JumpKernel, lambda: f64, critical_dim: usize) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::OutOfDomain {
            name: "lambda",
            value: lambda,
            domain: "[0, ∞)",
        });
    }
    if lambda == 0.0 && kernel.dimension() <= critical_dim {
        return Err(Error::DivergentGreen(kernel.dimension()));
    }
    Ok(())
}

fn check_dims(kernel: &JumpKernel, sites: &[&Site]) -> Result<()> {
    match sites.iter().find(|s| s.dim() != kernel.dimension()) {
        Some(s) => Err(Error::DimensionMismatch {
            expected: kernel.dimension(),
            got: s.dim(),
        }),
        None => Ok(()),
    }
}

/// G_λ(0, z) for each offset.
pub fn green_origin(kernel: &JumpKernel, lambda: f64, offsets: &[Site]) -> Result<Vec<Estimate>> {
    check_lambda(kernel, lambda, 2)?;
    check_dims(kernel, &offsets.iter().collect::<Vec<_>>())?;
    Ok(singular_integral(kernel, Integrand::Green(lambda), offsets))
}

/// G_λ(x, y) = G_λ(0, y - x) for each pair.
pub fn green(kernel: &JumpKernel, lambda: f64, pairs: &[(Site, Site)]) -> Result<GreenData> {
    let flat: Vec<&Site> = pairs.iter().flat_map(|(x, y)| [x, y]).collect();
    check_dims(kernel, &flat)?;
    let offsets: Vec<Site> = pairs.iter().map(|(x, y)| y - x).collect();
    let values = green_origin(kernel, lambda, &offsets)?;
    Ok(GreenData {
        lambda,
        values: pairs
            .iter()
            .zip(values)
            .map(|((x, y), value)| GreenValue {
                x: x.clone(),
                y: y.clone(),
                value,
            })
            .collect(),
    })
}

/// dG_λ(0, z)/dλ. Diverges at λ = 0 up to dimension 4.
pub fn green_derivative(kernel: &JumpKernel, lambda: f64, offsets: &[Site]) -> Result<Vec<Estimate>> {
    check_lambda(kernel, lambda, 4)?;
    check_dims(kernel, &offsets.iter().collect::<Vec<_>>())?;
    Ok(singular_integral(kernel, Integrand::GreenDerivative(lambda), offsets))
}

/// D(z) = lim_{λ→0} (G_λ(0,0) - G_λ(0,z)) for each offset.
pub fn green_difference_limits(kernel: &JumpKernel, offsets: &[Site]) -> Result<Vec<Estimate>> {
    check_dims(kernel, &offsets.iter().collect::<Vec<_>>())?;
    let nonzero: Vec<Site> = offsets.iter().filter(|z| !z.is_origin()).cloned().collect();
    let computed = singular_integral(kernel, Integrand::Difference, &nonzero);
    let mut it = computed.into_iter();
    offsets
        .iter()
        .map(|z| {
            if z.is_origin() {
                return Ok(Estimate::exact(0.0));
            }
            let e = it.next().unwrap();
            if e.error > DIFFERENCE_RTOL * e.value.abs().max(1.0) {
                return Err(Error::QuadratureFailure(format!(
                    "D{z} = {} with error estimate {:e}",
                    e.value, e.error
                )));
            }
            Ok(e)
        })
        .collect()
}

pub fn green_difference_limit(kernel: &JumpKernel, z: &Site) -> Result<Estimate> {
    Ok(green_difference_limits(kernel, std::slice::from_ref(z))?[0])
}

/// h_d = 1/(a G₀(0,0)) for d >= 3, zero for recurrent walks.
pub fn escape_probability(kernel: &JumpKernel) -> Estimate {
    if kernel.dimension() <= 2 {
        return Estimate::exact(0.0);
    }
    let g = singular_integral(kernel, Integrand::Green(0.0), &[Site::origin(kernel.dimension())])[0];
    let h = 1.0 / (kernel.total_rate() * g.value);
    Estimate::new(h, h * g.error / g.value)
}
