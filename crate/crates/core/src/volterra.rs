//! Time-domain solvers for the mean and survival integral equations.
//!
//! Every field is computed on two grids, step h and h/2, with the product
//! trapezoid rule. The reported values are the Richardson combination
//! (4 fine - coarse)/3 at the coarse nodes and the error estimate is
//! |fine - coarse|/3.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::DecayLaw;
use crate::error::{Error, Result};
use crate::lattice::{green_derivative, green_origin, Spectral, DEFAULT_TOL};
use crate::model::{phi_power_bound, CbrwModel};
use crate::quad::Estimate;
use crate::site::Site;

/// Uniform time grid 0, h, 2h, ..., T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    step: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(step: f64, horizon: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidGrid(format!("step must be positive, got {step}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let ratio = horizon / step;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) || steps < 1.0 {
            return Err(Error::InvalidGrid(format!(
                "horizon {horizon} is not a whole number of steps {step}"
            )));
        }
        Ok(TimeGrid {
            step,
            steps: steps as usize,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of intervals; the grid has `steps + 1` nodes.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.step * self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        self.step * i as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }

    pub fn halved(&self) -> TimeGrid {
        TimeGrid {
            step: 0.5 * self.step,
            steps: 2 * self.steps,
        }
    }

    /// Index of the node at time t, if t is a node.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let r = t / self.step;
        let i = r.round();
        if (r - i).abs() <= 1e-9 * r.max(1.0) && i >= 0.0 && i as usize <= self.steps {
            Some(i as usize)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Mean,
    Survival { s: f64 },
    SecondFactorial,
}

/// A functional of the branching system on the nodes of a time grid, for
/// fixed start x and observation point y.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeField {
    pub grid: TimeGrid,
    pub x: Site,
    pub y: Site,
    pub kind: FieldKind,
    pub values: Vec<f64>,
    pub error: Vec<f64>,
    /// Raw trapezoid solutions at steps h and h/2.
    levels: [Vec<f64>; 2],
}

impl TimeField {
    fn from_levels(grid: TimeGrid, x: Site, y: Site, kind: FieldKind, coarse: Vec<f64>, fine: Vec<f64>) -> Self {
        let (values, error) = richardson(&coarse, &fine);
        TimeField {
            grid,
            x,
            y,
            kind,
            values,
            error,
            levels: [coarse, fine],
        }
    }

    /// Raw solution at step h (level 0) or h/2 (level 1).
    pub fn level(&self, i: usize) -> &[f64] {
        &self.levels[i]
    }

    /// Value at a time, linearly interpolated between nodes.
    pub fn at(&self, t: f64) -> f64 {
        interpolate(&self.values, self.grid.step(), t)
    }

    pub fn error_at(&self, t: f64) -> f64 {
        interpolate(&self.error, self.grid.step(), t)
    }

    pub fn last(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn max_error(&self) -> f64 {
        self.error.iter().copied().fold(0.0, f64::max)
    }

    fn same_grid(&self, other: &TimeField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "step {} horizon {} vs step {} horizon {}",
                self.grid.step(),
                self.grid.horizon(),
                other.grid.step(),
                other.grid.horizon()
            )));
        }
        Ok(())
    }
}

fn interpolate(v: &[f64], h: f64, t: f64) -> f64 {
    let r = (t / h).max(0.0);
    let i = (r.floor() as usize).min(v.len() - 1);
    if i + 1 >= v.len() {
        return v[v.len() - 1];
    }
    let w = r - i as f64;
    (1.0 - w) * v[i] + w * v[i + 1]
}

fn richardson(coarse: &[f64], fine: &[f64]) -> (Vec<f64>, Vec<f64>) {
    coarse
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let f = fine[2 * i];
            ((4.0 * f - c) / 3.0, (f - c).abs() / 3.0)
        })
        .unzip()
}

fn stride2(v: &[f64]) -> Vec<f64> {
    v.iter().step_by(2).copied().collect()
}

/// Σ a_i b_i with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Reversed copy of a kernel, so that Σ_{k=1}^{n-1} K_{n-k} f_k is a
/// contiguous dot product.
struct Reversed(Vec<f64>);

impl Reversed {
    fn new(k: &[f64]) -> Self {
        Reversed(k.iter().rev().copied().collect())
    }

    /// Σ_{k=1}^{n-1} K_{n-k} f_k.
    fn interior(&self, f: &[f64], n: usize) -> f64 {
        if n < 2 {
            return 0.0;
        }
        let l = self.0.len();
        dot(&self.0[l - n..l - 1], &f[1..n])
    }
}

/// Trapezoid convolution h Σ' K_{n-k} f_k for every n.
fn convolve(k: &[f64], f: &[f64], h: f64) -> Vec<f64> {
    let rev = Reversed::new(k);
    (0..f.len())
        .into_par_iter()
        .map(|n| {
            if n == 0 {
                return 0.0;
            }
            h * (0.5 * k[n] * f[0] + rev.interior(f, n) + 0.5 * k[0] * f[n])
        })
        .collect()
}

/// p(·; 0, z) and p'(·; 0, z) on the fine grid.
struct KernelSeries {
    p: Vec<f64>,
    dp: Vec<f64>,
}

/// Result of integrating a mean field over [0, ∞).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassIntegral {
    pub head: Estimate,
    /// Asymptotic tail ∫_T^∞ including the finite-T correction.
    pub tail: f64,
    /// Size of the finite-T correction inside `tail`.
    pub tail_correction: f64,
    pub total: f64,
}

/// J(s; y) = ∫₀^∞ Φ(q(s, t; 0, y)) dt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JIntegral {
    pub s: f64,
    /// Grid integral over [0, T].
    pub head: Estimate,
    /// Upper bound on the integral over [T, ∞).
    pub tail_bound: f64,
    /// Fractional order used in Φ(q) <= K₁ q^{1+δ} for the bound.
    pub tail_order: f64,
}

impl JIntegral {
    pub fn value(&self) -> f64 {
        self.head.value
    }
}

/// Asymptotic decay m(t; 0, y) ~ constant · law(t) used for tails.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailModel {
    pub constant: f64,
    pub law: DecayLaw,
}

/// Solver bound to one model and grid; caches transition series.
pub struct VolterraSolver<'a> {
    model: &'a CbrwModel,
    grid: TimeGrid,
    tol: f64,
    halving_tol: Option<f64>,
    cache: RefCell<BTreeMap<Site, Rc<KernelSeries>>>,
}

impl<'a> VolterraSolver<'a> {
    pub fn new(model: &'a CbrwModel, grid: TimeGrid) -> Result<Self> {
        let a = model.kernel().total_rate();
        if grid.step() * a >= 1.0 {
            return Err(Error::InvalidGrid(format!(
                "step {} must be below 1/a = {}",
                grid.step(),
                1.0 / a
            )));
        }
        Ok(VolterraSolver {
            model,
            grid,
            tol: DEFAULT_TOL,
            halving_tol: None,
            cache: RefCell::new(BTreeMap::new()),
        })
    }

    /// Fail with StepTooCoarse when the step-halving estimate exceeds tol.
    pub fn with_halving_tolerance(mut self, tol: f64) -> Self {
        self.halving_tol = Some(tol);
        self
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn model(&self) -> &CbrwModel {
        self.model
    }

    fn series(&self, z: &Site) -> Result<Rc<KernelSeries>> {
        if z.dim() != self.model.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.model.dimension(),
                got: z.dim(),
            });
        }
        if let Some(s) = self.cache.borrow().get(z) {
            return Ok(s.clone());
        }
        let spectral = Spectral::new(self.model.kernel(), self.tol);
        let times = self.grid.halved().times();
        let p = spectral.series(&times, std::slice::from_ref(z))?.pop().unwrap();
        let dp = spectral
            .derivative_series(&times, std::slice::from_ref(z))?
            .pop()
            .unwrap();
        let s = Rc::new(KernelSeries { p, dp });
        self.cache.borrow_mut().insert(z.clone(), s.clone());
        Ok(s)
    }

    fn check_halving(&self, field: &TimeField) -> Result<()> {
        if let Some(tol) = self.halving_tol {
            let est = field.max_error();
            if est > tol {
                return Err(Error::StepTooCoarse { estimate: est, tol });
            }
        }
        Ok(())
    }

    /// c = (1-α)/a - 1.
    fn c(&self) -> f64 {
        (1.0 - self.model.alpha()) / self.model.kernel().total_rate() - 1.0
    }

    /// Kernel c p'(t; 0, y) + β p(t; 0, y) on the fine grid.
    fn forward_kernel(&self, y: &Site) -> Result<Vec<f64>> {
        let s = self.series(y)?;
        let (c, beta) = (self.c(), self.model.beta());
        Ok(s.dp.iter().zip(&s.p).map(|(dp, p)| c * dp + beta * p).collect())
    }

    /// m(·; x, 0) from the forward equation, a linear Volterra equation of
    /// the second kind.
    pub fn solve_mean_origin(&self, x: &Site) -> Result<TimeField> {
        let origin = Site::origin(self.model.dimension());
        let k = self.forward_kernel(&origin)?;
        let source = self.series(&(&origin - x))?;
        let solve = |k: &[f64], g: &[f64], h: f64| -> Vec<f64> {
            let rev = Reversed::new(k);
            let diag = 1.0 - 0.5 * h * k[0];
            let mut m = vec![0.0; g.len()];
            m[0] = g[0];
            for n in 1..g.len() {
                let rhs = g[n] + h * (0.5 * k[n] * m[0] + rev.interior(&m, n));
                m[n] = rhs / diag;
            }
            m
        };
        let h = self.grid.step();
        let fine = solve(&k, &source.p, 0.5 * h);
        let coarse = solve(&stride2(&k), &stride2(&source.p), h);
        let field = TimeField::from_levels(self.grid, x.clone(), origin, FieldKind::Mean, coarse, fine);
        self.check_halving(&field)?;
        Ok(field)
    }

    /// m(·; x, y) by explicit quadrature against m(·; x, 0).
    pub fn extend_mean(&self, mean_origin: &TimeField, y: &Site) -> Result<TimeField> {
        if mean_origin.grid != self.grid || !mean_origin.y.is_origin() || mean_origin.kind != FieldKind::Mean {
            return Err(Error::GridMismatch(
                "extend_mean needs m(·; x, 0) solved on this solver's grid".into(),
            ));
        }
        if y.is_origin() {
            return Ok(mean_origin.clone());
        }
        let x = &mean_origin.x;
        let k = self.forward_kernel(y)?;
        let source = self.series(&(y - x))?;
        let level = |k: &[f64], g: &[f64], m: &[f64], h: f64| -> Vec<f64> {
            let conv = convolve(k, m, h);
            g.iter().zip(conv).map(|(g, c)| g + c).collect()
        };
        let h = self.grid.step();
        let fine = level(&k, &source.p, mean_origin.level(1), 0.5 * h);
        let coarse = level(&stride2(&k), &stride2(&source.p), mean_origin.level(0), h);
        let field = TimeField::from_levels(self.grid, x.clone(), y.clone(), FieldKind::Mean, coarse, fine);
        self.check_halving(&field)?;
        Ok(field)
    }

    /// m(·; x, y), solving the origin column first.
    pub fn mean(&self, x: &Site, y: &Site) -> Result<TimeField> {
        let m0 = self.solve_mean_origin(x)?;
        self.extend_mean(&m0, y)
    }

    /// Residual of the backward equation for m(·; x, y), given m(·; 0, y).
    /// Returned per coarse node, Richardson-combined like the fields.
    pub fn backward_residual(&self, m_xy: &TimeField, m_0y: &TimeField) -> Result<Vec<f64>> {
        m_xy.same_grid(m_0y)?;
        if !m_0y.x.is_origin() || m_0y.y != m_xy.y {
            return Err(Error::GridMismatch(
                "backward residual needs m(·; x, y) and m(·; 0, y)".into(),
            ));
        }
        let (x, y) = (&m_xy.x, &m_xy.y);
        let a = self.model.kernel().total_rate();
        let alpha = self.model.alpha();
        let c1 = 1.0 - a / (1.0 - alpha);
        let c2 = a * self.model.beta() / (1.0 - alpha);
        let px0 = self.series(x)?;
        let pxy = self.series(&(y - x))?;
        let at_origin = if x.is_origin() { 1.0 } else { 0.0 };
        // ∫ p(t-u; x, 0) m'(u; 0, y) du integrated by parts
        let level = |s: usize, lev: usize, h: f64| -> Vec<f64> {
            let pick = |v: &[f64]| -> Vec<f64> { v.iter().step_by(s).copied().collect() };
            let (p, dp, pd) = (pick(&px0.p), pick(&px0.dp), pick(&pxy.p));
            let mxy = m_xy.level(lev);
            let m0y = m_0y.level(lev);
            let conv_dp = convolve(&dp, m0y, h);
            let conv_p = convolve(&p, m0y, h);
            (0..mxy.len())
                .map(|n| {
                    let by_parts = at_origin * m0y[n] - p[n] * m0y[0] + conv_dp[n];
                    mxy[n] - (pd[n] + c1 * by_parts + c2 * conv_p[n])
                })
                .collect()
        };
        let h = self.grid.step();
        let coarse = level(2, 0, h);
        let fine = level(1, 1, 0.5 * h);
        Ok(richardson(&coarse, &fine).0)
    }

    /// q(s, ·; 0, y) from the nonlinear survival equation.
    pub fn solve_survival_origin(
        &self,
        y: &Site,
        s: f64,
        m00: &TimeField,
        m0y: &TimeField,
    ) -> Result<TimeField> {
        check_s(s)?;
        m00.same_grid(m0y)?;
        if m00.grid != self.grid || !m00.x.is_origin() || !m00.y.is_origin() || !m0y.x.is_origin() || &m0y.y != y {
            return Err(Error::GridMismatch(
                "survival solve needs m(·; 0, 0) and m(·; 0, y) on this grid".into(),
            ));
        }
        let model = self.model;
        let level = |m: &[f64], my: &[f64], h: f64| -> Result<Vec<f64>> {
            let rev = Reversed::new(m);
            let n_nodes = my.len();
            let mut q = vec![0.0; n_nodes];
            let mut phi = vec![0.0; n_nodes];
            q[0] = (1.0 - s) * my[0];
            phi[0] = model.phi_unchecked(q[0]);
            for n in 1..n_nodes {
                let bound = (1.0 - s) * my[n];
                let explicit = bound - h * (0.5 * m[n] * phi[0] + rev.interior(&phi, n));
                let w = 0.5 * h * m[0];
                let mut v = if n >= 2 { 2.0 * q[n - 1] - q[n - 2] } else { q[n - 1] };
                v = v.clamp(0.0, bound.max(0.0));
                let mut last_change = f64::INFINITY;
                for _ in 0..2 {
                    let next = (explicit - w * model.phi_unchecked(v)).clamp(0.0, bound.max(0.0));
                    let change = (next - v).abs();
                    if change > last_change && change > 1e-14 * bound.abs().max(1e-300) {
                        return Err(Error::FixedPointDivergence(n as f64 * h));
                    }
                    last_change = change;
                    v = next;
                }
                q[n] = v;
                phi[n] = model.phi_unchecked(v);
            }
            Ok(q)
        };
        let h = self.grid.step();
        let fine = level(m00.level(1), m0y.level(1), 0.5 * h)?;
        let coarse = level(m00.level(0), m0y.level(0), h)?;
        let mut field = TimeField::from_levels(
            self.grid,
            Site::origin(self.model.dimension()),
            y.clone(),
            FieldKind::Survival { s },
            coarse,
            fine,
        );
        enforce_bounds(&mut field, m0y, s)?;
        self.check_halving(&field)?;
        Ok(field)
    }

    /// q(s, ·; x, y) by explicit quadrature against q(s, ·; 0, y).
    pub fn extend_survival(
        &self,
        q_origin: &TimeField,
        mx0: &TimeField,
        mxy: &TimeField,
    ) -> Result<TimeField> {
        let s = match q_origin.kind {
            FieldKind::Survival { s } => s,
            _ => return Err(Error::GridMismatch("expected a survival field".into())),
        };
        q_origin.same_grid(mx0)?;
        q_origin.same_grid(mxy)?;
        if !q_origin.x.is_origin() || !mx0.y.is_origin() || mx0.x != mxy.x || mxy.y != q_origin.y {
            return Err(Error::GridMismatch(
                "extend_survival needs q(s,·;0,y), m(·;x,0) and m(·;x,y)".into(),
            ));
        }
        if mx0.x.is_origin() {
            return Ok(q_origin.clone());
        }
        let model = self.model;
        let level = |lev: usize, h: f64| -> Vec<f64> {
            let phi: Vec<f64> = q_origin.level(lev).iter().map(|&q| model.phi_unchecked(q)).collect();
            let conv = convolve(mx0.level(lev), &phi, h);
            mxy.level(lev)
                .iter()
                .zip(conv)
                .map(|(m, c)| ((1.0 - s) * m - c).clamp(0.0, (1.0 - s) * m))
                .collect()
        };
        let h = self.grid.step();
        let fine = level(1, 0.5 * h);
        let coarse = level(0, h);
        let mut field = TimeField::from_levels(
            self.grid,
            mx0.x.clone(),
            q_origin.y.clone(),
            FieldKind::Survival { s },
            coarse,
            fine,
        );
        enforce_bounds(&mut field, mxy, s)?;
        Ok(field)
    }

    /// E_x μ(t;y)(μ(t;y)-1) = α f''(1) ∫ m(t-u; x, 0) m(u; 0, y)² du.
    pub fn second_factorial_moment(&self, mx0: &TimeField, m0y: &TimeField) -> Result<TimeField> {
        let f2 = self
            .model
            .offspring()
            .second_factorial()
            .ok_or(Error::InfiniteSecondMoment)?;
        mx0.same_grid(m0y)?;
        if !mx0.y.is_origin() || !m0y.x.is_origin() {
            return Err(Error::GridMismatch(
                "second factorial moment needs m(·; x, 0) and m(·; 0, y)".into(),
            ));
        }
        let scale = self.model.alpha() * f2;
        let level = |lev: usize, h: f64| -> Vec<f64> {
            let sq: Vec<f64> = m0y.level(lev).iter().map(|m| m * m).collect();
            convolve(mx0.level(lev), &sq, h)
                .into_iter()
                .map(|v| (scale * v).max(0.0))
                .collect()
        };
        let h = self.grid.step();
        let fine = level(1, 0.5 * h);
        let coarse = level(0, h);
        Ok(TimeField::from_levels(
            self.grid,
            mx0.x.clone(),
            m0y.y.clone(),
            FieldKind::SecondFactorial,
            coarse,
            fine,
        ))
    }

    /// J(s; y) with a rigorous-form tail bound beyond the horizon.
    ///
    /// `tail` describes the decay of m(·; 0, y); `m0y` supplies its value
    /// at T to calibrate the constant.
    pub fn j_integral(&self, q_origin: &TimeField, m0y: &TimeField, tail: TailModel) -> Result<JIntegral> {
        let s = match q_origin.kind {
            FieldKind::Survival { s } => s,
            _ => return Err(Error::GridMismatch("expected a survival field".into())),
        };
        q_origin.same_grid(m0y)?;
        let model = self.model;
        let head_level = |lev: usize, h: f64| -> f64 {
            let q = q_origin.level(lev);
            let phi: Vec<f64> = q.iter().map(|&v| model.phi_unchecked(v)).collect();
            h * (phi.iter().sum::<f64>() - 0.5 * (phi[0] + phi[phi.len() - 1]))
        };
        let h = self.grid.step();
        let coarse = head_level(0, h);
        let fine = head_level(1, 0.5 * h);
        let head = Estimate::new((4.0 * fine - coarse) / 3.0, (fine - coarse).abs() / 3.0);

        let t_end = self.grid.horizon();
        let kappa = (m0y.last() / (tail.constant * tail.law.eval(t_end))).max(1.0);
        let amplitude = (1.0 - s) * kappa * tail.constant;
        // Φ(q) <= K q^{1+δ} holds for the model's δ and, when f''(1) is
        // finite, also for δ = 1 with K = α f''(1)/2; both bound the tail.
        let mut orders = vec![self.model.delta()];
        if self.model.offspring().second_factorial().is_some() && self.model.delta() < 1.0 {
            orders.push(1.0);
        }
        let (tail_bound, tail_order) = orders
            .into_iter()
            .map(|d| {
                let k1 = if d == 1.0 {
                    0.5 * model.alpha() * model.offspring().second_factorial().unwrap()
                } else {
                    phi_power_bound(model, d)
                };
                let b = k1 * amplitude.powf(1.0 + d) * tail.law.power_tail(t_end, 1.0 + d);
                (b, d)
            })
            .fold((f64::INFINITY, 0.0), |acc, v| if v.0 < acc.0 { v } else { acc });
        if s < 1.0 && tail_bound > 0.01 * head.value {
            return Err(Error::TailBoundTooLarge {
                tail: tail_bound,
                head: head.value,
            });
        }
        Ok(JIntegral {
            s,
            head,
            tail_bound: if s == 1.0 { 0.0 } else { tail_bound },
            tail_order,
        })
    }

    /// ∫₀^∞ m(u; x, y) du: grid integral plus the asymptotic tail with a
    /// one-term correction matched to the solved value at T.
    pub fn mass_integral(&self, field: &TimeField, tail: TailModel) -> MassIntegral {
        let h = self.grid.step();
        let trap = |v: &[f64], h: f64| h * (v.iter().sum::<f64>() - 0.5 * (v[0] + v[v.len() - 1]));
        let coarse = trap(field.level(0), h);
        let fine = trap(field.level(1), 0.5 * h);
        let head = Estimate::new((4.0 * fine - coarse) / 3.0, (fine - coarse).abs() / 3.0);
        let t_end = self.grid.horizon();
        let leading = tail.constant * tail.law.tail(t_end);
        let ratio = field.last() / (tail.constant * tail.law.eval(t_end));
        let correction = tail.constant * (ratio - 1.0) * t_end * tail.law.shifted_tail(t_end);
        let total_tail = leading + correction;
        MassIntegral {
            head,
            tail: total_tail,
            tail_correction: correction,
            total: head.value + total_tail,
        }
    }
}

fn check_s(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::OutOfDomain {
            name: "s",
            value: s,
            domain: "[0, 1]",
        });
    }
    Ok(())
}

fn enforce_bounds(field: &mut TimeField, m: &TimeField, s: f64) -> Result<()> {
    for i in 0..field.values.len() {
        let bound = (1.0 - s) * m.values[i];
        let slack = field.error[i] + (1.0 - s) * m.error[i] + 1e-15;
        let q = field.values[i];
        if q < -slack || q > bound + slack {
            return Err(Error::BoundViolation {
                t: field.grid.time(i),
                q,
                bound,
            });
        }
        field.values[i] = q.clamp(0.0, bound.max(0.0));
    }
    Ok(())
}

/// Closed-form m̂(λ) = G / (1 - c(λG - 1) - βG) with G = G_λ(0,0).
pub fn mhat_laplace(model: &CbrwModel, lambda: f64) -> Result<Estimate> {
    let d = model.dimension();
    let beta = model.beta();
    let a = model.kernel().total_rate();
    let c = (1.0 - model.alpha()) / a - 1.0;
    if lambda == 0.0 && d <= 2 {
        // G → ∞ with λG → 0, so m̂ → -1/β
        if beta < 0.0 {
            return Ok(Estimate::exact(-1.0 / beta));
        }
        return Err(Error::DenominatorVanishes(0.0));
    }
    let g = green_origin(model.kernel(), lambda, &[Site::origin(d)])?[0];
    let den = 1.0 - c * (lambda * g.value - 1.0) - beta * g.value;
    if den <= 0.0 {
        return Err(Error::DenominatorVanishes(lambda));
    }
    // dm̂/dG = (1 + c) / den²
    let deriv = (1.0 + c) / (den * den);
    Ok(Estimate::new(g.value / den, deriv.abs() * g.error))
}

/// m̂'(λ) = ((1-α)/a G' + c G²) / ((1-α)/a - cλG - βG)².
pub fn mhat_derivative(model: &CbrwModel, lambda: f64) -> Result<Estimate> {
    let d = model.dimension();
    if !(lambda > 0.0) {
        return Err(Error::OutOfDomain {
            name: "lambda",
            value: lambda,
            domain: "(0, ∞)",
        });
    }
    let origin = [Site::origin(d)];
    let g = green_origin(model.kernel(), lambda, &origin)?[0];
    let gp = green_derivative(model.kernel(), lambda, &origin)?[0];
    let a = model.kernel().total_rate();
    let b = (1.0 - model.alpha()) / a;
    let c = b - 1.0;
    let den = b - c * lambda * g.value - model.beta() * g.value;
    if den <= 0.0 {
        return Err(Error::DenominatorVanishes(lambda));
    }
    let num = b * gp.value + c * g.value * g.value;
    let value = num / (den * den);
    let err = (b * gp.error + 2.0 * c.abs() * g.value * g.error) / (den * den)
        + 2.0 * value.abs() * (c.abs() * lambda + model.beta().abs()) * g.error / den;
    Ok(Estimate::new(value, err))
}

/// ∫₀^T e^{-λt} v(t) dt over a solved field, Richardson-combined.
pub fn numerical_laplace(field: &TimeField, lambda: f64) -> Estimate {
    let trap = |v: &[f64], h: f64| -> f64 {
        let n = v.len();
        let mut s = 0.0;
        for (i, x) in v.iter().enumerate() {
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            s += w * (-lambda * h * i as f64).exp() * x;
        }
        h * s
    };
    let h = field.grid.step();
    let coarse = trap(field.level(0), h);
    let fine = trap(field.level(1), 0.5 * h);
    Estimate::new((4.0 * fine - coarse) / 3.0, (fine - coarse).abs() / 3.0)
}
