//! First-passage distribution H_{x,0} of the free walk from x to the
//! origin, by deconvolution of p(t; x, 0) = ∫ p(t-u; 0, 0) dH(u).
//!
//! Integrating by parts turns the first-kind equation into the
//! second-kind equation H(t) + ∫ p'(t-u; 0, 0) H(u) du = p(t; x, 0),
//! which is solved by the product trapezoid rule at steps h and h/2.

use crate::error::{Error, Result};
use crate::model::JumpKernel;
use crate::site::Site;
use crate::volterra::TimeGrid;

use super::spectral::Spectral;

#[derive(Debug, Clone, PartialEq)]
pub struct FirstPassage {
    pub grid: TimeGrid,
    pub x: Site,
    pub cdf: Vec<f64>,
    pub error: Vec<f64>,
    /// Per level, H at every node of that level (step h, then h/2).
    levels: [Vec<f64>; 2],
}

/// p(t; x, y) - ∫ p(t-u; 0, y) dH_{x,0}(u) on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PassageInequality {
    pub grid: TimeGrid,
    pub x: Site,
    pub y: Site,
    pub values: Vec<f64>,
    pub error: Vec<f64>,
}

impl PassageInequality {
    /// Smallest value of `values + error`; nonnegative when the
    /// inequality holds within the discretization estimate.
    pub fn worst_margin(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.error)
            .map(|(v, e)| v + e)
            .fold(f64::INFINITY, f64::min)
    }
}

fn solve_level(p_deriv0: &[f64], target: &[f64], h: f64) -> Vec<f64> {
    let n = target.len();
    let mut out = vec![0.0; n];
    let diag = 1.0 + 0.5 * h * p_deriv0[0];
    for i in 1..n {
        let mut acc = 0.0;
        for k in 1..i {
            acc += p_deriv0[i - k] * out[k];
        }
        out[i] = (target[i] - h * acc) / diag;
    }
    out
}

fn stride(v: &[f64], s: usize) -> Vec<f64> {
    v.iter().step_by(s).copied().collect()
}

pub fn first_passage_cdf(kernel: &JumpKernel, x: &Site, grid: &TimeGrid, tol: f64) -> Result<FirstPassage> {
    if x.is_origin() {
        return Err(Error::InvalidParameter(
            "first passage needs a starting point x ≠ 0".into(),
        ));
    }
    let h = grid.step();
    if 0.5 * h * kernel.total_rate() >= 1.0 {
        return Err(Error::InvalidGrid(format!(
            "step {h} too large for total jump rate {}",
            kernel.total_rate()
        )));
    }
    let fine = grid.halved();
    let spectral = Spectral::new(kernel, tol);
    let times = fine.times();
    let origin = Site::origin(kernel.dimension());
    let p = spectral.series(&times, std::slice::from_ref(x))?;
    let pd = spectral.derivative_series(&times, std::slice::from_ref(&origin))?;

    let coarse_h = solve_level(&stride(&pd[0], 2), &stride(&p[0], 2), h);
    let fine_h = solve_level(&pd[0], &p[0], 0.5 * h);

    let mut cdf = Vec::with_capacity(coarse_h.len());
    let mut error = Vec::with_capacity(coarse_h.len());
    for (i, c) in coarse_h.iter().enumerate() {
        let f = fine_h[2 * i];
        cdf.push((4.0 * f - c) / 3.0);
        error.push((f - c).abs() / 3.0 + tol);
    }
    for i in 1..cdf.len() {
        let step = cdf[i] - cdf[i - 1];
        if step < 0.0 {
            if -step > 2.0 * (error[i] + error[i - 1]) {
                return Err(Error::DeconvolutionInstability(format!(
                    "H decreases by {:e} at t = {}",
                    -step,
                    grid.time(i)
                )));
            }
            cdf[i] = cdf[i - 1];
        }
    }
    if let Some(i) = cdf.iter().position(|&v| v > 1.0 + error[0].max(1e-9)) {
        return Err(Error::DeconvolutionInstability(format!(
            "H exceeds 1 at t = {}",
            grid.time(i)
        )));
    }
    cdf.iter_mut().for_each(|v| *v = v.min(1.0));

    Ok(FirstPassage {
        grid: *grid,
        x: x.clone(),
        cdf,
        error,
        levels: [coarse_h, fine_h],
    })
}

/// Evaluates the first-passage decomposition defect for target y.
pub fn passage_inequality(
    kernel: &JumpKernel,
    passage: &FirstPassage,
    y: &Site,
    tol: f64,
) -> Result<PassageInequality> {
    let grid = passage.grid;
    let fine = grid.halved();
    let spectral = Spectral::new(kernel, tol);
    let times = fine.times();
    let direct = y - &passage.x;
    let p = spectral.series(&times, std::slice::from_ref(&direct))?;
    let pd = spectral.derivative_series(&times, std::slice::from_ref(y))?;
    let jump = if y.is_origin() { 1.0 } else { 0.0 };

    let level = |hs: &[f64], s: usize, step: f64| -> Vec<f64> {
        let pdl = stride(&pd[0], s);
        let pl = stride(&p[0], s);
        (0..hs.len())
            .map(|i| {
                let mut conv = 0.5 * pdl[0] * hs[i];
                for k in 1..i {
                    conv += pdl[i - k] * hs[k];
                }
                pl[i] - (jump * hs[i] + step * conv)
            })
            .collect()
    };
    let coarse = level(&passage.levels[0], 2, grid.step());
    let fine_v = level(&passage.levels[1], 1, 0.5 * grid.step());
    let mut values = Vec::with_capacity(coarse.len());
    let mut error = Vec::with_capacity(coarse.len());
    for (i, c) in coarse.iter().enumerate() {
        let f = fine_v[2 * i];
        values.push((4.0 * f - c) / 3.0);
        error.push((f - c).abs() / 3.0 + tol);
    }
    Ok(PassageInequality {
        grid,
        x: passage.x.clone(),
        y: y.clone(),
        values,
        error,
    })
}
