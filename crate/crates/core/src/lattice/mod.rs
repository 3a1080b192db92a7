//! Free random walk analytics: transition probabilities, Green's
//! functions, escape probability, heat-kernel constants, ρ_d and the
//! first-passage distribution.

mod green;
mod passage;
mod spectral;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

pub use green::{
    escape_probability, green, green_derivative, green_difference_limit, green_difference_limits,
    green_origin, singular_integral, GreenData, GreenValue, Integrand,
};
pub use passage::{first_passage_cdf, passage_inequality, FirstPassage, PassageInequality};
pub use spectral::{
    transition_prob, transition_prob_deriv, Spectral, DEFAULT_GRID_CAP, DEFAULT_TOL,
};

use crate::error::{Error, Result};
use crate::model::{CbrwModel, JumpKernel};
use crate::quad::Estimate;
use crate::site::Site;

/// Leading constants of the local limit theorem for the free walk.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatKernelConstants {
    pub dimension: usize,
    /// γ_d = ((2π)^d |det B|)^{-1/2}
    pub gamma: f64,
    pub hessian: DMatrix<f64>,
    pub neg_hessian_inv: DMatrix<f64>,
}

impl HeatKernelConstants {
    /// γ̃_d(z) = γ_d (z, (-B)^{-1} z) / 2.
    pub fn gamma_tilde(&self, z: &Site) -> f64 {
        let v = DVector::from_iterator(self.dimension, z.coords().iter().map(|&c| c as f64));
        0.5 * self.gamma * v.dot(&(&self.neg_hessian_inv * &v))
    }
}

pub fn heat_kernel_constants(kernel: &JumpKernel) -> HeatKernelConstants {
    let d = kernel.dimension();
    let det = kernel.hessian_det().abs();
    HeatKernelConstants {
        dimension: d,
        gamma: ((2.0 * PI).powi(d as i32) * det).powf(-0.5),
        hessian: kernel.hessian().clone(),
        neg_hessian_inv: kernel.neg_hessian_inv().clone(),
    }
}

/// ρ_d(z) on a set of sites.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoTable {
    pub escape_probability: f64,
    pub beta: f64,
    pub values: BTreeMap<Site, Estimate>,
}

impl RhoTable {
    pub fn get(&self, z: &Site) -> Option<f64> {
        self.values.get(z).map(|e| e.value)
    }
}

/// ρ_d(z) = (1-α)/a - β D(z) for z ≠ 0 and ρ_d(0) = 1.
pub fn rho_table(model: &CbrwModel, sites: &[Site]) -> Result<RhoTable> {
    let kernel = model.kernel();
    let d = green_difference_limits(kernel, sites)?;
    let base = (1.0 - model.alpha()) / kernel.total_rate();
    let beta = model.beta();
    let mut values = BTreeMap::new();
    for (z, dz) in sites.iter().zip(d) {
        let e = if z.is_origin() {
            Estimate::exact(1.0)
        } else {
            Estimate::new(base - beta * dz.value, beta.abs() * dz.error)
        };
        if e.value <= 0.0 {
            return Err(Error::NonpositiveRho {
                site: z.to_string(),
                value: e.value,
            });
        }
        values.insert(z.clone(), e);
    }
    Ok(RhoTable {
        escape_probability: escape_probability(kernel).value,
        beta,
        values,
    })
}

pub fn rho(model: &CbrwModel, z: &Site) -> Result<Estimate> {
    let t = rho_table(model, std::slice::from_ref(z))?;
    Ok(t.values[z])
}
