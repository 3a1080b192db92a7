//! Asymptotic constants C_d(x, y), the limit laws for m, q and the
//! conditional generating function, and convergence diagnostics.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{escape_probability, green_origin, heat_kernel_constants, rho_table, HeatKernelConstants};
use crate::model::{classify_regime, CbrwModel, Regime};
use crate::site::Site;
use crate::volterra::{JIntegral, TimeField};

/// Time profile of the mean: t^{-p}, or 1/(t ln² t) in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayLaw {
    Power(f64),
    LogSquared,
}

impl DecayLaw {
    pub fn for_dimension(d: usize) -> Self {
        match d {
            1 => DecayLaw::Power(1.5),
            2 => DecayLaw::LogSquared,
            _ => DecayLaw::Power(d as f64 / 2.0),
        }
    }

    pub fn eval(self, t: f64) -> f64 {
        match self {
            DecayLaw::Power(p) => t.powf(-p),
            DecayLaw::LogSquared => {
                let l = t.ln();
                1.0 / (t * l * l)
            }
        }
    }

    /// ∫_T^∞ g(t) dt.
    pub fn tail(self, t: f64) -> f64 {
        match self {
            DecayLaw::Power(p) => t.powf(1.0 - p) / (p - 1.0),
            DecayLaw::LogSquared => 1.0 / t.ln(),
        }
    }

    /// ∫_T^∞ g(t)/t dt (an upper bound for the planar law).
    pub fn shifted_tail(self, t: f64) -> f64 {
        match self {
            DecayLaw::Power(p) => t.powf(-p) / p,
            DecayLaw::LogSquared => self.eval(t),
        }
    }

    /// ∫_T^∞ g(t)^e dt for e > 1 (an upper bound for the planar law).
    pub fn power_tail(self, t: f64, e: f64) -> f64 {
        match self {
            DecayLaw::Power(p) => t.powf(1.0 - p * e) / (p * e - 1.0),
            DecayLaw::LogSquared => t.ln().powf(-2.0 * e) * t.powf(1.0 - e) / (e - 1.0),
        }
    }
}

/// Every constant entering the limit theorems for one model.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantsReport {
    pub dimension: usize,
    pub alpha: f64,
    pub beta: f64,
    pub total_rate: f64,
    pub gamma: f64,
    pub escape_probability: f64,
    pub green_zero: Option<f64>,
    #[serde(serialize_with = "site_keys")]
    pub gamma_tilde: BTreeMap<Site, f64>,
    #[serde(serialize_with = "site_keys")]
    pub rho: BTreeMap<Site, f64>,
    pub constants: Vec<PairConstant>,
    pub j_integrals: Vec<JEntry>,
}

fn site_keys<S: serde::Serializer>(map: &BTreeMap<Site, f64>, ser: S) -> std::result::Result<S::Ok, S::Error> {
    ser.collect_map(map.iter().map(|(k, v)| (k.to_string(), v)))
}

#[derive(Debug, Clone, Serialize)]
pub struct PairConstant {
    pub x: Site,
    pub y: Site,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct JEntry {
    pub y: Site,
    pub s: f64,
    pub value: f64,
    pub head_error: f64,
    pub tail_bound: f64,
}

/// Constants for one subcritical model, with ρ_d cached per site.
pub struct Asymptotics<'a> {
    model: &'a CbrwModel,
    heat: HeatKernelConstants,
    escape: f64,
    green_zero: Option<f64>,
    rho: RefCell<BTreeMap<Site, f64>>,
}

impl<'a> Asymptotics<'a> {
    pub fn new(model: &'a CbrwModel) -> Result<Self> {
        let d = model.dimension();
        let heat = heat_kernel_constants(model.kernel());
        let (escape, green_zero) = if d >= 3 {
            let g = green_origin(model.kernel(), 0.0, &[Site::origin(d)])?[0].value;
            (1.0 / (model.kernel().total_rate() * g), Some(g))
        } else {
            (escape_probability(model.kernel()).value, None)
        };
        let report = classify_regime(model, escape);
        if report.regime != Regime::Subcritical {
            return Err(Error::NotSubcritical(format!(
                "E ξ = {} against threshold {}: {}",
                report.mean_offspring, report.threshold, report.regime
            )));
        }
        Ok(Asymptotics {
            model,
            heat,
            escape,
            green_zero,
            rho: RefCell::new(BTreeMap::new()),
        })
    }

    pub fn model(&self) -> &CbrwModel {
        self.model
    }

    pub fn heat(&self) -> &HeatKernelConstants {
        &self.heat
    }

    pub fn escape_probability(&self) -> f64 {
        self.escape
    }

    pub fn green_zero(&self) -> Option<f64> {
        self.green_zero
    }

    pub fn decay_law(&self) -> DecayLaw {
        DecayLaw::for_dimension(self.model.dimension())
    }

    /// Computes ρ_d for several sites in one quadrature pass.
    pub fn prefetch_rho(&self, sites: &[Site]) -> Result<()> {
        let missing: Vec<Site> = {
            let cache = self.rho.borrow();
            let mut m: Vec<Site> = sites.iter().filter(|z| !cache.contains_key(*z)).cloned().collect();
            m.sort();
            m.dedup();
            m
        };
        if missing.is_empty() {
            return Ok(());
        }
        let table = rho_table(self.model, &missing)?;
        let mut cache = self.rho.borrow_mut();
        for (z, e) in table.values {
            cache.insert(z, e.value);
        }
        Ok(())
    }

    pub fn rho(&self, z: &Site) -> Result<f64> {
        self.prefetch_rho(std::slice::from_ref(z))?;
        Ok(self.rho.borrow()[z])
    }

    /// C_d(x, y).
    pub fn c_constant(&self, x: &Site, y: &Site) -> Result<f64> {
        let m = self.model;
        let d = m.dimension();
        let alpha = m.alpha();
        let beta = m.beta();
        let a = m.kernel().total_rate();
        let gamma = self.heat.gamma;
        self.prefetch_rho(&[x.clone(), y.clone()])?;
        let ry = self.rho(y)?;
        let value = match d {
            1 if x.is_origin() => (1.0 - alpha) / (2.0 * a * gamma * PI * beta * beta) * ry,
            1 => {
                let rx = self.rho(x)?;
                rx * ry / (2.0 * gamma * PI * beta * beta)
                    + self.heat.gamma_tilde(x)
                    + self.heat.gamma_tilde(y)
                    - self.heat.gamma_tilde(&(y - x))
            }
            2 if x.is_origin() => (1.0 - alpha) / (a * gamma * beta * beta) * ry,
            2 => self.rho(x)? * ry / (gamma * beta * beta),
            _ => {
                let g0 = self.green_zero.unwrap();
                let den = 1.0 - alpha - a * beta * g0;
                let den = den * den;
                if x.is_origin() {
                    (1.0 - alpha) * a * gamma / den * ry
                } else {
                    a * a * gamma / den * self.rho(x)? * ry
                }
            }
        };
        if !(value > 0.0) {
            return Err(Error::NonpositiveConstant {
                name: format!("C_{d}({x},{y})"),
                value,
            });
        }
        Ok(value)
    }

    /// Leading-order m(t; x, y).
    pub fn theorem1_prediction(&self, x: &Site, y: &Site, t: f64) -> Result<f64> {
        Ok(self.c_constant(x, y)? * self.decay_law().eval(t))
    }

    /// Numerator of the survival asymptotics: C₁(x,y) - C₁(x,0) J(0;y) in
    /// d = 1, C_d(x,0)(ρ_d(y) - J(0;y)) otherwise.
    pub fn survival_constant(&self, x: &Site, y: &Site, j0: f64) -> Result<f64> {
        let origin = Site::origin(self.model.dimension());
        let cx0 = self.c_constant(x, &origin)?;
        let value = if self.model.dimension() == 1 {
            self.c_constant(x, y)? - cx0 * j0
        } else {
            cx0 * (self.rho(y)? - j0)
        };
        if !(value > 0.0) {
            return Err(Error::NonpositiveSurvivalConstant {
                name: format!("survival constant at ({x},{y})"),
                value,
            });
        }
        Ok(value)
    }

    /// Leading-order q(t; x, y) given J(0; y).
    pub fn theorem2_prediction(&self, x: &Site, y: &Site, t: f64, j0: f64) -> Result<f64> {
        Ok(self.survival_constant(x, y, j0)? * self.decay_law().eval(t))
    }

    /// lim E_x(s^{μ(t;y)} | μ(t;y) > 0) given J(0; y) and J(s; y).
    pub fn theorem3_pgf_limit(&self, x: &Site, y: &Site, s: f64, j0: f64, js: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::OutOfDomain {
                name: "s",
                value: s,
                domain: "[0, 1]",
            });
        }
        let (num, den) = if self.model.dimension() == 1 {
            let origin = Site::origin(1);
            let cxy = self.c_constant(x, y)?;
            let cx0 = self.c_constant(x, &origin)?;
            (s * cxy - cx0 * (j0 - js), cxy - cx0 * j0)
        } else {
            let r = self.rho(y)?;
            (s * r - (j0 - js), r - j0)
        };
        if !(den.abs() > 1e-300) || den < 0.0 {
            return Err(Error::DegenerateDenominator(den));
        }
        Ok(num / den)
    }

    /// Gathers constants for the requested pairs and J values.
    pub fn constants_report(&self, pairs: &[(Site, Site)], js: &[(Site, JIntegral)]) -> Result<ConstantsReport> {
        let mut sites: Vec<Site> = pairs.iter().flat_map(|(x, y)| [x.clone(), y.clone()]).collect();
        sites.extend(js.iter().map(|(y, _)| y.clone()));
        self.prefetch_rho(&sites)?;
        let mut constants = Vec::new();
        let mut gamma_tilde = BTreeMap::new();
        for (x, y) in pairs {
            constants.push(PairConstant {
                x: x.clone(),
                y: y.clone(),
                value: self.c_constant(x, y)?,
            });
            for z in [x.clone(), y.clone(), y - x] {
                let g = self.heat.gamma_tilde(&z);
                gamma_tilde.insert(z, g);
            }
        }
        let rho = self
            .rho
            .borrow()
            .iter()
            .filter(|(z, _)| sites.contains(z))
            .map(|(z, v)| (z.clone(), *v))
            .collect();
        Ok(ConstantsReport {
            dimension: self.model.dimension(),
            alpha: self.model.alpha(),
            beta: self.model.beta(),
            total_rate: self.model.kernel().total_rate(),
            gamma: self.heat.gamma,
            escape_probability: self.escape,
            green_zero: self.green_zero,
            gamma_tilde,
            rho,
            constants,
            j_integrals: js
                .iter()
                .map(|(y, j)| JEntry {
                    y: y.clone(),
                    s: j.s,
                    value: j.value(),
                    head_error: j.head.error,
                    tail_bound: j.tail_bound,
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub t: f64,
    pub solved: f64,
    pub predicted: f64,
    pub ratio: f64,
}

/// Ratio of solved to predicted values over increasing times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Fraction of consecutive rows in which |ratio - 1| shrinks.
    pub trend: f64,
    pub monotone: bool,
    pub flag: Option<String>,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        if let Some(f) = &self.flag {
            let _ = writeln!(s, "# {f}");
        }
        s.push_str("t,solved,predicted,ratio\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.12e},{:.12e},{:.12}", r.t, r.solved, r.predicted, r.ratio);
        }
        s
    }
}

pub fn convergence_report(times: &[f64], solved: &[f64], predicted: &[f64], dimension: usize) -> ConvergenceReport {
    let rows: Vec<ConvergenceRow> = times
        .iter()
        .zip(solved)
        .zip(predicted)
        .map(|((&t, &s), &p)| ConvergenceRow {
            t,
            solved: s,
            predicted: p,
            ratio: s / p,
        })
        .collect();
    let pairs = rows.len().saturating_sub(1);
    let improving = rows
        .windows(2)
        .filter(|w| (w[1].ratio - 1.0).abs() <= (w[0].ratio - 1.0).abs())
        .count();
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let monotone = ratios.windows(2).all(|w| w[1] >= w[0]) || ratios.windows(2).all(|w| w[1] <= w[0]);
    ConvergenceReport {
        trend: if pairs == 0 { 1.0 } else { improving as f64 / pairs as f64 },
        monotone: monotone && improving == pairs,
        flag: (dimension == 2).then(|| "slow-log-convergence: no tolerance enforced".to_string()),
        rows,
    }
}

/// Least-squares fit y(t) = A + Σ_k b_k t^{-e_k}.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecadeFit {
    pub asymptote: f64,
    pub coefficients: Vec<f64>,
    pub exponents: Vec<f64>,
    pub rms_residual: f64,
}

pub fn decade_fit(times: &[f64], values: &[f64], exponents: &[f64]) -> Result<DecadeFit> {
    let n = times.len();
    let k = exponents.len() + 1;
    if n < k {
        return Err(Error::InvalidParameter(format!(
            "decade fit needs at least {k} points, got {n}"
        )));
    }
    let a = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { times[i].powf(-exponents[j - 1]) });
    let b = DVector::from_column_slice(values);
    let svd = a.clone().svd(true, true);
    let coef = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::InvalidParameter(format!("decade fit failed: {e}")))?;
    let resid = &a * &coef - &b;
    Ok(DecadeFit {
        asymptote: coef[0],
        coefficients: coef.iter().skip(1).copied().collect(),
        exponents: exponents.to_vec(),
        rms_residual: (resid.norm_squared() / n as f64).sqrt(),
    })
}

/// Fits field(t)/law(t) over the last decade [T/10, T] of the grid.
pub fn extrapolate_field(field: &TimeField, law: DecayLaw, exponents: &[f64], samples: usize) -> Result<DecadeFit> {
    let t_end = field.grid.horizon();
    let t0 = t_end / 10.0;
    let (times, values): (Vec<f64>, Vec<f64>) = (0..samples)
        .map(|i| {
            let t = t0 * (t_end / t0).powf(i as f64 / (samples - 1) as f64);
            (t, field.at(t) / law.eval(t))
        })
        .unzip();
    decade_fit(&times, &values, exponents)
}
