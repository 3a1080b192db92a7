//! The catalytic branching random walk model: jump kernel, offspring law,
//! catalyst parameter, and the offspring functionals built on them.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;
use crate::site::Site;

/// Relative tolerance used when two rates of a ± pair are compared.
const SYMMETRY_RTOL: f64 = 1e-12;

/// Relative width of the critical band in [`classify_regime`].
pub const CRITICAL_RTOL: f64 = 1e-10;

/// Offspring draws are truncated at this upper quantile.
const SAMPLING_QUANTILE_DEFECT: f64 = 1e-15;

/// Symmetric, homogeneous, finite-support jump rates a(z) of the walk
/// outside the catalyst, with the derived diagonal and Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpKernel {
    dimension: usize,
    rates: BTreeMap<Site, f64>,
    total_rate: f64,
    hessian: DMatrix<f64>,
    hessian_det: f64,
    neg_hessian_inv: DMatrix<f64>,
    axis_separable: bool,
}

impl JumpKernel {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// a = -a(0), the total jump rate away from any non-catalyst site.
    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    /// a(0) = -a.
    pub fn diagonal(&self) -> f64 {
        -self.total_rate
    }

    /// a(z) for any z, including the diagonal at z = 0.
    pub fn rate(&self, z: &Site) -> f64 {
        if z.is_origin() {
            self.diagonal()
        } else {
            self.rates.get(z).copied().unwrap_or(0.0)
        }
    }

    /// Nonzero offsets with their rates, both members of every ± pair.
    pub fn support(&self) -> impl Iterator<Item = (&Site, f64)> {
        self.rates.iter().map(|(z, r)| (z, *r))
    }

    pub fn support_len(&self) -> usize {
        self.rates.len()
    }

    /// B = φ''(0), B_ij = -Σ a(z) z_i z_j.
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn hessian_det(&self) -> f64 {
        self.hessian_det
    }

    /// (-B)^{-1}.
    pub fn neg_hessian_inv(&self) -> &DMatrix<f64> {
        &self.neg_hessian_inv
    }

    /// True when every offset lies on a coordinate axis, so that the symbol
    /// splits into a sum of one-dimensional symbols.
    pub fn is_axis_separable(&self) -> bool {
        self.axis_separable
    }

    /// φ(θ) = Σ_z a(z) cos(z·θ).
    pub fn symbol(&self, theta: &[f64]) -> f64 {
        -self.neg_symbol(theta)
    }

    /// -φ(θ) = Σ_{z≠0} 2 a(z) sin²(z·θ/2), accurate near θ = 0.
    pub fn neg_symbol(&self, theta: &[f64]) -> f64 {
        self.rates
            .iter()
            .map(|(z, r)| {
                let s = (0.5 * z.dot(theta)).sin();
                2.0 * r * s * s
            })
            .sum()
    }

    /// The same walk run at `factor` times the speed.
    pub fn scaled(&self, factor: f64) -> Result<JumpKernel> {
        let raw: BTreeMap<Site, f64> = self
            .rates
            .iter()
            .map(|(z, r)| (z.clone(), r * factor))
            .collect();
        validate_kernel(&raw, self.dimension)
    }

    /// One representative (z, a(z)) per ± pair.
    pub fn half_support(&self) -> Vec<(Site, f64)> {
        self.rates
            .iter()
            .filter(|(z, _)| z.canonical() == **z)
            .map(|(z, r)| (z.clone(), *r))
            .collect()
    }
}

/// Validates raw jump rates and derives a(0), a and B.
///
/// Zero rates are dropped. The map must contain both members of every
/// ± pair with equal rates.
pub fn validate_kernel(raw: &BTreeMap<Site, f64>, dimension: usize) -> Result<JumpKernel> {
    if dimension == 0 {
        return Err(Error::InvalidKernel("dimension must be at least 1".into()));
    }
    let mut rates = BTreeMap::new();
    for (z, &r) in raw {
        if z.dim() != dimension {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                got: z.dim(),
            });
        }
        if z.is_origin() {
            return Err(Error::InvalidKernel(
                "the zero offset is derived from conservativity and may not be given".into(),
            ));
        }
        if !r.is_finite() || r < 0.0 {
            return Err(Error::InvalidKernel(format!("rate {r} at offset {z}")));
        }
        if r > 0.0 {
            rates.insert(z.clone(), r);
        }
    }
    if rates.is_empty() {
        return Err(Error::EmptyKernel);
    }
    for (z, &r) in &rates {
        let mirror = rates.get(&-z).copied().unwrap_or(0.0);
        if (r - mirror).abs() > SYMMETRY_RTOL * r.max(mirror) {
            return Err(Error::AsymmetricKernel {
                offset: z.to_string(),
                rate: r,
                mirror,
            });
        }
    }
    let (rank, index) = lattice_rank_and_index(rates.keys().map(|z| z.coords()), dimension);
    if rank != dimension || index != 1 {
        return Err(Error::ReducibleKernel {
            dimension,
            rank,
            index,
        });
    }

    let total_rate: f64 = rates.values().sum();
    let mut hessian = DMatrix::zeros(dimension, dimension);
    for (z, &r) in &rates {
        let c = z.coords();
        for i in 0..dimension {
            for j in 0..dimension {
                hessian[(i, j)] -= r * (c[i] * c[j]) as f64;
            }
        }
    }
    let neg = -hessian.clone();
    let chol = neg.clone().cholesky().ok_or(Error::SingularHessian)?;
    let neg_hessian_inv = chol.inverse();
    let hessian_det = hessian.determinant();
    let axis_separable = rates
        .keys()
        .all(|z| z.coords().iter().filter(|&&c| c != 0).count() == 1);

    Ok(JumpKernel {
        dimension,
        rates,
        total_rate,
        hessian,
        hessian_det,
        neg_hessian_inv,
        axis_separable,
    })
}

/// Rank and index of the sublattice of Z^d spanned by the given vectors,
/// by integer row reduction to echelon form. Index 0 means rank deficient.
fn lattice_rank_and_index<'a>(
    vectors: impl Iterator<Item = &'a [i64]>,
    dimension: usize,
) -> (usize, i64) {
    let mut rows: Vec<Vec<i64>> = vectors.map(|v| v.to_vec()).collect();
    let mut pivot_row = 0;
    let mut index: i64 = 1;
    for col in 0..dimension {
        loop {
            // smallest nonzero |entry| in this column at or below pivot_row
            let best = (pivot_row..rows.len())
                .filter(|&r| rows[r][col] != 0)
                .min_by_key(|&r| rows[r][col].abs());
            let Some(best) = best else { break };
            rows.swap(pivot_row, best);
            let p = rows[pivot_row][col];
            let mut done = true;
            for r in pivot_row + 1..rows.len() {
                let q = rows[r][col] / p;
                if q != 0 {
                    for c in 0..dimension {
                        rows[r][c] -= q * rows[pivot_row][c];
                    }
                }
                if rows[r][col] != 0 {
                    done = false;
                }
            }
            if done {
                break;
            }
        }
        if pivot_row < rows.len() && rows[pivot_row][col] != 0 {
            index = index.saturating_mul(rows[pivot_row][col].abs());
            pivot_row += 1;
        }
    }
    let rank = pivot_row;
    if rank < dimension {
        (rank, 0)
    } else {
        (rank, index)
    }
}

/// Distribution of the offspring number ξ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffspringLaw {
    /// f_0, ..., f_K.
    Table(Vec<f64>),
    /// f_k = (1 - r) r^k.
    Geometric(f64),
    /// Poisson with the given mean.
    Poisson(f64),
}

impl OffspringLaw {
    pub fn table(probs: Vec<f64>) -> Result<Self> {
        let law = OffspringLaw::Table(probs);
        law.validate()?;
        Ok(law)
    }

    pub fn geometric(r: f64) -> Result<Self> {
        let law = OffspringLaw::Geometric(r);
        law.validate()?;
        Ok(law)
    }

    pub fn poisson(mean: f64) -> Result<Self> {
        let law = OffspringLaw::Poisson(mean);
        law.validate()?;
        Ok(law)
    }

    /// ξ ≡ k.
    pub fn deterministic(k: usize) -> Self {
        let mut probs = vec![0.0; k + 1];
        probs[k] = 1.0;
        OffspringLaw::Table(probs)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OffspringLaw::Table(p) => {
                if p.is_empty() {
                    return Err(Error::InvalidOffspring("empty probability table".into()));
                }
                if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
                    return Err(Error::InvalidOffspring(
                        "offspring probabilities must be nonnegative".into(),
                    ));
                }
                let total: f64 = p.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidOffspring(format!(
                        "offspring probabilities must sum to 1 (got {total})"
                    )));
                }
            }
            OffspringLaw::Geometric(r) => {
                if !(*r >= 0.0 && *r < 1.0) {
                    return Err(Error::InvalidOffspring(format!(
                        "geometric parameter must lie in [0, 1), got {r}"
                    )));
                }
            }
            OffspringLaw::Poisson(l) => {
                if !(l.is_finite() && *l >= 0.0) {
                    return Err(Error::InvalidOffspring(format!(
                        "poisson mean must be finite and nonnegative, got {l}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// f(s) = E s^ξ.
    pub fn pgf(&self, s: f64) -> f64 {
        match self {
            OffspringLaw::Table(p) => p.iter().rev().fold(0.0, |acc, &f| acc * s + f),
            OffspringLaw::Geometric(r) => (1.0 - r) / (1.0 - r * s),
            OffspringLaw::Poisson(l) => (l * (s - 1.0)).exp(),
        }
    }

    /// f'(1) = E ξ.
    pub fn mean(&self) -> f64 {
        match self {
            OffspringLaw::Table(p) => p.iter().enumerate().map(|(k, f)| k as f64 * f).sum(),
            OffspringLaw::Geometric(r) => r / (1.0 - r),
            OffspringLaw::Poisson(l) => *l,
        }
    }

    /// f''(1) = E ξ(ξ - 1); `None` if infinite.
    pub fn second_factorial(&self) -> Option<f64> {
        Some(match self {
            OffspringLaw::Table(p) => p
                .iter()
                .enumerate()
                .map(|(k, f)| (k * k.saturating_sub(1)) as f64 * f)
                .sum(),
            OffspringLaw::Geometric(r) => {
                let c = r / (1.0 - r);
                2.0 * c * c
            }
            OffspringLaw::Poisson(l) => l * l,
        })
    }

    pub fn pmf(&self, k: u64) -> f64 {
        match self {
            OffspringLaw::Table(p) => p.get(k as usize).copied().unwrap_or(0.0),
            OffspringLaw::Geometric(r) => (1.0 - r) * r.powi(k as i32),
            OffspringLaw::Poisson(l) => {
                if *l == 0.0 {
                    return if k == 0 { 1.0 } else { 0.0 };
                }
                let k = k as f64;
                (k * l.ln() - l - statrs::function::gamma::ln_gamma(k + 1.0)).exp()
            }
        }
    }

    /// f(1 - u) - 1 + f'(1) u, evaluated without cancellation for small u.
    pub fn centered_pgf(&self, u: f64) -> f64 {
        match self {
            OffspringLaw::Table(p) => {
                if u >= 1.0 {
                    return p[0] - 1.0 + self.mean();
                }
                let log_term = quad::log1m_plus(u);
                let neg_log = -(-u).ln_1p();
                p.iter()
                    .enumerate()
                    .skip(2)
                    .map(|(k, f)| {
                        let k = k as f64;
                        f * (quad::exp_defect(k * neg_log) + k * log_term)
                    })
                    .sum::<f64>()
                    .max(0.0)
            }
            OffspringLaw::Geometric(r) => {
                let c = r / (1.0 - r);
                let cu = c * u;
                cu * cu / (1.0 + cu)
            }
            OffspringLaw::Poisson(l) => quad::exp_defect(l * u),
        }
    }

    /// Inverse-CDF draw from a uniform `u` in [0, 1), truncated at the
    /// 1 - 1e-15 quantile for infinite-support laws. Monotone in `u`, so two
    /// stochastically ordered laws fed the same `u` give ordered draws.
    pub fn sample_inverse(&self, u: f64) -> u64 {
        match self {
            OffspringLaw::Table(p) => {
                let mut acc = 0.0;
                for (k, f) in p.iter().enumerate() {
                    acc += f;
                    if u < acc {
                        return k as u64;
                    }
                }
                // u fell in the rounding gap above the last partial sum
                p.iter().rposition(|&f| f > 0.0).unwrap_or(0) as u64
            }
            OffspringLaw::Geometric(r) => {
                if *r == 0.0 {
                    return 0;
                }
                let cap = (SAMPLING_QUANTILE_DEFECT.ln() / r.ln()).ceil() as u64;
                // P(ξ <= k) = 1 - r^{k+1}
                let k = ((-u).ln_1p() / r.ln()).floor();
                (k.max(0.0) as u64).min(cap)
            }
            OffspringLaw::Poisson(l) => {
                let mut k = 0u64;
                let mut pk = (-l).exp();
                let mut acc = pk;
                while u >= acc && acc < 1.0 - SAMPLING_QUANTILE_DEFECT {
                    k += 1;
                    pk *= l / k as f64;
                    acc += pk;
                    if pk == 0.0 && acc < u {
                        break;
                    }
                }
                k
            }
        }
    }
}

impl fmt::Display for OffspringLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OffspringLaw::Table(p) => write!(f, "table{p:?}"),
            OffspringLaw::Geometric(r) => write!(f, "geometric({r})"),
            OffspringLaw::Poisson(l) => write!(f, "poisson({l})"),
        }
    }
}

/// Kernel + catalyst parameter α + offspring law + fractional order δ.
#[derive(Debug, Clone, PartialEq)]
pub struct CbrwModel {
    kernel: JumpKernel,
    alpha: f64,
    offspring: OffspringLaw,
    delta: f64,
}

impl CbrwModel {
    pub fn new(kernel: JumpKernel, alpha: f64, offspring: OffspringLaw, delta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(
                "alpha must lie strictly between 0 and 1".into(),
            ));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidParameter(
                "delta must lie in (0, 1]".into(),
            ));
        }
        offspring.validate()?;
        if !offspring.mean().is_finite() {
            return Err(Error::InvalidOffspring("mean offspring number is infinite".into()));
        }
        Ok(CbrwModel {
            kernel,
            alpha,
            offspring,
            delta,
        })
    }

    pub fn kernel(&self) -> &JumpKernel {
        &self.kernel
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn offspring(&self) -> &OffspringLaw {
        &self.offspring
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dimension(&self) -> usize {
        self.kernel.dimension
    }

    /// β = α (f'(1) - 1).
    pub fn beta(&self) -> f64 {
        self.alpha * (self.offspring.mean() - 1.0)
    }

    /// The same model with a different offspring law.
    pub fn with_offspring(&self, offspring: OffspringLaw) -> Result<Self> {
        CbrwModel::new(self.kernel.clone(), self.alpha, offspring, self.delta)
    }

    /// Φ(s) = α (f(1 - s) - 1 + f'(1) s) for s in [0, 1].
    pub fn phi(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::OutOfDomain {
                name: "s",
                value: s,
                domain: "[0, 1]",
            });
        }
        Ok(self.phi_unchecked(s))
    }

    /// Φ without the domain check; arguments are clamped to [0, 1].
    pub fn phi_unchecked(&self, s: f64) -> f64 {
        self.alpha * self.offspring.centered_pgf(s.clamp(0.0, 1.0))
    }

    /// Φ'(s) = α f'(1) - α f'(1 - s).
    pub fn phi_derivative(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        let fprime = match &self.offspring {
            OffspringLaw::Table(p) => {
                let x = 1.0 - s;
                p.iter()
                    .enumerate()
                    .skip(1)
                    .rev()
                    .fold(0.0, |acc, (k, f)| acc * x + k as f64 * f)
            }
            OffspringLaw::Geometric(r) => {
                let d = 1.0 - r * (1.0 - s);
                (1.0 - r) * r / (d * d)
            }
            OffspringLaw::Poisson(l) => l * (-l * s).exp(),
        };
        self.alpha * (self.offspring.mean() - fprime)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Subcritical => "subcritical",
            Regime::Critical => "critical",
            Regime::Supercritical => "supercritical",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub threshold: f64,
    pub mean_offspring: f64,
    pub regime: Regime,
    pub escape_probability: f64,
    pub tolerance: f64,
}

/// Compares E ξ with 1 + h_d α⁻¹ (1 - α).
pub fn classify_regime(model: &CbrwModel, escape_probability: f64) -> RegimeReport {
    let threshold = 1.0 + escape_probability * (1.0 - model.alpha) / model.alpha;
    let mean = model.offspring.mean();
    let band = CRITICAL_RTOL * threshold;
    let regime = if mean < threshold - band {
        Regime::Subcritical
    } else if mean <= threshold + band {
        Regime::Critical
    } else {
        Regime::Supercritical
    };
    RegimeReport {
        threshold,
        mean_offspring: mean,
        regime,
        escape_probability,
        tolerance: CRITICAL_RTOL,
    }
}

/// E ξ^{1+δ} = Σ k^{1+δ} f_k, truncating infinite-support laws once the
/// geometric tail bound drops below 1e-12 of the partial sum.
pub fn fractional_moment_direct(law: &OffspringLaw, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::OutOfDomain {
            name: "delta",
            value: delta,
            domain: "(0, 1]",
        });
    }
    let power = 1.0 + delta;
    if let OffspringLaw::Table(p) = law {
        return Ok(p
            .iter()
            .enumerate()
            .map(|(k, f)| (k as f64).powf(power) * f)
            .sum());
    }
    const MAX_TERMS: u64 = 1_000_000;
    let mut sum = 0.0;
    for k in 1..MAX_TERMS {
        let term = (k as f64).powf(power) * law.pmf(k);
        sum += term;
        // t_{j+1}/t_j is decreasing in j for both laws, so a ratio below one
        // at j = k+1 bounds the whole remaining tail geometrically.
        let kn = (k + 1) as f64;
        let ratio = match law {
            OffspringLaw::Geometric(r) => r * ((kn + 1.0) / kn).powf(power),
            OffspringLaw::Poisson(l) => l / (kn + 1.0) * ((kn + 1.0) / kn).powf(power),
            OffspringLaw::Table(_) => unreachable!(),
        };
        if ratio < 1.0 {
            let next = kn.powf(power) * law.pmf(k + 1);
            let tail = next / (1.0 - ratio);
            if tail <= 1e-12 * sum || (sum == 0.0 && next == 0.0) {
                return Ok(sum + next);
            }
        }
    }
    Err(Error::NonconvergentSeries(format!(
        "tail bound not met after {MAX_TERMS} terms for {law}"
    )))
}

/// E ξ^{1+δ} through the pgf alone:
/// δ(1+δ)/Γ(1-δ) ∫₀^∞ [Φ(1-e^{-v}) + α f'(1)(e^{-v}-1+v)] / (α v^{2+δ}) dv.
pub fn fractional_moment_klar(model: &CbrwModel, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::DeltaOutOfRange(delta));
    }
    let law = &model.offspring;
    let mean = law.mean();
    // integrand numerator divided by α
    let numer = |v: f64| law.centered_pgf(-(-v).exp_m1()) + mean * quad::exp_defect(v);

    // [0, 1] with v = w^{1/(1-δ)}: v^{-δ} dv becomes dw / (1-δ)
    let p = 1.0 / (1.0 - delta);
    let head = quad::adaptive(
        |w: f64| {
            let v = w.powf(p);
            if v == 0.0 {
                return 0.0;
            }
            numer(v) / (v * v) * p
        },
        0.0,
        1.0,
        1e-14,
        1e-12,
        4000,
    )?;
    // [1, ∞) with v = w^{-1/δ}: v^{-2-δ} dv becomes w^{1/δ} dw / δ
    let q = 1.0 / delta;
    let tail = quad::adaptive(
        |w: f64| {
            if w == 0.0 {
                return 0.0;
            }
            let v = w.powf(-q);
            numer(v) * w.powf(q) * q
        },
        0.0,
        1.0,
        1e-14,
        1e-12,
        4000,
    )?;
    let prefactor = delta * (1.0 + delta) / statrs::function::gamma::gamma(1.0 - delta);
    Ok(prefactor * (head.0 + tail.0))
}

/// E ξ^{1+δ} from the pgf: the Klar integral for δ < 1 and
/// f''(1) + f'(1) at δ = 1.
pub fn fractional_moment(model: &CbrwModel, delta: f64) -> Result<f64> {
    if delta == 1.0 {
        let f2 = model
            .offspring
            .second_factorial()
            .ok_or(Error::InfiniteSecondMoment)?;
        Ok(f2 + model.offspring.mean())
    } else {
        fractional_moment_klar(model, delta)
    }
}

/// Empirical K₁ = max Φ(s)/s^{1+δ} over a log-spaced grid on (0, 1],
/// with δ the model's fractional order.
pub fn fit_phi_power_bound(model: &CbrwModel) -> f64 {
    phi_power_bound(model, model.delta)
}

/// max Φ(s)/s^{1+δ} over a log-spaced grid on (0, 1] for a given δ.
pub fn phi_power_bound(model: &CbrwModel, delta: f64) -> f64 {
    let power = 1.0 + delta;
    (0..=600)
        .map(|i| 10f64.powf(-12.0 + 12.0 * i as f64 / 600.0))
        .map(|s| model.phi_unchecked(s) / s.powf(power))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel_1d(rates: &[(i64, f64)]) -> Result<JumpKernel> {
        let raw = rates.iter().map(|&(z, r)| (Site::from(z), r)).collect();
        validate_kernel(&raw, 1)
    }

    pub(crate) fn r1() -> CbrwModel {
        let k = kernel_1d(&[(1, 0.5), (-1, 0.5)]).unwrap();
        CbrwModel::new(k, 0.5, OffspringLaw::table(vec![0.55, 0.0, 0.45]).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn nearest_neighbour_kernel_derives_diagonal_and_hessian() {
        let k = kernel_1d(&[(1, 0.5), (-1, 0.5)]).unwrap();
        assert_eq!(k.diagonal(), -1.0);
        assert_eq!(k.total_rate(), 1.0);
        assert_eq!(k.hessian()[(0, 0)], -1.0);
        assert!(k.is_axis_separable());
    }

    #[test]
    fn asymmetric_kernel_is_rejected() {
        let err = kernel_1d(&[(1, 0.5), (-1, 0.4)]).unwrap_err();
        assert!(matches!(err, Error::AsymmetricKernel { .. }));
        let err = kernel_1d(&[(1, 0.5)]).unwrap_err();
        assert!(matches!(err, Error::AsymmetricKernel { .. }));
    }

    #[test]
    fn even_jumps_are_reducible() {
        let err = kernel_1d(&[(2, 0.5), (-2, 0.5)]).unwrap_err();
        assert_eq!(
            err,
            Error::ReducibleKernel {
                dimension: 1,
                rank: 1,
                index: 2
            }
        );
        assert!(kernel_1d(&[(2, 0.5), (-2, 0.5), (3, 0.1), (-3, 0.1)]).is_ok());
    }

    #[test]
    fn empty_and_rank_deficient_kernels_are_rejected() {
        assert_eq!(kernel_1d(&[]).unwrap_err(), Error::EmptyKernel);
        assert_eq!(kernel_1d(&[(1, 0.0), (-1, 0.0)]).unwrap_err(), Error::EmptyKernel);
        let raw = [(vec![1, 0], 0.5), (vec![-1, 0], 0.5)]
            .into_iter()
            .map(|(z, r)| (Site::new(z), r))
            .collect();
        assert!(matches!(
            validate_kernel(&raw, 2).unwrap_err(),
            Error::ReducibleKernel { rank: 1, .. }
        ));
    }

    #[test]
    fn checkerboard_kernel_in_two_dimensions_is_reducible() {
        // diagonal moves only reach sites with even coordinate sum
        let raw = [vec![1, 1], vec![-1, -1], vec![1, -1], vec![-1, 1]]
            .into_iter()
            .map(|z| (Site::new(z), 0.25))
            .collect();
        assert_eq!(
            validate_kernel(&raw, 2).unwrap_err(),
            Error::ReducibleKernel {
                dimension: 2,
                rank: 2,
                index: 2
            }
        );
    }

    #[test]
    fn phi_reference_values() {
        let m = r1();
        assert_eq!(m.phi(0.0).unwrap(), 0.0);
        assert!((m.phi(1.0).unwrap() - 0.225).abs() < 1e-15);
        // R1 has Φ(s) = 0.225 s² exactly
        for &s in &[1e-9, 1e-4, 0.3, 0.77] {
            assert!((m.phi(s).unwrap() - 0.225 * s * s).abs() < 1e-15 * s.max(1e-3));
        }
        assert!(m.phi(1.5).is_err());
        let id = m.with_offspring(OffspringLaw::deterministic(1)).unwrap();
        for &s in &[0.0, 0.2, 1.0] {
            assert_eq!(id.phi(s).unwrap(), 0.0);
        }
    }

    #[test]
    fn phi_derivative_matches_finite_differences() {
        let base = r1();
        for law in [
            OffspringLaw::table(vec![0.2, 0.3, 0.1, 0.4]).unwrap(),
            OffspringLaw::geometric(0.4).unwrap(),
            OffspringLaw::poisson(1.3).unwrap(),
        ] {
            let m = base.with_offspring(law).unwrap();
            for &s in &[0.1, 0.5, 0.9] {
                let h = 1e-6;
                let fd = (m.phi_unchecked(s + h) - m.phi_unchecked(s - h)) / (2.0 * h);
                assert!((fd - m.phi_derivative(s)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn centered_pgf_agrees_with_naive_formula() {
        for law in [
            OffspringLaw::table(vec![0.2, 0.3, 0.1, 0.4]).unwrap(),
            OffspringLaw::geometric(0.4).unwrap(),
            OffspringLaw::poisson(1.3).unwrap(),
        ] {
            for &u in &[0.2, 0.5, 0.999, 1.0] {
                let naive = law.pgf(1.0 - u) - 1.0 + law.mean() * u;
                assert!((law.centered_pgf(u) - naive).abs() < 1e-14, "{law} u={u}");
            }
        }
    }

    #[test]
    fn regime_thresholds() {
        let m = r1().with_offspring(OffspringLaw::table(vec![0.55, 0.0, 0.45]).unwrap()).unwrap();
        let rep = classify_regime(&m, 0.0);
        assert_eq!(rep.regime, Regime::Subcritical);
        assert_eq!(rep.threshold, 1.0);
        assert!((rep.mean_offspring - 0.9).abs() < 1e-15);

        let crit = m.with_offspring(OffspringLaw::deterministic(1)).unwrap();
        assert_eq!(classify_regime(&crit, 0.0).regime, Regime::Critical);
        let sup = m.with_offspring(OffspringLaw::poisson(1.2).unwrap()).unwrap();
        assert_eq!(classify_regime(&sup, 0.0).regime, Regime::Supercritical);
        // h = 0.65946, α = 0.5: threshold 1.65946 > 1.2
        assert_eq!(classify_regime(&sup, 0.659463).regime, Regime::Subcritical);
        assert!((classify_regime(&sup, 0.659463).threshold - 1.659463).abs() < 1e-12);
    }

    #[test]
    fn direct_fractional_moment_trivial_laws() {
        let one = OffspringLaw::deterministic(1);
        assert_eq!(fractional_moment_direct(&one, 0.5).unwrap(), 1.0);
        let bern = OffspringLaw::table(vec![0.3, 0.7]).unwrap();
        assert!((fractional_moment_direct(&bern, 0.5).unwrap() - 0.7).abs() < 1e-15);
        assert!(fractional_moment_direct(&bern, 0.0).is_err());
    }

    #[test]
    fn klar_integral_trivial_laws() {
        let base = r1();
        let one = base.with_offspring(OffspringLaw::deterministic(1)).unwrap();
        assert!((fractional_moment_klar(&one, 0.5).unwrap() - 1.0).abs() < 1e-9);
        let bern = base.with_offspring(OffspringLaw::table(vec![0.3, 0.7]).unwrap()).unwrap();
        assert!((fractional_moment_klar(&bern, 0.5).unwrap() - 0.7).abs() < 1e-9);
        assert_eq!(
            fractional_moment_klar(&base, 1.0).unwrap_err(),
            Error::DeltaOutOfRange(1.0)
        );
        assert!(fractional_moment_klar(&base, 0.0).is_err());
    }

    #[test]
    fn delta_one_uses_second_factorial_moment() {
        let m = r1();
        // E ξ² = 4 · 0.45
        assert!((fractional_moment(&m, 1.0).unwrap() - 1.8).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_monotone_and_matches_table() {
        let law = OffspringLaw::table(vec![0.55, 0.0, 0.45]).unwrap();
        assert_eq!(law.sample_inverse(0.0), 0);
        assert_eq!(law.sample_inverse(0.5499), 0);
        assert_eq!(law.sample_inverse(0.55), 2);
        let geo = OffspringLaw::geometric(0.4).unwrap();
        let mut last = 0;
        for i in 0..1000 {
            let k = geo.sample_inverse(i as f64 / 1000.0);
            assert!(k >= last);
            last = k;
        }
        assert_eq!(geo.sample_inverse(0.0), 0);
        // P(ξ = 0) = 0.6
        assert_eq!(geo.sample_inverse(0.59), 0);
        assert_eq!(geo.sample_inverse(0.61), 1);
        let poi = OffspringLaw::poisson(2.0).unwrap();
        assert_eq!(poi.sample_inverse(0.1), 0);
        assert_eq!(poi.sample_inverse(0.2), 1);
    }

    #[test]
    fn k1_is_finite_and_bounds_phi() {
        let m = r1();
        let k1 = fit_phi_power_bound(&m);
        assert!(k1.is_finite() && k1 > 0.0);
        // Φ(s) = 0.225 s², so Φ(s)/s^{1.5} = 0.225 √s peaks at s = 1
        assert!((k1 - 0.225).abs() < 1e-12);
    }
}
