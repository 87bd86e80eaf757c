//! Decay diagnostics on sampled energy curves.
//!
//! Everything here works on a [`SampledEnergy`]: a uniform time grid with
//! E, the weight ξ and its primitive Φ = ∫₀ᵗ ξ. The module has no knowledge
//! of the PDE and is equally usable on synthetic curves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::RateFunction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecayError {
    #[error("sample arrays disagree in length or are shorter than 2")]
    Shape,
    #[error("time grid is not uniform at index {0}")]
    NonUniform(usize),
    #[error("Φ(0) = {0} must be 0")]
    PhiOrigin(f64),
    #[error("Φ is not strictly increasing at index {0}")]
    PhiNotIncreasing(usize),
    #[error("E is negative at t = {0}")]
    NegativeEnergy(f64),
    #[error("E increases by {rise:.3e} at t = {t}, beyond tol_E = {tol:.3e}")]
    NotMonotone { t: f64, rise: f64, tol: f64 },
    #[error("ω must be positive, got {0}")]
    NonPositiveOmega(f64),
    #[error("σ must be nonnegative, got {0}")]
    NegativeSigma(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledEnergy {
    pub t: Vec<f64>,
    pub e: Vec<f64>,
    pub xi: Vec<f64>,
    pub phi: Vec<f64>,
}

impl SampledEnergy {
    pub fn new(t: Vec<f64>, e: Vec<f64>, xi: Vec<f64>, phi: Vec<f64>, tol_e: f64) -> Result<Self, DecayError> {
        let n = t.len();
        if n < 2 || e.len() != n || xi.len() != n || phi.len() != n {
            return Err(DecayError::Shape);
        }
        let dt = t[1] - t[0];
        for j in 1..n {
            if ((t[j] - t[j - 1]) - dt).abs() > 1e-9 * dt.max(1.0) || dt <= 0.0 {
                return Err(DecayError::NonUniform(j));
            }
        }
        if phi[0] != 0.0 {
            return Err(DecayError::PhiOrigin(phi[0]));
        }
        if let Some(j) = (1..n).find(|&j| phi[j] <= phi[j - 1]) {
            return Err(DecayError::PhiNotIncreasing(j));
        }
        if let Some(j) = (0..n).find(|&j| e[j] < -tol_e) {
            return Err(DecayError::NegativeEnergy(t[j]));
        }
        if let Some(j) = (1..n).find(|&j| e[j] > e[j - 1] + tol_e) {
            return Err(DecayError::NotMonotone { t: t[j], rise: e[j] - e[j - 1], tol: tol_e });
        }
        Ok(Self { t, e, xi, phi })
    }

    /// Fills ξ and Φ from the kernel's rate function.
    pub fn from_rate(t: Vec<f64>, e: Vec<f64>, rate: &RateFunction, tol_e: f64) -> Result<Self, DecayError> {
        let xi = t.iter().map(|&s| rate.xi(s)).collect();
        let phi = t.iter().map(|&s| rate.phi(s)).collect();
        Self::new(t, e, xi, phi, tol_e)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.t[1] - self.t[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn is_trivial(&self) -> bool {
        self.e[0] <= 0.0
    }

    /// Samples with t ≤ horizon.
    pub fn truncated(&self, horizon: f64) -> Self {
        let n = self.t.iter().take_while(|&&s| s <= horizon * (1.0 + 1e-12)).count().max(2);
        Self {
            t: self.t[..n].to_vec(),
            e: self.e[..n].to_vec(),
            xi: self.xi[..n].to_vec(),
            phi: self.phi[..n].to_vec(),
        }
    }

    /// Trapezoid tails ∫_{t_j}^T f for every j.
    fn backward_trapezoid(&self, f: impl Fn(usize) -> f64) -> Vec<f64> {
        let n = self.len();
        let h = self.dt();
        let mut out = vec![0.0; n];
        for j in (0..n - 1).rev() {
            out[j] = out[j + 1] + 0.5 * h * (f(j) + f(j + 1));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartinezVerdict {
    pub hypothesis: Verdict,
    pub conclusion: Verdict,
    /// min over S of (bound − integral)/bound; negative means violated.
    pub hypothesis_margin: f64,
    /// min over t of (envelope − E)/E(0).
    pub conclusion_margin: f64,
    /// Integrand at T relative to E^σ(0)E(S_last); drives `Inconclusive`.
    pub tail_indicator: f64,
}

/// Relative slack granted to trapezoid quadrature in the hypothesis test.
pub const MARTINEZ_QUAD_RTOL: f64 = 1e-6;
const TAIL_THRESHOLD: f64 = 1e-6;

/// Checks the integral hypothesis ∫_S^∞ E^{1+σ}φ′ ≤ (1/ω)E^σ(0)E(S) for S in
/// the first half of the grid, and the decay envelope at every sample.
///
/// `tail` is ∫_T^∞ E^{1+σ}φ′ when known in closed form (may be +∞).
pub fn martinez_check(e: &SampledEnergy, sigma: f64, omega: f64, tail: Option<f64>) -> Result<MartinezVerdict, DecayError> {
    if !(omega > 0.0) {
        return Err(DecayError::NonPositiveOmega(omega));
    }
    if !(sigma >= 0.0) {
        return Err(DecayError::NegativeSigma(sigma));
    }
    let n = e.len();
    let e0 = e.e[0];
    let integrand = |j: usize| e.e[j].max(0.0).powf(1.0 + sigma) * e.xi[j];
    let partial = e.backward_trapezoid(integrand);
    let s_count = n.div_ceil(2);
    let bound = |j: usize| e0.powf(sigma) * e.e[j] / omega;

    let mut finite_fail = false;
    let mut margin = f64::INFINITY;
    for (j, &part) in partial.iter().enumerate().take(s_count) {
        let b = bound(j);
        let total = part + tail.unwrap_or(0.0);
        if part > b * (1.0 + MARTINEZ_QUAD_RTOL) {
            finite_fail = true;
        }
        let m = if b > 0.0 { (b - total) / b } else if total > 0.0 { f64::NEG_INFINITY } else { 0.0 };
        margin = margin.min(m);
    }
    let last_bound = bound(s_count - 1);
    let tail_indicator = if last_bound > 0.0 { integrand(n - 1) / last_bound } else { 0.0 };
    let hypothesis = if finite_fail || (tail.is_some() && margin < -MARTINEZ_QUAD_RTOL) {
        Verdict::Fail
    } else if tail.is_some() || tail_indicator < TAIL_THRESHOLD {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    };

    let mut conclusion_margin = f64::INFINITY;
    for j in 0..n {
        let envelope = if sigma > 0.0 {
            e0 * ((1.0 + sigma) / (1.0 + sigma * omega * e.phi[j])).powf(1.0 / sigma)
        } else {
            e0 * (1.0 - omega * e.phi[j]).exp()
        };
        let m = if e0 > 0.0 { (envelope - e.e[j]) / e0 } else { 0.0 };
        conclusion_margin = conclusion_margin.min(m);
    }
    let conclusion = if conclusion_margin >= -1e-12 { Verdict::Pass } else { Verdict::Fail };
    Ok(MartinezVerdict { hypothesis, conclusion, hypothesis_margin: margin, conclusion_margin, tail_indicator })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaFit {
    /// `None` for the trivial E(0) = 0 history.
    pub omega_max: Option<f64>,
    pub trivial: bool,
    /// Time of the binding sample.
    pub binding_time: Option<f64>,
    pub holds_at_max: bool,
    pub fails_above_max: bool,
}

fn envelope_holds(e: &SampledEnergy, omega: f64) -> bool {
    let e0 = e.e[0];
    e.e.iter().zip(&e.phi).all(|(&v, &p)| v <= e0 * (1.0 - omega * p).exp() * (1.0 + 1e-12))
}

/// Sharpest ω with E(t) ≤ E(0)e^{1−ωΦ(t)} on the samples.
pub fn fit_omega(e: &SampledEnergy) -> OmegaFit {
    if e.is_trivial() {
        return OmegaFit { omega_max: None, trivial: true, binding_time: None, holds_at_max: true, fails_above_max: false };
    }
    let e0 = e.e[0];
    let mut best = (f64::INFINITY, None);
    for j in 0..e.len() {
        if e.phi[j] > 0.0 && e.e[j] > 0.0 {
            let w = (1.0 + (e0 / e.e[j]).ln()) / e.phi[j];
            if w < best.0 {
                best = (w, Some(e.t[j]));
            }
        }
    }
    let (omega, binding) = best;
    let holds = omega.is_finite() && envelope_holds(e, omega);
    let fails = omega.is_finite() && !envelope_holds(e, 1.01 * omega);
    OmegaFit { omega_max: omega.is_finite().then_some(omega), trivial: false, binding_time: binding, holds_at_max: holds, fails_above_max: fails }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedIntegral {
    pub t0: f64,
    pub s: Vec<f64>,
    pub rho: Vec<f64>,
    pub max_rho: f64,
    /// First S with E(S) = 0 but a positive remaining integral.
    pub violation: Option<f64>,
}

/// ρ(S) = ∫_S^T ξE dt / E(S) for grid points S ∈ [t0, T).
pub fn weighted_integral_check(e: &SampledEnergy, t0: f64) -> WeightedIntegral {
    let tails = e.backward_trapezoid(|j| e.xi[j] * e.e[j]);
    let mut out = WeightedIntegral { t0, s: vec![], rho: vec![], max_rho: 0.0, violation: None };
    let horizon = e.horizon();
    for (j, &tail) in tails.iter().enumerate() {
        let s = e.t[j];
        if s < t0 - 1e-12 || s >= horizon {
            continue;
        }
        let rho = if e.e[j] > 0.0 {
            tail / e.e[j]
        } else if tail > 0.0 {
            out.violation.get_or_insert(s);
            f64::INFINITY
        } else {
            0.0
        };
        out.s.push(s);
        out.rho.push(rho);
        out.max_rho = out.max_rho.max(rho);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Ordinary least squares of y on x.
pub fn linear_regression(x: &[f64], y: &[f64]) -> Option<Regression> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(Regression { slope, intercept: my - slope * mx, r2, points: n })
}

/// Regression of ln E against `abscissa(t, Φ)` over t ∈ [t_tail, T], skipping E ≤ 0.
pub fn tail_regression(e: &SampledEnergy, t_tail: f64, abscissa: impl Fn(f64, f64) -> f64) -> Option<Regression> {
    let (mut xs, mut ys) = (vec![], vec![]);
    for j in 0..e.len() {
        if e.t[j] >= t_tail && e.e[j] > 0.0 {
            xs.push(abscissa(e.t[j], e.phi[j]));
            ys.push(e.e[j].ln());
        }
    }
    linear_regression(&xs, &ys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonStability {
    pub short_horizon: f64,
    pub long_horizon: f64,
    pub omega_change: Option<f64>,
    pub rho_change: f64,
    pub threshold: f64,
    pub passed: bool,
}

fn relative_change(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (b - a).abs() / a.abs().max(b.abs())
    }
}

/// Compares ω_max and max ρ on [0, T/2] against [0, T].
pub fn horizon_stability(e: &SampledEnergy, t0: f64, threshold: f64) -> HorizonStability {
    let long_h = e.horizon();
    let short = e.truncated(0.5 * long_h);
    let short_h = short.horizon();
    let (ws, wl) = (fit_omega(&short).omega_max, fit_omega(e).omega_max);
    let omega_change = match (ws, wl) {
        (Some(a), Some(b)) => Some(relative_change(a, b)),
        _ => None,
    };
    let rho_change = relative_change(
        weighted_integral_check(&short, t0).max_rho,
        weighted_integral_check(e, t0).max_rho,
    );
    let passed = omega_change.map_or(e.is_trivial(), |c| c < threshold) && rho_change < threshold;
    HorizonStability { short_horizon: short_h, long_horizon: long_h, omega_change, rho_change, threshold, passed }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub omega: OmegaFit,
    pub t_tail: f64,
    /// ln E against Φ.
    pub exponential_fit: Option<Regression>,
    /// ln E against ln(1 + t).
    pub power_fit: Option<Regression>,
    pub weighted: WeightedIntegral,
    pub horizon: HorizonStability,
}

pub fn decay_report(e: &SampledEnergy, t_tail: f64, t0: f64, horizon_threshold: f64) -> DecayReport {
    DecayReport {
        omega: fit_omega(e),
        t_tail,
        exponential_fit: tail_regression(e, t_tail, |_, phi| phi),
        power_fit: tail_regression(e, t_tail, |t, _| (1.0 + t).ln()),
        weighted: weighted_integral_check(e, t0),
        horizon: horizon_stability(e, t0, horizon_threshold),
    }
}
