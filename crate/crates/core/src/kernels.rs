//! Relaxation kernels generated from a rate function ξ by saturating
//! `g′ = −ξ g`, i.e. `g(t) = g(0)·exp(−Φ(t))` with `Φ(t) = ∫₀ᵗ ξ`.
//!
//! Three rate families ship with closed forms for ξ, ξ′ and Φ:
//!
//! | family | ξ(t) | g(t)/g(0) |
//! |---|---|---|
//! | `Constant(α)` | α | e^{−αt} |
//! | `PowerLaw(α)` | α/(1+t) | (1+t)^{−α} |
//! | `OscillatoryPerturbed(α, ε)` | α(1 + ε e^{−t} sin t) | e^{−Φ(t)} |
//!
//! The oscillatory family is not monotone, which is exactly the case where
//! the `∫ ξ′/ξ ≤ r` part of (H2) is non-trivial.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad::integrate_adaptive;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("(H2) violated: g(0) must be positive, got {0}")]
    NonPositiveG0(f64),
    #[error("wave coefficient a must be positive, got {0}")]
    NonPositiveA(f64),
    #[error("rate parameter alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("power-law rate needs alpha > 1 for a finite tail mass, got alpha = {0}")]
    InfiniteTailMass(f64),
    #[error("oscillatory rate needs 0 <= epsilon < 1, got {0}")]
    BadEpsilon(f64),
    #[error("(H2) violated: l = a - ∫g = {l} <= 0 (a = {a}, tail mass = {tail})")]
    NonPositiveL { l: f64, a: f64, tail: f64 },
}

/// The rate function ξ together with its claimed (θ, r) certificates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateFunction {
    Constant { alpha: f64 },
    PowerLaw { alpha: f64 },
    OscillatoryPerturbed { alpha: f64, epsilon: f64 },
}

impl RateFunction {
    pub fn alpha(&self) -> f64 {
        match *self {
            Self::Constant { alpha } | Self::PowerLaw { alpha } | Self::OscillatoryPerturbed { alpha, .. } => alpha,
        }
    }

    pub fn xi(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { alpha } => alpha,
            Self::PowerLaw { alpha } => alpha / (1.0 + t),
            Self::OscillatoryPerturbed { alpha, epsilon } => alpha * (1.0 + epsilon * (-t).exp() * t.sin()),
        }
    }

    pub fn xi_prime(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { .. } => 0.0,
            Self::PowerLaw { alpha } => -alpha / ((1.0 + t) * (1.0 + t)),
            Self::OscillatoryPerturbed { alpha, epsilon } => alpha * epsilon * (-t).exp() * (t.cos() - t.sin()),
        }
    }

    /// Φ(t) = ∫₀ᵗ ξ(s) ds.
    pub fn phi(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { alpha } => alpha * t,
            Self::PowerLaw { alpha } => alpha * t.ln_1p(),
            Self::OscillatoryPerturbed { alpha, epsilon } => {
                alpha * t + alpha * epsilon * 0.5 * (1.0 - (-t).exp() * (t.sin() + t.cos()))
            }
        }
    }

    /// Smallest t with Φ(t) ≥ `target` (Φ is strictly increasing).
    pub fn phi_inverse(&self, target: f64) -> f64 {
        if target <= 0.0 {
            return 0.0;
        }
        match *self {
            Self::Constant { alpha } => target / alpha,
            Self::PowerLaw { alpha } => (target / alpha).exp_m1(),
            Self::OscillatoryPerturbed { alpha, .. } => {
                // Φ(t) ≥ αt, so the root lies in [0, target/α].
                bisect(|t| self.phi(t) - target, 0.0, target / alpha)
            }
        }
    }

    /// Claimed θ certificate: ξ′/ξ^θ ∈ L¹(0, ∞).
    pub fn claimed_theta(&self) -> f64 {
        0.0
    }

    /// Claimed r certificate: ∫_t^{t+s} ξ′/ξ ≤ r for all t, s ≥ 0.
    pub fn claimed_r(&self) -> f64 {
        match *self {
            // Nonincreasing ξ: r = 0 suffices.
            Self::Constant { .. } | Self::PowerLaw { .. } => 0.0,
            // ξ ∈ [α(1−ε), α(1+ε)], so ln(ξ(t+s)/ξ(t)) ≤ ln((1+ε)/(1−ε)).
            Self::OscillatoryPerturbed { epsilon, .. } => ((1.0 + epsilon) / (1.0 - epsilon)).ln(),
        }
    }

    /// Bounds (inf, sup) of ξ on [h, ∞).
    fn tail_range(&self, h: f64) -> (f64, f64) {
        match *self {
            Self::Constant { alpha } => (alpha, alpha),
            Self::PowerLaw { alpha } => (0.0, alpha / (1.0 + h)),
            Self::OscillatoryPerturbed { alpha, epsilon } => {
                let e = epsilon * (-h).exp();
                (alpha * (1.0 - e), alpha * (1.0 + e))
            }
        }
    }

    /// sup over h ≤ t ≤ t′ of ln(ξ(t′)/ξ(t)).
    fn tail_log_rise(&self, h: f64) -> f64 {
        match *self {
            Self::Constant { .. } | Self::PowerLaw { .. } => 0.0,
            Self::OscillatoryPerturbed { epsilon, .. } => {
                let e = epsilon * (-h).exp();
                ((1.0 + e) / (1.0 - e)).ln()
            }
        }
    }

    /// Upper bound of ∫_h^∞ |ξ′|/ξ^θ; infinite when not integrable.
    fn tail_weighted_variation(&self, h: f64, theta: f64) -> f64 {
        match *self {
            Self::Constant { .. } => 0.0,
            Self::PowerLaw { alpha } => {
                // α^{1−θ}(1+t)^{θ−2}, integrable iff θ < 1.
                if theta < 1.0 {
                    alpha.powf(1.0 - theta) * (1.0 + h).powf(theta - 1.0) / (1.0 - theta)
                } else {
                    f64::INFINITY
                }
            }
            Self::OscillatoryPerturbed { alpha, epsilon } => {
                // |ξ′| ≤ αε√2 e^{−t} and ξ ≥ α(1−ε).
                let floor = (alpha * (1.0 - epsilon)).powf(theta);
                alpha * epsilon * std::f64::consts::SQRT_2 * (-h).exp() / floor
            }
        }
    }

    /// Why ∫₀^∞ ξ diverges for this family.
    fn divergence_certificate(&self) -> &'static str {
        match self {
            Self::Constant { .. } => "Φ(t) = αt",
            Self::PowerLaw { .. } => "Φ(t) = α ln(1+t)",
            Self::OscillatoryPerturbed { .. } => "Φ(t) ≥ αt",
        }
    }

    fn validate(&self) -> Result<(), KernelError> {
        let alpha = self.alpha();
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(KernelError::NonPositiveAlpha(alpha));
        }
        match *self {
            Self::PowerLaw { alpha } if alpha <= 1.0 => Err(KernelError::InfiniteTailMass(alpha)),
            Self::OscillatoryPerturbed { epsilon, .. } if !(0.0..1.0).contains(&epsilon) => {
                Err(KernelError::BadEpsilon(epsilon))
            }
            _ => Ok(()),
        }
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Positive boundary coefficients p and q on Γ₁ (taken constant).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCoefficients {
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaxationKernel {
    pub g0_initial: f64,
    pub rate: RateFunction,
    pub a_coeff: f64,
    pub tail_mass: f64,
    pub l_value: f64,
    /// Pure exponential kernel, eligible for exact recursive convolution.
    pub fast_path: bool,
}

/// Builds `g(t) = g0·exp(−Φ(t))` and checks (H2)'s `l > 0`.
pub fn build_kernel(rate: RateFunction, g0: f64, a: f64) -> Result<RelaxationKernel, KernelError> {
    if !(g0 > 0.0 && g0.is_finite()) {
        return Err(KernelError::NonPositiveG0(g0));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(KernelError::NonPositiveA(a));
    }
    rate.validate()?;
    let mut kernel = RelaxationKernel {
        g0_initial: g0,
        rate,
        a_coeff: a,
        tail_mass: 0.0,
        l_value: 0.0,
        fast_path: matches!(rate, RateFunction::Constant { .. }),
    };
    kernel.tail_mass = kernel.tail_remainder(0.0);
    kernel.l_value = a - kernel.tail_mass;
    if kernel.l_value <= 0.0 {
        return Err(KernelError::NonPositiveL { l: kernel.l_value, a, tail: kernel.tail_mass });
    }
    Ok(kernel)
}

impl RelaxationKernel {
    /// The inert kernel g ≡ 0, used for memory-free reference runs. It does
    /// not satisfy (H2) and is never produced by [`build_kernel`].
    pub fn zero(a: f64) -> Self {
        Self {
            g0_initial: 0.0,
            rate: RateFunction::Constant { alpha: 1.0 },
            a_coeff: a,
            tail_mass: 0.0,
            l_value: a,
            fast_path: true,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.g0_initial == 0.0
    }

    pub fn g(&self, t: f64) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        self.g0_initial * (-self.rate.phi(t)).exp()
    }

    pub fn g_prime(&self, t: f64) -> f64 {
        -self.rate.xi(t) * self.g(t)
    }

    pub fn xi(&self, t: f64) -> f64 {
        self.rate.xi(t)
    }

    pub fn phi(&self, t: f64) -> f64 {
        self.rate.phi(t)
    }

    /// Exponential decay rate α when the fast path applies.
    pub fn decay_rate(&self) -> Option<f64> {
        match self.rate {
            RateFunction::Constant { alpha } if self.fast_path => Some(alpha),
            _ => None,
        }
    }

    /// ∫₀ᵗ g(s) ds.
    pub fn integral(&self, t: f64) -> f64 {
        if self.is_zero() || t <= 0.0 {
            return 0.0;
        }
        let g0 = self.g0_initial;
        match self.rate {
            RateFunction::Constant { alpha } => g0 * (-(-alpha * t).exp_m1()) / alpha,
            RateFunction::PowerLaw { alpha } => g0 * (1.0 - (1.0 + t).powf(1.0 - alpha)) / (alpha - 1.0),
            RateFunction::OscillatoryPerturbed { .. } => integrate_adaptive(|s| self.g(s), 0.0, t, 1e-13 * g0),
        }
    }

    /// ∫ₜ^∞ g(s) ds.
    pub fn tail_remainder(&self, t: f64) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let g0 = self.g0_initial;
        let t = t.max(0.0);
        match self.rate {
            RateFunction::Constant { alpha } => g0 * (-alpha * t).exp() / alpha,
            RateFunction::PowerLaw { alpha } => g0 * (1.0 + t).powf(1.0 - alpha) / (alpha - 1.0),
            RateFunction::OscillatoryPerturbed { alpha, epsilon } => {
                // Numerically on [t, t+60/α]; beyond that e^{−t}-terms in Φ are
                // negligible and Φ(s) ≈ αs + αε/2.
                let cut = t + 60.0 / alpha;
                let body = integrate_adaptive(|s| self.g(s), t, cut, 1e-14 * g0);
                let far = g0 * (-(alpha * cut + 0.5 * alpha * epsilon)).exp() / alpha;
                body + far
            }
        }
    }

    /// Time t₀ with ∫₀^{t₀} g = `fraction`·tail_mass.
    pub fn time_for_mass_fraction(&self, fraction: f64) -> f64 {
        let g0 = self.g0_initial;
        match self.rate {
            RateFunction::Constant { alpha } => -(1.0 - fraction).ln() / alpha,
            RateFunction::PowerLaw { alpha } => (1.0 - fraction).powf(1.0 / (1.0 - alpha)) - 1.0,
            RateFunction::OscillatoryPerturbed { alpha, .. } => {
                let target = fraction * self.tail_mass;
                let mut hi = 1.0 / alpha;
                while self.integral(hi) < target && hi < 1e6 {
                    hi *= 2.0;
                }
                let _ = g0;
                bisect(|t| self.integral(t) - target, 0.0, hi)
            }
        }
    }

    /// Age beyond which g < `threshold`·g(0).
    pub fn truncation_window(&self, threshold: f64) -> f64 {
        self.rate.phi_inverse(-threshold.ln())
    }
}

/// ∫₀^{t₀} g, the constant g₀ used by the decay argument for times t ≥ t₀.
pub fn tail_from(kernel: &RelaxationKernel, t0: f64) -> f64 {
    kernel.integral(t0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisCheck {
    /// "H1" or "H2".
    pub hypothesis: String,
    pub condition: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
    pub all_passed: bool,
    pub horizon: f64,
    pub grid_points: usize,
    pub theta: f64,
    pub claimed_theta: f64,
    pub xi_prime_weighted_l1: f64,
    pub r: f64,
    pub claimed_r: f64,
    pub exp_r: f64,
    pub l_value: f64,
    pub xi_sup: f64,
}

impl HypothesisReport {
    /// Names of the hypotheses with at least one failing condition.
    pub fn failed_hypotheses(&self) -> Vec<String> {
        let mut v: Vec<String> = self.checks.iter().filter(|c| !c.passed).map(|c| c.hypothesis.clone()).collect();
        v.dedup();
        v
    }
}

/// Uniform plus geometric sample points on [0, horizon].
pub fn check_grid(horizon: f64) -> Vec<f64> {
    const UNIFORM: usize = 4000;
    const GEOMETRIC: usize = 200;
    let mut grid: Vec<f64> = (0..=UNIFORM).map(|i| horizon * i as f64 / UNIFORM as f64).collect();
    let start = 1e-6 * horizon;
    let ratio = (horizon / start).powf(1.0 / GEOMETRIC as f64);
    grid.extend((0..GEOMETRIC).map(|i| start * ratio.powi(i as i32)));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Checks (H1) and (H2) on the composite grid over [0, horizon] and closes
/// the infinite tails with per-family analytic bounds.
pub fn validate_hypotheses(kernel: &RelaxationKernel, coeffs: BoundaryCoefficients, horizon: f64) -> HypothesisReport {
    let grid = check_grid(horizon);
    let rate = kernel.rate;
    let mut checks = Vec::new();
    let mut push = |hyp: &str, cond: &str, passed: bool, detail: String| {
        checks.push(HypothesisCheck { hypothesis: hyp.into(), condition: cond.into(), passed, detail });
    };

    push("H1", "0 < p0 <= p(x) <= p1 on Γ₁", coeffs.p > 0.0 && coeffs.p.is_finite(), format!("p = {}", coeffs.p));
    push("H1", "0 < q0 <= q(x) <= q1 on Γ₁", coeffs.q > 0.0 && coeffs.q.is_finite(), format!("q = {}", coeffs.q));

    push("H2", "g(0) > 0", kernel.g0_initial > 0.0, format!("g(0) = {}", kernel.g0_initial));
    push(
        "H2",
        "l = a - ∫₀^∞ g > 0",
        kernel.l_value > 0.0,
        format!("a = {}, tail = {:.12}, l = {:.12}", kernel.a_coeff, kernel.tail_mass, kernel.l_value),
    );

    let xi: Vec<f64> = grid.iter().map(|&t| rate.xi(t)).collect();
    let (tail_inf, tail_sup) = rate.tail_range(horizon);
    let xi_min = xi.iter().copied().fold(f64::INFINITY, f64::min);
    let xi_positive = xi_min > 0.0 && tail_inf >= 0.0 && rate.xi(horizon) > 0.0;
    push("H2", "ξ(t) > 0", xi_positive, format!("min ξ on grid = {xi_min:.6e}, tail inf >= {tail_inf:.3e}"));

    let phi_end = rate.phi(horizon);
    let phi_increasing = grid.windows(2).all(|w| rate.phi(w[1]) > rate.phi(w[0]));
    push(
        "H2",
        "∫₀^∞ ξ = +∞",
        phi_increasing,
        format!("{}; Φ(horizon) = {phi_end:.6}", rate.divergence_certificate()),
    );

    // g′ ≤ −ξg, saturated; also cross-check the closed-form g′ by central differences.
    let mut worst_identity = 0.0_f64;
    let mut worst_fd = 0.0_f64;
    for &t in &grid {
        let g = kernel.g(t);
        let gp = kernel.g_prime(t);
        let scale = (rate.xi(t) * g).abs().max(f64::MIN_POSITIVE);
        worst_identity = worst_identity.max((gp + rate.xi(t) * g) / scale);
        let dt = 1e-5 * (1.0 + t);
        if t >= dt && g > 1e-200 {
            let fd = (kernel.g(t + dt) - kernel.g(t - dt)) / (2.0 * dt);
            worst_fd = worst_fd.max((fd - gp).abs() / scale);
        }
    }
    push(
        "H2",
        "g′(t) <= -ξ(t) g(t)",
        kernel.g0_initial > 0.0 && worst_identity <= 1e-12 && worst_fd <= 1e-6,
        format!("max (g′+ξg)/(ξg) = {worst_identity:.3e}; finite-difference mismatch = {worst_fd:.3e}"),
    );

    // ξ′/ξ^θ ∈ L¹: smallest θ from a ladder whose tail bound is finite.
    let weighted_l1 = |theta: f64| -> f64 {
        let body: f64 = grid
            .windows(2)
            .map(|w| {
                let f = |t: f64| rate.xi_prime(t).abs() / rate.xi(t).powf(theta);
                0.5 * (w[1] - w[0]) * (f(w[0]) + f(w[1]))
            })
            .sum();
        body + rate.tail_weighted_variation(horizon, theta)
    };
    let ladder = [0.0, 0.5, 1.0, 1.5, 2.0];
    let (theta, l1) = ladder
        .iter()
        .map(|&th| (th, weighted_l1(th)))
        .find(|(_, v)| v.is_finite())
        .unwrap_or((f64::NAN, f64::INFINITY));
    let claimed_theta = rate.claimed_theta();
    push(
        "H2",
        "ξ′/ξ^θ ∈ L¹(0, ∞)",
        l1.is_finite() && theta <= claimed_theta,
        format!("θ = {theta}, ‖ξ′/ξ^θ‖₁ <= {l1:.6e} (claimed θ = {claimed_theta})"),
    );

    // r: sup over ordered pairs of ln ξ(t+s) − ln ξ(t).
    let mut running_min = f64::INFINITY;
    let mut r_grid = 0.0_f64;
    for &x in &xi {
        let lx = x.ln();
        running_min = running_min.min(lx);
        r_grid = r_grid.max(lx - running_min);
    }
    let r_cross = tail_sup.ln() - running_min;
    let r = r_grid.max(r_cross).max(rate.tail_log_rise(horizon)).max(0.0);
    let claimed_r = rate.claimed_r();
    push(
        "H2",
        "∫_t^{t+s} ξ′/ξ <= r",
        r <= claimed_r + 1e-12,
        format!("estimated r = {r:.6e}, claimed r = {claimed_r:.6e}"),
    );

    let xi_sup = xi.iter().copied().fold(tail_sup, f64::max);
    let all_passed = checks.iter().all(|c| c.passed);
    HypothesisReport {
        checks,
        all_passed,
        horizon,
        grid_points: grid.len(),
        theta,
        claimed_theta,
        xi_prime_weighted_l1: l1,
        r,
        claimed_r,
        exp_r: r.exp(),
        l_value: kernel.l_value,
        xi_sup,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const UNIT: BoundaryCoefficients = BoundaryCoefficients { p: 1.0, q: 1.0 };

    #[test]
    fn exponential_kernel_closed_forms() {
        let k = build_kernel(RateFunction::Constant { alpha: 1.0 }, 1.0, 2.0).unwrap();
        assert!(k.fast_path);
        assert_relative_eq!(k.tail_mass, 1.0, max_relative = 1e-15);
        assert_relative_eq!(k.l_value, 1.0, max_relative = 1e-15);
        assert_relative_eq!(k.g(0.7), (-0.7_f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(tail_from(&k, 1.0), 1.0 - (-1.0_f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(tail_from(&k, 1.0), 0.632_120_558_828_557_7, max_relative = 1e-12);
    }

    #[test]
    fn power_law_kernel_closed_forms() {
        let k = build_kernel(RateFunction::PowerLaw { alpha: 2.0 }, 1.0, 3.0).unwrap();
        assert!(!k.fast_path);
        assert_relative_eq!(k.tail_mass, 1.0, max_relative = 1e-15);
        assert_relative_eq!(k.l_value, 2.0, max_relative = 1e-15);
        assert_relative_eq!(k.g(1.0), 0.25, max_relative = 1e-15);
        assert_relative_eq!(tail_from(&k, 1.0), 0.5, max_relative = 1e-14);
    }

    #[test]
    fn too_much_memory_violates_h2() {
        let err = build_kernel(RateFunction::Constant { alpha: 0.1 }, 1.0, 2.0).unwrap_err();
        assert!(matches!(err, KernelError::NonPositiveL { .. }));
        assert!(err.to_string().contains("(H2)"));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert_eq!(
            build_kernel(RateFunction::PowerLaw { alpha: 1.0 }, 1.0, 9.0),
            Err(KernelError::InfiniteTailMass(1.0))
        );
        assert_eq!(
            build_kernel(RateFunction::OscillatoryPerturbed { alpha: 1.0, epsilon: 1.0 }, 1.0, 9.0),
            Err(KernelError::BadEpsilon(1.0))
        );
        assert_eq!(build_kernel(RateFunction::Constant { alpha: 1.0 }, 0.0, 9.0), Err(KernelError::NonPositiveG0(0.0)));
        assert_eq!(build_kernel(RateFunction::Constant { alpha: -1.0 }, 1.0, 9.0), Err(KernelError::NonPositiveAlpha(-1.0)));
    }

    #[test]
    fn oscillatory_tail_matches_direct_quadrature() {
        let rate = RateFunction::OscillatoryPerturbed { alpha: 1.0, epsilon: 0.5 };
        let k = build_kernel(rate, 1.0, 2.0).unwrap();
        // Independent: composite Simpson on [0, 80] with 160 000 panels.
        let n = 160_000;
        let h = 80.0 / n as f64;
        let f = |t: f64| (-rate.phi(t)).exp();
        let mut s = f(0.0) + f(80.0);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let simpson = s * h / 3.0;
        assert_relative_eq!(k.tail_mass, simpson, max_relative = 1e-10);
        assert!(k.tail_mass < 1.0);
        for t0 in [0.3, 1.0, 5.0] {
            assert_relative_eq!(k.integral(t0) + k.tail_remainder(t0), k.tail_mass, max_relative = 1e-10);
        }
    }

    #[test]
    fn phi_matches_quadrature_of_xi() {
        let rates = [
            RateFunction::Constant { alpha: 0.7 },
            RateFunction::PowerLaw { alpha: 2.5 },
            RateFunction::OscillatoryPerturbed { alpha: 1.3, epsilon: 0.8 },
        ];
        for rate in rates {
            for t in [0.1, 1.0, 4.0, 12.0] {
                let q = integrate_adaptive(|s| rate.xi(s), 0.0, t, 1e-14);
                assert_relative_eq!(rate.phi(t), q, max_relative = 1e-11);
                assert_relative_eq!(rate.phi_inverse(rate.phi(t)), t, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn constant_rate_passes_with_zero_certificates() {
        let k = build_kernel(RateFunction::Constant { alpha: 1.0 }, 1.0, 2.0).unwrap();
        let rep = validate_hypotheses(&k, UNIT, 50.0);
        assert!(rep.all_passed, "{rep:#?}");
        assert_eq!(rep.theta, 0.0);
        assert_eq!(rep.r, 0.0);
        assert_eq!(rep.exp_r, 1.0);
    }

    #[test]
    fn oscillatory_rate_passes_with_log3_bound() {
        let k = build_kernel(RateFunction::OscillatoryPerturbed { alpha: 1.0, epsilon: 0.5 }, 1.0, 2.0).unwrap();
        let rep = validate_hypotheses(&k, UNIT, 50.0);
        assert!(rep.all_passed, "{rep:#?}");
        assert_eq!(rep.theta, 0.0);
        assert!(rep.r > 0.0 && rep.r <= 3.0_f64.ln());
        // ‖ξ′‖₁ <= αε√2.
        assert!(rep.xi_prime_weighted_l1 <= 0.5 * std::f64::consts::SQRT_2);
    }

    #[test]
    fn zero_p_fails_h1() {
        let k = build_kernel(RateFunction::Constant { alpha: 1.0 }, 1.0, 2.0).unwrap();
        let rep = validate_hypotheses(&k, BoundaryCoefficients { p: 0.0, q: 1.0 }, 10.0);
        assert!(!rep.all_passed);
        assert_eq!(rep.failed_hypotheses(), vec!["H1".to_string()]);
    }

    #[test]
    fn zero_kernel_fails_h2() {
        let rep = validate_hypotheses(&RelaxationKernel::zero(1.0), UNIT, 10.0);
        assert_eq!(rep.failed_hypotheses(), vec!["H2".to_string()]);
    }

    #[test]
    fn mass_fraction_time_and_window() {
        let k = build_kernel(RateFunction::PowerLaw { alpha: 3.0 }, 1.0, 2.0).unwrap();
        let t0 = k.time_for_mass_fraction(0.5);
        assert_relative_eq!(k.integral(t0), 0.5 * k.tail_mass, max_relative = 1e-12);
        let e = build_kernel(RateFunction::Constant { alpha: 2.0 }, 1.0, 2.0).unwrap();
        let w = e.truncation_window(1e-8);
        assert_relative_eq!(e.g(w), 1e-8, max_relative = 1e-10);
        let o = build_kernel(RateFunction::OscillatoryPerturbed { alpha: 1.0, epsilon: 0.3 }, 1.0, 2.0).unwrap();
        let t0 = o.time_for_mass_fraction(0.5);
        assert_relative_eq!(o.integral(t0), 0.5 * o.tail_mass, max_relative = 1e-9);
    }
}
