//! Potential-well constants and stable-set monitoring
//!
//! With `F(x) = ½x² − (B^k/k)x^k`, the well is `{E(0) < d₁, γ_fn(0) < λ₁}`
//! where `λ₁ = B^{−k/(k−2)}` is the critical point of F and `d₁ = F(λ₁)`.
//!
//! `B_Ω = sup ‖u‖_k / √(l‖∇u‖² + b/(κ+1)‖∇u‖^{2(κ+1)})` is obtained from the
//! embedding constant `S_k = sup ‖u‖_k/‖∇u‖` via its small-amplitude limit,
//! then checked by a direct finite-amplitude search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{grad_norm_sq, lk_norm_pow, source_vector, trace_norm_sq, DiscreteOperators, Field, PhysicalParams};
use crate::energy::{initial_energy, EnergyReport};
use crate::geometry::Mesh;
use crate::kernels::RelaxationKernel;
use crate::linalg::{cg_solve_masked, dot};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StableSetError {
    #[error("B_Ω inconsistency: finite-amplitude search found {found:.12} above the limit value {limit:.12}")]
    Inconsistent { limit: f64, found: f64 },
    #[error("Γ₁ is empty, no trace constant")]
    NoAcousticBoundary,
    #[error("source exponent must be at least 2, got {0}")]
    Exponent(f64),
}

/// F(x) = ½x² − (B^k/k) x^k.
#[allow(non_snake_case)]
pub fn potential_F(x: f64, b: f64, k_exp: f64) -> f64 {
    0.5 * x * x - b.powf(k_exp) / k_exp * x.powf(k_exp)
}

/// (λ₁, d₁) for a given B.
#[allow(non_snake_case)]
pub fn well_constants_from_B(b: f64, k_exp: f64) -> (f64, f64) {
    let lambda1 = b.powf(-k_exp / (k_exp - 2.0));
    let d1 = (k_exp - 2.0) / (2.0 * k_exp) * b.powf(-2.0 * k_exp / (k_exp - 2.0));
    (lambda1, d1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerOptions {
    pub starts: usize,
    pub max_iter: usize,
    /// Converged when the objective improves by less than `rel_tol`
    /// (relative) over `window` iterations.
    pub window: usize,
    pub rel_tol: f64,
    pub seed: u64,
    /// Iterations per start of the finite-amplitude B_Ω search.
    pub search_iter: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self { starts: 8, max_iter: 5000, window: 50, rel_tol: 1e-10, seed: 0x5eed, search_iter: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub value: f64,
    /// Iterations of the best start.
    pub iterations: usize,
    pub converged: bool,
    /// Set when the best start hit `max_iter`; `value` is then best-so-far.
    pub approximate: bool,
    pub start_values: Vec<f64>,
    /// (max − min)/max over starts.
    pub spread: f64,
}

struct StartResult {
    value: f64,
    iterations: usize,
    converged: bool,
}

fn solve_k(ops: &DiscreteOperators, rhs: &[f64]) -> Field {
    cg_solve_masked(&ops.stiffness, rhs, &ops.pinned, 1e-13, 20 * ops.num_nodes + 100).0
}

fn normalize_k(ops: &DiscreteOperators, mut u: Field) -> Option<Field> {
    let s = grad_norm_sq(ops, &u);
    if !(s > 0.0 && s.is_finite()) {
        return None;
    }
    let c = 1.0 / s.sqrt();
    u.iter_mut().for_each(|x| *x *= c);
    Some(u)
}

/// Initial iterates: a smooth positive profile, then random free fields.
fn start_field(ops: &DiscreteOperators, index: usize, seed: u64) -> Field {
    if index == 0 {
        let ones: Field = ops.lumped_mass.iter().zip(&ops.pinned).map(|(m, &p)| if p { 0.0 } else { *m }).collect();
        return solve_k(ops, &ones);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    (0..ops.num_nodes).map(|i| if ops.pinned[i] { 0.0 } else { rng.random_range(-1.0..1.0) }).collect()
}

/// Maximizes a `degree`-homogeneous functional f on {‖∇u‖ = 1} by the
/// projected ascent `u ← normalize(K⁻¹ ∇f(u))`, with step halving toward
/// the previous iterate if the objective ever fails to increase.
fn power_ascent(
    ops: &DiscreteOperators,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    grad: &(dyn Fn(&[f64]) -> Field + Sync),
    degree: f64,
    opts: &OptimizerOptions,
) -> ConstantEstimate {
    let results: Vec<StartResult> = (0..opts.starts.max(1))
        .into_par_iter()
        .map(|i| {
            let Some(mut u) = normalize_k(ops, start_field(ops, i, opts.seed)) else {
                return StartResult { value: 0.0, iterations: 0, converged: true };
            };
            let mut history = vec![f(&u)];
            let mut converged = false;
            for _ in 0..opts.max_iter {
                let cur = *history.last().unwrap();
                let Some(target) = normalize_k(ops, solve_k(ops, &grad(&u))) else {
                    converged = true;
                    break;
                };
                let mut accepted = None;
                let mut tau = 1.0;
                for _ in 0..30 {
                    let trial: Field = u.iter().zip(&target).map(|(a, b)| a + tau * (b - a)).collect();
                    if let Some(trial) = normalize_k(ops, trial) {
                        let v = f(&trial);
                        if v >= cur {
                            accepted = Some((trial, v));
                            break;
                        }
                    }
                    tau *= 0.5;
                }
                let Some((next, v)) = accepted else {
                    converged = true;
                    break;
                };
                u = next;
                history.push(v);
                let n = history.len();
                if n > opts.window && v - history[n - 1 - opts.window] <= opts.rel_tol * v.abs() {
                    converged = true;
                    break;
                }
            }
            let value = history.last().unwrap().max(0.0).powf(1.0 / degree);
            StartResult { value, iterations: history.len() - 1, converged }
        })
        .collect();
    let best = results.iter().max_by(|a, b| a.value.total_cmp(&b.value)).unwrap();
    let start_values: Vec<f64> = results.iter().map(|r| r.value).collect();
    let lo = start_values.iter().copied().fold(f64::INFINITY, f64::min);
    ConstantEstimate {
        value: best.value,
        iterations: best.iterations,
        converged: best.converged,
        approximate: !best.converged,
        spread: if best.value > 0.0 { (best.value - lo) / best.value } else { 0.0 },
        start_values,
    }
}

/// Discrete S_k = sup ‖u‖_k/‖∇u‖ over the Γ₀-constrained P1 space.
pub fn estimate_embedding_constant(ops: &DiscreteOperators, k_exp: f64, opts: &OptimizerOptions) -> Result<ConstantEstimate, StableSetError> {
    if !(k_exp >= 2.0) {
        return Err(StableSetError::Exponent(k_exp));
    }
    let f = move |u: &[f64]| lk_norm_pow(ops, u, k_exp);
    let g = move |u: &[f64]| source_vector(ops, u, k_exp);
    Ok(power_ascent(ops, &f, &g, k_exp, opts))
}

/// Discrete C̄_* = sup ‖u‖_{2,Γ₁}/‖∇u‖.
pub fn estimate_trace_constant(ops: &DiscreteOperators, opts: &OptimizerOptions) -> Result<ConstantEstimate, StableSetError> {
    if ops.gamma1.is_empty() {
        return Err(StableSetError::NoAcousticBoundary);
    }
    let f = |u: &[f64]| trace_norm_sq(ops, u);
    let g = |u: &[f64]| ops.boundary_load(&ops.trace(u));
    Ok(power_ascent(ops, &f, &g, 2.0, opts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BOmegaEstimate {
    pub value: f64,
    pub s_k: f64,
    /// "S_k/sqrt(l)" or "S_k/sqrt(l+b)".
    pub reduction: String,
    /// Largest quotient found by the finite-amplitude search.
    pub search_max: f64,
    pub search_tolerance: f64,
}

/// The full B_Ω quotient at `u`.
pub fn b_omega_quotient(ops: &DiscreteOperators, params: &PhysicalParams, l_value: f64, u: &[f64]) -> f64 {
    let s = grad_norm_sq(ops, u);
    let denom = l_value * s + params.b / (params.kappa + 1.0) * s.powf(params.kappa + 1.0);
    if denom <= 0.0 {
        return 0.0;
    }
    lk_norm_pow(ops, u, params.k_exp).powf(1.0 / params.k_exp) / denom.sqrt()
}

/// B_Ω from its amplitude limit, checked by multi-start gradient ascent
/// of the full quotient at amplitudes ‖∇u‖ ∈ {10⁻³, 10⁻², 10⁻¹, 1}.
#[allow(non_snake_case)]
pub fn estimate_B_Omega(
    ops: &DiscreteOperators,
    params: &PhysicalParams,
    l_value: f64,
    s_k: f64,
    opts: &OptimizerOptions,
) -> Result<BOmegaEstimate, StableSetError> {
    let (value, reduction) = if params.kappa > 0.0 {
        (s_k / l_value.sqrt(), "S_k/sqrt(l)")
    } else {
        (s_k / (l_value + params.b).sqrt(), "S_k/sqrt(l+b)")
    };
    const TOL: f64 = 1e-6;
    let amplitudes = [1e-3, 1e-2, 1e-1, 1.0];
    let q = |u: &[f64]| b_omega_quotient(ops, params, l_value, u);
    let search_max = (0..opts.starts.max(1) * amplitudes.len())
        .into_par_iter()
        .map(|j| {
            let (i, rho) = (j / amplitudes.len(), amplitudes[j % amplitudes.len()]);
            let Some(mut u) = normalize_k(ops, start_field(ops, i, opts.seed)) else {
                return 0.0;
            };
            u.iter_mut().for_each(|x| *x *= rho);
            let mut best = q(&u);
            let mut last_tau = f64::INFINITY;
            for _ in 0..opts.search_iter {
                // Sobolev gradient of Q = N/D with N = ‖u‖_k, D² = l s + c s^{κ+1}.
                let s = grad_norm_sq(ops, &u);
                let n = lk_norm_pow(ops, &u, params.k_exp).powf(1.0 / params.k_exp);
                if n == 0.0 || s == 0.0 {
                    break;
                }
                let c = params.b / (params.kappa + 1.0);
                let d2 = l_value * s + c * s.powf(params.kappa + 1.0);
                let dn = source_vector(ops, &u, params.k_exp);
                let dn_scale = n.powf(1.0 - params.k_exp) / d2.sqrt();
                let dd_scale = n * (l_value + c * (params.kappa + 1.0) * s.powf(params.kappa)) / d2.powf(1.5);
                let ku = ops.stiffness_times(&u);
                let grad: Field = dn.iter().zip(&ku).map(|(a, b)| dn_scale * a - dd_scale * b).collect();
                let dir = solve_k(ops, &grad);
                let dir_norm = grad_norm_sq(ops, &dir).sqrt();
                if dir_norm == 0.0 {
                    break;
                }
                let mut tau = (2.0 * last_tau).min(0.5 * s.sqrt() / dir_norm);
                let mut improved = false;
                for _ in 0..30 {
                    let trial: Field = u.iter().zip(&dir).map(|(a, b)| a + tau * b).collect();
                    let v = q(&trial);
                    if v > best {
                        best = v;
                        u = trial;
                        last_tau = tau;
                        improved = true;
                        break;
                    }
                    tau *= 0.5;
                }
                if !improved {
                    break;
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    if search_max > value * (1.0 + TOL) {
        return Err(StableSetError::Inconsistent { limit: value, found: search_max });
    }
    Ok(BOmegaEstimate { value, s_k, reduction: reduction.into(), search_max, search_tolerance: TOL })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellConstants {
    pub k_exp: f64,
    pub s_k: f64,
    pub c_star: f64,
    pub c_bar_star: f64,
    pub b_omega: f64,
    pub lambda1: f64,
    pub d1: f64,
    pub l_value: f64,
    pub dimension: usize,
    pub resolution: Vec<usize>,
    pub embedding: ConstantEstimate,
    pub trace: ConstantEstimate,
    pub b_omega_check: BOmegaEstimate,
}

/// All well constants for the given discretization.
pub fn compute_well_constants(
    mesh: &Mesh,
    ops: &DiscreteOperators,
    params: &PhysicalParams,
    kernel: &RelaxationKernel,
    opts: &OptimizerOptions,
) -> Result<WellConstants, StableSetError> {
    let embedding = estimate_embedding_constant(ops, params.k_exp, opts)?;
    let trace = estimate_trace_constant(ops, opts)?;
    let b = estimate_B_Omega(ops, params, kernel.l_value, embedding.value, opts)?;
    let (lambda1, d1) = well_constants_from_B(b.value, params.k_exp);
    Ok(WellConstants {
        k_exp: params.k_exp,
        s_k: embedding.value,
        c_star: embedding.value,
        c_bar_star: trace.value,
        b_omega: b.value,
        lambda1,
        d1,
        l_value: kernel.l_value,
        dimension: mesh.dimension,
        resolution: mesh.resolution.clone(),
        embedding,
        trace,
        b_omega_check: b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableSetReport {
    pub e0: f64,
    pub gamma0: f64,
    pub lambda1: f64,
    pub d1: f64,
    pub in_well: bool,
    pub energy_ratio: f64,
    pub gamma_ratio: f64,
}

/// Entry test: E(0) < d₁ and γ_fn(0) < λ₁ (no memory at t = 0).
#[allow(clippy::too_many_arguments)]
pub fn check_initial_membership(
    u0: &[f64],
    u1: &[f64],
    y0: &[f64],
    lambda1: f64,
    d1: f64,
    kernel: &RelaxationKernel,
    params: &PhysicalParams,
    ops: &DiscreteOperators,
) -> StableSetReport {
    let (e0, gamma0) = initial_energy(u0, u1, y0, kernel, params, ops);
    StableSetReport {
        e0,
        gamma0,
        lambda1,
        d1,
        in_well: e0 < d1 && gamma0 < lambda1,
        energy_ratio: e0 / d1,
        gamma_ratio: gamma0 / lambda1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceVerdict {
    pub passed: bool,
    /// Time and reason of the first failing record.
    pub first_violation: Option<(f64, String)>,
    pub max_gamma_ratio: f64,
    pub max_energy_ratio: f64,
    /// min over records of E − F(γ_fn).
    pub min_well_gap: f64,
    /// min over records of E − ((k−2)/(2k))γ_fn².
    pub min_lower_gap: f64,
}

/// Checks γ_fn < λ₁, E < d₁ and E ≥ F(γ_fn) − tol at every record.
pub fn verify_invariance(records: &[EnergyReport], b_omega: f64, k_exp: f64, tol_e: f64) -> InvarianceVerdict {
    let (lambda1, d1) = well_constants_from_B(b_omega, k_exp);
    let c = (k_exp - 2.0) / (2.0 * k_exp);
    let mut v = InvarianceVerdict {
        passed: true,
        first_violation: None,
        max_gamma_ratio: 0.0,
        max_energy_ratio: f64::NEG_INFINITY,
        min_well_gap: f64::INFINITY,
        min_lower_gap: f64::INFINITY,
    };
    for r in records {
        v.max_gamma_ratio = v.max_gamma_ratio.max(r.gamma_fn / lambda1);
        v.max_energy_ratio = v.max_energy_ratio.max(r.total / d1);
        let gap = r.total - potential_F(r.gamma_fn, b_omega, k_exp);
        v.min_well_gap = v.min_well_gap.min(gap);
        v.min_lower_gap = v.min_lower_gap.min(r.total - c * r.gamma_fn * r.gamma_fn);
        let reason = if !(r.gamma_fn < lambda1) {
            Some(format!("γ_fn = {} >= λ₁ = {lambda1}", r.gamma_fn))
        } else if !(r.total < d1) {
            Some(format!("E = {} >= d₁ = {d1}", r.total))
        } else if gap < -tol_e {
            Some(format!("E − F(γ_fn) = {gap:.3e} below −tol_E"))
        } else {
            None
        };
        if let (Some(reason), None) = (reason, &v.first_violation) {
            v.passed = false;
            v.first_violation = Some((r.t, reason));
        }
    }
    if records.is_empty() {
        v.max_energy_ratio = 0.0;
    }
    v
}

/// ‖∇u‖ and ‖u‖ helpers used when scaling profiles into the well.
pub fn grad_norm(ops: &DiscreteOperators, u: &[f64]) -> f64 {
    grad_norm_sq(ops, u).sqrt()
}

#[doc(hidden)]
pub fn k_inner(ops: &DiscreteOperators, u: &[f64], v: &[f64]) -> f64 {
    dot(u, &ops.stiffness_times(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble;
    use crate::geometry::{build_mesh, DomainSpec, Face};
    use approx::assert_relative_eq;

    fn params(k: f64) -> PhysicalParams {
        PhysicalParams { a: 2.0, b: 1.0, kappa: 1.0, k_exp: k, p_c: 1.0, q_c: 1.0, source_enabled: true }
    }

    fn interval_ops(len: f64, n: usize, k: f64) -> DiscreteOperators {
        let mesh = build_mesh(&DomainSpec::interval(len, n, Face::Right)).unwrap();
        assemble(&mesh, &params(k))
    }

    #[test]
    fn potential_and_well_values() {
        assert_eq!(potential_F(0.0, 1.3, 4.0), 0.0);
        assert_relative_eq!(potential_F(1.0, 1.0, 4.0), 0.25);
        assert_eq!(well_constants_from_B(1.0, 4.0), (1.0, 0.25));
        for k in [2.5, 3.0, 6.0] {
            assert_eq!(well_constants_from_B(1.0, k).0, 1.0);
        }
        for (b, k) in [(0.7, 4.0), (1.3, 3.0), (0.4, 2.5), (2.0, 6.0), (0.9, 5.5)] {
            let (l1, d1) = well_constants_from_B(b, k);
            assert_relative_eq!(potential_F(l1, b, k), d1, max_relative = 1e-12);
            let h = 1e-6 * l1;
            let deriv = (potential_F(l1 + h, b, k) - potential_F(l1 - h, b, k)) / (2.0 * h);
            assert!(deriv.abs() <= 1e-8, "{deriv}");
            // Increasing on (0, λ₁), decreasing on (λ₁, 3λ₁).
            let xs: Vec<f64> = (1..=1000).map(|i| 3.0 * l1 * i as f64 / 1000.0).collect();
            for w in xs.windows(2) {
                let (f0, f1) = (potential_F(w[0], b, k), potential_F(w[1], b, k));
                if w[1] <= l1 {
                    assert!(f1 > f0);
                } else if w[0] >= l1 {
                    assert!(f1 < f0);
                }
            }
        }
    }

    #[test]
    fn poincare_constant_of_unit_interval() {
        let ops = interval_ops(1.0, 64, 2.0);
        let est = estimate_embedding_constant(&ops, 2.0, &OptimizerOptions::default()).unwrap();
        assert!(est.converged);
        let exact = 2.0 / std::f64::consts::PI;
        assert!(est.value <= exact && est.value > 0.999 * exact, "{}", est.value);
    }

    #[test]
    fn trace_constant_scales_with_sqrt_length() {
        let opts = OptimizerOptions::default();
        let one = estimate_trace_constant(&interval_ops(1.0, 16, 4.0), &opts).unwrap();
        let two = estimate_trace_constant(&interval_ops(2.0, 16, 4.0), &opts).unwrap();
        assert_relative_eq!(one.value, 1.0, max_relative = 1e-10);
        assert_relative_eq!(two.value, 2.0_f64.sqrt(), max_relative = 1e-10);
        // A field vanishing on Γ₁ has quotient 0.
        let ops = interval_ops(1.0, 16, 4.0);
        let mut u = vec![0.0; 17];
        u[5] = 1.0;
        assert_eq!(trace_norm_sq(&ops, &u), 0.0);
    }

    #[test]
    fn constants_grow_under_refinement() {
        let opts = OptimizerOptions::default();
        let coarse = estimate_embedding_constant(&interval_ops(1.0, 8, 4.0), 4.0, &opts).unwrap();
        let fine = estimate_embedding_constant(&interval_ops(1.0, 16, 4.0), 4.0, &opts).unwrap();
        assert!(fine.value >= coarse.value);
    }

    #[test]
    fn b_omega_reductions() {
        let ops = interval_ops(1.0, 16, 4.0);
        let opts = OptimizerOptions::default();
        let s4 = estimate_embedding_constant(&ops, 4.0, &opts).unwrap().value;
        let b = estimate_B_Omega(&ops, &params(4.0), 1.0, s4, &opts).unwrap();
        assert_eq!(b.value, s4);
        assert!(b.search_max <= b.value * (1.0 + 1e-6));
        let flat = PhysicalParams { kappa: 0.0, b: 3.0, ..params(4.0) };
        let b0 = estimate_B_Omega(&ops, &flat, 1.0, s4, &opts).unwrap();
        assert_relative_eq!(b0.value, s4 / 2.0);
        let b2 = estimate_B_Omega(&ops, &params(4.0), 2.0, s4, &opts).unwrap();
        assert!(b2.value < b.value);
        // An underestimated S_k is caught by the direct search.
        let err = estimate_B_Omega(&ops, &params(4.0), 1.0, 0.9 * s4, &opts).unwrap_err();
        assert!(matches!(err, StableSetError::Inconsistent { .. }));
    }

    #[test]
    fn membership_examples() {
        let mesh = build_mesh(&DomainSpec::interval(1.0, 16, Face::Right)).unwrap();
        let p = params(4.0);
        let ops = assemble(&mesh, &p);
        let kernel = crate::kernels::build_kernel(crate::kernels::RateFunction::Constant { alpha: 1.0 }, 1.0, 2.0).unwrap();
        let z = ops.zero_field();
        let r = check_initial_membership(&z, &z, &[0.0], 1.0, 0.25, &kernel, &p, &ops);
        assert!(r.in_well && r.e0 == 0.0 && r.gamma0 == 0.0);
        let x: Field = mesh.coords.iter().map(|c| c[0]).collect();
        let r = check_initial_membership(&x, &z, &[0.0], 1.0, 0.25, &kernel, &p, &ops);
        assert!(!r.in_well);
        assert_relative_eq!(r.e0, 1.2, max_relative = 1e-12);
        let small: Field = x.iter().map(|v| 0.1 * v).collect();
        let r = check_initial_membership(&small, &z, &[0.0], 1.0, 0.25, &kernel, &p, &ops);
        assert!(r.in_well);
        assert_relative_eq!(r.gamma0, 0.01005_f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(r.e0, 0.01002, max_relative = 1e-12);
    }

    #[test]
    fn invariance_verdicts() {
        let rec = |t: f64, total: f64, gamma_fn: f64| EnergyReport { t, total, gamma_fn, ..Default::default() };
        let zero: Vec<EnergyReport> = (0..5).map(|i| rec(i as f64, 0.0, 0.0)).collect();
        assert!(verify_invariance(&zero, 1.0, 4.0, 1e-9).passed);
        let mut run: Vec<EnergyReport> = (0..5).map(|i| rec(i as f64, 0.01 / (1.0 + i as f64), 0.1 / (1.0 + i as f64))).collect();
        let ok = verify_invariance(&run, 1.0, 4.0, 1e-9);
        assert!(ok.passed, "{ok:?}");
        assert_relative_eq!(ok.max_gamma_ratio, 0.1);
        run[3].total *= 100.0;
        run[3].gamma_fn *= 100.0;
        let bad = verify_invariance(&run, 1.0, 4.0, 1e-9);
        assert!(!bad.passed);
        assert_eq!(bad.first_violation.unwrap().0, 3.0);
    }
}
