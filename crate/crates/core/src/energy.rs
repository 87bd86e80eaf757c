//! Energy functional, well functional γ_fn, and the dissipation identity
//!
//! ```text
//! E = ½‖u_t‖² + ½(a − ∫₀ᵗg)‖∇u‖² + b/(2(κ+1))‖∇u‖^{2(κ+1)}
//!     + ½∫_{Γ₁} q y² + ½(g◇∇u) − (1/k)‖u‖_k^k
//! E′ = −½ g(t)‖∇u‖² + ½(g′◇∇u) − ∫_{Γ₁} p y_t²
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{boundary_quadratic, grad_norm_sq, l2_norm_sq, lk_norm_pow, DiscreteOperators, PhysicalParams};
use crate::history::{g_diamond, g_prime_diamond, HistoryBuffer};
use crate::kernels::RelaxationKernel;
use crate::stepper::SimState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("rate identity needs at least 3 records, got {0}")]
    TooFewRecords(usize),
    #[error("records are not uniformly spaced (step {index}: {got} vs {expected})")]
    NonUniform { index: usize, got: f64, expected: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EnergyReport {
    pub t: f64,
    pub total: f64,
    pub kinetic: f64,
    pub elastic: f64,
    pub kirchhoff: f64,
    pub boundary: f64,
    pub memory: f64,
    pub source: f64,
    pub gamma_fn: f64,
    /// ‖∇u‖²
    pub grad_sq: f64,
    /// ‖u‖₂
    pub l2_norm: f64,
    /// −½ g(t)‖∇u‖²
    pub rate_kernel: f64,
    /// ½ (g′◇∇u)
    pub rate_memory: f64,
    /// −∫_{Γ₁} p y_t²
    pub rate_boundary: f64,
}

impl EnergyReport {
    pub fn component_sum(&self) -> f64 {
        self.kinetic + self.elastic + self.kirchhoff + self.boundary + self.memory + self.source
    }

    /// Right-hand side of the dissipation identity.
    pub fn rate_rhs(&self) -> f64 {
        self.rate_kernel + self.rate_memory + self.rate_boundary
    }
}

/// ½‖∇u‖²-weighted Kirchhoff potential b/(2(κ+1)) s^{κ+1}.
fn kirchhoff_potential(params: &PhysicalParams, s: f64) -> f64 {
    params.b / (2.0 * (params.kappa + 1.0)) * s.powf(params.kappa + 1.0)
}

fn source_potential(ops: &DiscreteOperators, params: &PhysicalParams, u: &[f64]) -> f64 {
    if params.source_enabled {
        -lk_norm_pow(ops, u, params.k_exp) / params.k_exp
    } else {
        0.0
    }
}

/// Energy of `state`; `buffer` must hold the history through `state.t`.
pub fn compute_energy(
    state: &SimState,
    buffer: &HistoryBuffer,
    kernel: &RelaxationKernel,
    params: &PhysicalParams,
    ops: &DiscreteOperators,
) -> EnergyReport {
    let t = state.t;
    let s = grad_norm_sq(ops, &state.u);
    let diamond = g_diamond(buffer, kernel, t, &state.u);
    let diamond_prime = g_prime_diamond(buffer, kernel, t, &state.u);
    let kinetic = 0.5 * l2_norm_sq(ops, &state.v);
    let elastic = 0.5 * (params.a - kernel.integral(t)) * s;
    let kirchhoff = kirchhoff_potential(params, s);
    let boundary = boundary_quadratic(ops, &state.y, 0.5 * params.q_c);
    let memory = 0.5 * diamond;
    let source = source_potential(ops, params, &state.u);
    let gamma_sq = kernel.l_value * s
        + 2.0 * kirchhoff
        + boundary_quadratic(ops, &state.y, params.q_c)
        + diamond;
    EnergyReport {
        t,
        total: kinetic + elastic + kirchhoff + boundary + memory + source,
        kinetic,
        elastic,
        kirchhoff,
        boundary,
        memory,
        source,
        gamma_fn: gamma_sq.max(0.0).sqrt(),
        grad_sq: s,
        l2_norm: l2_norm_sq(ops, &state.u).sqrt(),
        rate_kernel: -0.5 * kernel.g(t) * s,
        rate_memory: 0.5 * diamond_prime,
        rate_boundary: -boundary_quadratic(ops, &state.yt, params.p_c),
    }
}

/// γ_fn = √(l‖∇u‖² + b/(κ+1)‖∇u‖^{2(κ+1)} + ∫_{Γ₁} q y² + (g◇∇u)).
pub fn compute_gamma_fn(
    state: &SimState,
    buffer: &HistoryBuffer,
    kernel: &RelaxationKernel,
    params: &PhysicalParams,
    ops: &DiscreteOperators,
) -> f64 {
    let s = grad_norm_sq(ops, &state.u);
    let sum = kernel.l_value * s
        + 2.0 * kirchhoff_potential(params, s)
        + boundary_quadratic(ops, &state.y, params.q_c)
        + g_diamond(buffer, kernel, state.t, &state.u);
    sum.max(0.0).sqrt()
}

/// Energy and γ_fn at t = 0, where the memory term vanishes.
pub fn initial_energy(
    u: &[f64],
    v: &[f64],
    y: &[f64],
    kernel: &RelaxationKernel,
    params: &PhysicalParams,
    ops: &DiscreteOperators,
) -> (f64, f64) {
    let s = grad_norm_sq(ops, u);
    let kir = kirchhoff_potential(params, s);
    let e = 0.5 * l2_norm_sq(ops, v)
        + 0.5 * params.a * s
        + kir
        + boundary_quadratic(ops, y, 0.5 * params.q_c)
        + source_potential(ops, params, u);
    let gamma = (kernel.l_value * s + 2.0 * kir + boundary_quadratic(ops, y, params.q_c)).sqrt();
    (e, gamma)
}

/// Signed residual dE/dt − RHS per record. dE/dt by central differences,
/// second-order one-sided differences at the two ends.
pub fn rate_identity_residual(records: &[EnergyReport]) -> Result<Vec<f64>, EnergyError> {
    let n = records.len();
    if n < 3 {
        return Err(EnergyError::TooFewRecords(n));
    }
    let h = records[1].t - records[0].t;
    for (i, w) in records.windows(2).enumerate() {
        let d = w[1].t - w[0].t;
        if (d - h).abs() > 1e-9 * h.abs().max(1e-300) {
            return Err(EnergyError::NonUniform { index: i, got: d, expected: h });
        }
    }
    let e: Vec<f64> = records.iter().map(|r| r.total).collect();
    Ok((0..n)
        .map(|i| {
            let de = if i == 0 {
                (-3.0 * e[0] + 4.0 * e[1] - e[2]) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * e[n - 1] - 4.0 * e[n - 2] + e[n - 3]) / (2.0 * h)
            } else {
                (e[i + 1] - e[i - 1]) / (2.0 * h)
            };
            de - records[i].rate_rhs()
        })
        .collect())
}
