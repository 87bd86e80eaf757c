//! P1 finite-element forms: consistent and lumped mass, stiffness, Γ₁
//! boundary weights, and Gauss-quadrature evaluation of the nonlinear
//! terms ∫|u|^k and ∫|u|^{k−2}u φᵢ.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Mesh;
use crate::kernels::BoundaryCoefficients;
use crate::linalg::CsrMatrix;
use crate::quad::{gauss_legendre_unit, triangle_rule};

/// One real value per mesh node; Γ₀ entries are zero.
pub type Field = Vec<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("physics.a must be positive, got {0}")]
    NonPositiveA(f64),
    #[error("physics.b must be nonnegative, got {0}")]
    NegativeB(f64),
    #[error("physics.kappa must be nonnegative, got {0}")]
    NegativeKappa(f64),
    #[error("physics.k_exp must exceed 2, got {0}")]
    SourceExponent(f64),
    #[error("physics.k_exp = {k} exceeds (2n-2)/(n-2) = {max} for n = {n}")]
    SupercriticalExponent { k: f64, max: f64, n: usize },
    #[error("(H1) violated: physics.{name} must be positive, got {value}")]
    NonPositiveBoundary { name: &'static str, value: f64 },
}

fn default_true() -> bool {
    true
}

/// Coefficients of the PDE. `kappa` is the Kirchhoff exponent in
/// `a + b‖∇u‖^{2κ}`; `k_exp` the source exponent in `|u|^{k−2}u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    pub a: f64,
    pub b: f64,
    pub kappa: f64,
    pub k_exp: f64,
    pub p_c: f64,
    pub q_c: f64,
    /// Switches the source term off for linear reference runs.
    #[serde(default = "default_true")]
    pub source_enabled: bool,
}

impl PhysicalParams {
    pub fn boundary(&self) -> BoundaryCoefficients {
        BoundaryCoefficients { p: self.p_c, q: self.q_c }
    }

    /// Kirchhoff coefficient `a + b·s^κ` for `s = ‖∇u‖²`.
    pub fn kirchhoff(&self, grad_sq: f64) -> f64 {
        if self.b == 0.0 {
            self.a
        } else if self.kappa == 0.0 {
            self.a + self.b
        } else {
            self.a + self.b * grad_sq.powf(self.kappa)
        }
    }

    /// All violations for a problem posed in `dimension` space dimensions.
    /// `b = 0` is accepted so the linear reference problem is expressible.
    pub fn validate(&self, dimension: usize) -> Vec<ParamError> {
        let mut errs = Vec::new();
        if !(self.a > 0.0) {
            errs.push(ParamError::NonPositiveA(self.a));
        }
        if !(self.b >= 0.0) {
            errs.push(ParamError::NegativeB(self.b));
        }
        if !(self.kappa >= 0.0) {
            errs.push(ParamError::NegativeKappa(self.kappa));
        }
        if !(self.k_exp > 2.0) {
            errs.push(ParamError::SourceExponent(self.k_exp));
        } else if dimension >= 3 {
            let max = (2.0 * dimension as f64 - 2.0) / (dimension as f64 - 2.0);
            if self.k_exp > max {
                errs.push(ParamError::SupercriticalExponent { k: self.k_exp, max, n: dimension });
            }
        }
        for (name, value) in [("p_c", self.p_c), ("q_c", self.q_c)] {
            if !(value > 0.0) {
                errs.push(ParamError::NonPositiveBoundary { name, value });
            }
        }
        errs
    }
}

/// Quadrature point of one element: global nodes, basis values, weight.
#[derive(Debug, Clone, Copy, PartialEq)]
struct QuadPoint {
    nodes: [usize; 3],
    phi: [f64; 3],
    weight: f64,
}

#[derive(Debug, Clone)]
pub struct DiscreteOperators {
    pub dimension: usize,
    pub num_nodes: usize,
    pub mass: CsrMatrix,
    pub lumped_mass: Vec<f64>,
    pub stiffness: CsrMatrix,
    pub pinned: Vec<bool>,
    pub gamma1: Vec<usize>,
    pub gamma1_weights: Vec<f64>,
    /// Gauss points per axis used for the nonlinear terms.
    pub quad_order: usize,
    quad_points: Vec<QuadPoint>,
}

/// Assembles every form once for the given mesh and source exponent.
pub fn assemble(mesh: &Mesh, params: &PhysicalParams) -> DiscreteOperators {
    let n = mesh.num_nodes();
    let mut mass_t = Vec::new();
    let mut stiff_t = Vec::new();
    let mut quad_points = Vec::new();
    let k_ceil = params.k_exp.ceil().max(2.0) as usize;

    let quad_order;
    if mesh.dimension == 1 {
        quad_order = k_ceil + 1;
        let rule = gauss_legendre_unit(quad_order);
        for el in &mesh.elements {
            let (i, j) = (el[0], el[1]);
            let h = mesh.coords[j][0] - mesh.coords[i][0];
            for (r, c, m, s) in [(i, i, 2.0, 1.0), (j, j, 2.0, 1.0), (i, j, 1.0, -1.0), (j, i, 1.0, -1.0)] {
                mass_t.push((r, c, m * h / 6.0));
                stiff_t.push((r, c, s / h));
            }
            for &(x, w) in &rule {
                quad_points.push(QuadPoint { nodes: [i, j, j], phi: [1.0 - x, x, 0.0], weight: w * h });
            }
        }
    } else {
        quad_order = k_ceil + 2;
        let rule = triangle_rule(quad_order);
        for el in &mesh.elements {
            let v = [el[0], el[1], el[2]];
            let p = v.map(|i| mesh.coords[i]);
            let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
            let area = 0.5 * det.abs();
            // ∇φ_a = (y_b − y_c, x_c − x_b)/det, cyclically.
            let grad: [[f64; 2]; 3] = std::array::from_fn(|a| {
                let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                [(p[b][1] - p[c][1]) / det, (p[c][0] - p[b][0]) / det]
            });
            for a in 0..3 {
                for b in 0..3 {
                    let m = if a == b { area / 6.0 } else { area / 12.0 };
                    mass_t.push((v[a], v[b], m));
                    stiff_t.push((v[a], v[b], area * (grad[a][0] * grad[b][0] + grad[a][1] * grad[b][1])));
                }
            }
            for &(x, w) in &rule {
                quad_points.push(QuadPoint { nodes: v, phi: [1.0 - x[0] - x[1], x[0], x[1]], weight: w * 2.0 * area });
            }
        }
    }

    let mass = CsrMatrix::from_triplets(n, mass_t);
    let lumped_mass = mass.row_sums();
    DiscreteOperators {
        dimension: mesh.dimension,
        num_nodes: n,
        mass,
        lumped_mass,
        stiffness: CsrMatrix::from_triplets(n, stiff_t),
        pinned: mesh.pinned.clone(),
        gamma1: mesh.gamma1.clone(),
        gamma1_weights: mesh.gamma1_weights.clone(),
        quad_order,
        quad_points,
    }
}

impl DiscreteOperators {
    pub fn zero_field(&self) -> Field {
        vec![0.0; self.num_nodes]
    }

    /// Zeroes the Γ₀ entries in place.
    pub fn apply_dirichlet(&self, u: &mut [f64]) {
        for (ui, &p) in u.iter_mut().zip(&self.pinned) {
            if p {
                *ui = 0.0;
            }
        }
    }

    pub fn stiffness_times(&self, u: &[f64]) -> Field {
        self.stiffness.mul_vec(u)
    }

    /// Γ₁ trace of `u` in slot order.
    pub fn trace(&self, u: &[f64]) -> Vec<f64> {
        self.gamma1.iter().map(|&i| u[i]).collect()
    }

    /// Spreads Γ₁ slot values `w_s·y_s` back onto their nodes.
    pub fn boundary_load(&self, y: &[f64]) -> Field {
        let mut out = self.zero_field();
        for ((&node, &w), &ys) in self.gamma1.iter().zip(&self.gamma1_weights).zip(y) {
            out[node] += w * ys;
        }
        out
    }

    fn value_at(&self, qp: &QuadPoint, u: &[f64]) -> f64 {
        qp.nodes.iter().zip(&qp.phi).map(|(&i, &p)| p * u[i]).sum()
    }
}

/// ‖∇u‖₂² = uᵀKu.
pub fn grad_norm_sq(ops: &DiscreteOperators, u: &[f64]) -> f64 {
    ops.stiffness.quadratic_form(u).max(0.0)
}

/// ‖u‖₂² with the consistent mass.
pub fn l2_norm_sq(ops: &DiscreteOperators, u: &[f64]) -> f64 {
    ops.mass.quadratic_form(u).max(0.0)
}

/// ‖u‖_k^k = ∫|u_h|^k by Gauss quadrature.
pub fn lk_norm_pow(ops: &DiscreteOperators, u: &[f64], k_exp: f64) -> f64 {
    ops.quad_points.iter().map(|qp| qp.weight * ops.value_at(qp, u).abs().powf(k_exp)).sum()
}

/// Load vector ∫|u_h|^{k−2}u_h φᵢ; Γ₀ entries zero.
pub fn source_vector(ops: &DiscreteOperators, u: &[f64], k_exp: f64) -> Field {
    let mut out = ops.zero_field();
    for qp in &ops.quad_points {
        let uh = ops.value_at(qp, u);
        let s = qp.weight * uh.abs().powf(k_exp - 2.0) * uh;
        if s != 0.0 {
            for (&i, &p) in qp.nodes.iter().zip(&qp.phi) {
                out[i] += s * p;
            }
        }
    }
    // 1D points repeat the last node with φ = 0, so no double counting.
    ops.apply_dirichlet(&mut out);
    out
}

/// ‖u‖²_{2,Γ₁} = Σ_s w_s u(x_s)².
pub fn trace_norm_sq(ops: &DiscreteOperators, u: &[f64]) -> f64 {
    ops.gamma1.iter().zip(&ops.gamma1_weights).map(|(&i, &w)| w * u[i] * u[i]).sum()
}

/// `weight·∫_{Γ₁} y²` for Γ₁ slot values `y`.
pub fn boundary_quadratic(ops: &DiscreteOperators, y: &[f64], weight: f64) -> f64 {
    weight * y.iter().zip(&ops.gamma1_weights).map(|(&v, &w)| w * v * v).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, DomainSpec, Face};
    use approx::assert_relative_eq;

    fn params() -> PhysicalParams {
        PhysicalParams { a: 2.0, b: 1.0, kappa: 1.0, k_exp: 4.0, p_c: 1.0, q_c: 1.0, source_enabled: true }
    }

    fn line(n: usize) -> (Mesh, DiscreteOperators) {
        let mesh = build_mesh(&DomainSpec::interval(1.0, n, Face::Right)).unwrap();
        let ops = assemble(&mesh, &params());
        (mesh, ops)
    }

    fn square(n: usize) -> (Mesh, DiscreteOperators) {
        let mesh = build_mesh(&DomainSpec::rectangle(1.0, 1.0, n, n, vec![Face::Right])).unwrap();
        let ops = assemble(&mesh, &params());
        (mesh, ops)
    }

    #[test]
    fn stiffness_stencil_two_elements() {
        let (_, ops) = line(2);
        assert_relative_eq!(ops.stiffness.get(1, 0), -2.0);
        assert_relative_eq!(ops.stiffness.get(1, 1), 4.0);
        assert_relative_eq!(ops.stiffness.get(1, 2), -2.0);
        assert_eq!(ops.stiffness.get(0, 2), 0.0);
    }

    #[test]
    fn stiffness_annihilates_constants() {
        for (_, ops) in [line(7), square(5)] {
            for s in ops.stiffness.row_sums() {
                assert!(s.abs() < 1e-12);
            }
            assert!(ops.stiffness.is_symmetric(1e-14));
            assert!(ops.mass.is_symmetric(1e-14));
        }
    }

    #[test]
    fn consistent_mass_row_sums() {
        let (_, ops) = line(4);
        let rs = ops.mass.row_sums();
        assert_relative_eq!(rs[0], 0.125, max_relative = 1e-14);
        assert_relative_eq!(rs[2], 0.25, max_relative = 1e-14);
        assert_relative_eq!(rs.iter().sum::<f64>(), 1.0, max_relative = 1e-14);
        assert_eq!(rs, ops.lumped_mass);
        let (_, ops2) = square(4);
        assert_relative_eq!(ops2.lumped_mass.iter().sum::<f64>(), 1.0, max_relative = 1e-13);
        assert!(ops2.lumped_mass.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn linear_profile_exact() {
        let (mesh, ops) = line(8);
        let u: Field = mesh.coords.iter().map(|c| c[0]).collect();
        assert_relative_eq!(grad_norm_sq(&ops, &u), 1.0, max_relative = 1e-13);
        assert_relative_eq!(lk_norm_pow(&ops, &u, 4.0), 0.2, max_relative = 1e-13);
        assert_relative_eq!(trace_norm_sq(&ops, &u), 1.0);
        assert_relative_eq!(l2_norm_sq(&ops, &u), 1.0 / 3.0, max_relative = 1e-13);
        let twice: Field = u.iter().map(|x| 2.0 * x).collect();
        assert_relative_eq!(grad_norm_sq(&ops, &twice), 4.0, max_relative = 1e-13);
        assert_eq!(grad_norm_sq(&ops, &ops.zero_field()), 0.0);
    }

    #[test]
    fn source_duality_and_oddness() {
        for (mesh, ops) in [line(9), square(6)] {
            let u: Field = mesh
                .coords
                .iter()
                .zip(&mesh.pinned)
                .map(|(c, &p)| if p { 0.0 } else { (3.0 * c[0]).sin() - 0.4 * c[1] })
                .collect();
            let s = source_vector(&ops, &u, 4.0);
            let dual: f64 = u.iter().zip(&s).map(|(a, b)| a * b).sum();
            assert_relative_eq!(dual, lk_norm_pow(&ops, &u, 4.0), max_relative = 1e-12);
            let neg: Field = u.iter().map(|x| -x).collect();
            let sn = source_vector(&ops, &neg, 4.0);
            for (a, b) in s.iter().zip(&sn) {
                assert_eq!(*a, -*b);
            }
            for &d in &mesh.dirichlet {
                assert_eq!(s[d], 0.0);
            }
        }
    }

    #[test]
    fn quad_order_tracks_exponent() {
        let (_, ops) = line(2);
        assert_eq!(ops.quad_order, 5);
        let (_, ops2) = square(2);
        assert_eq!(ops2.quad_order, 6);
    }

    #[test]
    fn two_dimensional_trace_of_unit_field() {
        let (mesh, ops) = square(4);
        let u: Field = mesh.pinned.iter().map(|&p| if p { 0.0 } else { 1.0 }).collect();
        // Γ₁ weights put the pinned corners' share on free neighbours.
        assert_relative_eq!(trace_norm_sq(&ops, &u), 1.0, max_relative = 1e-14);
        let y = vec![1.0; ops.gamma1.len()];
        assert_relative_eq!(boundary_quadratic(&ops, &y, 2.0), 2.0, max_relative = 1e-14);
    }

    #[test]
    fn parameter_validation_collects_everything() {
        let bad = PhysicalParams { a: 0.0, b: -1.0, kappa: -1.0, k_exp: 2.0, p_c: 0.0, q_c: 1.0, source_enabled: true };
        assert_eq!(bad.validate(1).len(), 5);
        let p = PhysicalParams { k_exp: 5.0, ..params() };
        assert!(p.validate(1).is_empty());
        assert_eq!(p.validate(3).len(), 1);
    }
}
