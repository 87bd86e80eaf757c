//! Quadrature rules: Gauss–Legendre on segments and collapsed-tensor
//! rules on triangles, plus an adaptive double-exponential integrator.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

/// `n`-point Gauss–Legendre rule mapped to [0, 1] as `(node, weight)`.
pub fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
    let mut pts: Vec<(f64, f64)> =
        rule.as_node_weight_pairs().iter().map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

/// Rule on the reference triangle {(ξ, η) : ξ, η ≥ 0, ξ + η ≤ 1} built by
/// collapsing an `n × n` tensor Gauss rule (Duffy map η = t(1−ξ)).
/// Exact for polynomials of total degree ≤ 2n − 2; weights sum to ½.
pub fn triangle_rule(n: usize) -> Vec<([f64; 2], f64)> {
    let line = gauss_legendre_unit(n);
    let mut out = Vec::with_capacity(line.len() * line.len());
    for &(s, ws) in &line {
        for &(t, wt) in &line {
            out.push(([s, t * (1.0 - s)], ws * wt * (1.0 - s)));
        }
    }
    out
}

/// ∫ₐᵇ f by double-exponential quadrature on unit-length panels.
pub fn integrate_adaptive(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let panels = ((b - a).ceil() as usize).max(1);
    let h = (b - a) / panels as f64;
    let tol = abs_tol / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + i as f64 * h;
            let hi = if i + 1 == panels { b } else { lo + h };
            quadrature::double_exponential::integrate(&f, lo, hi, tol).integral
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_rule_exact_for_degree_2n_minus_1() {
        let r = gauss_legendre_unit(3);
        let s: f64 = r.iter().map(|&(x, w)| w * x.powi(5)).sum();
        assert!((s - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn triangle_rule_integrates_monomials() {
        let r = triangle_rule(4);
        let area: f64 = r.iter().map(|p| p.1).sum();
        assert!((area - 0.5).abs() < 1e-15);
        // ∫ ξ² η³ over the triangle = 2!·3!/7! = 1/420.
        let m: f64 = r.iter().map(|(x, w)| w * x[0].powi(2) * x[1].powi(3)).sum();
        assert!((m - 1.0 / 420.0).abs() < 1e-15);
    }

    #[test]
    fn adaptive_integrator_handles_long_intervals() {
        let v = integrate_adaptive(|t| (-t).exp(), 0.0, 40.0, 1e-14);
        assert!((v - (1.0 - (-40.0_f64).exp())).abs() < 1e-13);
    }
}
