//! Solution history and the memory quantities
//!
//! * `∫₀ᵗ g(t−s) K u(s) ds` (convolution force),
//! * `(g◇∇u)(t) = ∫₀ᵗ g(t−s) ‖∇u(t) − ∇u(s)‖² ds`,
//! * `(g′◇∇u)(t)`, the same with g′ in place of g.
//!
//! Exponential kernels use product integration against the exact kernel:
//! `Ku` is taken piecewise linear in time and each step advances the
//! accumulator `I(t) = ∫₀ᵗ e^{−α(t−s)} Ku(s) ds` in closed form, O(N) per
//! step. Other kernels use composite trapezoid quadrature over the
//! retained snapshots.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::Field;
use crate::kernels::RelaxationKernel;
use crate::linalg::{axpy, dot};

/// Relative kernel level below which truncated storage forgets snapshots.
pub const TRUNCATION_LEVEL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HistoryError {
    #[error("history must start at t = 0, got first stamp {0}")]
    NonZeroStart(f64),
    #[error("history stamps must increase strictly: last {last}, got {got}")]
    NonMonotone { last: f64, got: f64 },
    #[error("snapshot has {got} entries, expected {expected}")]
    Length { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum StoragePolicy {
    #[default]
    Full,
    /// Keep every `stride`-th snapshot; the newest is always used as well.
    Strided { stride: usize },
    /// Forget snapshots older than the age where g < 1e−8·g(0).
    Truncated,
}

#[derive(Debug, Clone, PartialEq)]
struct Snapshot {
    t: f64,
    u: Field,
    ku: Field,
    /// uᵀKu
    q: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Recursive {
    alpha: f64,
    g0: f64,
    /// ∫₀ᵗ e^{−α(t−s)} Ku(s) ds
    acc: Field,
    /// ∫₀ᵗ e^{−α(t−s)} q(s) ds
    acc_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    n: usize,
    policy: StoragePolicy,
    window: Option<f64>,
    inert: bool,
    pushes: usize,
    retained: VecDeque<Snapshot>,
    /// Newest snapshot when the policy did not retain it.
    newest: Option<Snapshot>,
    recursive: Option<Recursive>,
}

/// (1 − e^{−x}(1+x))/x², stable for small x.
fn phi2(x: f64) -> f64 {
    if x < 1e-2 {
        let mut term = 1.0;
        let mut sum = 0.0;
        let mut fact = 2.0;
        for n in 2..10 {
            if n > 2 {
                fact *= n as f64;
                term *= -x;
            }
            sum += (n - 1) as f64 * term / fact;
        }
        sum
    } else {
        (1.0 - (-x).exp() * (1.0 + x)) / (x * x)
    }
}

impl HistoryBuffer {
    /// Buffer for `kernel` on fields of length `n`. Exponential kernels use
    /// the recursive path and keep no snapshots.
    pub fn new(kernel: &RelaxationKernel, policy: StoragePolicy, n: usize) -> Self {
        let mut buf = Self::quadrature_only(kernel, policy, n);
        if let (Some(alpha), false) = (kernel.decay_rate(), buf.inert) {
            buf.recursive = Some(Recursive { alpha, g0: kernel.g0_initial, acc: vec![0.0; n], acc_q: 0.0 });
        }
        buf
    }

    /// Buffer that always evaluates by trapezoid quadrature over snapshots.
    pub fn quadrature_only(kernel: &RelaxationKernel, policy: StoragePolicy, n: usize) -> Self {
        let window = match policy {
            StoragePolicy::Truncated => Some(kernel.truncation_window(TRUNCATION_LEVEL)),
            _ => None,
        };
        Self {
            n,
            policy,
            window,
            inert: kernel.is_zero(),
            pushes: 0,
            retained: VecDeque::new(),
            newest: None,
            recursive: None,
        }
    }

    pub fn uses_recursive_path(&self) -> bool {
        self.recursive.is_some()
    }

    pub fn policy(&self) -> StoragePolicy {
        self.policy
    }

    /// Number of `push` calls so far.
    pub fn pushes(&self) -> usize {
        self.pushes
    }

    pub fn last_time(&self) -> Option<f64> {
        self.newest_snapshot().map(|s| s.t)
    }

    /// Stamps of the snapshots the quadrature would use, newest last.
    pub fn retained_times(&self) -> Vec<f64> {
        self.nodes().map(|s| s.t).collect()
    }

    fn newest_snapshot(&self) -> Option<&Snapshot> {
        self.newest.as_ref().or(self.retained.back())
    }

    fn nodes(&self) -> impl Iterator<Item = &Snapshot> {
        self.retained.iter().chain(self.newest.iter())
    }

    pub fn push(&mut self, t: f64, u: &[f64], ku: &[f64]) -> Result<(), HistoryError> {
        for len in [u.len(), ku.len()] {
            if len != self.n {
                return Err(HistoryError::Length { expected: self.n, got: len });
            }
        }
        let q = dot(u, ku);
        match self.newest_snapshot() {
            None if t != 0.0 => return Err(HistoryError::NonZeroStart(t)),
            Some(last) if !(t > last.t) => return Err(HistoryError::NonMonotone { last: last.t, got: t }),
            _ => {}
        }
        if self.inert {
            // g ≡ 0: only the newest stamp matters.
            self.newest = Some(Snapshot { t, u: Vec::new(), ku: Vec::new(), q: 0.0 });
            self.pushes += 1;
            return Ok(());
        }

        if let Some(rec) = self.recursive.as_mut() {
            if let Some(prev) = self.newest.as_ref().or(self.retained.back()) {
                let dt = t - prev.t;
                let x = rec.alpha * dt;
                let decay = (-x).exp();
                let total = -(-x).exp_m1() / rec.alpha;
                let c1 = dt * phi2(x);
                let c2 = total - c1;
                for ((a, &k0), &k1) in rec.acc.iter_mut().zip(&prev.ku).zip(ku) {
                    *a = decay * *a + c1 * k0 + c2 * k1;
                }
                rec.acc_q = decay * rec.acc_q + c1 * prev.q + c2 * q;
            }
            // Only the newest snapshot is needed for the next update.
            self.retained.clear();
            self.newest = Some(Snapshot { t, u: u.to_vec(), ku: ku.to_vec(), q });
            self.pushes += 1;
            return Ok(());
        }

        let snap = Snapshot { t, u: u.to_vec(), ku: ku.to_vec(), q };
        let keep = match self.policy {
            StoragePolicy::Strided { stride } => self.pushes.is_multiple_of(stride.max(1)),
            StoragePolicy::Full | StoragePolicy::Truncated => true,
        };
        if keep {
            self.newest = None;
            self.retained.push_back(snap);
        } else {
            self.newest = Some(snap);
        }
        if let Some(w) = self.window {
            // Keep one snapshot at or beyond the window edge so the
            // quadrature still spans the full window.
            while self.retained.len() >= 2 && t - self.retained[1].t >= w {
                self.retained.pop_front();
            }
        }
        self.pushes += 1;
        Ok(())
    }

    /// Trapezoid weights over the quadrature nodes, oldest first.
    fn trapezoid_weights(&self) -> Vec<f64> {
        let ts: Vec<f64> = self.nodes().map(|s| s.t).collect();
        let m = ts.len();
        let mut w = vec![0.0; m];
        for i in 1..m {
            let h = 0.5 * (ts[i] - ts[i - 1]);
            w[i - 1] += h;
            w[i] += h;
        }
        w
    }
}

/// `∫₀ᵗ g(t−s) K u(s) ds` at the newest stamp `t`.
pub fn convolution_force(buffer: &HistoryBuffer, kernel: &RelaxationKernel, t: f64) -> Field {
    let mut out = vec![0.0; buffer.n];
    if buffer.inert {
        return out;
    }
    debug_assert!(buffer.last_time().is_none_or(|l| (l - t).abs() <= 1e-12 * t.abs().max(1.0)));
    if let Some(rec) = &buffer.recursive {
        axpy(rec.g0, &rec.acc, &mut out);
        return out;
    }
    for (snap, w) in buffer.nodes().zip(buffer.trapezoid_weights()) {
        if w != 0.0 {
            axpy(w * kernel.g(t - snap.t), &snap.ku, &mut out);
        }
    }
    out
}

fn diamond(buffer: &HistoryBuffer, t: f64, u_now: &[f64], weight: impl Fn(f64) -> f64) -> f64 {
    let Some(newest) = buffer.newest_snapshot() else {
        return 0.0;
    };
    debug_assert_eq!(newest.u.as_slice(), u_now, "u_now must be the field pushed at t");
    // (u_now − u_s)ᵀK(u_now − u_s) = q_now − 2 u_nowᵀKu_s + q_s.
    let mut sum = 0.0;
    for (snap, w) in buffer.nodes().zip(buffer.trapezoid_weights()) {
        if w != 0.0 {
            let quad = newest.q - 2.0 * dot(u_now, &snap.ku) + snap.q;
            sum += w * weight(t - snap.t) * quad.max(0.0);
        }
    }
    sum
}

/// `(g◇∇u)(t)` at the newest stamp, for the field `u_now` pushed there.
pub fn g_diamond(buffer: &HistoryBuffer, kernel: &RelaxationKernel, t: f64, u_now: &[f64]) -> f64 {
    if buffer.inert {
        return 0.0;
    }
    if let Some(rec) = &buffer.recursive {
        let q_now = buffer.newest_snapshot().map_or(0.0, |s| s.q);
        let mass = -(-rec.alpha * t).exp_m1() / rec.alpha;
        let v = rec.g0 * (q_now * mass - 2.0 * dot(u_now, &rec.acc) + rec.acc_q);
        return v.max(0.0);
    }
    diamond(buffer, t, u_now, |age| kernel.g(age))
}

/// `(g′◇∇u)(t)`; nonpositive since g′ = −ξg.
pub fn g_prime_diamond(buffer: &HistoryBuffer, kernel: &RelaxationKernel, t: f64, u_now: &[f64]) -> f64 {
    if buffer.inert {
        return 0.0;
    }
    if let Some(rec) = &buffer.recursive {
        return -rec.alpha * g_diamond(buffer, kernel, t, u_now);
    }
    diamond(buffer, t, u_now, |age| kernel.g_prime(age))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, grad_norm_sq, DiscreteOperators, PhysicalParams};
    use crate::geometry::{build_mesh, DomainSpec, Face};
    use crate::kernels::{build_kernel, RateFunction};

    fn ops() -> DiscreteOperators {
        let mesh = build_mesh(&DomainSpec::interval(1.0, 6, Face::Right)).unwrap();
        let p = PhysicalParams { a: 2.0, b: 1.0, kappa: 1.0, k_exp: 4.0, p_c: 1.0, q_c: 1.0, source_enabled: true };
        assemble(&mesh, &p)
    }

    fn profile(ops: &DiscreteOperators) -> Field {
        let mut w: Field = (0..ops.num_nodes).map(|i| (1.3 * i as f64).sin() + 0.2).collect();
        ops.apply_dirichlet(&mut w);
        w
    }

    fn exp_kernel() -> RelaxationKernel {
        build_kernel(RateFunction::Constant { alpha: 1.0 }, 1.0, 2.0).unwrap()
    }

    /// Pushes u(s) = f(s)·w at s = 0, dt, …, steps·dt.
    fn fill(buf: &mut HistoryBuffer, ops: &DiscreteOperators, w: &[f64], f: impl Fn(f64) -> f64, dt: f64, steps: usize) {
        for i in 0..=steps {
            let s = i as f64 * dt;
            let u: Field = w.iter().map(|x| f(s) * x).collect();
            let ku = ops.stiffness_times(&u);
            buf.push(s, &u, &ku).unwrap();
        }
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    #[test]
    fn stamps_must_start_at_zero_and_increase() {
        let ops = ops();
        let k = exp_kernel();
        let z = ops.zero_field();
        let mut buf = HistoryBuffer::new(&k, StoragePolicy::Full, ops.num_nodes);
        assert_eq!(buf.push(0.5, &z, &z), Err(HistoryError::NonZeroStart(0.5)));
        buf.push(0.0, &z, &z).unwrap();
        assert_eq!(buf.pushes(), 1);
        assert_eq!(buf.push(0.0, &z, &z), Err(HistoryError::NonMonotone { last: 0.0, got: 0.0 }));
        assert!(convolution_force(&buf, &k, 0.0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn stride_keeps_every_second_and_the_newest() {
        let ops = ops();
        let k = build_kernel(RateFunction::PowerLaw { alpha: 2.0 }, 1.0, 3.0).unwrap();
        let mut buf = HistoryBuffer::new(&k, StoragePolicy::Strided { stride: 2 }, ops.num_nodes);
        fill(&mut buf, &ops, &profile(&ops), |s| s, 1.0, 5);
        assert_eq!(buf.retained_times(), vec![0.0, 2.0, 4.0, 5.0]);
    }

    #[test]
    fn truncation_forgets_old_snapshots() {
        let ops = ops();
        let k = build_kernel(RateFunction::Constant { alpha: 4.0 }, 1.0, 2.0).unwrap();
        let mut buf = HistoryBuffer::quadrature_only(&k, StoragePolicy::Truncated, ops.num_nodes);
        fill(&mut buf, &ops, &profile(&ops), |s| s, 0.5, 40);
        let w = k.truncation_window(TRUNCATION_LEVEL);
        let ts = buf.retained_times();
        assert!(ts.len() < 41);
        assert!(20.0 - ts[0] >= w && 20.0 - ts[1] < w);
    }

    #[test]
    fn recursive_accumulator_for_constant_field() {
        let ops = ops();
        let k = build_kernel(RateFunction::Constant { alpha: 0.7 }, 1.0, 5.0).unwrap();
        let w = profile(&ops);
        let mut buf = HistoryBuffer::new(&k, StoragePolicy::Full, ops.num_nodes);
        assert!(buf.uses_recursive_path());
        fill(&mut buf, &ops, &w, |_| 1.0, 0.37, 13);
        let t: f64 = 13.0 * 0.37;
        let expect: Field = ops.stiffness_times(&w).iter().map(|x| x * (1.0 - (-0.7 * t).exp()) / 0.7).collect();
        assert!(max_rel(&convolution_force(&buf, &k, t), &expect) < 1e-13);
        assert!(g_diamond(&buf, &k, t, &w).abs() < 1e-13);
        assert!(g_prime_diamond(&buf, &k, t, &w).abs() < 1e-13);
    }

    #[test]
    fn linear_history_closed_forms() {
        let ops = ops();
        let k = exp_kernel();
        let w = profile(&ops);
        let kw = ops.stiffness_times(&w);
        let gw = grad_norm_sq(&ops, &w);
        let (dt, steps) = (0.01, 300);
        let t = dt * steps as f64;
        let mut fast = HistoryBuffer::new(&k, StoragePolicy::Full, ops.num_nodes);
        let mut trap = HistoryBuffer::quadrature_only(&k, StoragePolicy::Full, ops.num_nodes);
        fill(&mut fast, &ops, &w, |s| s, dt, steps);
        fill(&mut trap, &ops, &w, |s| s, dt, steps);
        let force: Field = kw.iter().map(|x| x * (t - 1.0 + (-t).exp())).collect();
        // Product integration is exact for linear histories.
        assert!(max_rel(&convolution_force(&fast, &k, t), &force) < 1e-12);
        assert!(max_rel(&convolution_force(&trap, &k, t), &force) < 1e-4);
        let u: Field = w.iter().map(|x| t * x).collect();
        let diamond = (2.0 - (-t).exp() * (t * t + 2.0 * t + 2.0)) * gw;
        for buf in [&fast, &trap] {
            let gd = g_diamond(buf, &k, t, &u);
            assert!((gd - diamond).abs() < 1e-4 * diamond, "{gd} vs {diamond}");
            assert!((g_prime_diamond(buf, &k, t, &u) + gd).abs() < 1e-4 * diamond);
        }
    }

    #[test]
    fn recursive_and_trapezoid_paths_agree() {
        let ops = ops();
        let k = exp_kernel();
        let w = profile(&ops);
        let mut fast = HistoryBuffer::new(&k, StoragePolicy::Full, ops.num_nodes);
        let mut trap = HistoryBuffer::quadrature_only(&k, StoragePolicy::Full, ops.num_nodes);
        let f = |s: f64| (3.0 * s).sin() + 0.5;
        fill(&mut fast, &ops, &w, f, 1e-3, 100);
        fill(&mut trap, &ops, &w, f, 1e-3, 100);
        let t = 0.1;
        assert!(max_rel(&convolution_force(&fast, &k, t), &convolution_force(&trap, &k, t)) < 1e-6);
    }

    #[test]
    fn trapezoid_error_is_second_order() {
        let ops = ops();
        let k = build_kernel(RateFunction::PowerLaw { alpha: 2.0 }, 1.0, 3.0).unwrap();
        let w = profile(&ops);
        let kw = ops.stiffness_times(&w);
        // u(s) = s·w, g = (1+τ)^{−2}: ∫₀ᵗ (t−τ)(1+τ)^{−2} dτ = t − ln(1+t).
        let t: f64 = 2.0;
        let exact: Field = kw.iter().map(|x| x * (t - t.ln_1p())).collect();
        let err = |steps: usize| {
            let mut buf = HistoryBuffer::new(&k, StoragePolicy::Full, ops.num_nodes);
            fill(&mut buf, &ops, &w, |s| s, t / steps as f64, steps);
            max_rel(&convolution_force(&buf, &k, t), &exact)
        };
        let (e1, e2, e3) = (err(20), err(40), err(80));
        for r in [e1 / e2, e2 / e3] {
            assert!((3.5..4.5).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn diamond_ignores_constant_offsets_and_has_signs() {
        let ops = ops();
        let k = build_kernel(RateFunction::OscillatoryPerturbed { alpha: 1.0, epsilon: 0.5 }, 1.0, 2.0).unwrap();
        let w = profile(&ops);
        let mut c: Field = (0..ops.num_nodes).map(|i| 0.3 * i as f64 - 1.0).collect();
        ops.apply_dirichlet(&mut c);
        let f = |s: f64| (2.0 * s).cos();
        let mut plain = HistoryBuffer::new(&k, StoragePolicy::Full, ops.num_nodes);
        let mut shifted = HistoryBuffer::new(&k, StoragePolicy::Full, ops.num_nodes);
        let dt = 0.05;
        for i in 0..=40 {
            let s = i as f64 * dt;
            let u: Field = w.iter().map(|x| f(s) * x).collect();
            let v: Field = u.iter().zip(&c).map(|(a, b)| a + b).collect();
            plain.push(s, &u, &ops.stiffness_times(&u)).unwrap();
            shifted.push(s, &v, &ops.stiffness_times(&v)).unwrap();
        }
        let t = 2.0;
        let u: Field = w.iter().map(|x| f(t) * x).collect();
        let v: Field = u.iter().zip(&c).map(|(a, b)| a + b).collect();
        let (a, b) = (g_diamond(&plain, &k, t, &u), g_diamond(&shifted, &k, t, &v));
        assert!((a - b).abs() <= 1e-10 * a);
        assert!(a > 0.0);
        assert!(g_prime_diamond(&plain, &k, t, &u) < 0.0);
    }

    #[test]
    fn zero_kernel_is_inert() {
        let ops = ops();
        let k = RelaxationKernel::zero(1.0);
        let w = profile(&ops);
        let mut buf = HistoryBuffer::new(&k, StoragePolicy::Full, ops.num_nodes);
        fill(&mut buf, &ops, &w, |s| s, 0.1, 10);
        assert!(convolution_force(&buf, &k, 1.0).iter().all(|&x| x == 0.0));
        assert_eq!(g_diamond(&buf, &k, 1.0, &w), 0.0);
        assert_eq!(buf.last_time(), Some(1.0));
    }
}
