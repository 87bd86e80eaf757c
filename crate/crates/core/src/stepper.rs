//! Explicit time stepping of the semi-discrete system
//!
//! ```text
//! M_L ü = −(a + b‖∇u‖^{2κ}) K u + ∫₀ᵗ g(t−s) K u(s) ds + s(u) + W y_t + F
//! u_t + p y_t + q y = f_Γ   on Γ₁
//! ```
//!
//! by velocity Verlet (kick–drift–kick) with lumped mass. The Γ₁ damping
//! term is treated with the trapezoid rule, which only couples each Γ₁
//! node to itself and so stays pointwise explicit.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::assembly::{grad_norm_sq, source_vector, DiscreteOperators, Field, PhysicalParams};
use crate::energy::{compute_energy, EnergyReport};
use crate::geometry::Mesh;
use crate::history::{convolution_force, HistoryBuffer, HistoryError, StoragePolicy};
use crate::kernels::RelaxationKernel;
use crate::quad::integrate_adaptive;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("CFL violation at t = {t}: dt = {dt} exceeds {dt_max} (Kirchhoff coefficient {m_kir})")]
    Cfl { t: f64, dt: f64, dt_max: f64, m_kir: f64 },
    #[error("blow-up or instability: non-finite values at t = {t}")]
    BlowUp { t: f64 },
    #[error("initial data: {0}")]
    InitialData(String),
    #[error("stepping configuration: {0}")]
    Config(String),
    #[error(transparent)]
    History(#[from] HistoryError),
}

/// Space-time loads used only by manufactured-solution runs.
pub trait Forcing: Send + Sync {
    /// f_Ω(x, t).
    fn domain(&self, x: [f64; 2], t: f64) -> f64;
    /// f_Γ(x, t) on the right of `u_t + p y_t + q y = f_Γ`.
    fn boundary(&self, _x: [f64; 2], _t: f64) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimState {
    pub t: f64,
    pub u: Field,
    pub v: Field,
    /// Γ₁ displacement, one value per Γ₁ node.
    pub y: Vec<f64>,
    pub yt: Vec<f64>,
    /// a + b‖∇u‖^{2κ} at `u`.
    pub m_kir: f64,
    #[serde(skip)]
    pub accel: Field,
}

impl SimState {
    pub fn new(t: f64, u: Field, v: Field, y: Vec<f64>, yt: Vec<f64>) -> Self {
        Self { t, u, v, y, yt, m_kir: f64::NAN, accel: Vec::new() }
    }
}

#[derive(Clone)]
pub struct StepperConfig {
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    /// C_cfl in dt ≤ C_cfl·2/√(M_kir λ_max(M_L⁻¹K)).
    pub cfl_safety: f64,
    pub storage: StoragePolicy,
    pub forcing: Option<Arc<dyn Forcing>>,
}

impl std::fmt::Debug for StepperConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StepperConfig")
            .field("dt", &self.dt)
            .field("t_end", &self.t_end)
            .field("record_every", &self.record_every)
            .field("cfl_safety", &self.cfl_safety)
            .field("storage", &self.storage)
            .field("forcing", &self.forcing.is_some())
            .finish()
    }
}

impl StepperConfig {
    pub fn new(dt: f64, t_end: f64, record_every: usize) -> Self {
        Self { dt, t_end, record_every, cfl_safety: 0.9, storage: StoragePolicy::Full, forcing: None }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    fn validate(&self) -> Result<(), StepError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(StepError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0) {
            return Err(StepError::Config(format!("T_end must be nonnegative, got {}", self.t_end)));
        }
        if self.record_every == 0 {
            return Err(StepError::Config("record_every must be at least 1".into()));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(StepError::Config(format!("cfl_safety must lie in (0, 1], got {}", self.cfl_safety)));
        }
        Ok(())
    }
}

/// Everything a run reads but never mutates.
pub struct Problem<'a> {
    pub mesh: &'a Mesh,
    pub ops: &'a DiscreteOperators,
    pub kernel: &'a RelaxationKernel,
    pub params: &'a PhysicalParams,
    lambda_max: f64,
}

impl<'a> Problem<'a> {
    pub fn new(mesh: &'a Mesh, ops: &'a DiscreteOperators, kernel: &'a RelaxationKernel, params: &'a PhysicalParams) -> Self {
        // Gershgorin bound on the spectrum of M_L⁻¹K over free rows.
        let lambda_max = (0..ops.num_nodes)
            .filter(|&i| !ops.pinned[i])
            .map(|i| ops.stiffness.row(i).map(|(_, v)| v.abs()).sum::<f64>() / ops.lumped_mass[i])
            .fold(0.0, f64::max);
        Self { mesh, ops, kernel, params, lambda_max }
    }

    /// Largest stable dt for Kirchhoff coefficient `m_kir`, before the safety factor.
    pub fn dt_limit(&self, m_kir: f64) -> f64 {
        2.0 / (m_kir * self.lambda_max).sqrt()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Record {
    pub state: SimState,
    pub energy: EnergyReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub dt: f64,
    pub record_every: usize,
    pub records: Vec<Record>,
}

impl Trajectory {
    pub fn energies(&self) -> Vec<EnergyReport> {
        self.records.iter().map(|r| r.energy).collect()
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }
}

#[derive(Debug, Clone, Error)]
#[error("run aborted at t = {time}: {error}")]
pub struct RunAbort {
    pub time: f64,
    pub error: StepError,
    /// Records written before the abort.
    pub partial: Box<Trajectory>,
}

/// Right-hand side without the Γ₁ term, zero on Γ₀ rows.
fn interior_load(problem: &Problem, u: &[f64], ku: &[f64], m_kir: f64, buffer: &HistoryBuffer, t: f64, forcing: Option<&dyn Forcing>) -> Field {
    let ops = problem.ops;
    let mut r = convolution_force(buffer, problem.kernel, t);
    for (ri, k) in r.iter_mut().zip(ku) {
        *ri -= m_kir * k;
    }
    if problem.params.source_enabled {
        for (ri, s) in r.iter_mut().zip(source_vector(ops, u, problem.params.k_exp)) {
            *ri += s;
        }
    }
    if let Some(f) = forcing {
        for (i, ri) in r.iter_mut().enumerate() {
            *ri += ops.lumped_mass[i] * f.domain(problem.mesh.coords[i], t);
        }
    }
    ops.apply_dirichlet(&mut r);
    r
}

fn boundary_forcing(problem: &Problem, forcing: Option<&dyn Forcing>, t: f64) -> Vec<f64> {
    problem
        .ops
        .gamma1
        .iter()
        .map(|&i| forcing.map_or(0.0, |f| f.boundary(problem.mesh.coords[i], t)))
        .collect()
}

fn check_cfl(problem: &Problem, cfg: &StepperConfig, m_kir: f64, t: f64) -> Result<(), StepError> {
    let dt_max = cfg.cfl_safety * problem.dt_limit(m_kir);
    if cfg.dt > dt_max {
        return Err(StepError::Cfl { t, dt: cfg.dt, dt_max, m_kir });
    }
    Ok(())
}

/// Builds the t = 0 state with its acceleration and seeds the history.
pub fn initialize(
    u0: &[f64],
    u1: &[f64],
    y0: &[f64],
    problem: &Problem,
    buffer: &mut HistoryBuffer,
    cfg: &StepperConfig,
) -> Result<SimState, StepError> {
    cfg.validate()?;
    let ops = problem.ops;
    let params = problem.params;
    if u0.len() != ops.num_nodes || u1.len() != ops.num_nodes || y0.len() != ops.gamma1.len() {
        return Err(StepError::InitialData("field lengths do not match the mesh".into()));
    }
    for (name, f) in [("u0", u0), ("u1", u1)] {
        if let Some(i) = (0..ops.num_nodes).find(|&i| ops.pinned[i] && f[i] != 0.0) {
            return Err(StepError::InitialData(format!("{name} is nonzero at Γ₀ node {i}")));
        }
    }
    let forcing = cfg.forcing.as_deref();
    let ku = ops.stiffness_times(u0);
    buffer.push(0.0, u0, &ku)?;
    let m_kir = params.kirchhoff(grad_norm_sq(ops, u0));
    check_cfl(problem, cfg, m_kir, 0.0)?;
    let mut accel = interior_load(problem, u0, &ku, m_kir, buffer, 0.0, forcing);
    let fg = boundary_forcing(problem, forcing, 0.0);
    let mut yt = vec![0.0; y0.len()];
    for (s, &node) in ops.gamma1.iter().enumerate() {
        yt[s] = (fg[s] - u1[node] - params.q_c * y0[s]) / params.p_c;
        accel[node] += ops.gamma1_weights[s] * yt[s];
    }
    for (a, m) in accel.iter_mut().zip(&ops.lumped_mass) {
        *a /= m;
    }
    ops.apply_dirichlet(&mut accel);
    Ok(SimState { t: 0.0, u: u0.to_vec(), v: u1.to_vec(), y: y0.to_vec(), yt, m_kir, accel })
}

/// Advances `state` (step index `n`, time n·dt) to step n + 1.
pub fn step(
    state: &SimState,
    problem: &Problem,
    buffer: &mut HistoryBuffer,
    cfg: &StepperConfig,
    n: usize,
) -> Result<SimState, StepError> {
    let ops = problem.ops;
    let params = problem.params;
    let dt = cfg.dt;
    let t_new = (n + 1) as f64 * dt;
    let t_half = (n as f64 + 0.5) * dt;
    let forcing = cfg.forcing.as_deref();

    let v_half: Field = state.v.iter().zip(&state.accel).map(|(v, a)| v + 0.5 * dt * a).collect();
    let mut u: Field = state.u.iter().zip(&v_half).map(|(u, v)| u + dt * v).collect();
    ops.apply_dirichlet(&mut u);

    let (p, q) = (params.p_c, params.q_c);
    let fg_half = boundary_forcing(problem, forcing, t_half);
    let c = q * dt / (2.0 * p);
    let y: Vec<f64> = ops
        .gamma1
        .iter()
        .enumerate()
        .map(|(s, &node)| (state.y[s] * (1.0 - c) + dt * (fg_half[s] - v_half[node]) / p) / (1.0 + c))
        .collect();

    let ku = ops.stiffness_times(&u);
    buffer.push(t_new, &u, &ku)?;
    let m_kir = params.kirchhoff(grad_norm_sq(ops, &u));
    if !m_kir.is_finite() {
        return Err(StepError::BlowUp { t: t_new });
    }
    check_cfl(problem, cfg, m_kir, t_new)?;

    let load = interior_load(problem, &u, &ku, m_kir, buffer, t_new, forcing);
    let mut accel: Field = load.iter().zip(&ops.lumped_mass).map(|(r, m)| r / m).collect();
    let fg = boundary_forcing(problem, forcing, t_new);
    let mut yt = vec![0.0; y.len()];
    let mut v: Field = v_half.iter().zip(&accel).map(|(v, a)| v + 0.5 * dt * a).collect();
    for (s, &node) in ops.gamma1.iter().enumerate() {
        // m a = R + w (f − v_half − (dt/2) a − q y)/p, solved for a.
        let w = ops.gamma1_weights[s];
        let a = (load[node] + w * (fg[s] - v_half[node] - q * y[s]) / p) / (ops.lumped_mass[node] + w * dt / (2.0 * p));
        accel[node] = a;
        v[node] = v_half[node] + 0.5 * dt * a;
        yt[s] = (fg[s] - v[node] - q * y[s]) / p;
    }

    let finite = |f: &[f64]| f.iter().all(|x| x.is_finite());
    if !(finite(&u) && finite(&v) && finite(&y) && finite(&accel)) {
        return Err(StepError::BlowUp { t: t_new });
    }
    Ok(SimState { t: t_new, u, v, y, yt, m_kir, accel })
}

/// Runs from (u0, u1, y0) to `cfg.t_end`, recording every
/// `cfg.record_every` steps with an energy report.
pub fn run(u0: &[f64], u1: &[f64], y0: &[f64], problem: &Problem, cfg: &StepperConfig) -> Result<Trajectory, RunAbort> {
    let mut buffer = HistoryBuffer::new(problem.kernel, cfg.storage, problem.ops.num_nodes);
    run_with_buffer(u0, u1, y0, problem, cfg, &mut buffer)
}

/// As [`run`], with a caller-provided (empty) history buffer.
pub fn run_with_buffer(
    u0: &[f64],
    u1: &[f64],
    y0: &[f64],
    problem: &Problem,
    cfg: &StepperConfig,
    buffer: &mut HistoryBuffer,
) -> Result<Trajectory, RunAbort> {
    let mut traj = Trajectory { dt: cfg.dt, record_every: cfg.record_every.max(1), records: Vec::new() };
    let abort = |time: f64, error: StepError, traj: Trajectory| RunAbort { time, error, partial: Box::new(traj) };
    let mut state = match initialize(u0, u1, y0, problem, buffer, cfg) {
        Ok(s) => s,
        Err(e) => return Err(abort(0.0, e, traj)),
    };
    let record = |state: &SimState, buffer: &HistoryBuffer| Record {
        energy: compute_energy(state, buffer, problem.kernel, problem.params, problem.ops),
        state: state.clone(),
    };
    traj.records.push(record(&state, buffer));
    for n in 0..cfg.steps() {
        state = match step(&state, problem, buffer, cfg, n) {
            Ok(s) => s,
            Err(e) => {
                let t = (n + 1) as f64 * cfg.dt;
                return Err(abort(t, e, traj));
            }
        };
        if (n + 1) % traj.record_every == 0 {
            traj.records.push(record(&state, buffer));
        }
    }
    Ok(traj)
}

/// Closed-form space-time field for manufactured solutions.
pub trait ExactSolution: Send + Sync {
    fn name(&self) -> &str;
    fn value(&self, x: [f64; 2], t: f64) -> f64;
    fn velocity(&self, x: [f64; 2], t: f64) -> f64;
    fn acceleration(&self, x: [f64; 2], t: f64) -> f64;
    fn laplacian(&self, x: [f64; 2], t: f64) -> f64;
    /// Outward normal derivative at a Γ₁ point.
    fn normal_derivative(&self, x: [f64; 2], normal: [f64; 2], t: f64) -> f64;
    /// ‖∇u(·, t)‖² over the domain.
    fn grad_norm_sq(&self, t: f64) -> f64;
}

/// u ≡ 0.
#[derive(Debug, Clone, Copy)]
pub struct ZeroSolution;

impl ExactSolution for ZeroSolution {
    fn name(&self) -> &str {
        "zero"
    }
    fn value(&self, _: [f64; 2], _: f64) -> f64 {
        0.0
    }
    fn velocity(&self, _: [f64; 2], _: f64) -> f64 {
        0.0
    }
    fn acceleration(&self, _: [f64; 2], _: f64) -> f64 {
        0.0
    }
    fn laplacian(&self, _: [f64; 2], _: f64) -> f64 {
        0.0
    }
    fn normal_derivative(&self, _: [f64; 2], _: [f64; 2], _: f64) -> f64 {
        0.0
    }
    fn grad_norm_sq(&self, _: f64) -> f64 {
        0.0
    }
}

/// u(x, t) = A·x·cos t on [0, L] (Γ₀ at x = 0).
#[derive(Debug, Clone, Copy)]
pub struct LinearProfile {
    pub amplitude: f64,
    pub length: f64,
}

impl ExactSolution for LinearProfile {
    fn name(&self) -> &str {
        "linear"
    }
    fn value(&self, x: [f64; 2], t: f64) -> f64 {
        self.amplitude * x[0] * t.cos()
    }
    fn velocity(&self, x: [f64; 2], t: f64) -> f64 {
        -self.amplitude * x[0] * t.sin()
    }
    fn acceleration(&self, x: [f64; 2], t: f64) -> f64 {
        -self.value(x, t)
    }
    fn laplacian(&self, _: [f64; 2], _: f64) -> f64 {
        0.0
    }
    fn normal_derivative(&self, _: [f64; 2], normal: [f64; 2], t: f64) -> f64 {
        self.amplitude * t.cos() * normal[0]
    }
    fn grad_norm_sq(&self, t: f64) -> f64 {
        (self.amplitude * t.cos()).powi(2) * self.length
    }
}

/// u(x, t) = A·sin(πx/(2L))·cos t on [0, L]; zero flux at x = L.
#[derive(Debug, Clone, Copy)]
pub struct QuarterSineProfile {
    pub amplitude: f64,
    pub length: f64,
}

impl QuarterSineProfile {
    fn wavenumber(&self) -> f64 {
        std::f64::consts::PI / (2.0 * self.length)
    }
}

impl ExactSolution for QuarterSineProfile {
    fn name(&self) -> &str {
        "quarter_sine"
    }
    fn value(&self, x: [f64; 2], t: f64) -> f64 {
        self.amplitude * (self.wavenumber() * x[0]).sin() * t.cos()
    }
    fn velocity(&self, x: [f64; 2], t: f64) -> f64 {
        -self.amplitude * (self.wavenumber() * x[0]).sin() * t.sin()
    }
    fn acceleration(&self, x: [f64; 2], t: f64) -> f64 {
        -self.value(x, t)
    }
    fn laplacian(&self, x: [f64; 2], t: f64) -> f64 {
        -self.wavenumber().powi(2) * self.value(x, t)
    }
    fn normal_derivative(&self, x: [f64; 2], normal: [f64; 2], t: f64) -> f64 {
        let k = self.wavenumber();
        self.amplitude * k * (k * x[0]).cos() * t.cos() * normal[0]
    }
    fn grad_norm_sq(&self, t: f64) -> f64 {
        let k = self.wavenumber();
        (self.amplitude * k * t.cos()).powi(2) * self.length / 2.0
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MmsError {
    #[error("exact solution is nonzero on Γ₀ (node {node}, t = {t}, value {value})")]
    DirichletViolated { node: usize, t: f64, value: f64 },
}

struct MmsForcing {
    exact: Arc<dyn ExactSolution>,
    params: PhysicalParams,
    kernel: RelaxationKernel,
    normals: Vec<([f64; 2], [f64; 2])>,
}

impl MmsForcing {
    fn memory<F: Fn(f64) -> f64>(&self, t: f64, f: F) -> f64 {
        if self.kernel.is_zero() || t <= 0.0 {
            return 0.0;
        }
        integrate_adaptive(|s| self.kernel.g(t - s) * f(s), 0.0, t, 1e-13)
    }

    fn normal_at(&self, x: [f64; 2]) -> [f64; 2] {
        self.normals
            .iter()
            .find(|(p, _)| (p[0] - x[0]).abs() < 1e-12 && (p[1] - x[1]).abs() < 1e-12)
            .map_or([0.0, 0.0], |&(_, n)| n)
    }

    /// Flux line: y_t = M_kir ∂νu − ∫ g ∂νu(s) ds.
    fn exact_yt(&self, x: [f64; 2], t: f64) -> f64 {
        let nrm = self.normal_at(x);
        let m_kir = self.params.kirchhoff(self.exact.grad_norm_sq(t));
        m_kir * self.exact.normal_derivative(x, nrm, t) - self.memory(t, |s| self.exact.normal_derivative(x, nrm, s))
    }

    /// y(x, t) = ∫₀ᵗ y_t with y(x, 0) = 0.
    fn exact_y(&self, x: [f64; 2], t: f64) -> f64 {
        integrate_adaptive(|s| self.exact_yt(x, s), 0.0, t, 1e-12)
    }
}

impl Forcing for MmsForcing {
    fn domain(&self, x: [f64; 2], t: f64) -> f64 {
        let e = &*self.exact;
        let m_kir = self.params.kirchhoff(e.grad_norm_sq(t));
        let mut f = e.acceleration(x, t) - m_kir * e.laplacian(x, t) + self.memory(t, |s| e.laplacian(x, s));
        if self.params.source_enabled {
            let u = e.value(x, t);
            f -= u.abs().powf(self.params.k_exp - 2.0) * u;
        }
        f
    }

    fn boundary(&self, x: [f64; 2], t: f64) -> f64 {
        self.exact.velocity(x, t) + self.params.p_c * self.exact_yt(x, t) + self.params.q_c * self.exact_y(x, t)
    }
}

/// Forcing and initial data reproducing a closed-form solution.
pub struct ManufacturedCase {
    pub exact: Arc<dyn ExactSolution>,
    pub forcing: Arc<dyn Forcing>,
    pub u0: Field,
    pub u1: Field,
    pub y0: Vec<f64>,
    /// Largest |u_t + p y_t + q y| of the exact pair on Γ₁ over [0, 1];
    /// nonzero means the boundary law needs the f_Γ forcing included here.
    pub boundary_residual: f64,
}

impl ManufacturedCase {
    /// ‖u_h − I_h u‖₂ at the state's time (consistent mass).
    pub fn l2_error(&self, mesh: &Mesh, ops: &DiscreteOperators, state: &SimState) -> f64 {
        let e: Field = state.u.iter().zip(&mesh.coords).map(|(u, &x)| u - self.exact.value(x, state.t)).collect();
        ops.mass.quadratic_form(&e).max(0.0).sqrt()
    }
}

pub fn build_manufactured_case(
    exact: Arc<dyn ExactSolution>,
    params: &PhysicalParams,
    kernel: &RelaxationKernel,
    mesh: &Mesh,
) -> Result<ManufacturedCase, MmsError> {
    for t in [0.0, 0.37, 1.0, 2.5] {
        for &node in &mesh.dirichlet {
            let value = exact.value(mesh.coords[node], t);
            if value.abs() > 1e-12 {
                return Err(MmsError::DirichletViolated { node, t, value });
            }
        }
    }
    let normals = mesh.gamma1.iter().map(|&i| (mesh.coords[i], mesh.outward_normal(i))).collect();
    let forcing = MmsForcing { exact: exact.clone(), params: *params, kernel: kernel.clone(), normals };
    let mut boundary_residual = 0.0_f64;
    for i in 0..=8 {
        let t = i as f64 / 8.0;
        for &node in &mesh.gamma1 {
            boundary_residual = boundary_residual.max(forcing.boundary(mesh.coords[node], t).abs());
        }
    }
    let pin = |f: Field| -> Field { f.into_iter().zip(&mesh.pinned).map(|(v, &p)| if p { 0.0 } else { v }).collect() };
    Ok(ManufacturedCase {
        u0: pin(mesh.coords.iter().map(|&x| exact.value(x, 0.0)).collect()),
        u1: pin(mesh.coords.iter().map(|&x| exact.velocity(x, 0.0)).collect()),
        y0: vec![0.0; mesh.gamma1.len()],
        exact,
        forcing: Arc::new(forcing),
        boundary_residual,
    })
}
