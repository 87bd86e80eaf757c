//! Scenario orchestration and artifact output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::assembly::{assemble, DiscreteOperators, PhysicalParams};
use crate::config::{DecayForm, MmsExact, RunConfig};
use crate::decay::{decay_report, DecayReport, SampledEnergy};
use crate::energy::rate_identity_residual;
use crate::geometry::{build_mesh, Face, Mesh};
use crate::kernels::{validate_hypotheses, HypothesisReport, RelaxationKernel};
use crate::stableset::{check_initial_membership, compute_well_constants, verify_invariance, InvarianceVerdict, StableSetReport, WellConstants};
use crate::stepper::{build_manufactured_case, run, ExactSolution, LinearProfile, Problem, QuarterSineProfile, StepperConfig, Trajectory};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Config(String),
    #[error("run aborted at t = {time}: {message} (partial output in {dir})")]
    Aborted { time: f64, message: String, dir: PathBuf },
    #[error("analysis failed: {0}")]
    Analysis(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Mesh, operators and kernel of a configuration.
pub struct Setup {
    pub mesh: Mesh,
    pub ops: DiscreteOperators,
    pub kernel: RelaxationKernel,
}

pub fn setup(cfg: &RunConfig) -> Result<Setup, ScenarioError> {
    let errors = cfg.validate();
    if !errors.is_empty() {
        return Err(ScenarioError::Config(errors.join("; ")));
    }
    let mesh = build_mesh(&cfg.domain).map_err(|e| ScenarioError::Config(e.to_string()))?;
    let ops = assemble(&mesh, &cfg.physics);
    let kernel = cfg.build_kernel().map_err(ScenarioError::Config)?;
    Ok(Setup { mesh, ops, kernel })
}

pub fn stepper_config(cfg: &RunConfig) -> StepperConfig {
    let s = &cfg.stepping;
    StepperConfig { cfl_safety: s.cfl_safety, storage: s.storage, ..StepperConfig::new(s.dt, s.t_end, s.record_every) }
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentitySummary {
    pub max_residual: f64,
    pub bound: f64,
    /// max residual / ((dt² + h²)·E(0)).
    pub scaled: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicitySummary {
    pub max_increase: f64,
    pub tol_e: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AbortInfo {
    pub time: f64,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioOutcome {
    pub name: String,
    pub h: f64,
    pub e0: f64,
    pub tol_e: f64,
    #[serde(skip)]
    pub trajectory: Trajectory,
    /// Identity residual per record (NaN when unavailable).
    #[serde(skip)]
    pub residuals: Vec<f64>,
    /// max over Γ₁ of |M(‖∇u₀‖²)∂_ν u₀ + (u₁ + q y₀)/p|; nonzero data are
    /// admitted and the first steps absorb the mismatch.
    pub initial_boundary_residual: f64,
    pub abort: Option<AbortInfo>,
    pub identity: Option<IdentitySummary>,
    pub monotonicity: MonotonicitySummary,
    pub hypotheses: Option<HypothesisReport>,
    pub constants: Option<WellConstants>,
    pub membership: Option<StableSetReport>,
    pub invariance: Option<InvarianceVerdict>,
    pub decay: Option<DecayReport>,
    pub decay_error: Option<String>,
    pub verdicts: BTreeMap<String, bool>,
    pub elapsed_ms: u128,
}

impl ScenarioOutcome {
    /// Names of expected verdicts that did not come out as expected.
    pub fn mismatches(&self, expected: &BTreeMap<String, bool>) -> Vec<String> {
        expected
            .iter()
            .filter(|(k, v)| self.verdicts.get(*k) != Some(v))
            .map(|(k, v)| format!("{k}: expected {v}, got {:?}", self.verdicts.get(k)))
            .collect()
    }
}

/// Mismatch at t = 0 between the Γ₁ flux and y_t = −(u₁ + q y₀)/p. The
/// normal derivative of u₀ is a one-sided difference of the closed-form profile.
fn boundary_compatibility(cfg: &RunConfig, mesh: &Mesh, ops: &DiscreteOperators, u0: &[f64]) -> f64 {
    let params = &cfg.physics;
    let m = params.kirchhoff(crate::assembly::grad_norm_sq(ops, u0));
    let domain = &cfg.domain;
    let mut worst = 0.0_f64;
    for &node in &ops.gamma1 {
        let x = mesh.coords[node];
        let yt = -(cfg.initial.u1.value(domain, x) + params.q_c * cfg.initial.y0) / params.p_c;
        for face in &domain.gamma1_faces {
            let (axis, sign, at) = match face {
                Face::Left => (0, -1.0, 0.0),
                Face::Right => (0, 1.0, domain.extent[0]),
                Face::Bottom => (1, -1.0, 0.0),
                Face::Top => (1, 1.0, domain.extent.get(1).copied().unwrap_or(0.0)),
            };
            if axis >= domain.dimension || (x[axis] - at).abs() > 1e-9 * domain.extent[axis] {
                continue;
            }
            let eps = 1e-5 * domain.extent[axis];
            let inward = |k: f64| {
                let mut p = x;
                p[axis] -= sign * k * eps;
                cfg.initial.u0.value(domain, p)
            };
            let dnu = (3.0 * inward(0.0) - 4.0 * inward(1.0) + inward(2.0)) / (2.0 * eps);
            worst = worst.max((m * dnu - yt).abs());
        }
    }
    worst
}

/// Runs the simulation and every configured analysis, without touching disk.
pub fn simulate(cfg: &RunConfig) -> Result<ScenarioOutcome, ScenarioError> {
    let start = Instant::now();
    let Setup { mesh, ops, kernel } = setup(cfg)?;
    let params: PhysicalParams = cfg.physics;
    let (u0, u1, y0) = cfg.initial_fields(&mesh, &ops);
    let initial_boundary_residual = boundary_compatibility(cfg, &mesh, &ops, &u0);
    let problem = Problem::new(&mesh, &ops, &kernel, &params);
    let (trajectory, abort) = match run(&u0, &u1, &y0, &problem, &stepper_config(cfg)) {
        Ok(t) => (t, None),
        Err(a) => (*a.partial, Some(AbortInfo { time: a.time, message: a.error.to_string() })),
    };
    let energies = trajectory.energies();
    let h = mesh.h();
    let dt = cfg.stepping.dt;
    let e0 = energies.first().map_or(0.0, |e| e.total);
    let scale = (dt * dt + h * h) * e0.abs();
    let tol_e = cfg.tolerances.energy_c * scale;
    let mut verdicts = BTreeMap::new();
    verdicts.insert("completed".to_string(), abort.is_none());

    let residuals = rate_identity_residual(&energies).unwrap_or_else(|_| vec![f64::NAN; energies.len()]);
    let identity = (energies.len() >= 3).then(|| {
        let max_residual = residuals.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
        let bound = cfg.tolerances.identity_c * scale;
        IdentitySummary { max_residual, bound, scaled: if scale > 0.0 { max_residual / scale } else { 0.0 }, passed: max_residual <= bound }
    });
    if let Some(id) = &identity {
        verdicts.insert("energy_identity".into(), id.passed);
    }
    let max_increase = energies.windows(2).map(|w| w[1].total - w[0].total).fold(f64::NEG_INFINITY, f64::max);
    let monotonicity = MonotonicitySummary { max_increase, tol_e, passed: !(max_increase > tol_e) };
    verdicts.insert("energy_monotone".into(), monotonicity.passed);

    let an = &cfg.analysis;
    let hypotheses = (an.hypotheses && !kernel.is_zero()).then(|| validate_hypotheses(&kernel, params.boundary(), an.hypothesis_horizon));
    if let Some(h) = &hypotheses {
        verdicts.insert("hypotheses".into(), h.all_passed);
    }

    let constants = if an.constants || an.stable_set {
        Some(compute_well_constants(&mesh, &ops, &params, &kernel, &an.optimizer).map_err(|e| ScenarioError::Analysis(e.to_string()))?)
    } else {
        None
    };
    let (mut membership, mut invariance) = (None, None);
    if let (true, Some(c)) = (an.stable_set, &constants) {
        let m = check_initial_membership(&u0, &u1, &y0, c.lambda1, c.d1, &kernel, &params, &ops);
        verdicts.insert("in_well".into(), m.in_well);
        let inv = verify_invariance(&energies, c.b_omega, params.k_exp, tol_e);
        verdicts.insert("invariance".into(), inv.passed && abort.is_none());
        membership = Some(m);
        invariance = Some(inv);
    }

    let (mut decay, mut decay_error) = (None, None);
    if an.decay && abort.is_none() && energies.len() >= 3 {
        let t: Vec<f64> = energies.iter().map(|e| e.t).collect();
        let e: Vec<f64> = energies.iter().map(|e| e.total).collect();
        match decay_for_series(t, e, cfg, &kernel, tol_e) {
            Ok(r) => {
                let form = match an.decay_form {
                    DecayForm::Exponential => Some(r.exponential_fit),
                    DecayForm::Power => Some(r.power_fit),
                    DecayForm::Unspecified => None,
                };
                if let Some(fit) = form {
                    let ok = fit.is_some_and(|f| f.slope < 0.0 && f.r2 >= cfg.tolerances.r2_min);
                    verdicts.insert("decay_form".into(), ok);
                }
                verdicts.insert("omega_positive".into(), r.omega.trivial || r.omega.omega_max.is_some_and(|w| w > 0.0));
                verdicts.insert("horizon_stable".into(), r.horizon.passed);
                verdicts.insert("rho_finite".into(), r.weighted.max_rho.is_finite() && r.weighted.violation.is_none());
                decay = Some(r);
            }
            Err(e) => {
                verdicts.insert("decay_input".into(), false);
                decay_error = Some(e);
            }
        }
    }

    Ok(ScenarioOutcome {
        name: cfg.name.clone(),
        h,
        e0,
        tol_e,
        trajectory,
        residuals,
        initial_boundary_residual,
        abort,
        identity,
        monotonicity,
        hypotheses,
        constants,
        membership,
        invariance,
        decay,
        decay_error,
        verdicts,
        elapsed_ms: start.elapsed().as_millis(),
    })
}

/// Decay analysis of an energy series under the configuration's kernel.
pub fn decay_for_series(t: Vec<f64>, e: Vec<f64>, cfg: &RunConfig, kernel: &RelaxationKernel, tol_e: f64) -> Result<DecayReport, String> {
    let horizon = *t.last().ok_or("empty series")?;
    let sampled = SampledEnergy::from_rate(t, e, &kernel.rate, tol_e).map_err(|e| e.to_string())?;
    let t_tail = cfg.analysis.t_tail.unwrap_or(0.5 * horizon);
    let t0 = cfg.analysis.t0.unwrap_or_else(|| kernel.time_for_mass_fraction(0.5));
    Ok(decay_report(&sampled, t_tail, t0, cfg.tolerances.horizon_change))
}

fn sci(x: f64) -> String {
    format!("{x:.14e}")
}

/// Trajectory CSV with a header row.
pub fn trajectory_csv(outcome: &ScenarioOutcome) -> String {
    let records = &outcome.trajectory.records;
    let ny = records.first().map_or(0, |r| r.state.y.len());
    let mut out = String::from("t,E,kinetic,elastic,kirchhoff,boundary,memory,source,gamma_fn,l2_norm,grad_norm");
    for j in 0..ny {
        let _ = write!(out, ",y_{j}");
    }
    out.push_str(",residual\n");
    for (i, r) in records.iter().enumerate() {
        let e = &r.energy;
        let mut cols = vec![e.t, e.total, e.kinetic, e.elastic, e.kirchhoff, e.boundary, e.memory, e.source, e.gamma_fn, e.l2_norm, e.grad_sq.sqrt()];
        cols.extend(&r.state.y);
        cols.push(outcome.residuals.get(i).copied().unwrap_or(f64::NAN));
        out.push_str(&cols.into_iter().map(sci).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// (t, E) columns of a trajectory CSV.
pub fn read_trajectory_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>), String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or("empty CSV")?.split(',').map(str::trim).collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or(format!("missing column {name}"));
    let (ti, ei) = (col("t")?, col("E")?);
    let (mut t, mut e) = (vec![], vec![]);
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let get = |i: usize| -> Result<f64, String> {
            fields.get(i).ok_or(format!("row {}: too few columns", n + 2))?.trim().parse().map_err(|err| format!("row {}: {err}", n + 2))
        };
        t.push(get(ti)?);
        e.push(get(ei)?);
    }
    Ok((t, e))
}

fn two_column(rows: impl Iterator<Item = (f64, f64)>) -> String {
    rows.map(|(a, b)| format!("{} {}\n", sci(a), sci(b))).collect()
}

#[derive(Serialize)]
struct Metadata<'a> {
    crate_version: &'static str,
    name: &'a str,
    seed: u64,
    dt: f64,
    t_end: f64,
    steps: usize,
    record_every: usize,
    records: usize,
    h: f64,
    num_nodes: usize,
    quadrature_points_per_direction: usize,
    history_fast_path: bool,
    storage: crate::history::StoragePolicy,
    cfl_safety: f64,
    tolerances: crate::config::Tolerances,
    tol_e: f64,
    aborted: bool,
    elapsed_ms: u128,
    config: &'a RunConfig,
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf, ScenarioError> {
    fs::write(&path, contents).map_err(|source| ScenarioError::Io { path: path.clone(), source })?;
    Ok(path)
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

/// Writes every artifact of `outcome` into `dir`; returns the paths.
pub fn write_artifacts(outcome: &ScenarioOutcome, cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
    fs::create_dir_all(dir).map_err(|source| ScenarioError::Io { path: dir.to_path_buf(), source })?;
    let setup = setup(cfg)?;
    let mut paths = vec![write(dir.join("trajectory.csv"), &trajectory_csv(outcome))?];
    let records = &outcome.trajectory.records;
    paths.push(write(dir.join("energy.dat"), &two_column(records.iter().map(|r| (r.energy.t, r.energy.total))))?);
    paths.push(write(
        dir.join("phi_log_energy.dat"),
        &two_column(records.iter().filter(|r| r.energy.total > 0.0).map(|r| (setup.kernel.phi(r.energy.t), r.energy.total.ln()))),
    )?);
    if let Some(d) = &outcome.decay {
        let stride = cfg.analysis.s_stride.max(1);
        paths.push(write(dir.join("rho.dat"), &two_column(d.weighted.s.iter().zip(&d.weighted.rho).step_by(stride).map(|(s, r)| (*s, *r))))?);
        paths.push(write(dir.join("decay_report.json"), &json(d))?);
    }
    if let Some(c) = &outcome.constants {
        paths.push(write(dir.join("well_constants.json"), &json(c))?);
    }
    if outcome.membership.is_some() || outcome.invariance.is_some() {
        #[derive(Serialize)]
        struct StableSet<'a> {
            membership: &'a Option<StableSetReport>,
            invariance: &'a Option<InvarianceVerdict>,
        }
        paths.push(write(
            dir.join("stable_set_report.json"),
            &json(&StableSet { membership: &outcome.membership, invariance: &outcome.invariance }),
        )?);
    }
    if let Some(h) = &outcome.hypotheses {
        paths.push(write(dir.join("hypothesis_report.json"), &json(h))?);
    }
    paths.push(write(dir.join("summary.json"), &json(outcome))?);
    let meta = Metadata {
        crate_version: env!("CARGO_PKG_VERSION"),
        name: &cfg.name,
        seed: cfg.seed,
        dt: cfg.stepping.dt,
        t_end: cfg.stepping.t_end,
        steps: stepper_config(cfg).steps(),
        record_every: cfg.stepping.record_every,
        records: records.len(),
        h: outcome.h,
        num_nodes: setup.mesh.num_nodes(),
        quadrature_points_per_direction: setup.ops.quad_order,
        history_fast_path: setup.kernel.decay_rate().is_some(),
        storage: cfg.stepping.storage,
        cfl_safety: cfg.stepping.cfl_safety,
        tolerances: cfg.tolerances,
        tol_e: outcome.tol_e,
        aborted: outcome.abort.is_some(),
        elapsed_ms: outcome.elapsed_ms,
        config: cfg,
    };
    paths.push(write(dir.join("metadata.json"), &json(&meta))?);
    let marker = dir.join("ABORTED");
    match &outcome.abort {
        Some(a) => paths.push(write(marker, &format!("t = {}\n{}\n", a.time, a.message))?),
        None => {
            let _ = fs::remove_file(marker);
        }
    }
    Ok(paths)
}

/// Simulates and writes artifacts to `cfg.output_dir`. An aborted run
/// keeps its partial output and is returned as an error.
pub fn run_scenario(cfg: &RunConfig) -> Result<ScenarioOutcome, ScenarioError> {
    let outcome = simulate(cfg)?;
    write_artifacts(&outcome, cfg, &cfg.output_dir)?;
    if let Some(a) = &outcome.abort {
        return Err(ScenarioError::Aborted { time: a.time, message: a.message.clone(), dir: cfg.output_dir.clone() });
    }
    Ok(outcome)
}

/// One scenario per initial amplitude, each in `root/amp_NN`.
pub fn run_sweep(cfg: &RunConfig, amplitudes: &[f64], root: &Path) -> Vec<(f64, PathBuf, Result<ScenarioOutcome, ScenarioError>)> {
    amplitudes
        .par_iter()
        .enumerate()
        .map(|(i, &amp)| {
            let mut c = cfg.clone();
            c.initial.u0 = c.initial.u0.with_amplitude(amp);
            c.name = format!("{}_amp_{i:02}", cfg.name);
            c.output_dir = root.join(format!("amp_{i:02}"));
            let dir = c.output_dir.clone();
            (amp, dir, run_scenario(&c))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct MmsLevel {
    pub resolution: usize,
    pub dt: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MmsReport {
    pub exact: String,
    pub levels: Vec<MmsLevel>,
    pub ratios: Vec<f64>,
    pub min_ratio: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Manufactured-solution ladder; level j refines h and dt by 2^j.
pub fn run_mms(cfg: &RunConfig) -> Result<MmsReport, ScenarioError> {
    let mms = cfg.mms.ok_or_else(|| ScenarioError::Config("configuration has no mms section".into()))?;
    let base = setup(cfg)?;
    let length = cfg.domain.extent[0];
    let exact: Arc<dyn ExactSolution> = match mms.exact {
        MmsExact::Linear => Arc::new(LinearProfile { amplitude: mms.amplitude, length }),
        MmsExact::QuarterSine => Arc::new(QuarterSineProfile { amplitude: mms.amplitude, length }),
    };
    let levels: Result<Vec<MmsLevel>, ScenarioError> = (0..mms.levels)
        .into_par_iter()
        .map(|j| {
            let factor = 1usize << j;
            let mesh = build_mesh(&cfg.domain.refined(factor)).map_err(|e| ScenarioError::Config(e.to_string()))?;
            let ops = assemble(&mesh, &cfg.physics);
            let case = build_manufactured_case(exact.clone(), &cfg.physics, &base.kernel, &mesh).map_err(|e| ScenarioError::Config(e.to_string()))?;
            let dt = cfg.stepping.dt / factor as f64;
            let steps = (cfg.stepping.t_end / dt).round() as usize;
            let mut sc = StepperConfig::new(dt, cfg.stepping.t_end, steps.max(1));
            sc.cfl_safety = cfg.stepping.cfl_safety;
            sc.storage = cfg.stepping.storage;
            sc.forcing = Some(case.forcing.clone());
            let problem = Problem::new(&mesh, &ops, &base.kernel, &cfg.physics);
            let traj = run(&case.u0, &case.u1, &case.y0, &problem, &sc)
                .map_err(|a| ScenarioError::Aborted { time: a.time, message: a.error.to_string(), dir: PathBuf::new() })?;
            let last = traj.last().expect("at least the initial record");
            Ok(MmsLevel { resolution: mesh.resolution[0], dt, error: case.l2_error(&mesh, &ops, &last.state) })
        })
        .collect();
    let levels = levels?;
    let ratios: Vec<f64> = levels.windows(2).map(|w| w[0].error / w[1].error).collect();
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = cfg.tolerances.mms_ratio_min;
    Ok(MmsReport { exact: exact.name().into(), levels, ratios, min_ratio, threshold, passed: min_ratio >= threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn zero_config() -> RunConfig {
        parse_config(
            r#"{
            "name": "zero",
            "domain": {"dimension": 1, "extent": [1.0], "gamma1_faces": ["right"], "resolution": [8]},
            "physics": {"a": 2.0, "b": 1.0, "kappa": 1.0, "k_exp": 4.0, "p_c": 1.0, "q_c": 1.0},
            "kernel": {"g0": 1.0, "rate": {"family": "constant", "alpha": 1.0}},
            "stepping": {"dt": 0.01, "t_end": 1.0, "record_every": 10},
            "analysis": {"hypothesis_horizon": 20.0}
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn zero_data_passes_trivially() {
        let out = simulate(&zero_config()).unwrap();
        assert_eq!(out.trajectory.records.len(), 11);
        assert!(out.trajectory.energies().iter().all(|e| e.total == 0.0));
        assert!(out.verdicts.values().all(|&v| v), "{:?}", out.verdicts);
        assert!(out.decay.as_ref().unwrap().omega.trivial);
        let csv = trajectory_csv(&out);
        let (t, e) = read_trajectory_csv(&csv).unwrap();
        assert_eq!(t.len(), 11);
        assert!(e.iter().all(|&v| v == 0.0));
        assert_eq!(csv.lines().next().unwrap(), "t,E,kinetic,elastic,kirchhoff,boundary,memory,source,gamma_fn,l2_norm,grad_norm,y_0,residual");
        assert!(csv.lines().nth(1).unwrap().starts_with("0.00000000000000e0,"));
    }

    #[test]
    fn boundary_compatibility_of_linear_data() {
        let mut cfg = zero_config();
        assert_eq!(simulate(&cfg).unwrap().initial_boundary_residual, 0.0);
        cfg.initial.u0 = crate::config::Profile::Linear { amplitude: 0.2 };
        cfg.initial.y0 = 0.5;
        cfg.stepping.t_end = 0.1;
        let out = simulate(&cfg).unwrap();
        let p = &cfg.physics;
        let expected = p.kirchhoff(0.04) * 0.2 + p.q_c * 0.5 / p.p_c;
        assert!((out.initial_boundary_residual - expected).abs() < 1e-8, "{} vs {expected}", out.initial_boundary_residual);
    }

    #[test]
    fn csv_reader_reports_bad_rows() {
        assert!(read_trajectory_csv("t,E\n0,1\n1,x\n").unwrap_err().contains("row 3"));
        assert!(read_trajectory_csv("a,b\n").unwrap_err().contains("column t"));
    }

    #[test]
    fn invalid_config_is_rejected_before_compute() {
        let mut cfg = zero_config();
        cfg.stepping.dt = -1.0;
        assert!(matches!(simulate(&cfg), Err(ScenarioError::Config(_))));
    }
}
