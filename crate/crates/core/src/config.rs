//! Run configuration: a JSON document with one section per module.
//!
//! Every section rejects unknown keys. Validation collects all problems
//! instead of stopping at the first one.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{DiscreteOperators, Field, PhysicalParams};
use crate::geometry::{DomainSpec, Face, Mesh};
use crate::history::StoragePolicy;
use crate::kernels::{build_kernel, RateFunction, RelaxationKernel};
use crate::stableset::OptimizerOptions;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

impl ConfigError {
    pub fn messages(&self) -> Vec<String> {
        match self {
            Self::Syntax { .. } => vec![self.to_string()],
            Self::Invalid(v) => v.clone(),
        }
    }
}

/// g(t) = g0·exp(−Φ(t)); `a` comes from the physics section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub g0: f64,
    pub rate: RateFunction,
}

/// Closed-form initial shapes. Each one vanishes on Γ₀ by construction
/// except `bump`, whose support is checked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    #[default]
    Zero,
    /// Per axis: x/L from a Γ₀ face toward Γ₁, a tent if both ends are Γ₀.
    Linear { amplitude: f64 },
    /// Per axis: quarter sine from a Γ₀ face, half sine if both ends are Γ₀.
    Sine { amplitude: f64 },
    /// A·exp(1 − 1/(1 − r²)) for r = |x − c|/width < 1.
    Bump { amplitude: f64, center: [f64; 2], width: f64 },
}

impl Profile {
    pub fn amplitude(&self) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Linear { amplitude } | Self::Sine { amplitude } | Self::Bump { amplitude, .. } => amplitude,
        }
    }

    pub fn with_amplitude(self, amp: f64) -> Self {
        match self {
            Self::Zero => Self::Zero,
            Self::Linear { .. } => Self::Linear { amplitude: amp },
            Self::Sine { .. } => Self::Sine { amplitude: amp },
            Self::Bump { center, width, .. } => Self::Bump { amplitude: amp, center, width },
        }
    }

    pub fn value(&self, domain: &DomainSpec, x: [f64; 2]) -> f64 {
        let axis_factor = |axis: usize, shape: fn(f64, bool, bool) -> f64| {
            let (lo, hi) = if axis == 0 { (Face::Left, Face::Right) } else { (Face::Bottom, Face::Top) };
            let pinned_lo = !domain.gamma1_faces.contains(&lo);
            let pinned_hi = !domain.gamma1_faces.contains(&hi);
            shape(x[axis] / domain.extent[axis], pinned_lo, pinned_hi)
        };
        let product = |shape: fn(f64, bool, bool) -> f64| (0..domain.dimension).map(|a| axis_factor(a, shape)).product::<f64>();
        match *self {
            Self::Zero => 0.0,
            Self::Linear { amplitude } => amplitude * product(|s, lo, hi| match (lo, hi) {
                (true, true) => 1.0 - (2.0 * s - 1.0).abs(),
                (true, false) => s,
                (false, true) => 1.0 - s,
                (false, false) => 1.0,
            }),
            Self::Sine { amplitude } => {
                use std::f64::consts::{FRAC_PI_2, PI};
                amplitude * product(|s, lo, hi| match (lo, hi) {
                    (true, true) => (PI * s).sin(),
                    (true, false) => (FRAC_PI_2 * s).sin(),
                    (false, true) => (FRAC_PI_2 * s).cos(),
                    (false, false) => 1.0,
                })
            }
            Self::Bump { amplitude, center, width } => {
                let r2 = (0..domain.dimension).map(|a| ((x[a] - center[a]) / width).powi(2)).sum::<f64>();
                if r2 < 1.0 {
                    amplitude * (1.0 - 1.0 / (1.0 - r2)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// Nodal interpolant, zeroed on Γ₀.
    pub fn sample(&self, domain: &DomainSpec, mesh: &Mesh, ops: &DiscreteOperators) -> Field {
        let mut u: Field = mesh.coords.iter().map(|&x| self.value(domain, x)).collect();
        ops.apply_dirichlet(&mut u);
        u
    }

    fn validate(&self, field: &str, domain: &DomainSpec, errors: &mut Vec<String>) {
        if !self.amplitude().is_finite() {
            errors.push(format!("initial.{field}.amplitude must be finite"));
        }
        if let Self::Bump { center, width, .. } = *self {
            if !(width > 0.0) {
                errors.push(format!("initial.{field}.width must be positive"));
                return;
            }
            if domain.extent.len() != domain.dimension {
                return;
            }
            // The support must stay clear of every Γ₀ face.
            for (axis, (lo, hi)) in [(Face::Left, Face::Right), (Face::Bottom, Face::Top)].into_iter().enumerate().take(domain.dimension) {
                let len = domain.extent[axis];
                if !domain.gamma1_faces.contains(&lo) && center[axis] - width < 0.0 {
                    errors.push(format!("initial.{field} bump support reaches the Γ₀ face {lo:?}"));
                }
                if !domain.gamma1_faces.contains(&hi) && center[axis] + width > len {
                    errors.push(format!("initial.{field} bump support reaches the Γ₀ face {hi:?}"));
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    pub u0: Profile,
    #[serde(default)]
    pub u1: Profile,
    /// Constant initial Γ₁ displacement.
    #[serde(default)]
    pub y0: f64,
}

fn default_record_every() -> usize {
    1
}

fn default_cfl() -> f64 {
    0.9
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteppingConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub storage: StoragePolicy,
    #[serde(default = "default_cfl")]
    pub cfl_safety: f64,
}

/// Expected decay shape checked by tail regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecayForm {
    /// ln E linear in Φ.
    Exponential,
    /// ln E linear in ln(1 + t).
    Power,
    #[default]
    Unspecified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub constants: bool,
    pub stable_set: bool,
    pub decay: bool,
    pub hypotheses: bool,
    /// Start of the regression window; defaults to T/2.
    pub t_tail: Option<f64>,
    /// Start of the ρ(S) grid; defaults to the half-mass time of g.
    pub t0: Option<f64>,
    pub decay_form: DecayForm,
    /// Horizon for the hypothesis grid.
    pub hypothesis_horizon: f64,
    /// Keep every n-th S in the ρ(S) plot file.
    pub s_stride: usize,
    pub optimizer: OptimizerOptions,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            constants: true,
            stable_set: true,
            decay: true,
            hypotheses: true,
            t_tail: None,
            t0: None,
            decay_form: DecayForm::Unspecified,
            hypothesis_horizon: 200.0,
            s_stride: 1,
            optimizer: OptimizerOptions::default(),
        }
    }
}

/// Acceptance thresholds. `tol_E = energy_c·(dt² + h²)·E(0)` and the
/// identity residual must stay below `identity_c·(dt² + h²)·E(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub energy_c: f64,
    pub identity_c: f64,
    pub horizon_change: f64,
    pub r2_min: f64,
    pub mms_ratio_min: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { energy_c: 0.1, identity_c: 2.0, horizon_change: 0.2, r2_min: 0.95, mms_ratio_min: 3.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmsExact {
    Linear,
    QuarterSine,
}

/// Convergence ladder: level j uses resolution·2^j and dt/2^j.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmsConfig {
    pub exact: MmsExact,
    pub amplitude: f64,
    pub levels: usize,
}

fn default_name() -> String {
    "run".into()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub domain: DomainSpec,
    pub physics: PhysicalParams,
    /// Absent means no memory term.
    #[serde(default)]
    pub kernel: Option<KernelConfig>,
    #[serde(default)]
    pub initial: InitialData,
    pub stepping: SteppingConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub mms: Option<MmsConfig>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn build_kernel(&self) -> Result<RelaxationKernel, String> {
        match self.kernel {
            None => Ok(RelaxationKernel::zero(self.physics.a)),
            Some(k) => build_kernel(k.rate, k.g0, self.physics.a).map_err(|e| format!("kernel: {e}")),
        }
    }

    /// All semantic problems, named by field.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let geometry_errors = self.domain.validate();
        errors.extend(geometry_errors.iter().map(|e| format!("domain: {e}")));
        errors.extend(self.physics.validate(self.domain.dimension).iter().map(|e| format!("physics: {e}")));
        if self.physics.a > 0.0 {
            if let Err(e) = self.build_kernel() {
                errors.push(e);
            }
        }
        let s = &self.stepping;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            errors.push("stepping.dt must be positive".into());
        }
        if !(s.t_end >= 0.0 && s.t_end.is_finite()) {
            errors.push("stepping.t_end must be nonnegative".into());
        }
        if s.record_every == 0 {
            errors.push("stepping.record_every must be at least 1".into());
        }
        if !(s.cfl_safety > 0.0 && s.cfl_safety <= 1.0) {
            errors.push("stepping.cfl_safety must lie in (0, 1]".into());
        }
        if let StoragePolicy::Strided { stride } = s.storage {
            if stride == 0 {
                errors.push("stepping.storage.stride must be at least 1".into());
            }
        }
        if s.dt > 0.0 && s.t_end > 0.0 {
            let steps = s.t_end / s.dt;
            if (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) {
                errors.push(format!("stepping.t_end = {} is not a whole number of steps of dt = {}", s.t_end, s.dt));
            }
        }
        if geometry_errors.is_empty() {
            self.initial.u0.validate("u0", &self.domain, &mut errors);
            self.initial.u1.validate("u1", &self.domain, &mut errors);
        }
        if !self.initial.y0.is_finite() {
            errors.push("initial.y0 must be finite".into());
        }
        let a = &self.analysis;
        if !(a.hypothesis_horizon > 0.0) {
            errors.push("analysis.hypothesis_horizon must be positive".into());
        }
        if a.s_stride == 0 {
            errors.push("analysis.s_stride must be at least 1".into());
        }
        for (name, v) in [("t_tail", a.t_tail), ("t0", a.t0)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v < s.t_end.max(0.0) || s.t_end == 0.0 && v == 0.0) {
                    errors.push(format!("analysis.{name} = {v} must lie in [0, t_end)"));
                }
            }
        }
        let o = &a.optimizer;
        if o.starts == 0 || o.max_iter == 0 || o.window == 0 || !(o.rel_tol > 0.0) {
            errors.push("analysis.optimizer: starts, max_iter, window and rel_tol must be positive".into());
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("energy_c", t.energy_c),
            ("identity_c", t.identity_c),
            ("horizon_change", t.horizon_change),
            ("r2_min", t.r2_min),
            ("mms_ratio_min", t.mms_ratio_min),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errors.push(format!("tolerances.{name} must be a nonnegative number"));
            }
        }
        if let Some(m) = &self.mms {
            if m.levels < 2 {
                errors.push("mms.levels must be at least 2".into());
            }
            if self.domain.dimension != 1 {
                errors.push("mms: manufactured solutions are one-dimensional".into());
            }
            if self.domain.gamma1_faces != [Face::Right] {
                errors.push("mms: requires Γ₁ = {right}".into());
            }
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            errors.push("name must be a non-empty plain file name".into());
        }
        errors
    }

    /// Initial (u0, u1, y0) on the mesh.
    pub fn initial_fields(&self, mesh: &Mesh, ops: &DiscreteOperators) -> (Field, Field, Vec<f64>) {
        (
            self.initial.u0.sample(&self.domain, mesh, ops),
            self.initial.u1.sample(&self.domain, mesh, ops),
            vec![self.initial.y0; ops.gamma1.len()],
        )
    }
}

/// Parses and validates; returns every semantic error at once.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let errors = cfg.validate();
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(errors))
    }
}

/// A shipped scenario with the verdicts it is expected to produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioPreset {
    pub name: String,
    pub description: String,
    pub config: RunConfig,
    pub expected: BTreeMap<String, bool>,
}

pub fn parse_preset(text: &str) -> Result<ScenarioPreset, ConfigError> {
    let preset: ScenarioPreset = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let errors = preset.config.validate();
    if errors.is_empty() {
        Ok(preset)
    } else {
        Err(ConfigError::Invalid(errors))
    }
}
