//! Run configuration, presets and file output for the SE(3) benchmark.
//!
//! A run is described by a JSON document whose fields mirror
//! [`SimConfig`]. Everything except `kind` and `gains` defaults to the
//! benchmark scenario, so
//!
//! ```json
//! { "kind": "II", "gains": { "k_p": 4.0, "k_i": 0.75 } }
//! ```
//!
//! is a complete config. The truth trajectory is always the benchmark
//! rigid-body motion; landmarks, bias, initial estimate, bounds, step and
//! horizon are configurable.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::analysis::{epsilon_bound, fit_exponential, project_se3, ConvergenceFit, EpsilonBound};
use crate::error::{Error, Result};
use crate::integrate::{simulate, BoundsSource, EpsilonChoice, SimConfig, SimRecord, SimSample};
use crate::kinematics::{
    build_f, empirical_bounds, measure, BenchmarkSe3, Bounds, Construction, LandmarkSet,
    MeasurementModel,
};
use crate::liegroup::{hat_so3, se3_element, GroupSpec};
use crate::matcore::{frob_norm, mat_exp, mat_from_rows, Mat};
use crate::observers::{check_gains, gain_floor, GainCheck, GainPolicy, Gains, ObserverKind, ObserverState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GAINS: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Process exit status for a failed run.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::GainViolation { .. } => EXIT_GAINS,
        Error::Numerical { .. }
        | Error::NonFinite
        | Error::Singular { .. }
        | Error::Degenerate { .. } => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainsConfig {
    pub k_p: f64,
    pub k_i: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundsMode {
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundsConfig {
    Mode(BoundsMode),
    Explicit(Bounds),
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig::Mode(BoundsMode::Empirical)
    }
}

/// Landmark columns `S` and weights `W`, both given row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarksConfig {
    pub s: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    #[serde(default = "default_construction")]
    pub construction: Construction,
}

fn default_construction() -> Construction {
    Construction::Swst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwistConfig {
    pub omega: [f64; 3],
    pub v: [f64; 3],
}

impl TwistConfig {
    pub const ZERO: TwistConfig = TwistConfig {
        omega: [0.0; 3],
        v: [0.0; 3],
    };
}

impl Default for TwistConfig {
    fn default() -> Self {
        TwistConfig {
            omega: [1.0, 0.5, -1.0],
            v: [0.5, -0.5, 0.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialMode {
    /// Estimate equal to the true measurement and bias.
    Exact,
    /// Pose estimate rotated by a quarter turn about the first axis, zero bias.
    Benchmark,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPose {
    /// Rotation vector of the initial pose estimate.
    pub rotation: [f64; 3],
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default = "zero_twist")]
    pub bias: TwistConfig,
}

fn zero_twist() -> TwistConfig {
    TwistConfig::ZERO
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialConfig {
    Mode(InitialMode),
    Pose(InitialPose),
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig::Mode(InitialMode::Benchmark)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMode {
    HalfBound,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonConfig {
    Mode(EpsilonMode),
    Fixed(f64),
}

impl Default for EpsilonConfig {
    fn default() -> Self {
        EpsilonConfig::Mode(EpsilonMode::HalfBound)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: ObserverKind,
    pub gains: GainsConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
    /// Grid step used when bounds are sampled along the trajectory.
    #[serde(default = "default_bounds_step")]
    pub bounds_step: f64,
    /// Landmarks; the benchmark set when both this and `frame` are absent.
    #[serde(default)]
    pub landmarks: Option<LandmarksConfig>,
    /// Explicit `F`, row by row. Excludes `landmarks`.
    #[serde(default)]
    pub frame: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub bias: TwistConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default)]
    pub epsilon: EpsilonConfig,
    /// Window of the exponential fit of `‖E_A‖ + ‖e_b‖`.
    #[serde(default = "default_fit_window")]
    pub fit_window: (f64, f64),
}

fn default_bounds_step() -> f64 {
    0.01
}
fn default_horizon() -> f64 {
    30.0
}
fn default_step() -> f64 {
    1e-3
}
fn default_stride() -> usize {
    10
}
fn default_fit_window() -> (f64, f64) {
    (5.0, 25.0)
}

fn rows_to_mat(rows: &[Vec<f64>], what: &str) -> Result<Mat> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config(format!("{what} must be a non-empty rectangular array of rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    mat_from_rows(rows.len(), cols, &flat)
}

fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::from(a)
}

/// Homogeneous 4×4 pose from a rotation vector and a translation.
pub fn pose_from_parts(rotation: [f64; 3], translation: [f64; 3]) -> Result<Mat> {
    let r = mat_exp(&hat_so3(&vec3(rotation)))?;
    let mut g = Mat::identity(4, 4);
    g.view_mut((0, 0), (3, 3)).copy_from(&r);
    for (i, x) in translation.iter().enumerate() {
        g[(i, 3)] = *x;
    }
    Ok(g)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn check(&self) -> Result<()> {
        if self.landmarks.is_some() && self.frame.is_some() {
            return Err(Error::Config("give either landmarks or frame, not both".into()));
        }
        if let BoundsConfig::Explicit(b) = self.bounds {
            Bounds::new(b.b_xi, b.b_b, b.l_g, b.u_g)?;
        }
        if !(self.bounds_step > 0.0) {
            return Err(Error::Config("bounds_step must be positive".into()));
        }
        if !(self.fit_window.0 < self.fit_window.1) {
            return Err(Error::Config("fit_window must be an increasing pair".into()));
        }
        Ok(())
    }

    pub fn gains(&self) -> Result<Gains> {
        Gains::new(self.gains.k_p, self.gains.k_i)
    }

    pub fn frame(&self) -> Result<Mat> {
        match (&self.frame, &self.landmarks) {
            (Some(rows), _) => rows_to_mat(rows, "frame"),
            (None, Some(lm)) => build_f(&LandmarkSet::new(
                rows_to_mat(&lm.s, "landmarks.s")?,
                rows_to_mat(&lm.w, "landmarks.w")?,
                lm.construction,
            )?),
            (None, None) => build_f(&LandmarkSet::benchmark_se3()),
        }
    }

    fn bias_norm(&self) -> Result<f64> {
        let bias = se3_element(&GroupSpec::shared_se3(), &vec3(self.bias.omega), &vec3(self.bias.v))?;
        Ok(bias.norm())
    }

    /// Bounds without running the observer.
    pub fn bounds(&self) -> Result<Bounds> {
        match self.bounds {
            BoundsConfig::Explicit(b) => Ok(b),
            BoundsConfig::Mode(BoundsMode::Empirical) => {
                empirical_bounds(&BenchmarkSe3, self.horizon, self.bounds_step, self.bias_norm()?)
            }
        }
    }

    pub fn to_sim_config(&self, policy: GainPolicy) -> Result<SimConfig> {
        let group = GroupSpec::shared_se3();
        let kind = self.kind;
        let model = MeasurementModel::constant(kind.side(), self.frame()?)?;
        let trajectory: Arc<BenchmarkSe3> = Arc::new(BenchmarkSe3);
        let bias = se3_element(&group, &vec3(self.bias.omega), &vec3(self.bias.v))?;
        let initial = match self.initial {
            InitialConfig::Mode(InitialMode::Exact) => {
                SimConfig::exact_initial_state(kind, &model, trajectory.as_ref(), &bias)?
            }
            InitialConfig::Mode(InitialMode::Benchmark) => {
                initial_from_pose(kind, &group, &model, [std::f64::consts::FRAC_PI_2, 0.0, 0.0], [0.0; 3], TwistConfig::ZERO)?
            }
            InitialConfig::Pose(p) => initial_from_pose(kind, &group, &model, p.rotation, p.translation, p.bias)?,
        };
        let config = SimConfig {
            kind,
            gains: self.gains()?,
            bounds: match self.bounds {
                BoundsConfig::Explicit(b) => BoundsSource::Given(b),
                BoundsConfig::Mode(BoundsMode::Empirical) => BoundsSource::Empirical { step: self.bounds_step },
            },
            model,
            trajectory,
            bias,
            initial,
            horizon: self.horizon,
            step: self.step,
            record_stride: self.record_stride,
            gain_policy: policy,
            epsilon: match self.epsilon {
                EpsilonConfig::Mode(EpsilonMode::HalfBound) => EpsilonChoice::HalfBound,
                EpsilonConfig::Mode(EpsilonMode::None) => EpsilonChoice::None,
                EpsilonConfig::Fixed(e) => EpsilonChoice::Fixed(e),
            },
        };
        config.validate()?;
        Ok(config)
    }
}

fn initial_from_pose(
    kind: ObserverKind,
    group: &Arc<GroupSpec>,
    model: &MeasurementModel,
    rotation: [f64; 3],
    translation: [f64; 3],
    bias: TwistConfig,
) -> Result<ObserverState> {
    let g0 = pose_from_parts(rotation, translation)?;
    let b_bar = se3_element(group, &vec3(bias.omega), &vec3(bias.v))?;
    ObserverState::new(kind, group, measure(model, &g0, 0.0)?, b_bar.into_matrix())
}

/// Built-in scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Observer II with `k_P = 4`, `k_I = 0.75` from a quarter-turn attitude error.
    Se3Observer2,
    /// Observer IV with `k_P = 4`, `k_I = 4`, same initial error.
    Se3Observer4,
    /// Observer II started on the true state.
    Stationary,
    /// [`Preset::Se3Observer2`] repeated for each of [`SWEEP_GAINS`].
    GainSweep,
}

pub const SWEEP_GAINS: [f64; 5] = [2.0, 4.0, 6.0, 8.0, 10.0];

const SE3_OBSERVER2: &str = r#"{
  "kind": "II",
  "gains": { "k_p": 4.0, "k_i": 0.75 },
  "initial": "benchmark"
}"#;

const SE3_OBSERVER4: &str = r#"{
  "kind": "IV",
  "gains": { "k_p": 4.0, "k_i": 4.0 },
  "initial": "benchmark"
}"#;

const STATIONARY: &str = r#"{
  "kind": "II",
  "gains": { "k_p": 4.0, "k_i": 0.75 },
  "initial": "exact"
}"#;

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Se3Observer2, Preset::Se3Observer4, Preset::Stationary, Preset::GainSweep];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Se3Observer2 => "se3-observer2",
            Preset::Se3Observer4 => "se3-observer4",
            Preset::Stationary => "stationary",
            Preset::GainSweep => "gain-sweep",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name).ok_or_else(|| {
            let known: Vec<_> = Self::ALL.iter().map(|p| p.name()).collect();
            Error::Config(format!("unknown preset {name:?}; known presets: {}", known.join(", ")))
        })
    }

    /// The preset's config; for the sweep, the base config before `k_P` is varied.
    pub fn config(self) -> RunConfig {
        let text = match self {
            Preset::Se3Observer2 | Preset::GainSweep => SE3_OBSERVER2,
            Preset::Se3Observer4 => SE3_OBSERVER4,
            Preset::Stationary => STATIONARY,
        };
        RunConfig::from_json(text).expect("embedded preset parses")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    Preset(Preset),
    Config(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub scenario: Scenario,
    pub output_dir: PathBuf,
    pub strict_gains: bool,
}

impl RunManifest {
    fn policy(&self) -> GainPolicy {
        if self.strict_gains {
            GainPolicy::Strict
        } else {
            GainPolicy::Warn
        }
    }
}

/// One row of `timeseries.csv`; absent values are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeseriesRow {
    pub t: f64,
    pub err_ea: f64,
    pub err_eb: f64,
    pub err_eg: f64,
    pub err_eg_proj: f64,
    pub v: f64,
}

pub const TIMESERIES_HEADER: [&str; 6] = ["t", "err_EA", "err_eb", "err_Eg", "err_Eg_proj", "V"];

impl TimeseriesRow {
    pub fn from_sample(s: &SimSample) -> Self {
        let (err_eg, err_eg_proj) = match &s.errors.e_g {
            Some(e_g) => {
                let g_bar = &s.g - e_g;
                let proj = project_se3(&g_bar).map_or(f64::NAN, |p| frob_norm(&(&s.g - p)));
                (frob_norm(e_g), proj)
            }
            None => (f64::NAN, f64::NAN),
        };
        TimeseriesRow {
            t: s.t,
            err_ea: s.errors.e_a_norm(),
            err_eb: s.errors.e_b_norm(),
            err_eg,
            err_eg_proj,
            v: s.lyapunov.unwrap_or(f64::NAN),
        }
    }

    fn fields(&self) -> [f64; 6] {
        [self.t, self.err_ea, self.err_eb, self.err_eg, self.err_eg_proj, self.v]
    }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn format_value(x: f64) -> String {
    if x.is_nan() {
        "nan".to_owned()
    } else {
        format!("{x:.16e}")
    }
}

pub fn write_timeseries(path: &Path, rows: &[TimeseriesRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TIMESERIES_HEADER)?;
    for row in rows {
        w.write_record(row.fields().map(format_value))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_timeseries(path: &Path) -> Result<Vec<TimeseriesRow>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(TIMESERIES_HEADER) {
        return Err(Error::Config(format!("{} is not a timeseries file", path.display())));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            let mut v = [0.0; 6];
            for (slot, field) in v.iter_mut().zip(rec.iter()) {
                *slot = field
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number {field:?} in {}", path.display())))?;
            }
            Ok(TimeseriesRow {
                t: v[0],
                err_ea: v[1],
                err_eb: v[2],
                err_eg: v[3],
                err_eg_proj: v[4],
                v: v[5],
            })
        })
        .collect()
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalErrors {
    pub t: f64,
    pub err_ea: f64,
    pub err_eb: f64,
    pub err_eg: Option<f64>,
    pub err_eg_proj: Option<f64>,
    pub v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub kind: ObserverKind,
    pub gains: Gains,
    pub bounds: Bounds,
    pub gain_check: GainCheck,
    pub epsilon_bound: EpsilonBound,
    pub epsilon: Option<f64>,
    /// Fit of `‖E_A‖ + ‖e_b‖ ≈ C e^{−a t}`.
    pub fit: Option<ConvergenceFit>,
    pub fit_error: Option<String>,
    pub samples: usize,
    #[serde(rename = "final")]
    pub final_errors: FinalErrors,
}

impl RunSummary {
    pub fn new(record: &SimRecord, rows: &[TimeseriesRow], window: (f64, f64)) -> Self {
        let (fit, fit_error) = match fit_exponential(&record.total_error_series(), window) {
            Ok(fit) => (Some(fit), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let last = rows.last().expect("a record holds at least one sample");
        RunSummary {
            kind: record.kind,
            gains: record.gains,
            bounds: record.bounds,
            gain_check: record.gain_check,
            epsilon_bound: record.epsilon_bound,
            epsilon: record.epsilon,
            fit,
            fit_error,
            samples: rows.len(),
            final_errors: FinalErrors {
                t: last.t,
                err_ea: last.err_ea,
                err_eb: last.err_eb,
                err_eg: finite(last.err_eg),
                err_eg_proj: finite(last.err_eg_proj),
                v: finite(last.v),
            },
        }
    }
}

/// Simulates one config and writes `timeseries.csv` and `summary.json` into `dir`.
pub fn run_config(config: &RunConfig, dir: &Path, policy: GainPolicy) -> Result<RunSummary> {
    let sim = config.to_sim_config(policy)?;
    let record = simulate(&sim)?;
    let rows: Vec<TimeseriesRow> = record.samples.iter().map(TimeseriesRow::from_sample).collect();
    let summary = RunSummary::new(&record, &rows, config.fit_window);
    fs::create_dir_all(dir)?;
    write_timeseries(&dir.join("timeseries.csv"), &rows)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Subdirectory name of a sweep member.
pub fn sweep_dir_name(k_p: f64) -> String {
    format!("kp_{k_p}")
}

/// Runs the manifest's scenario; returns one summary per simulation.
pub fn run_simulate(manifest: &RunManifest) -> Result<Vec<RunSummary>> {
    let policy = manifest.policy();
    let out = &manifest.output_dir;
    match &manifest.scenario {
        Scenario::Config(path) => Ok(vec![run_config(&RunConfig::from_path(path)?, out, policy)?]),
        Scenario::Preset(Preset::GainSweep) => {
            let base = Preset::GainSweep.config();
            let results: Vec<Result<RunSummary>> = std::thread::scope(|scope| {
                let handles: Vec<_> = SWEEP_GAINS
                    .iter()
                    .map(|&k_p| {
                        let mut cfg = base.clone();
                        cfg.gains.k_p = k_p;
                        let dir = out.join(sweep_dir_name(k_p));
                        scope.spawn(move || run_config(&cfg, &dir, policy))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("sweep worker panicked"))
                    .collect()
            });
            results.into_iter().collect()
        }
        Scenario::Preset(p) => Ok(vec![run_config(&p.config(), out, policy)?]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainReport {
    pub kind: ObserverKind,
    pub k_p: f64,
    pub k_i: f64,
    pub floor: f64,
    pub satisfied: bool,
    pub bounds: Bounds,
    pub epsilon_bound: EpsilonBound,
}

impl fmt::Display for GainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.bounds;
        writeln!(f, "observer      {}", self.kind)?;
        writeln!(f, "bounds        B_xi = {}, B_b = {}, L_g = {}, U_g = {}", b.b_xi, b.b_b, b.l_g, b.u_g)?;
        writeln!(f, "gain floor    {}", self.floor)?;
        writeln!(
            f,
            "k_P           {} ({})",
            self.k_p,
            if self.satisfied { "satisfied" } else { "violated" }
        )?;
        writeln!(f, "k_I           {}", self.k_i)?;
        writeln!(f, "H             {}", self.epsilon_bound.h)?;
        writeln!(f, "cap           {}", self.epsilon_bound.cap)?;
        if self.epsilon_bound.admissible() {
            write!(f, "epsilon       (0, {})", self.epsilon_bound.upper())
        } else {
            write!(f, "epsilon       none admissible")
        }
    }
}

pub fn run_check_gains(config: &RunConfig, strict: bool) -> Result<GainReport> {
    let gains = config.gains()?;
    let bounds = config.bounds()?;
    let f = config.frame()?;
    let policy = if strict { GainPolicy::Strict } else { GainPolicy::Warn };
    let check = check_gains(config.kind, gains, &bounds, policy)?;
    Ok(GainReport {
        kind: config.kind,
        k_p: gains.k_p,
        k_i: gains.k_i,
        floor: gain_floor(config.kind, &bounds),
        satisfied: check.satisfied,
        bounds,
        epsilon_bound: epsilon_bound(config.kind, gains, &bounds, &f)?,
    })
}
