//! Fixed-step RK4 integration of the observer against a true trajectory.
//!
//! The observer state is flattened to `[vec(Ā), b̄]` where `b̄` is stored as
//! algebra coordinates (or all n² entries for `I_mod`). Trajectories without a
//! closed-form pose append `vec(g)` and integrate `ġ = gξ` alongside.

use std::sync::Arc;

use crate::analysis::{compute_errors, epsilon_bound, lyapunov_value, EpsilonBound, ErrorSample};
use crate::error::{Error, Result};
use crate::kinematics::{
    empirical_bounds, measure, Bounds, MeasurementModel, Trajectory, TruthSample,
};
use crate::liegroup::{AlgebraElement, GroupSpec};
use crate::matcore::Mat;
use crate::observers::{
    check_gains, observer_rhs, FrameRate, GainCheck, GainPolicy, Gains, ObserverKind,
    ObserverState,
};

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<F>(mut rhs: F, state: &[f64], t: f64, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {h}")));
    }
    let mut eval = |s: f64, y: &[f64]| -> Result<Vec<f64>> {
        let k = rhs(s, y)?;
        if k.len() != y.len() {
            return Err(Error::Dimension(format!(
                "rhs returned {} entries for a state of {}",
                k.len(),
                y.len()
            )));
        }
        if k.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical {
                t: s,
                reason: format!("non-finite derivative in step [{t}, {}]", t + h),
            });
        }
        Ok(k)
    };
    let axpy = |a: f64, x: &[f64]| -> Vec<f64> {
        state.iter().zip(x).map(|(s, k)| s + a * k).collect()
    };

    let k1 = eval(t, state)?;
    let k2 = eval(t + 0.5 * h, &axpy(0.5 * h, &k1))?;
    let k3 = eval(t + 0.5 * h, &axpy(0.5 * h, &k2))?;
    let k4 = eval(t + h, &axpy(h, &k3))?;
    Ok(state
        .iter()
        .enumerate()
        .map(|(i, s)| s + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundsSource {
    Given(Bounds),
    /// Sampled along the truth with this grid step (see [`empirical_bounds`]).
    Empirical { step: f64 },
}

/// Choice of the weight ε of the Lyapunov cross term recorded with each sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum EpsilonChoice {
    /// No Lyapunov value is recorded.
    None,
    Fixed(f64),
    /// Half of the admissible bound `min(H, cap)`; nothing is recorded when
    /// the gains leave no admissible ε.
    #[default]
    HalfBound,
}

#[derive(Clone)]
pub struct SimConfig {
    pub kind: ObserverKind,
    pub gains: Gains,
    pub bounds: BoundsSource,
    pub model: MeasurementModel,
    pub trajectory: Arc<dyn Trajectory>,
    pub bias: AlgebraElement,
    pub initial: ObserverState,
    pub horizon: f64,
    pub step: f64,
    pub record_stride: usize,
    pub gain_policy: GainPolicy,
    pub epsilon: EpsilonChoice,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.horizon >= self.step) || self.record_stride == 0 {
            return Err(Error::Config(format!(
                "need step > 0, horizon >= step, record_stride >= 1 (got {}, {}, {})",
                self.step, self.horizon, self.record_stride
            )));
        }
        if self.model.side != self.kind.side() {
            return Err(Error::Config(format!(
                "observer {} expects {:?} measurements, model provides {:?}",
                self.kind,
                self.kind.side(),
                self.model.side
            )));
        }
        if self.model.is_time_varying() && !self.kind.time_varying() {
            return Err(Error::Config(format!(
                "observer {} assumes a constant F",
                self.kind
            )));
        }
        let group = self.trajectory.group();
        if !self.bias.group().as_ref().name().eq(group.name()) {
            return Err(Error::Config("bias and trajectory use different groups".into()));
        }
        let n = group.ambient_n();
        if self.model.f_at(0.0).shape() != (n, n) {
            return Err(Error::Dimension(format!("F must be {n}x{n}")));
        }
        ObserverState::new(
            self.kind,
            group,
            self.initial.a_bar.clone(),
            self.initial.b_bar.clone(),
        )?;
        Ok(())
    }

    /// Bounds in force for this run; empirical bounds are sampled over the horizon.
    pub fn resolve_bounds(&self) -> Result<Bounds> {
        match self.bounds {
            BoundsSource::Given(b) => Ok(b),
            BoundsSource::Empirical { step } => {
                empirical_bounds(self.trajectory.as_ref(), self.horizon, step, self.bias.norm())
            }
        }
    }

    /// Observer state equal to the true `(A(0), b)`.
    pub fn exact_initial_state(
        kind: ObserverKind,
        model: &MeasurementModel,
        trajectory: &dyn Trajectory,
        bias: &AlgebraElement,
    ) -> Result<ObserverState> {
        let a0 = measure(model, &trajectory.initial_pose(), 0.0)?;
        ObserverState::new(kind, trajectory.group(), a0, bias.matrix().clone())
    }
}

#[derive(Debug, Clone)]
pub struct SimSample {
    pub t: f64,
    pub g: Mat,
    pub a: Mat,
    pub a_bar: Mat,
    pub b_bar: Mat,
    pub errors: ErrorSample,
    pub lyapunov: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SimRecord {
    pub kind: ObserverKind,
    pub gains: Gains,
    pub bounds: Bounds,
    pub gain_check: GainCheck,
    pub epsilon_bound: EpsilonBound,
    pub epsilon: Option<f64>,
    /// `F(0)`.
    pub f: Mat,
    pub samples: Vec<SimSample>,
}

impl SimRecord {
    pub fn final_sample(&self) -> &SimSample {
        self.samples.last().expect("a record holds at least the initial sample")
    }

    /// `(t, ‖E_A‖ + ‖e_b‖)` along the record.
    pub fn total_error_series(&self) -> Vec<(f64, f64)> {
        self.samples
            .iter()
            .map(|s| (s.t, s.errors.e_a_norm() + s.errors.e_b_norm()))
            .collect()
    }

    /// Sample closest to time `t`.
    pub fn sample_at(&self, t: f64) -> &SimSample {
        self.samples
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .expect("non-empty record")
    }
}

struct Layout {
    n: usize,
    bias_len: usize,
    ambient_bias: bool,
    integrate_pose: bool,
}

impl Layout {
    fn new(kind: ObserverKind, group: &GroupSpec, integrate_pose: bool) -> Self {
        let n = group.ambient_n();
        let ambient_bias = kind.ambient_bias();
        Self {
            n,
            bias_len: if ambient_bias { n * n } else { group.algebra_dim() },
            ambient_bias,
            integrate_pose,
        }
    }

    fn len(&self) -> usize {
        self.n * self.n + self.bias_len + if self.integrate_pose { self.n * self.n } else { 0 }
    }

    fn pack(&self, group: &GroupSpec, state: &ObserverState, g: Option<&Mat>) -> Result<Vec<f64>> {
        let mut y = Vec::with_capacity(self.len());
        y.extend_from_slice(state.a_bar.as_slice());
        self.push_bias(group, &state.b_bar, &mut y)?;
        if self.integrate_pose {
            y.extend_from_slice(g.expect("pose required").as_slice());
        }
        Ok(y)
    }

    fn push_bias(&self, group: &GroupSpec, b: &Mat, y: &mut Vec<f64>) -> Result<()> {
        if self.ambient_bias {
            y.extend_from_slice(b.as_slice());
        } else {
            y.extend(group.coords_of(b)?.iter());
        }
        Ok(())
    }

    fn unpack(&self, group: &GroupSpec, y: &[f64]) -> Result<(ObserverState, Option<Mat>)> {
        let n2 = self.n * self.n;
        let a_bar = Mat::from_column_slice(self.n, self.n, &y[..n2]);
        let bias = &y[n2..n2 + self.bias_len];
        let b_bar = if self.ambient_bias {
            Mat::from_column_slice(self.n, self.n, bias)
        } else {
            group.from_coords(&nalgebra::DVector::from_column_slice(bias))?
        };
        let g = self
            .integrate_pose
            .then(|| Mat::from_column_slice(self.n, self.n, &y[n2 + self.bias_len..]));
        Ok((ObserverState { a_bar, b_bar }, g))
    }
}

fn at_time(t: f64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Singular { sigma_min, .. } => Error::Numerical {
            t,
            reason: format!("singular matrix (sigma_min = {sigma_min:e})"),
        },
        other => other,
    }
}

/// Integrates the observer against the configured truth and records errors
/// every `record_stride` steps.
pub fn simulate(config: &SimConfig) -> Result<SimRecord> {
    config.validate()?;
    let traj = config.trajectory.as_ref();
    let group = Arc::clone(traj.group());
    let kind = config.kind;

    let bounds = config.resolve_bounds()?;
    let gain_check = check_gains(kind, config.gains, &bounds, config.gain_policy)?;
    let f0 = config.model.f_at(0.0);
    let eps_bound = epsilon_bound(kind, config.gains, &bounds, &f0)?;
    let epsilon = match config.epsilon {
        EpsilonChoice::None => None,
        EpsilonChoice::Fixed(e) => Some(e),
        EpsilonChoice::HalfBound if eps_bound.admissible() => Some(eps_bound.default_epsilon()),
        EpsilonChoice::HalfBound => {
            log::warn!(
                "observer {kind}: no admissible epsilon (H = {:e}); Lyapunov values not recorded",
                eps_bound.h
            );
            None
        }
    };

    let layout = Layout::new(kind, &group, traj.pose(0.0).is_none());
    let truth_at = |t: f64, g_state: Option<Mat>| -> Result<TruthSample> {
        let g = match g_state {
            Some(g) => g,
            None => traj.pose(t).expect("closed-form trajectory"),
        };
        TruthSample::new(&config.model, t, g, traj.velocity(t), config.bias.clone())
            .map_err(at_time(t))
    };

    let rhs = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let (state, g_state) = layout.unpack(&group, y)?;
        let truth = truth_at(t, g_state)?;
        let aux = kind.time_varying().then(|| {
            let (f, f_dot) = config.model.f_and_rate_at(t);
            FrameRate { f, f_dot }
        });
        let (da, db) = observer_rhs(kind, &state, &truth.a, &truth.xi_m, config.gains, aux.as_ref())
            .map_err(at_time(t))?;
        let mut dy = Vec::with_capacity(y.len());
        dy.extend_from_slice(da.as_slice());
        layout.push_bias(&group, &db, &mut dy)?;
        if layout.integrate_pose {
            dy.extend_from_slice((&truth.g * truth.xi.matrix()).as_slice());
        }
        Ok(dy)
    };

    let record = |t: f64, y: &[f64]| -> Result<SimSample> {
        let (state, g_state) = layout.unpack(&group, y)?;
        let truth = truth_at(t, g_state)?;
        let f = config.model.f_at(t);
        let errors = compute_errors(kind, &truth, &state, &f);
        let lyapunov = match epsilon {
            Some(eps) => Some(lyapunov_value(kind, eps, &errors, &truth.a, config.gains)?),
            None => None,
        };
        Ok(SimSample {
            t,
            g: truth.g,
            a: truth.a,
            a_bar: state.a_bar,
            b_bar: state.b_bar,
            errors,
            lyapunov,
        })
    };

    let steps = (config.horizon / config.step).round() as usize;
    let mut y = layout.pack(&group, &config.initial, Some(&traj.initial_pose()))?;
    let mut samples = Vec::with_capacity(steps / config.record_stride + 1);
    samples.push(record(0.0, &y)?);
    for k in 0..steps {
        let t = k as f64 * config.step;
        y = rk4_step(&rhs, &y, t, config.step)?;
        if (k + 1) % config.record_stride == 0 {
            samples.push(record((k + 1) as f64 * config.step, &y)?);
        }
    }

    Ok(SimRecord {
        kind,
        gains: config.gains,
        bounds,
        gain_check,
        epsilon_bound: eps_bound,
        epsilon,
        f: f0,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{ConstantVelocity, Side};
    use crate::liegroup::hat_so3;
    use crate::matcore::{frob_norm, mat_exp};
    use nalgebra::Vector3;

    fn scalar_decay(h: f64, steps: usize) -> f64 {
        let mut y = vec![1.0];
        for k in 0..steps {
            y = rk4_step(|_, y| Ok(vec![-y[0]]), &y, k as f64 * h, h).unwrap();
        }
        y[0]
    }

    #[test]
    fn single_step_of_exponential_decay() {
        let y = scalar_decay(0.1, 1);
        assert!((y - (-0.1f64).exp()).abs() < 1e-7);
        assert!((y - 0.904_837_418_0).abs() < 1e-7);
    }

    #[test]
    fn local_error_is_fifth_order() {
        // one step of h vs two of h/2, on y' = -y over one step from 0
        let exact = |h: f64| (-h).exp();
        let e1 = (scalar_decay(0.2, 1) - exact(0.2)).abs();
        let e2 = (scalar_decay(0.1, 1) - exact(0.1)).abs();
        let ratio = e1 / e2;
        assert!((ratio - 32.0).abs() < 3.0, "ratio {ratio}");
    }

    #[test]
    fn zero_rhs_leaves_state_unchanged() {
        let y = vec![1.5, -2.0, 3.25];
        assert_eq!(rk4_step(|_, y| Ok(vec![0.0; y.len()]), &y, 0.0, 0.1).unwrap(), y);
    }

    #[test]
    fn non_finite_rhs_reports_time() {
        let err = rk4_step(|_, _| Ok(vec![f64::NAN]), &[1.0], 2.0, 0.1).unwrap_err();
        assert!(matches!(err, Error::Numerical { t, .. } if t == 2.0));
        assert!(rk4_step(|_, y| Ok(y.to_vec()), &[1.0], 0.0, 0.0).is_err());
    }

    fn rotation_config(kind: ObserverKind) -> SimConfig {
        let so3 = Arc::new(GroupSpec::so3());
        let xi = AlgebraElement::from_matrix(&so3, hat_so3(&Vector3::new(0.4, -0.3, 0.8))).unwrap();
        let traj = Arc::new(ConstantVelocity::new(Mat::identity(3, 3), xi).unwrap());
        let model = MeasurementModel::constant(Side::Left, Mat::identity(3, 3)).unwrap();
        SimConfig {
            kind,
            gains: Gains::new(1.0, 1.0).unwrap(),
            bounds: BoundsSource::Empirical { step: 0.01 },
            model,
            trajectory: traj,
            bias: AlgebraElement::zero(&so3),
            initial: ObserverState {
                a_bar: Mat::identity(3, 3),
                b_bar: Mat::zeros(3, 3),
            },
            horizon: 2.0,
            step: 1e-3,
            record_stride: 100,
            gain_policy: GainPolicy::Warn,
            epsilon: EpsilonChoice::HalfBound,
        }
    }

    #[test]
    fn constant_velocity_flow_is_tracked() {
        let config = rotation_config(ObserverKind::I);
        let rec = simulate(&config).unwrap();
        assert_eq!(rec.samples.len(), 21);
        let xi = config.trajectory.velocity(0.0);
        for s in &rec.samples {
            let flow = mat_exp(&(xi.matrix() * s.t)).unwrap();
            assert!(frob_norm(&(&s.a_bar - flow)) < 1e-11, "t = {}", s.t);
            assert!(frob_norm(&s.b_bar) < 1e-12);
        }
    }

    #[test]
    fn recorded_times_are_uniform() {
        let rec = simulate(&rotation_config(ObserverKind::III)).unwrap();
        for w in rec.samples.windows(2) {
            assert!((w[1].t - w[0].t - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = rotation_config(ObserverKind::II);
        assert!(matches!(simulate(&c), Err(Error::Config(_))));
        c.kind = ObserverKind::I;
        c.record_stride = 0;
        assert!(simulate(&c).is_err());
        c.record_stride = 1;
        c.horizon = 1e-4;
        assert!(simulate(&c).is_err());
    }

    #[test]
    fn strict_gains_abort() {
        let mut c = rotation_config(ObserverKind::I);
        c.gain_policy = GainPolicy::Strict;
        c.bounds = BoundsSource::Given(Bounds::new(5.0, 1.0, 1.0, 1.0).unwrap());
        assert!(matches!(simulate(&c), Err(Error::GainViolation { .. })));
    }

    #[test]
    fn deterministic_records() {
        let c = rotation_config(ObserverKind::IMod);
        let a = simulate(&c).unwrap();
        let b = simulate(&c).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.a_bar, y.a_bar);
            assert_eq!(x.b_bar, y.b_bar);
            assert_eq!(x.lyapunov.map(f64::to_bits), y.lyapunov.map(f64::to_bits));
        }
    }
}
