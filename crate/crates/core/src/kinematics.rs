//! True-system kinematics `ġ = gξ`, landmark-based measurement matrices and
//! the biased velocity signal.

use std::fmt;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::rk4_step;
use crate::liegroup::{hat_se3, AlgebraElement, GroupSpec};
use crate::matcore::{frob_norm, mat_exp, mat_inv, singular_extremes, Mat, SINGULAR_RTOL};

/// How `F` is assembled from the landmark matrix `S` and weights `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Construction {
    /// `F = S W` with `W` of shape m×n.
    Sw,
    /// `F = S W Sᵀ` with `W` of shape m×m.
    Swst,
}

#[derive(Debug, Clone)]
pub struct LandmarkSet {
    s: Mat,
    w: Mat,
    construction: Construction,
}

impl LandmarkSet {
    pub fn new(s: Mat, w: Mat, construction: Construction) -> Result<Self> {
        let (n, m) = s.shape();
        let expected = match construction {
            Construction::Sw => (m, n),
            Construction::Swst => (m, m),
        };
        if w.shape() != expected {
            return Err(Error::Dimension(format!(
                "W must be {}x{} for {:?} with {n}x{m} landmarks, got {:?}",
                expected.0,
                expected.1,
                construction,
                w.shape()
            )));
        }
        Ok(Self { s, w, construction })
    }

    /// Four points `(e₁,1), (e₂,1), (e₃,1), (e₁+e₃,1)` and the gravity
    /// direction `(−e₃, 0)`, combined as `S I₅ Sᵀ`.
    pub fn benchmark_se3() -> Self {
        #[rustfmt::skip]
        let s = Mat::from_row_slice(4, 5, &[
            1.0, 0.0, 0.0, 1.0,  0.0,
            0.0, 1.0, 0.0, 0.0,  0.0,
            0.0, 0.0, 1.0, 1.0, -1.0,
            1.0, 1.0, 1.0, 1.0,  0.0,
        ]);
        Self::new(s, Mat::identity(5, 5), Construction::Swst).expect("benchmark shapes agree")
    }

    pub fn s(&self) -> &Mat {
        &self.s
    }

    pub fn w(&self) -> &Mat {
        &self.w
    }

    pub fn construction(&self) -> Construction {
        self.construction
    }

    /// Body-frame observations `C = g⁻¹ S`.
    pub fn observe(&self, g: &Mat) -> Result<Mat> {
        Ok(mat_inv(g)? * &self.s)
    }

    /// Measurement matrix assembled from body-frame observations: `C W` or `C W Sᵀ`.
    pub fn measurement_from_observations(&self, c: &Mat) -> Result<Mat> {
        if c.shape() != self.s.shape() {
            return Err(Error::Dimension(format!(
                "observations {:?} do not match landmarks {:?}",
                c.shape(),
                self.s.shape()
            )));
        }
        Ok(match self.construction {
            Construction::Sw => c * &self.w,
            Construction::Swst => c * &self.w * self.s.transpose(),
        })
    }
}

/// `F = S W` or `F = S W Sᵀ`, rejected unless it has full rank.
pub fn build_f(landmarks: &LandmarkSet) -> Result<Mat> {
    let f = match landmarks.construction {
        Construction::Sw => &landmarks.s * &landmarks.w,
        Construction::Swst => &landmarks.s * &landmarks.w * landmarks.s.transpose(),
    };
    let (sigma_min, sigma_max) = singular_extremes(&f);
    if !(sigma_min > SINGULAR_RTOL * sigma_max) {
        return Err(Error::RankDeficient { sigma_min });
    }
    Ok(f)
}

/// Which side the group element enters the measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// `A = F g`
    Left,
    /// `A = g⁻¹ F`
    Right,
}

pub type FrameFn = dyn Fn(f64) -> (Mat, Mat) + Send + Sync;

/// The known matrix `F`, constant or given with its derivative as a function of time.
#[derive(Clone)]
pub enum Frame {
    Constant(Mat),
    /// Returns `(F(t), Ḟ(t))`.
    TimeVarying(Arc<FrameFn>),
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            Frame::TimeVarying(_) => f.write_str("TimeVarying(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeasurementModel {
    pub side: Side,
    pub frame: Frame,
}

impl MeasurementModel {
    pub fn constant(side: Side, f: Mat) -> Result<Self> {
        let (lo, hi) = singular_extremes(&f);
        if !f.is_square() || !(lo > SINGULAR_RTOL * hi) {
            return Err(Error::Singular { sigma_min: lo, sigma_max: hi });
        }
        Ok(Self {
            side,
            frame: Frame::Constant(f),
        })
    }

    pub fn time_varying(side: Side, frame: Arc<FrameFn>) -> Self {
        Self {
            side,
            frame: Frame::TimeVarying(frame),
        }
    }

    pub fn is_time_varying(&self) -> bool {
        matches!(self.frame, Frame::TimeVarying(_))
    }

    pub fn f_at(&self, t: f64) -> Mat {
        match &self.frame {
            Frame::Constant(f) => f.clone(),
            Frame::TimeVarying(fun) => fun(t).0,
        }
    }

    pub fn f_and_rate_at(&self, t: f64) -> (Mat, Mat) {
        match &self.frame {
            Frame::Constant(f) => (f.clone(), Mat::zeros(f.nrows(), f.ncols())),
            Frame::TimeVarying(fun) => fun(t),
        }
    }

    /// Observed `(ℓ_min, ℓ_max)` singular-value envelope of `F` over `times`;
    /// fails when `F` is singular at any of them.
    pub fn frame_envelope(&self, times: impl IntoIterator<Item = f64>) -> Result<(f64, f64)> {
        let mut envelope = (f64::INFINITY, 0.0f64);
        for t in times {
            let (lo, hi) = singular_extremes(&self.f_at(t));
            if !(lo > SINGULAR_RTOL * hi) {
                return Err(Error::Numerical {
                    t,
                    reason: format!("F(t) is singular (sigma_min = {lo:e})"),
                });
            }
            envelope = (envelope.0.min(lo), envelope.1.max(hi));
        }
        Ok(envelope)
    }
}

/// `A = F(t) g` or `A = g⁻¹ F(t)`.
pub fn measure(model: &MeasurementModel, g: &Mat, t: f64) -> Result<Mat> {
    let f = model.f_at(t);
    if f.shape() != g.shape() || !g.is_square() {
        return Err(Error::Dimension(format!(
            "F is {:?} but g is {:?}",
            f.shape(),
            g.shape()
        )));
    }
    match model.side {
        Side::Left => Ok(f * g),
        Side::Right => Ok(mat_inv(g)? * f),
    }
}

/// `ξ_m = ξ + b`.
pub fn biased_velocity(xi: &AlgebraElement, b: &AlgebraElement) -> Result<AlgebraElement> {
    xi.try_add(b)
}

/// Everything the observer sees, plus the hidden truth, at one instant.
#[derive(Debug, Clone)]
pub struct TruthSample {
    pub t: f64,
    pub g: Mat,
    pub xi: AlgebraElement,
    pub b: AlgebraElement,
    pub a: Mat,
    pub xi_m: AlgebraElement,
}

impl TruthSample {
    pub fn new(
        model: &MeasurementModel,
        t: f64,
        g: Mat,
        xi: AlgebraElement,
        b: AlgebraElement,
    ) -> Result<Self> {
        let a = measure(model, &g, t)?;
        let xi_m = biased_velocity(&xi, &b)?;
        Ok(Self { t, g, xi, b, a, xi_m })
    }
}

/// Known velocity and bias bounds plus the singular-value envelope of `g(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub b_xi: f64,
    pub b_b: f64,
    pub l_g: f64,
    pub u_g: f64,
}

impl Bounds {
    pub fn new(b_xi: f64, b_b: f64, l_g: f64, u_g: f64) -> Result<Self> {
        let ok = b_xi.is_finite()
            && b_b.is_finite()
            && b_xi >= 0.0
            && b_b >= 0.0
            && l_g > 0.0
            && l_g <= u_g
            && u_g.is_finite();
        if !ok {
            return Err(Error::Config(format!(
                "invalid bounds: B_xi = {b_xi}, B_b = {b_b}, L_g = {l_g}, U_g = {u_g}"
            )));
        }
        Ok(Self { b_xi, b_b, l_g, u_g })
    }
}

/// A true trajectory `(g(t), ξ(t))` of `ġ = gξ`.
pub trait Trajectory: Send + Sync {
    fn group(&self) -> &Arc<GroupSpec>;

    fn initial_pose(&self) -> Mat;

    fn velocity(&self, t: f64) -> AlgebraElement;

    /// Closed-form pose when available; `None` means the pose has to be
    /// integrated from [`Trajectory::velocity`].
    fn pose(&self, _t: f64) -> Option<Mat> {
        None
    }
}

fn rot_x(t: f64) -> Mat {
    let (s, c) = t.sin_cos();
    Mat::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c])
}

fn rot_z(t: f64) -> Mat {
    let (s, c) = t.sin_cos();
    Mat::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0])
}

/// `R(t) = exp(t ê₁) exp(t ê₃) exp(t ê₁)`, with the coordinate-axis
/// exponentials written out in closed form.
pub fn benchmark_rotation(t: f64) -> Mat {
    rot_x(t) * rot_z(t) * rot_x(t)
}

/// Body angular velocity of [`benchmark_rotation`].
pub fn benchmark_omega(t: f64) -> Vector3<f64> {
    let (s, c) = t.sin_cos();
    Vector3::new(1.0 + c, s - s * c, c + s * s)
}

pub fn benchmark_position(t: f64) -> Vector3<f64> {
    let (s, c) = t.sin_cos();
    Vector3::new(c, s, c)
}

pub fn benchmark_position_rate(t: f64) -> Vector3<f64> {
    let (s, c) = t.sin_cos();
    Vector3::new(-s, c, -s)
}

/// Pose `g(t) = [[R, x], [0, 1]]` and velocity `ξ(t) = hat(Ω, Rᵀẋ)` of the
/// SE(3) benchmark motion.
pub fn benchmark_trajectory_se3(t: f64) -> (Mat, AlgebraElement) {
    let r = benchmark_rotation(t);
    let x = benchmark_position(t);
    let mut g = Mat::identity(4, 4);
    g.view_mut((0, 0), (3, 3)).copy_from(&r);
    g.view_mut((0, 3), (3, 1)).copy_from(&x);

    let xdot = benchmark_position_rate(t);
    let v = r.transpose() * nalgebra::DVector::from_column_slice(xdot.as_slice());
    let v = Vector3::new(v[0], v[1], v[2]);
    let group = GroupSpec::shared_se3();
    let xi = AlgebraElement::from_matrix(&group, hat_se3(&benchmark_omega(t), &v))
        .expect("hat_se3 lies in se(3)");
    (g, xi)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BenchmarkSe3;

impl Trajectory for BenchmarkSe3 {
    fn group(&self) -> &Arc<GroupSpec> {
        static GROUP: std::sync::OnceLock<Arc<GroupSpec>> = std::sync::OnceLock::new();
        GROUP.get_or_init(GroupSpec::shared_se3)
    }

    fn initial_pose(&self) -> Mat {
        benchmark_trajectory_se3(0.0).0
    }

    fn velocity(&self, t: f64) -> AlgebraElement {
        benchmark_trajectory_se3(t).1
    }

    fn pose(&self, t: f64) -> Option<Mat> {
        Some(benchmark_trajectory_se3(t).0)
    }
}

/// `g(t) = g₀ exp(tξ)` for a constant algebra element.
#[derive(Debug, Clone)]
pub struct ConstantVelocity {
    g0: Mat,
    xi: AlgebraElement,
}

impl ConstantVelocity {
    pub fn new(g0: Mat, xi: AlgebraElement) -> Result<Self> {
        let n = xi.group().ambient_n();
        if g0.shape() != (n, n) {
            return Err(Error::Dimension(format!("g0 must be {n}x{n}, got {:?}", g0.shape())));
        }
        Ok(Self { g0, xi })
    }
}

impl Trajectory for ConstantVelocity {
    fn group(&self) -> &Arc<GroupSpec> {
        self.xi.group()
    }

    fn initial_pose(&self) -> Mat {
        self.g0.clone()
    }

    fn velocity(&self, _t: f64) -> AlgebraElement {
        self.xi.clone()
    }

    fn pose(&self, t: f64) -> Option<Mat> {
        Some(&self.g0 * mat_exp(&(self.xi.matrix() * t)).expect("square"))
    }
}

pub type VelocityFn = dyn Fn(f64) -> AlgebraElement + Send + Sync;

/// A trajectory known only through its velocity; the pose is integrated.
pub struct VelocityProfile {
    group: Arc<GroupSpec>,
    g0: Mat,
    velocity: Box<VelocityFn>,
}

impl VelocityProfile {
    pub fn new(group: Arc<GroupSpec>, g0: Mat, velocity: Box<VelocityFn>) -> Self {
        Self { group, g0, velocity }
    }
}

impl Trajectory for VelocityProfile {
    fn group(&self) -> &Arc<GroupSpec> {
        &self.group
    }

    fn initial_pose(&self) -> Mat {
        self.g0.clone()
    }

    fn velocity(&self, t: f64) -> AlgebraElement {
        (self.velocity)(t)
    }
}

/// Poses of `trajectory` on the uniform grid `0, step, …, ≤ horizon`, closed form
/// when available, RK4 on `ġ = gξ` otherwise.
pub fn sample_poses(
    trajectory: &dyn Trajectory,
    horizon: f64,
    step: f64,
) -> Result<Vec<(f64, Mat)>> {
    if !(horizon >= 0.0) || !(step > 0.0) {
        return Err(Error::Config(format!(
            "sampling needs horizon >= 0 and step > 0 (got {horizon}, {step})"
        )));
    }
    let count = (horizon / step + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(count + 1);
    let g0 = trajectory.initial_pose();
    let n = g0.nrows();
    let mut flat: Vec<f64> = g0.as_slice().to_vec();
    for k in 0..=count {
        let t = k as f64 * step;
        match trajectory.pose(t) {
            Some(g) => out.push((t, g)),
            None => {
                if k > 0 {
                    let t_prev = (k - 1) as f64 * step;
                    flat = rk4_step(
                        |s, y| {
                            let g = Mat::from_column_slice(n, n, y);
                            Ok((g * trajectory.velocity(s).matrix()).as_slice().to_vec())
                        },
                        &flat,
                        t_prev,
                        step,
                    )?;
                }
                out.push((t, Mat::from_column_slice(n, n, &flat)));
            }
        }
    }
    Ok(out)
}

/// Safety factor applied to the sampled supremum of `‖ξ(t)‖`.
pub const VELOCITY_BOUND_MARGIN: f64 = 1.05;

/// Bounds observed on a uniform grid: `B_ξ` is the sampled supremum of `‖ξ‖`
/// times [`VELOCITY_BOUND_MARGIN`], `B_b` the given bias norm, and `L_g`,
/// `U_g` the sampled singular-value extremes of `g`.
pub fn empirical_bounds(
    trajectory: &dyn Trajectory,
    horizon: f64,
    step: f64,
    bias_norm: f64,
) -> Result<Bounds> {
    let mut sup_xi = 0.0f64;
    let mut l_g = f64::INFINITY;
    let mut u_g = 0.0f64;
    for (t, g) in sample_poses(trajectory, horizon, step)? {
        sup_xi = sup_xi.max(frob_norm(trajectory.velocity(t).matrix()));
        let (lo, hi) = singular_extremes(&g);
        l_g = l_g.min(lo);
        u_g = u_g.max(hi);
    }
    Bounds::new(sup_xi * VELOCITY_BOUND_MARGIN, bias_norm, l_g, u_g)
}
