//! Observer right-hand sides.
//!
//! Every variant shares the innovation `k_P (A − Ā)` and differs in which side
//! the velocity acts on and how the bias estimate is driven:
//!
//! | kind    | measurement | `dĀ/dt`                               | `db̄/dt`                     |
//! |---------|-------------|----------------------------------------|-----------------------------|
//! | `I`     | `A = F g`   | `Ā ξ_m − A b̄ + k_P (A − Ā)`           | `−k_I π(Aᵀ (A − Ā))`        |
//! | `I_mod` | `A = F g`   | same as `I`                            | `−k_I Aᵀ (A − Ā)` (ambient) |
//! | `I_tv`  | `A = F(t) g`| `I` plus `Ḟ F⁻¹ A`                     | same as `I`                 |
//! | `II`    | `A = g⁻¹ F` | `−ξ_m Ā + b̄ A + k_P (A − Ā)`          | `k_I π((A − Ā) Aᵀ)`         |
//! | `II_tv` | `A = g⁻¹ F(t)` | `II` plus `A F⁻¹ Ḟ`                 | same as `II`                |
//! | `III`   | `A = F g`   | same as `I`                            | `−k_I π(A⁻¹ (A − Ā))`       |
//! | `IV`    | `A = g⁻¹ F` | same as `II`                           | `k_I π((A − Ā) A⁻¹)`        |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{Bounds, Side};
use crate::liegroup::{AlgebraElement, GroupSpec};
use crate::matcore::{mat_inv, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObserverKind {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "I_mod")]
    IMod,
    #[serde(rename = "I_tv")]
    ITv,
    #[serde(rename = "II")]
    II,
    #[serde(rename = "II_tv")]
    IITv,
    #[serde(rename = "III")]
    III,
    #[serde(rename = "IV")]
    IV,
}

impl ObserverKind {
    pub const ALL: [ObserverKind; 7] = [
        ObserverKind::I,
        ObserverKind::IMod,
        ObserverKind::ITv,
        ObserverKind::II,
        ObserverKind::IITv,
        ObserverKind::III,
        ObserverKind::IV,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ObserverKind::I => "I",
            ObserverKind::IMod => "I_mod",
            ObserverKind::ITv => "I_tv",
            ObserverKind::II => "II",
            ObserverKind::IITv => "II_tv",
            ObserverKind::III => "III",
            ObserverKind::IV => "IV",
        }
    }

    pub fn side(self) -> Side {
        match self {
            ObserverKind::I | ObserverKind::IMod | ObserverKind::ITv | ObserverKind::III => {
                Side::Left
            }
            ObserverKind::II | ObserverKind::IITv | ObserverKind::IV => Side::Right,
        }
    }

    /// The bias estimate lives in the full matrix space instead of the algebra.
    pub fn ambient_bias(self) -> bool {
        self == ObserverKind::IMod
    }

    /// The bias law uses `A⁻¹` in place of `Aᵀ`.
    pub fn uses_inverse(self) -> bool {
        matches!(self, ObserverKind::III | ObserverKind::IV)
    }

    pub fn time_varying(self) -> bool {
        matches!(self, ObserverKind::ITv | ObserverKind::IITv)
    }
}

impl fmt::Display for ObserverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ObserverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObserverKind::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown observer kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub k_p: f64,
    pub k_i: f64,
}

impl Gains {
    pub fn new(k_p: f64, k_i: f64) -> Result<Self> {
        if !(k_p > 0.0 && k_i > 0.0 && k_p.is_finite() && k_i.is_finite()) {
            return Err(Error::Config(format!(
                "gains must be positive (k_P = {k_p}, k_I = {k_i})"
            )));
        }
        Ok(Self { k_p, k_i })
    }
}

/// `(Ā, b̄)`. `b_bar` is an ambient matrix; for every kind except `I_mod` it
/// lies in the algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub a_bar: Mat,
    pub b_bar: Mat,
}

impl ObserverState {
    pub fn new(kind: ObserverKind, group: &GroupSpec, a_bar: Mat, b_bar: Mat) -> Result<Self> {
        let n = group.ambient_n();
        if a_bar.shape() != (n, n) || b_bar.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "observer state must be {n}x{n} (got {:?}, {:?})",
                a_bar.shape(),
                b_bar.shape()
            )));
        }
        if !kind.ambient_bias() {
            let residual = group.membership_residual(&b_bar)?;
            if residual > 1e-8 {
                return Err(Error::Domain(format!(
                    "bias estimate for observer {kind} must lie in the algebra (residual {residual:e})"
                )));
            }
        }
        Ok(Self { a_bar, b_bar })
    }
}

/// `F` and `Ḟ` at the evaluation time, needed by the time-varying kinds.
#[derive(Debug, Clone)]
pub struct FrameRate {
    pub f: Mat,
    pub f_dot: Mat,
}

/// `(dĀ/dt, db̄/dt)` for any observer kind.
pub fn observer_rhs(
    kind: ObserverKind,
    state: &ObserverState,
    a: &Mat,
    xi_m: &AlgebraElement,
    gains: Gains,
    aux: Option<&FrameRate>,
) -> Result<(Mat, Mat)> {
    let group = xi_m.group();
    let (a_bar, b_bar) = (&state.a_bar, &state.b_bar);
    let xi_m = xi_m.matrix();
    if a.shape() != a_bar.shape() || a.shape() != xi_m.shape() {
        return Err(Error::Dimension(format!(
            "A {:?}, A_bar {:?}, xi_m {:?}",
            a.shape(),
            a_bar.shape(),
            xi_m.shape()
        )));
    }
    let innovation = a - a_bar;

    let mut a_bar_dot = match kind.side() {
        Side::Left => a_bar * xi_m - a * b_bar + &innovation * gains.k_p,
        Side::Right => -(xi_m * a_bar) + b_bar * a + &innovation * gains.k_p,
    };

    if kind.time_varying() {
        let aux = aux.ok_or_else(|| {
            Error::Config(format!("observer {kind} needs F and its derivative"))
        })?;
        let f_inv = mat_inv(&aux.f)?;
        a_bar_dot += match kind.side() {
            Side::Left => &aux.f_dot * f_inv * a,
            Side::Right => a * f_inv * &aux.f_dot,
        };
    }

    let b_bar_dot = match kind {
        ObserverKind::I | ObserverKind::ITv => group.project(&(a.transpose() * &innovation))? * -gains.k_i,
        ObserverKind::IMod => a.transpose() * &innovation * -gains.k_i,
        ObserverKind::II | ObserverKind::IITv => group.project(&(&innovation * a.transpose()))? * gains.k_i,
        ObserverKind::III => group.project(&(mat_inv(a)? * &innovation))? * -gains.k_i,
        ObserverKind::IV => group.project(&(&innovation * mat_inv(a)?))? * gains.k_i,
    };
    Ok((a_bar_dot, b_bar_dot))
}

/// Sufficient lower bound on `k_P`: `B_ξ + B_b`, or `2B_ξ + B_b` for the
/// inverse-based kinds.
pub fn gain_floor(kind: ObserverKind, bounds: &Bounds) -> f64 {
    if kind.uses_inverse() {
        2.0 * bounds.b_xi + bounds.b_b
    } else {
        bounds.b_xi + bounds.b_b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainPolicy {
    #[default]
    Warn,
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainCheck {
    pub kind: ObserverKind,
    pub k_p: f64,
    pub floor: f64,
    pub satisfied: bool,
}

/// Compares `k_P` against [`gain_floor`]; a violation is logged under
/// [`GainPolicy::Warn`] and returned as an error under [`GainPolicy::Strict`].
pub fn check_gains(
    kind: ObserverKind,
    gains: Gains,
    bounds: &Bounds,
    policy: GainPolicy,
) -> Result<GainCheck> {
    let floor = gain_floor(kind, bounds);
    let satisfied = gains.k_p > floor;
    if !satisfied {
        match policy {
            GainPolicy::Strict => return Err(Error::GainViolation { k_p: gains.k_p, floor }),
            GainPolicy::Warn => log::warn!(
                "observer {kind}: k_P = {} does not exceed the sufficient floor {floor:.6}",
                gains.k_p
            ),
        }
    }
    Ok(GainCheck {
        kind,
        k_p: gains.k_p,
        floor,
        satisfied,
    })
}

/// Group-state estimate: `F⁻¹ Ā` for left measurements, `F Ā⁻¹` for right.
pub fn estimate_g(kind: ObserverKind, a_bar: &Mat, f: &Mat) -> Result<Mat> {
    match kind.side() {
        Side::Left => Ok(mat_inv(f)? * a_bar),
        Side::Right => Ok(f * mat_inv(a_bar)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::frob_norm;
    use crate::kinematics::{benchmark_trajectory_se3, build_f, LandmarkSet};
    use crate::liegroup::se3_element;
    use crate::testutil::{random_mat, random_vec3, rng};
    use nalgebra::Vector3;

    fn setup(t: f64) -> (Mat, Mat, AlgebraElement, AlgebraElement) {
        let f = build_f(&LandmarkSet::benchmark_se3()).unwrap();
        let (g, xi) = benchmark_trajectory_se3(t);
        let b = se3_element(
            xi.group(),
            &Vector3::new(1.0, 0.5, -1.0),
            &Vector3::new(0.5, -0.5, 0.5),
        )
        .unwrap();
        (f, g, xi, b)
    }

    #[test]
    fn error_free_state_reproduces_true_dynamics() {
        let (f, g, xi, b) = setup(0.9);
        let xi_m = xi.try_add(&b).unwrap();
        let gains = Gains::new(4.0, 0.75).unwrap();
        let aux = FrameRate {
            f: f.clone(),
            f_dot: Mat::zeros(4, 4),
        };
        for kind in ObserverKind::ALL {
            let a = match kind.side() {
                Side::Left => &f * &g,
                Side::Right => mat_inv(&g).unwrap() * &f,
            };
            let state = ObserverState {
                a_bar: a.clone(),
                b_bar: b.matrix().clone(),
            };
            let (da, db) = observer_rhs(kind, &state, &a, &xi_m, gains, Some(&aux)).unwrap();
            let truth = match kind.side() {
                Side::Left => &a * xi.matrix(),
                Side::Right => -(xi.matrix() * &a),
            };
            assert!(frob_norm(&(da - truth)) < 1e-12, "{kind}");
            assert!(frob_norm(&db) < 1e-12, "{kind}");
        }
    }

    #[test]
    fn unprojected_bias_law_agrees_when_already_in_algebra() {
        let (f, g, xi, b) = setup(0.4);
        let group = xi.group().clone();
        let a = &f * &g;
        // choose Ā so that Aᵀ(A − Ā) = X ∈ se(3)
        let x = crate::liegroup::hat_se3(&Vector3::new(0.3, -0.2, 0.1), &Vector3::new(1.0, 0.0, -2.0));
        let err = mat_inv(&a.transpose()).unwrap() * &x;
        let state = ObserverState {
            a_bar: &a - &err,
            b_bar: Mat::zeros(4, 4),
        };
        let xi_m = xi.try_add(&b).unwrap();
        let gains = Gains::new(4.0, 0.75).unwrap();
        let (da1, db1) = observer_rhs(ObserverKind::I, &state, &a, &xi_m, gains, None).unwrap();
        let (da2, db2) = observer_rhs(ObserverKind::IMod, &state, &a, &xi_m, gains, None).unwrap();
        assert!(frob_norm(&(db1 - &db2)) < 1e-12);
        assert!(frob_norm(&(da1 - da2)) < 1e-15);
        assert!(group.membership_residual(&db2).unwrap() < 1e-12);
    }

    #[test]
    fn bias_derivative_lies_in_algebra() {
        let (f, _, xi, _) = setup(0.0);
        let group = xi.group().clone();
        let mut r = rng(31);
        let gains = Gains::new(3.0, 2.0).unwrap();
        for _ in 0..100 {
            let g = crate::liegroup::hat_se3(&random_vec3(&mut r), &random_vec3(&mut r));
            let g = crate::matcore::mat_exp(&g).unwrap();
            let b_bar = crate::liegroup::hat_se3(&random_vec3(&mut r), &random_vec3(&mut r));
            let a_bar = random_mat(&mut r, 4, 4) * 3.0;
            let aux = FrameRate {
                f: f.clone(),
                f_dot: random_mat(&mut r, 4, 4),
            };
            for kind in ObserverKind::ALL.into_iter().filter(|k| !k.ambient_bias()) {
                let a = match kind.side() {
                    Side::Left => &f * &g,
                    Side::Right => mat_inv(&g).unwrap() * &f,
                };
                let state = ObserverState::new(kind, &group, a_bar.clone(), b_bar.clone()).unwrap();
                let (_, db) = observer_rhs(kind, &state, &a, &xi, gains, Some(&aux)).unwrap();
                assert!(group.membership_residual(&db).unwrap() < 1e-12, "{kind}");
            }
        }
    }

    #[test]
    fn time_varying_kinds_need_frame_rate() {
        let (f, g, xi, _) = setup(0.0);
        let a = &f * &g;
        let state = ObserverState {
            a_bar: a.clone(),
            b_bar: Mat::zeros(4, 4),
        };
        let gains = Gains::new(1.0, 1.0).unwrap();
        let err = observer_rhs(ObserverKind::ITv, &state, &a, &xi, gains, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn inverse_kinds_reject_singular_measurement() {
        let (_, _, xi, _) = setup(0.0);
        let a = Mat::zeros(4, 4);
        let state = ObserverState {
            a_bar: Mat::identity(4, 4),
            b_bar: Mat::zeros(4, 4),
        };
        let gains = Gains::new(1.0, 1.0).unwrap();
        for kind in [ObserverKind::III, ObserverKind::IV] {
            let err = observer_rhs(kind, &state, &a, &xi, gains, None).unwrap_err();
            assert!(matches!(err, Error::Singular { .. }));
        }
    }

    #[test]
    fn gain_floor_examples() {
        let b = Bounds::new(3.0, 2.0, 1.0, 1.0).unwrap();
        assert_eq!(gain_floor(ObserverKind::I, &b), 5.0);
        assert_eq!(gain_floor(ObserverKind::III, &b), 8.0);
        assert_eq!(gain_floor(ObserverKind::IV, &b), 8.0);
        assert_eq!(gain_floor(ObserverKind::II, &b), 5.0);
        let zero = Bounds::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(gain_floor(ObserverKind::I, &zero), 0.0);
    }

    #[test]
    fn gain_policy() {
        let b = Bounds::new(2.0, 1.0, 1.0, 1.0).unwrap();
        let ok = check_gains(ObserverKind::I, Gains::new(10.0, 1.0).unwrap(), &b, GainPolicy::Strict).unwrap();
        assert!(ok.satisfied);
        assert_eq!(ok.floor, 3.0);
        let low = Gains::new(4.0, 1.0).unwrap();
        let warned = check_gains(ObserverKind::III, low, &b, GainPolicy::Warn).unwrap();
        assert!(!warned.satisfied);
        assert_eq!(warned.floor, 5.0);
        assert!(matches!(
            check_gains(ObserverKind::III, low, &b, GainPolicy::Strict),
            Err(Error::GainViolation { .. })
        ));
    }

    #[test]
    fn estimate_from_f_is_identity() {
        let (f, ..) = setup(0.0);
        for kind in [ObserverKind::I, ObserverKind::II, ObserverKind::III, ObserverKind::IV] {
            let g = estimate_g(kind, &f, &f).unwrap();
            assert!(frob_norm(&(g - Mat::identity(4, 4))) < 1e-12);
        }
        assert!(estimate_g(ObserverKind::II, &Mat::zeros(4, 4), &f).is_err());
    }

    #[test]
    fn kind_parsing() {
        for kind in ObserverKind::ALL {
            assert_eq!(kind.label().parse::<ObserverKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(serde_json::from_str::<ObserverKind>(&json).unwrap(), kind);
        }
        assert!("V".parse::<ObserverKind>().is_err());
        assert!(Gains::new(0.0, 1.0).is_err());
    }

    #[test]
    fn state_rejects_bias_outside_algebra() {
        let group = GroupSpec::shared_se3();
        let b = Mat::identity(4, 4);
        assert!(ObserverState::new(ObserverKind::II, &group, Mat::identity(4, 4), b.clone()).is_err());
        assert!(ObserverState::new(ObserverKind::IMod, &group, Mat::identity(4, 4), b).is_ok());
    }
}
