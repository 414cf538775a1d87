//! Convergence diagnostics.
//!
//! The Lyapunov function used for each observer family is
//!
//! ```text
//! V = ½‖E‖² + (1/2k_I)‖e_b‖² + ε·cross
//! ```
//!
//! with `E = A − Ā` and `cross = ⟨E, A e_b⟩` (left measurements) or
//! `−⟨E, e_b A⟩` (right measurements). The inverse-based kinds use the
//! relative error `𝓔 = I − A⁻¹Ā` (left) or `𝓔 = I − ĀA⁻¹` (right) with
//! `cross = ±⟨𝓔, e_b⟩`. Each V is sandwiched between two quadratic forms
//! `V₁ ≤ V ≤ V₂` in `(‖E‖, ‖e_b‖)` and its derivative is bounded by `−V₃`;
//! [`quadform_rates`] turns the three forms into the constants `α`, `β` of
//! `V₂ ≤ αV₁`, `βV₂ ≤ V₃`.

use nalgebra::Matrix2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrate::SimRecord;
use crate::kinematics::{Bounds, Side, TruthSample};
use crate::matcore::{
    condition_number, frob_inner, frob_norm, mat_inv, polar_so3, singular_extremes, Mat,
};
use crate::observers::{estimate_g, Gains, ObserverKind, ObserverState};

/// `E_g` for right-measurement kinds is dropped above this condition number of `Ā`.
pub const ESTIMATE_COND_LIMIT: f64 = 1e10;

#[derive(Debug, Clone)]
pub struct ErrorSample {
    pub t: f64,
    /// `A − Ā`
    pub e_a: Mat,
    /// `b − b̄`
    pub e_b: Mat,
    /// `g − F⁻¹Ā` or `g − FĀ⁻¹`
    pub e_g: Option<Mat>,
    /// `I − A⁻¹Ā` (left kinds) or `I − ĀA⁻¹` (right kinds)
    pub script_e_a: Option<Mat>,
}

impl ErrorSample {
    pub fn e_a_norm(&self) -> f64 {
        frob_norm(&self.e_a)
    }

    pub fn e_b_norm(&self) -> f64 {
        frob_norm(&self.e_b)
    }

    pub fn e_g_norm(&self) -> Option<f64> {
        self.e_g.as_ref().map(frob_norm)
    }

    pub fn script_e_a_norm(&self) -> Option<f64> {
        self.script_e_a.as_ref().map(frob_norm)
    }
}

pub fn compute_errors(
    kind: ObserverKind,
    truth: &TruthSample,
    state: &ObserverState,
    f: &Mat,
) -> ErrorSample {
    let n = truth.a.nrows();
    let e_g = match kind.side() {
        Side::Left => estimate_g(kind, &state.a_bar, f).ok(),
        Side::Right if condition_number(&state.a_bar) > ESTIMATE_COND_LIMIT => None,
        Side::Right => estimate_g(kind, &state.a_bar, f).ok(),
    }
    .map(|g_bar| &truth.g - g_bar);
    let script_e_a = mat_inv(&truth.a).ok().map(|a_inv| match kind.side() {
        Side::Left => Mat::identity(n, n) - a_inv * &state.a_bar,
        Side::Right => Mat::identity(n, n) - &state.a_bar * a_inv,
    });
    ErrorSample {
        t: truth.t,
        e_a: &truth.a - &state.a_bar,
        e_b: truth.b.matrix() - &state.b_bar,
        e_g,
        script_e_a,
    }
}

/// Which convergence argument covers a kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    /// `A = F g`, bias driven through `Aᵀ`.
    Left,
    /// `A = g⁻¹ F`, bias driven through `Aᵀ`.
    Right,
    /// Bias driven through `A⁻¹`; sign of the cross term.
    Inverse(Side),
}

fn family(kind: ObserverKind) -> Family {
    match (kind.uses_inverse(), kind.side()) {
        (true, side) => Family::Inverse(side),
        (false, Side::Left) => Family::Left,
        (false, Side::Right) => Family::Right,
    }
}

/// `H` and the secondary cap; ε is admissible on `(0, min(H, cap))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonBound {
    pub h: f64,
    pub cap: f64,
}

impl EpsilonBound {
    pub fn admissible(&self) -> bool {
        self.h > 0.0 && self.cap > 0.0
    }

    pub fn upper(&self) -> f64 {
        self.h.min(self.cap)
    }

    /// Half of [`EpsilonBound::upper`].
    pub fn default_epsilon(&self) -> f64 {
        0.5 * self.upper()
    }
}

pub fn epsilon_bound(
    kind: ObserverKind,
    gains: Gains,
    bounds: &Bounds,
    f: &Mat,
) -> Result<EpsilonBound> {
    let Gains { k_p, k_i } = gains;
    let Bounds { b_xi, b_b, l_g, u_g } = *bounds;
    let f_norm2 = frob_norm(f).powi(2);
    let lambda_min = singular_extremes(f).0.powi(2);
    let coupling = k_p + b_b + 2.0 * b_xi;
    Ok(match family(kind) {
        Family::Left => EpsilonBound {
            h: 4.0 * (k_p - b_xi - b_b) * l_g * l_g * lambda_min
                / ((4.0 * k_i * l_g * l_g * lambda_min + coupling * coupling) * u_g * u_g * f_norm2),
            cap: 1.0 / (f_norm2.sqrt() * u_g * k_i.sqrt()),
        },
        Family::Right => EpsilonBound {
            h: 4.0 * (k_p - b_xi - b_b) * l_g * l_g * lambda_min
                / ((4.0 * k_i * lambda_min + coupling * coupling * u_g * u_g) * f_norm2),
            cap: l_g / (f_norm2.sqrt() * k_i.sqrt()),
        },
        Family::Inverse(_) => EpsilonBound {
            h: 4.0 * (k_p - 2.0 * b_xi - b_b) / (4.0 * k_i + coupling * coupling),
            cap: 1.0 / k_i.sqrt(),
        },
    })
}

/// The error matrix the kind's Lyapunov function is built on.
fn lyapunov_error(kind: ObserverKind, err: &ErrorSample) -> Result<&Mat> {
    match family(kind) {
        Family::Inverse(_) => err.script_e_a.as_ref().ok_or_else(|| {
            Error::Domain(format!(
                "observer {kind} needs the relative error I - A^-1 A_bar, but A is singular"
            ))
        }),
        _ => Ok(&err.e_a),
    }
}

pub fn lyapunov_value(
    kind: ObserverKind,
    epsilon: f64,
    err: &ErrorSample,
    a: &Mat,
    gains: Gains,
) -> Result<f64> {
    let e = lyapunov_error(kind, err)?;
    let e_b = &err.e_b;
    let cross = match family(kind) {
        Family::Left => frob_inner(e, &(a * e_b))?,
        Family::Right => -frob_inner(e, &(e_b * a))?,
        Family::Inverse(Side::Left) => frob_inner(e, e_b)?,
        Family::Inverse(Side::Right) => -frob_inner(e, e_b)?,
    };
    Ok(0.5 * frob_norm(e).powi(2) + 0.5 / gains.k_i * frob_norm(e_b).powi(2) + epsilon * cross)
}

/// The three quadratic forms and the rate constants derived from them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovParams {
    pub epsilon: f64,
    pub h: f64,
    pub cap: f64,
    pub alpha: f64,
    pub beta: f64,
    pub v1: Matrix2<f64>,
    pub v2: Matrix2<f64>,
    pub v3: Matrix2<f64>,
}

pub fn quad(m: &Matrix2<f64>, x1: f64, x2: f64) -> f64 {
    m[(0, 0)] * x1 * x1 + 2.0 * m[(0, 1)] * x1 * x2 + m[(1, 1)] * x2 * x2
}

impl LyapunovParams {
    pub fn v1_at(&self, x1: f64, x2: f64) -> f64 {
        quad(&self.v1, x1, x2)
    }

    pub fn v2_at(&self, x1: f64, x2: f64) -> f64 {
        quad(&self.v2, x1, x2)
    }

    pub fn v3_at(&self, x1: f64, x2: f64) -> f64 {
        quad(&self.v3, x1, x2)
    }
}

fn symmetric(d1: f64, d2: f64, off: f64) -> Matrix2<f64> {
    Matrix2::new(d1, off, off, d2)
}

fn positive_definite(m: &Matrix2<f64>) -> bool {
    m[(0, 0)] > 0.0 && m.determinant() > 0.0
}

/// Roots of `det(m − λ n) = 0` for symmetric `m` and positive definite `n`,
/// ascending.
pub fn generalized_eigenvalues(m: &Matrix2<f64>, n: &Matrix2<f64>) -> (f64, f64) {
    let a = n.determinant();
    let b = -(m[(0, 0)] * n[(1, 1)] + m[(1, 1)] * n[(0, 0)] - 2.0 * m[(0, 1)] * n[(0, 1)]);
    let c = m.determinant();
    let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
    // cancellation-free pair
    let q = -0.5 * (b + b.signum() * disc);
    let (r1, r2) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
    (r1.min(r2), r1.max(r2))
}

/// Builds `V₁`, `V₂`, `V₃` for the kind and computes `α` (largest generalized
/// eigenvalue of `(V₂, V₁)`) and `β` (smallest of `(V₃, V₂)`).
///
/// `ε = 0` is accepted and yields `α = 1`, `β = 0`: the forms decouple and
/// `V₃` is only semidefinite, so there is no rate certificate.
pub fn quadform_rates(
    kind: ObserverKind,
    epsilon: f64,
    gains: Gains,
    bounds: &Bounds,
    f: &Mat,
) -> Result<LyapunovParams> {
    if !(epsilon >= 0.0) {
        return Err(Error::InadmissibleEpsilon { form: "V1", epsilon });
    }
    let bound = epsilon_bound(kind, gains, bounds, f)?;
    let Gains { k_p, k_i } = gains;
    let Bounds { b_xi, b_b, l_g, u_g } = *bounds;
    let f_norm = frob_norm(f);
    let lambda_min = singular_extremes(f).0.powi(2);
    let coupling = k_p + b_b + 2.0 * b_xi;

    // (cross coefficient c of V₁/V₂, V₃ diagonal, V₃ cross coefficient)
    let (c, d1, d2, c3) = match family(kind) {
        Family::Left => (
            epsilon * u_g * f_norm,
            k_p - (b_xi + b_b) - epsilon * k_i * u_g * u_g * f_norm * f_norm,
            epsilon * lambda_min * l_g * l_g,
            epsilon * coupling * u_g * f_norm,
        ),
        Family::Right => (
            epsilon * f_norm / l_g,
            k_p - (b_xi + b_b) - epsilon * k_i * f_norm * f_norm / (l_g * l_g),
            epsilon * lambda_min / (u_g * u_g),
            epsilon * coupling * f_norm / l_g,
        ),
        Family::Inverse(_) => (
            epsilon,
            k_p - (2.0 * b_xi + b_b) - epsilon * k_i,
            epsilon,
            epsilon * coupling,
        ),
    };
    let v1 = symmetric(0.5, 0.5 / k_i, -0.5 * c);
    let v2 = symmetric(0.5, 0.5 / k_i, 0.5 * c);
    let v3 = symmetric(d1, d2, -0.5 * c3);

    for (form, m) in [("V1", &v1), ("V2", &v2)] {
        if !positive_definite(m) {
            return Err(Error::InadmissibleEpsilon { form, epsilon });
        }
    }
    let alpha = generalized_eigenvalues(&v2, &v1).1;
    let beta = if epsilon == 0.0 {
        0.0
    } else if positive_definite(&v3) {
        generalized_eigenvalues(&v3, &v2).0
    } else {
        return Err(Error::InadmissibleEpsilon { form: "V3", epsilon });
    };
    Ok(LyapunovParams {
        epsilon,
        h: bound.h,
        cap: bound.cap,
        alpha,
        beta,
        v1,
        v2,
        v3,
    })
}

/// Log-linear fit `value ≈ C e^{−a t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceFit {
    pub c: f64,
    pub a: f64,
    pub window: (f64, f64),
    /// RMS residual of `ln(value)`.
    pub residual: f64,
    pub samples: usize,
}

/// Samples at or below this value are excluded from fits.
pub const FIT_VALIDITY_FLOOR: f64 = 1e-13;
pub const FIT_MIN_SAMPLES: usize = 10;

pub fn fit_exponential(series: &[(f64, f64)], window: (f64, f64)) -> Result<ConvergenceFit> {
    let points: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, y)| *t >= window.0 && *t <= window.1 && *y > FIT_VALIDITY_FLOOR && y.is_finite())
        .map(|&(t, y)| (t, y.ln()))
        .collect();
    if points.len() < FIT_MIN_SAMPLES {
        return Err(Error::Fit(format!(
            "{} usable samples in [{}, {}], need {FIT_MIN_SAMPLES}",
            points.len(),
            window.0,
            window.1
        )));
    }
    let m = points.len() as f64;
    let t_mean = points.iter().map(|p| p.0).sum::<f64>() / m;
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - t_mean).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - t_mean) * (p.1 - y_mean)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all usable samples share one time stamp".into()));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    let residual = (points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Ok(ConvergenceFit {
        c: intercept.exp(),
        a: -slope,
        window,
        residual,
        samples: points.len(),
    })
}

/// Nearest-rotation projection of a 4×4 estimate onto SE(3): the rotation
/// block becomes its polar factor, the translation column is kept and the
/// bottom row reset to `(0, 0, 0, 1)`.
pub fn project_se3(g_bar: &Mat) -> Result<Mat> {
    if g_bar.shape() != (4, 4) {
        return Err(Error::Dimension(format!("project_se3 expects 4x4, got {:?}", g_bar.shape())));
    }
    let rotation = polar_so3(&g_bar.view((0, 0), (3, 3)).into_owned())?;
    let mut out = Mat::identity(4, 4);
    out.view_mut((0, 0), (3, 3)).copy_from(&rotation);
    out.view_mut((0, 3), (3, 1)).copy_from(&g_bar.view((0, 3), (3, 1)));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecreaseReport {
    pub pairs: usize,
    /// Fraction of consecutive samples with `V(t+Δ) ≤ V(t)(1 + 1e-9)`.
    pub monotone_fraction: f64,
    /// Largest `V(t+Δ) − V(t)(1 + 1e-9)` over the record, zero if none.
    pub max_violation: f64,
    pub envelope_holds: bool,
    /// Largest `V(t) / (α V₁(0) e^{−βt})`.
    pub max_envelope_ratio: f64,
    pub first_envelope_violation: Option<f64>,
}

pub const MONOTONE_RTOL: f64 = 1e-9;
pub const ENVELOPE_RTOL: f64 = 1e-6;

/// Checks `V` along a record for step-wise decrease and for the envelope
/// `V(t) ≤ α V₁(0) e^{−βt}`. `V` is re-evaluated from the recorded errors with
/// `params.epsilon`.
pub fn lyapunov_decrease_check(record: &SimRecord, params: &LyapunovParams) -> Result<DecreaseReport> {
    let kind = record.kind;
    let values: Vec<(f64, f64)> = record
        .samples
        .iter()
        .map(|s| Ok((s.t, lyapunov_value(kind, params.epsilon, &s.errors, &s.a, record.gains)?)))
        .collect::<Result<_>>()?;

    let mut monotone = 0usize;
    let mut max_violation = 0.0f64;
    for w in values.windows(2) {
        let excess = w[1].1 - w[0].1 * (1.0 + MONOTONE_RTOL);
        if excess <= 0.0 {
            monotone += 1;
        } else {
            max_violation = max_violation.max(excess);
        }
    }
    let pairs = values.len().saturating_sub(1);

    let first = &record.samples[0];
    let e0 = lyapunov_error(kind, &first.errors)?;
    let v1_0 = params.v1_at(frob_norm(e0), first.errors.e_b_norm());
    let mut max_ratio = 0.0f64;
    let mut first_violation = None;
    for &(t, v) in &values {
        let envelope = params.alpha * v1_0 * (-params.beta * t).exp();
        let ratio = if envelope > 0.0 {
            v / envelope
        } else if v <= 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        max_ratio = max_ratio.max(ratio);
        if v > envelope * (1.0 + ENVELOPE_RTOL) && first_violation.is_none() {
            first_violation = Some(t);
        }
    }
    Ok(DecreaseReport {
        pairs,
        monotone_fraction: if pairs == 0 { 1.0 } else { monotone as f64 / pairs as f64 },
        max_violation,
        envelope_holds: first_violation.is_none(),
        max_envelope_ratio: max_ratio,
        first_envelope_violation: first_violation,
    })
}
