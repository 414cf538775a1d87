//! Matrix Lie algebras as Frobenius-orthonormal bases.
//!
//! A [`GroupSpec`] describes `G ⊂ GL(n)` only through an orthonormal basis of
//! its algebra, which is enough to build the orthogonal projection
//! `π(a) = Σ ⟨Eᵢ, a⟩ Eᵢ`. SO(3) and SE(3) additionally carry a block formula
//! for the projection; both paths are kept and cross-checked in tests.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{frob_inner, frob_norm, Mat};

/// Absolute tolerance for basis orthonormality at construction.
const ORTHONORMAL_TOL: f64 = 1e-12;
/// Tolerance for membership checks (`‖a − π(a)‖`), scaled by `max(1, ‖a‖)`.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClosedForm {
    Se3,
    So3,
    None,
}

#[derive(Debug, Clone)]
pub struct GroupSpec {
    name: String,
    ambient_n: usize,
    basis: Vec<Mat>,
    closed_form: ClosedForm,
}

impl GroupSpec {
    /// Validates orthonormality of `basis` and closure under the commutator.
    pub fn new(
        name: impl Into<String>,
        ambient_n: usize,
        basis: Vec<Mat>,
        closed_form: ClosedForm,
    ) -> Result<Self> {
        if ambient_n == 0 || basis.is_empty() {
            return Err(Error::Dimension("empty group description".into()));
        }
        for e in &basis {
            if e.shape() != (ambient_n, ambient_n) {
                return Err(Error::Dimension(format!(
                    "basis element of shape {:?} in a {ambient_n}x{ambient_n} group",
                    e.shape()
                )));
            }
        }
        for (i, ei) in basis.iter().enumerate() {
            for (j, ej) in basis.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                let gram = frob_inner(ei, ej)?;
                if (gram - expected).abs() > ORTHONORMAL_TOL {
                    return Err(Error::Domain(format!(
                        "basis is not orthonormal: <E{i}, E{j}> = {gram}"
                    )));
                }
            }
        }
        let spec = Self {
            name: name.into(),
            ambient_n,
            basis,
            closed_form,
        };
        for ei in &spec.basis {
            for ej in &spec.basis {
                let bracket = ei * ej - ej * ei;
                let residual = frob_norm(&(&bracket - spec.project_via_basis(&bracket)?));
                if residual > MEMBERSHIP_TOL {
                    return Err(Error::Domain(format!(
                        "span is not a subalgebra (commutator residual {residual:e})"
                    )));
                }
            }
        }
        Ok(spec)
    }

    /// SO(3): the three skew generators scaled by `1/√2`.
    pub fn so3() -> Self {
        let basis = (0..3)
            .map(|k| hat_so3(&Vector3::ith(k, FRAC_1_SQRT_2)))
            .collect();
        Self::new("SO3", 3, basis, ClosedForm::So3).expect("so(3) basis is orthonormal")
    }

    pub fn se3() -> Self {
        algebra_basis_se3()
    }

    /// Process-wide shared SE(3) description.
    pub fn shared_se3() -> Arc<GroupSpec> {
        static SE3: OnceLock<Arc<GroupSpec>> = OnceLock::new();
        Arc::clone(SE3.get_or_init(|| Arc::new(algebra_basis_se3())))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ambient_n(&self) -> usize {
        self.ambient_n
    }

    pub fn algebra_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Mat] {
        &self.basis
    }

    pub fn closed_form(&self) -> ClosedForm {
        self.closed_form
    }

    fn check_shape(&self, a: &Mat) -> Result<()> {
        if a.shape() != (self.ambient_n, self.ambient_n) {
            return Err(Error::Dimension(format!(
                "{} expects {n}x{n} matrices, got {:?}",
                self.name,
                a.shape(),
                n = self.ambient_n
            )));
        }
        Ok(())
    }

    /// Coordinates `⟨Eᵢ, a⟩` of the projection of `a`.
    pub fn coords_of(&self, a: &Mat) -> Result<DVector<f64>> {
        self.check_shape(a)?;
        let c: Result<Vec<f64>> = self.basis.iter().map(|e| frob_inner(e, a)).collect();
        Ok(DVector::from_vec(c?))
    }

    /// `Σ cᵢ Eᵢ`.
    pub fn from_coords(&self, coords: &DVector<f64>) -> Result<Mat> {
        if coords.len() != self.algebra_dim() {
            return Err(Error::Dimension(format!(
                "{} has algebra dimension {}, got {} coordinates",
                self.name,
                self.algebra_dim(),
                coords.len()
            )));
        }
        let n = self.ambient_n;
        Ok(self
            .basis
            .iter()
            .zip(coords.iter())
            .fold(Mat::zeros(n, n), |acc, (e, c)| acc + e * *c))
    }

    /// Orthogonal projection through the basis sum, regardless of any closed form.
    pub fn project_via_basis(&self, a: &Mat) -> Result<Mat> {
        self.from_coords(&self.coords_of(a)?)
    }

    /// Orthogonal projection onto the algebra, using the block formula when
    /// one is registered.
    pub fn project(&self, a: &Mat) -> Result<Mat> {
        self.check_shape(a)?;
        match self.closed_form {
            ClosedForm::Se3 => {
                let mut p = Mat::zeros(4, 4);
                let b = a.view((0, 0), (3, 3));
                p.view_mut((0, 0), (3, 3))
                    .copy_from(&((b - b.transpose()) * 0.5));
                p.view_mut((0, 3), (3, 1)).copy_from(&a.view((0, 3), (3, 1)));
                Ok(p)
            }
            ClosedForm::So3 => Ok((a - a.transpose()) * 0.5),
            ClosedForm::None => self.project_via_basis(a),
        }
    }

    /// `‖a − π(a)‖`.
    pub fn membership_residual(&self, a: &Mat) -> Result<f64> {
        Ok(frob_norm(&(a - self.project(a)?)))
    }

    fn contains(&self, a: &Mat, tol: f64) -> Result<bool> {
        Ok(self.membership_residual(a)? <= tol * frob_norm(a).max(1.0))
    }

    fn same_as(&self, other: &GroupSpec) -> bool {
        self.name == other.name && self.ambient_n == other.ambient_n
    }
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (n = {}, dim = {})", self.name, self.ambient_n, self.algebra_dim())
    }
}

/// An element of the algebra, stored as an ambient matrix with optional
/// basis coordinates.
#[derive(Debug, Clone)]
pub struct AlgebraElement {
    group: Arc<GroupSpec>,
    matrix: Mat,
    coords: Option<DVector<f64>>,
}

impl AlgebraElement {
    pub fn zero(group: &Arc<GroupSpec>) -> Self {
        let n = group.ambient_n();
        Self {
            group: Arc::clone(group),
            matrix: Mat::zeros(n, n),
            coords: Some(DVector::zeros(group.algebra_dim())),
        }
    }

    pub fn from_coords(group: &Arc<GroupSpec>, coords: DVector<f64>) -> Result<Self> {
        let matrix = group.from_coords(&coords)?;
        Ok(Self {
            group: Arc::clone(group),
            matrix,
            coords: Some(coords),
        })
    }

    /// Wraps `matrix` after checking it lies in the algebra.
    pub fn from_matrix(group: &Arc<GroupSpec>, matrix: Mat) -> Result<Self> {
        group.check_shape(&matrix)?;
        if !group.contains(&matrix, MEMBERSHIP_TOL)? {
            return Err(Error::Domain(format!(
                "matrix is not in the algebra of {} (residual {:e})",
                group.name(),
                group.membership_residual(&matrix)?
            )));
        }
        Ok(Self {
            group: Arc::clone(group),
            matrix,
            coords: None,
        })
    }

    pub fn group(&self) -> &Arc<GroupSpec> {
        &self.group
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn into_matrix(self) -> Mat {
        self.matrix
    }

    pub fn coords(&self) -> DVector<f64> {
        match &self.coords {
            Some(c) => c.clone(),
            None => self
                .group
                .coords_of(&self.matrix)
                .expect("shape checked at construction"),
        }
    }

    pub fn norm(&self) -> f64 {
        frob_norm(&self.matrix)
    }

    pub fn same_group(&self, other: &AlgebraElement) -> bool {
        Arc::ptr_eq(&self.group, &other.group) || self.group.same_as(&other.group)
    }

    fn check_group(&self, other: &AlgebraElement) -> Result<()> {
        if !self.same_group(other) {
            return Err(Error::Domain(format!(
                "algebra elements from different groups ({} vs {})",
                self.group.name(),
                other.group.name()
            )));
        }
        Ok(())
    }

    pub fn try_add(&self, other: &AlgebraElement) -> Result<AlgebraElement> {
        self.check_group(other)?;
        let coords = match (&self.coords, &other.coords) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        Ok(Self {
            group: Arc::clone(&self.group),
            matrix: &self.matrix + &other.matrix,
            coords,
        })
    }

    pub fn try_sub(&self, other: &AlgebraElement) -> Result<AlgebraElement> {
        self.try_add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> AlgebraElement {
        Self {
            group: Arc::clone(&self.group),
            matrix: &self.matrix * s,
            coords: self.coords.as_ref().map(|c| c * s),
        }
    }
}

/// `π_𝔤(a)` as an algebra element.
pub fn project_algebra(spec: &Arc<GroupSpec>, a: &Mat) -> Result<AlgebraElement> {
    let matrix = spec.project(a)?;
    Ok(AlgebraElement {
        group: Arc::clone(spec),
        matrix,
        coords: None,
    })
}

/// Skew matrix with `hat_so3(v) w = v × w`.
pub fn hat_so3(v: &Vector3<f64>) -> Mat {
    Mat::from_row_slice(
        3,
        3,
        &[0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0],
    )
}

pub fn vee_so3(a: &Mat) -> Vector3<f64> {
    Vector3::new(
        0.5 * (a[(2, 1)] - a[(1, 2)]),
        0.5 * (a[(0, 2)] - a[(2, 0)]),
        0.5 * (a[(1, 0)] - a[(0, 1)]),
    )
}

/// `[[ω^, v], [0, 0]]`.
pub fn hat_se3(omega: &Vector3<f64>, v: &Vector3<f64>) -> Mat {
    let mut m = Mat::zeros(4, 4);
    m.view_mut((0, 0), (3, 3)).copy_from(&hat_so3(omega));
    m.view_mut((0, 3), (3, 1)).copy_from(v);
    m
}

/// Inverse of [`hat_se3`]. Inputs within `1e-8` of 𝔰𝔢(3) are projected first.
pub fn vee_se3(a: &Mat) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if a.shape() != (4, 4) {
        return Err(Error::Dimension(format!("vee_se3 expects 4x4, got {:?}", a.shape())));
    }
    let p = GroupSpec::shared_se3().project(a)?;
    let residual = frob_norm(&(a - &p));
    if residual >= 1e-8 {
        return Err(Error::Domain(format!(
            "matrix is {residual:e} away from se(3)"
        )));
    }
    let omega = vee_so3(&p.view((0, 0), (3, 3)).into_owned());
    let v = Vector3::new(p[(0, 3)], p[(1, 3)], p[(2, 3)]);
    Ok((omega, v))
}

/// Orthonormal basis of 𝔰𝔢(3): the skew generators scaled by `1/√2`, then
/// the translation generators `E_{i,4}`.
pub fn algebra_basis_se3() -> GroupSpec {
    let mut basis: Vec<Mat> = (0..3)
        .map(|k| hat_se3(&Vector3::ith(k, FRAC_1_SQRT_2), &Vector3::zeros()))
        .collect();
    basis.extend((0..3).map(|k| hat_se3(&Vector3::zeros(), &Vector3::ith(k, 1.0))));
    GroupSpec::new("SE3", 4, basis, ClosedForm::Se3).expect("se(3) basis is orthonormal")
}

/// Algebra element of 𝔰𝔢(3) from angular and linear parts.
pub fn se3_element(group: &Arc<GroupSpec>, omega: &Vector3<f64>, v: &Vector3<f64>) -> Result<AlgebraElement> {
    AlgebraElement::from_matrix(group, hat_se3(omega, v))
}
