//! Dense small-matrix arithmetic.
//!
//! Everything here operates on [`Mat`], a dynamically sized `f64` matrix.
//! Sizes in this crate are tiny (n ≤ 6 in practice), so no attempt is made
//! at blocking or in-place tricks.

use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Relative singularity threshold: `sigma_min <= SINGULAR_RTOL * sigma_max`
/// counts as singular.
pub const SINGULAR_RTOL: f64 = 1e-10;

/// Builds a matrix from row-major entries, rejecting wrong counts and
/// non-finite values.
pub fn mat_from_rows(rows: usize, cols: usize, entries: &[f64]) -> Result<Mat> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!("{rows}x{cols} matrix has no entries")));
    }
    if entries.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "expected {} entries for a {rows}x{cols} matrix, got {}",
            rows * cols,
            entries.len()
        )));
    }
    ensure_finite(Mat::from_row_slice(rows, cols, entries))
}

pub fn ensure_finite(a: Mat) -> Result<Mat> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(a)
    } else {
        Err(Error::NonFinite)
    }
}

fn same_shape(a: &Mat, b: &Mat) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn require_square(a: &Mat) -> Result<usize> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("expected a square matrix, got {:?}", a.shape())));
    }
    Ok(a.nrows())
}

/// Frobenius inner product `tr(aᵀ b)`.
pub fn frob_inner(a: &Mat, b: &Mat) -> Result<f64> {
    same_shape(a, b)?;
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y).sum())
}

pub fn frob_norm(a: &Mat) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

const EXP_TAYLOR_TERMS: usize = 18;

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
///
/// The argument is scaled by `2^-s` until its Frobenius norm is at most 1/2;
/// eighteen Taylor terms then leave a truncation error below `1e-22`
/// relative, well inside double precision before squaring.
pub fn mat_exp(a: &Mat) -> Result<Mat> {
    let n = require_square(a)?;
    let norm = frob_norm(a);
    if !norm.is_finite() {
        return Err(Error::NonFinite);
    }
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a * 0.5f64.powi(squarings);

    let mut result = Mat::identity(n, n);
    let mut term = Mat::identity(n, n);
    for k in 1..=EXP_TAYLOR_TERMS {
        term = &term * &scaled / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Singular values of `a`, unordered.
pub fn singular_values(a: &Mat) -> Vec<f64> {
    a.clone().singular_values().iter().copied().collect()
}

/// `(sigma_min, sigma_max)` of any matrix.
pub fn singular_extremes(a: &Mat) -> (f64, f64) {
    let sv = singular_values(a);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let max = sv.iter().copied().fold(0.0, f64::max);
    (min, max)
}

/// Ratio `sigma_max / sigma_min`; infinite for singular input.
pub fn condition_number(a: &Mat) -> f64 {
    let (lo, hi) = singular_extremes(a);
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Inverse of a square matrix, refused when `sigma_min <= 1e-10 sigma_max`.
pub fn mat_inv(a: &Mat) -> Result<Mat> {
    require_square(a)?;
    let (sigma_min, sigma_max) = singular_extremes(a);
    if !(sigma_min > SINGULAR_RTOL * sigma_max) {
        return Err(Error::Singular { sigma_min, sigma_max });
    }
    a.clone()
        .lu()
        .try_inverse()
        .filter(|inv| inv.iter().all(|x| x.is_finite()))
        .ok_or(Error::Singular { sigma_min, sigma_max })
}

/// Nearest rotation to a 3×3 matrix: `U diag(1, 1, det(U Vᵀ)) Vᵀ` from the SVD
/// `a = U Σ Vᵀ`, the sign flip applied to the smallest singular direction.
pub fn polar_so3(a: &Mat) -> Result<Mat> {
    if a.shape() != (3, 3) {
        return Err(Error::Dimension(format!("polar_so3 expects 3x3, got {:?}", a.shape())));
    }
    let svd = SVD::new(a.clone(), true, true);
    let sv = &svd.singular_values;
    let (min_idx, sigma_min) = sv
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, s)| if s < acc.1 { (i, s) } else { acc });
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    if !(sigma_min > SINGULAR_RTOL * sigma_max) {
        return Err(Error::Degenerate { sigma_min });
    }
    let mut u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    if (&u * &v_t).determinant() < 0.0 {
        let mut col = u.column_mut(min_idx);
        col *= -1.0;
    }
    Ok(u * v_t)
}

/// `‖aᵀa − I‖` for a square matrix.
pub fn orthogonality_defect(a: &Mat) -> f64 {
    let n = a.nrows();
    frob_norm(&(a.transpose() * a - Mat::identity(n, n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::hat_so3;
    use crate::testutil::{random_mat, random_rotation, rng};
    use nalgebra::Vector3;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn frob_inner_examples() {
        let i3 = Mat::identity(3, 3);
        assert_eq!(frob_inner(&i3, &i3).unwrap(), 3.0);

        let a = hat_so3(&Vector3::new(1.0, 0.5, -1.0));
        assert!((frob_inner(&a, &a).unwrap() - 4.5).abs() < 1e-14);

        let mut r = rng(1);
        let (a, b) = (random_mat(&mut r, 4, 4), random_mat(&mut r, 4, 4));
        let ab = frob_inner(&a, &b).unwrap();
        let ba = frob_inner(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-14);
        // tr(aᵀb) by definition
        assert!((ab - (a.transpose() * &b).trace()).abs() < 1e-12);
    }

    #[test]
    fn frob_inner_rejects_shape_mismatch() {
        let err = frob_inner(&Mat::zeros(3, 3), &Mat::zeros(4, 4)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn frob_norm_examples() {
        assert_eq!(frob_norm(&Mat::zeros(4, 4)), 0.0);
        assert_eq!(frob_norm(&Mat::identity(4, 4)), 2.0);
        let a = hat_so3(&Vector3::new(1.0, 0.5, -1.0));
        assert!((frob_norm(&a) - 4.5f64.sqrt()).abs() < 1e-14);
        assert!((frob_norm(&a) - 2.121_32).abs() < 1e-5);
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(mat_from_rows(2, 2, &[1.0, 2.0, 3.0]), Err(Error::Dimension(_))));
        assert!(matches!(
            mat_from_rows(1, 2, &[1.0, f64::NAN]),
            Err(Error::NonFinite)
        ));
        let m = mat_from_rows(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m[(1, 0)], 4.0);
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(mat_exp(&Mat::zeros(5, 5)).unwrap(), Mat::identity(5, 5));
    }

    #[test]
    fn exp_quarter_turn_about_x() {
        let r = mat_exp(&(hat_so3(&Vector3::x()) * FRAC_PI_2)).unwrap();
        let expected =
            mat_from_rows(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(frob_norm(&(r - expected)) < 1e-14);
    }

    #[test]
    fn exp_matches_rodrigues() {
        // R = I + sinθ K + (1 − cosθ) K², K the unit-axis generator
        let mut r = rng(7);
        for _ in 0..50 {
            let w = random_mat(&mut r, 3, 1) * 3.0;
            let w = Vector3::new(w[0], w[1], w[2]);
            let theta = w.norm();
            let k = hat_so3(&(w / theta));
            let rodrigues = Mat::identity(3, 3) + &k * theta.sin() + &k * &k * (1.0 - theta.cos());
            let e = mat_exp(&hat_so3(&w)).unwrap();
            assert!(frob_norm(&(e - rodrigues)) < 1e-13);
        }
    }

    #[test]
    fn exp_of_so3_is_rotation() {
        let mut r = rng(11);
        for _ in 0..100 {
            let w = random_mat(&mut r, 3, 1) * 3.0;
            let e = mat_exp(&hat_so3(&Vector3::new(w[0], w[1], w[2]))).unwrap();
            assert!(orthogonality_defect(&e) < 1e-12);
            assert!((e.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exp_inverse_pairs() {
        let mut r = rng(13);
        for _ in 0..100 {
            let a = random_mat(&mut r, 4, 4);
            let a = &a * (5.0 * r_unit(&mut r) / frob_norm(&a));
            let prod = mat_exp(&a).unwrap() * mat_exp(&(-&a)).unwrap();
            assert!(frob_norm(&(prod - Mat::identity(4, 4))) < 1e-10);
        }
    }

    fn r_unit(r: &mut impl rand::Rng) -> f64 {
        r.random::<f64>()
    }

    #[test]
    fn exp_large_argument_relative_accuracy() {
        // diagonal: exp is exact entrywise
        let a = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, -4.0, 5.0, 0.5]));
        let e = mat_exp(&a).unwrap();
        for (i, x) in [3.0f64, -4.0, 5.0, 0.5].iter().enumerate() {
            assert!((e[(i, i)] - x.exp()).abs() <= 1e-12 * x.exp());
        }
    }

    #[test]
    fn exp_rejects_non_square() {
        assert!(mat_exp(&Mat::zeros(2, 3)).is_err());
    }

    #[test]
    fn polar_fixes_rotations_and_removes_scale() {
        let mut r = rng(3);
        for _ in 0..50 {
            let q = random_rotation(&mut r);
            assert!(frob_norm(&(polar_so3(&q).unwrap() - &q)) < 1e-12);
        }
        let p = polar_so3(&(Mat::identity(3, 3) * 2.0)).unwrap();
        assert!(frob_norm(&(p - Mat::identity(3, 3))) < 1e-14);
    }

    #[test]
    fn polar_reflection_matches_brute_force_minimum() {
        let d = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, -1.0]));
        let p = polar_so3(&d).unwrap();
        assert!(orthogonality_defect(&p) < 1e-12);
        assert!((p.determinant() - 1.0).abs() < 1e-12);
        let ours = frob_norm(&(&p - &d));

        // exhaustive search over sampled rotations
        let mut r = rng(5);
        let mut best = f64::INFINITY;
        for _ in 0..20_000 {
            best = best.min(frob_norm(&(random_rotation(&mut r) - &d)));
        }
        assert!(ours <= best + 1e-12, "ours {ours} vs sampled {best}");
        // max tr(Rᵀd) over SO(3) is 1, so the minimum distance is sqrt(6 − 2)
        assert!((ours - 2.0).abs() < 1e-12);
        assert!(best - ours < 0.05);
    }

    #[test]
    fn polar_is_left_equivariant() {
        let mut r = rng(17);
        for _ in 0..100 {
            let a = random_mat(&mut r, 3, 3);
            let q = random_rotation(&mut r);
            let lhs = polar_so3(&(&q * &a)).unwrap();
            let rhs = &q * polar_so3(&a).unwrap();
            assert!(frob_norm(&(lhs - rhs)) < 1e-10);
        }
    }

    #[test]
    fn polar_rejects_rank_deficient() {
        let a = mat_from_rows(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(polar_so3(&a), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn singular_extremes_examples() {
        assert_eq!(singular_extremes(&Mat::identity(4, 4)), (1.0, 1.0));
        let d = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 0.5]));
        let (lo, hi) = singular_extremes(&d);
        assert!((lo - 0.5).abs() < 1e-14 && (hi - 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_values_bound_products() {
        let mut r = rng(19);
        for _ in 0..100 {
            let a = random_mat(&mut r, 4, 4);
            let b = random_mat(&mut r, 4, 3);
            let (lo, hi) = singular_extremes(&a);
            let ab = frob_norm(&(&a * &b));
            let nb = frob_norm(&b);
            assert!(lo * nb <= ab + 1e-12);
            assert!(ab <= hi * nb + 1e-12);
            // ‖a‖² equals the sum of squared singular values
            let sum: f64 = singular_values(&a).iter().map(|s| s * s).sum();
            assert!((sum - frob_norm(&a).powi(2)).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_extremes_match_gram_eigenvalues() {
        let mut r = rng(23);
        for _ in 0..100 {
            let a = random_mat(&mut r, 4, 4);
            let eig = (a.transpose() * &a).symmetric_eigenvalues();
            let lmin = eig.iter().copied().fold(f64::INFINITY, f64::min);
            let lmax = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = singular_extremes(&a);
            assert!((lo * lo - lmin).abs() < 1e-10);
            assert!((hi * hi - lmax).abs() < 1e-10);
        }
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(mat_inv(&Mat::identity(4, 4)).unwrap(), Mat::identity(4, 4));
        let d = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 4.0]));
        let inv = mat_inv(&d).unwrap();
        assert!((inv[(0, 0)] - 0.5).abs() < 1e-15 && (inv[(1, 1)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn inverse_of_benchmark_landmark_matrix() {
        let f = mat_from_rows(
            4,
            4,
            &[2.0, 0.0, 1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 3.0, 2.0, 2.0, 1.0, 2.0, 4.0],
        )
        .unwrap();
        let inv = mat_inv(&f).unwrap();
        assert!(frob_norm(&(&f * inv - Mat::identity(4, 4))) < 1e-10);
    }

    #[test]
    fn inverse_rejects_singular() {
        let a = mat_from_rows(2, 2, &[1.0, 2.0, 2.0, 4.0]).unwrap();
        match mat_inv(&a) {
            Err(Error::Singular { sigma_min, .. }) => assert!(sigma_min < 1e-10),
            other => panic!("expected singular error, got {other:?}"),
        }
    }
}
