#![allow(dead_code)]

use lie_observer::cli::{InitialConfig, InitialMode, Preset, RunConfig};
use lie_observer::matcore::{mat_exp, Mat};
use lie_observer::liegroup::hat_so3;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mat(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

pub fn random_vec3(r: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| r.random_range(-2.0..2.0))
}

/// Random rotation through the exponential of a random rotation vector.
pub fn random_rotation(r: &mut ChaCha8Rng) -> Mat {
    mat_exp(&hat_so3(&random_vec3(r))).unwrap()
}

pub fn random_pose(r: &mut ChaCha8Rng) -> Mat {
    let mut g = Mat::identity(4, 4);
    g.view_mut((0, 0), (3, 3)).copy_from(&random_rotation(r));
    g.view_mut((0, 3), (3, 1)).copy_from(&random_vec3(r));
    g
}

/// Random orthogonal matrix (not necessarily a rotation) from a QR factorisation.
pub fn random_orthogonal(r: &mut ChaCha8Rng, n: usize) -> Mat {
    random_mat(r, n, n).qr().q()
}

/// Scenario A: observer II, k_P = 4, k_I = 0.75, quarter-turn initial attitude error.
pub fn scenario_a() -> RunConfig {
    Preset::Se3Observer2.config()
}

/// Scenario B: observer IV, k_P = 4, k_I = 4.
pub fn scenario_b() -> RunConfig {
    Preset::Se3Observer4.config()
}

pub fn exact(mut cfg: RunConfig) -> RunConfig {
    cfg.initial = InitialConfig::Mode(InitialMode::Exact);
    cfg
}
