#![allow(dead_code)]

use bicoord::lqt::{CoordinatedLqtProblem, CoordinationMatrix, LinearSystem, LqtProblem};
use bicoord::{Frame, Gaussian};
use nalgebra::{DMatrix, DVector, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

/// Symmetric positive definite with eigenvalues in `[lo, hi]`.
pub fn spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.gen_range(lo..hi)));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Gaussian<f64> {
    let mean = vector(rng, n, 3.0);
    let cov = spd(rng, n, 0.1, 4.0);
    Gaussian::new(mean, cov).unwrap()
}

/// Rotation (proper, det +1) in `d` dimensions, `d ∈ {1, 2, 3}`.
pub fn rotation(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    match d {
        1 => DMatrix::identity(1, 1),
        2 => {
            let a: f64 = rng.gen_range(-3.1..3.1);
            DMatrix::from_row_slice(2, 2, &[a.cos(), -a.sin(), a.sin(), a.cos()])
        }
        3 => {
            let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let r = Rotation3::new(axis * rng.gen_range(0.1..1.5));
            DMatrix::from_column_slice(3, 3, r.matrix().as_slice())
        }
        _ => panic!("unsupported"),
    }
}

/// Rigid transform of the state channels, identity on time.
pub fn rigid_frame(rng: &mut ChaCha8Rng, d: usize) -> Frame<f64> {
    Frame::from_state(&rotation(rng, d), &vector(rng, d, 5.0)).unwrap()
}

/// Random trajectory with a time column.
pub fn trajectory(rng: &mut ChaCha8Rng, t: usize, d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(t, d + 1);
    let mut x = vector(rng, d, 2.0);
    for i in 0..t {
        m[(i, 0)] = i as f64 * 0.1;
        x += vector(rng, d, 0.3);
        m.view_mut((i, 1), (1, d)).copy_from(&x.transpose());
    }
    m
}

pub fn system(rng: &mut ChaCha8Rng) -> LinearSystem<f64> {
    let d = rng.gen_range(1..=2);
    let order = rng.gen_range(1..=2);
    LinearSystem::integrator(d, rng.gen_range(0.05..0.3), order).unwrap()
}

pub fn lqt_problem(rng: &mut ChaCha8Rng, sys: &LinearSystem<f64>, t: usize) -> LqtProblem<f64> {
    let ds = sys.state_dim();
    LqtProblem {
        ref_means: DMatrix::from_fn(t, ds, |_, _| rng.gen_range(-2.0..2.0)),
        q_blocks: (0..t).map(|_| spd(rng, ds, 0.1, 5.0)).collect(),
        r: rng.gen_range(1e-3..1e-1),
        x1: vector(rng, ds, 1.0),
    }
}

pub fn coordinated_problem(rng: &mut ChaCha8Rng, sys: &LinearSystem<f64>, t: usize, sigma: f64) -> CoordinatedLqtProblem<f64> {
    let ds = sys.state_dim();
    CoordinatedLqtProblem {
        arms: vec![lqt_problem(rng, sys, t), lqt_problem(rng, sys, t)],
        rel_means: DMatrix::from_fn(t, ds, |_, _| rng.gen_range(-2.0..2.0)),
        rel_q_blocks: (0..t).map(|_| spd(rng, ds, 0.1, 5.0)).collect(),
        sigma,
        coordination: CoordinationMatrix::bimanual(sys.control_dim() * (t - 1)).unwrap(),
    }
}

/// Central-difference gradient.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, u: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(u.len(), |i, _| {
        let mut up = u.clone();
        let mut dn = u.clone();
        up[i] += h;
        dn[i] -= h;
        (f(&up) - f(&dn)) / (2.0 * h)
    })
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}
