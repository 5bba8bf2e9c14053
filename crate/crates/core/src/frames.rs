//! Observation frames (task parameters).
//!
//! Trajectories are stored augmented with time: column 0 is time in seconds,
//! the remaining columns are the state channels. Frames are affine maps that
//! leave the time channel untouched.

use nalgebra::{DMatrix, DVector};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::linalg::{all_finite, all_finite_vec};
use crate::{lit, Real};

/// Largest accepted condition number for a frame's linear part.
pub const MAX_FRAME_CONDITION: f64 = 1e12;

/// An affine observation frame `x ↦ A⁻¹ (x − b)` over augmented states.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame<T: Real> {
    a: DMatrix<T>,
    b: DVector<T>,
    a_inv: DMatrix<T>,
}

impl<T: Real> Frame<T> {
    pub fn new(a: DMatrix<T>, b: DVector<T>) -> Result<Self> {
        let d = b.len();
        if a.nrows() != d || a.ncols() != d {
            return Err(dim_err(format!("frame A is {}x{} but b has length {d}", a.nrows(), a.ncols())));
        }
        if d < 2 {
            return Err(dim_err("frames need a time channel and at least one state channel"));
        }
        if !all_finite(&a) || !all_finite_vec(&b) {
            return Err(Error::NonFinite("frame parameters".into()));
        }
        let tol = lit::<T>(1e-12);
        let time_ok = (a[(0, 0)] - T::one()).abs() <= tol
            && (1..d).all(|j| a[(0, j)].abs() <= tol && a[(j, 0)].abs() <= tol)
            && b[0].abs() <= tol;
        if !time_ok {
            return Err(arg_err("frames must act as the identity on the time channel"));
        }
        let sv = a.clone().singular_values();
        let smax = sv.iter().fold(T::zero(), |m, &s| m.max(s));
        let smin = sv.iter().fold(smax, |m, &s| m.min(s));
        if smin <= T::zero() || smax / smin >= lit(MAX_FRAME_CONDITION) {
            return Err(Error::Singular("frame A is singular or ill-conditioned".into()));
        }
        let a_inv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("frame A is not invertible".into()))?;
        Ok(Self { a, b, a_inv })
    }

    pub fn identity(d_aug: usize) -> Result<Self> {
        Self::new(DMatrix::identity(d_aug, d_aug), DVector::zeros(d_aug))
    }

    /// Pure translation by a state-space offset (time offset is zero).
    pub fn translation(offset: &DVector<T>) -> Result<Self> {
        let d = offset.len() + 1;
        let mut b = DVector::zeros(d);
        b.rows_mut(1, offset.len()).copy_from(offset);
        Self::new(DMatrix::identity(d, d), b)
    }

    /// Frame from a state-space linear map and origin.
    pub fn from_state(linear: &DMatrix<T>, origin: &DVector<T>) -> Result<Self> {
        let n = origin.len();
        if linear.nrows() != n || linear.ncols() != n {
            return Err(dim_err("state-space frame matrix does not match origin"));
        }
        let mut a = DMatrix::identity(n + 1, n + 1);
        a.view_mut((1, 1), (n, n)).copy_from(linear);
        let mut b = DVector::zeros(n + 1);
        b.rows_mut(1, n).copy_from(origin);
        Self::new(a, b)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DVector<T> {
        &self.b
    }

    /// World point → frame-local point.
    pub fn to_local(&self, x: &DVector<T>) -> DVector<T> {
        &self.a_inv * (x - &self.b)
    }

    /// Frame-local point → world point.
    pub fn to_world(&self, z: &DVector<T>) -> DVector<T> {
        &self.a * z + &self.b
    }
}

fn check_traj<T: Real>(traj: &DMatrix<T>, d: usize) -> Result<()> {
    if traj.ncols() != d {
        return Err(dim_err(format!("trajectory has {} columns, frame expects {d}", traj.ncols())));
    }
    if !all_finite(traj) {
        return Err(Error::NonFinite("trajectory".into()));
    }
    Ok(())
}

/// Expresses every row of an augmented trajectory in `frame`.
pub fn transform_to_frame<T: Real>(traj: &DMatrix<T>, frame: &Frame<T>) -> Result<DMatrix<T>> {
    check_traj(traj, frame.dim())?;
    // rows: (A⁻¹ (x − b))ᵀ = (x − b)ᵀ A⁻ᵀ
    let mut shifted = traj.clone();
    for mut row in shifted.row_iter_mut() {
        row -= frame.b.transpose();
    }
    Ok(shifted * frame.a_inv.transpose())
}

/// Inverse of [`transform_to_frame`].
pub fn transform_from_frame<T: Real>(local: &DMatrix<T>, frame: &Frame<T>) -> Result<DMatrix<T>> {
    check_traj(local, frame.dim())?;
    let mut out = local * frame.a.transpose();
    for mut row in out.row_iter_mut() {
        row += frame.b.transpose();
    }
    Ok(out)
}

/// One frame per timestep, attached to the partner arm.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeFrameTrack<T: Real> {
    times: Vec<T>,
    frames: Vec<Frame<T>>,
}

/// Where a time query landed on a [`RelativeFrameTrack`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrackLookup {
    pub index: usize,
    /// The query was outside the horizon and was clamped to an endpoint.
    pub clamped: bool,
}

impl<T: Real> RelativeFrameTrack<T> {
    pub fn new(times: Vec<T>, frames: Vec<Frame<T>>) -> Result<Self> {
        if times.len() != frames.len() || frames.is_empty() {
            return Err(dim_err("relative track needs one time per frame"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(arg_err("relative track times must be strictly increasing"));
        }
        let d = frames[0].dim();
        if frames.iter().any(|f| f.dim() != d) {
            return Err(dim_err("relative track frames differ in dimension"));
        }
        Ok(Self { times, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Frame<T>] {
        &self.frames
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.frames[0].dim()
    }

    /// Nearest sample to `t`; ties go to the earlier sample.
    pub fn lookup(&self, t: T) -> TrackLookup {
        let last = self.times.len() - 1;
        if t < self.times[0] {
            return TrackLookup { index: 0, clamped: true };
        }
        if t > self.times[last] {
            return TrackLookup { index: last, clamped: true };
        }
        let upper = self.times.partition_point(|&s| s < t);
        let index = if upper == 0 {
            0
        } else if upper > last {
            last
        } else if (t - self.times[upper - 1]) <= (self.times[upper] - t) {
            upper - 1
        } else {
            upper
        };
        TrackLookup { index, clamped: false }
    }

    /// Frame-local trajectory of `traj`, row `t` observed from frame `t`.
    pub fn observe(&self, traj: &DMatrix<T>) -> Result<DMatrix<T>> {
        if traj.nrows() != self.len() {
            return Err(dim_err(format!(
                "trajectory has {} samples, relative track has {}",
                traj.nrows(),
                self.len()
            )));
        }
        check_traj(traj, self.dim())?;
        let mut out = DMatrix::zeros(traj.nrows(), traj.ncols());
        for (t, frame) in self.frames.iter().enumerate() {
            let local = frame.to_local(&traj.row(t).transpose());
            out.row_mut(t).copy_from(&local.transpose());
        }
        Ok(out)
    }
}

/// Dynamic frames that follow the partner arm: at each step the frame origin is
/// the partner's state and the linear part is the identity.
pub fn build_relative_frames<T: Real>(partner_traj: &DMatrix<T>) -> Result<RelativeFrameTrack<T>> {
    if partner_traj.nrows() < 2 {
        return Err(arg_err("relative frames need at least two partner samples"));
    }
    if partner_traj.ncols() < 2 {
        return Err(dim_err("partner trajectory needs a time channel and a state"));
    }
    if !all_finite(partner_traj) {
        return Err(Error::NonFinite("partner trajectory".into()));
    }
    let d = partner_traj.ncols();
    let mut times = Vec::with_capacity(partner_traj.nrows());
    let mut frames = Vec::with_capacity(partner_traj.nrows());
    for row in partner_traj.row_iter() {
        times.push(row[0]);
        let state = DVector::from_iterator(d - 1, row.iter().skip(1).copied());
        frames.push(Frame::translation(&state)?);
    }
    RelativeFrameTrack::new(times, frames)
}

/// A task parameter slot used when fitting: a fixed frame or a per-timestep
/// track (which must be as long as the demonstration it observes).
#[derive(Clone, Debug, PartialEq)]
pub enum TaskFrame<T: Real> {
    Static(Frame<T>),
    Relative(RelativeFrameTrack<T>),
}

impl<T: Real> TaskFrame<T> {
    pub fn observe(&self, traj: &DMatrix<T>) -> Result<DMatrix<T>> {
        match self {
            TaskFrame::Static(f) => transform_to_frame(traj, f),
            TaskFrame::Relative(track) => track.observe(traj),
        }
    }

    pub fn is_relative(&self) -> bool {
        matches!(self, TaskFrame::Relative(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(rows: &[[f64; 3]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j])
    }

    #[test]
    fn identity_frame_is_a_no_op() {
        let x = traj(&[[0.0, 1.0, 2.0], [0.1, -3.0, 4.5]]);
        let f = Frame::identity(3).unwrap();
        assert_eq!(transform_to_frame(&x, &f).unwrap(), x);
    }

    #[test]
    fn translation_shifts_state_only() {
        let x = traj(&[[0.0, 1.0, 2.0], [0.5, 3.0, 3.0]]);
        let f = Frame::new(DMatrix::identity(3, 3), DVector::from_vec(vec![0.0, 1.0, 2.0])).unwrap();
        let z = transform_to_frame(&x, &f).unwrap();
        assert_eq!(z, traj(&[[0.0, 0.0, 0.0], [0.5, 2.0, 1.0]]));
    }

    #[test]
    fn planar_rotation() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let f = Frame::from_state(&rot, &DVector::zeros(2)).unwrap();
        let z = transform_to_frame(&traj(&[[0.0, 1.0, 0.0]]), &f).unwrap();
        assert!((z[(0, 1)] - 0.0).abs() < 1e-15);
        assert!((z[(0, 2)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn round_trip() {
        let lin = DMatrix::from_row_slice(2, 2, &[1.2, 0.3, -0.4, 0.9]);
        let f = Frame::from_state(&lin, &DVector::from_vec(vec![2.0, -1.0])).unwrap();
        let x = traj(&[[0.0, 1.0, 2.0], [0.2, -5.0, 0.25], [0.4, 7.0, 8.0]]);
        let back = transform_from_frame(&transform_to_frame(&x, &f).unwrap(), &f).unwrap();
        assert!((back - x).abs().max() < 1e-9);
    }

    #[test]
    fn rejects_time_warping_and_singular_frames() {
        let mut a = DMatrix::identity(3, 3);
        a[(0, 0)] = 2.0;
        assert!(Frame::new(a, DVector::zeros(3)).is_err());
        let b = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(Frame::new(DMatrix::identity(3, 3), b).is_err());
        let mut s = DMatrix::identity(3, 3);
        s[(2, 2)] = 0.0;
        assert!(matches!(Frame::new(s, DVector::zeros(3)), Err(Error::Singular(_))));
    }

    #[test]
    fn constant_partner_gives_static_translation() {
        let p = traj(&[[0.0, 2.0, 3.0], [0.1, 2.0, 3.0], [0.2, 2.0, 3.0]]);
        let track = build_relative_frames(&p).unwrap();
        let expect = Frame::translation(&DVector::from_vec(vec![2.0, 3.0])).unwrap();
        assert_eq!(track.len(), 3);
        assert!(track.frames().iter().all(|f| *f == expect));
    }

    #[test]
    fn partner_at_origin_gives_identity_frames() {
        let p = traj(&[[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]]);
        let track = build_relative_frames(&p).unwrap();
        let own = traj(&[[0.0, 1.0, 2.0], [0.1, 3.0, 4.0]]);
        assert_eq!(track.observe(&own).unwrap(), own);
    }

    #[test]
    fn co_moving_arm_is_static_in_relative_frame() {
        let p = DMatrix::from_fn(5, 3, |i, j| match j {
            0 => i as f64 * 0.1,
            1 => i as f64,
            _ => 0.0,
        });
        let track = build_relative_frames(&p).unwrap();
        let rel = track.observe(&p).unwrap();
        assert!(rel.columns(1, 2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relative_frames_need_two_samples() {
        assert!(build_relative_frames(&traj(&[[0.0, 1.0, 1.0]])).is_err());
    }

    #[test]
    fn lookup_clamps_and_rounds() {
        let track = build_relative_frames(&traj(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])).unwrap();
        assert_eq!(track.lookup(0.4), TrackLookup { index: 0, clamped: false });
        assert_eq!(track.lookup(0.6), TrackLookup { index: 1, clamped: false });
        assert_eq!(track.lookup(0.5), TrackLookup { index: 0, clamped: false });
        assert_eq!(track.lookup(5.0), TrackLookup { index: 2, clamped: true });
        assert_eq!(track.lookup(-1.0), TrackLookup { index: 0, clamped: true });
    }
}
