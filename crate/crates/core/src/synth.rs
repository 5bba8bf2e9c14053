//! Synthetic bimanual "meeting" demonstrations built from cubic Bézier curves.
//!
//! Each demonstration draws a start point per arm and one shared meeting
//! point. Each arm follows a cubic Bézier from its start to the meeting point
//! whose two interior control points sit at one and two thirds of the chord,
//! pushed sideways by `style` times the chord turned a quarter turn. Both
//! arms share the style, so the demos differ in where the arms meet while
//! the way they approach each other stays the same.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Result};
use crate::tpgmm::{DemoSet, Demonstration, ObjectPose};
use crate::Real;

/// Evaluates a Bézier curve by de Casteljau's algorithm at `samples` uniform
/// parameters on `[0, 1]`. The first and last rows equal the end control
/// points exactly.
pub fn bezier_curve<T: Real>(control_points: &[DVector<T>], samples: usize) -> Result<DMatrix<T>> {
    if control_points.len() < 2 {
        return Err(arg_err("a Bézier curve needs at least two control points"));
    }
    if samples < 2 {
        return Err(arg_err("at least two samples are required"));
    }
    let d = control_points[0].len();
    if control_points.iter().any(|p| p.len() != d) {
        return Err(dim_err("control points differ in dimension"));
    }
    let mut out = DMatrix::zeros(samples, d);
    let mut work = control_points.to_vec();
    let last = T::from_usize(samples - 1).unwrap();
    for i in 0..samples {
        let s = T::from_usize(i).unwrap() / last;
        work.clone_from_slice(control_points);
        for level in (1..work.len()).rev() {
            for j in 0..level {
                let next = &work[j] * (T::one() - s) + &work[j + 1] * s;
                work[j] = next;
            }
        }
        out.row_mut(i).copy_from(&work[0].transpose());
    }
    Ok(out)
}

/// Axis-aligned sampling box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn centered(center: &[f64], half_width: f64) -> Self {
        Self {
            lo: center.iter().map(|c| c - half_width).collect(),
            hi: center.iter().map(|c| c + half_width).collect(),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_iterator(
            self.lo.len(),
            self.lo.iter().zip(&self.hi).map(|(&lo, &hi)| lo + (hi - lo) * rng.gen::<f64>()),
        )
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeetingTaskSpec {
    pub dims: usize,
    pub n_demos: usize,
    /// Samples per demonstration.
    pub samples: usize,
    pub dt: f64,
    pub meeting_region: Region,
    /// One start box per arm.
    pub start_regions: Vec<Region>,
    /// Sideways offset of the interior control points, as a fraction of the
    /// chord length.
    pub style: f64,
    pub seed: u64,
}

impl MeetingTaskSpec {
    /// Two-arm planar task: arms start left and right of the origin and meet
    /// above it.
    pub fn planar(seed: u64) -> Self {
        Self {
            dims: 2,
            n_demos: 3,
            samples: 100,
            dt: 0.1,
            meeting_region: Region::centered(&[5.0, 6.0], 1.5),
            start_regions: vec![Region::centered(&[0.0, 0.0], 0.25), Region::centered(&[10.0, 0.0], 0.25)],
            style: 0.2,
            seed,
        }
    }

    pub fn spatial(seed: u64) -> Self {
        Self {
            dims: 3,
            n_demos: 3,
            samples: 100,
            dt: 0.1,
            // Thin in y: three demos only span a plane of approach
            // directions, so the meeting points stay close to one.
            meeting_region: Region { lo: vec![3.5, 7.9, 3.5], hi: vec![6.5, 8.1, 6.5] },
            start_regions: vec![
                Region::centered(&[0.0, 0.0, 0.0], 0.25),
                Region::centered(&[10.0, 0.0, 0.0], 0.25),
            ],
            style: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.dims) {
            return Err(arg_err("meeting demos are 2-D or 3-D"));
        }
        if self.n_demos < 1 || self.samples < 2 {
            return Err(arg_err("need at least one demo and two samples"));
        }
        if !(self.dt > 0.0) {
            return Err(arg_err("dt must be positive"));
        }
        if self.start_regions.len() != 2 {
            return Err(arg_err("meeting demos have exactly two arms"));
        }
        for r in self.start_regions.iter().chain(std::iter::once(&self.meeting_region)) {
            if r.lo.len() != self.dims || r.hi.len() != self.dims {
                return Err(dim_err("region dimension does not match dims"));
            }
            if r.lo.iter().zip(&r.hi).any(|(a, b)| !(b > a)) {
                return Err(arg_err("regions must be non-degenerate"));
            }
        }
        if !self.style.is_finite() {
            return Err(arg_err("style must be finite"));
        }
        Ok(())
    }
}

/// Sideways offset of the interior control points: the chord turned a
/// quarter turn about the vertical axis (in-plane for 2-D) and scaled by
/// `style`. The map is linear, so the difference of two arms' curves depends
/// only on their start points, not on where they meet.
fn side_offset(chord: &DVector<f64>, style: f64) -> DVector<f64> {
    let mut off = DVector::zeros(chord.len());
    off[0] = -style * chord[1];
    off[1] = style * chord[0];
    off
}

pub(crate) fn arm_curve(start: &DVector<f64>, meeting: &DVector<f64>, style: f64, samples: usize) -> Result<DMatrix<f64>> {
    let chord = meeting - start;
    let offset = side_offset(&chord, style);
    let p1 = start + &chord / 3.0 + &offset;
    let p2 = start + &chord * (2.0 / 3.0) + &offset;
    bezier_curve(&[start.clone(), p1, p2, meeting.clone()], samples)
}

/// Generates the meeting demonstrations. Arm names are `left` and `right`;
/// each demo records its meeting point as the object `meeting`.
pub fn make_meeting_demos(spec: &MeetingTaskSpec) -> Result<DemoSet<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut demos = Vec::with_capacity(spec.n_demos);
    for _ in 0..spec.n_demos {
        let starts: Vec<DVector<f64>> = spec.start_regions.iter().map(|r| r.sample(&mut rng)).collect();
        let meeting = spec.meeting_region.sample(&mut rng);
        let arms = starts
            .iter()
            .map(|s| arm_curve(s, &meeting, spec.style, spec.samples))
            .collect::<Result<Vec<_>>>()?;
        demos.push(Demonstration {
            arms,
            objects: vec![ObjectPose { name: "meeting".into(), position: meeting, quaternion: [1.0, 0.0, 0.0, 0.0] }],
        });
    }
    let channel_names = ["x", "y", "z"][..spec.dims].iter().map(|s| s.to_string()).collect();
    Ok(DemoSet {
        dt: spec.dt,
        arm_names: vec!["left".into(), "right".into()],
        demos,
        channel_names: Some(channel_names),
    })
}
