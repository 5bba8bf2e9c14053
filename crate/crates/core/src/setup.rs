//! Declarative descriptions of how demonstrations are framed and what a new
//! situation looks like, so runs can be driven from configuration files.

use nalgebra::{DMatrix, DVector, Quaternion, Rotation2, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::em::EmConfig;
use crate::error::{arg_err, dim_err, Result};
use crate::frames::{build_relative_frames, Frame, TaskFrame};
use crate::pipeline::TaskInstance;
use crate::tpgmm::{fit_tpgmm, DemoSet, Tpgmm};

/// Where a static frame comes from in each demonstration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FrameDef {
    /// Translation to the arm's first sample.
    ArmStart,
    /// Translation to the arm's last sample.
    ArmEnd,
    /// Pose of a named object recorded with the demo. Without `rotate` only
    /// its position is used.
    Object {
        name: String,
        #[serde(default)]
        rotate: bool,
    },
}

impl FrameDef {
    pub fn label(&self) -> String {
        match self {
            FrameDef::ArmStart => "arm-start".into(),
            FrameDef::ArmEnd => "arm-end".into(),
            FrameDef::Object { name, rotate: false } => format!("object:{name}"),
            FrameDef::Object { name, rotate: true } => format!("object:{name}:pose"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub frames: Vec<FrameDef>,
    /// Also observe each arm from the partner arm.
    pub relative: bool,
    pub em: EmConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { frames: vec![FrameDef::ArmStart, FrameDef::ArmEnd], relative: true, em: EmConfig::default() }
    }
}

impl ModelSpec {
    pub fn frame_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = self.frames.iter().map(FrameDef::label).collect();
        if self.relative {
            out.push("partner".into());
        }
        out
    }
}

/// State-space rotation for a unit quaternion `w, x, y, z`. Planar states
/// use the rotation about the vertical axis.
fn rotation_matrix(q: &[f64; 4], dims: usize) -> Result<DMatrix<f64>> {
    let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    match dims {
        2 => Ok(DMatrix::from_column_slice(2, 2, Rotation2::new(uq.euler_angles().2).matrix().as_slice())),
        3 => Ok(DMatrix::from_column_slice(3, 3, uq.to_rotation_matrix().matrix().as_slice())),
        _ => Err(arg_err("object rotations need 2-D or 3-D states")),
    }
}

/// The frames of every demonstration for arm `arm`, in model order.
pub fn demo_frames(demos: &DemoSet<f64>, arm: usize, spec: &ModelSpec) -> Result<Vec<Vec<TaskFrame<f64>>>> {
    if spec.relative && demos.arm_names.len() != 2 {
        return Err(arg_err("a partner frame needs two arms"));
    }
    let dims = demos.demos[0].arms[arm].ncols();
    (0..demos.demos.len())
        .map(|i| {
            let demo = &demos.demos[i];
            let traj = &demo.arms[arm];
            let mut frames = spec
                .frames
                .iter()
                .map(|def| {
                    let f = match def {
                        FrameDef::ArmStart => Frame::translation(&traj.row(0).transpose())?,
                        FrameDef::ArmEnd => Frame::translation(&traj.row(traj.nrows() - 1).transpose())?,
                        FrameDef::Object { name, rotate } => {
                            let o = demo
                                .objects
                                .iter()
                                .find(|o| &o.name == name)
                                .ok_or_else(|| arg_err(format!("demo {i} has no object '{name}'")))?;
                            if o.position.len() != dims {
                                return Err(dim_err(format!("object '{name}' does not match the arm dimension")));
                            }
                            if *rotate {
                                Frame::from_state(&rotation_matrix(&o.quaternion, dims)?, &o.position)?
                            } else {
                                Frame::translation(&o.position)?
                            }
                        }
                    };
                    Ok(TaskFrame::Static(f))
                })
                .collect::<Result<Vec<_>>>()?;
            if spec.relative {
                frames.push(TaskFrame::Relative(build_relative_frames(&demos.augmented(i, 1 - arm))?));
            }
            Ok(frames)
        })
        .collect()
}

/// Fits one model per arm.
pub fn fit_arms(demos: &DemoSet<f64>, spec: &ModelSpec) -> Result<Vec<(Tpgmm<f64>, Vec<f64>)>> {
    demos.validate()?;
    if spec.frames.is_empty() && !spec.relative {
        return Err(arg_err("no frames defined"));
    }
    (0..demos.arm_names.len())
        .map(|h| fit_tpgmm(demos, &demos.arm_names[h], &demo_frames(demos, h, spec)?, &spec.em))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramePose {
    pub origin: Vec<f64>,
    /// Row-major state-space matrix; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<Vec<Vec<f64>>>,
}

impl FramePose {
    pub fn at(origin: Vec<f64>) -> Self {
        Self { origin, linear: None }
    }

    fn to_frame(&self) -> Result<Frame<f64>> {
        let b = DVector::from_vec(self.origin.clone());
        match &self.linear {
            None => Frame::translation(&b),
            Some(rows) => {
                let n = self.origin.len();
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(dim_err("frame matrix does not match its origin"));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Frame::from_state(&DMatrix::from_row_slice(n, n, &flat), &b)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmTask {
    pub start: Vec<f64>,
    /// One pose per static frame of the arm's model.
    pub frames: Vec<FramePose>,
}

/// A new situation, one entry per arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub arms: Vec<ArmTask>,
}

impl TaskSpec {
    pub fn instance(&self) -> Result<TaskInstance<f64>> {
        Ok(TaskInstance {
            frames: self
                .arms
                .iter()
                .map(|a| a.frames.iter().map(FramePose::to_frame).collect())
                .collect::<Result<_>>()?,
            start: self.arms.iter().map(|a| DVector::from_vec(a.start.clone())).collect(),
        })
    }
}

/// Two arms starting apart and asked to meet at `meeting`.
///
/// Each arm's own goal is displaced by `end_offset` along the first axis,
/// away from its partner (the first arm's to the negative side), as if the
/// two arms had slightly different estimates of where to meet. Uncoordinated
/// arms therefore stop `2 · end_offset` apart and `meeting` is the midpoint
/// of their goals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeetingScenario {
    pub starts: Vec<Vec<f64>>,
    pub meeting: Vec<f64>,
    #[serde(default)]
    pub end_offset: f64,
}

impl MeetingScenario {
    /// Builds the task for models framed by `frames`. Arm-end frames and a
    /// `meeting` object go to the (offset) goal; arm-start frames to the
    /// starts.
    pub fn task(&self, frames: &[FrameDef]) -> Result<TaskSpec> {
        if self.starts.len() != 2 {
            return Err(arg_err("a meeting needs two start points"));
        }
        let d = self.meeting.len();
        if d == 0 || self.starts.iter().any(|s| s.len() != d) {
            return Err(dim_err("meeting and start points differ in dimension"));
        }
        if !self.end_offset.is_finite() {
            return Err(arg_err("end_offset must be finite"));
        }
        let arms = self
            .starts
            .iter()
            .enumerate()
            .map(|(h, start)| {
                let mut goal = self.meeting.clone();
                goal[0] += if h == 0 { -self.end_offset } else { self.end_offset };
                let frames = frames
                    .iter()
                    .map(|f| match f {
                        FrameDef::ArmStart => Ok(FramePose::at(start.clone())),
                        FrameDef::ArmEnd => Ok(FramePose::at(goal.clone())),
                        FrameDef::Object { name, rotate: false } if name == "meeting" => Ok(FramePose::at(goal.clone())),
                        other => Err(arg_err(format!("a meeting scenario cannot place frame '{}'", other.label()))),
                    })
                    .collect::<Result<_>>()?;
                Ok(ArmTask { start: start.clone(), frames })
            })
            .collect::<Result<_>>()?;
        Ok(TaskSpec { arms })
    }
}
