//! Demonstration sets and task-parameterized Gaussian mixture models.

use nalgebra::{DMatrix, DVector};

use crate::em::{em_fit_views, EmConfig};
use crate::error::{arg_err, dim_err, Error, Result};
use crate::frames::{Frame, RelativeFrameTrack, TaskFrame};
use crate::gaussian::{product_of_weighted_gaussians, simplex_tolerance, Gaussian, Gmm};
use crate::linalg::all_finite;
use crate::{lit, Real};

/// A named static pose recorded with a demonstration (position plus unit
/// quaternion `w, x, y, z`).
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectPose<T: Real> {
    pub name: String,
    pub position: DVector<T>,
    pub quaternion: [T; 4],
}

/// One demonstration: a `T×D` state block per arm (no time column) and the
/// object poses observed with it.
#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration<T: Real> {
    pub arms: Vec<DMatrix<T>>,
    pub objects: Vec<ObjectPose<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoSet<T: Real> {
    pub dt: T,
    pub arm_names: Vec<String>,
    pub demos: Vec<Demonstration<T>>,
    pub channel_names: Option<Vec<String>>,
}

impl<T: Real> DemoSet<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(arg_err("dt must be positive"));
        }
        let h = self.arm_names.len();
        if !(1..=2).contains(&h) {
            return Err(arg_err(format!("{h} arms; one or two are supported")));
        }
        if self.demos.is_empty() {
            return Err(arg_err("demo set is empty"));
        }
        let mut dims = vec![None; h];
        for (i, demo) in self.demos.iter().enumerate() {
            if demo.arms.len() != h {
                return Err(dim_err(format!("demo {i} has {} arm blocks, expected {h}", demo.arms.len())));
            }
            let len = demo.arms[0].nrows();
            for (a, block) in demo.arms.iter().enumerate() {
                if block.nrows() < 2 || block.ncols() == 0 {
                    return Err(dim_err(format!("demo {i} arm {a} is too small")));
                }
                if block.nrows() != len {
                    return Err(dim_err(format!("demo {i}: arms have different lengths")));
                }
                if !all_finite(block) {
                    return Err(Error::NonFinite(format!("demo {i} arm {a}")));
                }
                match dims[a] {
                    None => dims[a] = Some(block.ncols()),
                    Some(d) if d != block.ncols() => {
                        return Err(dim_err(format!("demo {i} arm {a} has {} channels, expected {d}", block.ncols())))
                    }
                    _ => {}
                }
            }
        }
        if let Some(names) = &self.channel_names {
            if dims.iter().any(|d| *d != Some(names.len())) {
                return Err(dim_err("channel names do not match the arm state dimension"));
            }
        }
        Ok(())
    }

    pub fn arm_index(&self, arm: &str) -> Result<usize> {
        self.arm_names
            .iter()
            .position(|a| a == arm)
            .ok_or_else(|| arg_err(format!("unknown arm '{arm}'")))
    }

    /// Arm trajectory of demo `demo` with a leading time column.
    pub fn augmented(&self, demo: usize, arm: usize) -> DMatrix<T> {
        augment_with_time(&self.demos[demo].arms[arm], self.dt)
    }
}

/// Prepends a time column `t_i = i · dt`.
pub fn augment_with_time<T: Real>(states: &DMatrix<T>, dt: T) -> DMatrix<T> {
    let (n, d) = states.shape();
    let mut out = DMatrix::zeros(n, d + 1);
    for i in 0..n {
        out[(i, 0)] = lit::<T>(i as f64) * dt;
    }
    out.columns_mut(1, d).copy_from(states);
    out
}

/// Index-aligned per-frame mixtures sharing one set of priors. When
/// `has_relative_frame` is set, the last frame is the partner-relative one.
#[derive(Clone, Debug, PartialEq)]
pub struct Tpgmm<T: Real> {
    priors: Vec<T>,
    frames: Vec<Vec<Gaussian<T>>>,
    has_relative_frame: bool,
}

impl<T: Real> Tpgmm<T> {
    pub fn new(priors: Vec<T>, frames: Vec<Vec<Gaussian<T>>>, has_relative_frame: bool) -> Result<Self> {
        let k = priors.len();
        if k == 0 || frames.is_empty() {
            return Err(arg_err("TP-GMM needs at least one component and one frame"));
        }
        if frames.iter().any(|f| f.len() != k) {
            return Err(dim_err("frames hold different numbers of components"));
        }
        if priors.iter().any(|p| !p.is_finite() || *p < T::zero()) {
            return Err(arg_err("priors must be non-negative"));
        }
        let sum = priors.iter().fold(T::zero(), |a, &p| a + p);
        if (sum - T::one()).abs() > simplex_tolerance() {
            return Err(arg_err("priors do not sum to one"));
        }
        let d = frames[0][0].dim();
        if frames.iter().flatten().any(|g| g.dim() != d) {
            return Err(dim_err("frame components differ in dimension"));
        }
        let tol = lit::<T>(1e-6);
        for c in 0..k {
            let t0 = frames[0][c].mean()[0];
            if frames.iter().any(|f| (f[c].mean()[0] - t0).abs() > tol) {
                return Err(arg_err(format!("component {c} has inconsistent time means across frames")));
            }
        }
        Ok(Self { priors, frames, has_relative_frame })
    }

    pub fn priors(&self) -> &[T] {
        &self.priors
    }

    /// `frame_components()[j][k]`
    pub fn frame_components(&self) -> &[Vec<Gaussian<T>>] {
        &self.frames
    }

    pub fn has_relative_frame(&self) -> bool {
        self.has_relative_frame
    }

    pub fn n_components(&self) -> usize {
        self.priors.len()
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_static_frames(&self) -> usize {
        self.frames.len() - usize::from(self.has_relative_frame)
    }

    /// Augmented dimension (time + state).
    pub fn dim(&self) -> usize {
        self.frames[0][0].dim()
    }

    pub fn relative_components(&self) -> Option<&[Gaussian<T>]> {
        self.has_relative_frame.then(|| self.frames.last().unwrap().as_slice())
    }

    /// Time-channel mean of each component.
    pub fn time_centers(&self) -> Vec<T> {
        self.frames[0].iter().map(|g| g.mean()[0]).collect()
    }

    /// The mixture as seen from frame `j`.
    pub fn frame_gmm(&self, j: usize) -> Result<Gmm<T>> {
        let comps = self.frames.get(j).ok_or_else(|| arg_err("frame index out of range"))?;
        Gmm::new(self.priors.clone(), comps.clone())
    }
}

/// Fits a TP-GMM to one arm of a demo set. `frames_per_demo[i]` holds the
/// task frames of demo `i`; only the last may be relative.
pub fn fit_tpgmm<T: Real>(
    demos: &DemoSet<T>,
    arm: &str,
    frames_per_demo: &[Vec<TaskFrame<T>>],
    cfg: &EmConfig,
) -> Result<(Tpgmm<T>, Vec<T>)> {
    demos.validate()?;
    let a = demos.arm_index(arm)?;
    let trajs: Vec<DMatrix<T>> = (0..demos.demos.len()).map(|i| demos.augmented(i, a)).collect();
    fit_tpgmm_trajectories(&trajs, frames_per_demo, cfg)
}

/// [`fit_tpgmm`] over already time-augmented trajectories.
pub fn fit_tpgmm_trajectories<T: Real>(
    trajs: &[DMatrix<T>],
    frames_per_demo: &[Vec<TaskFrame<T>>],
    cfg: &EmConfig,
) -> Result<(Tpgmm<T>, Vec<T>)> {
    if trajs.is_empty() {
        return Err(arg_err("no demonstrations"));
    }
    if frames_per_demo.len() != trajs.len() {
        return Err(dim_err(format!(
            "{} frame lists for {} demonstrations",
            frames_per_demo.len(),
            trajs.len()
        )));
    }
    let p = frames_per_demo[0].len();
    if p == 0 {
        return Err(arg_err("at least one frame per demonstration is required"));
    }
    if frames_per_demo.iter().any(|f| f.len() != p) {
        return Err(arg_err("demonstrations have different numbers of frames"));
    }
    let has_relative = frames_per_demo[0][p - 1].is_relative();
    for (i, frames) in frames_per_demo.iter().enumerate() {
        for (j, f) in frames.iter().enumerate() {
            let should = has_relative && j == p - 1;
            if f.is_relative() != should {
                return Err(arg_err(format!(
                    "demo {i} frame {j}: only the last frame may be relative, consistently across demos"
                )));
            }
        }
    }

    let d = trajs[0].ncols();
    let n: usize = trajs.iter().map(|t| t.nrows()).sum();
    let mut views = vec![DMatrix::<T>::zeros(n, d); p];
    let mut row = 0;
    for (traj, frames) in trajs.iter().zip(frames_per_demo) {
        if traj.ncols() != d {
            return Err(dim_err("demonstrations differ in dimension"));
        }
        for (view, frame) in views.iter_mut().zip(frames) {
            let local = frame.observe(traj)?;
            view.rows_mut(row, traj.nrows()).copy_from(&local);
        }
        row += traj.nrows();
    }

    let fit = em_fit_views(&views, cfg)?;
    let model = Tpgmm::new(fit.priors, fit.components, has_relative)?;
    Ok((model, fit.loglik_history))
}

/// Diagnostics from reconstructing with a dynamic relative frame.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReconstructDiagnostics {
    /// Components whose time-center fell outside the relative track.
    pub clamped_components: usize,
}

fn check_reconstruct_args<T: Real>(model: &Tpgmm<T>, new_frames: &[Frame<T>], sigma: T) -> Result<()> {
    if !(sigma >= T::zero()) || !sigma.is_finite() {
        return Err(arg_err("coordination weight sigma must be finite and non-negative"));
    }
    if new_frames.len() != model.n_static_frames() {
        return Err(dim_err(format!(
            "{} frames supplied, model has {} static frames",
            new_frames.len(),
            model.n_static_frames()
        )));
    }
    if new_frames.iter().any(|f| f.dim() != model.dim()) {
        return Err(dim_err("frame dimension does not match the model"));
    }
    Ok(())
}

fn component_product<T: Real>(
    model: &Tpgmm<T>,
    k: usize,
    new_frames: &[Frame<T>],
    relative: Option<&Frame<T>>,
    sigma: T,
) -> Result<Gaussian<T>> {
    let mut transformed = Vec::with_capacity(model.n_frames());
    for (j, frame) in new_frames.iter().enumerate() {
        transformed.push((model.frames[j][k].transform(frame.a(), frame.b())?, T::one()));
    }
    if let (Some(frame), Some(rel)) = (relative, model.relative_components()) {
        transformed.push((rel[k].transform(frame.a(), frame.b())?, sigma));
    }
    let factors: Vec<(&Gaussian<T>, T)> = transformed.iter().map(|(g, w)| (g, *w)).collect();
    product_of_weighted_gaussians(&factors)
}

/// Task-specific mixture for new task parameters. The relative expert of
/// component `k` is placed with the track frame nearest to the component's
/// time-center and weighted by `sigma`.
pub fn reconstruct_gmm<T: Real>(
    model: &Tpgmm<T>,
    new_frames: &[Frame<T>],
    relative_track: Option<&RelativeFrameTrack<T>>,
    sigma: T,
) -> Result<Gmm<T>> {
    Ok(reconstruct_gmm_with_diagnostics(model, new_frames, relative_track, sigma)?.0)
}

pub fn reconstruct_gmm_with_diagnostics<T: Real>(
    model: &Tpgmm<T>,
    new_frames: &[Frame<T>],
    relative_track: Option<&RelativeFrameTrack<T>>,
    sigma: T,
) -> Result<(Gmm<T>, ReconstructDiagnostics)> {
    check_reconstruct_args(model, new_frames, sigma)?;
    if relative_track.is_some() != model.has_relative_frame() {
        return Err(arg_err(if model.has_relative_frame() {
            "model has a relative frame but no relative track was given"
        } else {
            "relative track given for a model without a relative frame"
        }));
    }
    if let Some(track) = relative_track {
        if track.dim() != model.dim() {
            return Err(dim_err("relative track dimension does not match the model"));
        }
    }
    let mut diag = ReconstructDiagnostics::default();
    let centers = model.time_centers();
    let comps = (0..model.n_components())
        .map(|k| {
            let rel = relative_track.map(|track| {
                let hit = track.lookup(centers[k]);
                if hit.clamped {
                    diag.clamped_components += 1;
                }
                &track.frames()[hit.index]
            });
            component_product(model, k, new_frames, rel, sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    if diag.clamped_components > 0 {
        log::debug!("{} component time-centers clamped to the relative track", diag.clamped_components);
    }
    Ok((Gmm::new(model.priors.clone(), comps)?, diag))
}

/// Task-specific mixture with one relative frame applied to every component,
/// used to evaluate the relative expert at a single timestep.
pub fn reconstruct_gmm_with_frame<T: Real>(
    model: &Tpgmm<T>,
    new_frames: &[Frame<T>],
    relative_frame: Option<&Frame<T>>,
    sigma: T,
) -> Result<Gmm<T>> {
    check_reconstruct_args(model, new_frames, sigma)?;
    if relative_frame.is_some() && !model.has_relative_frame() {
        return Err(arg_err("relative frame given for a model without a relative frame"));
    }
    let comps = (0..model.n_components())
        .map(|k| component_product(model, k, new_frames, relative_frame, sigma))
        .collect::<Result<Vec<_>>>()?;
    Gmm::new(model.priors.clone(), comps)
}
