//! End-to-end generation: independent, leader-follower and synergistic.
//!
//! Every mode follows the same chain: reconstruct a task-specific mixture for
//! the new frames, regress a per-timestep position reference over time, and
//! track it with a batch LQT. Coordination enters either through the
//! relative-frame expert in the mixture (`Representation`), through a
//! relative tracking term in the controller (`Control`), or both.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::frames::{build_relative_frames, Frame, RelativeFrameTrack};
use crate::gaussian::{gmr_condition, product_of_gaussians, Gaussian, Gmm};
use crate::lqt::{
    solve_coordinated_lqt, solve_lqt, solve_lqt_multi, CoordinatedLqtProblem, CoordinationMatrix, LinearSystem,
    LqtProblem,
};
use crate::tpgmm::{reconstruct_gmm, reconstruct_gmm_with_frame, Tpgmm};
use crate::{lit, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoordinationSite {
    #[default]
    Representation,
    Control,
    Both,
}

impl CoordinationSite {
    fn uses_representation(self) -> bool {
        matches!(self, Self::Representation | Self::Both)
    }

    fn uses_control(self) -> bool {
        matches!(self, Self::Control | Self::Both)
    }
}

impl std::str::FromStr for CoordinationSite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "representation" => Ok(Self::Representation),
            "control" => Ok(Self::Control),
            "both" => Ok(Self::Both),
            other => Err(arg_err(format!("unknown coordination site `{other}`"))),
        }
    }
}

/// Where along the partner trajectory the relative expert is anchored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelativeTiming {
    /// Once per component, at the partner sample nearest its time-center.
    ComponentCenter,
    /// At every output step, at the partner's sample for that step.
    #[default]
    PerTimestep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Output horizon in samples.
    pub t_out: usize,
    /// Sample period of the output; the time channel is `t · dt`.
    pub dt: f64,
    pub sigma: f64,
    pub coordination_site: CoordinationSite,
    pub relative_timing: RelativeTiming,
    pub synergy_iters: usize,
    /// Early stop once no point of either arm moves more than this.
    pub synergy_tol: f64,
    /// Blend factor for each synergistic update; 1 replaces the previous
    /// iterate outright.
    pub synergy_relaxation: f64,
    /// 1 = single integrator, 2 = double integrator.
    pub order: usize,
    /// Control cost `R = r · I`.
    pub r: f64,
    /// Channel groups (0-based, excluding time) holding quaternions to be
    /// renormalized on output.
    pub quaternion_channels: Vec<[usize; 4]>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            t_out: 100,
            dt: 0.1,
            sigma: 1.0,
            coordination_site: CoordinationSite::Representation,
            relative_timing: RelativeTiming::PerTimestep,
            synergy_iters: 3,
            synergy_tol: 1e-3,
            synergy_relaxation: 1.0,
            order: 2,
            r: 1e-6,
            quaternion_channels: Vec::new(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_out < 2 {
            return Err(arg_err("t_out must be at least 2"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(arg_err("dt must be positive"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(arg_err("sigma must be finite and non-negative"));
        }
        if self.synergy_iters < 1 {
            return Err(arg_err("synergy_iters must be at least 1"));
        }
        if !(self.synergy_tol >= 0.0) {
            return Err(arg_err("synergy_tol must be non-negative"));
        }
        if !(self.synergy_relaxation > 0.0 && self.synergy_relaxation <= 1.0) {
            return Err(arg_err("synergy_relaxation must lie in (0, 1]"));
        }
        if !(1..=2).contains(&self.order) {
            return Err(arg_err("order must be 1 or 2"));
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(arg_err("r must be positive"));
        }
        Ok(())
    }

    fn times<T: Real>(&self) -> Vec<T> {
        (0..self.t_out).map(|t| lit::<T>(t as f64 * self.dt)).collect()
    }
}

/// A new situation: per-arm static frames and start positions.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskInstance<T: Real> {
    pub frames: Vec<Vec<Frame<T>>>,
    /// Start position per arm (velocities start at zero).
    pub start: Vec<DVector<T>>,
}

impl<T: Real> TaskInstance<T> {
    fn check_arm(&self, h: usize, model: &Tpgmm<T>) -> Result<()> {
        let frames = self.frames.get(h).ok_or_else(|| arg_err(format!("task has no frames for arm {h}")))?;
        let start = self.start.get(h).ok_or_else(|| arg_err(format!("task has no start for arm {h}")))?;
        if frames.len() != model.n_static_frames() {
            return Err(dim_err(format!(
                "arm {h}: task has {} frames, model has {} static frames",
                frames.len(),
                model.n_static_frames()
            )));
        }
        if start.len() + 1 != model.dim() {
            return Err(dim_err(format!("arm {h}: start position does not match the model dimension")));
        }
        Ok(())
    }
}

/// A generated arm: `T × (1 + D)` trajectory (time first) and the position
/// references it tracked.
#[derive(Clone, Debug)]
pub struct ArmGeneration<T: Real> {
    pub trajectory: DMatrix<T>,
    pub references: Vec<Gaussian<T>>,
}

/// Linear resampling of a trajectory to `t_out` rows over its sample index.
pub fn resample_trajectory<T: Real>(traj: &DMatrix<T>, t_out: usize) -> Result<DMatrix<T>> {
    let n = traj.nrows();
    if n < 2 || t_out < 2 {
        return Err(arg_err("resampling needs at least two samples in and out"));
    }
    if n == t_out {
        return Ok(traj.clone());
    }
    let scale = lit::<T>((n - 1) as f64 / (t_out - 1) as f64);
    let mut out = DMatrix::zeros(t_out, traj.ncols());
    for i in 0..t_out {
        let s = T::from_usize(i).unwrap() * scale;
        let lo = s.floor().to_usize().unwrap().min(n - 2);
        let w = s - T::from_usize(lo).unwrap();
        let row = traj.row(lo) * (T::one() - w) + traj.row(lo + 1) * w;
        out.row_mut(i).copy_from(&row);
    }
    Ok(out)
}

/// Normalizes each quaternion group of a `T × (1 + D)` trajectory in place.
pub fn renormalize_quaternions<T: Real>(traj: &mut DMatrix<T>, groups: &[[usize; 4]]) -> Result<()> {
    for g in groups {
        if g.iter().any(|&c| c + 1 >= traj.ncols()) {
            return Err(dim_err("quaternion channel out of range"));
        }
        for mut row in traj.row_iter_mut() {
            let norm = g.iter().map(|&c| row[c + 1] * row[c + 1]).fold(T::zero(), |a, b| a + b).sqrt();
            if norm > T::zero() {
                for &c in g {
                    row[c + 1] /= norm;
                }
            }
        }
    }
    Ok(())
}

fn system<T: Real>(cfg: &GenerationConfig, d: usize) -> Result<LinearSystem<T>> {
    LinearSystem::integrator(d, lit(cfg.dt), cfg.order)
}

fn out_dims(d_aug: usize) -> Vec<usize> {
    (1..d_aug).collect()
}

/// GMR of `gmm` over the time channel at each output time.
fn regress_over_time<T: Real>(gmm: &Gmm<T>, times: &[T]) -> Result<Vec<Gaussian<T>>> {
    let outs = out_dims(gmm.dim());
    times.iter().map(|&t| gmr_condition(gmm, &[0], &outs, &DVector::from_element(1, t))).collect()
}

fn assemble<T: Real>(times: &[T], x: &DMatrix<T>, d: usize) -> DMatrix<T> {
    let mut out = DMatrix::zeros(times.len(), d + 1);
    for (t, &time) in times.iter().enumerate() {
        out[(t, 0)] = time;
        out.view_mut((t, 1), (1, d)).copy_from(&x.view((t, 0), (1, d)));
    }
    out
}

fn finish<T: Real>(cfg: &GenerationConfig, times: &[T], x: &DMatrix<T>, d: usize) -> Result<DMatrix<T>> {
    let mut traj = assemble(times, x, d);
    renormalize_quaternions(&mut traj, &cfg.quaternion_channels)?;
    Ok(traj)
}

/// Position references from the static frames and, when `partner` is given
/// and the site uses the representation, the σ-weighted relative expert.
fn references<T: Real>(
    model: &Tpgmm<T>,
    frames: &[Frame<T>],
    partner: Option<&RelativeFrameTrack<T>>,
    cfg: &GenerationConfig,
    times: &[T],
) -> Result<Vec<Gaussian<T>>> {
    let sigma = lit::<T>(cfg.sigma);
    match partner {
        Some(track) if cfg.coordination_site.uses_representation() => match cfg.relative_timing {
            RelativeTiming::ComponentCenter => {
                let gmm = reconstruct_gmm(model, frames, Some(track), sigma)?;
                regress_over_time(&gmm, times)
            }
            RelativeTiming::PerTimestep => {
                let outs = out_dims(model.dim());
                times
                    .iter()
                    .zip(track.frames())
                    .map(|(&t, frame)| {
                        let gmm = reconstruct_gmm_with_frame(model, frames, Some(frame), sigma)?;
                        gmr_condition(&gmm, &[0], &outs, &DVector::from_element(1, t))
                    })
                    .collect()
            }
        },
        _ => {
            let gmm = reconstruct_gmm_with_frame(model, frames, None, sigma)?;
            regress_over_time(&gmm, times)
        }
    }
}

/// Relative-state reference `x_self − x_partner` from the model's relative
/// frame, as per-step means and precisions padded to the full state.
fn relative_reference<T: Real>(model: &Tpgmm<T>, times: &[T]) -> Result<Vec<Gaussian<T>>> {
    if !model.has_relative_frame() {
        return Err(arg_err("model has no relative frame"));
    }
    let gmm = model.frame_gmm(model.n_frames() - 1)?;
    regress_over_time(&gmm, times)
}

fn pad_references<T: Real>(sys: &LinearSystem<T>, refs: &[Gaussian<T>]) -> Result<(DMatrix<T>, Vec<DMatrix<T>>)> {
    let x1 = DVector::zeros(sys.state_dim());
    let p = LqtProblem::from_position_references(sys, refs, x1, T::one())?;
    Ok((p.ref_means, p.q_blocks))
}

fn start_state<T: Real>(sys: &LinearSystem<T>, start: &DVector<T>) -> Result<DVector<T>> {
    sys.state_from_position(start)
}

/// Generates one arm from its static frames only.
pub fn generate_independent<T: Real>(
    model: &Tpgmm<T>,
    task: &TaskInstance<T>,
    arm: usize,
    cfg: &GenerationConfig,
) -> Result<ArmGeneration<T>> {
    cfg.validate()?;
    task.check_arm(arm, model)?;
    let d = model.dim() - 1;
    let times = cfg.times::<T>();
    let sys = system::<T>(cfg, d)?;
    let refs = references(model, &task.frames[arm], None, cfg, &times)?;
    let p = LqtProblem::from_position_references(&sys, &refs, start_state(&sys, &task.start[arm])?, lit(cfg.r))?;
    let sol = solve_lqt(&p, &sys)?;
    Ok(ArmGeneration { trajectory: finish(cfg, &times, &sol.x, d)?, references: refs })
}

fn prepare_leader<T: Real>(leader: &DMatrix<T>, d_aug: usize, times: &[T]) -> Result<DMatrix<T>> {
    if leader.ncols() != d_aug {
        return Err(dim_err("leader trajectory dimension does not match the model"));
    }
    let mut l = resample_trajectory(leader, times.len())?;
    for (t, &time) in times.iter().enumerate() {
        l[(t, 0)] = time;
    }
    Ok(l)
}

/// Generates `arm` conditioned on a given partner trajectory
/// (`T × (1 + D)`, time first; resampled to the output horizon).
pub fn generate_follower<T: Real>(
    model: &Tpgmm<T>,
    leader_traj: &DMatrix<T>,
    task: &TaskInstance<T>,
    arm: usize,
    cfg: &GenerationConfig,
) -> Result<ArmGeneration<T>> {
    cfg.validate()?;
    if !model.has_relative_frame() {
        return Err(arg_err("leader-follower generation needs a model with a relative frame"));
    }
    task.check_arm(arm, model)?;
    let d = model.dim() - 1;
    let times = cfg.times::<T>();
    let sys = system::<T>(cfg, d)?;
    let leader = prepare_leader(leader_traj, model.dim(), &times)?;
    let track = build_relative_frames(&leader)?;
    let refs = references(model, &task.frames[arm], Some(&track), cfg, &times)?;
    let x1 = start_state(&sys, &task.start[arm])?;
    let r = lit::<T>(cfg.r);
    let sigma = lit::<T>(cfg.sigma);

    let x = if cfg.coordination_site.uses_control() && sigma > T::zero() {
        // Leader held fixed: the relative term becomes a second reference
        // for this arm at leader + ν_c.
        let (means, q) = pad_references(&sys, &refs)?;
        let rel = relative_reference(model, &times)?;
        let shifted: Vec<Gaussian<T>> = rel
            .iter()
            .enumerate()
            .map(|(t, g)| {
                let pos = DVector::from_iterator(d, leader.row(t).iter().skip(1).copied());
                Gaussian::new(g.mean() + pos, g.covariance().clone())
            })
            .collect::<Result<_>>()?;
        let (rel_means, rel_q) = pad_references(&sys, &shifted)?;
        solve_lqt_multi(&sys, &x1, r, &[(&means, &q, T::one()), (&rel_means, &rel_q, sigma)])?.x
    } else {
        let p = LqtProblem::from_position_references(&sys, &refs, x1, r)?;
        solve_lqt(&p, &sys)?.x
    };
    Ok(ArmGeneration { trajectory: finish(cfg, &times, &x, d)?, references: refs })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Largest position change of either arm against the previous iterate;
    /// zero for iteration 0.
    pub max_displacement: f64,
    pub endpoint_gap: f64,
}

#[derive(Clone, Debug)]
pub struct SynergyResult<T: Real> {
    pub arms: Vec<ArmGeneration<T>>,
    pub log: Vec<IterationRecord>,
    /// Iteration the returned pair comes from.
    pub returned_iteration: usize,
    /// Set when the displacement grew for two consecutive iterations.
    pub oscillation_warning: bool,
}

fn max_displacement<T: Real>(a: &[ArmGeneration<T>], b: &[ArmGeneration<T>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            let diff = &x.trajectory - &y.trajectory;
            (0..diff.nrows())
                .map(|t| diff.view((t, 1), (1, diff.ncols() - 1)).norm().to_f64().unwrap())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

/// Distance between the two arms' final positions.
pub fn endpoint_gap<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> f64 {
    let last = a.nrows() - 1;
    let d = a.ncols() - 1;
    (a.view((last, 1), (1, d)) - b.view((b.nrows() - 1, 1), (1, d))).norm().to_f64().unwrap()
}

/// Joint solve of both arms with the relative tracking term; `refs` are the
/// per-arm position references already reconstructed for this iteration.
fn coordinated_step<T: Real>(
    models: &[&Tpgmm<T>; 2],
    task: &TaskInstance<T>,
    refs: &[Vec<Gaussian<T>>; 2],
    cfg: &GenerationConfig,
    times: &[T],
) -> Result<Vec<DMatrix<T>>> {
    let d = models[0].dim() - 1;
    let sys = system::<T>(cfg, d)?;
    let r = lit::<T>(cfg.r);
    let arms = (0..2)
        .map(|h| LqtProblem::from_position_references(&sys, &refs[h], start_state(&sys, &task.start[h])?, r))
        .collect::<Result<Vec<_>>>()?;
    // Both models predict the relative state; arm 2's view is negated onto
    // the left-minus-right convention and the two are fused.
    let rel1 = relative_reference(models[0], times)?;
    let rel2 = relative_reference(models[1], times)?;
    let fused = rel1
        .iter()
        .zip(&rel2)
        .map(|(a, b)| product_of_gaussians(&[a.clone(), Gaussian::new(-b.mean(), b.covariance().clone())?]))
        .collect::<Result<Vec<_>>>()?;
    let (rel_means, rel_q_blocks) = pad_references(&sys, &fused)?;
    let problem = CoordinatedLqtProblem {
        arms,
        rel_means,
        rel_q_blocks,
        sigma: lit(cfg.sigma),
        coordination: CoordinationMatrix::bimanual(sys.control_dim() * (times.len() - 1))?,
    };
    Ok(solve_coordinated_lqt(&problem, &sys)?.x)
}

/// Generates both arms jointly. Iteration 0 is two independent generations;
/// each later iteration re-anchors every arm's relative frame on the
/// partner's previous iterate and regenerates.
pub fn generate_synergistic<T: Real>(
    models: [&Tpgmm<T>; 2],
    task: &TaskInstance<T>,
    cfg: &GenerationConfig,
) -> Result<SynergyResult<T>> {
    cfg.validate()?;
    for (h, m) in models.iter().enumerate() {
        if !m.has_relative_frame() {
            return Err(arg_err(format!("model for arm {h} has no relative frame")));
        }
        task.check_arm(h, m)?;
    }
    if models[0].dim() != models[1].dim() {
        return Err(dim_err("arm models differ in dimension"));
    }
    let d = models[0].dim() - 1;
    let times = cfg.times::<T>();
    let alpha = lit::<T>(cfg.synergy_relaxation);

    let mut current = vec![
        generate_independent(models[0], task, 0, cfg)?,
        generate_independent(models[1], task, 1, cfg)?,
    ];
    let mut log = vec![IterationRecord {
        iteration: 0,
        max_displacement: 0.0,
        endpoint_gap: endpoint_gap(&current[0].trajectory, &current[1].trajectory),
    }];
    let mut best = (f64::INFINITY, current.clone(), 0);
    let mut rising = 0;
    let mut oscillation_warning = false;

    for it in 1..cfg.synergy_iters {
        let tracks = [build_relative_frames(&current[1].trajectory)?, build_relative_frames(&current[0].trajectory)?];
        let refs = [
            references(models[0], &task.frames[0], Some(&tracks[0]), cfg, &times)?,
            references(models[1], &task.frames[1], Some(&tracks[1]), cfg, &times)?,
        ];
        let sigma_on = cfg.sigma > 0.0;
        let states: Vec<DMatrix<T>> = if cfg.coordination_site.uses_control() && sigma_on {
            coordinated_step(&models, task, &refs, cfg, &times)?
        } else {
            let sys = system::<T>(cfg, d)?;
            (0..2)
                .map(|h| {
                    let x1 = start_state(&sys, &task.start[h])?;
                    let p = LqtProblem::from_position_references(&sys, &refs[h], x1, lit(cfg.r))?;
                    Ok(solve_lqt(&p, &sys)?.x)
                })
                .collect::<Result<_>>()?
        };
        let mut next = Vec::with_capacity(2);
        for (h, (x, r)) in states.iter().zip(refs).enumerate() {
            let mut traj = finish(cfg, &times, x, d)?;
            if alpha < T::one() {
                let prev = &current[h].trajectory;
                let blended = prev * (T::one() - alpha) + &traj * alpha;
                traj.view_mut((0, 1), (times.len(), d)).copy_from(&blended.view((0, 1), (times.len(), d)));
            }
            next.push(ArmGeneration { trajectory: traj, references: r });
        }
        let disp = max_displacement(&next, &current);
        let prev_disp = log.last().map(|r| r.max_displacement).unwrap_or(0.0);
        log.push(IterationRecord {
            iteration: it,
            max_displacement: disp,
            endpoint_gap: endpoint_gap(&next[0].trajectory, &next[1].trajectory),
        });
        log::debug!("synergy iteration {it}: displacement {disp:.3e}");
        current = next;
        if disp < best.0 {
            best = (disp, current.clone(), it);
        }
        if disp < cfg.synergy_tol {
            break;
        }
        if it > 1 && disp > prev_disp {
            rising += 1;
            if rising >= 2 {
                log::warn!("synergistic iteration is oscillating; returning iteration {}", best.2);
                oscillation_warning = true;
                return Ok(SynergyResult { arms: best.1, log, returned_iteration: best.2, oscillation_warning });
            }
        } else {
            rising = 0;
        }
    }
    let returned_iteration = log.len() - 1;
    Ok(SynergyResult { arms: current, log, returned_iteration, oscillation_warning })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resampling_keeps_endpoints_and_is_linear() {
        let traj = DMatrix::<f64>::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 2.0, 2.0, 4.0]);
        let r = resample_trajectory(&traj, 5).unwrap();
        assert_eq!(r.row(0), traj.row(0));
        assert_eq!(r.row(4), traj.row(2));
        assert!((r[(1, 1)] - 1.0).abs() < 1e-15);
        assert!((r[(3, 0)] - 1.5).abs() < 1e-15);
        assert_eq!(resample_trajectory(&traj, 3).unwrap(), traj);
    }

    #[test]
    fn quaternions_renormalized() {
        let mut traj = DMatrix::<f64>::from_row_slice(1, 6, &[0.0, 9.0, 2.0, 0.0, 0.0, 0.0]);
        renormalize_quaternions(&mut traj, &[[1, 2, 3, 4]]).unwrap();
        assert_eq!(traj[(0, 1)], 9.0);
        assert!((traj[(0, 2)] - 1.0).abs() < 1e-15);
        assert!(renormalize_quaternions(&mut traj, &[[2, 3, 4, 5]]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GenerationConfig::default().validate().is_ok());
        let bad = [
            GenerationConfig { sigma: -1.0, ..Default::default() },
            GenerationConfig { synergy_iters: 0, ..Default::default() },
            GenerationConfig { t_out: 1, ..Default::default() },
            GenerationConfig { synergy_relaxation: 0.0, ..Default::default() },
            GenerationConfig { order: 3, ..Default::default() },
            GenerationConfig { r: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert_eq!("both".parse::<CoordinationSite>().unwrap(), CoordinationSite::Both);
        assert!("elbow".parse::<CoordinationSite>().is_err());
    }
}
