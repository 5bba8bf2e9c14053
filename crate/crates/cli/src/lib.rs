//! Command implementations behind the `bicoord` binary.
//!
//! Every command is a plain function from arguments to a JSON summary, so the
//! same code paths can be exercised from tests without spawning processes.

use std::path::{Path, PathBuf};

use bicoord::io::{self, IoError, ModelFile, ModelRecord, PlotSeries, Series};
use bicoord::pipeline::{endpoint_gap, generate_follower, generate_independent, generate_synergistic, ArmGeneration};
use bicoord::setup::{fit_arms, MeetingScenario, ModelSpec, TaskSpec};
use bicoord::synth::{make_meeting_demos, MeetingTaskSpec};
use bicoord::tpgmm::reconstruct_gmm_with_frame;
use bicoord::{CoordinationSite, GenerationConfig, TaskInstance};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Default output directory when `--out-dir` is not given.
pub const OUT_DIR_ENV: &str = "BICOORD_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Core(#[from] bicoord::Error),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io(e) => e.code(),
            CliError::Core(_) => "numerical",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": { "code": self.code(), "message": self.to_string() } })
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Everything a run needs besides the demonstrations themselves.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub generation: GenerationConfig,
    /// Meeting scenario for `generate`; `--meeting` overrides its point.
    pub meeting: Option<MeetingScenario>,
    /// Explicit new situation; takes precedence over `meeting`.
    pub task: Option<TaskSpec>,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::Fs { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.em.validate()?;
        self.generation.validate()?;
        Ok(())
    }
}

/// Resolves the output directory: flag, then environment, then config, then
/// the working directory.
pub fn out_dir(flag: Option<&Path>, cfg: Option<&RunConfig>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.and_then(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Fs { path: dir.into(), source }.into())
}

pub fn synth(dims: usize, n_demos: usize, seed: u64, out: &Path) -> CliResult<Value> {
    let mut spec = match dims {
        2 => MeetingTaskSpec::planar(seed),
        3 => MeetingTaskSpec::spatial(seed),
        _ => return Err(CliError::Usage(format!("--dims must be 2 or 3, got {dims}"))),
    };
    spec.n_demos = n_demos;
    let demos = make_meeting_demos(&spec)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    io::save_demos(&demos, out)?;
    Ok(json!({ "demos": out, "n_demos": n_demos, "dims": dims, "seed": seed }))
}

pub fn fit(demos_path: &Path, cfg: &RunConfig, out: &Path) -> CliResult<Value> {
    let demos = io::load_demos(demos_path)?;
    // Unknown objects surface as configuration problems rather than as
    // numerical ones.
    for def in &cfg.model.frames {
        if let bicoord::FrameDef::Object { name, .. } = def {
            if let Some(i) = demos.demos.iter().position(|d| !d.objects.iter().any(|o| &o.name == name)) {
                return Err(CliError::Config(format!("frame refers to object '{name}', missing from demo {i}")));
            }
        }
    }
    let fits = fit_arms(&demos, &cfg.model)?;
    let labels = cfg.model.frame_labels();
    let records = demos
        .arm_names
        .iter()
        .zip(&fits)
        .map(|(arm, (m, hist))| ModelRecord::new(arm, labels.clone(), m, &cfg.model.em, hist.clone()))
        .collect();
    let d = demos.demos[0].arms[0].ncols();
    let channels = demos.channel_names.clone().unwrap_or_else(|| (0..d).map(|i| format!("x{i}")).collect());
    let config = serde_json::to_value(cfg).map_err(IoError::from)?;
    let file = ModelFile::new(demos.dt, channels, records, config);
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    io::save_models(&file, out)?;
    Ok(json!({
        "models": out,
        "arms": demos.arm_names,
        "em_iterations": fits.iter().map(|(_, h)| h.len()).collect::<Vec<_>>(),
        "final_loglik": fits.iter().map(|(_, h)| h.last().copied()).collect::<Vec<_>>(),
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Synergistic,
    LeaderFollower,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "synergistic" => Ok(Mode::Synergistic),
            "leader-follower" => Ok(Mode::LeaderFollower),
            _ => Err(format!("unknown mode '{s}' (synergistic, leader-follower)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GenerateArgs {
    pub models: PathBuf,
    /// Overrides the configuration stored with the models.
    pub config: Option<RunConfig>,
    pub mode: Mode,
    pub sigma: Option<f64>,
    pub site: Option<CoordinationSite>,
    pub no_coordination: bool,
    pub meeting: Option<Vec<f64>>,
    pub task: Option<TaskSpec>,
    /// Leader trajectory for leader-follower mode; generated independently
    /// when absent.
    pub leader: Option<PathBuf>,
    /// Name of the following arm (defaults to the second).
    pub follower: Option<String>,
    pub out_dir: PathBuf,
}

/// Trajectories and diagnostics of one `generate` run, before writing.
pub struct GenerateOutput {
    pub arm_names: Vec<String>,
    pub channel_names: Vec<String>,
    pub arms: Vec<DMatrix<f64>>,
    pub baseline: Vec<DMatrix<f64>>,
    pub plot: PlotSeries,
}

fn resolve_task(cfg: &RunConfig, meeting: Option<&[f64]>, task: Option<&TaskSpec>) -> CliResult<TaskInstance<f64>> {
    if let Some(t) = task.or(cfg.task.as_ref()).filter(|_| meeting.is_none()) {
        return Ok(t.instance()?);
    }
    let mut scenario = cfg
        .meeting
        .clone()
        .ok_or_else(|| CliError::Config("no task given: use --task, --meeting with a [meeting] section, or [task]".into()))?;
    if let Some(p) = meeting {
        if p.len() != scenario.meeting.len() {
            return Err(CliError::Usage(format!(
                "--meeting has {} coordinates, the scenario has {}",
                p.len(),
                scenario.meeting.len()
            )));
        }
        scenario.meeting = p.to_vec();
    }
    Ok(scenario.task(&cfg.model.frames)?.instance()?)
}

pub fn run_generate(args: &GenerateArgs) -> CliResult<GenerateOutput> {
    let file = io::load_models(&args.models)?;
    let cfg = match &args.config {
        Some(c) => c.clone(),
        None => serde_json::from_value(file.config.clone()).map_err(config_err)?,
    };
    let mut gen = cfg.generation.clone();
    if let Some(s) = args.sigma {
        gen.sigma = s;
    }
    if let Some(site) = args.site {
        gen.coordination_site = site;
    }
    if args.no_coordination {
        gen.synergy_iters = 1;
    }
    gen.validate()?;
    if (gen.dt - file.dt).abs() > 1e-12 * file.dt {
        log::warn!("generation dt {} differs from the demonstrations' {}", gen.dt, file.dt);
    }
    if file.models.len() != 2 {
        return Err(CliError::Config("generation needs models for two arms".into()));
    }
    let names: Vec<String> = file.models.iter().map(|m| m.arm.clone()).collect();
    let models = file.models.iter().map(ModelRecord::to_model).collect::<bicoord::Result<Vec<_>>>()?;
    let task = resolve_task(&cfg, args.meeting.as_deref(), args.task.as_ref())?;

    let baseline: Vec<ArmGeneration<f64>> =
        (0..2).map(|h| generate_independent(&models[h], &task, h, &gen)).collect::<bicoord::Result<_>>()?;
    let mut warnings = Vec::new();
    let mut iterations = Vec::new();
    let arms: Vec<DMatrix<f64>> = if args.no_coordination {
        baseline.iter().map(|g| g.trajectory.clone()).collect()
    } else {
        match args.mode {
            Mode::Synergistic => {
                let res = generate_synergistic([&models[0], &models[1]], &task, &gen)?;
                if res.oscillation_warning {
                    warnings.push(format!("synergistic iteration oscillated; returned iteration {}", res.returned_iteration));
                }
                iterations = res.log;
                res.arms.into_iter().map(|a| a.trajectory).collect()
            }
            Mode::LeaderFollower => {
                let f = match &args.follower {
                    Some(n) => names
                        .iter()
                        .position(|a| a == n)
                        .ok_or_else(|| CliError::Usage(format!("unknown follower arm '{n}'")))?,
                    None => 1,
                };
                let l = 1 - f;
                let leader = match &args.leader {
                    Some(p) => io::load_trajectory(p)?,
                    None => baseline[l].trajectory.clone(),
                };
                let follower = generate_follower(&models[f], &leader, &task, f, &gen)?.trajectory;
                let leader = bicoord::pipeline::resample_trajectory(&leader, gen.t_out)?;
                let mut out = vec![DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)];
                out[l] = leader;
                out[f] = follower;
                out
            }
        }
    };

    let mut columns = vec!["t".to_string()];
    columns.extend(file.channel_names.iter().cloned());
    let mut series = Vec::new();
    for (h, name) in names.iter().enumerate() {
        series.push(Series::from_matrix(name, columns.clone(), &arms[h]));
    }
    for (h, name) in names.iter().enumerate() {
        series.push(Series::from_matrix(&format!("{name}_baseline"), columns.clone(), &baseline[h].trajectory));
    }
    series.push(io::relative_gap_series(&arms[0], &arms[1]));
    let mut base_gap = io::relative_gap_series(&baseline[0].trajectory, &baseline[1].trajectory);
    base_gap.name = "relative_gap_baseline".into();
    series.push(base_gap);

    let mut components = Vec::new();
    for (h, name) in names.iter().enumerate() {
        let gmm = reconstruct_gmm_with_frame(&models[h], &task.frames[h], None, 0.0)?;
        for (k, (g, &p)) in gmm.components().iter().zip(gmm.priors()).enumerate() {
            components.push(io::ComponentSummary {
                arm: name.clone(),
                component: k,
                prior: p,
                gaussian: io::GaussianRecord::from_gaussian(g),
            });
        }
    }
    Ok(GenerateOutput {
        arm_names: names,
        channel_names: file.channel_names.clone(),
        arms,
        baseline: baseline.into_iter().map(|g| g.trajectory).collect(),
        plot: PlotSeries { series, components, iterations, warnings },
    })
}

pub fn generate(args: &GenerateArgs) -> CliResult<Value> {
    let out = run_generate(args)?;
    ensure_dir(&args.out_dir)?;
    let mut files = Vec::new();
    for (h, name) in out.arm_names.iter().enumerate() {
        files.push((args.out_dir.join(format!("{name}.csv")), io::format_trajectory(&out.arms[h], &out.channel_names).into_bytes()));
    }
    for (h, name) in out.arm_names.iter().enumerate() {
        files.push((
            args.out_dir.join(format!("{name}_baseline.csv")),
            io::format_trajectory(&out.baseline[h], &out.channel_names).into_bytes(),
        ));
    }
    files.push((args.out_dir.join("plot.json"), out.plot.to_json()?.into_bytes()));
    io::write_files_atomic(&files)?;
    Ok(json!({
        "files": files.iter().map(|(p, _)| p).collect::<Vec<_>>(),
        "endpoint_gap": endpoint_gap(&out.arms[0], &out.arms[1]),
        "baseline_endpoint_gap": endpoint_gap(&out.baseline[0], &out.baseline[1]),
        "iterations": out.plot.iterations,
        "warnings": out.plot.warnings,
    }))
}

/// Metrics of a trajectory pair, optionally against a reference pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub endpoint_gap: f64,
    /// RMS over time of the error in the relative position `x¹ − x²`
    /// against the reference pair's (or against zero without references).
    pub relative_error: f64,
    /// Per-arm RMS position error against the references.
    pub rmse: Option<Vec<f64>>,
}

fn positions(t: &DMatrix<f64>) -> DMatrix<f64> {
    t.columns(1, t.ncols() - 1).into_owned()
}

fn rms_rows(m: &DMatrix<f64>) -> f64 {
    (m.row_iter().map(|r| r.norm_squared()).sum::<f64>() / m.nrows() as f64).sqrt()
}

pub fn metrics(arms: [&DMatrix<f64>; 2], reference: Option<[&DMatrix<f64>; 2]>) -> CliResult<Metrics> {
    let check = |a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str| {
        if a.shape() != b.shape() || a.ncols() < 2 || a.nrows() == 0 {
            Err(CliError::Usage(format!("{what} trajectories differ in shape or are empty")))
        } else {
            Ok(())
        }
    };
    check(arms[0], arms[1], "arm")?;
    let rel = positions(arms[0]) - positions(arms[1]);
    let (relative_error, rmse) = match reference {
        None => (rms_rows(&rel), None),
        Some(r) => {
            check(r[0], r[1], "reference")?;
            check(arms[0], r[0], "arm and reference")?;
            let rel_ref = positions(r[0]) - positions(r[1]);
            let rmse = (0..2).map(|h| rms_rows(&(positions(arms[h]) - positions(r[h])))).collect();
            (rms_rows(&(rel - rel_ref)), Some(rmse))
        }
    };
    Ok(Metrics { endpoint_gap: endpoint_gap(arms[0], arms[1]), relative_error, rmse })
}

pub fn eval(trajs: [&Path; 2], reference: Option<[&Path; 2]>) -> CliResult<Value> {
    let a = [io::load_trajectory(trajs[0])?, io::load_trajectory(trajs[1])?];
    let r = match reference {
        Some(p) => Some([io::load_trajectory(p[0])?, io::load_trajectory(p[1])?]),
        None => None,
    };
    let m = metrics([&a[0], &a[1]], r.as_ref().map(|r| [&r[0], &r[1]]))?;
    Ok(serde_json::to_value(m).map_err(IoError::from)?)
}

/// Parses a comma-separated point such as `5,8,5`.
pub fn parse_point(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("'{t}' is not a finite number"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_arms_have_zero_metrics() {
        let a = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 0.1, 3.0, 4.0]);
        let m = metrics([&a, &a], Some([&a, &a])).unwrap();
        assert_eq!((m.endpoint_gap, m.relative_error), (0.0, 0.0));
        assert_eq!(m.rmse, Some(vec![0.0, 0.0]));
    }

    #[test]
    fn points_parse() {
        assert_eq!(parse_point("5, 8,5").unwrap(), vec![5.0, 8.0, 5.0]);
        assert!(parse_point("5,x").is_err());
        assert!(parse_point("inf").is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(RunConfig::from_toml("[model]\nframes = []\nbogus = 1\n").is_err());
        let c = RunConfig::from_toml("[generation]\nsigma = 2.0\ncoordination_site = \"control\"\n").unwrap();
        assert_eq!(c.generation.sigma, 2.0);
        assert_eq!(c.generation.coordination_site, CoordinationSite::Control);
    }
}
