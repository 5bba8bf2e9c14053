//! File formats: the demonstration text format, trajectory CSV, model and
//! plot-series JSON.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so every
//! `f64` reads back bitwise-identical.
//!
//! A demo file looks like
//!
//! ```text
//! bicoord-demos 1
//! dt 0.1
//! arms left right
//! channels x y
//! demo
//! object meeting 5.2 6.1 1 0 0 0
//! arm left 3
//! 0 0
//! 0.5 0.4
//! 1 1
//! arm right 3
//! ...
//! ```
//!
//! Object lines carry a position followed by a unit quaternion `w x y z`.
//! Blank lines and `#` comments are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::em::EmConfig;
use crate::gaussian::Gaussian;
use crate::tpgmm::{DemoSet, Demonstration, ObjectPose, Tpgmm};

pub const DEMO_FORMAT: &str = "bicoord-demos";
pub const DEMO_VERSION: u32 = 1;
pub const MODEL_FORMAT: &str = "bicoord-model";
pub const MODEL_VERSION: u32 = 1;
/// Allowed deviation of an object quaternion's norm from one.
pub const QUATERNION_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("line {line}: unsupported format version '{found}' (expected {DEMO_FORMAT} {DEMO_VERSION})")]
    Version { line: usize, found: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: ragged block: {msg}")]
    Ragged { line: usize, msg: String },
    #[error("line {line}: non-finite value '{value}'")]
    NonFinite { line: usize, value: String },
    #[error("line {line}: demo {demo} object '{object}' quaternion has norm {norm}")]
    QuaternionNorm { line: usize, demo: usize, object: String, norm: f64 },
    #[error("invalid content: {0}")]
    Invalid(#[from] crate::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl IoError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            IoError::Fs { .. } => "io",
            IoError::Version { .. } => "version",
            IoError::Parse { .. } => "parse",
            IoError::Ragged { .. } => "ragged",
            IoError::NonFinite { .. } => "non_finite",
            IoError::QuaternionNorm { .. } => "quaternion_norm",
            IoError::Invalid(_) => "invalid",
            IoError::Json(_) => "json",
        }
    }
}

const KEYWORDS: [&str; 6] = ["dt", "arms", "channels", "demo", "object", "arm"];

pub type IoResult<T> = std::result::Result<T, IoError>;

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs { path: path.to_path_buf(), source }
}

fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>, sep: char) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(sep);
        }
        first = false;
        write!(out, "{v}").unwrap();
    }
    out.push('\n');
}

pub fn format_demos(demos: &DemoSet<f64>) -> IoResult<String> {
    demos.validate()?;
    let mut out = format!("{DEMO_FORMAT} {DEMO_VERSION}\ndt {}\narms {}\n", demos.dt, demos.arm_names.join(" "));
    if let Some(ch) = &demos.channel_names {
        writeln!(out, "channels {}", ch.join(" ")).unwrap();
    }
    for demo in &demos.demos {
        out.push_str("demo\n");
        for obj in &demo.objects {
            write!(out, "object {} ", obj.name).unwrap();
            push_row(&mut out, obj.position.iter().copied().chain(obj.quaternion), ' ');
        }
        for (name, block) in demos.arm_names.iter().zip(&demo.arms) {
            writeln!(out, "arm {name} {}", block.nrows()).unwrap();
            for r in block.row_iter() {
                push_row(&mut out, r.iter().copied(), ' ');
            }
        }
    }
    Ok(out)
}

fn parse_num(tok: &str, line: usize) -> IoResult<f64> {
    let v: f64 = tok.parse().map_err(|_| IoError::Parse { line, msg: format!("'{tok}' is not a number") })?;
    if !v.is_finite() {
        return Err(IoError::NonFinite { line, value: tok.into() });
    }
    Ok(v)
}

struct PendingDemo {
    arms: Vec<Option<DMatrix<f64>>>,
    objects: Vec<(usize, ObjectPose<f64>)>,
    line: usize,
}

pub fn parse_demos(text: &str) -> IoResult<DemoSet<f64>> {
    // Significant lines with 1-based numbers.
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap().trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();

    let (line, header) = lines.next().ok_or(IoError::Parse { line: 1, msg: "empty file".into() })?;
    if header != format!("{DEMO_FORMAT} {DEMO_VERSION}") {
        return Err(IoError::Version { line, found: header.into() });
    }

    let mut dt = None;
    let mut arm_names: Option<Vec<String>> = None;
    let mut channel_names = None;
    let mut demos: Vec<PendingDemo> = Vec::new();

    while let Some((line, l)) = lines.next() {
        let mut toks = l.split_whitespace();
        let key = toks.next().unwrap();
        let rest: Vec<&str> = toks.collect();
        match key {
            "dt" if demos.is_empty() => {
                let [v] = rest[..] else {
                    return Err(IoError::Parse { line, msg: "dt takes one value".into() });
                };
                dt = Some(parse_num(v, line)?);
            }
            "arms" if demos.is_empty() => {
                if rest.is_empty() {
                    return Err(IoError::Parse { line, msg: "no arm names".into() });
                }
                arm_names = Some(rest.iter().map(|s| s.to_string()).collect());
            }
            "channels" if demos.is_empty() => {
                channel_names = Some(rest.iter().map(|s| s.to_string()).collect::<Vec<_>>());
            }
            "demo" => {
                let n_arms = arm_names.as_ref().map(Vec::len).ok_or(IoError::Parse { line, msg: "demo before arms".into() })?;
                demos.push(PendingDemo { arms: vec![None; n_arms], objects: Vec::new(), line });
            }
            "object" => {
                let idx = demos.len().checked_sub(1).ok_or(IoError::Parse { line, msg: "object outside a demo".into() })?;
                let (name, vals) = rest.split_first().ok_or(IoError::Parse { line, msg: "object without a name".into() })?;
                if vals.len() < 5 {
                    return Err(IoError::Parse { line, msg: "object needs a position and a quaternion".into() });
                }
                let vals = vals.iter().map(|t| parse_num(t, line)).collect::<IoResult<Vec<_>>>()?;
                let (pos, q) = vals.split_at(vals.len() - 4);
                let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > QUATERNION_TOL {
                    return Err(IoError::QuaternionNorm {
                        line,
                        demo: idx,
                        object: name.to_string(),
                        norm,
                    });
                }
                demos[idx].objects.push((
                    line,
                    ObjectPose { name: name.to_string(), position: DVector::from_column_slice(pos), quaternion: [q[0], q[1], q[2], q[3]] },
                ));
            }
            "arm" => {
                let names = arm_names.as_ref().ok_or(IoError::Parse { line, msg: "arm block before arms".into() })?;
                let d_idx = demos.len().checked_sub(1).ok_or(IoError::Parse { line, msg: "arm block outside a demo".into() })?;
                let [name, count] = rest[..] else {
                    return Err(IoError::Parse { line, msg: "expected 'arm <name> <rows>'".into() });
                };
                let a = names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| IoError::Parse { line, msg: format!("unknown arm '{name}'") })?;
                if demos[d_idx].arms[a].is_some() {
                    return Err(IoError::Parse { line, msg: format!("arm '{name}' given twice") });
                }
                let rows: usize = count.parse().map_err(|_| IoError::Parse { line, msg: format!("bad row count '{count}'") })?;
                let mut data = Vec::new();
                let mut w = None;
                for r in 0..rows {
                    let (rl, row) = match lines.peek() {
                        Some(&(rl, row)) if !KEYWORDS.contains(&row.split_whitespace().next().unwrap()) => (rl, row),
                        Some(&(rl, _)) => {
                            return Err(IoError::Ragged { line: rl, msg: format!("arm '{name}' block ended after {r} of {rows} rows") })
                        }
                        None => return Err(IoError::Ragged { line, msg: format!("arm '{name}' block ended after {r} of {rows} rows") }),
                    };
                    lines.next();
                    let vals = row.split_whitespace().map(|t| parse_num(t, rl)).collect::<IoResult<Vec<_>>>()?;
                    match w {
                        None => w = Some(vals.len()),
                        Some(w) if w != vals.len() => {
                            return Err(IoError::Ragged { line: rl, msg: format!("{} values, expected {w}", vals.len()) })
                        }
                        _ => {}
                    }
                    data.extend(vals);
                }
                let w = w.unwrap_or(0);
                demos[d_idx].arms[a] = Some(DMatrix::from_row_slice(rows, w, &data));
            }
            _ => return Err(IoError::Parse { line, msg: format!("unexpected '{key}'") }),
        }
    }

    let dt = dt.ok_or(IoError::Parse { line: 1, msg: "missing dt".into() })?;
    let arm_names = arm_names.ok_or(IoError::Parse { line: 1, msg: "missing arms".into() })?;
    let mut out = Vec::with_capacity(demos.len());
    for (i, d) in demos.into_iter().enumerate() {
        let mut arms = Vec::with_capacity(d.arms.len());
        for (a, block) in d.arms.into_iter().enumerate() {
            arms.push(block.ok_or_else(|| IoError::Parse { line: d.line, msg: format!("demo {i} has no block for arm '{}'", arm_names[a]) })?);
        }
        let dim = arms[0].ncols();
        for (line, o) in &d.objects {
            if o.position.len() != dim {
                return Err(IoError::Ragged { line: *line, msg: format!("object position has {} values, arms have {dim}", o.position.len()) });
            }
        }
        out.push(Demonstration { arms, objects: d.objects.into_iter().map(|(_, o)| o).collect() });
    }
    let set = DemoSet { dt, arm_names, demos: out, channel_names };
    set.validate()?;
    Ok(set)
}

/// Writes `files` so that either all of them appear or none do: each is
/// first written to a temporary sibling, then all are renamed into place.
pub fn write_files_atomic(files: &[(PathBuf, Vec<u8>)]) -> IoResult<()> {
    let mut temps: Vec<PathBuf> = Vec::with_capacity(files.len());
    let cleanup = |temps: &[PathBuf]| {
        for t in temps {
            let _ = fs::remove_file(t);
        }
    };
    for (path, bytes) in files {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(format!(".tmp{}", std::process::id()));
        let tmp = path.with_file_name(name);
        if let Err(e) = fs::write(&tmp, bytes) {
            cleanup(&temps);
            return Err(fs_err(path)(e));
        }
        temps.push(tmp);
    }
    for (i, ((path, _), tmp)) in files.iter().zip(&temps).enumerate() {
        if let Err(e) = fs::rename(tmp, path) {
            // Earlier renames already landed; take them back out.
            for (p, _) in &files[..i] {
                let _ = fs::remove_file(p);
            }
            cleanup(&temps[i..]);
            return Err(fs_err(path)(e));
        }
    }
    Ok(())
}

pub fn save_demos(demos: &DemoSet<f64>, path: &Path) -> IoResult<()> {
    write_files_atomic(&[(path.to_path_buf(), format_demos(demos)?.into_bytes())])
}

pub fn load_demos(path: &Path) -> IoResult<DemoSet<f64>> {
    parse_demos(&fs::read_to_string(path).map_err(fs_err(path))?)
}

/// CSV with a header row; the first column is time.
pub fn format_trajectory(traj: &DMatrix<f64>, channel_names: &[String]) -> String {
    let mut out = String::from("t");
    for i in 1..traj.ncols() {
        out.push(',');
        match channel_names.get(i - 1) {
            Some(n) => out.push_str(n),
            None => write!(out, "x{}", i - 1).unwrap(),
        }
    }
    out.push('\n');
    for r in traj.row_iter() {
        push_row(&mut out, r.iter().copied(), ',');
    }
    out
}

pub fn parse_trajectory(text: &str) -> IoResult<DMatrix<f64>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(IoError::Parse { line: 1, msg: "empty trajectory".into() })?;
    let w = header.split(',').count();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, l) in lines {
        let vals = l.split(',').map(|t| parse_num(t.trim(), i + 1)).collect::<IoResult<Vec<_>>>()?;
        if vals.len() != w {
            return Err(IoError::Ragged { line: i + 1, msg: format!("{} values, expected {w}", vals.len()) });
        }
        data.extend(vals);
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, w, &data))
}

pub fn save_trajectory(traj: &DMatrix<f64>, channel_names: &[String], path: &Path) -> IoResult<()> {
    write_files_atomic(&[(path.to_path_buf(), format_trajectory(traj, channel_names).into_bytes())])
}

pub fn load_trajectory(path: &Path) -> IoResult<DMatrix<f64>> {
    parse_trajectory(&fs::read_to_string(path).map_err(fs_err(path))?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianRecord {
    pub mean: Vec<f64>,
    /// Row-major.
    pub covariance: Vec<Vec<f64>>,
}

impl GaussianRecord {
    pub fn from_gaussian(g: &Gaussian<f64>) -> Self {
        Self {
            mean: g.mean().iter().copied().collect(),
            covariance: g.covariance().row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    pub fn to_gaussian(&self) -> crate::Result<Gaussian<f64>> {
        let d = self.mean.len();
        if self.covariance.len() != d || self.covariance.iter().any(|r| r.len() != d) {
            return Err(crate::error::dim_err("covariance shape does not match mean"));
        }
        let flat: Vec<f64> = self.covariance.iter().flatten().copied().collect();
        Gaussian::new(DVector::from_vec(self.mean.clone()), DMatrix::from_row_slice(d, d, &flat))
    }
}

/// One arm's fitted model with the settings that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub arm: String,
    /// Human-readable description of each frame, in model order.
    pub frames: Vec<String>,
    pub has_relative_frame: bool,
    pub priors: Vec<f64>,
    /// `components[frame][k]`
    pub components: Vec<Vec<GaussianRecord>>,
    pub em: EmConfig,
    pub loglik_history: Vec<f64>,
}

impl ModelRecord {
    pub fn new(arm: &str, frames: Vec<String>, model: &Tpgmm<f64>, em: &EmConfig, loglik_history: Vec<f64>) -> Self {
        Self {
            arm: arm.into(),
            frames,
            has_relative_frame: model.has_relative_frame(),
            priors: model.priors().to_vec(),
            components: model
                .frame_components()
                .iter()
                .map(|f| f.iter().map(GaussianRecord::from_gaussian).collect())
                .collect(),
            em: em.clone(),
            loglik_history,
        }
    }

    pub fn to_model(&self) -> crate::Result<Tpgmm<f64>> {
        let comps = self
            .components
            .iter()
            .map(|f| f.iter().map(GaussianRecord::to_gaussian).collect())
            .collect::<crate::Result<Vec<_>>>()?;
        Tpgmm::new(self.priors.clone(), comps, self.has_relative_frame)
    }
}

/// The file written by `fit`: one model per arm, plus whatever the writer
/// wants to keep alongside (typically the run configuration).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub dt: f64,
    pub channel_names: Vec<String>,
    pub models: Vec<ModelRecord>,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl ModelFile {
    pub fn new(dt: f64, channel_names: Vec<String>, models: Vec<ModelRecord>, config: serde_json::Value) -> Self {
        Self { format: MODEL_FORMAT.into(), version: MODEL_VERSION, dt, channel_names, models, config }
    }

    pub fn from_json(text: &str) -> IoResult<Self> {
        let f: ModelFile = serde_json::from_str(text)?;
        if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
            return Err(IoError::Version { line: 1, found: format!("{} {}", f.format, f.version) });
        }
        Ok(f)
    }

    pub fn to_json(&self) -> IoResult<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn model(&self, arm: &str) -> crate::Result<Tpgmm<f64>> {
        self.models
            .iter()
            .find(|m| m.arm == arm)
            .ok_or_else(|| crate::error::arg_err(format!("no model for arm '{arm}'")))?
            .to_model()
    }
}

pub fn save_models(file: &ModelFile, path: &Path) -> IoResult<()> {
    write_files_atomic(&[(path.to_path_buf(), file.to_json()?.into_bytes())])
}

pub fn load_models(path: &Path) -> IoResult<ModelFile> {
    ModelFile::from_json(&fs::read_to_string(path).map_err(fs_err(path))?)
}

/// A named trajectory in plot form: one row per sample, time first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn from_matrix(name: &str, columns: Vec<String>, m: &DMatrix<f64>) -> Self {
        Self { name: name.into(), columns, rows: m.row_iter().map(|r| r.iter().copied().collect()).collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub arm: String,
    pub component: usize,
    pub prior: f64,
    /// Centre and covariance of the reconstructed (world-frame) component.
    pub gaussian: GaussianRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub series: Vec<Series>,
    pub components: Vec<ComponentSummary>,
    #[serde(default)]
    pub iterations: Vec<crate::pipeline::IterationRecord>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl PlotSeries {
    pub fn get(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> IoResult<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Euclidean distance between the two arms' positions at each sample, as a
/// `(t, gap)` series.
pub fn relative_gap_series(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Series {
    let rows = a
        .row_iter()
        .zip(b.row_iter())
        .map(|(ra, rb)| {
            let d = ra.columns(1, ra.ncols() - 1) - rb.columns(1, rb.ncols() - 1);
            vec![ra[0], d.norm()]
        })
        .collect();
    Series { name: "relative_gap".into(), columns: vec!["t".into(), "gap".into()], rows }
}
