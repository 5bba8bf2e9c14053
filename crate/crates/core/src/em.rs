//! Expectation-maximization for Gaussian mixtures, seeded by k-means++.
//!
//! The same engine fits plain mixtures and task-parameterized ones: a fit runs
//! over one or more *views* of the same datapoints (one view per observation
//! frame), and component `k` explains point `i` with the product of its
//! per-view densities.
//!
//! The M-step adds `cov_regularization · I` to each covariance. That update is
//! the exact maximizer of the expected complete-data log-likelihood when each
//! component density carries the factor `exp(-λ/2 · tr Σ⁻¹)`, so the E-step
//! uses the same factor and the reported objective (average penalized
//! log-likelihood) never decreases. With `λ = 0` it is the plain average
//! log-likelihood.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::gaussian::{log_sum_exp, Gaussian, Gmm};
use crate::linalg::{all_finite, symmetrize};
use crate::{lit, Real};

/// Maximum number of Lloyd iterations used to refine the k-means++ seeds.
pub const KMEANS_MAX_ITERS: usize = 50;

/// Which columns k-means clusters on when seeding EM.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KmeansInit {
    /// Every column of every view, each standardized to unit variance.
    #[default]
    AllColumns,
    /// Only column 0 of the first view. For trajectories this is time, which
    /// seeds components that tile the motion in time.
    FirstColumn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub k: usize,
    pub max_iters: usize,
    pub loglik_tol: f64,
    pub cov_regularization: f64,
    pub seed: u64,
    pub init: KmeansInit,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { k: 6, max_iters: 200, loglik_tol: 1e-8, cov_regularization: 1e-6, seed: 0, init: KmeansInit::AllColumns }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(arg_err("EM needs at least one component"));
        }
        if self.max_iters < 1 {
            return Err(arg_err("EM needs at least one iteration"));
        }
        if !(self.cov_regularization >= 0.0) || !self.cov_regularization.is_finite() {
            return Err(arg_err("covariance regularization must be finite and non-negative"));
        }
        if !self.loglik_tol.is_finite() {
            return Err(arg_err("log-likelihood tolerance must be finite"));
        }
        Ok(())
    }
}

/// Result of a (multi-view) EM fit.
#[derive(Clone, Debug)]
pub struct EmFit<T: Real> {
    pub priors: Vec<T>,
    /// `components[view][k]`
    pub components: Vec<Vec<Gaussian<T>>>,
    /// Average objective per datapoint, one entry per E-step.
    pub loglik_history: Vec<T>,
    pub converged: bool,
}

/// Fits a `cfg.k`-component mixture to the rows of `data`.
pub fn em_fit<T: Real>(data: &DMatrix<T>, cfg: &EmConfig) -> Result<(Gmm<T>, Vec<T>)> {
    let fit = em_fit_views(std::slice::from_ref(data), cfg)?;
    let EmFit { priors, mut components, loglik_history, .. } = fit;
    let gmm = Gmm::new(priors, components.remove(0))?;
    Ok((gmm, loglik_history))
}

/// Joint EM over several views of the same `N` datapoints.
pub fn em_fit_views<T: Real>(views: &[DMatrix<T>], cfg: &EmConfig) -> Result<EmFit<T>> {
    cfg.validate()?;
    let first = views.first().ok_or_else(|| arg_err("EM needs at least one view"))?;
    let n = first.nrows();
    if views.iter().any(|v| v.nrows() != n) {
        return Err(dim_err("views have different numbers of datapoints"));
    }
    if views.iter().any(|v| v.ncols() == 0) {
        return Err(dim_err("view with zero dimensions"));
    }
    if views.iter().any(|v| !all_finite(v)) {
        return Err(Error::NonFinite("EM data".into()));
    }
    if n < cfg.k {
        return Err(arg_err(format!("{n} datapoints for {} components", cfg.k)));
    }

    let reg = lit::<T>(cfg.cov_regularization);
    let stacked = match cfg.init {
        KmeansInit::AllColumns => standardize_columns(&hstack(views)),
        KmeansInit::FirstColumn => views[0].columns(0, 1).into_owned(),
    };
    let labels = kmeans(&stacked, cfg.k, cfg.seed);

    let mut resp = DMatrix::<T>::zeros(n, cfg.k);
    for (i, &l) in labels.iter().enumerate() {
        resp[(i, l)] = T::one();
    }
    let mut state = MixtureState::init(views, cfg.k, reg);
    state.m_step(views, &resp, reg)?;

    let tol = lit::<T>(cfg.loglik_tol);
    let mut history = Vec::new();
    let mut converged = false;
    for iter in 0..=cfg.max_iters {
        let ll = state.e_step(views, &mut resp, reg)?;
        if let Some(&prev) = history.last() {
            if ll - prev < tol {
                history.push(ll);
                converged = true;
                break;
            }
        }
        history.push(ll);
        if iter == cfg.max_iters {
            break;
        }
        state.m_step(views, &resp, reg)?;
    }

    let MixtureState { priors, comps } = state;
    let components = comps
        .into_iter()
        .map(|view| view.into_iter().map(|c| c.gaussian).collect())
        .collect();
    Ok(EmFit { priors, components, loglik_history: history, converged })
}

/// Scales every column to unit variance so that no single channel (or frame)
/// dominates the k-means distances; constant columns are left centered.
fn standardize_columns<T: Real>(data: &DMatrix<T>) -> DMatrix<T> {
    let n = lit::<T>(data.nrows() as f64);
    let mut out = data.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n).sqrt();
        if sd > T::zero() {
            col /= sd;
        }
    }
    out
}

fn hstack<T: Real>(views: &[DMatrix<T>]) -> DMatrix<T> {
    let n = views[0].nrows();
    let d: usize = views.iter().map(|v| v.ncols()).sum();
    let mut out = DMatrix::zeros(n, d);
    let mut c = 0;
    for v in views {
        out.columns_mut(c, v.ncols()).copy_from(v);
        c += v.ncols();
    }
    out
}

struct Component<T: Real> {
    gaussian: Gaussian<T>,
    /// `-λ/2 · tr Σ⁻¹`
    penalty: T,
}

impl<T: Real> Component<T> {
    fn new(gaussian: Gaussian<T>, reg: T) -> Self {
        let penalty = if reg > T::zero() {
            lit::<T>(-0.5) * reg * gaussian.precision().trace()
        } else {
            T::zero()
        };
        Self { gaussian, penalty }
    }
}

struct MixtureState<T: Real> {
    priors: Vec<T>,
    comps: Vec<Vec<Component<T>>>,
}

impl<T: Real> MixtureState<T> {
    /// Placeholder parameters (data mean, identity covariance) that the first
    /// M-step overwrites; they only survive for components with no mass.
    fn init(views: &[DMatrix<T>], k: usize, reg: T) -> Self {
        let n = lit::<T>(views[0].nrows() as f64);
        let comps = views
            .iter()
            .map(|v| {
                let mean = v.row_sum().transpose() / n;
                let g = Gaussian::new(mean, DMatrix::identity(v.ncols(), v.ncols()))
                    .expect("identity covariance");
                (0..k).map(|_| Component::new(g.clone(), reg)).collect()
            })
            .collect();
        Self { priors: vec![T::one() / lit(k as f64); k], comps }
    }

    /// Fills `resp` with responsibilities and returns the average objective.
    fn e_step(&self, views: &[DMatrix<T>], resp: &mut DMatrix<T>, reg: T) -> Result<T> {
        let n = views[0].nrows();
        let k = self.priors.len();
        let mut total = T::zero();
        let mut row = vec![T::zero(); k];
        let mut points: Vec<DVector<T>> = views.iter().map(|v| DVector::zeros(v.ncols())).collect();
        for i in 0..n {
            for (p, v) in points.iter_mut().zip(views) {
                p.copy_from(&v.row(i).transpose());
            }
            for (c, slot) in row.iter_mut().enumerate() {
                let mut acc = self.priors[c].ln();
                for (j, p) in points.iter().enumerate() {
                    let comp = &self.comps[j][c];
                    acc += comp.gaussian.log_density(p)?;
                    if reg > T::zero() {
                        acc += comp.penalty;
                    }
                }
                *slot = acc;
            }
            let lse = log_sum_exp(&row);
            if !lse.is_finite() {
                return Err(Error::NonFinite("EM log-likelihood".into()));
            }
            total += lse;
            for (c, &l) in row.iter().enumerate() {
                resp[(i, c)] = (l - lse).exp();
            }
        }
        Ok(total / lit(n as f64))
    }

    fn m_step(&mut self, views: &[DMatrix<T>], resp: &DMatrix<T>, reg: T) -> Result<()> {
        let n = views[0].nrows();
        let k = self.priors.len();
        let mass: Vec<T> = (0..k).map(|c| resp.column(c).sum()).collect();
        let total = mass.iter().fold(T::zero(), |a, &m| a + m);
        for c in 0..k {
            self.priors[c] = mass[c] / total;
        }
        // Components without mass keep their previous parameters; with a zero
        // prior they do not affect the objective.
        let tiny = T::default_epsilon() * lit(1e-30);
        for (j, v) in views.iter().enumerate() {
            let d = v.ncols();
            for c in 0..k {
                if mass[c] <= tiny {
                    continue;
                }
                let w = resp.column(c);
                let mut mean = DVector::<T>::zeros(d);
                for i in 0..n {
                    mean.axpy(w[i], &v.row(i).transpose(), T::one());
                }
                mean /= mass[c];
                let mut scatter = DMatrix::<T>::zeros(d, d);
                for i in 0..n {
                    if w[i] == T::zero() {
                        continue;
                    }
                    let diff = v.row(i).transpose() - &mean;
                    scatter.ger(w[i], &diff, &diff, T::one());
                }
                let cov = symmetrize(&(scatter / mass[c])) + DMatrix::identity(d, d) * reg;
                let g = floored_gaussian(mean, cov)?;
                self.comps[j][c] = Component::new(g, reg);
            }
        }
        Ok(())
    }
}

/// Builds a Gaussian, adding diagonal jitter only if the regularized
/// covariance is still numerically singular (e.g. `cov_regularization = 0`
/// with a single-point component).
fn floored_gaussian<T: Real>(mean: DVector<T>, cov: DMatrix<T>) -> Result<Gaussian<T>> {
    match Gaussian::new(mean.clone(), cov.clone()) {
        Ok(g) => Ok(g),
        Err(Error::NotPositiveDefinite(_)) => {
            let d = cov.nrows();
            let scale = (cov.trace() / lit(d as f64)).abs().max(T::one());
            let mut jitter = scale * T::default_epsilon() * lit(1e3);
            for _ in 0..40 {
                let attempt = &cov + DMatrix::identity(d, d) * jitter;
                if let Ok(g) = Gaussian::new(mean.clone(), attempt) {
                    return Ok(g);
                }
                jitter *= lit(10.0);
            }
            Err(Error::NotPositiveDefinite("EM covariance could not be floored".into()))
        }
        Err(e) => Err(e),
    }
}

fn sq_dist<T: Real>(data: &DMatrix<T>, i: usize, c: &DVector<T>) -> T {
    data.row(i).iter().zip(c.iter()).fold(T::zero(), |a, (&x, &y)| a + (x - y) * (x - y))
}

/// k-means++ seeding followed by Lloyd iterations. Returns one label per row;
/// ties go to the lowest centroid index.
pub fn kmeans<T: Real>(data: &DMatrix<T>, k: usize, seed: u64) -> Vec<usize> {
    let n = data.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<DVector<T>> = Vec::with_capacity(k);
    centroids.push(data.row(rng.gen_range(0..n)).transpose());
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(data, i, &centroids[0]).to_f64().unwrap_or(0.0))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = data.row(pick).transpose();
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(data, i, &c).to_f64().unwrap_or(0.0));
        }
        centroids.push(c);
    }

    let mut labels = vec![0usize; n];
    for iter in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_d = sq_dist(data, i, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = sq_dist(data, i, centroid);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            if *label != best || iter == 0 {
                changed |= *label != best;
                *label = best;
            }
        }
        if iter > 0 && !changed {
            break;
        }
        let mut sums = vec![DVector::<T>::zeros(data.ncols()); k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums[l] += data.row(i).transpose();
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = &sums[c] / lit::<T>(counts[c] as f64);
            }
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller
        let u1: f64 = rng.gen::<f64>().max(1e-300);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn two_clusters() -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        DMatrix::from_fn(200, 1, |i, _| if i < 100 { 0.0 } else { 10.0 } + 0.1 * normal(&mut rng))
    }

    fn is_monotone(h: &[f64]) -> bool {
        h.windows(2).all(|w| w[1] >= w[0] - 1e-8)
    }

    #[test]
    fn single_point_cluster_hits_regularization_floor() {
        let data = DMatrix::from_fn(100, 2, |_, j| [1.5, -0.25][j]);
        let cfg = EmConfig { k: 1, cov_regularization: 1e-6, ..EmConfig::default() };
        let (gmm, hist) = em_fit(&data, &cfg).unwrap();
        let c = &gmm.components()[0];
        assert_eq!(c.mean().as_slice(), &[1.5, -0.25]);
        assert!((c.covariance() - DMatrix::identity(2, 2) * 1e-6).abs().max() < 1e-18);
        assert!(is_monotone(&hist));
    }

    #[test]
    fn separated_clusters_are_recovered() {
        let data = two_clusters();
        // Sample statistics of the generated clusters are the oracle.
        let m0 = data.rows(0, 100).mean();
        let m1 = data.rows(100, 100).mean();
        let cfg = EmConfig { k: 2, seed: 3, ..EmConfig::default() };
        let (gmm, hist) = em_fit(&data, &cfg).unwrap();
        let mut means: Vec<(f64, f64)> =
            gmm.components().iter().zip(gmm.priors()).map(|(c, &p)| (c.mean()[0], p)).collect();
        means.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        assert!((means[0].0 - m0).abs() < 1e-6 && (means[0].0 - 0.0).abs() < 0.1);
        assert!((means[1].0 - m1).abs() < 1e-6 && (means[1].0 - 10.0).abs() < 0.1);
        assert!((means[0].1 - 0.5).abs() < 0.05 && (means[1].1 - 0.5).abs() < 0.05);
        assert!(is_monotone(&hist));
    }

    #[test]
    fn fits_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = DMatrix::from_fn(150, 3, |_, _| normal(&mut rng));
        let cfg = EmConfig { k: 4, seed: 9, ..EmConfig::default() };
        let (a, ha) = em_fit(&data, &cfg).unwrap();
        let (b, hb) = em_fit(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!(is_monotone(&ha));
    }

    #[test]
    fn too_few_points_is_an_error() {
        let data = DMatrix::from_fn(2, 1, |i, _| i as f64);
        let cfg = EmConfig { k: 3, ..EmConfig::default() };
        assert!(em_fit(&data, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EmConfig { k: 0, ..EmConfig::default() }.validate().is_err());
        assert!(EmConfig { max_iters: 0, ..EmConfig::default() }.validate().is_err());
        assert!(EmConfig { cov_regularization: -1.0, ..EmConfig::default() }.validate().is_err());
    }

    #[test]
    fn zero_regularization_degenerate_data_does_not_crash() {
        let data = DMatrix::from_fn(10, 2, |i, j| if i < 9 { 0.0 } else { 1.0 + j as f64 });
        let cfg = EmConfig { k: 2, cov_regularization: 0.0, ..EmConfig::default() };
        assert!(em_fit(&data, &cfg).is_ok());
    }

    #[test]
    fn kmeans_ties_go_to_lowest_index() {
        // Duplicate points guarantee identical centroids after seeding.
        let data = DMatrix::from_fn(4, 1, |_, _| 1.0);
        let labels = kmeans(&data, 2, 0);
        assert!(labels.iter().all(|&l| l == 0));
    }
}
