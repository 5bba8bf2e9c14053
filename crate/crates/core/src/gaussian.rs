//! Multivariate Gaussians, mixtures, products of experts and Gaussian mixture
//! regression.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::linalg::{all_finite, all_finite_vec, chol_log_det, cholesky, symmetrize};
use crate::{lit, Real};

/// A multivariate normal distribution with a cached Cholesky factor of its
/// covariance.
#[derive(Clone, Debug)]
pub struct Gaussian<T: Real> {
    mean: DVector<T>,
    cov: DMatrix<T>,
    chol: Cholesky<T, Dyn>,
}

impl<T: Real> PartialEq for Gaussian<T> {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl<T: Real> Gaussian<T> {
    /// Builds a Gaussian; the covariance is symmetrized and must be
    /// positive-definite.
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(dim_err(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.is_empty() {
            return Err(arg_err("zero-dimensional Gaussian"));
        }
        if !all_finite_vec(&mean) {
            return Err(Error::NonFinite("Gaussian mean".into()));
        }
        if !all_finite(&cov) {
            return Err(Error::NonFinite("Gaussian covariance".into()));
        }
        let cov = symmetrize(&cov);
        let chol = cholesky(&cov, "Gaussian covariance")?;
        Ok(Self { mean, cov, chol })
    }

    /// Builds a Gaussian from a mean and a precision (inverse covariance).
    pub fn from_precision(mean: DVector<T>, precision: &DMatrix<T>) -> Result<Self> {
        let cov = crate::linalg::spd_inverse(&symmetrize(precision), "precision")?;
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<T> {
        &self.cov
    }

    pub fn precision(&self) -> DMatrix<T> {
        symmetrize(&self.chol.inverse())
    }

    pub fn log_det(&self) -> T {
        chol_log_det(&self.chol)
    }

    /// Solves `Σ x = v` with the cached factor.
    pub fn solve(&self, v: &DVector<T>) -> DVector<T> {
        self.chol.solve(v)
    }

    pub fn log_density(&self, x: &DVector<T>) -> Result<T> {
        gaussian_log_density(x, self)
    }

    /// Pushes the distribution through `x ↦ A x + b`.
    pub fn transform(&self, a: &DMatrix<T>, b: &DVector<T>) -> Result<Self> {
        if a.ncols() != self.dim() || a.nrows() != b.len() {
            return Err(dim_err("affine map does not match Gaussian dimension"));
        }
        Self::new(a * &self.mean + b, a * &self.cov * a.transpose())
    }

    /// Marginal over the listed dimensions, in the given order.
    pub fn marginal(&self, dims: &[usize]) -> Result<Self> {
        let (mean, cov) = sub_moments(&self.mean, &self.cov, dims)?;
        Self::new(mean, cov)
    }
}

fn sub_moments<T: Real>(
    mean: &DVector<T>,
    cov: &DMatrix<T>,
    dims: &[usize],
) -> Result<(DVector<T>, DMatrix<T>)> {
    if let Some(&bad) = dims.iter().find(|&&d| d >= mean.len()) {
        return Err(dim_err(format!("dimension index {bad} out of range {}", mean.len())));
    }
    let m = DVector::from_iterator(dims.len(), dims.iter().map(|&i| mean[i]));
    let c = DMatrix::from_fn(dims.len(), dims.len(), |i, j| cov[(dims[i], dims[j])]);
    Ok((m, c))
}

/// `log N(x | mean, cov)`.
pub fn gaussian_log_density<T: Real>(x: &DVector<T>, g: &Gaussian<T>) -> Result<T> {
    if x.len() != g.dim() {
        return Err(dim_err(format!("point has length {}, Gaussian has {}", x.len(), g.dim())));
    }
    let diff = x - &g.mean;
    let maha = diff.dot(&g.chol.solve(&diff));
    let d = lit::<T>(g.dim() as f64);
    let two_pi = lit::<T>(2.0) * T::pi();
    Ok(lit::<T>(-0.5) * (d * two_pi.ln() + g.log_det() + maha))
}

/// Product of Gaussian experts: precisions add, means are precision weighted.
pub fn product_of_gaussians<T: Real>(gs: &[Gaussian<T>]) -> Result<Gaussian<T>> {
    let weighted: Vec<(&Gaussian<T>, T)> = gs.iter().map(|g| (g, T::one())).collect();
    product_of_weighted_gaussians(&weighted)
}

/// Product of Gaussians where each factor is raised to a non-negative power,
/// which scales its precision. A zero power removes the factor.
pub fn product_of_weighted_gaussians<T: Real>(factors: &[(&Gaussian<T>, T)]) -> Result<Gaussian<T>> {
    let first = factors.first().ok_or_else(|| arg_err("product of an empty list of Gaussians"))?;
    let d = first.0.dim();
    let mut precision = DMatrix::<T>::zeros(d, d);
    let mut info = DVector::<T>::zeros(d);
    let mut active = Vec::new();
    for (g, w) in factors {
        if g.dim() != d {
            return Err(dim_err(format!("product of Gaussians with dimensions {d} and {}", g.dim())));
        }
        if !(*w >= T::zero()) || !w.is_finite() {
            return Err(arg_err("expert weight must be finite and non-negative"));
        }
        if *w == T::zero() {
            continue;
        }
        let lambda = g.precision() * *w;
        info += &lambda * g.mean();
        precision += lambda;
        active.push((*g, *w));
    }
    match active.as_slice() {
        [] => return Err(arg_err("all experts have zero weight")),
        // A lone expert is returned as is, so identity products are exact.
        [(g, w)] if *w == T::one() => return Ok((*g).clone()),
        _ => {}
    }
    let precision = symmetrize(&precision);
    let chol = cholesky(&precision, "product precision")?;
    let mean = chol.solve(&info);
    Gaussian::new(mean, chol.inverse())
}

/// A finite mixture of Gaussians with a shared dimensionality.
#[derive(Clone, Debug, PartialEq)]
pub struct Gmm<T: Real> {
    priors: Vec<T>,
    components: Vec<Gaussian<T>>,
}

pub(crate) fn simplex_tolerance<T: Real>() -> T {
    lit::<T>(1e-9).max(T::default_epsilon() * lit(100.0))
}

impl<T: Real> Gmm<T> {
    pub fn new(priors: Vec<T>, components: Vec<Gaussian<T>>) -> Result<Self> {
        if priors.is_empty() || priors.len() != components.len() {
            return Err(dim_err(format!(
                "{} priors for {} components",
                priors.len(),
                components.len()
            )));
        }
        if priors.iter().any(|p| !p.is_finite() || *p < T::zero()) {
            return Err(arg_err("priors must be finite and non-negative"));
        }
        let sum = priors.iter().fold(T::zero(), |a, &p| a + p);
        if (sum - T::one()).abs() > simplex_tolerance() {
            return Err(arg_err("priors do not sum to one"));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(dim_err("mixture components have different dimensions"));
        }
        Ok(Self { priors, components })
    }

    pub fn priors(&self) -> &[T] {
        &self.priors
    }

    pub fn components(&self) -> &[Gaussian<T>] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.priors.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn log_density(&self, x: &DVector<T>) -> Result<T> {
        let terms = self
            .priors
            .iter()
            .zip(&self.components)
            .map(|(p, g)| Ok(p.ln() + g.log_density(x)?))
            .collect::<Result<Vec<T>>>()?;
        Ok(log_sum_exp(&terms))
    }
}

pub(crate) fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().fold(T::min_value().unwrap(), |a, &b| a.max(b));
    if !max.is_finite() {
        return max;
    }
    let s = xs.iter().fold(T::zero(), |a, &x| a + (x - max).exp());
    max + s.ln()
}

/// Result of conditioning a mixture, with the mixing weights that produced it.
#[derive(Clone, Debug)]
pub struct GmrOutput<T: Real> {
    pub gaussian: Gaussian<T>,
    pub weights: Vec<T>,
    /// Set when every component density underflowed and uniform weights were used.
    pub uniform_fallback: bool,
}

/// Gaussian mixture regression: conditions `gmm` on `query` over `in_dims`
/// and returns the moment-matched Gaussian over `out_dims`.
pub fn gmr_condition<T: Real>(
    gmm: &Gmm<T>,
    in_dims: &[usize],
    out_dims: &[usize],
    query: &DVector<T>,
) -> Result<Gaussian<T>> {
    Ok(gmr_condition_detailed(gmm, in_dims, out_dims, query)?.gaussian)
}

pub fn gmr_condition_detailed<T: Real>(
    gmm: &Gmm<T>,
    in_dims: &[usize],
    out_dims: &[usize],
    query: &DVector<T>,
) -> Result<GmrOutput<T>> {
    if in_dims.is_empty() || out_dims.is_empty() {
        return Err(arg_err("input and output dimension sets must be non-empty"));
    }
    if in_dims.iter().any(|i| out_dims.contains(i)) {
        return Err(arg_err("input and output dimensions overlap"));
    }
    if query.len() != in_dims.len() {
        return Err(dim_err(format!(
            "query has length {} for {} input dimensions",
            query.len(),
            in_dims.len()
        )));
    }
    let d = gmm.dim();
    if in_dims.iter().chain(out_dims).any(|&i| i >= d) {
        return Err(dim_err("dimension index out of range"));
    }

    let k = gmm.n_components();
    let n_out = out_dims.len();
    let mut log_w = Vec::with_capacity(k);
    let mut cond_means = Vec::with_capacity(k);
    let mut cond_covs = Vec::with_capacity(k);
    for (prior, comp) in gmm.priors().iter().zip(gmm.components()) {
        let mu = comp.mean();
        let sigma = comp.covariance();
        let mu_in = DVector::from_iterator(in_dims.len(), in_dims.iter().map(|&i| mu[i]));
        let mu_out = DVector::from_iterator(n_out, out_dims.iter().map(|&i| mu[i]));
        let s_ii = DMatrix::from_fn(in_dims.len(), in_dims.len(), |a, b| sigma[(in_dims[a], in_dims[b])]);
        let s_oi = DMatrix::from_fn(n_out, in_dims.len(), |a, b| sigma[(out_dims[a], in_dims[b])]);
        let s_oo = DMatrix::from_fn(n_out, n_out, |a, b| sigma[(out_dims[a], out_dims[b])]);
        let marg = Gaussian::new(mu_in.clone(), s_ii)?;
        log_w.push(prior.ln() + marg.log_density(query)?);
        let gain_t = marg.chol.solve(&s_oi.transpose());
        cond_means.push(mu_out + gain_t.transpose() * (query - mu_in));
        cond_covs.push(symmetrize(&(s_oo - &s_oi * gain_t)));
    }

    let max = log_w.iter().fold(T::min_value().unwrap(), |a, &b| a.max(b));
    let underflow = lit::<T>(f64::MIN_POSITIVE.ln());
    let uniform_fallback = !max.is_finite() || max < underflow;
    let weights: Vec<T> = if uniform_fallback {
        vec![T::one() / lit(k as f64); k]
    } else {
        let lse = log_sum_exp(&log_w);
        log_w.iter().map(|&l| (l - lse).exp()).collect()
    };

    let mut mean = DVector::zeros(n_out);
    for (w, m) in weights.iter().zip(&cond_means) {
        mean += m * *w;
    }
    let mut cov = DMatrix::zeros(n_out, n_out);
    for ((w, m), c) in weights.iter().zip(&cond_means).zip(&cond_covs) {
        let dm = m - &mean;
        cov += (c + &dm * dm.transpose()) * *w;
    }
    Ok(GmrOutput { gaussian: Gaussian::new(mean, cov)?, weights, uniform_fallback })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn g(mean: &[f64], cov: &[f64]) -> Gaussian<f64> {
        let d = mean.len();
        Gaussian::new(DVector::from_row_slice(mean), DMatrix::from_row_slice(d, d, cov)).unwrap()
    }

    #[test]
    fn standard_normal_at_mode() {
        let n = g(&[0.0], &[1.0]);
        let v = gaussian_log_density(&DVector::from_vec(vec![0.0]), &n).unwrap();
        assert_relative_eq!(v, -0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
        assert_relative_eq!(v, -0.9189385332046727, epsilon = 1e-12);
    }

    #[test]
    fn density_at_mean_is_normalizer() {
        let n = g(&[1.0, -2.0, 0.5], &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 0.7]);
        let det = n.covariance().determinant();
        let expect = -0.5 * ((2.0 * std::f64::consts::PI).powi(3) * det).ln();
        assert_relative_eq!(n.log_density(&n.mean().clone()).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn density_matches_explicit_formula() {
        // Dense evaluation with an explicit determinant and inverse.
        let n = g(&[0.0, 0.0], &[2.0, 0.0, 0.0, 0.5]);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let cov = n.covariance().clone();
        let inv = cov.clone().try_inverse().unwrap();
        let q = (x.transpose() * inv * &x)[(0, 0)];
        let dense = ((-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powi(2) * cov.determinant()).sqrt()).ln();
        assert_relative_eq!(n.log_density(&x).unwrap(), dense, epsilon = 1e-12);
        // 1/(2π) · exp(-(1/2 + 2)/2)
        assert_relative_eq!(dense, -(2.0 * std::f64::consts::PI).ln() - 1.25, epsilon = 1e-12);
    }

    #[test]
    fn density_dimension_mismatch() {
        let n = g(&[0.0], &[1.0]);
        assert!(matches!(
            n.log_density(&DVector::from_vec(vec![0.0, 1.0])),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn constructor_rejects_bad_input() {
        let bad = Gaussian::new(DVector::from_vec(vec![f64::NAN]), DMatrix::identity(1, 1));
        assert!(matches!(bad, Err(Error::NonFinite(_))));
        let indef = Gaussian::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]));
        assert!(matches!(indef, Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn construction_symmetrizes() {
        let n = g(&[0.0, 0.0], &[1.0, 0.2, 0.1, 1.0]);
        assert_eq!(n.covariance()[(0, 1)], n.covariance()[(1, 0)]);
    }

    #[test]
    fn identical_factors_halve_covariance() {
        let a = g(&[1.0, 2.0], &[2.0, 0.4, 0.4, 1.0]);
        let p = product_of_gaussians(&[a.clone(), a.clone()]).unwrap();
        assert_relative_eq!(p.mean().clone(), a.mean().clone(), epsilon = 1e-12);
        assert_relative_eq!(p.covariance().clone(), a.covariance() * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn equal_precision_average() {
        let p = product_of_gaussians(&[g(&[0.0], &[1.0]), g(&[2.0], &[1.0])]).unwrap();
        assert_relative_eq!(p.mean()[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.covariance()[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn product_errors() {
        assert!(product_of_gaussians::<f64>(&[]).is_err());
        let r = product_of_gaussians(&[g(&[0.0], &[1.0]), g(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0])]);
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn zero_weight_factor_is_a_no_op() {
        let a = g(&[0.0, 1.0], &[1.0, 0.1, 0.1, 2.0]);
        let b = g(&[3.0, -1.0], &[0.5, 0.0, 0.0, 0.5]);
        let p = product_of_weighted_gaussians(&[(&a, 1.0), (&b, 0.0)]).unwrap();
        assert_eq!(p.mean(), a.mean());
        assert_relative_eq!(p.covariance().clone(), a.covariance().clone(), epsilon = 1e-14);
    }

    #[test]
    fn mixture_rejects_non_simplex_priors() {
        let c = vec![g(&[0.0], &[1.0]), g(&[1.0], &[1.0])];
        assert!(Gmm::new(vec![0.5, 0.6], c.clone()).is_err());
        assert!(Gmm::new(vec![0.5, 0.5], c).is_ok());
    }

    #[test]
    fn gmr_single_component_textbook() {
        let (s1, s2, rho) = (1.5, 0.7, 0.6);
        let c = rho * s1 * s2;
        let comp = g(&[1.0, -2.0], &[s1 * s1, c, c, s2 * s2]);
        let gmm = Gmm::new(vec![1.0], vec![comp]).unwrap();
        let q = 2.3;
        let out = gmr_condition(&gmm, &[0], &[1], &DVector::from_vec(vec![q])).unwrap();
        assert_relative_eq!(out.mean()[0], -2.0 + rho * (s2 / s1) * (q - 1.0), epsilon = 1e-12);
        assert_relative_eq!(out.covariance()[(0, 0)], s2 * s2 * (1.0 - rho * rho), epsilon = 1e-12);
    }

    #[test]
    fn gmr_dominant_component_limit() {
        let comps = vec![
            g(&[0.0, 5.0], &[0.01, 0.0, 0.0, 0.1]),
            g(&[10.0, -3.0], &[0.01, 0.0, 0.0, 0.1]),
        ];
        let gmm = Gmm::new(vec![0.5, 0.5], comps).unwrap();
        let out = gmr_condition_detailed(&gmm, &[0], &[1], &DVector::from_vec(vec![10.0])).unwrap();
        assert!((out.gaussian.mean()[0] + 3.0).abs() < 1e-6);
        let s: f64 = out.weights.iter().sum();
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        assert!(!out.uniform_fallback);
    }

    #[test]
    fn gmr_far_query_falls_back_to_uniform() {
        let comps = vec![
            g(&[0.0, 1.0], &[1e-4, 0.0, 0.0, 0.1]),
            g(&[1.0, 3.0], &[1e-4, 0.0, 0.0, 0.1]),
        ];
        let gmm = Gmm::new(vec![0.5, 0.5], comps).unwrap();
        let out = gmr_condition_detailed(&gmm, &[0], &[1], &DVector::from_vec(vec![1e3])).unwrap();
        assert!(out.uniform_fallback);
        assert_relative_eq!(out.gaussian.mean()[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn gmr_rejects_overlap() {
        let gmm = Gmm::new(vec![1.0], vec![g(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0])]).unwrap();
        assert!(gmr_condition(&gmm, &[0], &[0], &DVector::from_vec(vec![0.0])).is_err());
        assert!(gmr_condition(&gmm, &[0], &[1], &DVector::from_vec(vec![0.0, 1.0])).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let a = Gaussian::<f32>::new(DVector::from_vec(vec![0.0]), DMatrix::from_vec(1, 1, vec![1.0])).unwrap();
        let b = Gaussian::<f32>::new(DVector::from_vec(vec![2.0]), DMatrix::from_vec(1, 1, vec![1.0])).unwrap();
        let p = product_of_gaussians(&[a, b]).unwrap();
        assert!((p.mean()[0] - 1.0).abs() < 1e-6);
    }
}
