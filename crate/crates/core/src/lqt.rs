//! Batch (open-loop) linear quadratic tracking.
//!
//! States are stacked time-major: `x = [x_1; …; x_T]` with `x = S_x x_1 + S_u u`
//! and `u = [u_1; …; u_{T-1}]`. The coordinated problem stacks the commands of
//! all arms into `U` and adds a tracking term on the signed combination
//! `C U` (left minus right for two arms).

use nalgebra::{DMatrix, DVector};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::gaussian::Gaussian;
use crate::linalg::{all_finite, block_diag, block_diag_mul, symmetrize};
use crate::{lit, Real};

/// Discrete linear dynamics `x_{t+1} = A x_t + B u_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem<T: Real> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    dt: T,
    order: usize,
    position_dim: usize,
}

impl<T: Real> LinearSystem<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, dt: T, order: usize) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(dim_err("system matrices have inconsistent shapes"));
        }
        if !(dt > T::zero()) {
            return Err(arg_err("dt must be positive"));
        }
        if !(1..=2).contains(&order) || a.nrows() % order != 0 {
            return Err(arg_err("order must be 1 or 2 and divide the state dimension"));
        }
        if !all_finite(&a) || !all_finite(&b) {
            return Err(Error::NonFinite("system matrices".into()));
        }
        let position_dim = a.nrows() / order;
        Ok(Self { a, b, dt, order, position_dim })
    }

    /// Single (order 1) or double (order 2) integrator over `d` position
    /// channels, discretized exactly for piecewise-constant input.
    pub fn integrator(d: usize, dt: T, order: usize) -> Result<Self> {
        match order {
            1 => Self::new(DMatrix::identity(d, d), DMatrix::identity(d, d) * dt, dt, 1),
            2 => {
                let mut a = DMatrix::identity(2 * d, 2 * d);
                let mut b = DMatrix::zeros(2 * d, d);
                for i in 0..d {
                    a[(i, d + i)] = dt;
                    b[(i, i)] = dt * dt * lit(0.5);
                    b[(d + i, i)] = dt;
                }
                Self::new(a, b, dt, 2)
            }
            _ => Err(arg_err("order must be 1 or 2")),
        }
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Number of leading state channels that are positions.
    pub fn position_dim(&self) -> usize {
        self.position_dim
    }

    /// State with the given position and zero higher-order terms.
    pub fn state_from_position(&self, pos: &DVector<T>) -> Result<DVector<T>> {
        if pos.len() != self.position_dim {
            return Err(dim_err("position length does not match the system"));
        }
        let mut x = DVector::zeros(self.state_dim());
        x.rows_mut(0, pos.len()).copy_from(pos);
        Ok(x)
    }
}

/// Returns `(S_x, S_u)` for horizon `t`.
pub fn build_transfer_matrices<T: Real>(sys: &LinearSystem<T>, t: usize) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if t < 2 {
        return Err(arg_err("horizon must be at least 2"));
    }
    let ds = sys.state_dim();
    let dc = sys.control_dim();
    let mut powers = Vec::with_capacity(t);
    powers.push(DMatrix::<T>::identity(ds, ds));
    for i in 1..t {
        let next = &sys.a * &powers[i - 1];
        powers.push(next);
    }
    let mut sx = DMatrix::zeros(ds * t, ds);
    for (i, p) in powers.iter().enumerate() {
        sx.rows_mut(i * ds, ds).copy_from(p);
    }
    let blocks: Vec<DMatrix<T>> = powers.iter().map(|p| p * &sys.b).collect();
    let mut su = DMatrix::zeros(ds * t, dc * (t - 1));
    for row in 1..t {
        for col in 0..row {
            su.view_mut((row * ds, col * dc), (ds, dc)).copy_from(&blocks[row - 1 - col]);
        }
    }
    Ok((sx, su))
}

/// Tracking problem for one arm. `q_blocks[t]` is the precision on state `t`
/// and `R = r · I`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqtProblem<T: Real> {
    pub ref_means: DMatrix<T>,
    pub q_blocks: Vec<DMatrix<T>>,
    pub r: T,
    pub x1: DVector<T>,
}

impl<T: Real> LqtProblem<T> {
    /// Builds a problem from per-timestep position references: the mean goes
    /// into the position slots and the precision into the position block;
    /// higher-order slots get zero reference and zero precision.
    pub fn from_position_references(
        sys: &LinearSystem<T>,
        refs: &[Gaussian<T>],
        x1: DVector<T>,
        r: T,
    ) -> Result<Self> {
        let ds = sys.state_dim();
        let dp = sys.position_dim();
        let mut ref_means = DMatrix::zeros(refs.len(), ds);
        let mut q_blocks = Vec::with_capacity(refs.len());
        for (t, g) in refs.iter().enumerate() {
            if g.dim() != dp {
                return Err(dim_err("reference dimension does not match system positions"));
            }
            ref_means.view_mut((t, 0), (1, dp)).copy_from(&g.mean().transpose());
            let mut q = DMatrix::zeros(ds, ds);
            q.view_mut((0, 0), (dp, dp)).copy_from(&g.precision());
            q_blocks.push(q);
        }
        let p = Self { ref_means, q_blocks, r, x1 };
        p.validate(sys)?;
        Ok(p)
    }

    pub fn horizon(&self) -> usize {
        self.ref_means.nrows()
    }

    pub fn validate(&self, sys: &LinearSystem<T>) -> Result<()> {
        let ds = sys.state_dim();
        if self.ref_means.ncols() != ds || self.x1.len() != ds {
            return Err(dim_err("problem does not match the system state dimension"));
        }
        if self.q_blocks.len() != self.horizon() {
            return Err(dim_err("one precision block per timestep is required"));
        }
        if self.horizon() < 2 {
            return Err(arg_err("horizon must be at least 2"));
        }
        if !(self.r > T::zero()) || !self.r.is_finite() {
            return Err(arg_err("control cost r must be positive"));
        }
        let tol = lit::<T>(1e-9);
        for q in &self.q_blocks {
            if q.nrows() != ds || q.ncols() != ds {
                return Err(dim_err("precision block has the wrong size"));
            }
            let scale = q.iter().fold(T::one(), |m, v| m.max(v.abs()));
            if (q - q.transpose()).iter().any(|v| v.abs() > tol * scale) {
                return Err(arg_err("precision block is not symmetric"));
            }
        }
        if !all_finite(&self.ref_means) || self.x1.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LQT problem".into()));
        }
        Ok(())
    }

    /// Dense block-diagonal `Q`.
    pub fn q_dense(&self) -> DMatrix<T> {
        block_diag(&self.q_blocks)
    }

    /// `Q ν̂`, stacked time-major.
    fn weighted_reference(&self) -> DVector<T> {
        let ds = self.ref_means.ncols();
        let mut out = DVector::zeros(ds * self.horizon());
        for (t, q) in self.q_blocks.iter().enumerate() {
            let nu = self.ref_means.row(t).transpose();
            out.rows_mut(t * ds, ds).copy_from(&(q * nu));
        }
        out
    }

    /// `(ν̂ − x)ᵀ Q (ν̂ − x) + r uᵀu` for a given command sequence.
    pub fn cost(&self, sys: &LinearSystem<T>, u: &DVector<T>) -> Result<T> {
        let x = rollout_stacked(sys, &self.x1, u, self.horizon())?;
        let e = flatten_rows(&self.ref_means) - x;
        let qe = block_diag_mul(&self.q_blocks, &DMatrix::from_column_slice(e.len(), 1, e.as_slice()));
        Ok(e.dot(&qe.column(0)) + self.r * u.dot(u))
    }
}

/// Solution of a single-arm tracking problem.
#[derive(Clone, Debug)]
pub struct LqtSolution<T: Real> {
    pub u: DVector<T>,
    /// `(S_uᵀ Q S_u + R)⁻¹`
    pub sigma_u: DMatrix<T>,
    /// `T × D_s` states.
    pub x: DMatrix<T>,
}

pub(crate) fn flatten_rows<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    DVector::from_iterator(m.len(), m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()))
}

pub(crate) fn unflatten_rows<T: Real>(v: &DVector<T>, cols: usize) -> DMatrix<T> {
    DMatrix::from_row_slice(v.len() / cols, cols, v.as_slice())
}

/// States `S_x x1 + S_u u`, stacked time-major.
pub fn rollout_stacked<T: Real>(sys: &LinearSystem<T>, x1: &DVector<T>, u: &DVector<T>, t: usize) -> Result<DVector<T>> {
    let (sx, su) = build_transfer_matrices(sys, t)?;
    if u.len() != su.ncols() || x1.len() != sys.state_dim() {
        return Err(dim_err("command or initial state length does not match the system"));
    }
    Ok(sx * x1 + su * u)
}

/// Solves `min (ν̂ − x)ᵀQ(ν̂ − x) + uᵀRu`.
pub fn solve_lqt<T: Real>(p: &LqtProblem<T>, sys: &LinearSystem<T>) -> Result<LqtSolution<T>> {
    p.validate(sys)?;
    let t = p.horizon();
    let (sx, su) = build_transfer_matrices(sys, t)?;
    let q_su = block_diag_mul(&p.q_blocks, &su);
    let n = su.ncols();
    let hess = symmetrize(&(su.transpose() * &q_su + DMatrix::identity(n, n) * p.r));
    let free = &sx * &p.x1;
    let q_free = block_diag_mul(&p.q_blocks, &DMatrix::from_column_slice(free.len(), 1, free.as_slice()));
    let rhs = su.transpose() * (p.weighted_reference() - q_free.column(0));
    let chol = hess.cholesky().ok_or_else(|| Error::Singular("LQT curvature".into()))?;
    let u = chol.solve(&rhs);
    let sigma_u = symmetrize(&chol.inverse());
    let x = unflatten_rows(&(free + &su * &u), sys.state_dim());
    Ok(LqtSolution { u, sigma_u, x })
}

/// Signed block selector over stacked commands. For two arms the signs are
/// `(+1, −1)`, so `C U = u¹ − u²`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinationMatrix {
    signs: Vec<i8>,
    block: usize,
}

impl CoordinationMatrix {
    pub fn new(signs: Vec<i8>, block: usize) -> Result<Self> {
        if signs.is_empty() || signs.iter().any(|s| !matches!(s, -1 | 0 | 1)) {
            return Err(arg_err("coordination signs must be -1, 0 or +1"));
        }
        if block == 0 {
            return Err(arg_err("coordination block length must be positive"));
        }
        Ok(Self { signs, block })
    }

    /// Left-minus-right coupling for two arms with `block` commands each.
    pub fn bimanual(block: usize) -> Result<Self> {
        Self::new(vec![1, -1], block)
    }

    pub fn n_arms(&self) -> usize {
        self.signs.len()
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    /// `[C^h]`: selects arm `h`'s block from the stacked vector.
    pub fn selector<T: Real>(&self, h: usize) -> DMatrix<T> {
        let n = self.block;
        let mut m = DMatrix::zeros(n, n * self.n_arms());
        for i in 0..n {
            m[(i, h * n + i)] = T::one();
        }
        m
    }

    /// `C = Σ_h s_h [C^h]`.
    pub fn matrix<T: Real>(&self) -> DMatrix<T> {
        let n = self.block;
        let mut m = DMatrix::zeros(n, n * self.n_arms());
        for (h, &s) in self.signs.iter().enumerate() {
            for i in 0..n {
                m[(i, h * n + i)] = lit(s as f64);
            }
        }
        m
    }
}

/// Per-arm commands `u^h = [C^h] U`.
pub fn extract_arm_commands<T: Real>(u_stacked: &DVector<T>, c: &CoordinationMatrix) -> Result<Vec<DVector<T>>> {
    let n = c.block();
    if u_stacked.len() != n * c.n_arms() {
        return Err(dim_err(format!(
            "stacked command has length {}, expected {}",
            u_stacked.len(),
            n * c.n_arms()
        )));
    }
    Ok((0..c.n_arms()).map(|h| u_stacked.rows(h * n, n).into_owned()).collect())
}

/// Two-arm tracking with a weighted term on the relative state `x¹ − x²`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinatedLqtProblem<T: Real> {
    pub arms: Vec<LqtProblem<T>>,
    /// Relative reference, `T × D_s`.
    pub rel_means: DMatrix<T>,
    pub rel_q_blocks: Vec<DMatrix<T>>,
    pub sigma: T,
    pub coordination: CoordinationMatrix,
}

impl<T: Real> CoordinatedLqtProblem<T> {
    pub fn validate(&self, sys: &LinearSystem<T>) -> Result<()> {
        if self.arms.len() != self.coordination.n_arms() {
            return Err(dim_err("one problem per coordinated arm is required"));
        }
        for arm in &self.arms {
            arm.validate(sys)?;
        }
        let t = self.arms[0].horizon();
        if self.arms.iter().any(|a| a.horizon() != t) {
            return Err(dim_err("arms have different horizons"));
        }
        if self.coordination.block() != sys.control_dim() * (t - 1) {
            return Err(dim_err("coordination block does not match the command length"));
        }
        if self.rel_means.nrows() != t || self.rel_means.ncols() != sys.state_dim() || self.rel_q_blocks.len() != t {
            return Err(dim_err("relative reference does not match the horizon"));
        }
        if !(self.sigma >= T::zero()) || !self.sigma.is_finite() {
            return Err(arg_err("coordination weight sigma must be finite and non-negative"));
        }
        Ok(())
    }

    fn relative_initial(&self) -> DVector<T> {
        let mut x = DVector::zeros(self.arms[0].x1.len());
        for (arm, &s) in self.arms.iter().zip(self.coordination.signs()) {
            x += &arm.x1 * lit::<T>(s as f64);
        }
        x
    }

    /// Composition cost for a stacked command vector.
    pub fn cost(&self, sys: &LinearSystem<T>, u_stacked: &DVector<T>) -> Result<T> {
        let us = extract_arm_commands(u_stacked, &self.coordination)?;
        let mut total = T::zero();
        for (arm, u) in self.arms.iter().zip(&us) {
            total += arm.cost(sys, u)?;
        }
        let t = self.arms[0].horizon();
        let cu = self.coordination.matrix::<T>() * u_stacked;
        let xc = rollout_stacked(sys, &self.relative_initial(), &cu, t)?;
        let e = flatten_rows(&self.rel_means) - xc;
        let qe = block_diag_mul(&self.rel_q_blocks, &DMatrix::from_column_slice(e.len(), 1, e.as_slice()));
        Ok(total + self.sigma * e.dot(&qe.column(0)))
    }

    /// Relative-tracking term `(ν_c − x_c)ᵀ Q_c (ν_c − x_c)` without `σ`.
    pub fn relative_tracking_cost(&self, sys: &LinearSystem<T>, u_stacked: &DVector<T>) -> Result<T> {
        let t = self.arms[0].horizon();
        let cu = self.coordination.matrix::<T>() * u_stacked;
        let xc = rollout_stacked(sys, &self.relative_initial(), &cu, t)?;
        let e = flatten_rows(&self.rel_means) - xc;
        let qe = block_diag_mul(&self.rel_q_blocks, &DMatrix::from_column_slice(e.len(), 1, e.as_slice()));
        Ok(e.dot(&qe.column(0)))
    }
}

#[derive(Clone, Debug)]
pub struct CoordinatedSolution<T: Real> {
    pub u_stacked: DVector<T>,
    pub sigma_u: DMatrix<T>,
    /// Per-arm `T × D_s` states.
    pub x: Vec<DMatrix<T>>,
}

/// Minimizes the composition cost by assembling the stacked normal equations
/// in `U` and solving them with a Cholesky factorization.
pub fn solve_coordinated_lqt<T: Real>(
    p: &CoordinatedLqtProblem<T>,
    sys: &LinearSystem<T>,
) -> Result<CoordinatedSolution<T>> {
    p.validate(sys)?;
    let t = p.arms[0].horizon();
    let (sx, su) = build_transfer_matrices(sys, t)?;
    let n = su.ncols();
    let h = p.arms.len();
    let su_t = su.transpose();
    let signs: Vec<T> = p.coordination.signs().iter().map(|&s| lit(s as f64)).collect();

    let mut hess = DMatrix::<T>::zeros(n * h, n * h);
    let mut rhs = DVector::<T>::zeros(n * h);
    for (i, arm) in p.arms.iter().enumerate() {
        let q_su = block_diag_mul(&arm.q_blocks, &su);
        let block = &su_t * q_su + DMatrix::identity(n, n) * arm.r;
        hess.view_mut((i * n, i * n), (n, n)).copy_from(&block);
        let free = &sx * &arm.x1;
        let q_free = block_diag_mul(&arm.q_blocks, &DMatrix::from_column_slice(free.len(), 1, free.as_slice()));
        let g = &su_t * (arm.weighted_reference() - q_free.column(0));
        rhs.rows_mut(i * n, n).copy_from(&g);
    }
    if p.sigma > T::zero() {
        let omega_c = &su_t * block_diag_mul(&p.rel_q_blocks, &su) * p.sigma;
        let rel_ref = CoordinatedLqtProblem::weighted(&p.rel_q_blocks, &p.rel_means);
        let free = &sx * p.relative_initial();
        let q_free = block_diag_mul(&p.rel_q_blocks, &DMatrix::from_column_slice(free.len(), 1, free.as_slice()));
        let g_c = &su_t * (rel_ref - q_free.column(0)) * p.sigma;
        for i in 0..h {
            for j in 0..h {
                let s = signs[i] * signs[j];
                if s != T::zero() {
                    let mut view = hess.view_mut((i * n, j * n), (n, n));
                    view += &omega_c * s;
                }
            }
            if signs[i] != T::zero() {
                let mut view = rhs.rows_mut(i * n, n);
                view += &g_c * signs[i];
            }
        }
    }
    let hess = symmetrize(&hess);
    let chol = hess.cholesky().ok_or_else(|| Error::Singular("coordinated LQT curvature".into()))?;
    let u_stacked = chol.solve(&rhs);
    let sigma_u = symmetrize(&chol.inverse());
    let us = extract_arm_commands(&u_stacked, &p.coordination)?;
    let x = p
        .arms
        .iter()
        .zip(&us)
        .map(|(arm, u)| unflatten_rows(&(&sx * &arm.x1 + &su * u), sys.state_dim()))
        .collect();
    Ok(CoordinatedSolution { u_stacked, sigma_u, x })
}

impl<T: Real> CoordinatedLqtProblem<T> {
    fn weighted(q_blocks: &[DMatrix<T>], means: &DMatrix<T>) -> DVector<T> {
        let ds = means.ncols();
        let mut out = DVector::zeros(ds * means.nrows());
        for (t, q) in q_blocks.iter().enumerate() {
            out.rows_mut(t * ds, ds).copy_from(&(q * means.row(t).transpose()));
        }
        out
    }
}

/// Single-arm tracking of several weighted references at once:
/// `Σ_i w_i (ν_i − x)ᵀ Q_i (ν_i − x) + r uᵀu`. Used when a partner arm is
/// held fixed and only its coordination term remains.
pub fn solve_lqt_multi<T: Real>(
    sys: &LinearSystem<T>,
    x1: &DVector<T>,
    r: T,
    terms: &[(&DMatrix<T>, &[DMatrix<T>], T)],
) -> Result<LqtSolution<T>> {
    let first = terms.first().ok_or_else(|| arg_err("no tracking terms"))?;
    let t = first.0.nrows();
    let ds = sys.state_dim();
    let mut q_blocks = vec![DMatrix::<T>::zeros(ds, ds); t];
    let mut info = vec![DVector::<T>::zeros(ds); t];
    for (means, blocks, w) in terms {
        if means.nrows() != t || blocks.len() != t || means.ncols() != ds {
            return Err(dim_err("tracking terms do not share a horizon"));
        }
        if !(*w >= T::zero()) {
            return Err(arg_err("tracking weights must be non-negative"));
        }
        for s in 0..t {
            let wq = &blocks[s] * *w;
            info[s] += &wq * means.row(s).transpose();
            q_blocks[s] += wq;
        }
    }
    // Merge into one reference per step: ν = Q⁺ (Σ w Q ν) on the support of Q.
    let mut ref_means = DMatrix::zeros(t, ds);
    for s in 0..t {
        let q = symmetrize(&q_blocks[s]);
        let support: Vec<usize> = (0..ds).filter(|&i| q[(i, i)] > T::zero()).collect();
        if support.is_empty() {
            continue;
        }
        let sub = DMatrix::from_fn(support.len(), support.len(), |a, b| q[(support[a], support[b])]);
        let rhs = DVector::from_iterator(support.len(), support.iter().map(|&i| info[s][i]));
        let chol = sub.cholesky().ok_or_else(|| Error::NotPositiveDefinite("merged precision".into()))?;
        let nu = chol.solve(&rhs);
        for (a, &i) in support.iter().enumerate() {
            ref_means[(s, i)] = nu[a];
        }
        q_blocks[s] = q;
    }
    let p = LqtProblem { ref_means, q_blocks, r, x1: x1.clone() };
    solve_lqt(&p, sys)
}
