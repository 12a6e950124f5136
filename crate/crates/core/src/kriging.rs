//! Kernel-based kriging.
//!
//! Weights for a query `z` minimize
//!
//! ```text
//!     J(λ) = ½ λᵀ H λ + fᵀ λ + 1      s.t.  1ᵀ λ = 1
//!     H = 2(βI + K),  f = -2 k(z)
//! ```
//!
//! where `K` is the Gram matrix of the buffered samples and `k(z)` the row of
//! kernel values between `z` and each sample. The minimum value is the
//! dissimilarity of `z` with respect to the buffer; the weighted sum of the
//! buffered observations is the prediction.
//!
//! `H` does not depend on the query, so [`KrigingSystem`] factors and inverts
//! it once; every query then costs two matrix-vector products.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::PredictionGrid;
use crate::grid::{GridMap, MissionGrid, Point};

/// A regressor `(q1, q2, t)`; time is in steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatioTemporalPoint {
    pub q1: f64,
    pub q2: f64,
    pub t: f64,
}

impl SpatioTemporalPoint {
    pub fn new(q1: f64, q2: f64, t: f64) -> Self {
        Self { q1, q2, t }
    }

    pub fn at(q: Point, t: f64) -> Self {
        Self { q1: q[0], q2: q[1], t }
    }

    pub fn position(&self) -> Point {
        [self.q1, self.q2]
    }

    pub fn is_finite(&self) -> bool {
        self.q1.is_finite() && self.q2.is_finite() && self.t.is_finite()
    }
}

/// Separable Gaussian kernel length scales plus the weight regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelParams {
    /// Spatial length scale (m).
    pub sigma: f64,
    /// Temporal length scale (steps).
    pub tau: f64,
    /// Ridge weight on `λᵀλ`.
    pub beta: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { sigma: 0.202815, tau: 0.329897, beta: 0.169103 }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel.sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel.tau must be > 0, got {}", self.tau)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel.beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }
}

#[inline]
pub fn kernel(a: &SpatioTemporalPoint, b: &SpatioTemporalPoint, kp: &KernelParams) -> f64 {
    let ds = (a.q1 - b.q1).powi(2) + (a.q2 - b.q2).powi(2);
    let dt = (a.t - b.t).powi(2);
    (-ds / (2.0 * kp.sigma * kp.sigma)).exp() * (-dt / (2.0 * kp.tau * kp.tau)).exp()
}

// ---------------------------------------------------------------------------
// Sample buffer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub z: SpatioTemporalPoint,
    pub cf: f64,
}

/// Sliding window over the last `capacity` sampling steps. Entries are
/// ordered oldest step first, agents by index within a step.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    capacity: usize,
    agents: usize,
    steps: VecDeque<Vec<Sample>>,
}

impl SampleBuffer {
    pub fn new(capacity: usize, agents: usize) -> Result<Self> {
        if capacity == 0 || agents == 0 {
            return Err(Error::InvalidParameter(format!(
                "buffer needs capacity >= 1 and agents >= 1 (got {capacity}, {agents})"
            )));
        }
        Ok(Self { capacity, agents, steps: VecDeque::with_capacity(capacity + 1) })
    }

    /// Buffer holding the given samples as a single step. Intended for
    /// ad-hoc queries where the step structure does not matter.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self> {
        if samples.iter().any(|s| !(0.0..=1.0).contains(&s.cf) || !s.z.is_finite()) {
            return Err(Error::InvalidParameter("samples need finite points and cf in [0,1]".into()));
        }
        let n = samples.len().max(1);
        let mut steps = VecDeque::new();
        if !samples.is_empty() {
            steps.push_back(samples);
        }
        Ok(Self { capacity: 1, agents: n, steps })
    }

    /// Appends one step of agent samples (agent order), evicting the oldest
    /// step once `capacity` steps are held.
    pub fn push_step(&mut self, samples: Vec<Sample>) -> Result<()> {
        if samples.len() > self.agents {
            return Err(Error::InvalidParameter(format!(
                "{} samples in one step for {} agents",
                samples.len(),
                self.agents
            )));
        }
        if samples.iter().any(|s| !(0.0..=1.0).contains(&s.cf) || !s.z.is_finite()) {
            return Err(Error::InvalidParameter("samples need finite points and cf in [0,1]".into()));
        }
        self.steps.push_back(samples);
        while self.steps.len() > self.capacity {
            self.steps.pop_front();
        }
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn steps_held(&self) -> usize {
        self.steps.len()
    }

    pub fn is_full(&self) -> bool {
        self.steps.len() == self.capacity
    }

    pub fn len(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.steps.iter().flatten()
    }

    pub fn points(&self) -> Vec<SpatioTemporalPoint> {
        self.iter().map(|s| s.z).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.iter().map(|s| s.cf).collect()
    }

    /// Latest sample time, if any.
    pub fn newest_time(&self) -> Option<f64> {
        self.iter().map(|s| s.z.t).fold(None, |acc, t| Some(acc.map_or(t, |a: f64| a.max(t))))
    }
}

// ---------------------------------------------------------------------------
// Gram matrix and cross kernel
// ---------------------------------------------------------------------------

pub fn gram(buffer: &SampleBuffer, kp: &KernelParams) -> Result<DMatrix<f64>> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    Ok(gram_of(&buffer.points(), kp))
}

pub(crate) fn gram_of(points: &[SpatioTemporalPoint], kp: &KernelParams) -> DMatrix<f64> {
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = kernel(&points[i], &points[j], kp);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

pub fn cross_kernel(z: &SpatioTemporalPoint, buffer: &SampleBuffer, kp: &KernelParams) -> Result<DVector<f64>> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    Ok(cross_of(z, &buffer.points(), kp))
}

fn cross_of(z: &SpatioTemporalPoint, points: &[SpatioTemporalPoint], kp: &KernelParams) -> DVector<f64> {
    DVector::from_iterator(points.len(), points.iter().map(|p| kernel(z, p, kp)))
}

// ---------------------------------------------------------------------------
// Weight solve
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct KrigingSolution {
    pub weights: DVector<f64>,
    /// Optimal objective value.
    pub dissimilarity: f64,
    /// Query time is strictly after every buffered sample.
    pub ahead: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Predicted cloud factor (not clamped).
    pub value: f64,
    pub dissimilarity: f64,
    pub ahead: bool,
}

/// The factored KKT system for one buffer state.
///
/// With `H = LLᵀ`, the bordered system `[[H, 1], [1ᵀ, 0]] [λ; ν] = [2k; 1]`
/// is solved by its Schur complement: `λ = H⁻¹(2k) − ν H⁻¹1`, with `ν` fixed
/// by the constraint.
pub struct KrigingSystem {
    kp: KernelParams,
    points: Vec<SpatioTemporalPoint>,
    values: DVector<f64>,
    gram: DMatrix<f64>,
    h_inv: DMatrix<f64>,
    h_inv_ones: DVector<f64>,
    ones_h_inv_ones: f64,
    newest: f64,
    regularized: bool,
}

impl KrigingSystem {
    pub fn new(buffer: &SampleBuffer, kp: &KernelParams) -> Result<Self> {
        Self::from_parts(buffer.points(), buffer.values(), kp)
    }

    pub fn from_parts(points: Vec<SpatioTemporalPoint>, values: Vec<f64>, kp: &KernelParams) -> Result<Self> {
        kp.validate()?;
        if points.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if points.len() != values.len() {
            return Err(Error::ShapeMismatch(format!("{} points, {} values", points.len(), values.len())));
        }
        let n = points.len();
        let gram = gram_of(&points, kp);
        let mut h = &gram * 2.0;
        for i in 0..n {
            h[(i, i)] += 2.0 * kp.beta;
        }
        // Pivots lost to rounding (duplicated samples) count as failure.
        let floor = 1e-14 * h.diagonal().max();
        let (chol, regularized) = match Cholesky::new(h.clone()) {
            Some(c) if c.l_dirty().diagonal().iter().all(|d| d * d > floor && d.is_finite()) => (c, false),
            _ => {
                let ridge = 1e-10 * h.trace() / n as f64;
                let mut hr = h.clone();
                for i in 0..n {
                    hr[(i, i)] += ridge;
                }
                match Cholesky::new(hr) {
                    Some(c) => {
                        log::debug!("kriging: ridge {ridge:.3e} applied to singular H");
                        (c, true)
                    }
                    None => return Err(Error::Singular { condition: condition_estimate(&h) }),
                }
            }
        };
        let h_inv = chol.inverse();
        let h_inv_ones = chol.solve(&DVector::from_element(n, 1.0));
        let ones_h_inv_ones = h_inv_ones.sum();
        if !(ones_h_inv_ones > 0.0 && ones_h_inv_ones.is_finite()) {
            return Err(Error::Singular { condition: condition_estimate(&h) });
        }
        let newest = points.iter().map(|p| p.t).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            kp: *kp,
            points,
            values: DVector::from_vec(values),
            gram,
            h_inv,
            h_inv_ones,
            ones_h_inv_ones,
            newest,
            regularized,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Whether the ridge fallback was needed to factor `H`.
    pub fn regularized(&self) -> bool {
        self.regularized
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn solve(&self, z: &SpatioTemporalPoint) -> KrigingSolution {
        let n = self.len();
        let k = cross_of(z, &self.points, &self.kp);
        let mut lambda = DVector::zeros(n);
        let mut scratch = DVector::zeros(n);
        let j = self.weights_into(&k, &mut lambda, &mut scratch);
        KrigingSolution { weights: lambda, dissimilarity: j, ahead: z.t > self.newest }
    }

    /// Writes the optimal weights for cross-kernel row `k` into `lambda` and
    /// returns the dissimilarity.
    fn weights_into(&self, k: &DVector<f64>, lambda: &mut DVector<f64>, scratch: &mut DVector<f64>) -> f64 {
        let n = self.len();
        lambda.gemv(2.0, &self.h_inv, k, 0.0);
        let nu = (lambda.sum() - 1.0) / self.ones_h_inv_ones;
        lambda.axpy(-nu, &self.h_inv_ones, 1.0);
        // remove the rounding residual of the sum-to-one constraint
        let drift = (1.0 - lambda.sum()) / n as f64;
        lambda.add_scalar_mut(drift);

        scratch.gemv(1.0, &self.gram, lambda, 0.0);
        self.kp.beta * lambda.dot(lambda) + lambda.dot(scratch) - 2.0 * k.dot(lambda) + 1.0
    }

    pub fn predict(&self, z: &SpatioTemporalPoint) -> Prediction {
        let sol = self.solve(z);
        Prediction { value: self.values.dot(&sol.weights), dissimilarity: sol.dissimilarity, ahead: sol.ahead }
    }

    /// Prediction and dissimilarity at every cell center for step `t_pred`.
    pub fn evaluate_grid(&self, grid: &MissionGrid, t_pred: usize) -> GridEvaluation {
        let n = self.len();
        let t = t_pred as f64;
        let two_s2 = 2.0 * self.kp.sigma * self.kp.sigma;
        let two_t2 = 2.0 * self.kp.tau * self.kp.tau;
        // the temporal factor is shared by every cell
        let temporal: Vec<f64> = self.points.iter().map(|p| (-(t - p.t).powi(2) / two_t2).exp()).collect();
        let (pred, diss): (Vec<f64>, Vec<f64>) = (0..grid.len())
            .into_par_iter()
            .map_init(
                || (DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)),
                |(k, lambda, scratch), idx| {
                    let q = grid.center_of(idx);
                    for (j, p) in self.points.iter().enumerate() {
                        let ds = (q[0] - p.q1).powi(2) + (q[1] - p.q2).powi(2);
                        k[j] = (-ds / two_s2).exp() * temporal[j];
                    }
                    let j = self.weights_into(k, lambda, scratch);
                    (self.values.dot(lambda), j)
                },
            )
            .unzip();
        GridEvaluation {
            prediction: PredictionGrid { grid: *grid, t: t_pred, values: pred },
            dissimilarity: DissimilarityMap { t_pred, map: GridMap { grid: *grid, values: diss } },
        }
    }
}

fn condition_estimate(h: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(h.clone());
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

pub fn solve_weights(z: &SpatioTemporalPoint, buffer: &SampleBuffer, kp: &KernelParams) -> Result<KrigingSolution> {
    Ok(KrigingSystem::new(buffer, kp)?.solve(z))
}

/// One-step-ahead prediction at position `q` for step `t_pred`.
pub fn predict(q: Point, t_pred: f64, buffer: &SampleBuffer, kp: &KernelParams) -> Result<Prediction> {
    Ok(KrigingSystem::new(buffer, kp)?.predict(&SpatioTemporalPoint::at(q, t_pred)))
}

/// Dissimilarity of every cell center for step `t_pred`; doubles as the
/// coverage importance map.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMap {
    pub t_pred: usize,
    pub map: GridMap,
}

impl DissimilarityMap {
    pub fn grid(&self) -> &MissionGrid {
        &self.map.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.map.values
    }
}

pub struct GridEvaluation {
    pub prediction: PredictionGrid,
    pub dissimilarity: DissimilarityMap,
}

pub fn dissimilarity_map(
    grid: &MissionGrid,
    t_pred: usize,
    buffer: &SampleBuffer,
    kp: &KernelParams,
) -> Result<DissimilarityMap> {
    Ok(KrigingSystem::new(buffer, kp)?.evaluate_grid(grid, t_pred).dissimilarity)
}

// ---------------------------------------------------------------------------
// General (non-kernel) dissimilarity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralDissimilarity {
    pub value: f64,
    pub weights: DVector<f64>,
}

/// Affine-invariant dissimilarity of `d` with respect to the columns of
/// `data`:
///
/// ```text
///     min (1-γ) Σ wᵢλᵢ² + γ Σ |λᵢ|   s.t.  [data; 1ᵀ] λ = [d; 1]
/// ```
///
/// `γ = 0` is a weighted least-norm problem with a closed form; `γ > 0` is
/// solved as a nonnegative QP over `λ = λ⁺ − λ⁻` with a primal active set.
pub fn dissimilarity_general(
    d: &DVector<f64>,
    data: &DMatrix<f64>,
    weights: Option<&[f64]>,
    gamma: f64,
) -> Result<GeneralDissimilarity> {
    let n = data.ncols();
    if n == 0 {
        return Err(Error::EmptyBuffer);
    }
    if data.nrows() != d.len() {
        return Err(Error::ShapeMismatch(format!("data has {} rows, query has {}", data.nrows(), d.len())));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("gamma must lie in [0,1), got {gamma}")));
    }
    let w = match weights {
        Some(w) if w.len() != n => {
            return Err(Error::ShapeMismatch(format!("{} weights for {} data points", w.len(), n)))
        }
        Some(w) if w.iter().any(|&v| !(v > 0.0)) => {
            return Err(Error::InvalidParameter("weights must be positive".into()))
        }
        Some(w) => DVector::from_column_slice(w),
        None => DVector::from_element(n, 1.0),
    };

    let m = d.len() + 1;
    let mut a = DMatrix::from_element(m, n, 1.0);
    a.view_mut((0, 0), (m - 1, n)).copy_from(data);
    let mut b = DVector::from_element(m, 1.0);
    b.rows_mut(0, m - 1).copy_from(d);

    // weighted least-norm point: λ = W⁻¹Aᵀ (A W⁻¹ Aᵀ)⁺ b
    let w_inv = w.map(|v| 1.0 / v);
    let a_w = DMatrix::from_fn(m, n, |i, j| a[(i, j)] * w_inv[j]);
    let g = &a_w * a.transpose();
    let mu = pinv_solve(g, &b)?;
    let lambda0 = a_w.transpose() * mu;
    let tol = 1e-8 * (1.0 + b.amax()) * (1.0 + a.amax());
    if (&a * &lambda0 - &b).amax() > tol {
        return Err(Error::Infeasible);
    }
    if gamma == 0.0 {
        let value = lambda0.iter().zip(w.iter()).map(|(l, wi)| wi * l * l).sum();
        return Ok(GeneralDissimilarity { value, weights: lambda0 });
    }

    // split variables x = [λ⁺; λ⁻] ≥ 0
    let mut p = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let v = 2.0 * (1.0 - gamma) * w[i];
        p[(i, i)] = v;
        p[(n + i, n + i)] = v;
        p[(i, n + i)] = -v;
        p[(n + i, i)] = -v;
    }
    let c = DVector::from_element(2 * n, gamma);
    let mut e = DMatrix::zeros(m, 2 * n);
    e.view_mut((0, 0), (m, n)).copy_from(&a);
    e.view_mut((0, n), (m, n)).copy_from(&(-&a));
    let x0 = DVector::from_fn(2 * n, |k, _| if k < n { lambda0[k].max(0.0) } else { (-lambda0[k - n]).max(0.0) });
    let x = active_set_nonneg_qp(&p, &c, &e, x0)?;
    let lambda = DVector::from_fn(n, |i, _| x[i] - x[n + i]);
    let value = (1.0 - gamma) * lambda.iter().zip(w.iter()).map(|(l, wi)| wi * l * l).sum::<f64>()
        + gamma * lambda.iter().map(|l| l.abs()).sum::<f64>();
    Ok(GeneralDissimilarity { value, weights: lambda })
}

fn pinv_solve(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = SVD::new(m, true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    svd.solve(rhs, 1e-12 * smax.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParameter(format!("least-squares solve failed: {e}")))
}

/// Primal active-set method for `min ½xᵀPx + cᵀx  s.t.  Ex = b, x ≥ 0`,
/// started from a feasible `x0`. Bound constraints are the only inequalities,
/// so the working set is the set of variables pinned at zero.
fn active_set_nonneg_qp(
    p: &DMatrix<f64>,
    c: &DVector<f64>,
    e: &DMatrix<f64>,
    mut x: DVector<f64>,
) -> Result<DVector<f64>> {
    let dim = x.len();
    let m = e.nrows();
    let mut pinned: Vec<bool> = x.iter().map(|&v| v <= 0.0).collect();
    for (k, v) in x.iter_mut().enumerate() {
        if pinned[k] {
            *v = 0.0;
        }
    }
    let max_iter = 50 * (dim + m).max(10);
    for _ in 0..max_iter {
        let grad = p * &x + c;
        let free: Vec<usize> = (0..dim).filter(|&k| !pinned[k]).collect();
        let nf = free.len();

        // [[P_FF, -E_Fᵀ], [E_F, 0]] [s; y] = [-g_F; 0]
        let mut kkt = DMatrix::zeros(nf + m, nf + m);
        let mut rhs = DVector::zeros(nf + m);
        for (a, &fa) in free.iter().enumerate() {
            for (b, &fb) in free.iter().enumerate() {
                kkt[(a, b)] = p[(fa, fb)];
            }
            for r in 0..m {
                kkt[(a, nf + r)] = -e[(r, fa)];
                kkt[(nf + r, a)] = e[(r, fa)];
            }
            rhs[a] = -grad[fa];
        }
        let sol = pinv_solve(kkt, &rhs)?;
        let step = sol.rows(0, nf).into_owned();
        let y = sol.rows(nf, m).into_owned();

        let scale = 1.0 + x.amax();
        if step.amax() <= 1e-12 * scale {
            // multipliers of the pinned bounds
            let mu = &grad - e.transpose() * &y;
            let release = (0..dim)
                .filter(|&k| pinned[k])
                .map(|k| (k, mu[k]))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match release {
                Some((k, v)) if v < -1e-10 => pinned[k] = false,
                _ => return Ok(x),
            }
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for (a, &fa) in free.iter().enumerate() {
            if step[a] < 0.0 {
                let ratio = -x[fa] / step[a];
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(fa);
                }
            }
        }
        for (a, &fa) in free.iter().enumerate() {
            x[fa] += alpha * step[a];
        }
        if let Some(k) = blocking {
            pinned[k] = true;
            x[k] = 0.0;
        }
    }
    log::warn!("active set: iteration limit reached");
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kp(sigma: f64, tau: f64, beta: f64) -> KernelParams {
        KernelParams { sigma, tau, beta }
    }

    fn sample(q1: f64, q2: f64, t: f64, cf: f64) -> Sample {
        Sample { z: SpatioTemporalPoint::new(q1, q2, t), cf }
    }

    fn random_buffer(rng: &mut ChaCha8Rng, n: usize) -> SampleBuffer {
        let samples = (0..n)
            .map(|_| {
                sample(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..5.0), rng.gen())
            })
            .collect();
        SampleBuffer::from_samples(samples).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let p = kp(0.5, 2.0, 0.0);
        let z = SpatioTemporalPoint::new(0.1, -0.3, 4.0);
        assert_eq!(kernel(&z, &z, &p), 1.0);
        let z1 = SpatioTemporalPoint::new(0.1 + 0.3, -0.3 + 0.4, 4.0);
        assert_relative_eq!(kernel(&z, &z1, &p), (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(kernel(&z, &z1, &p), 0.606531, epsilon = 1e-6);
        let z2 = SpatioTemporalPoint::new(0.1, -0.3, 8.0);
        assert_relative_eq!(kernel(&z, &z2, &p), 0.135335, epsilon = 1e-6);
    }

    #[test]
    fn gram_examples() {
        let p = kp(0.3, 1.0, 0.0);
        let one = SampleBuffer::from_samples(vec![sample(0.0, 0.0, 0.0, 0.5)]).unwrap();
        assert_eq!(gram(&one, &p).unwrap(), DMatrix::from_element(1, 1, 1.0));
        let twin = SampleBuffer::from_samples(vec![sample(0.2, 0.1, 3.0, 0.5), sample(0.2, 0.1, 3.0, 0.7)]).unwrap();
        assert_eq!(gram(&twin, &p).unwrap(), DMatrix::from_element(2, 2, 1.0));
        let empty = SampleBuffer::new(3, 2).unwrap();
        assert!(matches!(gram(&empty, &p), Err(Error::EmptyBuffer)));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let buf = random_buffer(&mut rng, 5);
        let k = gram(&buf, &p).unwrap();
        assert_eq!(k, k.transpose());
        let eig = SymmetricEigen::new(k).eigenvalues;
        assert!(eig.min() >= -1e-8);
    }

    #[test]
    fn cross_kernel_examples() {
        let p = kp(0.3, 1.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let buf = random_buffer(&mut rng, 6);
        let pts = buf.points();
        let row = cross_kernel(&pts[3], &buf, &p).unwrap();
        assert_eq!(row[3], 1.0);
        for (i, v) in row.iter().enumerate() {
            assert_eq!(*v, kernel(&pts[3], &pts[i], &p));
        }
        let far = SpatioTemporalPoint::new(pts[0].q1 + 100.0 * p.sigma, pts[0].q2 + 200.0, pts[0].t);
        assert!(cross_kernel(&far, &buf, &p).unwrap().iter().all(|&v| v < 1e-30));
    }

    /// Two-sample instance with prescribed Gram entries: sample 1 and the
    /// query coincide in space, the other kernel values are placed through
    /// the temporal factor.
    fn two_point_instance() -> (KrigingSystem, SpatioTemporalPoint) {
        // K12 = 0.5, k1 = 0.8, k2 = 0.2 realized by choosing distances
        let p = kp(1.0, 1.0, 1.0);
        let d = |v: f64| (-2.0 * v.ln()).sqrt();
        let (d12, d1, d2) = (d(0.5), d(0.8), d(0.2));
        // place sample 1 at the origin, sample 2 on the q1 axis, query in the plane
        let x = (d1 * d1 - d2 * d2 + d12 * d12) / (2.0 * d12);
        let y = (d1 * d1 - x * x).sqrt();
        let pts = vec![SpatioTemporalPoint::new(0.0, 0.0, 0.0), SpatioTemporalPoint::new(d12, 0.0, 0.0)];
        let sys = KrigingSystem::from_parts(pts, vec![1.0, 0.0], &p).unwrap();
        (sys, SpatioTemporalPoint::new(x, y, 0.0))
    }

    #[test]
    fn two_point_weights_match_line_search() {
        let (sys, z) = two_point_instance();
        let sol = sys.solve(&z);
        assert_relative_eq!(sol.weights[0], 0.7, epsilon = 1e-9);
        assert_relative_eq!(sol.weights[1], 0.3, epsilon = 1e-9);
        assert_relative_eq!(sol.dissimilarity, 1.13, epsilon = 1e-9);
        // substituting λ2 = 1 - λ1 leaves 3λ1² - 4.2λ1 + 2.6
        let best = (0..=200_000)
            .map(|s| -1.0 + 3.0 * s as f64 / 200_000.0)
            .map(|l1| (l1, 3.0 * l1 * l1 - 4.2 * l1 + 2.6))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!((best.0 - sol.weights[0]).abs() < 1e-4);
        assert!((best.1 - sol.dissimilarity).abs() < 1e-8);
        assert_relative_eq!(sys.predict(&z).value, 0.7, epsilon = 1e-9);
    }

    #[test]
    fn interpolates_buffered_points_without_regularization() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let buf = random_buffer(&mut rng, 8);
        let p = kp(0.4, 1.0, 0.0);
        let sys = KrigingSystem::new(&buf, &p).unwrap();
        for (j, s) in buf.iter().enumerate() {
            let sol = sys.solve(&s.z);
            assert!(sol.dissimilarity.abs() <= 1e-8, "J = {}", sol.dissimilarity);
            assert!((sol.weights[j] - 1.0).abs() < 1e-6);
            assert!((sys.predict(&s.z).value - s.cf).abs() <= 1e-8);
        }
    }

    #[test]
    fn constant_observations_are_reproduced() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut buf = random_buffer(&mut rng, 12);
        let pts = buf.points();
        buf = SampleBuffer::from_samples(pts.iter().map(|z| Sample { z: *z, cf: 0.37 }).collect()).unwrap();
        let sys = KrigingSystem::new(&buf, &kp(0.2, 0.5, 1e-4)).unwrap();
        for _ in 0..50 {
            let z = SpatioTemporalPoint::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), 6.0);
            let pr = sys.predict(&z);
            assert!((pr.value - 0.37).abs() < 1e-12);
            assert!((sys.solve(&z).weights.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicated_points_trigger_ridge() {
        let buf = SampleBuffer::from_samples(vec![sample(0.0, 0.0, 0.0, 0.2), sample(0.0, 0.0, 0.0, 0.4)]).unwrap();
        let sys = KrigingSystem::new(&buf, &kp(0.3, 1.0, 0.0)).unwrap();
        assert!(sys.regularized());
        let pr = sys.predict(&SpatioTemporalPoint::new(0.0, 0.0, 1.0));
        assert!((pr.value - 0.3).abs() < 1e-6);
    }

    #[test]
    fn far_field_single_sample() {
        let grid = MissionGrid::new(0.0, 1.0, 0.0, 1.0, 3, 3).unwrap();
        for beta in [0.0, 0.3, 1.7] {
            let p = kp(0.01, 1.0, beta);
            let buf = SampleBuffer::from_samples(vec![sample(100.0, 100.0, 0.0, 0.5)]).unwrap();
            let map = dissimilarity_map(&grid, 1, &buf, &p).unwrap();
            for v in map.values() {
                assert_relative_eq!(*v, beta + 2.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn map_agrees_with_pointwise_predict() {
        let grid = MissionGrid::new(-1.0, 1.0, -1.0, 1.0, 7, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let buf = random_buffer(&mut rng, 10);
        let p = kp(0.5, 2.0, 0.05);
        let map = dissimilarity_map(&grid, 6, &buf, &p).unwrap();
        for idx in 0..grid.len() {
            let pr = predict(grid.center_of(idx), 6.0, &buf, &p).unwrap();
            assert_eq!(map.values()[idx], pr.dissimilarity);
            assert!(pr.ahead);
        }
        // a sample sitting on a cell center at the prediction time zeroes that cell
        let c = grid.center(3, 2);
        let buf = SampleBuffer::from_samples(vec![sample(c[0], c[1], 6.0, 0.5), sample(0.9, -0.9, 5.0, 0.1)]).unwrap();
        let map = dissimilarity_map(&grid, 6, &buf, &kp(0.5, 2.0, 0.0)).unwrap();
        assert!(map.map.get(3, 2).abs() < 1e-8);
    }

    #[test]
    fn buffer_window_evicts_oldest() {
        let mut buf = SampleBuffer::new(2, 2).unwrap();
        for t in 0..4 {
            buf.push_step(vec![sample(0.0, 0.0, t as f64, 0.1), sample(1.0, 0.0, t as f64, 0.2)]).unwrap();
        }
        assert!(buf.is_full());
        let ts: Vec<f64> = buf.points().iter().map(|z| z.t).collect();
        assert_eq!(ts, vec![2.0, 2.0, 3.0, 3.0]);
        assert_eq!(buf.newest_time(), Some(3.0));
        assert!(buf.push_step(vec![sample(0.0, 0.0, 4.0, 0.1); 3]).is_err());
        assert!(buf.push_step(vec![sample(0.0, 0.0, 4.0, 1.5)]).is_err());
    }

    #[test]
    fn general_single_column() {
        let d = DVector::from_vec(vec![0.3, -1.0]);
        let data = DMatrix::from_column_slice(2, 1, &[0.3, -1.0]);
        for gamma in [0.0, 0.25, 0.9] {
            let r = dissimilarity_general(&d, &data, Some(&[2.0]), gamma).unwrap();
            assert_relative_eq!(r.weights[0], 1.0, epsilon = 1e-12);
            assert_relative_eq!(r.value, (1.0 - gamma) * 2.0 + gamma, epsilon = 1e-12);
        }
    }

    #[test]
    fn general_midpoint() {
        let data = DMatrix::from_column_slice(2, 2, &[0.0, 0.0, 2.0, 1.0]);
        let d = DVector::from_vec(vec![1.0, 0.5]);
        let r = dissimilarity_general(&d, &data, None, 0.0).unwrap();
        assert_relative_eq!(r.weights[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(r.weights[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(r.value, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn general_infeasible() {
        let data = DMatrix::from_column_slice(2, 3, &[0.0, 0.0, 1.0, 0.0, 3.0, 0.0]);
        let d = DVector::from_vec(vec![0.5, 1.0]);
        assert!(matches!(dissimilarity_general(&d, &data, None, 0.0), Err(Error::Infeasible)));
        assert!(matches!(dissimilarity_general(&d, &data, None, 0.5), Err(Error::Infeasible)));
    }

    #[test]
    fn general_rejects_bad_inputs() {
        let data = DMatrix::from_column_slice(1, 2, &[0.0, 1.0]);
        let d = DVector::from_vec(vec![0.5]);
        assert!(dissimilarity_general(&d, &data, None, 1.0).is_err());
        assert!(dissimilarity_general(&d, &data, Some(&[1.0, 0.0]), 0.0).is_err());
        assert!(dissimilarity_general(&d, &data, Some(&[1.0]), 0.0).is_err());
    }

    /// Brute force over the constraint set of a 1-D problem with three
    /// points: two equality constraints leave one free direction.
    #[test]
    fn general_l1_matches_line_search() {
        let data = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 3.0]);
        let w = [1.0, 2.0, 0.5];
        for &(dq, gamma) in &[(0.5, 0.3), (2.0, 0.6), (4.0, 0.5), (-1.0, 0.1), (1.0, 0.95)] {
            let d = DVector::from_vec(vec![dq]);
            let r = dissimilarity_general(&d, &data, Some(&w), gamma).unwrap();
            // λ = λp + s·v, with v spanning the null space of [x; 1]
            let v = [2.0, -3.0, 1.0];
            let l0 = dissimilarity_general(&d, &data, Some(&w), 0.0).unwrap().weights;
            let obj = |s: f64| {
                (0..3)
                    .map(|i| {
                        let l = l0[i] + s * v[i];
                        (1.0 - gamma) * w[i] * l * l + gamma * l.abs()
                    })
                    .sum::<f64>()
            };
            let mut best = f64::INFINITY;
            for k in 0..=400_000 {
                best = best.min(obj(-4.0 + 8.0 * k as f64 / 400_000.0));
            }
            assert!((r.value - best).abs() < 1e-7, "d={dq} γ={gamma}: {} vs {best}", r.value);
            let resid = data.row(0).dot(&r.weights.transpose()) - dq;
            assert!(resid.abs() < 1e-9);
            assert!((r.weights.sum() - 1.0).abs() < 1e-9);
        }
    }
}
