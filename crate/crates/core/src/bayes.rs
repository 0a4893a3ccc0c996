//! Laplacian-penalized Gaussian smoothing with empirical-Bayes variances and
//! GCV choice of the smoothing level.
//!
//! The smoothing level `lambda` taken by [`eb_variances`], [`gcv`] and
//! [`select_lambda`] is dimensionless: the prior precision it implies is
//! `lambda / sigma_bar^2`, where `sigma_bar^2` is the sub-edge-weighted mean of
//! the per-edge variance estimates. This keeps GCV equivariant under a change
//! of time units and makes the default grid meaningful whatever the data scale.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::{refine, Graph, HighResGraph, ResolutionSpec};
use crate::numkernel::{inverse, solve_spd, sym_eigenvalues, SymMatrix};

/// Threshold below which tr(I - H) counts as zero.
pub const TRACE_EPS: f64 = 1e-8;
pub const DEFAULT_GRID_POINTS: usize = 40;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceModel {
    /// Σ = diag(σ²_{e(k)} / n_k) with one variance per parent edge.
    DiagonalPerEdge { sigma2: Vec<f64>, n: Vec<f64>, edge_of: Vec<usize> },
    /// Σ(θ) = Σ_k θ_k E_k.
    LinearFamily { basis: Vec<SymMatrix>, theta: Vec<f64> },
}

impl CovarianceModel {
    /// Per-edge variances `sigma2` with per-sub-edge sample sizes `n`.
    pub fn diagonal(highres: &HighResGraph, sigma2: Vec<f64>, n: Vec<f64>) -> Result<Self> {
        check_len("sigma2", sigma2.len(), highres.parent().edge_count())?;
        check_len("n", n.len(), highres.sub_edge_count())?;
        Ok(CovarianceModel::DiagonalPerEdge { sigma2, n, edge_of: highres.edge_of() })
    }

    /// The per-edge diagonal model written as a linear family, with
    /// E_i = diag(1{k in edge i} / n_k).
    pub fn diagonal_family(highres: &HighResGraph, n: &[f64], theta: Vec<f64>) -> Result<Self> {
        check_len("n", n.len(), highres.sub_edge_count())?;
        check_len("theta", theta.len(), highres.parent().edge_count())?;
        let qr = highres.sub_edge_count();
        let basis = (0..highres.parent().edge_count())
            .map(|i| {
                let mut d = vec![0.0; qr];
                for k in highres.block(i) {
                    d[k] = 1.0 / n[k];
                }
                SymMatrix::from_diagonal(&d)
            })
            .collect();
        Ok(CovarianceModel::LinearFamily { basis, theta })
    }

    pub fn dim(&self) -> usize {
        match self {
            CovarianceModel::DiagonalPerEdge { n, .. } => n.len(),
            CovarianceModel::LinearFamily { basis, .. } => basis.first().map_or(0, |b| b.dim()),
        }
    }

    pub fn matrix(&self) -> SymMatrix {
        match self {
            CovarianceModel::DiagonalPerEdge { sigma2, n, edge_of } => {
                let d: Vec<f64> = edge_of.iter().zip(n).map(|(&e, &nk)| sigma2[e] / nk).collect();
                SymMatrix::from_diagonal(&d)
            }
            CovarianceModel::LinearFamily { basis, theta } => {
                let dim = self.dim();
                let mut m = DMatrix::zeros(dim, dim);
                for (e, t) in basis.iter().zip(theta) {
                    m += e.matrix() * *t;
                }
                SymMatrix::from_symmetric(m)
            }
        }
    }

    pub fn theta(&self) -> &[f64] {
        match self {
            CovarianceModel::DiagonalPerEdge { sigma2, .. } => sigma2,
            CovarianceModel::LinearFamily { theta, .. } => theta,
        }
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::DimensionMismatch(format!("{what} has {got} entries, expected {want}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    HighResolution,
    Original,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub covariance: SymMatrix,
    pub level: Level,
}

impl GaussianPosterior {
    pub fn sd(&self) -> Vec<f64> {
        self.covariance.matrix().diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

/// Per-sub-edge sample sizes and sample means.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub n: Vec<f64>,
    pub mean: DVector<f64>,
}

impl Observations {
    pub fn new(n: Vec<f64>, mean: Vec<f64>) -> Result<Self> {
        check_len("means", mean.len(), n.len())?;
        if let Some(k) = n.iter().position(|&v| !(v >= 1.0)) {
            return Err(Error::InvalidParameter(format!("sub-edge {} has n < 1", k + 1)));
        }
        if let Some(k) = mean.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("sub-edge {} has a non-finite mean", k + 1)));
        }
        Ok(Observations { n, mean: DVector::from_vec(mean) })
    }
}

/// H = (I + λ Σ L̄)^{-1}.
pub fn smoother(lambda: f64, cov: &CovarianceModel, lbar: &SymMatrix) -> Result<DMatrix<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("λ must be finite and non-negative, got {lambda}")));
    }
    check_len("covariance", cov.dim(), lbar.dim())?;
    let q = lbar.dim();
    if lambda == 0.0 {
        return Ok(DMatrix::identity(q, q));
    }
    let a = DMatrix::identity(q, q) + cov.matrix().matrix() * lbar.matrix() * lambda;
    inverse(&a)
}

/// Posterior N(H x, H Σ); equal to (Σ^{-1} + λ L̄)^{-1} for positive definite Σ.
pub fn posterior(
    lambda: f64,
    cov: &CovarianceModel,
    lbar: &SymMatrix,
    x: &DVector<f64>,
) -> Result<GaussianPosterior> {
    if !(lambda > 0.0) {
        return Err(Error::NonPositiveLambda);
    }
    check_len("data", x.len(), lbar.dim())?;
    let h = smoother(lambda, cov, lbar)?;
    Ok(posterior_from_smoother(&h, &cov.matrix(), x))
}

fn posterior_from_smoother(h: &DMatrix<f64>, sigma: &SymMatrix, x: &DVector<f64>) -> GaussianPosterior {
    GaussianPosterior {
        mean: h * x,
        covariance: SymMatrix::from_symmetric(h * sigma.matrix()),
        level: Level::HighResolution,
    }
}

/// H(λ, 1) = (I + λ N^{-1} L̄)^{-1}.
fn unit_smoother(lambda: f64, highres: &HighResGraph, n: &[f64]) -> Result<DMatrix<f64>> {
    let cov = CovarianceModel::diagonal(highres, vec![1.0; highres.parent().edge_count()], n.to_vec())?;
    smoother(lambda, &cov, highres.line_laplacian())
}

/// Closed-form per-edge variance estimates at smoothing level `lambda`:
/// σ̂_i² = Σ_{k∈i} n_k [(I - H)x]_k² / tr((I - H)_ii) with H = H(λ, 1).
pub fn eb_variances(x: &DVector<f64>, highres: &HighResGraph, lambda: f64, n: &[f64]) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::NonPositiveLambda);
    }
    check_len("data", x.len(), highres.sub_edge_count())?;
    let h = unit_smoother(lambda, highres, n)?;
    variances_from_smoother(x, highres, &h, n)
}

fn variances_from_smoother(
    x: &DVector<f64>,
    highres: &HighResGraph,
    h: &DMatrix<f64>,
    n: &[f64],
) -> Result<Vec<f64>> {
    let resid = x - h * x;
    (0..highres.parent().edge_count())
        .map(|i| {
            let block = highres.block(i);
            let tr: f64 = block.clone().map(|k| 1.0 - h[(k, k)]).sum();
            if tr <= TRACE_EPS {
                return Err(Error::DegenerateSmoother);
            }
            let ss: f64 = block.map(|k| n[k] * resid[k] * resid[k]).sum();
            Ok(ss / tr)
        })
        .collect()
}

/// Sub-edge-weighted mean of per-edge variances.
pub fn pooled_variance(highres: &HighResGraph, sigma2: &[f64]) -> f64 {
    let total: f64 = (0..sigma2.len()).map(|i| sigma2[i] * highres.block(i).len() as f64).sum();
    total / highres.sub_edge_count() as f64
}

/// Variances rescaled by their pooled mean (all ones when the pool is zero).
fn relative_variances(highres: &HighResGraph, sigma2: &[f64]) -> Vec<f64> {
    let pool = pooled_variance(highres, sigma2);
    if pool > 0.0 {
        sigma2.iter().map(|s| s / pool).collect()
    } else {
        vec![1.0; sigma2.len()]
    }
}

/// How θ̂(λ) is obtained inside GCV and the final posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum VarianceEstimator {
    ClosedForm,
    FixedPoint { max_iter: usize, tol: f64 },
}

impl Default for VarianceEstimator {
    fn default() -> Self {
        VarianceEstimator::ClosedForm
    }
}

/// Everything produced at one smoothing level.
#[derive(Debug, Clone)]
pub struct SmoothingFit {
    pub lambda: f64,
    pub sigma2: Vec<f64>,
    pub prior_precision: Option<f64>,
    pub smoother: DMatrix<f64>,
    pub gcv: f64,
}

/// Evaluates the variance estimate, the smoother H(λ, θ̂(λ)) and GCV at one level.
pub fn fit_at(
    lambda: f64,
    x: &DVector<f64>,
    highres: &HighResGraph,
    n: &[f64],
    estimator: VarianceEstimator,
) -> Result<SmoothingFit> {
    let mut sigma2 = eb_variances(x, highres, lambda, n).map_err(|e| match e {
        Error::DegenerateSmoother => Error::GcvUndefined,
        other => other,
    })?;
    let mut pool = pooled_variance(highres, &sigma2);
    if let VarianceEstimator::FixedPoint { max_iter, tol } = estimator {
        if pool > 0.0 {
            let family = CovarianceModel::diagonal_family(highres, n, sigma2.clone())?;
            let fp = eb_fixed_point(x, &family, highres.line_laplacian(), lambda / pool, max_iter, tol)?;
            sigma2 = fp.model.theta().to_vec();
            pool = pooled_variance(highres, &sigma2);
        }
    }
    let rel = CovarianceModel::diagonal(highres, relative_variances(highres, &sigma2), n.to_vec())?;
    let h = smoother(lambda, &rel, highres.line_laplacian())?;
    let gcv = gcv_from_smoother(x, &h)?;
    Ok(SmoothingFit {
        lambda,
        sigma2,
        prior_precision: (pool > 0.0).then(|| lambda / pool),
        smoother: h,
        gcv,
    })
}

fn gcv_from_smoother(x: &DVector<f64>, h: &DMatrix<f64>) -> Result<f64> {
    let q = x.len() as f64;
    let tr: f64 = (0..x.len()).map(|k| 1.0 - h[(k, k)]).sum();
    if tr <= TRACE_EPS {
        return Err(Error::GcvUndefined);
    }
    // H fixes constants, so centring first only removes cancellation error
    let xc = x.add_scalar(-x.mean());
    let resid = &xc - h * &xc;
    Ok((resid.norm_squared() / q) / (tr / q).powi(2))
}

/// GCV(λ) = [q_r^{-1} ‖(I - H)x‖²] / [q_r^{-1} tr(I - H)]² with H = H(λ, θ̂(λ)).
pub fn gcv(lambda: f64, x: &DVector<f64>, highres: &HighResGraph, n: &[f64]) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::GcvUndefined);
    }
    Ok(fit_at(lambda, x, highres, n, VarianceEstimator::ClosedForm)?.gcv)
}

/// `count` log-spaced points on [min, max].
pub fn log_grid(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0) || !(max >= min) || count == 0 || !max.is_finite() {
        return Err(Error::InvalidParameter(format!("bad grid [{min}, {max}] x {count}")));
    }
    if count == 1 {
        return Ok(vec![min]);
    }
    let (a, b) = (min.ln(), max.ln());
    Ok((0..count)
        .map(|k| {
            if k == count - 1 {
                max
            } else {
                (a + (b - a) * k as f64 / (count - 1) as f64).exp()
            }
        })
        .collect())
}

/// Default grid: 40 log-spaced levels on [n, 10 n max(min r, 1)²], n the smallest sample size.
pub fn default_grid(highres: &HighResGraph, n: &[f64]) -> Vec<f64> {
    let n_min = n.iter().copied().fold(f64::INFINITY, f64::min);
    let r_min = highres.resolution().r.iter().copied().min().unwrap_or(0).max(1) as f64;
    log_grid(n_min, 10.0 * n_min * r_min * r_min, DEFAULT_GRID_POINTS).expect("n >= 1 gives a valid grid")
}

/// Picks the grid level with the smallest GCV (ties to the smaller level).
/// Levels where GCV is undefined are skipped.
pub fn select_lambda(
    grid: &[f64],
    x: &DVector<f64>,
    highres: &HighResGraph,
    n: &[f64],
) -> Result<(f64, Vec<(f64, f64)>)> {
    let (best, curve) = scan_grid(grid, x, highres, n, VarianceEstimator::ClosedForm)?;
    Ok((best.lambda, curve))
}

fn scan_grid(
    grid: &[f64],
    x: &DVector<f64>,
    highres: &HighResGraph,
    n: &[f64],
    estimator: VarianceEstimator,
) -> Result<(SmoothingFit, Vec<(f64, f64)>)> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty λ grid".into()));
    }
    if grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("λ grid must be positive and ascending".into()));
    }
    let mut best: Option<SmoothingFit> = None;
    let mut curve = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let fit = match fit_at(lambda, x, highres, n, estimator) {
            Ok(f) => f,
            Err(Error::GcvUndefined) => continue,
            Err(e) => return Err(e),
        };
        curve.push((lambda, fit.gcv));
        if best.as_ref().map_or(true, |b| fit.gcv < b.gcv) {
            best = Some(fit);
        }
    }
    best.map(|b| (b, curve)).ok_or(Error::GcvUndefined)
}

/// Result of [`eb_fixed_point`].
#[derive(Debug, Clone)]
pub struct FixedPointResult {
    pub model: CovarianceModel,
    pub iterations: usize,
    pub residual: f64,
    /// Components whose estimate sits on the boundary θ_k = 0. There the
    /// likelihood still rises towards zero (quad_k <= trace_k), so no
    /// stationary point exists for them.
    pub at_zero: Vec<usize>,
}

/// Q = Σ^{-1}(I - H), written as λ (I + λ L̄ Σ)^{-1} L̄ so that it stays
/// defined when some θ_k is zero.
fn restricted_precision(sigma: &SymMatrix, lbar: &SymMatrix, lambda: f64) -> Result<SymMatrix> {
    let q = lbar.dim();
    let m = DMatrix::identity(q, q) + lbar.matrix() * sigma.matrix() * lambda;
    Ok(SymMatrix::from_symmetric(inverse(&m)? * lbar.matrix() * lambda))
}

/// Per-coordinate stationarity terms of the restricted likelihood at θ:
/// `quad_k = xᵀ Q E_k Q x` and `trace_k = tr(Q E_k)` with Q = Σ^{-1}(I - H).
/// For positive definite Σ, Q x = Σ^{-1} r with r = (I - H) x. At an interior
/// stationary point they agree for every k.
pub fn stationarity_terms(
    x: &DVector<f64>,
    cov: &CovarianceModel,
    lbar: &SymMatrix,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let CovarianceModel::LinearFamily { basis, .. } = cov else {
        return Err(Error::InvalidParameter("stationarity terms need a linear family".into()));
    };
    if !(lambda > 0.0) {
        return Err(Error::NonPositiveLambda);
    }
    check_len("data", x.len(), lbar.dim())?;
    let q = restricted_precision(&cov.matrix(), lbar, lambda)?;
    let qx = q.matrix() * x;
    Ok(basis
        .iter()
        .map(|e| (qx.dot(&(e.matrix() * &qx)), q.matrix().component_mul(e.matrix()).sum()))
        .unzip())
}

struct RemlState {
    q: SymMatrix,
    quad: Vec<f64>,
    trace: Vec<f64>,
    loglik: f64,
}

/// Restricted log-likelihood ½ log det₊ Q - ½ xᵀ Q x (up to a constant) and
/// its stationarity terms. `rank` is the rank of L̄, which Q shares.
fn reml_state(
    x: &DVector<f64>,
    basis: &[SymMatrix],
    theta: &[f64],
    lbar: &SymMatrix,
    lambda: f64,
    rank: usize,
) -> Result<RemlState> {
    let sigma = CovarianceModel::LinearFamily { basis: basis.to_vec(), theta: theta.to_vec() }.matrix();
    let q = restricted_precision(&sigma, lbar, lambda)?;
    let qx = q.matrix() * x;
    let (quad, trace) =
        basis.iter().map(|e| (qx.dot(&(e.matrix() * &qx)), q.matrix().component_mul(e.matrix()).sum())).unzip();
    let eig = sym_eigenvalues(&q)?;
    let top = &eig[eig.len() - rank..];
    let loglik = if top.iter().all(|&v| v > 0.0) {
        0.5 * top.iter().map(|v| v.ln()).sum::<f64>() - 0.5 * x.dot(&qx)
    } else {
        f64::NEG_INFINITY
    };
    Ok(RemlState { q, quad, trace, loglik })
}

/// Largest violation of the stationarity (interior) or sign (boundary)
/// conditions, as a fraction of trace_k.
fn kkt_residual(theta: &[f64], quad: &[f64], trace: &[f64]) -> f64 {
    (0..theta.len())
        .map(|k| {
            let g = quad[k] / trace[k] - 1.0;
            if theta[k] > 0.0 {
                g.abs()
            } else {
                g.max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Empirical-Bayes estimate of θ ≥ 0 for a linear covariance family at prior
/// precision `lambda`, starting from the family's θ.
///
/// Maximizes the restricted likelihood by projected Fisher scoring with
/// step halving. At an interior optimum quad_k = trace_k for every k (see
/// [`stationarity_terms`]); the returned residual is max_k |quad_k / trace_k - 1|
/// over interior components, and components held at zero only need
/// quad_k <= trace_k.
pub fn eb_fixed_point(
    x: &DVector<f64>,
    family: &CovarianceModel,
    lbar: &SymMatrix,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<FixedPointResult> {
    let CovarianceModel::LinearFamily { basis, theta } = family else {
        return Err(Error::InvalidParameter("fixed point needs a linear family".into()));
    };
    if !(lambda > 0.0) {
        return Err(Error::NonPositiveLambda);
    }
    check_len("data", x.len(), lbar.dim())?;
    if theta.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) || theta.iter().all(|&t| t == 0.0) {
        return Err(Error::InvalidParameter("starting θ must be non-negative and not all zero".into()));
    }
    let rank = {
        let eig = sym_eigenvalues(lbar)?;
        let top = eig.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        eig.iter().filter(|&&v| v > 1e-10 * top).count()
    };
    if rank == 0 {
        return Err(Error::DegenerateSmoother);
    }
    let mut theta = theta.clone();
    let mut state = reml_state(x, basis, &theta, lbar, lambda, rank)?;
    let mut residual = f64::INFINITY;
    let mut done = 0;
    for iter in 0..=max_iter {
        done = iter;
        if state.trace.iter().any(|&t| t <= TRACE_EPS) {
            return Err(Error::DegenerateSmoother);
        }
        residual = kkt_residual(&theta, &state.quad, &state.trace);
        if residual <= tol {
            let at_zero = (0..theta.len()).filter(|&k| theta[k] == 0.0).collect();
            let model = CovarianceModel::LinearFamily { basis: basis.clone(), theta };
            return Ok(FixedPointResult { model, iterations: iter, residual, at_zero });
        }
        if iter == max_iter {
            break;
        }

        // free set: interior components plus boundary ones that want to grow
        let free: Vec<usize> =
            (0..theta.len()).filter(|&k| theta[k] > 0.0 || state.quad[k] > state.trace[k]).collect();
        let qe: Vec<DMatrix<f64>> = free.iter().map(|&k| state.q.matrix() * basis[k].matrix()).collect();
        let m = free.len();
        let info = DMatrix::from_fn(m, m, |a, b| 0.5 * qe[a].component_mul(&qe[b].transpose()).sum());
        let score = DVector::from_fn(m, |a, _| 0.5 * (state.quad[free[a]] - state.trace[free[a]]));
        let step = match solve_spd(&SymMatrix::from_symmetric(info.clone()), &DMatrix::from_column_slice(m, 1, score.as_slice())) {
            Ok(s) => s.column(0).into_owned(),
            // flat directions: fall back to a scaled gradient step
            Err(_) => score.clone() / info.diagonal().max().max(f64::MIN_POSITIVE),
        };

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let mut cand = theta.clone();
            for (a, &k) in free.iter().enumerate() {
                cand[k] = (theta[k] + t * step[a]).max(0.0);
            }
            let next = reml_state(x, basis, &cand, lbar, lambda, rank)?;
            // close to the optimum the likelihood change drops below
            // rounding noise, so a smaller residual also counts
            let better = next.loglik >= state.loglik - 1e-12 * (1.0 + state.loglik.abs())
                || kkt_residual(&cand, &next.quad, &next.trace) < residual;
            if better {
                accepted = Some((cand, next));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, next)) = accepted else { break };
        theta = cand;
        state = next;
    }
    Err(Error::NoConvergence { iterations: done, residual })
}

/// Posterior on G: mean S m, covariance S C Sᵀ.
pub fn project_posterior(posterior_hr: &GaussianPosterior, highres: &HighResGraph) -> Result<GaussianPosterior> {
    if posterior_hr.level != Level::HighResolution {
        return Err(Error::LevelMismatch { expected: "high_resolution".into(), found: "original".into() });
    }
    check_len("posterior", posterior_hr.mean.len(), highres.sub_edge_count())?;
    let s = highres.projection();
    Ok(GaussianPosterior {
        mean: s * &posterior_hr.mean,
        covariance: SymMatrix::from_symmetric(s * posterior_hr.covariance.matrix() * s.transpose()),
        level: Level::Original,
    })
}

/// Mean and variance of the total expected time along `path` (edge indices).
pub fn path_posterior(posterior_g: &GaussianPosterior, path: &[usize]) -> Result<(f64, f64)> {
    if posterior_g.level != Level::Original {
        return Err(Error::LevelMismatch { expected: "original".into(), found: "high_resolution".into() });
    }
    if path.is_empty() {
        return Err(Error::InvalidQuery("empty path".into()));
    }
    let q = posterior_g.mean.len();
    if let Some(&bad) = path.iter().find(|&&e| e >= q) {
        return Err(Error::OutOfRange(format!("edge {} of {q}", bad + 1)));
    }
    let c = posterior_g.covariance.matrix();
    let mean = path.iter().map(|&e| posterior_g.mean[e]).sum();
    let mut var = 0.0;
    for &a in path {
        for &b in path {
            var += c[(a, b)];
        }
    }
    Ok((mean, var.max(0.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    /// Smoothing levels to scan; `None` uses [`default_grid`].
    pub grid: Option<Vec<f64>>,
    /// `false` forces λ = 0 (H = I) and skips GCV.
    pub smoothing: bool,
    pub estimator: VarianceEstimator,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { grid: None, smoothing: true, estimator: VarianceEstimator::ClosedForm }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    /// Selected smoothing level (0 without smoothing).
    pub lambda_hat: f64,
    /// λ̂ / σ̄²; `None` when every variance estimate is zero or without smoothing.
    pub prior_precision: Option<f64>,
    pub sigma2_hat: Vec<f64>,
    /// Σ̂ on the sub-edges.
    pub covariance: CovarianceModel,
    /// H at the selected level.
    pub smoother: DMatrix<f64>,
    pub posterior_hr: GaussianPosterior,
    pub posterior_g: GaussianPosterior,
    pub gcv_curve: Vec<(f64, f64)>,
}

impl PipelineResult {
    /// Sampling covariance of the per-edge estimator, S H Σ̂ Hᵀ Sᵀ.
    pub fn estimator_covariance(&self, highres: &HighResGraph) -> SymMatrix {
        let s = highres.projection();
        let sh = s * &self.smoother;
        SymMatrix::from_symmetric(&sh * self.covariance.matrix().matrix() * sh.transpose())
    }
}

/// Refines `graph` and runs [`estimate`].
pub fn estimate_pipeline(
    graph: &Graph,
    resolution: &ResolutionSpec,
    observations: &Observations,
    grid: Option<&[f64]>,
) -> Result<PipelineResult> {
    let highres = refine(graph, resolution)?;
    let opts = PipelineOptions { grid: grid.map(|g| g.to_vec()), ..Default::default() };
    estimate(&highres, observations, &opts)
}

/// Select λ by GCV, estimate variances at λ̂, form the posterior and project it to G.
pub fn estimate(highres: &HighResGraph, obs: &Observations, opts: &PipelineOptions) -> Result<PipelineResult> {
    check_len("observations", obs.n.len(), highres.sub_edge_count())?;
    let x = &obs.mean;
    let n = &obs.n;
    let grid = opts.grid.clone().unwrap_or_else(|| default_grid(highres, n));

    if !opts.smoothing {
        let sigma2 = eb_variances(x, highres, grid[0], n)?;
        let covariance = CovarianceModel::diagonal(highres, sigma2.clone(), n.clone())?;
        let q = x.len();
        let posterior_hr = GaussianPosterior {
            mean: x.clone(),
            covariance: covariance.matrix(),
            level: Level::HighResolution,
        };
        let posterior_g = project_posterior(&posterior_hr, highres)?;
        return Ok(PipelineResult {
            lambda_hat: 0.0,
            prior_precision: None,
            sigma2_hat: sigma2,
            covariance,
            smoother: DMatrix::identity(q, q),
            posterior_hr,
            posterior_g,
            gcv_curve: Vec::new(),
        });
    }

    let (best, gcv_curve) = scan_grid(&grid, x, highres, n, opts.estimator)?;
    let covariance = CovarianceModel::diagonal(highres, best.sigma2.clone(), n.clone())?;
    let posterior_hr = posterior_from_smoother(&best.smoother, &covariance.matrix(), x);
    let posterior_g = project_posterior(&posterior_hr, highres)?;
    Ok(PipelineResult {
        lambda_hat: best.lambda,
        prior_precision: best.prior_precision,
        sigma2_hat: best.sigma2,
        covariance,
        smoother: best.smoother,
        posterior_hr,
        posterior_g,
        gcv_curve,
    })
}
