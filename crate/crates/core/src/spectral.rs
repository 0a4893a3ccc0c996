//! Numerical checks on the spectrum of the line-graph Laplacian of G_r and on
//! the series constants that govern the smoother's trace.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::netgraph::HighResGraph;
use crate::numkernel::{sym_eigenvalues, SymMatrix};

/// Zero threshold used when counting the rank of Δ.
const RANK_EPS: f64 = 1e-9;

fn require_positive_resolution(highres: &HighResGraph) -> Result<()> {
    if highres.resolution().r.iter().any(|&r| r == 0) {
        return Err(Error::ZeroResolution);
    }
    Ok(())
}

/// Sub-edges touching an original vertex: the first and last of each edge.
fn is_boundary(highres: &HighResGraph, k: usize) -> bool {
    let (i, j) = highres.sub_edges()[k];
    j == 0 || j == highres.resolution().r[i]
}

/// Block-diagonal approximation L̃_r: a path Laplacian on the r_i - 1 interior
/// sub-edges of each edge and the line-graph degree on every boundary
/// sub-edge. Kept in sub-edge order.
pub fn approx_laplacian(highres: &HighResGraph) -> Result<SymMatrix> {
    require_positive_resolution(highres)?;
    let qr = highres.sub_edge_count();
    let lbar = highres.line_laplacian().matrix();
    let mut m = DMatrix::zeros(qr, qr);
    for k in 0..qr {
        if is_boundary(highres, k) {
            m[(k, k)] = lbar[(k, k)];
        }
    }
    for i in 0..highres.parent().edge_count() {
        let block = highres.block(i);
        let interior: Vec<usize> = block.clone().skip(1).take(block.len().saturating_sub(2)).collect();
        for w in interior.windows(2) {
            let (a, b) = (w[0], w[1]);
            m[(a, b)] = -1.0;
            m[(b, a)] = -1.0;
            m[(a, a)] += 1.0;
            m[(b, b)] += 1.0;
        }
    }
    Ok(SymMatrix::from_symmetric(m))
}

/// Eigenvalues of L̃_r in closed form, ascending: 4 sin²(πk / (2(r_i - 1))),
/// k = 0..r_i-2, for each edge, plus the 2q boundary degrees.
pub fn approx_line_eigs(highres: &HighResGraph) -> Result<Vec<f64>> {
    require_positive_resolution(highres)?;
    let lbar = highres.line_laplacian().matrix();
    let mut out = Vec::with_capacity(highres.sub_edge_count());
    for &r in &highres.resolution().r {
        let m = r - 1;
        for k in 0..m {
            out.push(4.0 * (PI * k as f64 / (2.0 * m as f64)).sin().powi(2));
        }
    }
    for k in 0..highres.sub_edge_count() {
        if is_boundary(highres, k) {
            out.push(lbar[(k, k)]);
        }
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Exact eigenvalues of L̄_r, ascending.
pub fn exact_line_eigs(highres: &HighResGraph) -> Result<Vec<f64>> {
    sym_eigenvalues(highres.line_laplacian())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaDiagnostics {
    pub rank: usize,
    pub spectral_norm: f64,
    pub rank_bound: usize,
    pub norm_bound: f64,
    pub rank_ok: bool,
    pub norm_ok: bool,
}

impl DeltaDiagnostics {
    /// Errors if either bound is violated.
    pub fn check(&self) -> Result<()> {
        if !self.rank_ok {
            return Err(Error::BoundViolated(format!("rank(Δ) = {} > {}", self.rank, self.rank_bound)));
        }
        if !self.norm_ok {
            return Err(Error::BoundViolated(format!(
                "‖Δ‖₂ = {} > {}",
                self.spectral_norm, self.norm_bound
            )));
        }
        Ok(())
    }
}

/// Rank and spectral norm of Δ = L̄_r - L̃_r, measured against rank ≤ 6q and
/// ‖Δ‖₂ ≤ 2. The bounds are reported, not enforced; call
/// [`DeltaDiagnostics::check`] to turn a violation into an error.
pub fn delta_diagnostics(highres: &HighResGraph) -> Result<DeltaDiagnostics> {
    let approx = approx_laplacian(highres)?;
    let delta = SymMatrix::from_symmetric(highres.line_laplacian().matrix() - approx.matrix());
    let eig = sym_eigenvalues(&delta)?;
    let norm = eig.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let rank = eig.iter().filter(|v| v.abs() > RANK_EPS * norm.max(1.0)).count();
    let rank_bound = 6 * highres.parent().edge_count();
    let norm_bound = 2.0;
    Ok(DeltaDiagnostics {
        rank,
        spectral_norm: norm,
        rank_bound,
        norm_bound,
        rank_ok: rank <= rank_bound,
        norm_ok: norm <= norm_bound + 1e-9,
    })
}

/// Largest entrywise gap between sorted exact and approximate eigenvalues.
pub fn weyl_gap(exact: &[f64], approx: &[f64]) -> Result<f64> {
    if exact.len() != approx.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} eigenvalues", exact.len(), approx.len())));
    }
    Ok(exact.iter().zip(approx).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// κ_{s,t} = Γ(s - ½) Γ(t + ½) / (π Γ(t + s)).
pub fn kappa(s: u32, t: u32) -> Result<f64> {
    if s == 0 {
        return Err(Error::InvalidParameter("κ needs s ≥ 1".into()));
    }
    let (s, t) = (s as f64, t as f64);
    Ok((ln_gamma(s - 0.5) + ln_gamma(t + 0.5) - ln_gamma(t + s)).exp() / PI)
}

/// Σ_{j=1}^{r-1} h_j^s (1 - h_j)^t with h_j = 1 / (1 + λ_eff sin²(π(j-1)/(2r))).
pub fn series_sum(r: usize, lambda_eff: f64, s: u32, t: u32) -> f64 {
    (1..r)
        .map(|j| {
            let sn = (PI * (j - 1) as f64 / (2.0 * r as f64)).sin();
            let h = 1.0 / (1.0 + lambda_eff * sn * sn);
            h.powi(s as i32) * (1.0 - h).powi(t as i32)
        })
        .sum()
}

/// Relative error of the series against its limit r λ_eff^{-1/2} κ_{s,t},
/// with λ_eff = 4 λ σ² / n. Requires 100 ≤ λ ≤ r² / 100.
pub fn series_check(r: usize, lambda: f64, n: f64, sigma: f64, s: u32, t: u32) -> Result<f64> {
    if r < 2 || !(lambda >= 100.0) || lambda > (r * r) as f64 / 100.0 {
        return Err(Error::InvalidParameter(format!(
            "series check needs 100 ≤ λ ≤ r²/100 (r = {r}, λ = {lambda})"
        )));
    }
    if !(n > 0.0) || !(sigma > 0.0) {
        return Err(Error::InvalidParameter("n and σ must be positive".into()));
    }
    let lambda_eff = 4.0 * lambda * sigma * sigma / n;
    series_relative_error(r, lambda_eff, s, t)
}

/// Relative error of the series for a given effective λ.
pub fn series_relative_error(r: usize, lambda_eff: f64, s: u32, t: u32) -> Result<f64> {
    let target = r as f64 * lambda_eff.powf(-0.5) * kappa(s, t)?;
    Ok((series_sum(r, lambda_eff, s, t) - target).abs() / target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesCheck {
    pub s: u32,
    pub t: u32,
    pub r: usize,
    pub lambda_eff: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub exact_eigs: Vec<f64>,
    pub approx_eigs: Vec<f64>,
    pub weyl_gap: f64,
    pub delta: DeltaDiagnostics,
    pub series_checks: Vec<SeriesCheck>,
}

/// Eigenvalue comparison and Δ diagnostics for `highres`, plus the requested
/// series checks `(s, t, r, λ_eff)`.
pub fn spectral_report(highres: &HighResGraph, series: &[(u32, u32, usize, f64)]) -> Result<SpectralReport> {
    let approx_eigs = approx_line_eigs(highres)?;
    let exact_eigs = exact_line_eigs(highres)?;
    let weyl_gap = weyl_gap(&exact_eigs, &approx_eigs)?;
    let delta = delta_diagnostics(highres)?;
    let series_checks = series
        .iter()
        .map(|&(s, t, r, lambda_eff)| {
            Ok(SeriesCheck { s, t, r, lambda_eff, relative_error: series_relative_error(r, lambda_eff, s, t)? })
        })
        .collect::<Result<_>>()?;
    Ok(SpectralReport { exact_eigs, approx_eigs, weyl_gap, delta, series_checks })
}
