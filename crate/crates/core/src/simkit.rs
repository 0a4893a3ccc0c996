//! Ground truth from velocity profiles, observation sampling and the Monte
//! Carlo error harness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{estimate, Observations, PipelineOptions};
use crate::error::{Error, Result};
use crate::netgraph::{refine, Graph, HighResGraph, ResolutionSpec};

const QUAD_TOL: f64 = 1e-8;

fn default_v_low() -> f64 {
    20.0
}

fn default_ramp() -> f64 {
    0.25
}

/// Expected speed (km/h) along an edge as a function of relative position
/// x in [0, 1], measured from the smaller-numbered endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VelocityProfile {
    Constant {
        v: f64,
    },
    /// `v_low` at both ends, ramping linearly to `v_high` on [ramp, 1 - ramp].
    Trapezoid {
        #[serde(default = "default_v_low")]
        v_low: f64,
        v_high: f64,
        #[serde(default = "default_ramp")]
        ramp: f64,
    },
    /// Linear interpolation through (breakpoints[k], values[k]); breakpoints
    /// run from 0 to 1.
    Piecewise { breakpoints: Vec<f64>, values: Vec<f64> },
}

impl VelocityProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match self {
            VelocityProfile::Constant { v } => {
                if !(*v > 0.0 && v.is_finite()) {
                    return bad(format!("non-positive velocity {v}"));
                }
            }
            VelocityProfile::Trapezoid { v_low, v_high, ramp } => {
                if !(*v_low > 0.0 && *v_high > 0.0 && v_low.is_finite() && v_high.is_finite()) {
                    return bad(format!("non-positive velocity in trapezoid ({v_low}, {v_high})"));
                }
                if !(*ramp > 0.0 && *ramp < 0.5) {
                    return bad(format!("trapezoid ramp {ramp} outside (0, 0.5)"));
                }
            }
            VelocityProfile::Piecewise { breakpoints, values } => {
                if breakpoints.len() < 2 || breakpoints.len() != values.len() {
                    return bad("piecewise profile needs matching breakpoints and values (at least 2)".into());
                }
                if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != 1.0 {
                    return bad("piecewise breakpoints must start at 0 and end at 1".into());
                }
                if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
                    return bad("piecewise breakpoints must increase".into());
                }
                if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return bad("non-positive velocity in piecewise profile".into());
                }
            }
        }
        Ok(())
    }

    pub fn speed(&self, x: f64) -> f64 {
        match self {
            VelocityProfile::Constant { v } => *v,
            VelocityProfile::Trapezoid { v_low, v_high, ramp } => {
                let d = x.min(1.0 - x);
                if d >= *ramp {
                    *v_high
                } else {
                    v_low + (v_high - v_low) * d / ramp
                }
            }
            VelocityProfile::Piecewise { breakpoints, values } => {
                let k = breakpoints.partition_point(|&b| b <= x).clamp(1, breakpoints.len() - 1);
                let (x0, x1) = (breakpoints[k - 1], breakpoints[k]);
                let w = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
                values[k - 1] + (values[k] - values[k - 1]) * w
            }
        }
    }

    /// Points where the profile has a kink.
    fn kinks(&self) -> Vec<f64> {
        match self {
            VelocityProfile::Constant { .. } => vec![],
            VelocityProfile::Trapezoid { ramp, .. } => vec![*ramp, 1.0 - ramp],
            VelocityProfile::Piecewise { breakpoints, .. } => breakpoints.clone(),
        }
    }

    /// Seconds to traverse [a, b] of an edge of `length_km`.
    pub fn travel_time(&self, length_km: f64, a: f64, b: f64) -> f64 {
        let f = |x: f64| 3600.0 * length_km / self.speed(x);
        let mut cuts = vec![a];
        cuts.extend(self.kinks().into_iter().filter(|&k| k > a && k < b));
        cuts.push(b);
        cuts.windows(2).map(|w| adaptive_simpson(&f, w[0], w[1], QUAD_TOL)).sum()
    }
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    let tol = rel_tol * whole.abs().max(f64::MIN_POSITIVE);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 50)
}

/// Expected seconds on each sub-edge: ∫ length / v(x) dx over its share of the edge.
pub fn ground_truth_means(graph: &Graph, resolution: &ResolutionSpec, profiles: &[VelocityProfile]) -> Result<Vec<f64>> {
    if profiles.len() != graph.edge_count() || resolution.r.len() != graph.edge_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} profiles and {} resolutions for {} edges",
            profiles.len(),
            resolution.r.len(),
            graph.edge_count()
        )));
    }
    for (i, p) in profiles.iter().enumerate() {
        p.validate().map_err(|e| Error::InvalidParameter(format!("edge {}: {e}", i + 1)))?;
    }
    let mut out = Vec::new();
    for (i, e) in graph.edges().iter().enumerate() {
        let parts = resolution.r[i] + 1;
        for j in 0..parts {
            let a = j as f64 / parts as f64;
            let b = (j + 1) as f64 / parts as f64;
            out.push(profiles[i].travel_time(e.length_km, a, b));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Expected seconds per sub-edge.
    pub mu_r: Vec<f64>,
    /// Single-observation variance per sub-edge (s²).
    pub sub_variance: Vec<f64>,
    /// Travel-time variance per edge (s²); the sub-edge variances of an edge add up to it.
    pub edge_variance: Vec<f64>,
}

impl GroundTruth {
    /// σ per edge in s/km; the variance of an edge scales with its length.
    pub fn new(graph: &Graph, resolution: &ResolutionSpec, profiles: &[VelocityProfile], sigma_per_km: &[f64]) -> Result<Self> {
        if sigma_per_km.len() != graph.edge_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} sigmas for {} edges",
                sigma_per_km.len(),
                graph.edge_count()
            )));
        }
        if let Some(i) = sigma_per_km.iter().position(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!("edge {} has negative σ", i + 1)));
        }
        let mu_r = ground_truth_means(graph, resolution, profiles)?;
        let edge_variance: Vec<f64> =
            graph.edges().iter().zip(sigma_per_km).map(|(e, s)| s * s * e.length_km).collect();
        let mut sub_variance = Vec::with_capacity(mu_r.len());
        for (i, v) in edge_variance.iter().enumerate() {
            let parts = resolution.r[i] + 1;
            sub_variance.extend(std::iter::repeat_n(v / parts as f64, parts));
        }
        Ok(GroundTruth { mu_r, sub_variance, edge_variance })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleDistribution {
    #[default]
    Normal,
    Gamma,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub graph: Graph,
    pub resolution: ResolutionSpec,
    pub profiles: Vec<VelocityProfile>,
    pub sigma_per_km: Vec<f64>,
    /// Observations per sub-edge, given per edge.
    pub n: Vec<usize>,
    pub distribution: SampleDistribution,
    pub reps: usize,
    pub seed: u64,
    pub pipeline: PipelineOptions,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidParameter("at least one replication is required".into()));
        }
        if self.n.len() != self.graph.edge_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} sample sizes for {} edges",
                self.n.len(),
                self.graph.edge_count()
            )));
        }
        if let Some(i) = self.n.iter().position(|&n| n == 0) {
            return Err(Error::InvalidParameter(format!("edge {} has n = 0", i + 1)));
        }
        Ok(())
    }
}

/// Draws `n[k]` observations on every sub-edge and returns their means.
pub fn sample_observations<R: rand::Rng>(
    truth: &GroundTruth,
    n: &[usize],
    distribution: SampleDistribution,
    rng: &mut R,
) -> Result<Observations> {
    if n.len() != truth.mu_r.len() {
        return Err(Error::DimensionMismatch(format!("{} sample sizes for {} sub-edges", n.len(), truth.mu_r.len())));
    }
    let mut means = Vec::with_capacity(n.len());
    for (k, (&mu, &var)) in truth.mu_r.iter().zip(&truth.sub_variance).enumerate() {
        let count = n[k];
        if var == 0.0 {
            means.push(mu);
            continue;
        }
        let mut sum = 0.0;
        match distribution {
            SampleDistribution::Normal => {
                let d = Normal::new(mu, var.sqrt()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                for _ in 0..count {
                    sum += d.sample(rng);
                }
            }
            SampleDistribution::Gamma => {
                if !(mu > 0.0) {
                    return Err(Error::InvalidParameter(format!("gamma sampling needs a positive mean on sub-edge {}", k + 1)));
                }
                let (shape, rate) = gamma_parameters(mu, var);
                let d = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                for _ in 0..count {
                    sum += d.sample(rng);
                }
            }
        }
        means.push(sum / count as f64);
    }
    Observations::new(n.iter().map(|&c| c as f64).collect(), means)
}

/// Moment-matched (shape, rate): shape μ²/v, rate μ/v.
pub fn gamma_parameters(mean: f64, variance: f64) -> (f64, f64) {
    (mean * mean / variance, mean / variance)
}

/// Elementwise ((estimate - truth) / truth)².
pub fn rse(estimate: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!("{} estimates for {} truths", estimate.len(), truth.len())));
    }
    estimate
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(k, (e, t))| {
            if *t == 0.0 {
                Err(Error::InvalidParameter(format!("zero truth at entry {}", k + 1)))
            } else {
                Ok(((e - t) / t).powi(2))
            }
        })
        .collect()
}

/// Independent random stream for replication `index`.
pub fn replication_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub reps: usize,
    /// (edge, position) of each sub-edge, 0-based.
    pub sub_edges: Vec<(usize, usize)>,
    pub sub_mean_rse: Vec<f64>,
    pub sub_sd_rse: Vec<f64>,
    pub edge_mean_rse: Vec<f64>,
    /// Mean RSE over sub-edges and replications.
    pub global_mean_rse: f64,
    /// Mean of (μ̂_r - μ_r)² over sub-edges and replications, in s².
    pub global_mean_sq_error: f64,
    pub mean_lambda_hat: f64,
}

struct RepOutcome {
    sub_rse: Vec<f64>,
    edge_rse: Vec<f64>,
    sq_err: f64,
    lambda: f64,
}

/// Runs `config.reps` seeded replications of sample -> estimate -> RSE on the
/// current rayon pool and aggregates them in replication order.
pub fn run_monte_carlo(config: &SimConfig) -> Result<ErrorReport> {
    config.validate()?;
    let highres = refine(&config.graph, &config.resolution)?;
    let truth = GroundTruth::new(&config.graph, &config.resolution, &config.profiles, &config.sigma_per_km)?;
    let n_sub = highres.expand(&config.n);
    let truth_g: Vec<f64> = (0..config.graph.edge_count())
        .map(|i| highres.block(i).map(|k| truth.mu_r[k]).sum())
        .collect();

    let outcomes: Vec<Result<RepOutcome>> = (0..config.reps)
        .into_par_iter()
        .map(|index| {
            one_replication(config, &highres, &truth, &truth_g, &n_sub, index)
                .map_err(|e| Error::Replication { index, source: Box::new(e) })
        })
        .collect();
    let outcomes: Vec<RepOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    Ok(aggregate(&highres, &outcomes))
}

fn one_replication(
    config: &SimConfig,
    highres: &HighResGraph,
    truth: &GroundTruth,
    truth_g: &[f64],
    n_sub: &[usize],
    index: usize,
) -> Result<RepOutcome> {
    let mut rng = replication_rng(config.seed, index);
    let obs = sample_observations(truth, n_sub, config.distribution, &mut rng)?;
    let fit = estimate(highres, &obs, &config.pipeline)?;
    let est = fit.posterior_hr.mean.as_slice();
    let sq_err = est.iter().zip(&truth.mu_r).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / est.len() as f64;
    Ok(RepOutcome {
        sub_rse: rse(est, &truth.mu_r)?,
        edge_rse: rse(fit.posterior_g.mean.as_slice(), truth_g)?,
        sq_err,
        lambda: fit.lambda_hat,
    })
}

fn aggregate(highres: &HighResGraph, outcomes: &[RepOutcome]) -> ErrorReport {
    let m = outcomes.len() as f64;
    let qr = highres.sub_edge_count();
    let q = highres.parent().edge_count();
    let mut sub_mean = vec![0.0; qr];
    let mut edge_mean = vec![0.0; q];
    let (mut sq, mut lam) = (0.0, 0.0);
    for o in outcomes {
        for k in 0..qr {
            sub_mean[k] += o.sub_rse[k];
        }
        for i in 0..q {
            edge_mean[i] += o.edge_rse[i];
        }
        sq += o.sq_err;
        lam += o.lambda;
    }
    sub_mean.iter_mut().for_each(|v| *v /= m);
    edge_mean.iter_mut().for_each(|v| *v /= m);
    let mut sub_sd = vec![0.0; qr];
    if outcomes.len() > 1 {
        for o in outcomes {
            for k in 0..qr {
                sub_sd[k] += (o.sub_rse[k] - sub_mean[k]).powi(2);
            }
        }
        sub_sd.iter_mut().for_each(|v| *v = (*v / (m - 1.0)).sqrt());
    }
    ErrorReport {
        reps: outcomes.len(),
        sub_edges: highres.sub_edges().to_vec(),
        global_mean_rse: sub_mean.iter().sum::<f64>() / qr as f64,
        sub_mean_rse: sub_mean,
        sub_sd_rse: sub_sd,
        edge_mean_rse: edge_mean,
        global_mean_sq_error: sq / m,
        mean_lambda_hat: lam / m,
    }
}
