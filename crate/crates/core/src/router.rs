//! Route choice on the estimated network: simple-path enumeration, the five
//! disutilities and Monte Carlo selection experiments.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf_inv;

use crate::bayes::{estimate, PipelineResult};
use crate::error::{Error, Result};
use crate::netgraph::{refine, Graph, HighResGraph};
use crate::simkit::{replication_rng, sample_observations, GroundTruth, SimConfig};

/// Origin and destination are 0-based vertices; explicit paths are lists of
/// 0-based edge indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RouteQuery {
    pub origin: usize,
    pub destination: usize,
    pub candidate_paths: Option<Vec<Vec<usize>>>,
    /// Defaults to the vertex count.
    pub max_hops: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Expected seconds per km.
    #[default]
    TimePerKm,
    /// Expected km/h.
    Velocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisutilitySpec {
    ExpectedTime,
    PosteriorQuantile { q: f64 },
    EstimatorQuantile { q: f64 },
    SumSqConsecutiveDiff {
        #[serde(default)]
        basis: Basis,
    },
    MeanSqConsecutiveDiff {
        #[serde(default)]
        basis: Basis,
    },
}

impl DisutilitySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DisutilitySpec::PosteriorQuantile { q } | DisutilitySpec::EstimatorQuantile { q } if !(*q > 0.0 && *q < 1.0) => {
                Err(Error::InvalidParameter(format!("quantile {q} outside (0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

/// Standard normal quantile.
pub fn normal_quantile(q: f64) -> f64 {
    std::f64::consts::SQRT_2 * erf_inv(2.0 * q - 1.0)
}

/// Walks `path` from `origin`; returns the vertex sequence if the path is simple.
fn walk(graph: &Graph, origin: usize, path: &[usize]) -> Result<Vec<usize>> {
    let mut at = origin;
    let mut visited = vec![origin];
    for &e in path {
        if e >= graph.edge_count() {
            return Err(Error::InvalidQuery(format!("edge {} does not exist", e + 1)));
        }
        let edge = graph.edge(e);
        at = if edge.u == at {
            edge.v
        } else if edge.v == at {
            edge.u
        } else {
            return Err(Error::InvalidQuery(format!("edge {} does not continue from vertex {}", e + 1, at + 1)));
        };
        if visited.contains(&at) {
            return Err(Error::InvalidQuery(format!("path revisits vertex {}", at + 1)));
        }
        visited.push(at);
    }
    Ok(visited)
}

/// All simple origin-destination paths with at most `max_hops` edges, in
/// lexicographic order of their edge-index sequences; or the validated
/// explicit candidate list.
pub fn enumerate_paths(graph: &Graph, query: &RouteQuery) -> Result<Vec<Vec<usize>>> {
    let p = graph.vertex_count();
    if query.origin >= p || query.destination >= p {
        return Err(Error::InvalidQuery("vertex out of range".into()));
    }
    if query.origin == query.destination {
        return Err(Error::InvalidQuery("origin equals destination".into()));
    }
    if let Some(paths) = &query.candidate_paths {
        if paths.is_empty() {
            return Err(Error::InvalidQuery("empty candidate list".into()));
        }
        for (k, path) in paths.iter().enumerate() {
            if path.is_empty() {
                return Err(Error::InvalidQuery(format!("candidate {} is empty", k + 1)));
            }
            let verts = walk(graph, query.origin, path)?;
            if *verts.last().unwrap() != query.destination {
                return Err(Error::InvalidQuery(format!("candidate {} does not reach the destination", k + 1)));
            }
        }
        return Ok(paths.clone());
    }
    let max_hops = query.max_hops.unwrap_or(p);
    if max_hops == 0 {
        return Err(Error::InvalidQuery("max_hops must be at least 1".into()));
    }
    let mut inc = graph.incidence();
    for list in &mut inc {
        list.sort_by_key(|&(_, e)| e);
    }
    let mut out = Vec::new();
    let mut on_path = vec![false; p];
    let mut edges = Vec::new();
    on_path[query.origin] = true;
    dfs(&inc, query.origin, query.destination, max_hops, &mut on_path, &mut edges, &mut out);
    if out.is_empty() {
        return Err(Error::DisconnectedQuery);
    }
    Ok(out)
}

fn dfs(
    inc: &[Vec<(usize, usize)>],
    at: usize,
    target: usize,
    budget: usize,
    on_path: &mut [bool],
    edges: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if at == target {
        out.push(edges.clone());
        return;
    }
    if budget == 0 {
        return;
    }
    for &(next, e) in &inc[at] {
        if on_path[next] {
            continue;
        }
        on_path[next] = true;
        edges.push(e);
        dfs(inc, next, target, budget - 1, on_path, edges, out);
        edges.pop();
        on_path[next] = false;
    }
}

/// Per-estimate quantities shared by every path.
pub struct PathScorer<'a> {
    result: &'a PipelineResult,
    lengths: Vec<f64>,
    estimator_cov: Option<DMatrix<f64>>,
}

impl<'a> PathScorer<'a> {
    pub fn new(result: &'a PipelineResult, highres: &HighResGraph, spec: &DisutilitySpec) -> Self {
        let estimator_cov = matches!(spec, DisutilitySpec::EstimatorQuantile { .. })
            .then(|| result.estimator_covariance(highres).into_inner());
        PathScorer { result, lengths: highres.parent().lengths(), estimator_cov }
    }

    pub fn score(&self, spec: &DisutilitySpec, path: &[usize]) -> Result<f64> {
        if path.is_empty() {
            return Err(Error::InvalidQuery("empty path".into()));
        }
        let m = &self.result.posterior_g.mean;
        let mean: f64 = path.iter().map(|&e| m[e]).sum();
        let quadratic = |c: &DMatrix<f64>| -> Result<f64> {
            let mut v = 0.0;
            for &a in path {
                for &b in path {
                    v += c[(a, b)];
                }
            }
            if v < -1e-9 * (1.0 + mean.abs()) {
                return Err(Error::NegativeEigenvalue(v));
            }
            Ok(v.max(0.0))
        };
        let g = |e: usize, basis: Basis| match basis {
            Basis::TimePerKm => m[e] / self.lengths[e],
            Basis::Velocity => 3600.0 * self.lengths[e] / m[e],
        };
        let sum_sq = |basis: Basis| -> f64 { path.windows(2).map(|w| (g(w[0], basis) - g(w[1], basis)).powi(2)).sum() };
        Ok(match *spec {
            DisutilitySpec::ExpectedTime => mean,
            DisutilitySpec::PosteriorQuantile { q } => {
                mean + normal_quantile(q) * quadratic(self.result.posterior_g.covariance.matrix())?.sqrt()
            }
            DisutilitySpec::EstimatorQuantile { q } => {
                let c = self.estimator_cov.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("scorer was built without the estimator covariance".into())
                })?;
                mean + normal_quantile(q) * quadratic(c)?.sqrt()
            }
            DisutilitySpec::SumSqConsecutiveDiff { basis } => sum_sq(basis),
            DisutilitySpec::MeanSqConsecutiveDiff { basis } => {
                let pairs = path.len() - 1;
                if pairs == 0 {
                    0.0
                } else {
                    sum_sq(basis) / pairs as f64
                }
            }
        })
    }
}

/// Value of `spec` for `path` under the estimate `result`.
pub fn disutility(spec: &DisutilitySpec, result: &PipelineResult, highres: &HighResGraph, path: &[usize]) -> Result<f64> {
    spec.validate()?;
    PathScorer::new(result, highres, spec).score(spec, path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteChoice {
    pub best: usize,
    pub paths: Vec<Vec<usize>>,
    pub values: Vec<f64>,
}

impl RouteChoice {
    pub fn best_path(&self) -> &[usize] {
        &self.paths[self.best]
    }
}

/// Argmin of `spec` over the candidate paths; ties go to the earlier path.
pub fn select_route(
    query: &RouteQuery,
    spec: &DisutilitySpec,
    result: &PipelineResult,
    highres: &HighResGraph,
) -> Result<RouteChoice> {
    let paths = enumerate_paths(highres.parent(), query)?;
    choose(paths, spec, result, highres)
}

fn choose(paths: Vec<Vec<usize>>, spec: &DisutilitySpec, result: &PipelineResult, highres: &HighResGraph) -> Result<RouteChoice> {
    spec.validate()?;
    let scorer = PathScorer::new(result, highres, spec);
    let values = paths.iter().map(|p| scorer.score(spec, p)).collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = k;
        }
    }
    Ok(RouteChoice { best, paths, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteExperimentReport {
    pub reps: usize,
    /// Candidate paths (0-based edge indices).
    pub paths: Vec<Vec<usize>>,
    pub counts: Vec<usize>,
    /// Mean objective value of each path over the replications.
    pub mean_values: Vec<f64>,
    /// Fraction of replications whose chosen path uses each edge.
    pub edge_frequency: Vec<f64>,
    /// Indices into `paths` of the (up to) three most selected paths.
    pub top: Vec<usize>,
}

/// Repeats sample -> estimate -> select_route `sim.reps` times.
pub fn route_experiment(sim: &SimConfig, query: &RouteQuery, spec: &DisutilitySpec) -> Result<RouteExperimentReport> {
    sim.validate()?;
    spec.validate()?;
    let highres = refine(&sim.graph, &sim.resolution)?;
    let truth = GroundTruth::new(&sim.graph, &sim.resolution, &sim.profiles, &sim.sigma_per_km)?;
    let n_sub = highres.expand(&sim.n);
    let paths = enumerate_paths(&sim.graph, query)?;

    let runs: Vec<Result<(usize, Vec<f64>)>> = (0..sim.reps)
        .into_par_iter()
        .map(|index| {
            let run = || -> Result<(usize, Vec<f64>)> {
                let mut rng = replication_rng(sim.seed, index);
                let obs = sample_observations(&truth, &n_sub, sim.distribution, &mut rng)?;
                let fit = estimate(&highres, &obs, &sim.pipeline)?;
                let choice = choose(paths.clone(), spec, &fit, &highres)?;
                Ok((choice.best, choice.values))
            };
            run().map_err(|e| Error::Replication { index, source: Box::new(e) })
        })
        .collect();

    let mut counts = vec![0usize; paths.len()];
    let mut sums = vec![0.0; paths.len()];
    let mut edge_hits = vec![0usize; sim.graph.edge_count()];
    for run in runs {
        let (best, values) = run?;
        counts[best] += 1;
        for (s, v) in sums.iter_mut().zip(&values) {
            *s += v;
        }
        for &e in &paths[best] {
            edge_hits[e] += 1;
        }
    }
    let m = sim.reps as f64;
    let mut order: Vec<usize> = (0..paths.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let top = order.into_iter().take(3).filter(|&k| counts[k] > 0).collect();
    Ok(RouteExperimentReport {
        reps: sim.reps,
        paths,
        counts,
        mean_values: sums.iter().map(|s| s / m).collect(),
        edge_frequency: edge_hits.iter().map(|&h| h as f64 / m).collect(),
        top,
    })
}
