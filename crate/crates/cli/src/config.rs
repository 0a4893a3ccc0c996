//! JSON run configurations. Paths inside a config resolve relative to the
//! config file. Command-line flags override config values.

use std::path::{Path, PathBuf};

use netsmooth::bayes::{log_grid, PipelineOptions, VarianceEstimator};
use netsmooth::router::{Basis, DisutilitySpec, RouteQuery};
use netsmooth::simkit::{SampleDistribution, SimConfig, VelocityProfile};
use netsmooth::{Graph, ResolutionSpec};
use serde::{Deserialize, Serialize};

use crate::io::{self, Inputs};
use crate::CliError;

/// One value for every edge, or one per edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerEdge<T> {
    One(T),
    Each(Vec<T>),
}

impl<T: Clone> PerEdge<T> {
    pub fn expand(&self, q: usize, what: &str) -> Result<Vec<T>, CliError> {
        match self {
            PerEdge::One(v) => Ok(vec![v.clone(); q]),
            PerEdge::Each(v) if v.len() == q => Ok(v.clone()),
            PerEdge::Each(v) => Err(CliError::Input(format!("{what}: {} values for {q} edges", v.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ResolutionChoice {
    Fixed(PerEdge<usize>),
    /// Sub-edge count chosen per edge so sub-edges are close to `target_km`.
    Target { target_km: f64 },
}

impl ResolutionChoice {
    pub fn resolve(&self, graph: &Graph) -> Result<ResolutionSpec, CliError> {
        match self {
            ResolutionChoice::Fixed(r) => Ok(ResolutionSpec::new(r.expand(graph.edge_count(), "resolution")?)),
            ResolutionChoice::Target { target_km } if *target_km > 0.0 => {
                Ok(ResolutionSpec::for_target_length(graph, *target_km))
            }
            ResolutionChoice::Target { target_km } => {
                Err(CliError::Input(format!("target_km must be positive, got {target_km}")))
            }
        }
    }

    /// `--resolution 4` or `--resolution [2,3,4]`.
    pub fn parse_flag(s: &str) -> Result<Self, CliError> {
        serde_json::from_str::<PerEdge<usize>>(s.trim())
            .map(ResolutionChoice::Fixed)
            .map_err(|e| CliError::Input(format!("--resolution: expected an integer or a JSON list ({e})")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridSpec {
    /// `min,max,count`
    pub fn parse_flag(s: &str) -> Result<Self, CliError> {
        let bad = || CliError::Input(format!("--lambda-grid: expected min,max,count, got {s:?}"));
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(GridSpec {
            min: parts[0].parse().map_err(|_| bad())?,
            max: parts[1].parse().map_err(|_| bad())?,
            count: parts[2].parse().map_err(|_| bad())?,
        })
    }

    pub fn points(&self) -> Result<Vec<f64>, CliError> {
        log_grid(self.min, self.max, self.count).map_err(|e| CliError::Input(format!("lambda grid: {e}")))
    }
}

/// Estimation settings shared by every subcommand that runs the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSection {
    pub lambda_grid: Option<GridSpec>,
    pub smoothing: bool,
    pub estimator: VarianceEstimator,
}

fn yes() -> bool {
    true
}

impl SmoothingSection {
    pub fn options(&self) -> Result<PipelineOptions, CliError> {
        Ok(PipelineOptions {
            grid: self.lambda_grid.map(|g| g.points()).transpose()?,
            smoothing: self.smoothing,
            estimator: self.estimator,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<ResolutionChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<GridSpec>,
    #[serde(default = "yes")]
    pub smoothing: bool,
    #[serde(default)]
    pub estimator: VarianceEstimator,
}

impl Default for EstimateFile {
    fn default() -> Self {
        EstimateFile { resolution: None, lambda_grid: None, smoothing: true, estimator: VarianceEstimator::ClosedForm }
    }
}

impl EstimateFile {
    pub fn smoothing_section(&self) -> SmoothingSection {
        SmoothingSection { lambda_grid: self.lambda_grid, smoothing: self.smoothing, estimator: self.estimator }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimFile {
    pub graph: PathBuf,
    pub resolution: ResolutionChoice,
    pub profiles: PerEdge<VelocityProfile>,
    pub sigma_per_km: PerEdge<f64>,
    /// Observations per sub-edge.
    pub n: PerEdge<usize>,
    #[serde(default)]
    pub distribution: SampleDistribution,
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub smoothing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<GridSpec>,
    #[serde(default)]
    pub estimator: VarianceEstimator,
}

impl SimFile {
    pub fn smoothing_section(&self) -> SmoothingSection {
        SmoothingSection { lambda_grid: self.lambda_grid, smoothing: self.smoothing, estimator: self.estimator }
    }

    /// Builds the library config; reads the graph through `inputs` so it is digested.
    pub fn build(&self, base: &Path, inputs: &mut Inputs) -> Result<SimConfig, CliError> {
        let graph_path = base.join(&self.graph);
        let graph = io::parse_graph(&inputs.read(&graph_path)?, &graph_path)?;
        let q = graph.edge_count();
        let resolution = self.resolution.resolve(&graph)?;
        Ok(SimConfig {
            resolution,
            profiles: self.profiles.expand(q, "profiles")?,
            sigma_per_km: self.sigma_per_km.expand(q, "sigma_per_km")?,
            n: self.n.expand(q, "n")?,
            distribution: self.distribution,
            reps: self.reps,
            seed: self.seed,
            pipeline: self.smoothing_section().options()?,
            graph,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSection {
    /// 1-based vertex.
    pub origin: usize,
    pub destination: usize,
    /// Explicit candidates as lists of 1-based edge ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_paths: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_hops: Option<usize>,
    #[serde(default = "expected_time")]
    pub objective: DisutilitySpec,
}

fn expected_time() -> DisutilitySpec {
    DisutilitySpec::ExpectedTime
}

impl RouteSection {
    pub fn query(&self, graph: &Graph) -> Result<RouteQuery, CliError> {
        let p = graph.vertex_count();
        let vertex = |v: usize, what: &str| {
            if v == 0 || v > p {
                Err(CliError::Input(format!("{what} {v} is not a vertex (1..={p})")))
            } else {
                Ok(v - 1)
            }
        };
        let candidate_paths = match &self.candidate_paths {
            None => None,
            Some(paths) => Some(
                paths
                    .iter()
                    .map(|path| {
                        path.iter()
                            .map(|&e| {
                                if e == 0 || e > graph.edge_count() {
                                    Err(CliError::Input(format!("candidate path uses unknown edge {e}")))
                                } else {
                                    Ok(e - 1)
                                }
                            })
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        Ok(RouteQuery {
            origin: vertex(self.origin, "origin")?,
            destination: vertex(self.destination, "destination")?,
            candidate_paths,
            max_hops: self.max_hops,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteFile {
    pub simulation: SimFile,
    pub route: RouteSection,
}

/// Builds an objective from `--objective`, `--quantile` and `--basis`,
/// falling back to the configured one for anything not given.
pub fn objective_from_flags(
    configured: DisutilitySpec,
    name: Option<&str>,
    quantile: Option<f64>,
    basis: Option<Basis>,
) -> Result<DisutilitySpec, CliError> {
    let (cfg_q, cfg_basis) = match configured {
        DisutilitySpec::PosteriorQuantile { q } | DisutilitySpec::EstimatorQuantile { q } => (Some(q), None),
        DisutilitySpec::SumSqConsecutiveDiff { basis } | DisutilitySpec::MeanSqConsecutiveDiff { basis } => {
            (None, Some(basis))
        }
        DisutilitySpec::ExpectedTime => (None, None),
    };
    let name = name.map(str::to_owned).unwrap_or_else(|| objective_name(&configured).to_owned());
    let q = quantile.or(cfg_q);
    let basis = basis.or(cfg_basis).unwrap_or_default();
    let need_q = || {
        q.ok_or_else(|| CliError::Input(format!("objective {name} needs --quantile")))
    };
    let spec = match name.as_str() {
        "expected_time" => DisutilitySpec::ExpectedTime,
        "posterior_quantile" => DisutilitySpec::PosteriorQuantile { q: need_q()? },
        "estimator_quantile" => DisutilitySpec::EstimatorQuantile { q: need_q()? },
        "sum_sq_consecutive_diff" => DisutilitySpec::SumSqConsecutiveDiff { basis },
        "mean_sq_consecutive_diff" => DisutilitySpec::MeanSqConsecutiveDiff { basis },
        other => return Err(CliError::Input(format!("unknown objective {other:?}"))),
    };
    spec.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(spec)
}

pub fn objective_name(spec: &DisutilitySpec) -> &'static str {
    match spec {
        DisutilitySpec::ExpectedTime => "expected_time",
        DisutilitySpec::PosteriorQuantile { .. } => "posterior_quantile",
        DisutilitySpec::EstimatorQuantile { .. } => "estimator_quantile",
        DisutilitySpec::SumSqConsecutiveDiff { .. } => "sum_sq_consecutive_diff",
        DisutilitySpec::MeanSqConsecutiveDiff { .. } => "mean_sq_consecutive_diff",
    }
}

pub fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8], path: &Path) -> Result<T, CliError> {
    serde_json::from_slice(bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Loads a simulation config from disk; handy for tests and tooling.
pub fn load_sim(path: &Path) -> Result<SimConfig, CliError> {
    let mut inputs = Inputs::default();
    let file: SimFile = parse_json(&inputs.read(path)?, path)?;
    file.build(path.parent().unwrap_or(Path::new(".")), &mut inputs)
}

/// Loads a route config from disk.
pub fn load_route(path: &Path) -> Result<(SimConfig, RouteQuery, DisutilitySpec), CliError> {
    let mut inputs = Inputs::default();
    let file: RouteFile = parse_json(&inputs.read(path)?, path)?;
    let sim = file.simulation.build(path.parent().unwrap_or(Path::new(".")), &mut inputs)?;
    let query = file.route.query(&sim.graph)?;
    file.route.objective.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok((sim, query, file.route.objective))
}
