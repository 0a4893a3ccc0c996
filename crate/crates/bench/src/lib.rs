//! Shared fixtures for the benchmarks.

use netsmooth::bayes::Observations;
use netsmooth::netgraph::{refine, Graph, HighResGraph, ResolutionSpec};
use netsmooth::simkit::{replication_rng, sample_observations, GroundTruth, SampleDistribution, SimConfig, VelocityProfile};
use netsmooth::PipelineOptions;

/// 2x2 lattice with unit edges.
pub fn lattice() -> Graph {
    Graph::new(4, &[(1, 2, 1.0), (1, 3, 1.0), (2, 4, 1.0), (3, 4, 1.0)]).unwrap()
}

/// side x side grid of vertices, unit edges.
pub fn grid(side: usize) -> Graph {
    let id = |x: usize, y: usize| y * side + x + 1;
    let mut edges = Vec::new();
    for y in 0..side {
        for x in 0..side {
            if x + 1 < side {
                edges.push((id(x, y), id(x + 1, y), 1.0));
            }
            if y + 1 < side {
                edges.push((id(x, y), id(x, y + 1), 1.0));
            }
        }
    }
    Graph::new(side * side, &edges).unwrap()
}

pub fn refined(graph: &Graph, r: usize) -> HighResGraph {
    refine(graph, &ResolutionSpec::uniform(graph.edge_count(), r)).unwrap()
}

/// Simulation at 30 km/h with σ = 36 s/km, normal sampling.
pub fn sim_config(graph: Graph, r: usize, n: usize, reps: usize) -> SimConfig {
    let q = graph.edge_count();
    SimConfig {
        resolution: ResolutionSpec::uniform(q, r),
        profiles: vec![VelocityProfile::Constant { v: 30.0 }; q],
        sigma_per_km: vec![36.0; q],
        n: vec![n; q],
        distribution: SampleDistribution::Normal,
        reps,
        seed: 1,
        pipeline: PipelineOptions::default(),
        graph,
    }
}

/// One seeded draw of sub-edge means for `sim`.
pub fn observations(sim: &SimConfig) -> (HighResGraph, Observations) {
    let highres = refine(&sim.graph, &sim.resolution).unwrap();
    let truth = GroundTruth::new(&sim.graph, &sim.resolution, &sim.profiles, &sim.sigma_per_km).unwrap();
    let n = highres.expand(&sim.n);
    let obs = sample_observations(&truth, &n, sim.distribution, &mut replication_rng(sim.seed, 0)).unwrap();
    (highres, obs)
}
