use std::path::Path;

use netsmooth::netgraph::refine;
use netsmooth::router::route_experiment;
use netsmooth::simkit::run_monte_carlo;
use netsmooth::spectral::{spectral_report, SpectralReport};
use serde::Serialize;

use crate::config::{
    objective_from_flags, parse_json, EstimateFile, GridSpec, ResolutionChoice, RouteFile, SimFile,
};
use crate::io::{f17, parse_graph, parse_observations, Inputs, Outputs};
use crate::manifest::write_manifest;
use crate::{CliError, Common, EstimateArgs, RouteArgs, SimulateArgs, SpectralArgs};

/// Largest Weyl gap and series error accepted by validate-spectral.
pub const WEYL_GAP_LIMIT: f64 = 2.0;
pub const SERIES_LIMIT: f64 = 0.1;

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

#[derive(Serialize)]
struct EstimateSummary<'a> {
    lambda_hat: f64,
    prior_precision: Option<f64>,
    sigma2_hat: &'a [f64],
    resolution: &'a [usize],
    smoothing: bool,
}

pub fn estimate(common: &Common, args: &EstimateArgs) -> Result<(), CliError> {
    let mut inputs = Inputs::default();
    let graph = parse_graph(&inputs.read(&args.graph)?, &args.graph)?;
    let obs_bytes = inputs.read(&args.observations)?;
    let mut cfg = match &args.config {
        Some(p) => parse_json::<EstimateFile>(&inputs.read(p)?, p)?,
        None => EstimateFile::default(),
    };
    if let Some(r) = &args.resolution {
        cfg.resolution = Some(ResolutionChoice::parse_flag(r)?);
    }
    if let Some(g) = &args.lambda_grid {
        cfg.lambda_grid = Some(GridSpec::parse_flag(g)?);
    }
    if args.no_smoothing {
        cfg.smoothing = false;
    }

    let (found, obs) = parse_observations(&obs_bytes, &args.observations, &graph)?;
    if let Some(choice) = &cfg.resolution {
        let want = choice.resolve(&graph)?;
        if let Some(i) = (0..graph.edge_count()).find(|&i| want.r[i] != found.r[i]) {
            return Err(CliError::Input(format!(
                "{}: edge {} has {} sub-edges but the resolution asks for {}",
                args.observations.display(),
                i + 1,
                found.r[i] + 1,
                want.r[i] + 1
            )));
        }
    }
    cfg.resolution = Some(ResolutionChoice::Fixed(crate::config::PerEdge::Each(found.r.clone())));

    let highres = refine(&graph, &found)?;
    let fit = netsmooth::estimate(&highres, &obs, &cfg.smoothing_section().options()?)?;

    let mut out = Outputs::new(&common.out_dir)?;
    let sd_g = fit.posterior_g.sd();
    let edge_rows: Vec<Vec<String>> = (0..graph.edge_count())
        .map(|i| {
            vec![(i + 1).to_string(), f17(fit.posterior_g.mean[i]), f17(sd_g[i]), f17(fit.sigma2_hat[i])]
        })
        .collect();
    out.write_csv("posterior_edges.csv", &["edge_id", "mean_seconds", "sd_seconds", "sigma2_hat"], &edge_rows)?;

    let sd_r = fit.posterior_hr.sd();
    let sub_rows: Vec<Vec<String>> = highres
        .sub_edges()
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            vec![(i + 1).to_string(), (j + 1).to_string(), f17(fit.posterior_hr.mean[k]), f17(sd_r[k])]
        })
        .collect();
    out.write_csv("posterior_subedges.csv", &["edge_id", "subedge_index", "mean_seconds", "sd_seconds"], &sub_rows)?;

    let gcv_rows: Vec<Vec<String>> = fit.gcv_curve.iter().map(|&(l, g)| vec![f17(l), f17(g)]).collect();
    out.write_csv("gcv_curve.csv", &["lambda", "gcv"], &gcv_rows)?;
    out.write_json(
        "estimate.json",
        &EstimateSummary {
            lambda_hat: fit.lambda_hat,
            prior_precision: fit.prior_precision,
            sigma2_hat: &fit.sigma2_hat,
            resolution: &found.r,
            smoothing: cfg.smoothing,
        },
    )?;
    write_manifest(&mut out, "estimate", &cfg, common.seed, inputs)
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    reps: usize,
    seed: u64,
    sub_edges: usize,
    global_mean_rse: f64,
    max_sub_mean_rse: f64,
    global_mean_sq_error: f64,
    mean_lambda_hat: f64,
    edge_mean_rse: &'a [f64],
}

pub fn simulate(common: &Common, args: &SimulateArgs) -> Result<(), CliError> {
    let mut inputs = Inputs::default();
    let mut file: SimFile = parse_json(&inputs.read(&args.config)?, &args.config)?;
    if let Some(s) = common.seed {
        file.seed = s;
    }
    if let Some(m) = args.reps {
        file.reps = m;
    }
    let sim = file.build(base_dir(&args.config), &mut inputs)?;
    let report = run_monte_carlo(&sim)?;

    let mut out = Outputs::new(&common.out_dir)?;
    let rows: Vec<Vec<String>> = report
        .sub_edges
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            vec![(i + 1).to_string(), (j + 1).to_string(), f17(report.sub_mean_rse[k]), f17(report.sub_sd_rse[k])]
        })
        .collect();
    out.write_csv("simulate_subedges.csv", &["edge_id", "subedge_index", "mean_rse", "sd_rse"], &rows)?;
    out.write_json(
        "simulate_summary.json",
        &SimulateSummary {
            reps: report.reps,
            seed: sim.seed,
            sub_edges: report.sub_edges.len(),
            global_mean_rse: report.global_mean_rse,
            max_sub_mean_rse: report.sub_mean_rse.iter().copied().fold(0.0, f64::max),
            global_mean_sq_error: report.global_mean_sq_error,
            mean_lambda_hat: report.mean_lambda_hat,
            edge_mean_rse: &report.edge_mean_rse,
        },
    )?;
    let seed = file.seed;
    write_manifest(&mut out, "simulate", &file, Some(seed), inputs)
}

#[derive(Serialize)]
struct PathSummary {
    /// 1-based edge ids.
    edges: Vec<usize>,
    count: usize,
    frequency: f64,
    mean_value: f64,
}

#[derive(Serialize)]
struct RouteSummary {
    objective: netsmooth::DisutilitySpec,
    reps: usize,
    seed: u64,
    paths: Vec<PathSummary>,
    /// 1-based positions in `paths` of the most selected paths.
    top: Vec<usize>,
}

pub fn route(common: &Common, args: &RouteArgs) -> Result<(), CliError> {
    let mut inputs = Inputs::default();
    let mut file: RouteFile = parse_json(&inputs.read(&args.config)?, &args.config)?;
    if let Some(s) = common.seed {
        file.simulation.seed = s;
    }
    if let Some(m) = args.reps {
        file.simulation.reps = m;
    }
    if let Some(h) = args.max_hops {
        file.route.max_hops = Some(h);
    }
    file.route.objective = objective_from_flags(
        file.route.objective,
        args.objective.as_deref(),
        args.quantile,
        args.basis.map(Into::into),
    )?;
    let sim = file.simulation.build(base_dir(&args.config), &mut inputs)?;
    let query = file.route.query(&sim.graph)?;
    let report = route_experiment(&sim, &query, &file.route.objective)?;

    let mut out = Outputs::new(&common.out_dir)?;
    let m = report.reps as f64;
    let paths = report
        .paths
        .iter()
        .enumerate()
        .map(|(k, p)| PathSummary {
            edges: p.iter().map(|e| e + 1).collect(),
            count: report.counts[k],
            frequency: report.counts[k] as f64 / m,
            mean_value: report.mean_values[k],
        })
        .collect();
    out.write_json(
        "route.json",
        &RouteSummary {
            objective: file.route.objective,
            reps: report.reps,
            seed: sim.seed,
            paths,
            top: report.top.iter().map(|k| k + 1).collect(),
        },
    )?;
    let heat: Vec<Vec<String>> =
        report.edge_frequency.iter().enumerate().map(|(i, f)| vec![(i + 1).to_string(), f17(*f)]).collect();
    out.write_csv("route_heat.csv", &["edge_id", "frequency"], &heat)?;
    let seed = file.simulation.seed;
    write_manifest(&mut out, "route", &file, Some(seed), inputs)
}

#[derive(Serialize)]
struct SpectralChecks {
    rank_ok: bool,
    norm_ok: bool,
    weyl_gap_ok: bool,
    series_ok: bool,
}

#[derive(Serialize)]
struct SpectralOutput<'a> {
    resolution: &'a [usize],
    report: &'a SpectralReport,
    checks: SpectralChecks,
}

#[derive(Serialize)]
struct SpectralConfig<'a> {
    resolution: &'a [usize],
    series: &'a [(u32, u32, usize, f64)],
}

fn parse_series(s: &str) -> Result<(u32, u32, usize, f64), CliError> {
    let bad = || CliError::Input(format!("--series: expected s,t,r,lambda_eff, got {s:?}"));
    let p: Vec<&str> = s.split(',').map(str::trim).collect();
    if p.len() != 4 {
        return Err(bad());
    }
    let lambda: f64 = p[3].parse().map_err(|_| bad())?;
    if !(lambda > 0.0) {
        return Err(bad());
    }
    Ok((p[0].parse().map_err(|_| bad())?, p[1].parse().map_err(|_| bad())?, p[2].parse().map_err(|_| bad())?, lambda))
}

pub fn validate_spectral(common: &Common, args: &SpectralArgs) -> Result<(), CliError> {
    let mut inputs = Inputs::default();
    let graph = parse_graph(&inputs.read(&args.graph)?, &args.graph)?;
    let resolution = ResolutionChoice::parse_flag(&args.resolution)?.resolve(&graph)?;
    let series = args.series.iter().map(|s| parse_series(s)).collect::<Result<Vec<_>, _>>()?;
    if let Some(&(_, _, r, _)) = series.iter().find(|t| t.2 < 2) {
        return Err(CliError::Input(format!("--series: r must be at least 2, got {r}")));
    }
    let highres = refine(&graph, &resolution)?;
    let report = spectral_report(&highres, &series)?;
    let checks = SpectralChecks {
        rank_ok: report.delta.rank_ok,
        norm_ok: report.delta.norm_ok,
        weyl_gap_ok: report.weyl_gap <= WEYL_GAP_LIMIT,
        series_ok: report.series_checks.iter().all(|c| c.relative_error <= SERIES_LIMIT),
    };
    let mut failures = Vec::new();
    if !checks.rank_ok {
        failures.push(format!("rank {} > {}", report.delta.rank, report.delta.rank_bound));
    }
    if !checks.norm_ok {
        failures.push(format!("norm {} > {}", report.delta.spectral_norm, report.delta.norm_bound));
    }
    if !checks.weyl_gap_ok {
        failures.push(format!("Weyl gap {} > {WEYL_GAP_LIMIT}", report.weyl_gap));
    }
    for c in report.series_checks.iter().filter(|c| c.relative_error > SERIES_LIMIT) {
        failures.push(format!("series ({}, {}) at r = {}: relative error {}", c.s, c.t, c.r, c.relative_error));
    }

    let mut out = Outputs::new(&common.out_dir)?;
    out.write_json("spectral_report.json", &SpectralOutput { resolution: &resolution.r, report: &report, checks })?;
    write_manifest(
        &mut out,
        "validate-spectral",
        SpectralConfig { resolution: &resolution.r, series: &series },
        common.seed,
        inputs,
    )?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("spectral checks failed: {}", failures.join("; "))))
    }
}
