//! The experiment modes. Each has a pure compute step returning data and a
//! writer that turns the data into files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use opdyn::measures::sample_variance;
use opdyn::pde::stability_bound;
use opdyn::rng::derive_seed;
use opdyn::{
    cluster_components, fluctuation_slope, init_gaussian_mixture, pde_integrate, sample_from_density, simulate,
    sliced_w2, within_cluster_opinion_spread, DensityField, EmpiricalMeasure, NoiseSpec, PdeRun, SimConfig,
    Trajectory,
};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Mode};
use crate::error::{CliError, CliResult};
use crate::output::{
    bin_edges, density_csv, opinion_histogram, read_snapshots, snapshots_ndjson, trajectory_csv, Kind, OutputDir,
    RunManifest, SnapshotRecord,
};
use crate::svg;

/// Seed of ensemble member `index`.
pub fn member_seed(base: u64, index: usize) -> u64 {
    derive_seed(base, index as u64)
}

/// Median; the mean of the two middle values for even counts.
pub fn median(vals: &[f64]) -> f64 {
    let mut v = vals.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean_and_stderr(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let se = if vals.len() > 1 { (sample_variance(vals) / n).sqrt() } else { 0.0 };
    (mean, se)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterStat {
    pub t: f64,
    pub n_clusters: usize,
    pub spread: f64,
}

/// Cluster count and within-cluster opinion spread at every snapshot.
pub fn cluster_series(traj: &Trajectory<f64>) -> Vec<ClusterStat> {
    let r = traj.config.model.radius;
    traj.snapshots
        .iter()
        .map(|s| {
            let labels = cluster_components(s, r);
            ClusterStat { t: s.time, n_clusters: labels.n_clusters, spread: within_cluster_opinion_spread(s, &labels) }
        })
        .collect()
}

/// Runs `seeds.len()` independent copies of `base`, concurrently, in seed order.
pub fn ensemble(base: &SimConfig<f64>, seeds: &[u64]) -> CliResult<Vec<Trajectory<f64>>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            simulate(&cfg).map_err(CliError::from)
        })
        .collect()
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<RunManifest> {
    let mut out = OutputDir::create(&cfg.output_dir, cfg.formats)?;
    match cfg.mode {
        Mode::RunAbm => write_abm(cfg, &mut out)?,
        Mode::RunPde => write_pde(cfg, &mut out)?,
        Mode::CompareLimits => write_compare(cfg, &mut out)?,
        Mode::NoiseSweep => write_sweep(cfg, &mut out)?,
        Mode::ChaosStudy => write_chaos(cfg, &mut out)?,
        Mode::FluctuationStudy => write_fluctuation(cfg, &mut out)?,
        Mode::Render => write_render(cfg, &mut out)?,
    }
    out.finish(cfg)
}

fn write_abm(cfg: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let traj = simulate(&cfg.sim)?;
    out.write(Kind::Ndjson, "snapshots.ndjson", "snapshot.v1", &snapshots_ndjson(&traj))?;
    out.write(Kind::Csv, "trajectory.csv", "trajectory.v1", &trajectory_csv(&traj))?;

    let mut clusters = String::from("t,n_clusters,within_cluster_spread\n");
    for c in cluster_series(&traj) {
        let _ = writeln!(clusters, "{},{},{}", c.t, c.n_clusters, c.spread);
    }
    out.write(Kind::Csv, "clusters.csv", "clusters.v1", &clusters)?;

    let mut hist = String::from("t,bin,lo,hi,count\n");
    for s in &traj.snapshots {
        for (b, c) in opinion_histogram(s.opinions()).iter().enumerate() {
            let (lo, hi) = bin_edges(b);
            let _ = writeln!(hist, "{},{b},{lo},{hi},{c}", s.time);
        }
    }
    out.write(Kind::Csv, "histograms.csv", "histogram.v1", &hist)?;

    let last = SnapshotRecord::from_state(traj.final_state());
    let title = format!("t = {}", last.t);
    out.write(Kind::Svg, "final.svg", "svg", &svg::figure(&[svg::scatter_panel(&last, &title)]))
}

/// Density initial condition of the configured mixture.
pub fn pde_initial(cfg: &ExperimentConfig) -> CliResult<DensityField<f64>> {
    Ok(init_gaussian_mixture(&cfg.grid, &cfg.bumps)?)
}

pub fn pde_compute(cfg: &ExperimentConfig) -> CliResult<PdeRun<f64>> {
    let rho0 = pde_initial(cfg)?;
    pde_integrate(&rho0, &cfg.pde, &cfg.sim.model, &cfg.sim.noise).map_err(|e| match e {
        opdyn::Error::Unstable { dt, bound } => CliError::Stability(format!(
            "pde_dt = {dt} exceeds the stability bound {bound:.6e}; choose pde_dt <= {bound:.6e}"
        )),
        other => other.into(),
    })
}

fn nearest(snaps: &[DensityField<f64>], t: f64) -> &DensityField<f64> {
    snaps
        .iter()
        .min_by(|a, b| (a.time - t).abs().partial_cmp(&(b.time - t).abs()).expect("finite"))
        .expect("at least the initial density")
}

fn write_pde(cfg: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let run = pde_compute(cfg)?;
    out.write(Kind::Csv, "density.csv", "density.v1", &density_csv(&run.snapshots))?;

    let mut log = String::from("t,mass,max_density\n");
    for ((f, m), x) in run.snapshots.iter().zip(&run.report.mass_history).zip(&run.report.max_history) {
        let _ = writeln!(log, "{},{m},{x}", f.time);
    }
    out.write(Kind::Csv, "conservation.csv", "conservation.v1", &log)?;

    let m0 = run.report.mass_history[0];
    let drift = run.report.mass_history.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max);
    let report = serde_json::json!({
        "steps": run.report.steps,
        "dt": cfg.pde.dt,
        "stability_bound": stability_bound(&cfg.grid, &cfg.sim.model, &cfg.sim.noise),
        "clipped_mass": run.report.clipped_mass,
        "max_flux_mass_defect": run.report.max_flux_mass_defect,
        "max_mass_drift": drift,
    });
    out.write(Kind::Ndjson, "pde_report.ndjson", "pde-report.v1", &format!("{report}\n"))?;

    let t_end = cfg.pde.t_end;
    let picks = [nearest(&run.snapshots, 0.0), nearest(&run.snapshots, t_end / 2.0), nearest(&run.snapshots, t_end)];
    let vmax = picks.iter().map(|f| f.max()).fold(0.0, f64::max);
    let panels: Vec<svg::Panel> = picks.iter().map(|f| svg::heatmap_panel(f, vmax, &format!("t = {}", f.time))).collect();
    for (name, p) in ["heatmap_t0.svg", "heatmap_mid.svg", "heatmap_final.svg"].iter().zip(&panels) {
        out.write(Kind::Svg, name, "svg", &svg::figure(std::slice::from_ref(p)))?;
    }
    out.write(Kind::Svg, "heatmaps.svg", "svg", &svg::figure(&panels))
}

/// Sliced distance between an agent cloud and `samples`, repeating agents so both carry the same atom count.
pub fn distance_to_samples(agents: &EmpiricalMeasure<f64>, samples: &EmpiricalMeasure<f64>, n_proj: usize, seed: u64) -> CliResult<f64> {
    if samples.len() % agents.len() != 0 {
        return Err(CliError::Config(format!(
            "{} density samples are not a multiple of {} agents",
            samples.len(),
            agents.len()
        )));
    }
    let rep = agents.repeated(samples.len() / agents.len());
    Ok(sliced_w2(&rep, samples, n_proj, seed)?.value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub t: f64,
    pub distance: f64,
    /// Same statistic for `N` independent density samples in place of the agents.
    pub floor: f64,
}

pub fn compare_compute(cfg: &ExperimentConfig) -> CliResult<Vec<CompareRow>> {
    let run = pde_compute(cfg)?;
    let traj = simulate(&cfg.sim)?;
    let n = cfg.sim.n_agents;
    let mut rows = Vec::new();
    for (k, f) in run.snapshots.iter().enumerate() {
        let Some(s) = traj.snapshots.iter().find(|s| (s.time - f.time).abs() <= 1e-9 * f.time.abs().max(1.0)) else {
            continue;
        };
        let samples = sample_from_density(f, cfg.pde_samples, derive_seed(cfg.sim.seed, 1_000 + k as u64))?;
        let proxy = sample_from_density(f, n, derive_seed(cfg.sim.seed, 2_000 + k as u64))?;
        let pseed = derive_seed(cfg.sim.seed, 3_000 + k as u64);
        rows.push(CompareRow {
            t: f.time,
            distance: distance_to_samples(&EmpiricalMeasure::from_state(s), &samples, cfg.n_proj, pseed)?,
            floor: distance_to_samples(&proxy, &samples, cfg.n_proj, pseed)?,
        });
    }
    Ok(rows)
}

fn write_compare(cfg: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let rows = compare_compute(cfg)?;
    let mut csv = String::from("t,sliced_w2,sampling_floor\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.t, r.distance, r.floor);
    }
    out.write(Kind::Csv, "compare.csv", "compare.v1", &csv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepMember {
    pub sigma: f64,
    pub member: usize,
    pub seed: u64,
    pub n_clusters: usize,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub sigma: f64,
    pub median_clusters: f64,
    pub median_spread: f64,
    /// Final opinions of every member pooled into one histogram.
    pub histogram: Vec<usize>,
}

pub struct Sweep {
    pub members: Vec<SweepMember>,
    pub summary: Vec<SweepSummary>,
    /// First ensemble member of each amplitude, for the figures.
    pub examples: Vec<Trajectory<f64>>,
}

pub fn sweep_compute(cfg: &ExperimentConfig) -> CliResult<Sweep> {
    let seeds: Vec<u64> = (0..cfg.ensemble).map(|i| member_seed(cfg.sim.seed, i)).collect();
    let mut members = Vec::new();
    let mut summary = Vec::new();
    let mut examples = Vec::new();
    for &sigma in &cfg.sigmas {
        let mut base = cfg.sim.clone();
        base.noise = NoiseSpec::additive(sigma);
        let runs = ensemble(&base, &seeds)?;
        let mut hist = vec![0; crate::output::HIST_BINS];
        let mut counts = Vec::new();
        let mut spreads = Vec::new();
        for (i, traj) in runs.iter().enumerate() {
            let s = traj.final_state();
            let labels = cluster_components(s, base.model.radius);
            let spread = within_cluster_opinion_spread(s, &labels);
            for (h, c) in hist.iter_mut().zip(opinion_histogram(s.opinions())) {
                *h += c;
            }
            counts.push(labels.n_clusters as f64);
            spreads.push(spread);
            members.push(SweepMember { sigma, member: i, seed: seeds[i], n_clusters: labels.n_clusters, spread });
        }
        summary.push(SweepSummary { sigma, median_clusters: median(&counts), median_spread: median(&spreads), histogram: hist });
        examples.push(runs.into_iter().next().expect("ensemble is non-empty"));
    }
    Ok(Sweep { members, summary, examples })
}

fn write_sweep(cfg: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let sweep = sweep_compute(cfg)?;
    let mut csv = String::from("sigma,member,seed,n_clusters,within_cluster_spread\n");
    for m in &sweep.members {
        let _ = writeln!(csv, "{},{},{},{},{}", m.sigma, m.member, m.seed, m.n_clusters, m.spread);
    }
    out.write(Kind::Csv, "sweep_members.csv", "sweep-members.v1", &csv)?;

    let mut csv = String::from("sigma,median_clusters,median_within_cluster_spread\n");
    let mut hist = String::from("sigma,bin,lo,hi,count\n");
    for s in &sweep.summary {
        let _ = writeln!(csv, "{},{},{}", s.sigma, s.median_clusters, s.median_spread);
        for (b, c) in s.histogram.iter().enumerate() {
            let (lo, hi) = bin_edges(b);
            let _ = writeln!(hist, "{},{b},{lo},{hi},{c}", s.sigma);
        }
    }
    out.write(Kind::Csv, "sweep_summary.csv", "sweep-summary.v1", &csv)?;
    out.write(Kind::Csv, "sweep_histograms.csv", "sweep-histogram.v1", &hist)?;

    for (s, traj) in sweep.summary.iter().zip(&sweep.examples) {
        let snaps: Vec<SnapshotRecord> = traj.snapshots.iter().map(SnapshotRecord::from_state).collect();
        let last = snaps.last().expect("snapshots");
        let panels = [
            svg::scatter_panel(last, &format!("sigma = {}, t = {}", s.sigma, last.t)),
            svg::trajectories_panel(&snaps, "opinion trajectories"),
            svg::histogram_panel(&opinion_histogram(&last.opinions), "final opinions"),
        ];
        out.write(Kind::Svg, &format!("sweep_sigma_{}.svg", s.sigma), "svg", &svg::figure(&panels))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaosRow {
    pub n: usize,
    pub member: usize,
    pub distance: f64,
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaosSummary {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub floor_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chaos {
    pub rows: Vec<ChaosRow>,
    pub summary: Vec<ChaosSummary>,
    /// Adjacent pairs where the mean distance does not decrease.
    pub inversions: usize,
    /// Mean at the largest N over the mean at the smallest N.
    pub ratio: f64,
}

pub fn chaos_compute(cfg: &ExperimentConfig) -> CliResult<Chaos> {
    let run = pde_compute(cfg)?;
    let rho_t = run.snapshots.last().expect("final density");
    let samples = sample_from_density(rho_t, cfg.pde_samples, derive_seed(cfg.sim.seed, 0xd5))?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (ni, &n) in cfg.n_list.iter().enumerate() {
        let seeds: Vec<u64> = (0..cfg.ensemble).map(|i| member_seed(cfg.sim.seed, ni * 10_000 + i)).collect();
        let mut base = cfg.sim.clone();
        base.n_agents = n;
        base.snapshot_stride = base.n_steps().max(1);
        let runs = ensemble(&base, &seeds)?;
        let dists: Vec<(f64, f64)> = runs
            .par_iter()
            .zip(&seeds)
            .map(|(traj, &seed)| {
                let agents = EmpiricalMeasure::from_state(traj.final_state());
                let proxy = sample_from_density(rho_t, n, derive_seed(seed, 0xf1))?;
                let pseed = derive_seed(seed, 0x9e);
                Ok((
                    distance_to_samples(&agents, &samples, cfg.n_proj, pseed)?,
                    distance_to_samples(&proxy, &samples, cfg.n_proj, pseed)?,
                ))
            })
            .collect::<CliResult<_>>()?;
        for (i, &(distance, floor)) in dists.iter().enumerate() {
            rows.push(ChaosRow { n, member: i, distance, floor });
        }
        let d: Vec<f64> = dists.iter().map(|p| p.0).collect();
        let f: Vec<f64> = dists.iter().map(|p| p.1).collect();
        let (mean, stderr) = mean_and_stderr(&d);
        summary.push(ChaosSummary { n, mean, stderr, floor_mean: mean_and_stderr(&f).0 });
    }
    let inversions = summary.windows(2).filter(|w| w[1].mean >= w[0].mean).count();
    let ratio = summary.last().expect("n_list").mean / summary[0].mean;
    Ok(Chaos { rows, summary, inversions, ratio })
}

fn write_chaos(cfg: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let chaos = chaos_compute(cfg)?;
    let mut csv = String::from("n,member,sliced_w2,sampling_floor\n");
    for r in &chaos.rows {
        let _ = writeln!(csv, "{},{},{},{}", r.n, r.member, r.distance, r.floor);
    }
    out.write(Kind::Csv, "chaos_members.csv", "chaos-members.v1", &csv)?;
    let mut csv = String::from("n,mean_sliced_w2,stderr,mean_sampling_floor\n");
    for s in &chaos.summary {
        let _ = writeln!(csv, "{},{},{},{}", s.n, s.mean, s.stderr, s.floor_mean);
    }
    out.write(Kind::Csv, "chaos_summary.csv", "chaos-summary.v1", &csv)?;
    let trend = serde_json::json!({ "inversions": chaos.inversions, "ratio_last_first": chaos.ratio });
    out.write(Kind::Ndjson, "chaos_trend.ndjson", "chaos-trend.v1", &format!("{trend}\n"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fluctuation {
    /// Final mean opinion of every member, grouped by N.
    pub groups: BTreeMap<usize, Vec<f64>>,
    pub slope: f64,
}

pub fn fluctuation_compute(cfg: &ExperimentConfig) -> CliResult<Fluctuation> {
    let mut groups = BTreeMap::new();
    for (ni, &n) in cfg.n_list.iter().enumerate() {
        let seeds: Vec<u64> = (0..cfg.ensemble).map(|i| member_seed(cfg.sim.seed, ni * 10_000 + i)).collect();
        let mut base = cfg.sim.clone();
        base.n_agents = n;
        base.snapshot_stride = base.n_steps().max(1);
        let runs = ensemble(&base, &seeds)?;
        groups.insert(n, runs.iter().map(|t| t.final_state().mean_opinion()).collect());
    }
    let slope = fluctuation_slope(&groups)?;
    Ok(Fluctuation { groups, slope })
}

fn write_fluctuation(cfg: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let f = fluctuation_compute(cfg)?;
    let mut csv = String::from("n,member,mean_opinion\n");
    let mut summary = String::from("n,variance\n");
    for (n, vals) in &f.groups {
        for (i, v) in vals.iter().enumerate() {
            let _ = writeln!(csv, "{n},{i},{v}");
        }
        let _ = writeln!(summary, "{n},{}", sample_variance(vals));
    }
    out.write(Kind::Csv, "fluctuation_members.csv", "fluctuation-members.v1", &csv)?;
    out.write(Kind::Csv, "fluctuation_summary.csv", "fluctuation-summary.v1", &summary)?;
    let slope = serde_json::json!({ "slope": f.slope });
    out.write(Kind::Ndjson, "fluctuation_slope.ndjson", "fluctuation-slope.v1", &format!("{slope}\n"))
}

fn write_render(cfg: &ExperimentConfig, out: &mut OutputDir) -> CliResult<()> {
    let path = cfg.input.as_ref().expect("validated");
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let snaps = read_snapshots(&text)?;
    let last = snaps.last().ok_or_else(|| CliError::Config("snapshot file is empty".into()))?;
    let panels = [
        svg::scatter_panel(last, &format!("t = {}", last.t)),
        svg::trajectories_panel(&snaps, "opinion trajectories"),
        svg::histogram_panel(&opinion_histogram(&last.opinions), "final opinions"),
    ];
    out.write(Kind::Svg, "render.svg", "svg", &svg::figure(&panels))
}
