//! Seeded, replayable Monte Carlo campaigns: fluctuation and bias scaling,
//! the metric invariant suite, corrector and homogenization rates, the
//! exposed-point geometry sweep and soft-min passage statistics.
//!
//! Every runner maps replicas onto a deterministic replica index, collects
//! rows in replica order and aggregates with order-independent reductions,
//! so outputs are byte-identical for any thread count.

use std::time::Instant;

use rayon::prelude::*;

use crate::effective::{
    legendre_transform, softmin_passage_stats, EnvSampler, HbarConfig, HbarPipeline, HbarTable,
    SolveGrid,
};
use crate::environment::EnvParams;
use crate::evolution::{homog_error, EvolveConfig, InitialDatum};
use crate::geometry::{straszewicz_gap, ConvexBody2D};
use crate::grid::{GridDomain, SourceSpec};
use crate::metric::{
    dpp_defect, front_hausdorff, growth_violations, localization_gap, set_lower_bound_violation,
    softmin_subsolution, solve_metric, sublevel_front, MetricConfig,
};
use crate::rng::{key, CounterRng};
use crate::stats::{
    aggregate_stats, fit_power_law, rank_correlation, weighted_linear_fit, PowerLawFit,
};
use crate::{HjError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Fluctuations,
    Bias,
    CellRate,
    EvolveRate,
    Invariants,
    Straszewicz,
    SoftminStats,
    Metric,
    Hbar,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Fluctuations => "fluctuations",
            ExperimentKind::Bias => "bias",
            ExperimentKind::CellRate => "cell_rate",
            ExperimentKind::EvolveRate => "evolve_rate",
            ExperimentKind::Invariants => "invariants",
            ExperimentKind::Straszewicz => "straszewicz",
            ExperimentKind::SoftminStats => "softmin_stats",
            ExperimentKind::Metric => "metric",
            ExperimentKind::Hbar => "hbar",
        }
    }

    pub fn parse(s: &str) -> Option<ExperimentKind> {
        Some(match s {
            "fluctuations" => ExperimentKind::Fluctuations,
            "bias" => ExperimentKind::Bias,
            "cell_rate" => ExperimentKind::CellRate,
            "evolve_rate" => ExperimentKind::EvolveRate,
            "invariants" => ExperimentKind::Invariants,
            "straszewicz" => ExperimentKind::Straszewicz,
            "softmin_stats" => ExperimentKind::SoftminStats,
            "metric" => ExperimentKind::Metric,
            "hbar" => ExperimentKind::Hbar,
            _ => return None,
        })
    }
}

/// Full campaign configuration (parsed from the CLI config file).
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub env: EnvParams,
    pub n_replicas: usize,
    pub seed: u64,
    pub threads: usize,
    pub grid: SolveGrid,
    pub domain_radius: f64,
    pub mu: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub r_list: Vec<f64>,
    pub proxy_r_list: Vec<f64>,
    pub t_list: Vec<f64>,
    pub theta_list: Vec<f64>,
    pub sigma_soft: f64,
    pub p_list: Vec<[f64; 2]>,
    pub hbar_tol: f64,
    pub n_directions: usize,
    pub delta_list: Vec<f64>,
    pub r_cap: f64,
    pub eps_list: Vec<f64>,
    pub t_final: f64,
    pub g_amp: f64,
    pub g_width: f64,
    pub n_polygons: usize,
    pub r_factors: Vec<f64>,
    pub n_bootstrap: usize,
    pub residual_tol_scale: f64,
    pub max_sweeps: usize,
}

impl ExperimentConfig {
    pub fn metric_cfg(&self, mu: f64) -> MetricConfig {
        let mut cfg = MetricConfig::for_mu(mu);
        cfg.mu_min = self.mu_min;
        cfg.mu_max = self.mu_max;
        cfg.scheme.residual_tol = self.residual_tol_scale * (1.0 + mu);
        cfg.scheme.max_sweeps = self.max_sweeps;
        cfg
    }

    pub fn hbar_cfg(&self) -> HbarConfig {
        HbarConfig {
            mu_min: self.mu_min,
            mu_max: self.mu_max,
            tol: self.hbar_tol,
            n_directions: self.n_directions,
            radii: self.r_list.clone(),
            n_replicas: self.n_replicas,
            grid: self.grid,
            sor: 1.0,
        }
    }

    pub fn sampler(&self) -> EnvSampler {
        let mut env = self.env.clone();
        env.seed = self.seed;
        EnvSampler::new(env)
    }
}

/// A named table: column headers plus numeric rows.
#[derive(Clone, Debug)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Table {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

/// Replayable experiment output: per-replica rows, summary statistics,
/// fit results and the seeds needed to re-solve any replica in isolation.
#[derive(Clone, Debug)]
pub struct ExperimentRecord {
    pub kind: ExperimentKind,
    pub tables: Vec<Table>,
    pub summary: Vec<(String, f64)>,
    pub fits: Vec<(String, PowerLawFit)>,
    pub replica_seeds: Vec<u64>,
    pub warnings: Vec<String>,
    /// All-pass flag for acceptance-style suites (None when not applicable).
    pub pass: Option<bool>,
    pub wall_clock: f64,
}

impl ExperimentRecord {
    fn new(kind: ExperimentKind) -> ExperimentRecord {
        ExperimentRecord {
            kind,
            tables: Vec::new(),
            summary: Vec::new(),
            fits: Vec::new(),
            replica_seeds: Vec::new(),
            warnings: Vec::new(),
            pass: None,
            wall_clock: 0.0,
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn summary_value(&self, name: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

/// Runs `f` inside a dedicated rayon pool of the configured width.
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool");
    pool.install(f)
}

fn replica_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.n_replicas as u64)
        .map(|k| key(&[cfg.seed, k]))
        .collect()
}

/// One metric solve per replica from the origin, read at `R e_1` for every
/// requested radius. Returns raw field values (not normalized).
fn passage_values(
    cfg: &ExperimentConfig,
    radii: &[f64],
) -> Result<(Vec<Vec<f64>>, f64, f64, usize)> {
    let sampler = cfg.sampler();
    let mcfg = cfg.metric_cfg(cfg.mu);
    let r_max = radii.iter().cloned().fold(0.0, f64::max);
    let rows: Vec<Option<(Vec<f64>, f64, f64)>> = (0..cfg.n_replicas as u64)
        .into_par_iter()
        .map(|k| {
            let env = sampler.env(k).ok()?;
            let domain =
                GridDomain::symmetric(env.dim(), cfg.grid.h, r_max + cfg.grid.margin).ok()?;
            let sol = solve_metric(&env, cfg.mu, &SourceSpec::origin(), domain, &mcfg).ok()?;
            let vals: Option<Vec<f64>> = radii.iter().map(|&r| sol.value_at([r, 0.0])).collect();
            Some((vals?, sol.slope_min, sol.slope_max))
        })
        .collect();
    let kept: Vec<&(Vec<f64>, f64, f64)> = rows.iter().flatten().collect();
    let dropped = cfg.n_replicas - kept.len();
    if kept.is_empty() || dropped * 5 > cfg.n_replicas {
        return Err(HjError::MonteCarlo(format!(
            "{dropped}/{} replicas failed in the passage sweep",
            cfg.n_replicas
        )));
    }
    let mut per_radius = vec![Vec::with_capacity(kept.len()); radii.len()];
    let mut lmin = f64::INFINITY;
    let mut lmax = 0.0f64;
    for (vals, a, b) in kept.iter() {
        for (ri, row) in per_radius.iter_mut().enumerate() {
            row.push(vals[ri]);
        }
        lmin = lmin.min(*a);
        lmax = lmax.max(*b);
    }
    Ok((per_radius, lmin, lmax, dropped))
}

/// Fluctuation scaling: per-radius means and variances of `m(Re, 0)`, a
/// variance-vs-radius power fit, and the sub-Gaussian tail diagnostic
/// (log exceedance frequency against lambda^2) at the largest radius.
pub fn run_fluctuations(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let mut rec = ExperimentRecord::new(ExperimentKind::Fluctuations);
    rec.replica_seeds = replica_seeds(cfg);
    let (per_radius, _, _, dropped) = passage_values(cfg, &cfg.r_list)?;
    if dropped > 0 {
        rec.warnings.push(format!("{dropped} replicas dropped"));
    }

    let mut rows_table = Table::new("rows", &["radius", "replica", "value"]);
    let mut var_table = Table::new("variance", &["radius", "mean", "variance", "n"]);
    let mut vars = Vec::new();
    for (ri, &r) in cfg.r_list.iter().enumerate() {
        for (k, &v) in per_radius[ri].iter().enumerate() {
            rows_table.rows.push(vec![r, k as f64, v]);
        }
        let s = aggregate_stats(&per_radius[ri])?;
        let var = if s.variance.is_nan() { 0.0 } else { s.variance };
        var_table.rows.push(vec![r, s.mean, var, s.n as f64]);
        vars.push(var);
    }
    if let Ok(fit) = fit_power_law(&cfg.r_list, &vars, cfg.n_bootstrap, cfg.seed ^ 0xf1) {
        rec.summary.push(("var_exponent".into(), fit.exponent));
        rec.summary.push(("var_exponent_ci_lo".into(), fit.ci_lo));
        rec.summary.push(("var_exponent_ci_hi".into(), fit.ci_hi));
        rec.fits.push(("variance_vs_radius".into(), fit));
    }

    // tail at the largest radius
    let top = per_radius.last().unwrap();
    let s = aggregate_stats(top)?;
    let devs: Vec<f64> = top.iter().map(|v| (v - s.mean).abs()).collect();
    let dev_max = devs.iter().cloned().fold(0.0, f64::max);
    let mut tail = Table::new("tail", &["lambda", "lambda_sq", "count", "log_freq"]);
    let n_bins = 10;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for j in 1..=n_bins {
        let lam = dev_max * j as f64 / (n_bins as f64 + 1.0);
        let count = devs.iter().filter(|&&d| d > lam).count();
        if count == 0 {
            continue;
        }
        let freq = count as f64 / devs.len() as f64;
        tail.rows.push(vec![lam, lam * lam, count as f64, freq.ln()]);
        xs.push(lam * lam);
        ys.push(freq.ln());
        ws.push(count as f64);
    }
    if xs.len() >= 3 {
        let fit = weighted_linear_fit(&xs, &ys, &ws)?;
        rec.summary.push(("tail_slope".into(), fit.slope));
        rec.summary
            .push(("tail_slope_ci_hi".into(), fit.slope + 1.96 * fit.slope_se));
        rec.summary
            .push(("tail_slope_ci_lo".into(), fit.slope - 1.96 * fit.slope_se));
    }
    rec.tables.push(rows_table);
    rec.tables.push(var_table);
    rec.tables.push(tail);
    rec.wall_clock = start.elapsed().as_secs_f64();
    Ok(rec)
}

/// Bias scaling: `M(Re) - (R-1) * proxy` against `R`, with the proxy the
/// best subadditive upper bound from the largest radii, plus soft-min
/// superadditivity defects.
pub fn run_bias(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let mut rec = ExperimentRecord::new(ExperimentKind::Bias);
    rec.replica_seeds = replica_seeds(cfg);

    let mut all_radii = cfg.r_list.clone();
    for &r in &cfg.proxy_r_list {
        if !all_radii.contains(&r) {
            all_radii.push(r);
        }
    }
    all_radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (per_radius, _lmin, lmax, dropped) = passage_values(cfg, &all_radii)?;
    if dropped > 0 {
        rec.warnings.push(format!("{dropped} replicas dropped"));
    }
    let mean_at = |r: f64| -> Result<f64> {
        let ri = all_radii.iter().position(|&x| x == r).unwrap();
        Ok(aggregate_stats(&per_radius[ri])?.mean)
    };
    // The paper's subadditive quantity is the mean plus the Lipschitz
    // constant; the proxy is its best per-unit value over the largest radii
    // and the bias curve is measured on the same quantity, so it is
    // nonnegative up to Monte Carlo noise and vanishes identically for
    // constant coefficients.
    let mut proxy = f64::INFINITY;
    for &rp in &cfg.proxy_r_list {
        proxy = proxy.min((mean_at(rp)? + lmax) / rp);
    }
    rec.summary.push(("mbar_proxy".into(), proxy));
    rec.summary.push(("slope_max".into(), lmax));

    let mut bias_table = Table::new("bias", &["radius", "mean", "bias"]);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &r in &cfg.r_list {
        let m = mean_at(r)?;
        let b = (m + lmax) - r * proxy;
        bias_table.rows.push(vec![r, m, b]);
        xs.push(r);
        ys.push(b);
    }
    match fit_power_law(&xs, &ys, cfg.n_bootstrap, cfg.seed ^ 0xb1a) {
        Ok(fit) => {
            rec.summary.push(("bias_exponent".into(), fit.exponent));
            rec.summary.push(("bias_exponent_ci_lo".into(), fit.ci_lo));
            rec.summary.push(("bias_exponent_ci_hi".into(), fit.ci_hi));
            rec.fits.push(("bias_vs_radius".into(), fit));
        }
        Err(e) => rec.warnings.push(format!("bias fit unavailable: {e}")),
    }

    // soft-min superadditivity defects (reported, not asserted)
    let sampler = cfg.sampler();
    let mcfg = cfg.metric_cfg(cfg.mu);
    let t_max = cfg.t_list.iter().cloned().fold(0.0, f64::max);
    if t_max > 0.0 {
        let r_ball = 4.0 * t_max;
        match softmin_passage_stats(
            &sampler,
            cfg.mu,
            cfg.sigma_soft,
            &cfg.t_list,
            r_ball,
            cfg.n_replicas.min(20),
            cfg.grid,
            &mcfg,
        ) {
            Ok(stats) => {
                let mut t = Table::new("softmin_superadd", &["t", "s", "defect"]);
                for (a, b, d) in &stats.superadd_defects {
                    t.rows.push(vec![*a, *b, *d]);
                }
                rec.tables.push(t);
            }
            Err(e) => rec.warnings.push(format!("soft-min defects unavailable: {e}")),
        }
    }
    rec.tables.push(bias_table);
    rec.wall_clock = start.elapsed().as_secs_f64();
    Ok(rec)
}

pub const CHECK_GROWTH_LOWER: f64 = 0.0;
pub const CHECK_GROWTH_UPPER: f64 = 1.0;
pub const CHECK_SUBADD: f64 = 2.0;
pub const CHECK_MOVEFRONT: f64 = 3.0;
pub const CHECK_DPP: f64 = 4.0;
pub const CHECK_SETBOUND: f64 = 5.0;
pub const CHECK_CONNECTED: f64 = 6.0;
pub const CHECK_SOFTMIN: f64 = 7.0;

struct InvariantRows {
    checks: Vec<(f64, f64, f64)>,
    localization: Vec<(f64, f64, f64)>,
}

/// The metric invariant suite on independent replicas: growth bounds,
/// subadditivity triples, front motion and connectivity, the dynamic
/// programming defect, the set lower bound and the soft-min subsolution
/// defect. Localization gap points are pooled for the decay diagnostic.
pub fn run_invariants(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let mut rec = ExperimentRecord::new(ExperimentKind::Invariants);
    rec.replica_seeds = replica_seeds(cfg);
    let sampler = cfg.sampler();
    let mcfg = cfg.metric_cfg(cfg.mu);
    let radius = cfg.domain_radius;
    let h = cfg.grid.h;
    let theta = cfg.theta_list.first().copied().unwrap_or(0.1);

    let rows: Vec<Result<InvariantRows>> = (0..cfg.n_replicas as u64)
        .into_par_iter()
        .map(|k| -> Result<InvariantRows> {
            let env = sampler.env(k)?;
            let sol = solve_metric(
                &env,
                cfg.mu,
                &SourceSpec::origin(),
                GridDomain::symmetric(env.dim(), h, radius)?,
                &mcfg,
            )?;
            let mut checks = Vec::new();

            let (lo, hi) = growth_violations(&sol);
            checks.push((CHECK_GROWTH_LOWER, lo, 1e-9));
            checks.push((CHECK_GROWTH_UPPER, hi, 1e-9));

            // subadditivity over a small source pool
            let offset = 0.3 * radius;
            let sources = if env.dim() == 2 {
                vec![[offset, 0.0], [0.0, offset], [-offset, offset * 0.5]]
            } else {
                vec![[offset, 0.0], [-offset, 0.0]]
            };
            let mut pool = vec![sol.clone()];
            for &src in &sources {
                pool.push(solve_metric(
                    &env,
                    cfg.mu,
                    &SourceSpec::point(src),
                    GridDomain::symmetric(env.dim(), h, radius)?,
                    &mcfg,
                )?);
            }
            let mut anchor_pts = vec![[0.0, 0.0]];
            anchor_pts.extend(sources.iter().cloned());
            let lhat = pool.iter().map(|s| s.slope_max).fold(0.0f64, f64::max);
            let mut rng = CounterRng::new(key(&[cfg.seed, k, 0x5abadd]));
            let mut worst_subadd = f64::NEG_INFINITY;
            for _ in 0..100 {
                let a = (rng.next_u64() % pool.len() as u64) as usize;
                let b = (rng.next_u64() % pool.len() as u64) as usize;
                if a == b {
                    continue;
                }
                let mut y = [0.0; 2];
                for c in y.iter_mut().take(env.dim()) {
                    *c = rng.uniform_in(-0.7 * radius, 0.7 * radius);
                }
                let (Some(lhs), Some(mid), Some(leg)) = (
                    pool[a].value_at(y),
                    pool[b].value_at(y),
                    pool[a].value_at(anchor_pts[b]),
                ) else {
                    continue;
                };
                worst_subadd = worst_subadd.max(lhs - (mid + leg + lhat + 10.0 * h));
            }
            checks.push((CHECK_SUBADD, worst_subadd, 0.0));

            // front motion + connectivity on a ladder of levels
            let m_deep = 0.55 * sol.m.max_interior();
            let levels: Vec<f64> = (1..=4).map(|j| m_deep * j as f64 / 4.0).collect();
            let fronts: Vec<_> = levels
                .iter()
                .map(|&t| sublevel_front(&sol, t))
                .collect::<Result<_>>()?;
            let mut worst_move = f64::NEG_INFINITY;
            let mut all_connected = true;
            for i in 0..fronts.len() {
                all_connected &= fronts[i].connected;
                for j in (i + 1)..fronts.len() {
                    let d = front_hausdorff(&sol, &fronts[i], &fronts[j]);
                    let bound =
                        (levels[j] - levels[i]) / sol.slope_min.max(1e-9) + 2.0 + 3.0 * h;
                    worst_move = worst_move.max(d - bound);
                }
            }
            checks.push((CHECK_MOVEFRONT, worst_move, 0.0));
            checks.push((CHECK_CONNECTED, if all_connected { 0.0 } else { 1.0 }, 0.5));

            // dynamic programming defect at a far probe
            let t_dpp = (0.4 * m_deep).max(1.0);
            let probe = [0.8 * radius, 0.0];
            let dpp = dpp_defect(&env, &sol, probe, t_dpp, &mcfg)?;
            checks.push((CHECK_DPP, dpp, 8.0 * sol.slope_max + 10.0 * h));

            // set lower bound on a front-sourced re-solve
            let front = sublevel_front(&sol, t_dpp)?;
            let re = solve_metric(
                &env,
                cfg.mu,
                &SourceSpec::GridSet { nodes: front.cells, fatten: false },
                GridDomain::symmetric(env.dim(), h, radius)?,
                &mcfg,
            )?;
            checks.push((CHECK_SETBOUND, set_lower_bound_violation(&re), 1e-9));

            // soft-min subsolution defect
            let shift = 1.5f64.min(0.2 * radius);
            let softmin_sources = [[0.0, 0.0], [shift, 0.0]];
            let sols: Vec<_> = softmin_sources
                .iter()
                .map(|&s| {
                    solve_metric(
                        &env,
                        cfg.mu,
                        &SourceSpec::point(s),
                        GridDomain::symmetric(env.dim(), h, radius)?,
                        &mcfg,
                    )
                })
                .collect::<Result<_>>()?;
            let (_, report) = softmin_subsolution(&env, &sols, theta)?;
            checks.push((
                CHECK_SOFTMIN,
                report.defect,
                report.level + 10.0 * mcfg.scheme.residual_tol,
            ));

            // localization gap curve
            let sub_r = (0.45 * radius).max(4.0);
            let lev_top = 0.5 * sol.slope_min * (sub_r - 2.0);
            let levels: Vec<f64> = (1..=5).map(|j| lev_top * j as f64 / 5.0).collect();
            let curve = localization_gap(&env, cfg.mu, sub_r, h, &levels, &mcfg)?;
            let localization = curve
                .points
                .iter()
                .map(|p| (p.level, p.depth, p.gap))
                .collect();
            Ok(InvariantRows { checks, localization })
        })
        .collect();

    let mut check_table = Table::new("checks", &["replica", "check", "value", "bound", "pass"]);
    let mut loc_table = Table::new("localization", &["replica", "level", "depth", "gap"]);
    let mut all_pass = true;
    let mut n_fail = 0usize;
    for (k, row) in rows.iter().enumerate() {
        match row {
            Ok(r) => {
                for &(check, value, bound) in &r.checks {
                    let pass = value <= bound;
                    all_pass &= pass;
                    if !pass {
                        n_fail += 1;
                        rec.warnings.push(format!(
                            "replica {k} (seed {}): check {check} value {value:.4e} > bound {bound:.4e}",
                            rec.replica_seeds[k]
                        ));
                    }
                    check_table
                        .rows
                        .push(vec![k as f64, check, value, bound, pass as u8 as f64]);
                }
                for &(level, depth, gap) in &r.localization {
                    loc_table.rows.push(vec![k as f64, level, depth, gap]);
                }
            }
            Err(e) => {
                all_pass = false;
                n_fail += 1;
                rec.warnings.push(format!("replica {k} faulted: {e}"));
            }
        }
    }

    // pooled localization diagnostics
    let depths: Vec<f64> = loc_table.rows.iter().map(|r| r[2]).collect();
    let gaps: Vec<f64> = loc_table.rows.iter().map(|r| r[3]).collect();
    let gap_min = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    rec.summary.push(("localization_gap_min".into(), gap_min));
    if depths.len() >= 3 {
        if let Ok(rc) = rank_correlation(&depths, &gaps) {
            rec.summary.push(("localization_rank_corr".into(), rc));
        }
        let usable: Vec<(f64, f64)> = depths
            .iter()
            .zip(&gaps)
            .filter(|(_, &g)| g > 0.0)
            .map(|(&d, &g)| (d, g.ln()))
            .collect();
        if usable.len() >= 3 {
            let xs: Vec<f64> = usable.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = usable.iter().map(|p| p.1).collect();
            let ws = vec![1.0; xs.len()];
            if let Ok(fit) = weighted_linear_fit(&xs, &ys, &ws) {
                rec.summary.push(("localization_log_slope".into(), fit.slope));
                rec.summary.push((
                    "localization_log_slope_ci_hi".into(),
                    fit.slope + 1.96 * fit.slope_se,
                ));
            }
        }
    }

    rec.summary.push(("n_failures".into(), n_fail as f64));
    rec.pass = Some(all_pass);
    rec.tables.push(check_table);
    rec.tables.push(loc_table);
    rec.wall_clock = start.elapsed().as_secs_f64();
    Ok(rec)
}

/// Corrector rate: `|delta v(0, p) + Hbar(p)|` against delta, with the
/// effective Hamiltonian estimated by the metric pipeline first.
pub fn run_cell_rate(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let mut rec = ExperimentRecord::new(ExperimentKind::CellRate);
    rec.replica_seeds = replica_seeds(cfg);
    let sampler = cfg.sampler();
    let p = cfg.p_list.first().copied().unwrap_or([1.0, 0.0]);
    let mut pipe = HbarPipeline::new(&sampler, cfg.hbar_cfg());
    let hbar = pipe.estimate(p)?;
    rec.summary.push(("hbar".into(), hbar.value));
    rec.summary.push(("hbar_half_width".into(), hbar.half_width));

    let curve = crate::cell::corrector_error(
        &sampler,
        p,
        &cfg.delta_list,
        hbar.value,
        cfg.n_replicas,
        cfg.grid,
        cfg.n_bootstrap,
    )?;
    let mut rows = Table::new("rows", &["delta", "replica", "error"]);
    let mut means = Table::new("means", &["delta", "mean_error", "q90", "sensitivity"]);
    for pt in &curve.points {
        for (k, &e) in pt.errors.iter().enumerate() {
            rows.rows.push(vec![pt.delta, k as f64, e]);
        }
        means
            .rows
            .push(vec![pt.delta, pt.summary.mean, pt.summary.q90, pt.mean_sensitivity]);
    }
    if let Some(fit) = &curve.fit {
        rec.summary.push(("rate_exponent".into(), fit.exponent));
        rec.summary.push(("rate_exponent_ci_lo".into(), fit.ci_lo));
        rec.summary.push(("rate_exponent_ci_hi".into(), fit.ci_hi));
        rec.fits.push(("error_vs_delta".into(), fit.clone()));
    }
    rec.tables.push(rows);
    rec.tables.push(means);
    rec.wall_clock = start.elapsed().as_secs_f64();
    Ok(rec)
}

/// Homogenization rate for the time-dependent problem: the effective
/// Hamiltonian table and its conjugate feed a Hopf-Lax reference.
pub fn run_evolve_rate(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let mut rec = ExperimentRecord::new(ExperimentKind::EvolveRate);
    rec.replica_seeds = replica_seeds(cfg);
    let sampler = cfg.sampler();
    let g = InitialDatum::CosBump { amp: cfg.g_amp, width: cfg.g_width };
    let d = sampler.params().d;
    let p_max = g.grad_bound(d) + 1.0;
    let n_p = (2.0 * p_max / 0.1).ceil() as usize;
    let p_grid: Vec<[f64; 2]> = (0..=n_p)
        .map(|i| [-p_max + 2.0 * p_max * i as f64 / n_p as f64, 0.0])
        .collect();
    let mut pipe = HbarPipeline::new(&sampler, cfg.hbar_cfg());
    let table = HbarTable::build(&mut pipe, &p_grid)?;
    table.check_invariants()?;
    let lbar = legendre_transform(&table, 400)?;

    let curve = homog_error(
        &sampler,
        &g,
        &cfg.eps_list,
        cfg.t_final,
        &lbar,
        cfg.n_replicas,
        cfg.grid,
        &EvolveConfig::default(),
    )?;
    let mut rows = Table::new("rows", &["eps", "replica", "sup_error"]);
    let mut means = Table::new("means", &["eps", "mean_error", "q90"]);
    for pt in &curve.points {
        for (k, &e) in pt.errors.iter().enumerate() {
            rows.rows.push(vec![pt.eps, k as f64, e]);
        }
        means.rows.push(vec![pt.eps, pt.summary.mean, pt.summary.q90]);
    }
    if let Some(fit) = &curve.fit {
        rec.summary.push(("rate_exponent".into(), fit.exponent));
        rec.summary.push(("rate_exponent_ci_lo".into(), fit.ci_lo));
        rec.summary.push(("rate_exponent_ci_hi".into(), fit.ci_hi));
        rec.fits.push(("error_vs_eps".into(), fit.clone()));
    }
    rec.summary.push(("lipschitz_hat".into(), curve.lipschitz_hat));
    let mut hbar_table = Table::new("hbar", &["p0", "p1", "value", "half_width", "saturated"]);
    for (i, p) in table.p_grid.iter().enumerate() {
        hbar_table.rows.push(vec![
            p[0],
            p[1],
            table.values[i],
            table.half_widths[i],
            table.saturated[i] as u8 as f64,
        ]);
    }
    rec.tables.push(rows);
    rec.tables.push(means);
    rec.tables.push(hbar_table);
    rec.wall_clock = start.elapsed().as_secs_f64();
    Ok(rec)
}

/// Exposed-point geometry sweep over random convex polygons, plus the
/// degenerate lens case against its closed form.
pub fn run_straszewicz(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let mut rec = ExperimentRecord::new(ExperimentKind::Straszewicz);
    let mut table = Table::new(
        "rows",
        &["polygon", "r_factor", "diam", "gap", "bound", "n_strict", "pass"],
    );
    let mut all_pass = true;
    let mut rng = CounterRng::new(key(&[cfg.seed, 0x57a]));
    let mut made = 0usize;
    let mut attempts = 0usize;
    while made < cfg.n_polygons && attempts < 20 * cfg.n_polygons {
        attempts += 1;
        let n = 3 + (rng.next_u64() % 10) as usize;
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)])
            .collect();
        let k = match ConvexBody2D::hull_of(&pts) {
            Ok(k) if !k.is_degenerate() => k,
            _ => continue,
        };
        let diam = k.diameter();
        for &f in &cfg.r_factors {
            let r = f * diam;
            match straszewicz_gap(&k, r) {
                Ok(res) => {
                    let pass = res.gap <= res.bound + 1e-6;
                    all_pass &= pass;
                    table.rows.push(vec![
                        made as f64,
                        f,
                        diam,
                        res.gap,
                        res.bound,
                        res.strict_vertices.len() as f64,
                        pass as u8 as f64,
                    ]);
                }
                Err(e) => {
                    all_pass = false;
                    rec.warnings.push(format!("polygon {made}, r = {r}: {e}"));
                }
            }
        }
        made += 1;
    }

    // lens closed form for a degenerate segment
    let seg = ConvexBody2D::hull_of(&[[-1.0, 0.0], [1.0, 0.0]])?;
    let mut lens_err = 0.0f64;
    for r in [3.0, 6.0, 12.0] {
        let res = straszewicz_gap(&seg, r)?;
        let exact = r - (r * r - 1.0).sqrt();
        lens_err = lens_err.max((res.gap - exact).abs());
    }
    rec.summary.push(("lens_closed_form_error".into(), lens_err));
    rec.summary.push(("n_polygons".into(), made as f64));
    all_pass &= lens_err <= 1e-9;
    rec.pass = Some(all_pass);
    rec.tables.push(table);
    rec.wall_clock = start.elapsed().as_secs_f64();
    Ok(rec)
}

/// Soft-min passage statistics table.
pub fn run_softmin_stats(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let mut rec = ExperimentRecord::new(ExperimentKind::SoftminStats);
    rec.replica_seeds = replica_seeds(cfg);
    let sampler = cfg.sampler();
    let mcfg = cfg.metric_cfg(cfg.mu);
    let t_max = cfg.t_list.iter().cloned().fold(0.0, f64::max);
    let r_ball = cfg
        .r_list
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(4.0 * t_max);
    let stats = softmin_passage_stats(
        &sampler,
        cfg.mu,
        cfg.sigma_soft,
        &cfg.t_list,
        r_ball,
        cfg.n_replicas,
        cfg.grid,
        &mcfg,
    )?;
    let mut table = Table::new("rows", &["t", "g_cap", "g_soft", "passage_mean"]);
    for (i, &t) in stats.t_list.iter().enumerate() {
        table
            .rows
            .push(vec![t, stats.cap_g[i], stats.g_hat[i], stats.passage_mean[i]]);
    }
    let mut superadd = Table::new("superadd", &["t", "s", "defect"]);
    for (a, b, d) in &stats.superadd_defects {
        superadd.rows.push(vec![*a, *b, *d]);
    }
    let worst = stats
        .g_hat
        .iter()
        .zip(&stats.passage_mean)
        .map(|(g, m)| g - m)
        .fold(f64::NEG_INFINITY, f64::max);
    rec.summary.push(("g_minus_passage_max".into(), worst));
    rec.tables.push(table);
    rec.tables.push(superadd);
    rec.wall_clock = start.elapsed().as_secs_f64();
    Ok(rec)
}

/// Single metric solve: the field as a table plus slope metadata.
pub fn run_metric(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let mut rec = ExperimentRecord::new(ExperimentKind::Metric);
    rec.replica_seeds = replica_seeds(cfg);
    let sampler = cfg.sampler();
    let env = sampler.env(0)?;
    let mcfg = cfg.metric_cfg(cfg.mu);
    let sol = solve_metric(
        &env,
        cfg.mu,
        &SourceSpec::origin(),
        GridDomain::symmetric(env.dim(), cfg.grid.h, cfg.domain_radius)?,
        &mcfg,
    )?;
    let mut field = Table::new("field", &["y0", "y1", "m"]);
    for ix in 0..sol.domain().len() {
        let y = sol.domain().coord(ix);
        field.rows.push(vec![y[0], y[1], sol.m.values[ix]]);
    }
    rec.summary.push(("mu".into(), sol.mu));
    rec.summary.push(("slope_min".into(), sol.slope_min));
    rec.summary.push(("slope_max".into(), sol.slope_max));
    rec.summary.push(("a_mu".into(), sol.a_mu));
    rec.summary.push(("residual".into(), sol.residual));
    rec.summary.push(("sweeps".into(), sol.sweeps as f64));
    for w in &sol.warnings {
        rec.warnings.push(w.clone());
    }
    rec.tables.push(field);
    rec.wall_clock = start.elapsed().as_secs_f64();
    Ok(rec)
}

/// Effective Hamiltonian over the configured p list.
pub fn run_hbar(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let mut rec = ExperimentRecord::new(ExperimentKind::Hbar);
    rec.replica_seeds = replica_seeds(cfg);
    let sampler = cfg.sampler();
    let mut pipe = HbarPipeline::new(&sampler, cfg.hbar_cfg());
    let table = HbarTable::build(&mut pipe, &cfg.p_list)?;
    table.check_invariants()?;
    let mut t = Table::new("hbar", &["p0", "p1", "value", "half_width", "saturated"]);
    for (i, p) in table.p_grid.iter().enumerate() {
        t.rows.push(vec![
            p[0],
            p[1],
            table.values[i],
            table.half_widths[i],
            table.saturated[i] as u8 as f64,
        ]);
    }
    rec.summary
        .push(("mu_solves".into(), pipe.mu_evaluated.len() as f64));
    rec.tables.push(t);
    rec.wall_clock = start.elapsed().as_secs_f64();
    Ok(rec)
}

/// Dispatch by experiment kind, inside a pool of the configured width.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    with_pool(cfg.threads, || match cfg.kind {
        ExperimentKind::Fluctuations => run_fluctuations(cfg),
        ExperimentKind::Bias => run_bias(cfg),
        ExperimentKind::CellRate => run_cell_rate(cfg),
        ExperimentKind::EvolveRate => run_evolve_rate(cfg),
        ExperimentKind::Invariants => run_invariants(cfg),
        ExperimentKind::Straszewicz => run_straszewicz(cfg),
        ExperimentKind::SoftminStats => run_softmin_stats(cfg),
        ExperimentKind::Metric => run_metric(cfg),
        ExperimentKind::Hbar => run_hbar(cfg),
    })
}
