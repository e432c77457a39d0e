//! Effective quantities: directional front speeds `mbar_mu`, the effective
//! Hamiltonian `Hbar` recovered by bisection over the metric problem, the
//! Legendre transform, level-set flatness checks and soft-min passage
//! statistics.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::environment::{build_environment, EnvParams, Environment};
use crate::geometry::{halfplane_intersection, ConvexBody2D};
use crate::grid::{GridDomain, SourceSpec};
use crate::metric::{plane_passage, solve_metric, MetricConfig};
use crate::stats::{aggregate_stats, pairwise_sum};
use crate::{HjError, Result};

/// Deterministic replica factory: replica `k` is the base parameter set
/// with its replica index replaced (common random numbers across mu, p,
/// delta within a replica follow automatically).
#[derive(Clone, Debug)]
pub struct EnvSampler {
    base: EnvParams,
}

impl EnvSampler {
    pub fn new(base: EnvParams) -> EnvSampler {
        EnvSampler { base }
    }

    pub fn params(&self) -> &EnvParams {
        &self.base
    }

    pub fn env(&self, replica: u64) -> Result<Environment> {
        let mut p = self.base.clone();
        p.replica = replica;
        build_environment(p)
    }
}

/// Grid resolution and safety margin for the metric solves behind the
/// estimators; the domain radius is `needed + margin`.
#[derive(Clone, Copy, Debug)]
pub struct SolveGrid {
    pub h: f64,
    pub margin: f64,
}

/// Monte Carlo table of directional front speeds.
///
/// Values are normalized per unit distance to the source ball,
/// `m(Re, 0) / (R - 1)`, which is exact for constant coefficients and
/// removes the O(1/R) head start of the unit source ball.
#[derive(Clone, Debug)]
pub struct MbarEstimate {
    pub mu: f64,
    pub direction: [f64; 2],
    pub radii: Vec<f64>,
    /// `per_radius[i][k]` = normalized value at radius i, replica k.
    pub per_radius: Vec<Vec<f64>>,
    /// Mean over replicas at the largest radius: the front-speed estimate.
    pub mean: f64,
    pub variance: f64,
    pub n_replicas: usize,
    pub n_dropped: usize,
    /// Subadditive upper bound `min over R of (mean_R + L_hat / R)`.
    pub subadd_upper: f64,
    pub slope_min: f64,
    pub slope_max: f64,
}

/// One metric solve from the origin, read at `R e` for every direction and
/// radius. Returns `values[dir][radius]`, normalized by `R - 1`.
fn solve_and_read(
    env: &Environment,
    mu: f64,
    dirs: &[[f64; 2]],
    radii: &[f64],
    grid: SolveGrid,
    cfg: &MetricConfig,
) -> Result<(Vec<Vec<f64>>, f64, f64)> {
    let r_max = radii.iter().cloned().fold(0.0, f64::max);
    let domain = GridDomain::symmetric(env.dim(), grid.h, r_max + grid.margin)?;
    let sol = solve_metric(env, mu, &SourceSpec::origin(), domain, cfg)?;
    let mut vals = vec![vec![0.0; radii.len()]; dirs.len()];
    for (di, e) in dirs.iter().enumerate() {
        for (ri, &r) in radii.iter().enumerate() {
            let y = [r * e[0], r * e[1]];
            let m = sol.value_at(y).ok_or_else(|| {
                HjError::InvalidParams(format!("read point {y:?} outside solve domain"))
            })?;
            vals[di][ri] = m / (r - 1.0);
        }
    }
    Ok((vals, sol.slope_min, sol.slope_max))
}

/// Monte Carlo front-speed estimate in one direction. Failed replicas are
/// dropped (and counted); more than 20% drops is a fault.
pub fn estimate_mbar(
    sampler: &EnvSampler,
    mu: f64,
    e: [f64; 2],
    radii: &[f64],
    n_replicas: usize,
    grid: SolveGrid,
    cfg: &MetricConfig,
) -> Result<MbarEstimate> {
    if radii.is_empty() || radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HjError::InvalidParams("radii must be strictly increasing".into()));
    }
    if radii[0] <= 1.0 {
        return Err(HjError::InvalidParams("radii must exceed the unit source ball".into()));
    }
    let dirs = vec![e];
    let results: Vec<Option<(Vec<Vec<f64>>, f64, f64)>> = (0..n_replicas as u64)
        .into_par_iter()
        .map(|k| {
            let env = sampler.env(k).ok()?;
            solve_and_read(&env, mu, &dirs, radii, grid, cfg).ok()
        })
        .collect();

    let kept: Vec<&(Vec<Vec<f64>>, f64, f64)> = results.iter().flatten().collect();
    let n_dropped = n_replicas - kept.len();
    if kept.is_empty() || n_dropped * 5 > n_replicas {
        return Err(HjError::MonteCarlo(format!(
            "{n_dropped}/{n_replicas} replicas failed in the front-speed estimate"
        )));
    }
    let mut per_radius = vec![Vec::with_capacity(kept.len()); radii.len()];
    let mut slope_min = f64::INFINITY;
    let mut slope_max = 0.0f64;
    for (vals, smin, smax) in kept.iter() {
        for (ri, row) in per_radius.iter_mut().enumerate() {
            row.push(vals[0][ri]);
        }
        slope_min = slope_min.min(*smin);
        slope_max = slope_max.max(*smax);
    }
    let top = aggregate_stats(per_radius.last().unwrap())?;
    let mut subadd_upper = f64::INFINITY;
    for (ri, &r) in radii.iter().enumerate() {
        let m = aggregate_stats(&per_radius[ri])?.mean;
        subadd_upper = subadd_upper.min(m + slope_max / r);
    }
    Ok(MbarEstimate {
        mu,
        direction: e,
        radii: radii.to_vec(),
        per_radius,
        mean: top.mean,
        variance: if top.variance.is_nan() { 0.0 } else { top.variance },
        n_replicas: kept.len(),
        n_dropped,
        subadd_upper,
        slope_min,
        slope_max,
    })
}

/// Configuration of the effective-Hamiltonian bisection.
#[derive(Clone, Debug)]
pub struct HbarConfig {
    pub mu_min: f64,
    pub mu_max: f64,
    /// Bisection interval half-width target.
    pub tol: f64,
    pub n_directions: usize,
    pub radii: Vec<f64>,
    pub n_replicas: usize,
    pub grid: SolveGrid,
    /// Over-relaxation weight for the underlying metric sweeps.
    pub sor: f64,
}

impl HbarConfig {
    pub fn directions(&self, d: usize) -> Vec<[f64; 2]> {
        if d == 1 {
            vec![[1.0, 0.0], [-1.0, 0.0]]
        } else {
            (0..self.n_directions)
                .map(|i| {
                    let t = i as f64 / self.n_directions as f64 * std::f64::consts::TAU;
                    [t.cos(), t.sin()]
                })
                .collect()
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HbarEstimate {
    pub p: [f64; 2],
    pub value: f64,
    pub half_width: f64,
    /// The infimum saturated at `mu_min`: the true value is `<= mu_min`.
    pub saturated_low: bool,
}

/// Shared bisection pipeline. Front speeds per direction are cached per mu
/// and reused across p (common random numbers keep the predicate monotone
/// in mu).
pub struct HbarPipeline<'a> {
    sampler: &'a EnvSampler,
    pub cfg: HbarConfig,
    metric_cfg_of: fn(f64, &HbarConfig) -> MetricConfig,
    dirs: Vec<[f64; 2]>,
    cache: BTreeMap<u64, Vec<f64>>,
    widened: bool,
    pub mu_evaluated: Vec<f64>,
}

fn default_metric_cfg(mu: f64, cfg: &HbarConfig) -> MetricConfig {
    let mut m = MetricConfig::for_mu(mu);
    m.mu_min = cfg.mu_min.min(m.mu_min);
    m.mu_max = cfg.mu_max.max(m.mu_max);
    m.scheme.sor = cfg.sor;
    m
}

impl<'a> HbarPipeline<'a> {
    pub fn new(sampler: &'a EnvSampler, cfg: HbarConfig) -> HbarPipeline<'a> {
        let dirs = cfg.directions(sampler.params().d);
        HbarPipeline {
            sampler,
            cfg,
            metric_cfg_of: default_metric_cfg,
            dirs,
            cache: BTreeMap::new(),
            widened: false,
            mu_evaluated: Vec::new(),
        }
    }

    /// Front-speed means for every direction at this mu (cached).
    fn mbar_all(&mut self, mu: f64) -> Result<Vec<f64>> {
        if let Some(v) = self.cache.get(&mu.to_bits()) {
            return Ok(v.clone());
        }
        let cfg = (self.metric_cfg_of)(mu, &self.cfg);
        let dirs = self.dirs.clone();
        let radii = self.cfg.radii.clone();
        let grid = self.cfg.grid;
        let n = self.cfg.n_replicas;
        let results: Vec<Option<Vec<Vec<f64>>>> = (0..n as u64)
            .into_par_iter()
            .map(|k| {
                let env = self.sampler.env(k).ok()?;
                solve_and_read(&env, mu, &dirs, &radii, grid, &cfg)
                    .ok()
                    .map(|(v, _, _)| v)
            })
            .collect();
        let kept: Vec<&Vec<Vec<f64>>> = results.iter().flatten().collect();
        if kept.is_empty() || (n - kept.len()) * 5 > n {
            return Err(HjError::MonteCarlo(format!(
                "{}/{} replicas failed at mu = {mu}",
                n - kept.len(),
                n
            )));
        }
        let last = radii.len() - 1;
        let mut means = Vec::with_capacity(dirs.len());
        for di in 0..dirs.len() {
            let vals: Vec<f64> = kept.iter().map(|v| v[di][last]).collect();
            means.push(pairwise_sum(&vals) / vals.len() as f64);
        }
        self.cache.insert(mu.to_bits(), means.clone());
        self.mu_evaluated.push(mu);
        Ok(means)
    }

    /// `min over directions of (mbar_mu(e) - p . e) >= 0`.
    fn predicate(&mut self, mu: f64, p: [f64; 2]) -> Result<bool> {
        let means = self.mbar_all(mu)?;
        let mut worst = f64::INFINITY;
        for (e, m) in self.dirs.iter().zip(&means) {
            worst = worst.min(m - (p[0] * e[0] + p[1] * e[1]));
        }
        Ok(worst >= 0.0)
    }

    /// `Hbar(p)` as the infimum over mu of the support condition,
    /// by bisection on `[mu_min, mu_max]`.
    pub fn estimate(&mut self, p: [f64; 2]) -> Result<HbarEstimate> {
        let pn = (p[0] * p[0] + p[1] * p[1]).sqrt();
        if pn == 0.0 {
            // front speeds are nonnegative, so the condition holds for all mu
            return Ok(HbarEstimate { p, value: 0.0, half_width: 0.0, saturated_low: true });
        }
        loop {
            let at_min = self.predicate(self.cfg.mu_min, p)?;
            let at_max = self.predicate(self.cfg.mu_max, p)?;
            if at_min {
                if !at_max {
                    // monotone predicates cannot hold low and fail high
                    if !self.widened {
                        self.widened = true;
                        self.cfg.n_replicas *= 2;
                        self.cache.clear();
                        continue;
                    }
                    return Err(HjError::MonteCarlo(
                        "non-monotone support predicate after widening replicas".into(),
                    ));
                }
                return Ok(HbarEstimate {
                    p,
                    value: self.cfg.mu_min,
                    half_width: self.cfg.mu_min,
                    saturated_low: true,
                });
            }
            if !at_max {
                return Err(HjError::InvalidParams(format!(
                    "Hbar({p:?}) exceeds mu_max = {}",
                    self.cfg.mu_max
                )));
            }
            let mut lo = self.cfg.mu_min;
            let mut hi = self.cfg.mu_max;
            while hi - lo > 2.0 * self.cfg.tol {
                let mid = 0.5 * (lo + hi);
                if self.predicate(mid, p)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(HbarEstimate {
                p,
                value: 0.5 * (lo + hi),
                half_width: 0.5 * (hi - lo),
                saturated_low: false,
            });
        }
    }

    /// The mu-sublevel set of `Hbar` as the intersection of the halfplanes
    /// `{p : p . e <= mbar_mu(e)}` over the direction grid (d = 2 only).
    pub fn level_set(&mut self, mu: f64) -> Result<ConvexBody2D> {
        if self.sampler.params().d != 2 {
            return Err(HjError::Geometry("level sets are built in d = 2 only".into()));
        }
        let means = self.mbar_all(mu)?;
        halfplane_intersection(&self.dirs, &means, 1e3)
    }
}

/// Tabulated effective Hamiltonian on a p-grid.
#[derive(Clone, Debug)]
pub struct HbarTable {
    pub d: usize,
    pub p_grid: Vec<[f64; 2]>,
    pub values: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub saturated: Vec<bool>,
    pub n_directions: usize,
}

impl HbarTable {
    pub fn build(pipeline: &mut HbarPipeline, p_grid: &[[f64; 2]]) -> Result<HbarTable> {
        let mut values = Vec::with_capacity(p_grid.len());
        let mut half_widths = Vec::with_capacity(p_grid.len());
        let mut saturated = Vec::with_capacity(p_grid.len());
        for &p in p_grid {
            let est = pipeline.estimate(p)?;
            // saturated entries report the upper end; store the midpoint 0
            // convention only at p = 0 where the value is exact
            values.push(est.value);
            half_widths.push(est.half_width);
            saturated.push(est.saturated_low);
        }
        Ok(HbarTable {
            d: pipeline.sampler.params().d,
            p_grid: p_grid.to_vec(),
            values,
            half_widths,
            saturated,
            n_directions: pipeline.dirs.len(),
        })
    }

    /// Invariant checks: zero at the origin, nonnegative, and midpoint
    /// convexity along stored grid lines within estimate uncertainty.
    pub fn check_invariants(&self) -> Result<()> {
        for (i, &p) in self.p_grid.iter().enumerate() {
            if p == [0.0, 0.0] && self.values[i].abs() > 1e-12 {
                return Err(HjError::Stats(format!("Hbar(0) = {} != 0", self.values[i])));
            }
            if self.values[i] < -1e-12 {
                return Err(HjError::Stats(format!("Hbar({p:?}) = {} < 0", self.values[i])));
            }
        }
        // midpoint convexity on consecutive collinear triples
        for w in 0..self.p_grid.len().saturating_sub(2) {
            let (a, b, c) = (self.p_grid[w], self.p_grid[w + 1], self.p_grid[w + 2]);
            let collinear = ((b[0] - a[0]) - (c[0] - b[0])).abs() < 1e-12
                && ((b[1] - a[1]) - (c[1] - b[1])).abs() < 1e-12;
            if collinear {
                let slack = self.half_widths[w] + 2.0 * self.half_widths[w + 1] + self.half_widths[w + 2];
                let mid = 0.5 * (self.values[w] + self.values[w + 2]);
                if self.values[w + 1] > mid + slack + 1e-9 {
                    return Err(HjError::Stats(format!(
                        "convexity violated near p = {:?}: {} > {}",
                        b,
                        self.values[w + 1],
                        mid + slack
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Tabulated Lagrangian (convex conjugate of the Hbar table).
#[derive(Clone, Debug)]
pub struct LbarTable {
    pub d: usize,
    pub v_grid: Vec<[f64; 2]>,
    pub values: Vec<f64>,
}

/// `Lbar(v) = max over the p-grid of (p . v - Hbar(p))` on a symmetric
/// v-grid sized to the table's reliable slope range.
pub fn legendre_transform(table: &HbarTable, n_v: usize) -> Result<LbarTable> {
    if table.p_grid.len() < 3 {
        return Err(HjError::Stats("p-grid too small for a conjugate".into()));
    }
    // reliable velocity range: max slope between grid points
    let mut v_max = 0.0f64;
    for i in 0..table.p_grid.len() {
        for j in (i + 1)..table.p_grid.len() {
            let dp = dist(table.p_grid[i], table.p_grid[j]);
            if dp > 1e-9 {
                v_max = v_max.max((table.values[i] - table.values[j]).abs() / dp);
            }
        }
    }
    let v_max = v_max.max(1e-6);
    let mut v_grid = Vec::new();
    if table.d == 1 {
        for i in 0..=n_v {
            let v = -v_max + 2.0 * v_max * i as f64 / n_v as f64;
            v_grid.push([v, 0.0]);
        }
    } else {
        let side = (n_v as f64).sqrt().ceil() as usize;
        for i in 0..=side {
            for j in 0..=side {
                v_grid.push([
                    -v_max + 2.0 * v_max * i as f64 / side as f64,
                    -v_max + 2.0 * v_max * j as f64 / side as f64,
                ]);
            }
        }
    }
    let values = v_grid
        .iter()
        .map(|v| {
            table
                .p_grid
                .iter()
                .zip(&table.values)
                .map(|(p, h)| p[0] * v[0] + p[1] * v[1] - h)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Ok(LbarTable { d: table.d, v_grid, values })
}

impl LbarTable {
    /// Piecewise-linear evaluation (1d tables); +inf outside the grid.
    pub fn eval_1d(&self, v: f64) -> f64 {
        let lo = self.v_grid.first().map(|g| g[0]).unwrap_or(0.0);
        let hi = self.v_grid.last().map(|g| g[0]).unwrap_or(0.0);
        if v < lo || v > hi {
            return f64::INFINITY;
        }
        let n = self.v_grid.len();
        let step = (hi - lo) / (n as f64 - 1.0);
        let pos = (v - lo) / step;
        let i = (pos.floor() as usize).min(n - 2);
        let w = pos - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    pub fn v_max(&self) -> f64 {
        self.v_grid
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Double transform back to the p-grid (biconjugate).
    pub fn biconjugate_at(&self, p: [f64; 2]) -> f64 {
        self.v_grid
            .iter()
            .zip(&self.values)
            .map(|(v, l)| p[0] * v[0] + p[1] * v[1] - l)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Flatness probe around an exposed direction of a level-set polygon:
/// `0 <= S(e + x) - S(e) - p . x <= r |x|^2` for the support function `S`.
#[derive(Clone, Debug)]
pub struct FlatnessReport {
    pub vertex: [f64; 2],
    pub lower_defect: f64,
    pub upper_defect: f64,
    pub n_probes: usize,
}

pub fn strict_convexity_flatness(
    k: &ConvexBody2D,
    vertex: [f64; 2],
    r: f64,
    n_probes: usize,
    seed: u64,
) -> Result<FlatnessReport> {
    // outward normal of a containing r-ball through the vertex
    let mut best_t = 0.0;
    let mut best_f = f64::INFINITY;
    for s in 0..1024 {
        let t = s as f64 / 1024.0 * std::f64::consts::TAU;
        let c = [vertex[0] - r * t.cos(), vertex[1] - r * t.sin()];
        let f = k
            .vertices()
            .iter()
            .map(|w| dist(*w, c))
            .fold(0.0f64, f64::max);
        if f < best_f {
            best_f = f;
            best_t = t;
        }
    }
    if best_f > r * (1.0 + 1e-9) + 1e-9 {
        return Err(HjError::Geometry(format!(
            "vertex {vertex:?} is not r-strictly convex for r = {r}"
        )));
    }
    let e = [best_t.cos(), best_t.sin()];
    let s_e = k.support(e);
    let mut rng = crate::rng::CounterRng::new(crate::rng::key(&[seed, 0xf1a7]));
    let mut lower = 0.0f64;
    let mut upper = 0.0f64;
    for _ in 0..n_probes {
        let x = [rng.uniform_in(-0.5, 0.5), rng.uniform_in(-0.5, 0.5)];
        let x2 = x[0] * x[0] + x[1] * x[1];
        if x2 > 0.25 {
            continue;
        }
        let lhs = k.support([e[0] + x[0], e[1] + x[1]]) - s_e - (vertex[0] * x[0] + vertex[1] * x[1]);
        lower = lower.max(-lhs);
        upper = upper.max(lhs - r * x2);
    }
    Ok(FlatnessReport { vertex, lower_defect: lower, upper_defect: upper, n_probes })
}

/// Soft-min passage statistics: truncated plane sums
/// `G(t) = mean over replicas of sum_z exp(-sigma m(z, 0))` over the lattice
/// points of the planes `{y_0 = +-t}` within the truncation ball, the
/// derived `g(t) = -log(G)/sigma`, superadditivity defects, and the Monte
/// Carlo plane-passage means for comparison.
#[derive(Clone, Debug)]
pub struct SoftminStats {
    pub sigma: f64,
    pub t_list: Vec<f64>,
    pub g_hat: Vec<f64>,
    pub cap_g: Vec<f64>,
    pub passage_mean: Vec<f64>,
    /// `(t, s, g(t+s) - g(t) - g(s))` for pairs with `t + s` in the list.
    pub superadd_defects: Vec<(f64, f64, f64)>,
    pub n_replicas: usize,
}

pub fn softmin_passage_stats(
    sampler: &EnvSampler,
    mu: f64,
    sigma: f64,
    t_list: &[f64],
    r_ball: f64,
    n_replicas: usize,
    grid: SolveGrid,
    cfg: &MetricConfig,
) -> Result<SoftminStats> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(HjError::InvalidParams(format!("sigma must lie in (0, 1], got {sigma}")));
    }
    if t_list.is_empty() {
        return Err(HjError::InvalidParams("empty t list".into()));
    }
    let t_max = t_list.iter().cloned().fold(0.0, f64::max);
    let d = sampler.params().d;

    let per_replica: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..n_replicas as u64)
        .into_par_iter()
        .map(|k| {
            let env = sampler.env(k).ok()?;
            let domain =
                GridDomain::symmetric(d, grid.h, r_ball.max(t_max) + grid.margin).ok()?;
            let sol = solve_metric(&env, mu, &SourceSpec::origin(), domain, cfg).ok()?;
            // Lemma-style truncation check against the realized slopes
            let need = sol.slope_max / sol.slope_min.max(1e-9) * t_max;
            if r_ball < need {
                return None;
            }
            let mut sums = Vec::with_capacity(t_list.len());
            let mut mins = Vec::with_capacity(t_list.len());
            for &t in t_list {
                let mut acc = 0.0;
                let mut visit = |y: [f64; 2]| {
                    if y[0] * y[0] + y[1] * y[1] <= r_ball * r_ball {
                        if let Some(m) = sol.value_at(y) {
                            acc += (-sigma * m).exp();
                        }
                    }
                };
                if d == 1 {
                    visit([t, 0.0]);
                    visit([-t, 0.0]);
                } else {
                    let k_max = r_ball.ceil() as i64;
                    for kk in -k_max..=k_max {
                        visit([t, kk as f64]);
                        visit([-t, kk as f64]);
                    }
                }
                sums.push(acc);
                mins.push(plane_passage(&sol, t, r_ball).ok()?);
            }
            Some((sums, mins))
        })
        .collect();

    let kept: Vec<&(Vec<f64>, Vec<f64>)> = per_replica.iter().flatten().collect();
    if kept.is_empty() || (n_replicas - kept.len()) * 5 > n_replicas {
        return Err(HjError::MonteCarlo(format!(
            "{}/{n_replicas} replicas failed in soft-min statistics",
            n_replicas - kept.len()
        )));
    }
    let mut cap_g = Vec::with_capacity(t_list.len());
    let mut g_hat = Vec::with_capacity(t_list.len());
    let mut passage_mean = Vec::with_capacity(t_list.len());
    for ti in 0..t_list.len() {
        let sums: Vec<f64> = kept.iter().map(|(s, _)| s[ti]).collect();
        let mins: Vec<f64> = kept.iter().map(|(_, m)| m[ti]).collect();
        let g = pairwise_sum(&sums) / sums.len() as f64;
        cap_g.push(g);
        g_hat.push(-g.max(1e-300).ln() / sigma);
        passage_mean.push(pairwise_sum(&mins) / mins.len() as f64);
    }
    let mut superadd_defects = Vec::new();
    for (i, &t) in t_list.iter().enumerate() {
        for (j, &s) in t_list.iter().enumerate().skip(i) {
            if let Some(k) = t_list.iter().position(|&u| (u - (t + s)).abs() < 1e-9) {
                superadd_defects.push((t, s, g_hat[k] - g_hat[i] - g_hat[j]));
            }
        }
    }
    Ok(SoftminStats {
        sigma,
        t_list: t_list.to_vec(),
        g_hat,
        cap_g,
        passage_mean,
        superadd_defects,
        n_replicas: kept.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{EnvKind, SigmaKind};

    fn det_params(d: usize) -> EnvParams {
        EnvParams {
            d,
            q: 2.0,
            lambda: 1.0,
            kind: EnvKind::Deterministic { coef: 1.0 },
            sigma: SigmaKind::Zero,
            constrained: false,
            seed: 0,
            replica: 0,
        }
    }

    fn grid() -> SolveGrid {
        SolveGrid { h: 0.1, margin: 3.0 }
    }

    #[test]
    fn deterministic_front_speed_is_sqrt_mu() {
        let sampler = EnvSampler::new(det_params(2));
        for (mu, want) in [(1.0, 1.0), (4.0, 2.0)] {
            let cfg = MetricConfig::for_mu(mu);
            let est = estimate_mbar(&sampler, mu, [1.0, 0.0], &[6.0, 12.0], 1, grid(), &cfg).unwrap();
            assert!(
                (est.mean - want).abs() <= 1.0 / 12.0 + 5.0 * 0.1,
                "mu = {mu}: {}",
                est.mean
            );
            // normalized estimator is exact on the axis for the eikonal case
            assert!((est.mean - want).abs() < 1e-6, "mu = {mu}: {}", est.mean);
            assert!(est.mean >= est.slope_min * 0.9 && est.mean <= est.slope_max * 1.1 + 0.1);
            assert!(est.subadd_upper >= est.mean - 1e-9);
        }
    }

    #[test]
    fn hbar_constant_coefficients() {
        let sampler = EnvSampler::new(det_params(2));
        let cfg = HbarConfig {
            mu_min: 0.25,
            mu_max: 4.0,
            tol: 0.02,
            n_directions: 16,
            radii: vec![8.0, 16.0],
            n_replicas: 1,
            grid: SolveGrid { h: 0.1, margin: 3.0 },
            sor: 1.0,
        };
        let mut pipe = HbarPipeline::new(&sampler, cfg);
        let zero = pipe.estimate([0.0, 0.0]).unwrap();
        assert_eq!(zero.value, 0.0);
        let one = pipe.estimate([1.0, 0.0]).unwrap();
        assert!((one.value - 1.0).abs() <= 0.05, "Hbar(1,0) = {}", one.value);
        // cached mus are reused across p
        let evaluated = pipe.mu_evaluated.len();
        let half = pipe.estimate([0.5, 0.0]).unwrap();
        assert!(
            (half.value - 0.25).abs() <= 0.05,
            "Hbar(0.5,0) = {} (saturated: {})",
            half.value,
            half.saturated_low
        );
        assert!(pipe.mu_evaluated.len() <= evaluated + 12);
    }

    #[test]
    fn one_dimensional_periodic_quadrature_oracle() {
        // A = 0, q = 2, V = v0 cos^2(pi y): the front speed solves
        // s(mu) = integral_0^1 sqrt(mu + V) dy and Hbar(p) inverts it.
        let params = EnvParams {
            d: 1,
            q: 2.0,
            lambda: 2.0,
            kind: EnvKind::Periodic { v0: 0.5, period: 1.0 },
            sigma: SigmaKind::Zero,
            constrained: false,
            seed: 0,
            replica: 0,
        };
        let sampler = EnvSampler::new(params);
        let cfg = HbarConfig {
            mu_min: 0.25,
            mu_max: 4.0,
            tol: 0.01,
            n_directions: 2,
            radii: vec![20.0, 40.0],
            n_replicas: 1,
            grid: SolveGrid { h: 0.02, margin: 3.0 },
            sor: 1.0,
        };
        let mut pipe = HbarPipeline::new(&sampler, cfg);

        let speed = |mu: f64| -> f64 {
            // composite Simpson over one period
            let n = 2000;
            let mut acc = 0.0;
            for i in 0..=n {
                let y = i as f64 / n as f64;
                let v = 0.5 * (std::f64::consts::PI * y).cos().powi(2);
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * (mu + v).sqrt();
            }
            acc / (3.0 * n as f64)
        };
        let hbar_oracle = |p: f64| -> f64 {
            // invert s(mu) = p by bisection
            let (mut lo, mut hi) = (1e-9, 16.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if speed(mid) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        for p in [1.0, 1.5] {
            let est = pipe.estimate([p, 0.0]).unwrap();
            let want = hbar_oracle(p);
            assert!(
                (est.value - want).abs() <= 0.05,
                "p = {p}: pipeline {} vs quadrature {want}",
                est.value
            );
        }
    }

    #[test]
    fn legendre_pair_and_biconjugate() {
        // dense quadratic table: conjugate of |p|^2 is |v|^2/4
        let p_grid: Vec<[f64; 2]> = (0..=80)
            .map(|i| [-2.0 + 4.0 * i as f64 / 80.0, 0.0])
            .collect();
        let values: Vec<f64> = p_grid.iter().map(|p| p[0] * p[0]).collect();
        let table = HbarTable {
            d: 1,
            p_grid: p_grid.clone(),
            values: values.clone(),
            half_widths: vec![0.0; p_grid.len()],
            saturated: vec![false; p_grid.len()],
            n_directions: 2,
        };
        table.check_invariants().unwrap();
        let lbar = legendre_transform(&table, 200).unwrap();
        for v in [-1.0f64, 0.0, 0.5, 2.0] {
            let got = lbar.eval_1d(v);
            assert!((got - v * v / 4.0).abs() < 0.01, "L({v}) = {got}");
        }
        assert!(lbar.eval_1d(0.0).abs() < 1e-9);
        for (i, &p) in p_grid.iter().enumerate() {
            let back = lbar.biconjugate_at(p);
            assert!(
                (back - values[i]).abs() < 0.05,
                "biconjugate at {p:?}: {back} vs {}",
                values[i]
            );
        }
    }

    #[test]
    fn flatness_of_disk_level_set() {
        let n = 128;
        let rho = 1.3;
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64 * std::f64::consts::TAU;
                [rho * t.cos(), rho * t.sin()]
            })
            .collect();
        let k = ConvexBody2D::hull_of(&pts).unwrap();
        let v = k.vertices()[0];
        let rep = strict_convexity_flatness(&k, v, rho * 1.02, 200, 9).unwrap();
        assert!(rep.lower_defect <= 1e-9, "lower {}", rep.lower_defect);
        assert!(rep.upper_defect <= 1e-3, "upper {}", rep.upper_defect);
    }

    #[test]
    fn softmin_stats_deterministic_1d_closed_form() {
        let sampler = EnvSampler::new(det_params(1));
        let cfg = MetricConfig::for_mu(1.0);
        let stats = softmin_passage_stats(
            &sampler,
            1.0,
            1.0,
            &[3.0],
            10.0,
            1,
            SolveGrid { h: 0.05, margin: 3.0 },
            &cfg,
        )
        .unwrap();
        // two plane points at distance t - 1 = 2 from the source ball
        let want_g = 2.0 * (-2.0f64).exp();
        assert!((stats.cap_g[0] - want_g).abs() < 0.02, "G {}", stats.cap_g[0]);
        let want_g_small = 2.0 - (2.0f64).ln();
        assert!((stats.g_hat[0] - want_g_small).abs() < 0.02, "g {}", stats.g_hat[0]);
        assert!((stats.passage_mean[0] - 2.0).abs() <= 5.0 * 0.05);
        // soft-min lower bound: g <= passage mean + slack
        assert!(stats.g_hat[0] <= stats.passage_mean[0] + 0.01);
    }

    #[test]
    fn softmin_superadditivity_recorded() {
        let sampler = EnvSampler::new(det_params(1));
        let cfg = MetricConfig::for_mu(1.0);
        let stats = softmin_passage_stats(
            &sampler,
            1.0,
            0.5,
            &[2.0, 4.0],
            14.0,
            1,
            SolveGrid { h: 0.05, margin: 3.0 },
            &cfg,
        )
        .unwrap();
        assert_eq!(stats.superadd_defects.len(), 1);
        let (t, s, _) = stats.superadd_defects[0];
        assert_eq!((t, s), (2.0, 2.0));
    }
}
