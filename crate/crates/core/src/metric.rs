//! The metric problem: maximal subsolutions `m_mu(., K)` on truncated
//! domains, their sublevel fronts, and the localization / front-motion /
//! dynamic-programming diagnostics.

use std::sync::Arc;

use crate::environment::Environment;
use crate::grid::{hausdorff, is_connected, GridDomain, ScalarField, SourceSpec, MASK_SOURCE};
use crate::scheme::{solve_stationary, BoundaryValues, DiscreteOp, SchemeParams, Side};
use crate::{HjError, Result};

/// Metric-problem policy knobs.
#[derive(Clone, Debug)]
pub struct MetricConfig {
    pub mu_min: f64,
    pub mu_max: f64,
    pub scheme: SchemeParams,
}

impl MetricConfig {
    pub fn for_mu(mu: f64) -> MetricConfig {
        MetricConfig {
            mu_min: 0.25,
            mu_max: 4.0,
            scheme: SchemeParams::for_mu(mu),
        }
    }

    /// Conservative Lipschitz overestimate used as the outer Dirichlet
    /// barrier slope: `2 (Lambda (mu_max + 2 Lambda))^(1/q)`.
    pub fn barrier_slope(&self, env: &Environment) -> f64 {
        let lam = env.lambda();
        2.0 * (lam * (self.mu_max + 2.0 * lam)).powf(1.0 / env.q())
    }
}

/// A converged maximal-subsolution field plus solver metadata.
#[derive(Clone, Debug)]
pub struct MetricSolution {
    pub mu: f64,
    pub m: ScalarField,
    pub residual: f64,
    pub sweeps: usize,
    /// Empirical slope extrema of the upwind gradient over interior nodes.
    pub slope_min: f64,
    pub slope_max: f64,
    /// Truncation safety margin computed from `(Lambda, slope extrema, mu)`.
    pub a_mu: f64,
    pub barrier_slope: f64,
    pub warnings: Vec<String>,
}

impl MetricSolution {
    pub fn domain(&self) -> &GridDomain {
        &self.m.domain
    }

    pub fn value_at(&self, y: [f64; 2]) -> Option<f64> {
        self.m.value_at(y)
    }
}

/// Upwind gradient magnitude at an interior node (zero shift).
pub fn upwind_slope(domain: &GridDomain, w: &[f64], ix: usize) -> f64 {
    let n1 = domain.n[1];
    let h = domain.h;
    let wc = w[ix];
    let s0 = ((wc - w[ix - n1].min(w[ix + n1])) / h).max(0.0);
    let mut s2 = s0 * s0;
    if domain.d == 2 {
        let s1 = ((wc - w[ix - 1].min(w[ix + 1])) / h).max(0.0);
        s2 += s1 * s1;
    }
    s2.sqrt()
}

/// Constant `a_mu`: the paper-prescribed safety margin for truncations,
/// computed from the structure constant and the empirical slope extrema.
pub fn a_mu_margin(lambda: f64, l_hat: f64, big_l_hat: f64, mu: f64) -> f64 {
    let l = l_hat.max(1e-9);
    let big = big_l_hat.max(l);
    1.0 + lambda * big * big / (mu * l)
        * (4.0 * big / l + (4.0 * lambda * big.powi(3) / (mu * l * l)).max(1.0 + 1e-9).ln())
}

/// Solves the metric problem on `domain` with Dirichlet zero on the source
/// region and the barrier `barrier_slope * dist(., source)` on the outer
/// boundary.
pub fn solve_metric(
    env: &Environment,
    mu: f64,
    source: &SourceSpec,
    mut domain: GridDomain,
    cfg: &MetricConfig,
) -> Result<MetricSolution> {
    let mut warnings = Vec::new();
    if mu <= 0.0 {
        return Err(HjError::InvalidParams(format!("metric problem needs mu > 0, got {mu}")));
    }
    if mu > cfg.mu_max {
        return Err(HjError::InvalidParams(format!(
            "mu = {mu} exceeds mu_max = {}; raise mu_max explicitly",
            cfg.mu_max
        )));
    }
    if mu < cfg.mu_min {
        warnings.push(format!(
            "mu = {mu} below mu_min = {}; error bounds degenerate as mu -> 0",
            cfg.mu_min
        ));
    }
    domain.set_source(source)?;
    let domain = Arc::new(domain);
    let lbar = cfg.barrier_slope(env);
    let op = DiscreteOp::build(env, domain.clone(), [0.0; 2], lbar);
    let boundary = BoundaryValues(
        (0..domain.len())
            .map(|ix| lbar * domain.dist_src[ix])
            .collect(),
    );
    let (m, info) = solve_stationary(&op, mu, 0.0, &boundary, &cfg.scheme, None)?;

    // Slope statistics skip a unit collar at the outer box: the barrier
    // couples through the diffusion term and creates a thin boundary layer
    // there that does not reflect the interior solution.
    let collar = 1.0f64.min(0.25 * domain.radius());
    let mut smin = f64::INFINITY;
    let mut smax: f64 = 0.0;
    for ix in domain.interior_indices() {
        if domain.box_margin(ix) < collar {
            continue;
        }
        let s = upwind_slope(&domain, &m.values, ix);
        smin = smin.min(s);
        smax = smax.max(s);
    }
    if !smin.is_finite() {
        smin = 0.0;
    }
    if smin < 1e-3 {
        warnings.push(format!("empirical slope floor l_hat = {smin:.3e} below 1e-3"));
    }
    let a_mu = a_mu_margin(env.lambda(), smin, smax, mu);
    Ok(MetricSolution {
        mu,
        m,
        residual: info.residual,
        sweeps: info.sweeps,
        slope_min: smin,
        slope_max: smax,
        a_mu,
        barrier_slope: lbar,
        warnings,
    })
}

/// A sublevel set `{m <= t}` as a set of grid nodes.
#[derive(Clone, Debug)]
pub struct FrontSnapshot {
    pub t: f64,
    pub cells: Vec<usize>,
    pub connected: bool,
}

pub fn sublevel_front(sol: &MetricSolution, t: f64) -> Result<FrontSnapshot> {
    let max_m = sol.m.max_interior();
    if !(0.0..=max_m).contains(&t) {
        return Err(HjError::InvalidParams(format!(
            "level t = {t} outside [0, {max_m:.3}]"
        )));
    }
    let domain = sol.domain();
    let mut set = vec![false; domain.len()];
    let mut cells = Vec::new();
    for ix in 0..domain.len() {
        if domain.mask[ix] != crate::grid::MASK_OUTER && sol.m.values[ix] <= t {
            set[ix] = true;
            cells.push(ix);
        }
    }
    let connected = is_connected(domain.n, &set);
    Ok(FrontSnapshot { t, cells, connected })
}

/// Hausdorff distance between two fronts of the same solution.
pub fn front_hausdorff(sol: &MetricSolution, a: &FrontSnapshot, b: &FrontSnapshot) -> f64 {
    let domain = sol.domain();
    let mut sa = vec![false; domain.len()];
    let mut sb = vec![false; domain.len()];
    for &ix in &a.cells {
        sa[ix] = true;
    }
    for &ix in &b.cells {
        sb[ix] = true;
    }
    hausdorff(domain.n, domain.h, &sa, &sb)
}

/// One point of the localization diagnostic: at sublevel `level`, the
/// worst-case excess of the subdomain solution over the reference solution
/// and the depth (in level units) below the containment level.
#[derive(Clone, Copy, Debug)]
pub struct GapPoint {
    pub level: f64,
    pub depth: f64,
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct GapCurve {
    pub points: Vec<GapPoint>,
    /// Exponential decay rate predicted by the change-of-variable argument:
    /// `mu / (Lambda L_hat^2)`.
    pub predicted_rate: f64,
    pub containment_level: f64,
}

/// Solves the maximal subsolution on the subdomain (free outer boundary,
/// realized as a large Dirichlet value that upwinding never selects) and
/// compares it against a reference solve on a domain at least twice as
/// large. Faults if the top sublevel set escapes the shrunk subdomain.
pub fn localization_gap(
    env: &Environment,
    mu: f64,
    sub_radius: f64,
    h: f64,
    t_levels: &[f64],
    cfg: &MetricConfig,
) -> Result<GapCurve> {
    if t_levels.is_empty() {
        return Err(HjError::InvalidParams("empty level list".into()));
    }
    let mut levels = t_levels.to_vec();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let t_max = *levels.last().unwrap();

    // Subdomain solve with blow-up boundary.
    let mut u_dom = GridDomain::symmetric(env.dim(), h, sub_radius)?;
    u_dom.set_source(&SourceSpec::origin())?;
    let u_dom = Arc::new(u_dom);
    let lbar = cfg.barrier_slope(env);
    let blow_up = 4.0 * lbar * sub_radius;
    let op = DiscreteOp::build(env, u_dom.clone(), [0.0; 2], lbar);
    let boundary = BoundaryValues(
        (0..u_dom.len())
            .map(|ix| if u_dom.mask[ix] == MASK_SOURCE { 0.0 } else { blow_up })
            .collect(),
    );
    let (m_u, _) = solve_stationary(&op, mu, 0.0, &boundary, &cfg.scheme, None)?;

    // Containment: {m_U <= t_max} inside the subdomain shrunk by 1.
    let mut offenders = 0usize;
    for ix in 0..u_dom.len() {
        if m_u.values[ix] <= t_max {
            let y = u_dom.coord(ix);
            let to_boundary =
                sub_radius - y[0].abs().max(if env.dim() == 2 { y[1].abs() } else { 0.0 });
            if to_boundary < 1.0 {
                offenders += 1;
            }
        }
    }
    if offenders > 0 {
        return Err(HjError::Containment(format!(
            "{offenders} nodes of the {t_max:.3}-sublevel set lie within distance 1 of the subdomain boundary"
        )));
    }

    // Reference solve on a domain at least twice as large.
    let ref_sol = solve_metric(
        env,
        mu,
        &SourceSpec::origin(),
        GridDomain::symmetric(env.dim(), h, 2.0 * sub_radius + 2.0)?,
        cfg,
    )?;

    let mut points = Vec::with_capacity(levels.len());
    for &t in &levels {
        let mut gap = f64::NEG_INFINITY;
        let mut m_at_arg = 0.0;
        for ix in 0..u_dom.len() {
            if u_dom.mask[ix] == crate::grid::MASK_OUTER || m_u.values[ix] > t {
                continue;
            }
            let y = u_dom.coord(ix);
            let m_ref = ref_sol.m.value_at(y).unwrap();
            let g = m_u.values[ix] - m_ref;
            if g > gap {
                gap = g;
                m_at_arg = m_ref;
            }
        }
        if gap.is_finite() {
            points.push(GapPoint { level: t, depth: t_max - m_at_arg, gap });
        }
    }
    let lhat = ref_sol.slope_max.max(1e-9);
    Ok(GapCurve {
        points,
        predicted_rate: mu / (env.lambda() * lhat * lhat),
        containment_level: t_max,
    })
}

/// Dynamic-programming defect `|m(y,0) - (t + m(y, R_t))|`, with the
/// re-solve sourced exactly on the front nodes (no extra fattening, so the
/// distance-function case has zero defect up to scheme error).
pub fn dpp_defect(
    env: &Environment,
    sol: &MetricSolution,
    y: [f64; 2],
    t: f64,
    cfg: &MetricConfig,
) -> Result<f64> {
    if t < 1.0 {
        return Err(HjError::InvalidParams(format!("dpp level t = {t} must be >= 1")));
    }
    let m_y = sol
        .value_at(y)
        .ok_or_else(|| HjError::InvalidParams(format!("probe {y:?} outside domain")))?;
    if m_y <= t {
        return Err(HjError::InvalidParams(format!(
            "probe {y:?} lies inside the front (m = {m_y:.3} <= t = {t})"
        )));
    }
    let front = sublevel_front(sol, t)?;
    let domain2 = GridDomain::symmetric(sol.domain().d, sol.domain().h, sol.domain().radius())?;
    let re = solve_metric(
        env,
        sol.mu,
        &SourceSpec::GridSet { nodes: front.cells.clone(), fatten: false },
        domain2,
        cfg,
    )?;
    let m_k_y = re.value_at(y).unwrap();
    Ok((m_y - (t + m_k_y)).abs())
}

/// Soft-min combination `Z = -1/theta log sum_i exp(-theta m_i)` of metric
/// solutions on a shared grid layout, and its sub-side defect against the
/// level `mu + 2 Lambda L_hat^2 theta`.
pub struct SoftminReport {
    pub level: f64,
    pub max_operator: f64,
    pub defect: f64,
}

pub fn softmin_subsolution(
    env: &Environment,
    sols: &[MetricSolution],
    theta: f64,
) -> Result<(ScalarField, SoftminReport)> {
    if sols.is_empty() {
        return Err(HjError::InvalidParams("soft-min of an empty solution list".into()));
    }
    if theta <= 0.0 {
        return Err(HjError::InvalidParams(format!("theta must be > 0, got {theta}")));
    }
    let first = &sols[0];
    for s in sols.iter().skip(1) {
        if !s.domain().same_layout(first.domain()) || s.mu != first.mu {
            return Err(HjError::DomainMismatch(
                "soft-min requires a shared grid layout and a common mu".into(),
            ));
        }
    }
    let domain = first.m.domain.clone();
    let n = domain.len();
    let mut z = vec![0.0f64; n];
    for (ix, zv) in z.iter_mut().enumerate() {
        // overflow-safe log-sum-exp
        let mut lo = f64::INFINITY;
        for s in sols {
            lo = lo.min(s.m.values[ix]);
        }
        let mut acc = 0.0;
        for s in sols {
            acc += (-theta * (s.m.values[ix] - lo)).exp();
        }
        *zv = lo - acc.ln() / theta;
    }
    let zf = ScalarField { domain: domain.clone(), values: z };

    // Evaluate the operator away from every source region (the claim holds
    // off the sources; near them the fields kink).
    let lhat = sols.iter().map(|s| s.slope_max).fold(0.0f64, f64::max);
    let level = first.mu + 2.0 * env.lambda() * lhat * lhat * theta;
    let op = DiscreteOp::build(env, domain.clone(), [0.0; 2], first.barrier_slope);
    let mut max_op = f64::NEG_INFINITY;
    'cells: for ix in domain.interior_indices() {
        for s in sols {
            if s.domain().dist_src[ix] <= 2.0 * domain.h {
                continue 'cells;
            }
        }
        max_op = max_op.max(op.apply_at(&zf.values, ix));
    }
    let report = SoftminReport {
        level,
        max_operator: max_op,
        defect: (max_op - level).max(0.0),
    };
    Ok((zf, report))
}

/// Min over integer lattice points of the two planes `{y_0 = +-t}` within
/// radius `R` of the origin, of `m(., 0)`.
pub fn plane_passage(sol: &MetricSolution, t: f64, r_ball: f64) -> Result<f64> {
    let domain = sol.domain();
    if t <= 0.0 || t + 1.0 > domain.radius() {
        return Err(HjError::InvalidParams(format!(
            "plane offset t = {t} outside the domain (radius {})",
            domain.radius()
        )));
    }
    let need = sol.slope_max / sol.slope_min.max(1e-9) * t;
    if r_ball < need {
        return Err(HjError::InvalidParams(format!(
            "truncation radius {r_ball:.3} below (L/l) t = {need:.3}"
        )));
    }
    let mut best = f64::INFINITY;
    let mut visit = |y: [f64; 2]| {
        if y[0] * y[0] + y[1] * y[1] <= r_ball * r_ball {
            if let Some(v) = sol.value_at(y) {
                best = best.min(v);
            }
        }
    };
    if domain.d == 1 {
        visit([t, 0.0]);
        visit([-t, 0.0]);
    } else {
        let k_max = r_ball.ceil() as i64;
        for k in -k_max..=k_max {
            visit([t, k as f64]);
            visit([-t, k as f64]);
        }
    }
    if !best.is_finite() {
        return Err(HjError::InvalidParams("no lattice plane point inside the domain".into()));
    }
    Ok(best)
}

/// Growth-bound check (the two-sided cone estimate): returns the worst
/// violations of `l_hat dist <= m` and `m <= L_hat dist + 5h`.
pub fn growth_violations(sol: &MetricSolution) -> (f64, f64) {
    let domain = sol.domain();
    let h = domain.h;
    let collar = 1.0f64.min(0.25 * domain.radius());
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for ix in domain.interior_indices() {
        if domain.box_margin(ix) < collar {
            continue;
        }
        let m = sol.m.values[ix];
        let d = domain.dist_src[ix];
        lo = lo.max(sol.slope_min * d - m);
        hi = hi.max(m - (sol.slope_max * d + 5.0 * h));
    }
    (lo, hi)
}

/// Viscosity defects of the converged field (both sides).
pub fn solution_defects(env: &Environment, sol: &MetricSolution) -> Result<(f64, f64)> {
    let op = DiscreteOp::build(env, sol.m.domain.clone(), [0.0; 2], sol.barrier_slope);
    let sub = crate::scheme::check_viscosity_inequality(&op, &sol.m, sol.mu, Side::Sub)?;
    let sup = crate::scheme::check_viscosity_inequality(&op, &sol.m, sol.mu, Side::Super)?;
    Ok((sub.max_defect, sup.max_defect))
}

/// Lower bound for set sources: `m(y, K) >= l_hat (dist(y, K) - 2) - 5h`.
pub fn set_lower_bound_violation(sol: &MetricSolution) -> f64 {
    let domain = sol.domain();
    let mut worst = 0.0f64;
    for ix in domain.interior_indices() {
        let m = sol.m.values[ix];
        let bound = sol.slope_min * (domain.dist_anchor[ix] - 2.0) - 5.0 * domain.h;
        worst = worst.max(bound - m);
    }
    worst
}
