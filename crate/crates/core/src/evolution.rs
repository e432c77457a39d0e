//! The epsilon-scaled time-dependent problem and its homogenized limit:
//! explicit monotone time stepping for
//! `u_t - eps tr(A(x/eps) D^2 u) + H(Du, x/eps) = 0`, the Hopf-Lax solver
//! for the limit equation, and the sup-norm homogenization error.

use std::sync::Arc;

use rayon::prelude::*;

use crate::effective::{EnvSampler, LbarTable, SolveGrid};
use crate::environment::Environment;
use crate::grid::{GridDomain, MASK_INTERIOR};
use crate::scheme::DiscreteOp;
use crate::stats::{aggregate_stats, fit_power_law, PowerLawFit, Summary};
use crate::{HjError, Result};

/// Closed-form initial data with bounded gradient and Hessian.
#[derive(Clone, Debug)]
pub enum InitialDatum {
    Zero,
    Affine { slope: [f64; 2], offset: f64 },
    /// Product of per-axis caps `amp cos^2(pi x / (2 width))` on `|x| <= width`.
    CosBump { amp: f64, width: f64 },
}

impl InitialDatum {
    pub fn eval(&self, x: [f64; 2], d: usize) -> f64 {
        match self {
            InitialDatum::Zero => 0.0,
            InitialDatum::Affine { slope, offset } => slope[0] * x[0] + slope[1] * x[1] + offset,
            InitialDatum::CosBump { amp, width } => {
                let mut v = *amp;
                for &c in x.iter().take(d) {
                    if c.abs() >= *width {
                        return 0.0;
                    }
                    let s = (std::f64::consts::PI * c / (2.0 * width)).cos();
                    v *= s * s;
                }
                v
            }
        }
    }

    pub fn grad_bound(&self, d: usize) -> f64 {
        match self {
            InitialDatum::Zero => 0.0,
            InitialDatum::Affine { slope, .. } => {
                (slope[0] * slope[0] + slope[1] * slope[1]).sqrt()
            }
            InitialDatum::CosBump { amp, width } => {
                amp * std::f64::consts::PI / (2.0 * width) * d as f64
            }
        }
    }

    /// Reported C^{1,1} norm (sup + gradient + Hessian bounds).
    pub fn c11_norm(&self, d: usize) -> f64 {
        match self {
            InitialDatum::Zero => 0.0,
            InitialDatum::Affine { slope, offset } => {
                offset.abs() + (slope[0] * slope[0] + slope[1] * slope[1]).sqrt()
            }
            InitialDatum::CosBump { amp, width } => {
                let pi = std::f64::consts::PI;
                amp * (1.0
                    + pi / (2.0 * width) * d as f64
                    + (pi / (2.0 * width)).powi(2) * d as f64)
            }
        }
    }
}

/// Values on a space grid at a uniform ladder of stored times.
#[derive(Clone, Debug)]
pub struct SpaceTimeField {
    pub domain: Arc<GridDomain>,
    pub dt: f64,
    pub times: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
}

impl SpaceTimeField {
    /// Value at the nearest stored frame and node.
    pub fn value_at(&self, x: [f64; 2], t: f64) -> Option<f64> {
        let ix = self.domain.node_at(x)?;
        let fi = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().partial_cmp(&(b.1 - t).abs()).unwrap())?
            .0;
        Some(self.frames[fi][ix])
    }

    /// Empirical space-time Lipschitz constant over random probe pairs.
    pub fn lipschitz_probe(&self, n_pairs: usize, seed: u64) -> f64 {
        let mut rng = crate::rng::CounterRng::new(crate::rng::key(&[seed, 0x715]));
        let n = self.domain.len();
        let mut worst = 0.0f64;
        for _ in 0..n_pairs {
            let a = (rng.next_u64() % n as u64) as usize;
            let b = (rng.next_u64() % n as u64) as usize;
            let fa = (rng.next_u64() % self.frames.len() as u64) as usize;
            let fb = (rng.next_u64() % self.frames.len() as u64) as usize;
            let xa = self.domain.coord(a);
            let xb = self.domain.coord(b);
            let dx = ((xa[0] - xb[0]).powi(2) + (xa[1] - xb[1]).powi(2)).sqrt();
            let dt = (self.times[fa] - self.times[fb]).abs();
            if dx + dt < 1e-9 {
                continue;
            }
            let du = (self.frames[fa][a] - self.frames[fb][b]).abs();
            worst = worst.max(du / (dx + dt));
        }
        worst
    }
}

#[derive(Clone, Debug)]
pub struct EvolveConfig {
    pub cfl_safety: f64,
    /// Number of stored frames (including the initial slice).
    pub n_frames: usize,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig { cfl_safety: 0.4, n_frames: 11 }
    }
}

/// Explicit monotone time stepping of the oscillatory problem on a box of
/// the given radius with Neumann-style copy-out lateral boundaries.
pub fn solve_ueps(
    env: &Environment,
    g: &InitialDatum,
    eps: f64,
    t_final: f64,
    h: f64,
    radius: f64,
    cfg: &EvolveConfig,
) -> Result<SpaceTimeField> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(HjError::InvalidParams(format!("eps must lie in (0, 1], got {eps}")));
    }
    if h > eps / 4.0 + 1e-12 {
        return Err(HjError::InvalidParams(format!(
            "grid must resolve the fast variable: h = {h} > eps/4 = {}",
            eps / 4.0
        )));
    }
    let d = env.dim();
    let lg = g.grad_bound(d);
    let speed = env.dp_bound(lg + 1.0);
    let spill = speed * t_final + 4.0 * (eps * env.lambda() * t_final).sqrt() + 1.0;
    let domain = Arc::new(GridDomain::symmetric(d, h, radius)?);

    // coefficients sampled at x/eps, diffusion scaled by eps
    let n = domain.len();
    let mut op = DiscreteOp {
        domain: domain.clone(),
        q: env.q(),
        coef_a: vec![0.0; n],
        potential_v: vec![0.0; n],
        a_diag: vec![0.0; n],
        p_shift: [0.0; 2],
        grad_bound: speed,
        upwind: true,
    };
    for ix in 0..n {
        let x = domain.coord(ix);
        let y = [x[0] / eps, x[1] / eps];
        op.coef_a[ix] = env.coef_a(y);
        op.potential_v[ix] = env.potential_v(y);
        op.a_diag[ix] = eps * env.a_diag(y);
    }
    let ad_max = op.a_diag.iter().cloned().fold(0.0, f64::max);
    let dt_cfl = cfg.cfl_safety
        / (2.0 * d as f64 * ad_max / (h * h) + speed * (d as f64).sqrt() / h + 1e-300);
    let n_steps = (t_final / dt_cfl).ceil().max(1.0) as usize;
    let dt = t_final / n_steps as f64;

    if radius < t_final + spill {
        return Err(HjError::InvalidParams(format!(
            "domain radius {radius} below T + influence margin {:.2}",
            t_final + spill
        )));
    }
    let mut u: Vec<f64> = (0..n).map(|ix| g.eval(domain.coord(ix), d)).collect();
    let mut u_next = u.clone();
    let frame_stride = (n_steps / (cfg.n_frames - 1).max(1)).max(1);
    let mut frames = vec![u.clone()];
    let mut times = vec![0.0];

    let (n0, n1) = (domain.n[0], domain.n[1]);
    for step in 1..=n_steps {
        for ix in 0..n {
            if domain.mask[ix] == MASK_INTERIOR {
                // u_t = eps tr(A D^2 u) - H(Du, x/eps) = -F[u]
                u_next[ix] = u[ix] - dt * op.apply_at(&u, ix);
            }
        }
        // copy-out lateral boundary
        for i in 0..n0 {
            for j in 0..n1 {
                let ix = i * n1 + j;
                if domain.mask[ix] != MASK_INTERIOR {
                    let ii = i.clamp(1, n0 - 2);
                    let jj = if n1 > 1 { j.clamp(1, n1 - 2) } else { j };
                    u_next[ix] = u_next[ii * n1 + jj];
                }
            }
        }
        std::mem::swap(&mut u, &mut u_next);
        if step % frame_stride == 0 || step == n_steps {
            frames.push(u.clone());
            times.push(step as f64 * dt);
        }
    }
    Ok(SpaceTimeField { domain, dt, times, frames })
}

/// Hopf-Lax value `u(x, t) = min over y of [g(y) + t Lbar((x - y)/t)]`,
/// minimized on a grid and refined by golden section per axis. Faults when
/// the argmin sits on the search boundary.
pub fn hopf_lax_solve(
    g: &InitialDatum,
    lbar: &LbarTable,
    x: [f64; 2],
    t: f64,
    d: usize,
) -> Result<f64> {
    if t <= 0.0 {
        return Err(HjError::InvalidParams(format!("need t > 0, got {t}")));
    }
    if d != 1 {
        return Err(HjError::InvalidParams(
            "the Hopf-Lax driver currently covers d = 1 (the homogenized limit used in experiments)"
                .into(),
        ));
    }
    let reach = lbar.v_max() * t;
    let n = 400;
    let objective = |y: f64| -> f64 {
        g.eval([y, 0.0], 1) + t * lbar.eval_1d((x[0] - y) / t)
    };
    let mut best_y = x[0];
    let mut best = f64::INFINITY;
    for i in 0..=n {
        let y = x[0] - reach + 2.0 * reach * i as f64 / n as f64;
        let v = objective(y);
        if v < best {
            best = v;
            best_y = y;
        }
    }
    if !best.is_finite() {
        return Err(HjError::InvalidParams("Hopf-Lax search found no finite value".into()));
    }
    if (best_y - (x[0] - reach)).abs() < 1e-12 || (best_y - (x[0] + reach)).abs() < 1e-12 {
        return Err(HjError::InvalidParams(
            "Hopf-Lax argmin on the search boundary; enlarge the velocity table".into(),
        ));
    }
    // golden refine around the grid argmin
    let w = 2.0 * reach / n as f64;
    let (mut lo, mut hi) = (best_y - w, best_y + w);
    let phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = objective(x1);
    let mut f2 = objective(x2);
    for _ in 0..60 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = objective(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = objective(x2);
        }
    }
    Ok(best.min(f1).min(f2))
}

#[derive(Clone, Debug)]
pub struct HomogPoint {
    pub eps: f64,
    pub errors: Vec<f64>,
    pub summary: Summary,
}

#[derive(Clone, Debug)]
pub struct HomogCurve {
    pub points: Vec<HomogPoint>,
    pub fit: Option<PowerLawFit>,
    pub lipschitz_hat: f64,
}

/// Sup-norm homogenization error over `B_T x [0, T]` per epsilon and
/// replica, with a power-law fit of the mean against epsilon.
#[allow(clippy::too_many_arguments)]
pub fn homog_error(
    sampler: &EnvSampler,
    g: &InitialDatum,
    eps_list: &[f64],
    t_final: f64,
    lbar: &LbarTable,
    n_replicas: usize,
    grid: SolveGrid,
    cfg: &EvolveConfig,
) -> Result<HomogCurve> {
    let d = sampler.params().d;
    if d != 1 {
        return Err(HjError::InvalidParams("homogenization-rate runs are d = 1".into()));
    }
    if eps_list.is_empty() {
        return Err(HjError::InvalidParams("empty eps list".into()));
    }
    // reference Hopf-Lax values on the probe set (shared across replicas)
    let n_x = 21;
    let probes: Vec<f64> = (0..n_x)
        .map(|i| -t_final + 2.0 * t_final * i as f64 / (n_x - 1) as f64)
        .collect();

    let mut points = Vec::with_capacity(eps_list.len());
    let mut lip_hat = 0.0f64;
    for &eps in eps_list {
        let h = (eps / 4.0).min(grid.h);
        let lg = g.grad_bound(d);
        let radius = {
            let env0 = sampler.env(0)?;
            let speed = env0.dp_bound(lg + 1.0);
            t_final + speed * t_final + 4.0 * (eps * env0.lambda() * t_final).sqrt() + 1.0 + grid.margin
        };
        // homogenized values at stored times are computed per replica below
        // (frame times depend on the CFL step)
        let rows: Vec<Option<(f64, f64)>> = (0..n_replicas as u64)
            .into_par_iter()
            .map(|k| {
                let env = sampler.env(k).ok()?;
                let ue = solve_ueps(&env, g, eps, t_final, h, radius, cfg).ok()?;
                let mut sup = 0.0f64;
                for (fi, &t) in ue.times.iter().enumerate() {
                    for &x in &probes {
                        let hl = if t <= 1e-12 {
                            g.eval([x, 0.0], 1)
                        } else {
                            hopf_lax_solve(g, lbar, [x, 0.0], t, 1).ok()?
                        };
                        let ix = ue.domain.node_at([x, 0.0])?;
                        sup = sup.max((ue.frames[fi][ix] - hl).abs());
                    }
                }
                Some((sup, ue.lipschitz_probe(100, k)))
            })
            .collect();
        let kept: Vec<(f64, f64)> = rows.into_iter().flatten().collect();
        if kept.is_empty() || (n_replicas - kept.len()) * 5 > n_replicas {
            return Err(HjError::MonteCarlo(format!(
                "too many replica failures at eps = {eps}"
            )));
        }
        let errors: Vec<f64> = kept.iter().map(|r| r.0).collect();
        lip_hat = lip_hat.max(kept.iter().map(|r| r.1).fold(0.0, f64::max));
        let summary = aggregate_stats(&errors)?;
        points.push(HomogPoint { eps, errors, summary });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.eps).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.summary.mean).collect();
    let fit = fit_power_law(&xs, &ys, 400, 0x40).ok();
    Ok(HomogCurve { points, fit, lipschitz_hat: lip_hat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{build_environment, EnvKind, EnvParams, SigmaKind};

    fn det_env(d: usize) -> Environment {
        build_environment(EnvParams {
            d,
            q: 2.0,
            lambda: 1.0,
            kind: EnvKind::Deterministic { coef: 1.0 },
            sigma: SigmaKind::Zero,
            constrained: false,
            seed: 0,
            replica: 0,
        })
        .unwrap()
    }

    fn quadratic_lbar() -> LbarTable {
        // conjugate of |p|^2: L(v) = v^2/4 tabulated densely
        let n = 400;
        let v_grid: Vec<[f64; 2]> = (0..=n)
            .map(|i| [-4.0 + 8.0 * i as f64 / n as f64, 0.0])
            .collect();
        let values = v_grid.iter().map(|v| v[0] * v[0] / 4.0).collect();
        LbarTable { d: 1, v_grid, values }
    }

    #[test]
    fn affine_data_evolve_exactly() {
        // u = p0 . x - |p0|^2 t solves the constant-coefficient problem
        let env = det_env(1);
        let g = InitialDatum::Affine { slope: [0.7, 0.0], offset: 0.2 };
        let cfg = EvolveConfig::default();
        let ue = solve_ueps(&env, &g, 0.25, 0.4, 0.05, 4.5, &cfg).unwrap();
        // initial slice is g sampled
        for ix in 0..ue.domain.len() {
            let x = ue.domain.coord(ix);
            assert_eq!(ue.frames[0][ix], g.eval(x, 1));
        }
        let t = *ue.times.last().unwrap();
        for x in [-0.5, 0.0, 1.0] {
            let got = ue.value_at([x, 0.0], t).unwrap();
            let want = 0.7 * x + 0.2 - 0.49 * t;
            assert!((got - want).abs() < 1e-9, "at {x}: {got} vs {want}");
        }
    }

    #[test]
    fn zero_data_stays_zero_for_constrained_family() {
        let env = build_environment(EnvParams {
            d: 1,
            q: 2.0,
            lambda: 2.0,
            kind: EnvKind::Checkerboard {
                cell_size: 0.5,
                smoothing_radius: 0.25,
                a_lo: 0.8,
                a_hi: 1.3,
                vmax: 0.3,
            },
            sigma: SigmaKind::ConstantIsotropic { a0: 0.5 },
            constrained: true,
            seed: 2,
            replica: 0,
        })
        .unwrap();
        let cfg = EvolveConfig::default();
        let ue = solve_ueps(&env, &InitialDatum::Zero, 0.2, 0.3, 0.05, 3.5, &cfg).unwrap();
        for f in &ue.frames {
            for &v in f {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn self_refinement_oracle_1d() {
        let env = build_environment(EnvParams {
            d: 1,
            q: 2.0,
            lambda: 2.0,
            kind: EnvKind::Periodic { v0: 0.3, period: 1.0 },
            sigma: SigmaKind::ConstantIsotropic { a0: 0.4 },
            constrained: false,
            seed: 0,
            replica: 0,
        })
        .unwrap();
        let g = InitialDatum::CosBump { amp: 0.8, width: 1.0 };
        let cfg = EvolveConfig::default();
        let eps = 0.1;
        let coarse = solve_ueps(&env, &g, eps, 0.3, 0.025, 4.5, &cfg).unwrap();
        let fine = solve_ueps(&env, &g, eps, 0.3, 0.0125, 4.5, &cfg).unwrap();
        let t = 0.3;
        for x in [-0.8f64, -0.2, 0.0, 0.4, 1.0] {
            let a = coarse.value_at([x, 0.0], t).unwrap();
            let b = fine.value_at([x, 0.0], t).unwrap();
            assert!((a - b).abs() <= 5.0 * 0.025, "at {x}: coarse {a} fine {b}");
        }
    }

    #[test]
    fn monotone_in_initial_data() {
        let env = det_env(1);
        let cfg = EvolveConfig::default();
        let g1 = InitialDatum::Zero;
        let g2 = InitialDatum::CosBump { amp: 0.5, width: 1.0 };
        let u1 = solve_ueps(&env, &g1, 0.25, 0.3, 0.05, 4.0, &cfg).unwrap();
        let u2 = solve_ueps(&env, &g2, 0.25, 0.3, 0.05, 4.0, &cfg).unwrap();
        for (fa, fb) in u1.frames.iter().zip(&u2.frames) {
            for (a, b) in fa.iter().zip(fb) {
                assert!(a <= b, "comparison violated: {a} > {b}");
            }
        }
    }

    #[test]
    fn hopf_lax_trivial_and_affine() {
        let lbar = quadratic_lbar();
        let g0 = InitialDatum::Zero;
        let v = hopf_lax_solve(&g0, &lbar, [0.3, 0.0], 0.7, 1).unwrap();
        assert!(v.abs() < 1e-9, "zero datum: {v}");
        let ga = InitialDatum::Affine { slope: [0.8, 0.0], offset: 0.0 };
        let v = hopf_lax_solve(&ga, &lbar, [0.5, 0.0], 0.5, 1).unwrap();
        let want = 0.8 * 0.5 - 0.64 * 0.5;
        assert!((v - want).abs() < 1e-3, "affine: {v} vs {want}");
    }

    #[test]
    fn hopf_lax_matches_brute_force_oracle() {
        // g(x) = |x|, Hbar = p^2: rarefaction fills the kink with x^2/(4t)
        // for |x| <= 2t and x - t outside; brute-force the minimization.
        let lbar = quadratic_lbar();
        let g = InitialDatum::CosBump { amp: 1.0, width: 1.5 };
        for (x, t) in [(0.0, 0.5), (0.8, 0.5), (1.5, 1.0)] {
            let got = hopf_lax_solve(&g, &lbar, [x, 0.0], t, 1).unwrap();
            // independent dense scan
            let mut want = f64::INFINITY;
            for i in 0..20000 {
                let y = x - 8.0 + 16.0 * i as f64 / 20000.0;
                let v = g.eval([y, 0.0], 1) + (x - y) * (x - y) / (4.0 * t);
                want = want.min(v);
            }
            assert!((got - want).abs() < 2e-3, "({x},{t}): {got} vs {want}");
        }
    }

    #[test]
    fn homog_error_deterministic_env_is_discretization_small() {
        let params = EnvParams {
            d: 1,
            q: 2.0,
            lambda: 1.0,
            kind: EnvKind::Deterministic { coef: 1.0 },
            sigma: SigmaKind::Zero,
            constrained: false,
            seed: 0,
            replica: 0,
        };
        let sampler = EnvSampler::new(params);
        let g = InitialDatum::CosBump { amp: 0.6, width: 1.0 };
        let lbar = quadratic_lbar();
        let curve = homog_error(
            &sampler,
            &g,
            &[0.2],
            0.3,
            &lbar,
            1,
            SolveGrid { h: 0.05, margin: 0.5 },
            &EvolveConfig::default(),
        )
        .unwrap();
        assert!(
            curve.points[0].summary.mean < 0.08,
            "deterministic homog error {}",
            curve.points[0].summary.mean
        );
    }
}
