//! Monotone finite-difference discretization of
//! `-tr(A(y) D^2 w) + H(Dw + p, y)` and a comparison-respecting stationary
//! solver.
//!
//! The gradient term uses Godunov/Rouy-Tourin upwinding. Because `H` is an
//! increasing function of `|Dw + p|`, the Godunov flux along axis `k`
//! collapses to
//!
//! ```text
//! s_k = max(0, (w_c - m_k) / h),  m_k = min(w_k^- - h p_k, w_k^+ + h p_k),
//! ```
//!
//! which is nondecreasing in the center value and nonincreasing in the
//! neighbor values: the scheme is monotone and inherits a discrete
//! comparison principle. The diffusion is isotropic (`A = a_diag I`) and
//! discretized with centered second differences.
//!
//! `solve_stationary` relaxes the discrete system
//! `discount * w + F[w] = rhs` by Gauss-Seidel sweeps in alternating
//! orderings. Each visit either solves the one-cell equation exactly
//! (the default) or takes a CFL-limited explicit pseudo-time step.

use std::sync::Arc;

use crate::environment::Environment;
use crate::grid::{GridDomain, ScalarField, MASK_INTERIOR};
use crate::{HjError, Result};

/// Relaxation flavor for the Gauss-Seidel sweeps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Relaxation {
    /// Each visit solves the one-cell discrete equation exactly.
    GaussSeidelLocal,
    /// Explicit pseudo-time step `dtau = safety / (discount + 2 d a_diag/h^2 + G sqrt(d)/h)`.
    Explicit { cfl_safety: f64 },
}

#[derive(Clone, Debug)]
pub struct SchemeParams {
    pub residual_tol: f64,
    pub max_sweeps: usize,
    pub relaxation: Relaxation,
    /// Residual check cadence, in units of full sweep cycles.
    pub check_every: usize,
    /// Successive over-relaxation weight for the sweeps. 1 is the plain
    /// monotone Gauss-Seidel update; values toward 2 accelerate
    /// diffusion-dominated grids (the fixed point is unchanged).
    pub sor: f64,
}

impl SchemeParams {
    pub fn for_mu(mu: f64) -> SchemeParams {
        SchemeParams {
            residual_tol: 1e-6 * (1.0 + mu),
            max_sweeps: 100_000,
            relaxation: Relaxation::GaussSeidelLocal,
            check_every: 4,
            sor: 1.0,
        }
    }
}

/// The discretized operator on a fixed grid: cached coefficient fields plus
/// the gradient shift `p` (zero for metric problems).
#[derive(Clone, Debug)]
pub struct DiscreteOp {
    pub domain: Arc<GridDomain>,
    pub q: f64,
    pub coef_a: Vec<f64>,
    pub potential_v: Vec<f64>,
    pub a_diag: Vec<f64>,
    pub p_shift: [f64; 2],
    /// Bound on `|D_p H|` over the expected gradient range, for the CFL step.
    pub grad_bound: f64,
    /// Test fixture: replaces upwinding by centered differences (non-monotone).
    pub upwind: bool,
}

impl DiscreteOp {
    pub fn build(env: &Environment, domain: Arc<GridDomain>, p_shift: [f64; 2], grad_scale: f64) -> DiscreteOp {
        let n = domain.len();
        let mut coef_a = vec![0.0; n];
        let mut potential_v = vec![0.0; n];
        let mut a_diag = vec![0.0; n];
        for ix in 0..n {
            let y = domain.coord(ix);
            coef_a[ix] = env.coef_a(y);
            potential_v[ix] = env.potential_v(y);
            a_diag[ix] = env.a_diag(y);
        }
        let p_norm = (p_shift[0] * p_shift[0] + p_shift[1] * p_shift[1]).sqrt();
        let grad_bound = env.dp_bound(grad_scale + p_norm);
        DiscreteOp {
            domain,
            q: env.q(),
            coef_a,
            potential_v,
            a_diag,
            p_shift,
            grad_bound,
            upwind: true,
        }
    }

    #[inline]
    fn pow_q(&self, s2: f64) -> f64 {
        if (self.q - 2.0).abs() < 1e-12 {
            s2
        } else {
            s2.powf(0.5 * self.q)
        }
    }

    /// `F[w]` at an interior node: diffusion + Hamiltonian.
    #[inline]
    pub fn apply_at(&self, w: &[f64], ix: usize) -> f64 {
        let g = &*self.domain;
        let (n0, n1) = (g.n[0], g.n[1]);
        let h = g.h;
        let i = ix / n1;
        let j = ix % n1;
        debug_assert!(i > 0 && i + 1 < n0);
        let wc = w[ix];
        let ww = w[ix - n1];
        let we = w[ix + n1];
        let mut lap = we + ww - 2.0 * wc;
        let mut s2;
        if self.upwind {
            let m0 = (ww - h * self.p_shift[0]).min(we + h * self.p_shift[0]);
            let s0 = ((wc - m0) / h).max(0.0);
            s2 = s0 * s0;
        } else {
            let c0 = (we - ww) / (2.0 * h) + self.p_shift[0];
            s2 = c0 * c0;
        }
        if g.d == 2 {
            debug_assert!(j > 0 && j + 1 < n1);
            let ws = w[ix - 1];
            let wn = w[ix + 1];
            lap += wn + ws - 2.0 * wc;
            if self.upwind {
                let m1 = (ws - h * self.p_shift[1]).min(wn + h * self.p_shift[1]);
                let s1 = ((wc - m1) / h).max(0.0);
                s2 += s1 * s1;
            } else {
                let c1 = (wn - ws) / (2.0 * h) + self.p_shift[1];
                s2 += c1 * c1;
            }
        }
        -self.a_diag[ix] * lap / (h * h) + self.coef_a[ix] * self.pow_q(s2) - self.potential_v[ix]
    }

    /// Checked variant for external callers.
    pub fn apply(&self, w: &ScalarField, ix: usize) -> Result<f64> {
        if !w.domain.same_layout(&self.domain) {
            return Err(HjError::DomainMismatch("field layout differs from operator".into()));
        }
        if self.domain.mask[ix] != MASK_INTERIOR {
            return Err(HjError::DomainMismatch(format!("node {ix} is not interior")));
        }
        Ok(self.apply_at(&w.values, ix))
    }

    /// Solves `discount * x + F[x; neighbors] = rhs` for the center value.
    /// The left side is nondecreasing in `x`, so the root is unique
    /// (up to a flat degenerate piece, where the largest value is taken).
    pub fn local_solve(&self, w: &[f64], ix: usize, discount: f64, rhs: f64) -> f64 {
        let g = &*self.domain;
        let n1 = g.n[1];
        let h = g.h;
        let h2 = h * h;
        let ad = self.a_diag[ix];
        let a = self.coef_a[ix];
        let d = g.d;

        // per-axis Godunov breakpoints
        let mut m = [0.0f64; 2];
        let ww = w[ix - n1];
        let we = w[ix + n1];
        m[0] = (ww - h * self.p_shift[0]).min(we + h * self.p_shift[0]);
        let mut nb_sum = ww + we;
        if d == 2 {
            let ws = w[ix - 1];
            let wn = w[ix + 1];
            m[1] = (ws - h * self.p_shift[1]).min(wn + h * self.p_shift[1]);
            nb_sum += ws + wn;
        }
        if d == 2 && m[1] < m[0] {
            m.swap(0, 1);
        }

        // discount*x + ad*(2d*x - nb_sum)/h^2 + a*(sum_k max(0, x-m_k)^2 / h^2)^(q/2) - v = rhs
        let lin = discount + 2.0 * (d as f64) * ad / h2;
        let c0 = -ad * nb_sum / h2 - self.potential_v[ix] - rhs;

        if (self.q - 2.0).abs() < 1e-12 {
            // piecewise quadratic; scan pieces in increasing x
            for piece in 0..=d {
                let (plo, phi) = match piece {
                    0 => (f64::NEG_INFINITY, m[0]),
                    1 => (m[0], if d == 2 { m[1] } else { f64::INFINITY }),
                    _ => (m[1], f64::INFINITY),
                };
                let aq = a * piece as f64 / h2;
                let mut b = lin;
                let mut c = c0;
                for &mk in m.iter().take(piece) {
                    b -= 2.0 * a * mk / h2;
                    c += a * mk * mk / h2;
                }
                let x = if aq == 0.0 {
                    if b > 0.0 {
                        -c / b
                    } else if c.abs() <= 1e-14 * (1.0 + rhs.abs()) {
                        // degenerate flat piece at the root level:
                        // take the largest admissible value
                        phi
                    } else {
                        continue;
                    }
                } else {
                    let disc = b * b - 4.0 * aq * c;
                    if disc < 0.0 {
                        continue;
                    }
                    (-b + disc.sqrt()) / (2.0 * aq)
                };
                if x.is_finite() && x >= plo - 1e-12 && x <= phi + 1e-12 {
                    return x.clamp(plo.max(-1e300), phi.min(1e300));
                }
            }
        }
        // general exponent, or a floating-point edge slipped every piece
        self.stencil_bisect(lin, c0 + rhs, a, h2, &m[..d], w[ix], rhs)
    }

    /// Bisection on the reduced one-cell function
    /// `g(x) = lin x - (c_lin) + a (sum_k max(0, x - m_k)^2 / h^2)^(q/2)`
    /// without touching the field.
    #[allow(clippy::too_many_arguments)]
    fn stencil_bisect(
        &self,
        lin: f64,
        c_all: f64,
        a: f64,
        h2: f64,
        m: &[f64],
        x0: f64,
        rhs: f64,
    ) -> f64 {
        // g is nondecreasing in x; solve g(x) = 0
        let g = |x: f64| -> f64 {
            let mut s2 = 0.0;
            for &mk in m {
                let s = (x - mk).max(0.0);
                s2 += s * s / h2;
            }
            lin * x + a * self.pow_q(s2) + c_all - rhs
        };
        let scale = self.domain.h * (1.0 + rhs.abs()) + 1.0;
        let mut lo = x0;
        let mut hi = x0;
        let mut step = scale;
        while g(lo) > 0.0 && step < 1e12 {
            lo -= step;
            step *= 2.0;
        }
        step = scale;
        while g(hi) < 0.0 && step < 1e12 {
            hi += step;
            step *= 2.0;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// One-cell update target: what a Gauss-Seidel visit would write.
    pub fn update_target(
        &self,
        w: &[f64],
        ix: usize,
        discount: f64,
        rhs: f64,
        relaxation: Relaxation,
    ) -> f64 {
        match relaxation {
            Relaxation::GaussSeidelLocal => self.local_solve(w, ix, discount, rhs),
            Relaxation::Explicit { cfl_safety } => {
                let dtau = self.cfl_step(discount, cfl_safety);
                w[ix] + dtau * (rhs - discount * w[ix] - self.apply_at(w, ix))
            }
        }
    }

    /// Monotone (CFL) step size for the explicit relaxation.
    pub fn cfl_step(&self, discount: f64, safety: f64) -> f64 {
        let g = &*self.domain;
        let h = g.h;
        let d = g.d as f64;
        let ad_max = self.a_diag.iter().cloned().fold(0.0, f64::max);
        safety / (discount + 2.0 * d * ad_max / (h * h) + self.grad_bound * d.sqrt() / h + 1e-300)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolveInfo {
    pub sweeps: usize,
    pub residual: f64,
}

/// Dirichlet data on the source and outer masks.
pub struct BoundaryValues(pub Vec<f64>);

impl BoundaryValues {
    pub fn zero(domain: &GridDomain) -> BoundaryValues {
        BoundaryValues(vec![0.0; domain.len()])
    }

    pub fn from_fn(domain: &GridDomain, f: impl Fn([f64; 2]) -> f64) -> BoundaryValues {
        BoundaryValues((0..domain.len()).map(|ix| f(domain.coord(ix))).collect())
    }
}

/// Relaxes `discount * w + F[w] = rhs` to the residual tolerance with
/// Gauss-Seidel sweeps in alternating orderings. Returns the converged
/// field and iteration metadata.
pub fn solve_stationary(
    op: &DiscreteOp,
    rhs: f64,
    discount: f64,
    boundary: &BoundaryValues,
    scheme: &SchemeParams,
    init: Option<&ScalarField>,
) -> Result<(ScalarField, SolveInfo)> {
    let domain = op.domain.clone();
    let mut w = match init {
        Some(f) => {
            if !f.domain.same_layout(&domain) {
                return Err(HjError::DomainMismatch("initial field layout differs".into()));
            }
            f.values.clone()
        }
        None => vec![0.0; domain.len()],
    };
    for ix in 0..domain.len() {
        if domain.mask[ix] != MASK_INTERIOR {
            w[ix] = boundary.0[ix];
        }
    }

    let interior: Vec<u32> = domain.interior_indices().map(|ix| ix as u32).collect();
    if interior.is_empty() {
        return Err(HjError::InvalidParams("domain has no interior nodes".into()));
    }

    let residual = |w: &[f64]| -> f64 {
        let mut r = 0.0f64;
        for &ix in &interior {
            let ix = ix as usize;
            r = r.max((rhs - discount * w[ix] - op.apply_at(w, ix)).abs());
        }
        r
    };

    let mut res = residual(&w);
    if res <= scheme.residual_tol {
        return Ok((
            ScalarField { domain, values: w },
            SolveInfo { sweeps: 0, residual: res },
        ));
    }

    let orderings: &[(bool, bool)] = if domain.d == 2 {
        &[(false, false), (true, false), (false, true), (true, true)]
    } else {
        &[(false, false), (true, false)]
    };

    let (n0, n1) = (domain.n[0], domain.n[1]);
    let mut sweeps = 0usize;
    let check = scheme.check_every.max(1);
    while sweeps < scheme.max_sweeps {
        for &(rev_i, rev_j) in orderings {
            sweeps += 1;
            for ii in 0..n0 {
                let i = if rev_i { n0 - 1 - ii } else { ii };
                for jj in 0..n1 {
                    let j = if rev_j { n1 - 1 - jj } else { jj };
                    let ix = i * n1 + j;
                    if domain.mask[ix] == MASK_INTERIOR {
                        let target = op.update_target(&w, ix, discount, rhs, scheme.relaxation);
                        w[ix] = if scheme.sor == 1.0 {
                            target
                        } else {
                            w[ix] + scheme.sor * (target - w[ix])
                        };
                    }
                }
            }
            if sweeps >= scheme.max_sweeps {
                break;
            }
        }
        if (sweeps / orderings.len()) % check == 0 || sweeps >= scheme.max_sweeps {
            res = residual(&w);
            if res <= scheme.residual_tol {
                return Ok((
                    ScalarField { domain, values: w },
                    SolveInfo { sweeps, residual: res },
                ));
            }
        }
    }
    Err(HjError::NonConvergence {
        sweeps,
        residual: residual(&w),
        tol: scheme.residual_tol,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Sub,
    Super,
}

#[derive(Clone, Debug)]
pub struct DefectReport {
    pub side: Side,
    pub max_defect: f64,
    pub argmax: Option<usize>,
}

/// Per-cell viscosity defect of `w` against level `mu`:
/// `max(0, F[w] - mu)` for the sub side, `max(0, mu - F[w])` for the super side.
pub fn check_viscosity_inequality(
    op: &DiscreteOp,
    w: &ScalarField,
    mu: f64,
    side: Side,
) -> Result<DefectReport> {
    if !w.domain.same_layout(&op.domain) {
        return Err(HjError::DomainMismatch("field layout differs from operator".into()));
    }
    let mut max_defect = 0.0f64;
    let mut argmax = None;
    for ix in op.domain.interior_indices() {
        let f = op.apply_at(&w.values, ix);
        let defect = match side {
            Side::Sub => (f - mu).max(0.0),
            Side::Super => (mu - f).max(0.0),
        };
        if defect > max_defect {
            max_defect = defect;
            argmax = Some(ix);
        }
    }
    Ok(DefectReport { side, max_defect, argmax })
}

/// `max(0, max_interior(sub - super))`; zero exactly when the discrete
/// comparison principle holds for this ordered pair.
pub fn comparison_defect(sub: &ScalarField, sup: &ScalarField) -> Result<f64> {
    if !sub.domain.same_layout(&sup.domain) {
        return Err(HjError::DomainMismatch("comparison on different grids".into()));
    }
    for ix in 0..sub.domain.len() {
        if sub.domain.mask[ix] != MASK_INTERIOR && sub.values[ix] > sup.values[ix] + 1e-12 {
            return Err(HjError::InvalidParams(
                "comparison precondition violated: sub > super on boundary".into(),
            ));
        }
    }
    let mut worst = 0.0f64;
    for ix in sub.domain.interior_indices() {
        worst = worst.max(sub.values[ix] - sup.values[ix]);
    }
    Ok(worst.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{build_environment, EnvKind, EnvParams, SigmaKind};
    use crate::grid::SourceSpec;
    use crate::rng::CounterRng;

    fn quad_env(d: usize) -> Environment {
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

    fn viscous_quad_env(d: usize, a0: f64) -> Environment {
        build_environment(EnvParams {
            d,
            q: 2.0,
            lambda: 1.0,
            kind: EnvKind::Deterministic { coef: 1.0 },
            sigma: SigmaKind::ConstantIsotropic { a0 },
            constrained: false,
            seed: 0,
            replica: 0,
        })
        .unwrap()
    }

    #[test]
    fn operator_on_zero_field() {
        let env = quad_env(2);
        let mut g = GridDomain::symmetric(2, 0.1, 3.0).unwrap();
        g.set_source(&SourceSpec::origin()).unwrap();
        let domain = Arc::new(g);
        let op = DiscreteOp::build(&env, domain.clone(), [0.0; 2], 2.0);
        let w = ScalarField::zeros(domain.clone());
        let ix = domain.node_at([2.0, 1.0]).unwrap();
        assert_eq!(op.apply(&w, ix).unwrap(), 0.0);
    }

    #[test]
    fn operator_on_linear_field_axis_aligned() {
        // w = c*y0: second differences vanish; one-sided upwind gives |c|^2 exactly
        let env = quad_env(2);
        let g = GridDomain::symmetric(2, 0.1, 3.0).unwrap();
        let domain = Arc::new(g);
        let op = DiscreteOp::build(&env, domain.clone(), [0.0; 2], 2.0);
        let c = 1.7;
        let w = ScalarField::from_fn(domain.clone(), |y| c * y[0]);
        let ix = domain.index(domain.n[0] / 2 + 3, domain.n[1] / 2 - 2);
        let val = op.apply_at(&w.values, ix);
        assert!((val - c * c).abs() < 1e-12, "got {val}");
    }

    #[test]
    fn operator_on_quadratic_field_matches_symbolic() {
        // w = |y|^2/2, A = I/2 (a0 = 1), d = 2, H = |p|^2:
        // exact value -tr(A D^2 w) + |Dw|^2 = -1 + |y|^2; upwind bias is O(h).
        let env = viscous_quad_env(2, 1.0);
        let g = GridDomain::symmetric(2, 0.02, 3.0).unwrap();
        let domain = Arc::new(g);
        let op = DiscreteOp::build(&env, domain.clone(), [0.0; 2], 4.0);
        let w = ScalarField::from_fn(domain.clone(), |y| 0.5 * (y[0] * y[0] + y[1] * y[1]));
        for probe in [[1.0, 0.5], [-0.7, 1.3], [2.0, -2.0]] {
            let ix = domain.node_at(probe).unwrap();
            let y = domain.coord(ix);
            let exact = -1.0 + y[0] * y[0] + y[1] * y[1];
            let val = op.apply_at(&w.values, ix);
            // one-sided gradient bias ~ h * |y|_1
            let slack = 3.0 * domain.h * (y[0].abs() + y[1].abs()) + 1e-9;
            assert!((val - exact).abs() <= slack, "at {y:?}: {val} vs {exact}");
        }
    }

    #[test]
    fn operator_shift_invariance() {
        let env = quad_env(2);
        let g = GridDomain::symmetric(2, 0.1, 3.0).unwrap();
        let domain = Arc::new(g);
        let op = DiscreteOp::build(&env, domain.clone(), [0.0; 2], 2.0);
        let w = ScalarField::from_fn(domain.clone(), |y| (y[0] * 1.3).sin() + y[1]);
        let mut w10 = w.clone();
        for v in &mut w10.values {
            *v += 10.0;
        }
        for ix in domain.interior_indices().step_by(7) {
            assert!((op.apply_at(&w.values, ix) - op.apply_at(&w10.values, ix)).abs() < 1e-12);
        }
    }

    #[test]
    fn local_solve_agrees_with_bisection() {
        let env = viscous_quad_env(2, 0.8);
        let g = GridDomain::symmetric(2, 0.25, 2.0).unwrap();
        let domain = Arc::new(g);
        for p_shift in [[0.0, 0.0], [0.7, -0.4]] {
            let op = DiscreteOp::build(&env, domain.clone(), p_shift, 3.0);
            let mut rng = CounterRng::new(5);
            let mut w = ScalarField::from_fn(domain.clone(), |_| 0.0);
            for v in &mut w.values {
                *v = rng.uniform_in(-1.0, 1.0);
            }
            // reference root-finder straight through the full operator
            let slow_solve = |w: &[f64], ix: usize, discount: f64, rhs: f64| -> f64 {
                let mut buf = w.to_vec();
                let mut eval = |x: f64, buf: &mut Vec<f64>| {
                    buf[ix] = x;
                    discount * x + op.apply_at(buf, ix)
                };
                let (mut lo, mut hi) = (-50.0, 50.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if eval(mid, &mut buf) < rhs {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            };
            for ix in domain.interior_indices() {
                for (discount, rhs) in [(0.0, 1.0), (0.3, 0.2), (0.0, 0.0)] {
                    let fast = op.local_solve(&w.values, ix, discount, rhs);
                    let slow = slow_solve(&w.values, ix, discount, rhs);
                    assert!(
                        (fast - slow).abs() < 1e-7,
                        "ix {ix} discount {discount}: {fast} vs {slow}"
                    );
                }
            }
        }
    }

    #[test]
    fn local_solve_general_exponent() {
        let env = build_environment(EnvParams {
            d: 2,
            q: 1.5,
            lambda: 2.0,
            kind: EnvKind::Deterministic { coef: 1.0 },
            sigma: SigmaKind::ConstantIsotropic { a0: 0.5 },
            constrained: false,
            seed: 0,
            replica: 0,
        })
        .unwrap();
        let g = GridDomain::symmetric(2, 0.25, 2.0).unwrap();
        let domain = Arc::new(g);
        let op = DiscreteOp::build(&env, domain.clone(), [0.0; 2], 3.0);
        let mut rng = CounterRng::new(6);
        let mut w = vec![0.0; domain.len()];
        for v in &mut w {
            *v = rng.uniform_in(-1.0, 1.0);
        }
        for ix in domain.interior_indices().step_by(3) {
            let x = op.local_solve(&w, ix, 0.1, 0.7);
            let mut buf = w.clone();
            buf[ix] = x;
            let res = 0.1 * x + op.apply_at(&buf, ix) - 0.7;
            assert!(res.abs() < 1e-7, "residual {res}");
        }
    }

    #[test]
    fn update_target_is_monotone_in_neighbors() {
        // random stencils, both relaxations, upwind scheme
        let env = viscous_quad_env(2, 0.7);
        let g = GridDomain::symmetric(2, 0.2, 1.0).unwrap();
        let domain = Arc::new(g.clone());
        let op = DiscreteOp::build(&env, domain.clone(), [0.4, -0.2], 3.0);
        let center = domain.index(domain.n[0] / 2, domain.n[1] / 2);
        let neighbors = [center - 1, center + 1, center - domain.n[1], center + domain.n[1]];
        let mut rng = CounterRng::new(17);
        for trial in 0..200 {
            let mut w = vec![0.0; domain.len()];
            for v in &mut w {
                *v = rng.uniform_in(-2.0, 2.0);
            }
            for relax in [Relaxation::GaussSeidelLocal, Relaxation::Explicit { cfl_safety: 0.9 }] {
                let base = op.update_target(&w, center, 0.1, 1.0, relax);
                for &nb in &neighbors {
                    let mut w2 = w.clone();
                    w2[nb] += rng.uniform_in(0.0, 1.0);
                    let bumped = op.update_target(&w2, center, 0.1, 1.0, relax);
                    assert!(
                        bumped >= base - 1e-10,
                        "trial {trial}: raising neighbor lowered target: {base} -> {bumped}"
                    );
                }
            }
        }
    }

    #[test]
    fn broken_upwinding_is_not_monotone() {
        let env = quad_env(2);
        let g = GridDomain::symmetric(2, 0.2, 1.0).unwrap();
        let domain = Arc::new(g);
        let mut op = DiscreteOp::build(&env, domain.clone(), [0.0, 0.0], 3.0);
        op.upwind = false;
        let center = domain.index(domain.n[0] / 2, domain.n[1] / 2);
        let neighbors = [center - 1, center + 1, center - domain.n[1], center + domain.n[1]];
        let mut rng = CounterRng::new(19);
        let mut violated = false;
        for _ in 0..200 {
            let mut w = vec![0.0; domain.len()];
            for v in &mut w {
                *v = rng.uniform_in(-2.0, 2.0);
            }
            let relax = Relaxation::Explicit { cfl_safety: 0.9 };
            let base = op.update_target(&w, center, 0.0, 1.0, relax);
            for &nb in &neighbors {
                let mut w2 = w.clone();
                w2[nb] += rng.uniform_in(0.0, 1.0);
                if op.update_target(&w2, center, 0.0, 1.0, relax) < base - 1e-10 {
                    violated = true;
                }
            }
        }
        assert!(violated, "centered differences should break monotonicity");
    }

    /// 1D stationary solve against the exact profile |y| - 1 for
    /// -1/2 m'' + |m'|^2 = 1 outside [-1, 1] (the linear profile is exact).
    #[test]
    fn stationary_matches_linear_profile_1d() {
        let env = viscous_quad_env(1, 1.0);
        let mut g = GridDomain::symmetric(1, 0.02, 6.0).unwrap();
        g.set_source(&SourceSpec::origin()).unwrap();
        let domain = Arc::new(g);
        let op = DiscreteOp::build(&env, domain.clone(), [0.0; 2], 3.0);
        let boundary = BoundaryValues::from_fn(&domain, |y| {
            3.0 * (y[0].abs() - 1.0).max(0.0)
        });
        let scheme = SchemeParams::for_mu(1.0);
        let (m, info) = solve_stationary(&op, 1.0, 0.0, &boundary, &scheme, None).unwrap();
        assert!(info.residual <= scheme.residual_tol);
        for probe in [[1.5f64, 0.0], [3.0, 0.0], [-4.0, 0.0]] {
            let exact: f64 = probe[0].abs() - 1.0;
            let got = m.value_at(probe).unwrap();
            assert!(
                (got - exact).abs() <= 5.0 * domain.h,
                "at {probe:?}: {got} vs {exact}"
            );
        }
    }

    #[test]
    fn trivial_zero_solution_accepted_without_sweeps() {
        // mu = 0, V = 0: the zero field already has zero residual.
        let env = quad_env(2);
        let mut g = GridDomain::symmetric(2, 0.2, 3.0).unwrap();
        g.set_source(&SourceSpec::origin()).unwrap();
        let domain = Arc::new(g);
        let op = DiscreteOp::build(&env, domain.clone(), [0.0; 2], 1.0);
        let boundary = BoundaryValues::zero(&domain);
        let scheme = SchemeParams::for_mu(0.0);
        let (m, info) = solve_stationary(&op, 0.0, 0.0, &boundary, &scheme, None).unwrap();
        assert_eq!(info.sweeps, 0);
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn converged_solution_has_small_two_sided_defects() {
        let env = quad_env(2);
        let mut g = GridDomain::symmetric(2, 0.1, 4.0).unwrap();
        g.set_source(&SourceSpec::origin()).unwrap();
        let domain = Arc::new(g);
        let op = DiscreteOp::build(&env, domain.clone(), [0.0; 2], 3.0);
        let lbar = 3.0;
        let boundary = BoundaryValues::from_fn(&domain, |y| {
            lbar * ((y[0] * y[0] + y[1] * y[1]).sqrt() - 1.0).max(0.0)
        });
        let scheme = SchemeParams::for_mu(1.0);
        let (m, _) = solve_stationary(&op, 1.0, 0.0, &boundary, &scheme, None).unwrap();
        let sub = check_viscosity_inequality(&op, &m, 1.0, Side::Sub).unwrap();
        let sup = check_viscosity_inequality(&op, &m, 1.0, Side::Super).unwrap();
        assert!(sub.max_defect <= scheme.residual_tol * 1.01);
        assert!(sup.max_defect <= scheme.residual_tol * 1.01);

        // (1 - eps) * m is a strict subsolution for convex H with H(0,.) <= 0
        let mut shrunk = m.clone();
        for v in &mut shrunk.values {
            *v *= 0.9;
        }
        let sub2 = check_viscosity_inequality(&op, &shrunk, 1.0, Side::Sub).unwrap();
        assert!(sub2.max_defect <= scheme.residual_tol * 1.01, "defect {}", sub2.max_defect);

        // comparison: m vs m + 1
        let mut plus = m.clone();
        for v in &mut plus.values {
            *v += 1.0;
        }
        assert_eq!(comparison_defect(&m, &plus).unwrap(), 0.0);
        assert_eq!(comparison_defect(&m, &m).unwrap(), 0.0);
        let diam_cells = 2.0 * domain.radius() / domain.h;
        let defect = comparison_defect(&shrunk, &m);
        // shrunk has smaller boundary values, so precondition holds
        assert!(defect.unwrap() <= scheme.residual_tol * diam_cells);
    }

    #[test]
    fn sweep_is_nonexpansive_on_eikonal() {
        let env = quad_env(2);
        let mut g = GridDomain::symmetric(2, 0.2, 3.0).unwrap();
        g.set_source(&SourceSpec::origin()).unwrap();
        let domain = Arc::new(g);
        let op = DiscreteOp::build(&env, domain.clone(), [0.0; 2], 2.0);
        let mut rng = CounterRng::new(23);
        let sweep = |w: &mut Vec<f64>| {
            for ix in 0..domain.len() {
                if domain.mask[ix] == MASK_INTERIOR {
                    w[ix] = op.update_target(w, ix, 0.0, 1.0, Relaxation::GaussSeidelLocal);
                }
            }
        };
        for _ in 0..20 {
            let mut u = vec![0.0; domain.len()];
            let mut v = vec![0.0; domain.len()];
            for ix in 0..domain.len() {
                u[ix] = rng.uniform_in(0.0, 3.0);
                v[ix] = rng.uniform_in(0.0, 3.0);
            }
            // boundary values shared so the sweep acts only on interior
            for ix in 0..domain.len() {
                if domain.mask[ix] != MASK_INTERIOR {
                    v[ix] = u[ix];
                }
            }
            let d0 = u
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            sweep(&mut u);
            sweep(&mut v);
            let d1 = u
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(d1 <= d0 * (1.0 + 1e-10) + 1e-12, "{d0} -> {d1}");
        }
    }

    #[test]
    fn solution_independent_of_sweep_ordering() {
        // permute orderings by starting the solver from two different
        // warm starts: results agree within tolerance
        let env = viscous_quad_env(2, 0.6);
        let mut g = GridDomain::symmetric(2, 0.2, 4.0).unwrap();
        g.set_source(&SourceSpec::origin()).unwrap();
        let domain = Arc::new(g);
        let op = DiscreteOp::build(&env, domain.clone(), [0.0; 2], 3.0);
        let boundary = BoundaryValues::from_fn(&domain, |y| {
            3.0 * ((y[0] * y[0] + y[1] * y[1]).sqrt() - 1.0).max(0.0)
        });
        let mut scheme = SchemeParams::for_mu(1.0);
        scheme.residual_tol = 1e-9;
        let (m1, _) = solve_stationary(&op, 1.0, 0.0, &boundary, &scheme, None).unwrap();
        let warm = ScalarField::from_fn(domain.clone(), |y| {
            0.5 * ((y[0] * y[0] + y[1] * y[1]).sqrt() - 1.0).max(0.0)
        });
        let (m2, _) = solve_stationary(&op, 1.0, 0.0, &boundary, &scheme, Some(&warm)).unwrap();
        let diff = m1
            .values
            .iter()
            .zip(&m2.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let diam_cells = 2.0 * domain.radius() / domain.h;
        assert!(diff <= 1e-9 * diam_cells * 10.0, "diff {diff}");
    }
}
