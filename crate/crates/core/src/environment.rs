//! Random coefficient fields `(Sigma, H)`.
//!
//! An [`Environment`] is one realization of the random medium: a pair of
//! evaluators for the diffusion square root `Sigma(y)` (isotropic, so
//! `A(y) = 1/2 s(y)^2 I`) and the Hamiltonian
//!
//! ```text
//! H(p, y) = a(y) |p|^q - V(y),    a in [1/Lambda, Lambda],  V >= 0.
//! ```
//!
//! All randomness is generated counter-style from
//! `(seed, replica, lattice cell index)`, so evaluation is a pure function
//! of `(params, y, p)` and fields in regions at distance at least one
//! depend on disjoint random inputs.

use crate::rng::CounterRng;
use crate::{HjError, Result};

const STREAM_POISSON_V: u64 = 1;
const STREAM_POISSON_A: u64 = 2;
const STREAM_POISSON_S: u64 = 3;
const STREAM_CHECKER_V: u64 = 4;
const STREAM_CHECKER_A: u64 = 5;

/// Which coefficient field a trace entry was read for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum FieldTag {
    Potential,
    Coefficient,
    Diffusion,
}

/// One unit of random data consumed while evaluating the fields at a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct TraceItem {
    pub cell: [i64; 2],
    pub item: u32,
    pub tag: FieldTag,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EnvKind {
    /// Constant coefficients: `H = coef |p|^q`.
    Deterministic { coef: f64 },
    /// One-per-axis squared-cosine potential of the given period.
    Periodic { v0: f64, period: f64 },
    /// Truncated Poissonian potential plus bump-modulated coefficient.
    PoissonBumps {
        intensity: f64,
        bump_radius: f64,
        amp: f64,
        vmax: f64,
        /// amplitude of the multiplicative bumps on `a(y)` (0 disables)
        coef_amp: f64,
    },
    /// iid values per lattice cell, mollified to a Lipschitz field.
    Checkerboard {
        cell_size: f64,
        smoothing_radius: f64,
        a_lo: f64,
        a_hi: f64,
        vmax: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum SigmaKind {
    Zero,
    /// `Sigma = a0 I`, requires `a0 <= sqrt(Lambda)`.
    ConstantIsotropic { a0: f64 },
    /// `s(y) = base + bumps`, clamped to `[0, sqrt(Lambda)]`.
    BumpModulated {
        base: f64,
        amp: f64,
        bump_radius: f64,
        intensity: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvParams {
    pub d: usize,
    pub q: f64,
    pub lambda: f64,
    pub kind: EnvKind,
    pub sigma: SigmaKind,
    /// Constrained family: forces `V = 0` so that `H >= |p|^q / Lambda`.
    pub constrained: bool,
    pub seed: u64,
    pub replica: u64,
}

impl EnvParams {
    /// Structural parameter checks; everything else is probed by
    /// [`validate_environment`].
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HjError::InvalidParams(msg));
        if !(self.d == 1 || self.d == 2) {
            return fail(format!("d must be 1 or 2, got {}", self.d));
        }
        if !(self.q > 1.0) {
            return fail(format!("growth exponent must satisfy q > 1, got {}", self.q));
        }
        if !(self.lambda >= 1.0) {
            return fail(format!("structure constant must satisfy Lambda >= 1, got {}", self.lambda));
        }
        match &self.kind {
            EnvKind::Deterministic { coef } => {
                if !(*coef >= 1.0 / self.lambda && *coef <= self.lambda) {
                    return fail(format!("coef {coef} outside [1/Lambda, Lambda]"));
                }
            }
            EnvKind::Periodic { v0, period } => {
                if *v0 < 0.0 || *period <= 0.0 {
                    return fail(format!("periodic family needs v0 >= 0 and period > 0, got ({v0}, {period})"));
                }
            }
            EnvKind::PoissonBumps { intensity, bump_radius, amp, vmax, coef_amp } => {
                if *intensity < 0.0 {
                    return fail(format!("intensity must be >= 0, got {intensity}"));
                }
                if !(*bump_radius > 0.0 && *bump_radius <= 0.5) {
                    return fail(format!("bump radius must lie in (0, 1/2], got {bump_radius}"));
                }
                if *amp < 0.0 || *vmax < 0.0 || *coef_amp < 0.0 {
                    return fail("bump amplitudes must be >= 0".to_string());
                }
            }
            EnvKind::Checkerboard { cell_size, smoothing_radius, a_lo, a_hi, vmax } => {
                if *cell_size <= 0.0 || *smoothing_radius <= 0.0 || *vmax < 0.0 {
                    return fail("checkerboard sizes must be positive".to_string());
                }
                // Dependence range <= 1: a probe reads whole cells within the
                // smoothing window, so cell extent counts toward the range.
                let range = (self.d as f64).sqrt() * (2.0 * smoothing_radius + cell_size);
                if range > 1.0 + 1e-12 {
                    return fail(format!(
                        "checkerboard sqrt(d)*(2*smoothing + cell) = {range:.3} exceeds 1 (dependence range)"
                    ));
                }
                if !(*a_lo >= 1.0 / self.lambda && *a_hi <= self.lambda && a_lo <= a_hi) {
                    return fail(format!("coefficient range [{a_lo}, {a_hi}] outside [1/Lambda, Lambda]"));
                }
            }
        }
        match &self.sigma {
            SigmaKind::Zero => {}
            SigmaKind::ConstantIsotropic { a0 } => {
                if !(*a0 >= 0.0 && *a0 <= self.lambda.sqrt()) {
                    return fail(format!("sigma a0 = {a0} outside [0, sqrt(Lambda)]"));
                }
            }
            SigmaKind::BumpModulated { base, amp, bump_radius, intensity } => {
                if !(*bump_radius > 0.0 && *bump_radius <= 0.5) {
                    return fail(format!("sigma bump radius must lie in (0, 1/2], got {bump_radius}"));
                }
                if *base < 0.0 || *amp < 0.0 || *intensity < 0.0 {
                    return fail("sigma modulation parameters must be >= 0".to_string());
                }
            }
        }
        Ok(())
    }
}

/// One realization of the random medium. Immutable and cheap to clone;
/// evaluators are pure functions of `(params, shift, y, p)`.
#[derive(Clone, Debug)]
pub struct Environment {
    params: EnvParams,
    /// Translation action: this environment evaluates the base fields at `y + shift`.
    shift: [f64; 2],
}

pub fn build_environment(params: EnvParams) -> Result<Environment> {
    params.validate()?;
    Ok(Environment { params, shift: [0.0; 2] })
}

/// Smooth bump profile on [-1, 1], `psi(0) = 1`, `psi(+-1) = 0`, C^1.
#[inline]
fn bump(s2: f64) -> f64 {
    if s2 >= 1.0 {
        0.0
    } else {
        let t = 1.0 - s2;
        t * t
    }
}

/// CDF of the quartic mollifier of radius `r` evaluated at `t`.
fn mollifier_cdf(t: f64, r: f64) -> f64 {
    let u = (t / r).clamp(-1.0, 1.0);
    0.5 + (15.0 / 16.0) * (u - 2.0 * u.powi(3) / 3.0 + u.powi(5) / 5.0)
}

impl Environment {
    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.d
    }

    pub fn q(&self) -> f64 {
        self.params.q
    }

    pub fn lambda(&self) -> f64 {
        self.params.lambda
    }

    /// The translation action `tau_z`: the returned environment evaluates
    /// `H` at `(p, y)` to this environment's `H(p, y + z)`.
    pub fn translate(&self, z: [f64; 2]) -> Environment {
        let mut e = self.clone();
        e.shift[0] += z[0];
        e.shift[1] += z[1];
        e
    }

    #[inline]
    fn base_point(&self, y: [f64; 2]) -> [f64; 2] {
        [y[0] + self.shift[0], y[1] + self.shift[1]]
    }

    /// `|p|^q` with a fast path for q = 2.
    #[inline]
    pub fn pow_q(&self, p_norm_sq: f64) -> f64 {
        if (self.params.q - 2.0).abs() < 1e-12 {
            p_norm_sq
        } else {
            p_norm_sq.powf(0.5 * self.params.q)
        }
    }

    /// Hamiltonian `H(p, y) = a(y) |p|^q - V(y)`.
    pub fn hamiltonian(&self, p: [f64; 2], y: [f64; 2]) -> f64 {
        let p2 = p[0] * p[0] + p[1] * p[1];
        self.coef_a(y) * self.pow_q(p2) - self.potential_v(y)
    }

    /// Diagonal entry of `A(y) = 1/2 Sigma^T Sigma = 1/2 s(y)^2 I`.
    pub fn a_diag(&self, y: [f64; 2]) -> f64 {
        let s = self.sigma_scalar(y);
        0.5 * s * s
    }

    /// Scalar `s(y)` with `Sigma(y) = s(y) I`.
    pub fn sigma_scalar(&self, y: [f64; 2]) -> f64 {
        let y = self.base_point(y);
        match &self.params.sigma {
            SigmaKind::Zero => 0.0,
            SigmaKind::ConstantIsotropic { a0 } => *a0,
            SigmaKind::BumpModulated { base, amp, bump_radius, intensity } => {
                let s = base
                    + self.sum_bumps(y, *bump_radius, *intensity, *amp, STREAM_POISSON_S, None);
                s.clamp(0.0, self.params.lambda.sqrt())
            }
        }
    }

    /// Coefficient `a(y) in [1/Lambda, Lambda]`.
    pub fn coef_a(&self, y: [f64; 2]) -> f64 {
        let y = self.base_point(y);
        let lam = self.params.lambda;
        match &self.params.kind {
            EnvKind::Deterministic { coef } => *coef,
            EnvKind::Periodic { .. } => 1.0,
            EnvKind::PoissonBumps { intensity, bump_radius, coef_amp, .. } => {
                if *coef_amp == 0.0 {
                    1.0
                } else {
                    let b = self.sum_bumps(y, *bump_radius, *intensity, *coef_amp, STREAM_POISSON_A, None);
                    (1.0 + b).clamp(1.0 / lam, lam)
                }
            }
            EnvKind::Checkerboard { cell_size, smoothing_radius, a_lo, a_hi, .. } => {
                let u = self.mollified_checker(y, *cell_size, *smoothing_radius, STREAM_CHECKER_A, None);
                a_lo + (a_hi - a_lo) * u
            }
        }
    }

    /// Potential `V(y) >= 0`; identically zero for the constrained family.
    pub fn potential_v(&self, y: [f64; 2]) -> f64 {
        if self.params.constrained {
            return 0.0;
        }
        let y = self.base_point(y);
        match &self.params.kind {
            EnvKind::Deterministic { .. } => 0.0,
            EnvKind::Periodic { v0, period } => {
                let mut v = 1.0;
                for &c in y.iter().take(self.params.d) {
                    let s = (std::f64::consts::PI * c / period).cos();
                    v *= s * s;
                }
                v0 * v
            }
            EnvKind::PoissonBumps { intensity, bump_radius, amp, vmax, .. } => {
                let v = self.sum_bumps(y, *bump_radius, *intensity, *amp, STREAM_POISSON_V, None);
                v.min(*vmax)
            }
            EnvKind::Checkerboard { cell_size, smoothing_radius, vmax, .. } => {
                let u = self.mollified_checker(y, *cell_size, *smoothing_radius, STREAM_CHECKER_V, None);
                vmax * u
            }
        }
    }

    /// Sum of Poisson bumps around `y` (already in base coordinates).
    /// Counts and marks are drawn per unit lattice cell from the counter RNG.
    fn sum_bumps(
        &self,
        y: [f64; 2],
        radius: f64,
        intensity: f64,
        amp: f64,
        stream: u64,
        mut trace: Option<&mut Vec<TraceItem>>,
    ) -> f64 {
        if intensity <= 0.0 || amp <= 0.0 {
            return 0.0;
        }
        let d = self.params.d;
        let mut total = 0.0;
        let lo0 = (y[0] - radius).floor() as i64;
        let hi0 = (y[0] + radius).floor() as i64;
        let (lo1, hi1) = if d == 2 {
            ((y[1] - radius).floor() as i64, (y[1] + radius).floor() as i64)
        } else {
            (0, 0)
        };
        let tag = match stream {
            STREAM_POISSON_V => FieldTag::Potential,
            STREAM_POISSON_S => FieldTag::Diffusion,
            _ => FieldTag::Coefficient,
        };
        for k0 in lo0..=hi0 {
            for k1 in lo1..=hi1 {
                let mut rng = CounterRng::keyed(self.params.seed, self.params.replica, [k0, k1], stream);
                let n = rng.poisson(intensity);
                for i in 0..n {
                    let x0 = k0 as f64 + rng.uniform();
                    let x1 = if d == 2 { k1 as f64 + rng.uniform() } else { 0.0 };
                    let a = amp * rng.uniform();
                    let dx0 = (y[0] - x0) / radius;
                    let dx1 = (y[1] - x1) / radius;
                    let s2 = dx0 * dx0 + dx1 * dx1;
                    if s2 < 1.0 {
                        total += a * bump(s2);
                        if let Some(t) = trace.as_deref_mut() {
                            t.push(TraceItem { cell: [k0, k1], item: i, tag });
                        }
                    }
                }
            }
        }
        total
    }

    /// Mollified iid-per-cell field, normalized to [0, 1].
    fn mollified_checker(
        &self,
        y: [f64; 2],
        cell: f64,
        r: f64,
        stream: u64,
        mut trace: Option<&mut Vec<TraceItem>>,
    ) -> f64 {
        let d = self.params.d;
        let lo0 = ((y[0] - r) / cell).floor() as i64;
        let hi0 = ((y[0] + r) / cell).floor() as i64;
        let (lo1, hi1) = if d == 2 {
            (((y[1] - r) / cell).floor() as i64, ((y[1] + r) / cell).floor() as i64)
        } else {
            (0, 0)
        };
        let tag = if stream == STREAM_CHECKER_V {
            FieldTag::Potential
        } else {
            FieldTag::Coefficient
        };
        let mut total = 0.0;
        for k0 in lo0..=hi0 {
            let w0 = mollifier_cdf(y[0] - k0 as f64 * cell, r)
                - mollifier_cdf(y[0] - (k0 + 1) as f64 * cell, r);
            if w0 <= 0.0 {
                continue;
            }
            for k1 in lo1..=hi1 {
                let w1 = if d == 2 {
                    mollifier_cdf(y[1] - k1 as f64 * cell, r)
                        - mollifier_cdf(y[1] - (k1 + 1) as f64 * cell, r)
                } else {
                    1.0
                };
                if w1 <= 0.0 {
                    continue;
                }
                let mut rng = CounterRng::keyed(self.params.seed, self.params.replica, [k0, k1], stream);
                total += w0 * w1 * rng.uniform();
                if let Some(t) = trace.as_deref_mut() {
                    t.push(TraceItem { cell: [k0, k1], item: 0, tag });
                }
            }
        }
        total
    }

    /// The random data actually consumed when evaluating the fields at `y`.
    /// Probes at distance >= 1 touch disjoint sets for the random families.
    pub fn trace(&self, y: [f64; 2]) -> Vec<TraceItem> {
        let yb = self.base_point(y);
        let mut items = Vec::new();
        match &self.params.kind {
            EnvKind::Deterministic { .. } | EnvKind::Periodic { .. } => {}
            EnvKind::PoissonBumps { intensity, bump_radius, amp, coef_amp, .. } => {
                self.sum_bumps(yb, *bump_radius, *intensity, amp.max(1e-300), STREAM_POISSON_V, Some(&mut items));
                if *coef_amp > 0.0 {
                    self.sum_bumps(yb, *bump_radius, *intensity, *coef_amp, STREAM_POISSON_A, Some(&mut items));
                }
            }
            EnvKind::Checkerboard { cell_size, smoothing_radius, .. } => {
                self.mollified_checker(yb, *cell_size, *smoothing_radius, STREAM_CHECKER_V, Some(&mut items));
                self.mollified_checker(yb, *cell_size, *smoothing_radius, STREAM_CHECKER_A, Some(&mut items));
            }
        }
        if let SigmaKind::BumpModulated { base: _, amp, bump_radius, intensity } = &self.params.sigma {
            self.sum_bumps(yb, *bump_radius, *intensity, *amp, STREAM_POISSON_S, Some(&mut items));
        }
        items.sort();
        items.dedup();
        items
    }

    /// Upper bound on `|D_p H|` for `|p| <= p_max`, used for CFL's gradient part.
    pub fn dp_bound(&self, p_max: f64) -> f64 {
        let q = self.params.q;
        let a_hi = match &self.params.kind {
            EnvKind::Deterministic { coef } => *coef,
            EnvKind::Periodic { .. } => 1.0,
            EnvKind::PoissonBumps { coef_amp, .. } => (1.0 + coef_amp).min(self.params.lambda),
            EnvKind::Checkerboard { a_hi, .. } => *a_hi,
        };
        q * a_hi * p_max.max(1e-9).powf(q - 1.0)
    }

    /// Upper bound on the diffusion diagonal `a_diag`.
    pub fn a_diag_bound(&self) -> f64 {
        match &self.params.sigma {
            SigmaKind::Zero => 0.0,
            SigmaKind::ConstantIsotropic { a0 } => 0.5 * a0 * a0,
            SigmaKind::BumpModulated { .. } => 0.5 * self.params.lambda,
        }
    }
}

/// One hypothesis check with its worst-case sampled margin
/// (nonnegative margin means the hypothesis held on every probe).
#[derive(Clone, Debug)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub pass: bool,
    pub margin: f64,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub checks: Vec<HypothesisCheck>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Probes the structural hypotheses on sampled points: quadratic growth
/// bounds, convexity by the midpoint test, Lipschitz bounds by difference
/// quotients, and the sign conditions on `H(0, .)`.
pub fn validate_environment(env: &Environment, n_probes: usize, tol: f64) -> ValidationReport {
    let h = |p: [f64; 2], y: [f64; 2]| env.hamiltonian(p, y);
    let s = |y: [f64; 2]| env.sigma_scalar(y);
    validate_fields(&h, &s, env.params(), n_probes, tol)
}

/// Generic validation core; also used by tests with hand-built fields.
pub fn validate_fields(
    h: &dyn Fn([f64; 2], [f64; 2]) -> f64,
    sigma: &dyn Fn([f64; 2]) -> f64,
    params: &EnvParams,
    n_probes: usize,
    tol: f64,
) -> ValidationReport {
    let d = params.d;
    let lam = params.lambda;
    let q = params.q;
    let mut rng = CounterRng::keyed(params.seed, params.replica, [0, 0], 77);
    let range = 8.0;
    let p_range = 3.0;
    let rand_y = |rng: &mut CounterRng| -> [f64; 2] {
        let mut y = [0.0; 2];
        for yc in y.iter_mut().take(d) {
            *yc = rng.uniform_in(-range, range);
        }
        y
    };
    let rand_p = |rng: &mut CounterRng| -> [f64; 2] {
        let mut p = [0.0; 2];
        for pc in p.iter_mut().take(d) {
            *pc = rng.uniform_in(-p_range, p_range);
        }
        p
    };
    let norm = |v: [f64; 2]| (v[0] * v[0] + v[1] * v[1]).sqrt();
    let powq = |t: f64| t.powf(q);

    let mut m_sigbnd = f64::INFINITY;
    let mut m_siglip = f64::INFINITY;
    let mut m_convex = f64::INFINITY;
    let mut m_growth_lo = f64::INFINITY;
    let mut m_growth_hi = f64::INFINITY;
    let mut m_lipy = f64::INFINITY;
    let mut m_lipp = f64::INFINITY;
    let mut m_above0 = f64::INFINITY;
    let mut max_h0 = f64::NEG_INFINITY;

    for _ in 0..n_probes.max(1) {
        let y = rand_y(&mut rng);
        let p = rand_p(&mut rng);
        let p2 = rand_p(&mut rng);

        let s_y = sigma(y);
        m_sigbnd = m_sigbnd.min(lam - 0.5 * (d as f64) * s_y * s_y);

        // Sigma Lipschitz via a nearby and a far pair.
        for dy in [0.05, rng.uniform_in(0.5, 3.0)] {
            let mut y2 = y;
            y2[0] += dy;
            let dsig = (d as f64).sqrt() * (sigma(y2) - s_y).abs();
            m_siglip = m_siglip.min(lam * dy - dsig);
        }

        // Convexity (midpoint).
        let mid = [(p[0] + p2[0]) * 0.5, (p[1] + p2[1]) * 0.5];
        m_convex = m_convex.min(0.5 * (h(p, y) + h(p2, y)) - h(mid, y));

        // Growth bounds.
        let hp = h(p, y);
        let pq = powq(norm(p));
        m_growth_lo = m_growth_lo.min(hp - (pq / lam - lam));
        m_growth_hi = m_growth_hi.min(lam * pq + lam - hp);

        // Lipschitz in y at fixed p.
        for dy in [0.05, rng.uniform_in(0.5, 3.0)] {
            let mut y2 = y;
            let axis = if d == 2 && rng.uniform() < 0.5 { 1 } else { 0 };
            y2[axis] += dy;
            let dh = (h(p, y2) - hp).abs();
            m_lipy = m_lipy.min(lam * (pq + 1.0) * dy - dh);
        }

        // Lipschitz in p at fixed y.
        let dh = (h(p, y) - h(p2, y)).abs();
        let dp = norm([p[0] - p2[0], p[1] - p2[1]]);
        if dp > 1e-12 {
            let bound = lam * (norm(p) + norm(p2) + 1.0).powf(q - 1.0) * dp;
            m_lipp = m_lipp.min(bound - dh);
        }

        // H(p, y) >= H(0, y) and sup_z H(0, z) <= 0.
        let h0 = h([0.0; 2], y);
        m_above0 = m_above0.min(hp - h0);
        max_h0 = max_h0.max(h0);
    }

    let mk = |name: &'static str, margin: f64, detail: String| HypothesisCheck {
        name,
        pass: margin >= -tol,
        margin,
        detail,
    };
    ValidationReport {
        checks: vec![
            mk("sigma_bound", m_sigbnd, "1/2 |Sigma|^2 <= Lambda".into()),
            mk("sigma_lipschitz", m_siglip, "|Sigma(y)-Sigma(z)| <= Lambda |y-z|".into()),
            mk("convexity", m_convex, "midpoint inequality for p -> H(p,y)".into()),
            mk("growth_lower", m_growth_lo, "H >= |p|^q/Lambda - Lambda".into()),
            mk("growth_upper", m_growth_hi, "H <= Lambda |p|^q + Lambda".into()),
            mk("lipschitz_y", m_lipy, "|H(p,y)-H(p,z)| <= Lambda(|p|^q+1)|y-z|".into()),
            mk("lipschitz_p", m_lipp, "difference quotient in p".into()),
            mk("minimum_at_zero", m_above0, "H(p,y) >= H(0,y)".into()),
            mk(
                "sup_h0_nonpositive",
                -max_h0,
                format!("sup over probes of H(0,z) = {max_h0:.3e} (0 approached on bump-free regions)"),
            ),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poisson_params(seed: u64, replica: u64) -> EnvParams {
        EnvParams {
            d: 2,
            q: 2.0,
            lambda: 4.0,
            kind: EnvKind::PoissonBumps {
                intensity: 1.0,
                bump_radius: 0.35,
                amp: 0.5,
                vmax: 1.0,
                coef_amp: 0.4,
            },
            sigma: SigmaKind::BumpModulated {
                base: 0.3,
                amp: 0.3,
                bump_radius: 0.35,
                intensity: 0.5,
            },
            constrained: false,
            seed,
            replica,
        }
    }

    #[test]
    fn rejects_invalid_params() {
        let mut p = poisson_params(1, 0);
        p.q = 0.5;
        assert!(build_environment(p).is_err());

        let mut p = poisson_params(1, 0);
        p.lambda = 0.5;
        assert!(build_environment(p).is_err());

        let mut p = poisson_params(1, 0);
        if let EnvKind::PoissonBumps { ref mut bump_radius, .. } = p.kind {
            *bump_radius = 0.7;
        }
        assert!(build_environment(p).is_err());
    }

    #[test]
    fn deterministic_quadratic_case() {
        let env = build_environment(EnvParams {
            d: 2,
            q: 2.0,
            lambda: 1.0,
            kind: EnvKind::Deterministic { coef: 1.0 },
            sigma: SigmaKind::Zero,
            constrained: false,
            seed: 0,
            replica: 0,
        })
        .unwrap();
        for y in [[0.0, 0.0], [3.2, -1.0], [100.0, 7.0]] {
            assert_eq!(env.hamiltonian([1.0, 0.0], y), 1.0);
            assert_eq!(env.a_diag(y), 0.0);
        }
    }

    #[test]
    fn zero_intensity_poisson_is_homogeneous() {
        let mut p = poisson_params(5, 0);
        if let EnvKind::PoissonBumps { ref mut intensity, .. } = p.kind {
            *intensity = 0.0;
        }
        p.sigma = SigmaKind::Zero;
        let env = build_environment(p).unwrap();
        let mut rng = CounterRng::new(3);
        for _ in 0..200 {
            let y = [rng.uniform_in(-20.0, 20.0), rng.uniform_in(-20.0, 20.0)];
            assert_eq!(env.potential_v(y), 0.0);
            assert_eq!(env.coef_a(y), 1.0);
        }
    }

    #[test]
    fn determinism_contract() {
        let a = build_environment(poisson_params(42, 3)).unwrap();
        let b = build_environment(poisson_params(42, 3)).unwrap();
        let mut rng = CounterRng::new(11);
        for _ in 0..1000 {
            let y = [rng.uniform_in(-30.0, 30.0), rng.uniform_in(-30.0, 30.0)];
            let p = [rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)];
            assert_eq!(a.hamiltonian(p, y).to_bits(), b.hamiltonian(p, y).to_bits());
            assert_eq!(a.sigma_scalar(y).to_bits(), b.sigma_scalar(y).to_bits());
        }
    }

    #[test]
    fn different_replicas_differ() {
        let a = build_environment(poisson_params(42, 0)).unwrap();
        let b = build_environment(poisson_params(42, 1)).unwrap();
        let mut rng = CounterRng::new(12);
        let mut n_diff = 0;
        for _ in 0..200 {
            let y = [rng.uniform_in(-10.0, 10.0), rng.uniform_in(-10.0, 10.0)];
            if a.potential_v(y) != b.potential_v(y) {
                n_diff += 1;
            }
        }
        assert!(n_diff > 50);
    }

    #[test]
    fn translation_group_action() {
        let env = build_environment(poisson_params(9, 1)).unwrap();
        let t0 = env.translate([0.0, 0.0]);
        let tab = env.translate([1.3, -0.4]).translate([-0.6, 2.0]);
        let tsum = env.translate([0.7, 1.6]);
        let mut rng = CounterRng::new(13);
        for _ in 0..200 {
            let y = [rng.uniform_in(-10.0, 10.0), rng.uniform_in(-10.0, 10.0)];
            let p = [rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)];
            assert_eq!(env.hamiltonian(p, y), t0.hamiltonian(p, y));
            assert!((tab.hamiltonian(p, y) - tsum.hamiltonian(p, y)).abs() < 1e-12);
            let shifted = [y[0] + 1.3, y[1] - 0.4];
            assert_eq!(env.translate([1.3, -0.4]).hamiltonian(p, y), env.hamiltonian(p, shifted));
        }
    }

    #[test]
    fn deterministic_env_translation_invariant() {
        let env = build_environment(EnvParams {
            d: 1,
            q: 2.0,
            lambda: 1.0,
            kind: EnvKind::Deterministic { coef: 1.0 },
            sigma: SigmaKind::Zero,
            constrained: false,
            seed: 1,
            replica: 0,
        })
        .unwrap();
        let t = env.translate([5.0, 0.0]);
        for y in [[-3.0, 0.0], [0.1, 0.0]] {
            assert_eq!(env.hamiltonian([0.7, 0.0], y), t.hamiltonian([0.7, 0.0], y));
        }
    }

    #[test]
    fn validation_passes_on_families() {
        for (name, params) in [
            ("poisson", poisson_params(3, 0)),
            (
                "checker",
                EnvParams {
                    d: 2,
                    q: 2.0,
                    lambda: 4.0,
                    kind: EnvKind::Checkerboard {
                        cell_size: 0.4,
                        smoothing_radius: 0.15,
                        a_lo: 0.8,
                        a_hi: 1.25,
                        vmax: 0.4,
                    },
                    sigma: SigmaKind::ConstantIsotropic { a0: 0.5 },
                    constrained: false,
                    seed: 3,
                    replica: 0,
                },
            ),
            (
                "periodic",
                EnvParams {
                    d: 1,
                    q: 2.0,
                    lambda: 2.0,
                    kind: EnvKind::Periodic { v0: 0.5, period: 1.0 },
                    sigma: SigmaKind::Zero,
                    constrained: false,
                    seed: 0,
                    replica: 0,
                },
            ),
        ] {
            let env = build_environment(params).unwrap();
            let report = validate_environment(&env, 4000, 1e-9);
            for c in &report.checks {
                assert!(c.pass, "{name}: {} failed with margin {:.3e}", c.name, c.margin);
            }
        }
    }

    #[test]
    fn concave_hamiltonian_fails_convexity() {
        let params = poisson_params(0, 0);
        let h = |p: [f64; 2], _y: [f64; 2]| -(p[0] * p[0] + p[1] * p[1]);
        let s = |_y: [f64; 2]| 0.0;
        let report = validate_fields(&h, &s, &params, 500, 1e-9);
        let conv = report.checks.iter().find(|c| c.name == "convexity").unwrap();
        assert!(!conv.pass);
    }

    #[test]
    fn imposition_margin_reported_on_poisson() {
        let env = build_environment(poisson_params(8, 0)).unwrap();
        let report = validate_environment(&env, 10_000, 1e-9);
        let sup = report.checks.iter().find(|c| c.name == "sup_h0_nonpositive").unwrap();
        assert!(sup.pass);
        // With bumps present, some probe should see a strictly positive potential
        // and some probe an (almost) empty region.
        assert!(sup.margin >= 0.0 && sup.margin < 0.05, "margin {}", sup.margin);
    }

    #[test]
    fn traces_disjoint_at_unit_distance() {
        for params in [
            poisson_params(21, 2),
            EnvParams {
                d: 2,
                q: 2.0,
                lambda: 4.0,
                kind: EnvKind::Checkerboard {
                    cell_size: 0.4,
                    smoothing_radius: 0.15,
                    a_lo: 0.8,
                    a_hi: 1.25,
                    vmax: 0.4,
                },
                sigma: SigmaKind::Zero,
                constrained: false,
                seed: 21,
                replica: 2,
            },
        ] {
            let env = build_environment(params).unwrap();
            let mut rng = CounterRng::new(77);
            let mut checked = 0;
            for _ in 0..400 {
                let y = [rng.uniform_in(-10.0, 10.0), rng.uniform_in(-10.0, 10.0)];
                let dir = rng.uniform_in(0.0, std::f64::consts::TAU);
                let dist = rng.uniform_in(1.0001, 4.0);
                let z = [y[0] + dist * dir.cos(), y[1] + dist * dir.sin()];
                let ty = env.trace(y);
                let tz = env.trace(z);
                if ty.is_empty() || tz.is_empty() {
                    continue;
                }
                checked += 1;
                for item in &ty {
                    assert!(!tz.contains(item), "shared random input at |y-z| = {dist}");
                }
            }
            assert!(checked > 20, "too few informative probes");
        }
    }
}
