//! Planar convex geometry: convex polygons, support functions, r-hulls and
//! the quantitative exposed-point (Straszewicz) gap.

use crate::{HjError, Result};

const TAU: f64 = std::f64::consts::TAU;

/// A convex polygon stored as a counterclockwise vertex chain. Degenerate
/// bodies (segments, points) are allowed and flagged.
#[derive(Clone, Debug)]
pub struct ConvexBody2D {
    vertices: Vec<[f64; 2]>,
}

impl ConvexBody2D {
    /// Convex hull of arbitrary points (monotone chain), counterclockwise.
    pub fn hull_of(points: &[[f64; 2]]) -> Result<ConvexBody2D> {
        if points.is_empty() {
            return Err(HjError::Geometry("empty point set".into()));
        }
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup_by(|a, b| (a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
        if pts.len() <= 2 {
            return Ok(ConvexBody2D { vertices: pts });
        }
        let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
            (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
        };
        let mut lower: Vec<[f64; 2]> = Vec::new();
        for &p in &pts {
            while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
                lower.pop();
            }
            lower.push(p);
        }
        let mut upper: Vec<[f64; 2]> = Vec::new();
        for &p in pts.iter().rev() {
            while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
                upper.pop();
            }
            upper.push(p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        if lower.len() < 3 {
            // collinear input collapses to a segment
            let mut ends = vec![pts[0], *pts.last().unwrap()];
            ends.dedup_by(|a, b| a == b);
            return Ok(ConvexBody2D { vertices: ends });
        }
        Ok(ConvexBody2D { vertices: lower })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn is_degenerate(&self) -> bool {
        self.vertices.len() < 3
    }

    pub fn diameter(&self) -> f64 {
        let mut d2 = 0.0f64;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in self.vertices.iter().skip(i + 1) {
                let dx = a[0] - b[0];
                let dy = a[1] - b[1];
                d2 = d2.max(dx * dx + dy * dy);
            }
        }
        d2.sqrt()
    }

    pub fn area(&self) -> f64 {
        let v = &self.vertices;
        if v.len() < 3 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..v.len() {
            let a = v[i];
            let b = v[(i + 1) % v.len()];
            s += a[0] * b[1] - b[0] * a[1];
        }
        0.5 * s
    }

    /// Support function `max over vertices of x . v`.
    pub fn support(&self, x: [f64; 2]) -> f64 {
        self.vertices
            .iter()
            .map(|v| x[0] * v[0] + x[1] * v[1])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Euclidean distance from a point to the body (0 inside).
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let v = &self.vertices;
        match v.len() {
            0 => f64::INFINITY,
            1 => ((p[0] - v[0][0]).powi(2) + (p[1] - v[0][1]).powi(2)).sqrt(),
            2 => segment_distance(p, v[0], v[1]),
            _ => {
                let mut inside = true;
                let mut best = f64::INFINITY;
                for i in 0..v.len() {
                    let a = v[i];
                    let b = v[(i + 1) % v.len()];
                    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                    if cross < 0.0 {
                        inside = false;
                    }
                    best = best.min(segment_distance(p, a, b));
                }
                if inside {
                    0.0
                } else {
                    best
                }
            }
        }
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let den = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if den > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / den).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let cx = a[0] + t * ab[0] - p[0];
    let cy = a[1] + t * ab[1] - p[1];
    (cx * cx + cy * cy).sqrt()
}

/// `max over vertices of x . v`: the polygonal support function.
pub fn support_function(k: &ConvexBody2D, x: [f64; 2]) -> f64 {
    k.support(x)
}

/// Clips a polygon by the halfplane `n . x <= b` (Sutherland-Hodgman).
fn clip(poly: &[[f64; 2]], n: [f64; 2], b: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    let m = poly.len();
    for i in 0..m {
        let cur = poly[i];
        let nxt = poly[(i + 1) % m];
        let dc = n[0] * cur[0] + n[1] * cur[1] - b;
        let dn = n[0] * nxt[0] + n[1] * nxt[1] - b;
        if dc <= 0.0 {
            out.push(cur);
        }
        if (dc < 0.0 && dn > 0.0) || (dc > 0.0 && dn < 0.0) {
            let t = dc / (dc - dn);
            out.push([cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])]);
        }
    }
    out
}

/// Intersection of halfplanes `{x : x . dir_i <= offset_i}` as a convex
/// polygon, clipped from a bounding box of the given radius.
pub fn halfplane_intersection(
    dirs: &[[f64; 2]],
    offsets: &[f64],
    bound: f64,
) -> Result<ConvexBody2D> {
    if dirs.len() != offsets.len() || dirs.is_empty() {
        return Err(HjError::Geometry("mismatched halfplane arrays".into()));
    }
    let mut poly = vec![
        [-bound, -bound],
        [bound, -bound],
        [bound, bound],
        [-bound, bound],
    ];
    for (d, &b) in dirs.iter().zip(offsets) {
        poly = clip(&poly, *d, b);
        if poly.is_empty() {
            return Err(HjError::Geometry("empty halfplane intersection".into()));
        }
    }
    ConvexBody2D::hull_of(&poly)
}

/// Result of the quantitative exposed-point computation.
#[derive(Clone, Debug)]
pub struct StraszewiczGap {
    /// Hausdorff distance between the hull of r-strictly-convex vertices
    /// and the r-hull.
    pub gap: f64,
    /// `diam(K)^2 / r`.
    pub bound: f64,
    /// Vertices admitting a containing r-ball through them.
    pub strict_vertices: Vec<[f64; 2]>,
    /// Sampled boundary of the r-hull (for plots).
    pub outer_samples: Vec<[f64; 2]>,
}

fn unit(theta: f64) -> [f64; 2] {
    [theta.cos(), theta.sin()]
}

/// Containing-ball excess for a candidate center direction:
/// `f(theta) = max_k |v_k - (v - r u(theta))|`; `v` is r-strictly convex
/// iff `min_theta f <= r`.
fn center_excess(k: &ConvexBody2D, v: [f64; 2], r: f64, theta: f64) -> f64 {
    let u = unit(theta);
    let c = [v[0] - r * u[0], v[1] - r * u[1]];
    let mut worst = 0.0f64;
    for w in k.vertices() {
        let dx = w[0] - c[0];
        let dy = w[1] - c[1];
        worst = worst.max((dx * dx + dy * dy).sqrt());
    }
    worst
}

fn golden_min(mut lo: f64, mut hi: f64, f: &dyn Fn(f64) -> f64) -> (f64, f64) {
    let phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..80 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Intersects a list of angular intervals with the (unwrapped) arc [lo, hi].
fn intersect_arcs(arcs: Vec<(f64, f64)>, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (a, b) in arcs {
        for shift in [-TAU, 0.0, TAU] {
            let s = a.max(lo + shift);
            let e = b.min(hi + shift);
            if e > s + 1e-15 {
                out.push((s, e));
            }
        }
    }
    out
}

/// Boundary arcs of the center region `C_r = intersection of B(v_i, r)`:
/// for each disk, the angular set of its circle lying inside all others.
fn center_region_arcs(k: &ConvexBody2D, r: f64) -> Vec<(usize, f64, f64)> {
    let vs = k.vertices();
    let mut arcs = Vec::new();
    for (i, vi) in vs.iter().enumerate() {
        let mut feas: Vec<(f64, f64)> = vec![(0.0, TAU)];
        for (j, vj) in vs.iter().enumerate() {
            if i == j {
                continue;
            }
            let wx = vj[0] - vi[0];
            let wy = vj[1] - vi[1];
            let dist = (wx * wx + wy * wy).sqrt();
            if dist < 1e-15 {
                continue;
            }
            let alpha = wy.atan2(wx).rem_euclid(TAU);
            let phi = (dist / (2.0 * r)).clamp(-1.0, 1.0).acos();
            // point v_i + r e(theta) lies in B(v_j, r) iff |theta - alpha| <= phi
            feas = intersect_arcs(feas, alpha - phi, alpha + phi);
            if feas.is_empty() {
                break;
            }
        }
        for (a, b) in feas {
            arcs.push((i, a, b));
        }
    }
    arcs
}

/// `min over c in C_r of u . c` and its argmin, from the arc decomposition.
fn center_min(k: &ConvexBody2D, arcs: &[(usize, f64, f64)], r: f64, u: [f64; 2]) -> [f64; 2] {
    let vs = k.vertices();
    if vs.len() == 1 {
        return [vs[0][0] - r * u[0], vs[0][1] - r * u[1]];
    }
    let ang_u = u[1].atan2(u[0]);
    let mut best = f64::INFINITY;
    let mut best_c = [0.0; 2];
    for &(i, a, b) in arcs {
        let vi = vs[i];
        let mut cands = [a, b, 0.0];
        let mut n_c = 2;
        let anti = (ang_u + std::f64::consts::PI).rem_euclid(TAU);
        for shift in [-TAU, 0.0, TAU] {
            let t = anti + shift;
            if t >= a && t <= b {
                cands[2] = t;
                n_c = 3;
                break;
            }
        }
        for &t in cands.iter().take(n_c) {
            let c = [vi[0] + r * t.cos(), vi[1] + r * t.sin()];
            let val = u[0] * c[0] + u[1] * c[1];
            if val < best {
                best = val;
                best_c = c;
            }
        }
    }
    best_c
}

/// Quantitative Straszewicz computation: the hull of r-strictly-convex
/// vertices `K_r`, the r-hull `K^r` (intersection of all containing
/// r-balls), their Hausdorff gap, and the bound `diam^2 / r`. Faults if
/// `r <= diam` or if the exact inequality fails beyond geometric tolerance.
pub fn straszewicz_gap(k: &ConvexBody2D, r: f64) -> Result<StraszewiczGap> {
    let diam = k.diameter();
    if !(r > diam) {
        return Err(HjError::Geometry(format!("need r > diam: r = {r}, diam = {diam}")));
    }
    if k.vertices().is_empty() {
        return Err(HjError::Geometry("empty body".into()));
    }

    let mut strict = Vec::new();
    for &v in k.vertices() {
        if k.vertices().len() == 1 {
            strict.push(v);
            continue;
        }
        let f = |theta: f64| center_excess(k, v, r, theta);
        let n_scan = 512;
        let mut best_t = 0.0;
        let mut best_f = f64::INFINITY;
        for s in 0..n_scan {
            let t = s as f64 / n_scan as f64 * TAU;
            let val = f(t);
            if val < best_f {
                best_f = val;
                best_t = t;
            }
        }
        let w = TAU / n_scan as f64;
        let (_, fmin) = golden_min(best_t - w, best_t + w, &f);
        if fmin.min(best_f) <= r * (1.0 + 1e-12) + 1e-12 {
            strict.push(v);
        }
    }
    let k_r = ConvexBody2D::hull_of(&strict)?;

    // r-hull boundary: the support point of K^r in direction u is
    // argmin_{c in C_r}(u . c) + r u.
    let arcs = center_region_arcs(k, r);
    let point_at = |theta: f64| -> [f64; 2] {
        let u = unit(theta);
        let c = center_min(k, &arcs, r, u);
        [c[0] + r * u[0], c[1] + r * u[1]]
    };
    let n_dir = 2048;
    let mut samples = Vec::with_capacity(n_dir);
    let mut gap = 0.0f64;
    let mut arg_theta = 0.0;
    for s in 0..n_dir {
        let t = s as f64 / n_dir as f64 * TAU;
        let x = point_at(t);
        samples.push(x);
        let d = k_r.distance(x);
        if d > gap {
            gap = d;
            arg_theta = t;
        }
    }
    let w = TAU / n_dir as f64;
    let neg = |t: f64| -k_r.distance(point_at(t));
    let (_, neg_best) = golden_min(arg_theta - w, arg_theta + w, &neg);
    gap = gap.max(-neg_best);

    let bound = diam * diam / r;
    if gap > bound + 1e-6 {
        return Err(HjError::Geometry(format!(
            "exposed-point gap {gap:.9} exceeds diam^2/r = {bound:.9}"
        )));
    }
    Ok(StraszewiczGap { gap, bound, strict_vertices: strict, outer_samples: samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    #[test]
    fn support_function_cases() {
        let square = ConvexBody2D::hull_of(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        assert_eq!(support_function(&square, [1.0, 0.0]), 1.0);
        assert_eq!(support_function(&square, [0.0, 0.0]), 0.0);
        let tri = ConvexBody2D::hull_of(&[[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(support_function(&tri, [1.0, 1.0]), 2.0);
    }

    #[test]
    fn hull_is_ccw_with_positive_area() {
        let body = ConvexBody2D::hull_of(&[
            [0.0, 0.0],
            [2.0, 0.3],
            [1.0, 1.7],
            [0.4, 0.9],
            [1.3, 0.4],
        ])
        .unwrap();
        assert!(body.area() > 0.0);
        assert!(body.vertices().len() >= 3);
    }

    #[test]
    fn distance_to_polygon() {
        let square = ConvexBody2D::hull_of(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        assert_eq!(square.distance([0.5, 0.5]), 0.0);
        assert!((square.distance([2.0, 0.5]) - 1.0).abs() < 1e-12);
        assert!((square.distance([2.0, 2.0]) - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn disk_polygon_gap_is_discretization_small() {
        let rho = 1.0;
        let n = 256;
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64 * TAU;
                [rho * t.cos(), rho * t.sin()]
            })
            .collect();
        let k = ConvexBody2D::hull_of(&pts).unwrap();
        let r = 8.0 * k.diameter();
        let res = straszewicz_gap(&k, r).unwrap();
        assert!(res.gap < 1e-3, "gap {}", res.gap);
        assert!((res.bound - (2.0 * rho) * (2.0 * rho) / r).abs() < 1e-9);
        assert_eq!(res.strict_vertices.len(), n);
    }

    #[test]
    fn segment_lens_matches_closed_form() {
        let s = 2.0;
        let k = ConvexBody2D::hull_of(&[[-1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(k.is_degenerate());
        for r in [3.0, 5.0, 17.0] {
            let res = straszewicz_gap(&k, r).unwrap();
            let exact = r - (r * r - s * s / 4.0).sqrt();
            assert!(
                (res.gap - exact).abs() < 1e-9,
                "r = {r}: gap {} vs exact {exact}",
                res.gap
            );
            assert!(res.gap <= s * s / r);
        }
    }

    #[test]
    fn random_polygons_satisfy_quantitative_bound() {
        let mut rng = CounterRng::new(2024);
        let mut tested = 0;
        for trial in 0..25 {
            let n = 3 + (rng.next_u64() % 10) as usize;
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)])
                .collect();
            let k = match ConvexBody2D::hull_of(&pts) {
                Ok(k) if !k.is_degenerate() => k,
                _ => continue,
            };
            let diam = k.diameter();
            for factor in [2.0, 4.0, 8.0] {
                let r = factor * diam;
                let res = straszewicz_gap(&k, r).unwrap();
                assert!(
                    res.gap <= res.bound + 1e-6,
                    "trial {trial}: gap {} > bound {}",
                    res.gap,
                    res.bound
                );
                tested += 1;
            }
        }
        assert!(tested >= 30);
    }

    #[test]
    fn r_below_diameter_faults() {
        let k = ConvexBody2D::hull_of(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(straszewicz_gap(&k, 0.5).is_err());
    }

    #[test]
    fn halfplane_intersection_unit_square() {
        let dirs = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let offs = [1.0, 0.0, 1.0, 0.0];
        let body = halfplane_intersection(&dirs, &offs, 10.0).unwrap();
        assert!((body.area() - 1.0).abs() < 1e-9);
        assert!((body.support([1.0, 1.0]) - 2.0).abs() < 1e-9);
    }
}
