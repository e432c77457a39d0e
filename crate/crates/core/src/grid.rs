//! Uniform Cartesian grids, node classification and scalar fields.
//!
//! A [`GridDomain`] is a box `[-radius, radius]^d` sampled at spacing `h`
//! with each node classified as interior, Dirichlet source or outer
//! boundary. Fields store one `f64` per node in row-major order.

use std::sync::Arc;

use crate::{HjError, Result};

pub const MASK_INTERIOR: u8 = 0;
pub const MASK_SOURCE: u8 = 1;
pub const MASK_OUTER: u8 = 2;

/// Dirichlet source region specification. A point source `x` stands for the
/// closed unit ball around it; a set of anchor points stands for the set
/// fattened by the unit ball.
#[derive(Clone, Debug)]
pub enum SourceSpec {
    Points(Vec<[f64; 2]>),
    /// Node indices of a domain-compatible grid (e.g. a sublevel front).
    /// With `fatten` the Dirichlet region is the set plus the unit ball;
    /// without, it is the node set itself.
    GridSet { nodes: Vec<usize>, fatten: bool },
}

impl SourceSpec {
    pub fn point(x: [f64; 2]) -> Self {
        SourceSpec::Points(vec![x])
    }
    pub fn origin() -> Self {
        SourceSpec::point([0.0, 0.0])
    }
}

#[derive(Clone, Debug)]
pub struct GridDomain {
    pub d: usize,
    pub h: f64,
    /// Nodes per axis; `n[1] == 1` when `d == 1`.
    pub n: [usize; 2],
    half: [i64; 2],
    pub mask: Vec<u8>,
    /// Euclidean distance from each node to the Dirichlet source region.
    pub dist_src: Vec<f64>,
    /// Euclidean distance from each node to the raw anchor set (before
    /// any unit-ball fattening).
    pub dist_anchor: Vec<f64>,
}

impl GridDomain {
    /// Symmetric box of the given radius; nodes at integer multiples of `h`.
    pub fn symmetric(d: usize, h: f64, radius: f64) -> Result<GridDomain> {
        if !(d == 1 || d == 2) {
            return Err(HjError::InvalidParams(format!("d must be 1 or 2, got {d}")));
        }
        if !(h > 0.0 && radius > h) {
            return Err(HjError::InvalidParams(format!(
                "need spacing 0 < h < radius, got h = {h}, radius = {radius}"
            )));
        }
        let m = (radius / h).round() as i64;
        let n0 = (2 * m + 1) as usize;
        let (n1, half1) = if d == 2 { (n0, m) } else { (1, 0) };
        let len = n0 * n1;
        let mut g = GridDomain {
            d,
            h,
            n: [n0, n1],
            half: [m, half1],
            mask: vec![MASK_INTERIOR; len],
            dist_src: vec![f64::INFINITY; len],
            dist_anchor: vec![f64::INFINITY; len],
        };
        for idx in 0..len {
            let (i, j) = g.ij(idx);
            if g.on_box_boundary(i, j) {
                g.mask[idx] = MASK_OUTER;
            }
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn radius(&self) -> f64 {
        self.half[0] as f64 * self.h
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n[1] + j
    }

    #[inline]
    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx / self.n[1], idx % self.n[1])
    }

    #[inline]
    pub fn coord(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.ij(idx);
        [
            (i as i64 - self.half[0]) as f64 * self.h,
            (j as i64 - self.half[1]) as f64 * self.h,
        ]
    }

    /// Node index nearest to `y`, or None when outside the box.
    pub fn node_at(&self, y: [f64; 2]) -> Option<usize> {
        let i = (y[0] / self.h).round() as i64 + self.half[0];
        let j = if self.d == 2 {
            (y[1] / self.h).round() as i64 + self.half[1]
        } else {
            0
        };
        if i < 0 || j < 0 || i >= self.n[0] as i64 || j >= self.n[1] as i64 {
            None
        } else {
            Some(self.index(i as usize, j as usize))
        }
    }

    #[inline]
    pub fn on_box_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || i + 1 == self.n[0] || (self.d == 2 && (j == 0 || j + 1 == self.n[1]))
    }

    /// Classifies nodes against the source region and the box boundary,
    /// and computes the distance-to-source fields. Point sources stand for
    /// the closed unit ball around them.
    pub fn set_source(&mut self, source: &SourceSpec) -> Result<()> {
        let (raw, fatten) = match source {
            SourceSpec::Points(pts) => {
                if pts.is_empty() {
                    return Err(HjError::InvalidParams("empty source point set".into()));
                }
                let mut dist = vec![0.0f64; self.len()];
                for idx in 0..self.len() {
                    let y = self.coord(idx);
                    let mut best = f64::INFINITY;
                    for p in pts {
                        let dx = y[0] - p[0];
                        let dy = y[1] - p[1];
                        best = best.min((dx * dx + dy * dy).sqrt());
                    }
                    dist[idx] = best;
                }
                (dist, true)
            }
            SourceSpec::GridSet { nodes, fatten } => {
                if nodes.is_empty() {
                    return Err(HjError::InvalidParams("empty source node set".into()));
                }
                let mut seed = vec![false; self.len()];
                for &ix in nodes {
                    if ix >= self.len() {
                        return Err(HjError::InvalidParams(format!("source node {ix} out of range")));
                    }
                    seed[ix] = true;
                }
                let sq = edt_squared(self.n, &seed);
                (sq.iter().map(|&s| s.sqrt() * self.h).collect(), *fatten)
            }
        };

        let fat = if fatten { 1.0 } else { 0.0 };
        let mut touched_outer = false;
        for idx in 0..self.len() {
            let (i, j) = self.ij(idx);
            self.dist_anchor[idx] = raw[idx];
            self.dist_src[idx] = (raw[idx] - fat).max(0.0);
            if raw[idx] <= fat || raw[idx] == 0.0 {
                self.mask[idx] = MASK_SOURCE;
                if self.on_box_boundary(i, j) {
                    touched_outer = true;
                }
            } else if self.on_box_boundary(i, j) {
                self.mask[idx] = MASK_OUTER;
            } else {
                self.mask[idx] = MASK_INTERIOR;
            }
        }
        if touched_outer {
            return Err(HjError::InvalidParams(
                "source region touches the outer boundary; enlarge the domain".into(),
            ));
        }
        if !self.mask.contains(&MASK_SOURCE) {
            return Err(HjError::InvalidParams("source region contains no grid node".into()));
        }
        Ok(())
    }

    pub fn same_layout(&self, other: &GridDomain) -> bool {
        self.d == other.d && self.h == other.h && self.n == other.n
    }

    pub fn interior_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&ix| self.mask[ix] == MASK_INTERIOR)
    }

    /// Distance from a node to the outer box boundary.
    pub fn box_margin(&self, ix: usize) -> f64 {
        let y = self.coord(ix);
        let m0 = self.radius() - y[0].abs();
        if self.d == 2 {
            m0.min(self.radius() - y[1].abs())
        } else {
            m0
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScalarField {
    pub domain: Arc<GridDomain>,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(domain: Arc<GridDomain>) -> ScalarField {
        let n = domain.len();
        ScalarField { domain, values: vec![0.0; n] }
    }

    pub fn from_fn(domain: Arc<GridDomain>, f: impl Fn([f64; 2]) -> f64) -> ScalarField {
        let values = (0..domain.len()).map(|ix| f(domain.coord(ix))).collect();
        ScalarField { domain, values }
    }

    /// Value at the node nearest to `y`.
    pub fn value_at(&self, y: [f64; 2]) -> Option<f64> {
        self.domain.node_at(y).map(|ix| self.values[ix])
    }

    pub fn max_interior(&self) -> f64 {
        self.domain
            .interior_indices()
            .map(|ix| self.values[ix])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Exact squared Euclidean distance transform (Felzenszwalb-Huttenlocher),
/// in grid units, from the seed nodes.
pub fn edt_squared(n: [usize; 2], seed: &[bool]) -> Vec<f64> {
    let (n0, n1) = (n[0], n[1]);
    assert_eq!(seed.len(), n0 * n1);
    let big = 1e20;
    let mut f: Vec<f64> = seed.iter().map(|&s| if s { 0.0 } else { big }).collect();

    // columns (axis 1), then rows (axis 0)
    let mut buf = vec![0.0f64; n0.max(n1)];
    if n1 > 1 {
        for i in 0..n0 {
            for j in 0..n1 {
                buf[j] = f[i * n1 + j];
            }
            let out = dt_1d(&buf[..n1]);
            for j in 0..n1 {
                f[i * n1 + j] = out[j];
            }
        }
    }
    for j in 0..n1 {
        for i in 0..n0 {
            buf[i] = f[i * n1 + j];
        }
        let out = dt_1d(&buf[..n0]);
        for i in 0..n0 {
            f[i * n1 + j] = out[i];
        }
    }
    f
}

fn dt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0f64; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    break;
                }
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        *dq = diff * diff + f[p];
    }
    d
}

/// Hausdorff distance between two nonempty node sets (node coordinates).
pub fn hausdorff(n: [usize; 2], h: f64, a: &[bool], b: &[bool]) -> f64 {
    let da = edt_squared(n, a);
    let db = edt_squared(n, b);
    let mut sup_ab = 0.0f64; // sup over a of dist to b
    let mut sup_ba = 0.0f64;
    for ix in 0..a.len() {
        if a[ix] {
            sup_ab = sup_ab.max(db[ix]);
        }
        if b[ix] {
            sup_ba = sup_ba.max(da[ix]);
        }
    }
    sup_ab.max(sup_ba).sqrt() * h
}

/// Connected components of a node set under 2d-neighbor adjacency;
/// returns true when the set is nonempty and connected.
pub fn is_connected(n: [usize; 2], set: &[bool]) -> bool {
    let (n0, n1) = (n[0], n[1]);
    let start = match set.iter().position(|&s| s) {
        Some(s) => s,
        None => return false,
    };
    let mut seen = vec![false; set.len()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 1usize;
    while let Some(ix) = stack.pop() {
        let (i, j) = (ix / n1, ix % n1);
        let mut push = |ii: i64, jj: i64, seen: &mut Vec<bool>, stack: &mut Vec<usize>| {
            if ii < 0 || jj < 0 || ii >= n0 as i64 || jj >= n1 as i64 {
                return;
            }
            let nx = ii as usize * n1 + jj as usize;
            if set[nx] && !seen[nx] {
                seen[nx] = true;
                stack.push(nx);
                count += 1;
            }
        };
        push(i as i64 - 1, j as i64, &mut seen, &mut stack);
        push(i as i64 + 1, j as i64, &mut seen, &mut stack);
        if n1 > 1 {
            push(i as i64, j as i64 - 1, &mut seen, &mut stack);
            push(i as i64, j as i64 + 1, &mut seen, &mut stack);
        }
    }
    count == set.iter().filter(|&&s| s).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_geometry() {
        let g = GridDomain::symmetric(2, 0.5, 3.0).unwrap();
        assert_eq!(g.n, [13, 13]);
        let c = g.coord(g.node_at([0.0, 0.0]).unwrap());
        assert_eq!(c, [0.0, 0.0]);
        let ix = g.node_at([1.0, -1.5]).unwrap();
        assert_eq!(g.coord(ix), [1.0, -1.5]);
        assert!(g.node_at([4.0, 0.0]).is_none());
    }

    #[test]
    fn source_classification_ball() {
        let mut g = GridDomain::symmetric(2, 0.25, 4.0).unwrap();
        g.set_source(&SourceSpec::origin()).unwrap();
        for idx in 0..g.len() {
            let y = g.coord(idx);
            let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
            if r <= 1.0 {
                assert_eq!(g.mask[idx], MASK_SOURCE, "at {y:?}");
            }
            if r > 1.0 {
                assert!((g.dist_src[idx] - (r - 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn source_near_boundary_rejected() {
        let mut g = GridDomain::symmetric(2, 0.25, 2.0).unwrap();
        assert!(g.set_source(&SourceSpec::point([1.5, 0.0])).is_err());
    }

    #[test]
    fn edt_exactness_against_brute_force() {
        let n = [17, 23];
        let mut seed = vec![false; n[0] * n[1]];
        let pts = [(3usize, 4usize), (12, 20), (16, 0), (8, 11)];
        for &(i, j) in &pts {
            seed[i * n[1] + j] = true;
        }
        let d = edt_squared(n, &seed);
        for i in 0..n[0] {
            for j in 0..n[1] {
                let mut best = f64::INFINITY;
                for &(si, sj) in &pts {
                    let dx = i as f64 - si as f64;
                    let dy = j as f64 - sj as f64;
                    best = best.min(dx * dx + dy * dy);
                }
                assert!((d[i * n[1] + j] - best).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hausdorff_of_nested_boxes() {
        let n = [21, 21];
        let mut a = vec![false; 441];
        let mut b = vec![false; 441];
        for i in 0..21 {
            for j in 0..21 {
                let ix = i * 21 + j;
                if (8..=12).contains(&i) && (8..=12).contains(&j) {
                    a[ix] = true;
                }
                if (5..=15).contains(&i) && (5..=15).contains(&j) {
                    b[ix] = true;
                }
            }
        }
        // farthest b-node from the inner box: corner (5,5) -> (8,8): 3*sqrt(2)
        let d = hausdorff(n, 1.0, &a, &b);
        assert!((d - 18.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn connectivity() {
        let n = [5, 5];
        let mut s = vec![false; 25];
        s[0] = true;
        s[1] = true;
        s[6] = true;
        assert!(is_connected(n, &s));
        s[24] = true;
        assert!(!is_connected(n, &s));
    }
}
